//! Proportion intervals, Poisson goodness of fit and small regression helpers.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Normal, Poisson};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// A binomial proportion with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub point: f64,
    pub interval: Interval,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64, confidence: f64) -> Self {
        Self {
            successes,
            trials,
            point: if trials == 0 {
                0.0
            } else {
                successes as f64 / trials as f64
            },
            interval: wilson_interval(successes, trials, confidence),
        }
    }
}

/// Two-sided standard normal quantile for a central `confidence` mass.
pub fn normal_quantile(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
}

pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Interval {
    if trials == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = normal_quantile(confidence);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // pin the exact endpoints at p = 0 and p = 1
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    Interval {
        lo: lo.min(p),
        hi: hi.max(p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl GofResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Pearson chi-square test of `samples` against Poisson(`mu`). Adjacent counts
/// are pooled until every bin expects at least five observations; the outer
/// bins absorb the tails.
pub fn poisson_chi_square(samples: &[u64], mu: f64) -> GofResult {
    let n = samples.len() as f64;
    let law = Poisson::new(mu).expect("positive mean");
    let max = samples.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0u64; max as usize + 1];
    for &s in samples {
        observed[s as usize] += 1;
    }

    // (expected, observed) per pooled bin
    let mut bins: Vec<(f64, u64)> = Vec::new();
    let mut acc = (0.0, 0u64);
    let top = max.max((mu + 10.0 * mu.sqrt()) as u64 + 10);
    for k in 0..=top {
        acc.0 += if k == 0 { law.cdf(0) } else { law.pmf(k) };
        acc.1 += observed.get(k as usize).copied().unwrap_or(0);
        if acc.0 * n >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0);
        }
    }
    // right tail P(X > top) plus any unfinished bin goes into the last bin
    let tail = law.sf(top);
    match bins.last_mut() {
        Some(last) => {
            last.0 += acc.0 + tail;
            last.1 += acc.1;
        }
        None => bins.push((acc.0 + tail, acc.1)),
    }

    let statistic: f64 = bins
        .iter()
        .map(|&(p, o)| {
            let e = p * n;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = bins.len().saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic);
    GofResult {
        statistic,
        dof,
        p_value,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
