//! Exact alarm probabilities by enumerating photon-number distributions.
//!
//! A pulse is followed as a probability vector over its photon count through
//! the same ledger the simulator runs: siphon, channel loss, arrival check and
//! tap on each leg. Nothing here samples. Each pmf is enumerated outward from
//! its mode by ratio recurrences until the geometric bound on the unvisited
//! tail is negligible; the accumulated bound must stay below [`TRUNCATION`].

use thiserror::Error;

use crate::adversary::SiphonAmount;
use crate::channel::{Emission, SourceModel, Stage};
use crate::protocol::DetectionRule;

/// Largest mean photon number the enumeration accepts.
pub const MAX_ORACLE_MU: f64 = 1e5;
/// Maximum pmf mass the enumeration may lose.
pub const TRUNCATION: f64 = 1e-12;

// Walk stops once the geometric bound on the remaining tail drops below this.
const TAIL_STOP: f64 = 1e-24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("mean photon number {0} exceeds the enumeration bound {MAX_ORACLE_MU}")]
    Infeasible(f64),
    #[error("pmf tail bound not met: {lost:e} mass lost")]
    Truncation { lost: f64 },
    #[error("fraction must lie in [0, 1], got {0}")]
    Fraction(f64),
}

/// Probability vector over photon counts `offset..offset + mass.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution {
    offset: u64,
    mass: Vec<f64>,
    lost: f64,
}

/// Enumerates a log-concave pmf outward from its mode. `up(k)` is
/// `p(k+1)/p(k)` and `down(k)` is `p(k-1)/p(k)`. Returns the first count,
/// the values normalised to their sum, and a bound on the mass never visited.
fn walk(
    mode: u64,
    lo: u64,
    hi: u64,
    up: impl Fn(u64) -> f64,
    down: impl Fn(u64) -> f64,
) -> (u64, Vec<f64>, f64) {
    let mut right = vec![1.0];
    let mut tail = 0.0;
    let (mut k, mut p) = (mode, 1.0);
    while k < hi {
        let r = up(k);
        p *= r;
        k += 1;
        right.push(p);
        if r < 1.0 && p * r / (1.0 - r) < TAIL_STOP {
            tail += p * r / (1.0 - r);
            break;
        }
    }
    let mut left = Vec::new();
    let (mut k, mut p) = (mode, 1.0);
    while k > lo {
        let r = down(k);
        p *= r;
        k -= 1;
        left.push(p);
        if r < 1.0 && p * r / (1.0 - r) < TAIL_STOP {
            tail += p * r / (1.0 - r);
            break;
        }
    }
    let start = mode - left.len() as u64;
    let mut values: Vec<f64> = left.into_iter().rev().chain(right).collect();
    let sum: f64 = values.iter().sum();
    for v in &mut values {
        *v /= sum;
    }
    // tails were accumulated relative to the unnormalised peak of 1
    (start, values, tail / sum)
}

impl CountDistribution {
    pub fn point(n: u64) -> Self {
        Self {
            offset: n,
            mass: vec![1.0],
            lost: 0.0,
        }
    }

    pub fn poisson(mu: f64) -> Result<Self, OracleError> {
        if mu > MAX_ORACLE_MU {
            return Err(OracleError::Infeasible(mu));
        }
        let mode = mu.floor() as u64;
        let (offset, mass, lost) = walk(
            mode,
            0,
            u64::MAX,
            |k| mu / (k + 1) as f64,
            |k| k as f64 / mu,
        );
        let d = Self { offset, mass, lost };
        d.check()?;
        Ok(d)
    }

    pub fn from_source(src: &SourceModel) -> Result<Self, OracleError> {
        match src.emission() {
            Emission::Poisson => Self::poisson(src.mean_photons()),
            Emission::Fixed => Ok(Self::point(src.mean_photons().round() as u64)),
        }
    }

    fn check(&self) -> Result<(), OracleError> {
        if self.lost > TRUNCATION {
            Err(OracleError::Truncation { lost: self.lost })
        } else {
            Ok(())
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, m)| (self.offset + i as u64) as f64 * m)
            .sum::<f64>()
            / self.total()
    }

    /// Binomial thinning: each photon survives independently with `keep`.
    pub fn thin(&self, keep: f64) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&keep) {
            return Err(OracleError::Fraction(keep));
        }
        if keep == 1.0 {
            return Ok(self.clone());
        }
        let max_n = self.offset + self.mass.len() as u64 - 1;
        if keep == 0.0 {
            return Ok(Self {
                offset: 0,
                mass: vec![self.total()],
                lost: self.lost,
            });
        }
        let mut out = vec![0.0; max_n as usize + 1];
        let mut lost = self.lost;
        let ratio = keep / (1.0 - keep);
        for (i, &w) in self.mass.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let n = self.offset + i as u64;
            let mode = ((n as f64 + 1.0) * keep).floor().min(n as f64) as u64;
            let (start, row, tail) = walk(
                mode,
                0,
                n,
                |k| (n - k) as f64 / (k + 1) as f64 * ratio,
                |k| k as f64 / (n - k + 1) as f64 / ratio,
            );
            for (j, p) in row.into_iter().enumerate() {
                out[start as usize + j] += w * p;
            }
            lost += w * tail;
        }
        let d = Self::compact(out, lost);
        d.check()?;
        Ok(d)
    }

    /// Removes up to `n` photons from every outcome.
    pub fn subtract(&self, n: u64) -> Self {
        if n == 0 {
            return self.clone();
        }
        if n <= self.offset {
            return Self {
                offset: self.offset - n,
                ..self.clone()
            };
        }
        let cut = (n - self.offset) as usize;
        let floor: f64 = self.mass.iter().take(cut + 1).sum();
        let mut mass = vec![floor];
        mass.extend(self.mass.iter().skip(cut + 1));
        Self {
            offset: 0,
            mass,
            lost: self.lost,
        }
    }

    /// Removes and returns the mass on counts strictly below `cutoff`.
    pub fn cut_below(&mut self, cutoff: f64) -> f64 {
        let mut removed = 0.0;
        for (i, m) in self.mass.iter_mut().enumerate() {
            if ((self.offset + i as u64) as f64) < cutoff {
                removed += *m;
                *m = 0.0;
            } else {
                break;
            }
        }
        removed
    }

    fn compact(v: Vec<f64>, lost: f64) -> Self {
        let first = v.iter().position(|&m| m > 0.0).unwrap_or(0);
        let last = v.iter().rposition(|&m| m > 0.0).unwrap_or(first);
        Self {
            offset: first as u64,
            mass: v[first..=last].to_vec(),
            lost,
        }
    }
}

fn apply_siphon(
    d: &CountDistribution,
    s: Option<SiphonAmount>,
) -> Result<CountDistribution, OracleError> {
    match s {
        None | Some(SiphonAmount::Count(0)) => Ok(d.clone()),
        Some(SiphonAmount::Count(n)) => Ok(d.subtract(n)),
        Some(SiphonAmount::Fraction(f)) if !(0.0..=1.0).contains(&f) => {
            Err(OracleError::Fraction(f))
        }
        Some(SiphonAmount::Fraction(f)) => d.thin(1.0 - f),
    }
}

/// Per-pulse alarm probability of one Bob stage-2 check when Eve diverts a
/// fraction `f` of a Poisson(`mu`) pulse on the first leg.
pub fn exact_detection_oracle(mu: f64, f: f64, rule: &DetectionRule) -> Result<f64, OracleError> {
    let arrived = apply_siphon(
        &CountDistribution::poisson(mu)?,
        Some(SiphonAmount::Fraction(f)),
    )?;
    let Some(cutoff) = rule.cutoff(Stage::S2) else {
        return Ok(0.0);
    };
    let mut arrived = arrived;
    Ok(arrived.cut_below(cutoff))
}

/// Siphon configuration per leg as seen by the oracle.
pub type LegSiphons = [Option<SiphonAmount>; 3];

/// Per-pulse probability that at least one checked stage alarms over the full
/// exchange, given Eve's per-leg siphons and the party tap budget.
pub fn exact_pulse_alarm(
    src: &SourceModel,
    tap_budget: u64,
    siphons: &LegSiphons,
    rule: &DetectionRule,
) -> Result<f64, OracleError> {
    let mut d = CountDistribution::from_source(src)?;
    let mut alarm = 0.0;
    for (leg, check) in [Stage::S2, Stage::S3, Stage::Final].into_iter().enumerate() {
        d = apply_siphon(&d, siphons[leg])?;
        d = d.thin(src.attenuation())?;
        if rule.is_checked(check) {
            if let Some(c) = rule.cutoff(check) {
                alarm += d.cut_below(c);
            }
        }
        d = d.subtract(tap_budget);
    }
    Ok(alarm.min(1.0))
}

/// Session-level alarm probability for `bits` independent pulses.
pub fn session_alarm(per_pulse: f64, bits: usize) -> f64 {
    1.0 - (1.0 - per_pulse).powi(bits as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(mu: f64, z: f64) -> DetectionRule {
        let src = SourceModel::lossless(mu).unwrap();
        DetectionRule::from_ledger(&src, (mu / 4.0).round() as u64, z).unwrap()
    }

    #[test]
    fn poisson_vector_is_normalised() {
        for mu in [0.1, 5.0, 1000.0, 1e5] {
            let d = CountDistribution::poisson(mu).unwrap();
            assert!((d.total() - 1.0).abs() < 1e-12, "{mu}");
            assert!((d.mean() - mu).abs() < 1e-6 * mu.max(1.0));
        }
        assert_eq!(
            CountDistribution::poisson(2e5),
            Err(OracleError::Infeasible(2e5))
        );
    }

    #[test]
    fn thinning_poisson_gives_poisson() {
        let a = CountDistribution::poisson(2000.0)
            .unwrap()
            .thin(0.75)
            .unwrap();
        let b = CountDistribution::poisson(1500.0).unwrap();
        assert!((a.total() - 1.0).abs() < 1e-12);
        let max_diff = (1200..1800)
            .map(|k| {
                let pa = a.mass.get((k - a.offset) as usize).copied().unwrap_or(0.0);
                let pb = b.mass.get((k - b.offset) as usize).copied().unwrap_or(0.0);
                (pa - pb).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "{max_diff}");
    }

    #[test]
    fn golden_values() {
        let r = rule(1000.0, 5.0);
        // f = 0: Poisson(1000) lower tail at 841, 1.3108380557707494e-07 (scipy)
        let fa = exact_detection_oracle(1000.0, 0.0, &r).unwrap();
        assert!((fa - 1.310_838_055_770_749_4e-7).abs() < 1e-15, "{fa:e}");
        // f = 0.25: P(Poisson(750) ≤ 841) = 0.999485322127404 (scipy)
        let det = exact_detection_oracle(1000.0, 0.25, &r).unwrap();
        assert!((det - 0.999_485_322_127_404).abs() < 1e-11, "{det}");
        assert!(det > 0.999 && det < 1.0);
        assert_eq!(exact_detection_oracle(1000.0, 1.0, &r).unwrap(), 1.0);
        // f = 0.001 is practically indistinguishable from no attack
        let weak = exact_detection_oracle(1000.0, 0.001, &r).unwrap();
        assert!((weak - 1.543_719_240_640_737_2e-7).abs() < 1e-14);
        assert!(exact_detection_oracle(1000.0, 1.5, &r).is_err());
    }

    #[test]
    fn median_cutoff() {
        // z = 0 alarms below the mean: P(Poisson(1000) ≤ 999) = 0.49579 (scipy)
        let p = exact_detection_oracle(1000.0, 0.0, &rule(1000.0, 0.0)).unwrap();
        assert!((p - 0.495_794_755_819_784_5).abs() < 1e-10);
    }

    #[test]
    fn full_ledger_false_alarm() {
        // honest pulse: FINAL check dominates, 1.6576e-4, plus S3 5.04e-6 (scipy)
        let src = SourceModel::lossless(1000.0).unwrap();
        let p = exact_pulse_alarm(&src, 250, &[None; 3], &rule(1000.0, 5.0)).unwrap();
        assert!(p > 1.65e-4 && p < 1.75e-4, "{p:e}");
        let only_s2 = rule(1000.0, 5.0).with_checked([Stage::S2]);
        let p2 = exact_pulse_alarm(&src, 250, &[None; 3], &only_s2).unwrap();
        assert!((p2 - 1.310_838_055_770_749_4e-7).abs() < 1e-15);
    }

    #[test]
    fn count_siphon_shifts_the_pmf() {
        let d = CountDistribution::point(1000).subtract(250);
        assert_eq!((d.offset, d.mass.clone()), (750, vec![1.0]));
        let d = CountDistribution::point(100).subtract(250);
        assert_eq!((d.offset, d.mass.clone()), (0, vec![1.0]));
        let src = SourceModel::lossless(1000.0)
            .unwrap()
            .with_emission(Emission::Fixed);
        let r = rule(1000.0, 5.0);
        let s = Some(SiphonAmount::Count(250));
        assert_eq!(
            exact_pulse_alarm(&src, 250, &[s, None, None], &r).unwrap(),
            1.0
        );
        assert_eq!(exact_pulse_alarm(&src, 250, &[None; 3], &r).unwrap(), 0.0);
    }

    #[test]
    fn session_compounding() {
        assert_eq!(session_alarm(0.0, 100), 0.0);
        assert!((session_alarm(0.1, 2) - 0.19).abs() < 1e-15);
    }
}
