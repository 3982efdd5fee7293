//! Parameter sweeps described by a serializable plan.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::adversary::SiphonAmount;
use crate::exec::Exec;
use crate::rng::derive_seed;

use super::experiments::{evaluate_cell, roc_sweep, RocPoint, Scenario, TradeoffPoint};
use super::AnalysisError;

pub const TRADEOFF_HEADER: &str =
    "mu,n_or_f,z,trials,detection,det_lo,det_hi,eve_acc,acc_lo,acc_hi,rmse,oracle_value";
pub const ROC_HEADER: &str =
    "mu,n_or_f,z,trials,false_alarm,fa_lo,fa_hi,detection,det_lo,det_hi,oracle_false_alarm,oracle_detection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    /// Detection and Eve's accuracy per siphon amount, all legs siphoned.
    #[default]
    Tradeoff,
    /// Per-pulse false-alarm and detection rates of the stage-2 check.
    Roc,
}

fn default_bits() -> usize {
    8
}
fn default_attenuation() -> f64 {
    1.0
}
fn default_target() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub kind: PlanKind,
    pub master_seed: u64,
    pub trials: u64,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    #[serde(default)]
    pub siphon_counts: Vec<u64>,
    #[serde(default)]
    pub siphon_fractions: Vec<f64>,
    #[serde(default = "default_bits")]
    pub message_bits: usize,
    #[serde(default = "default_attenuation")]
    pub attenuation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_budget: Option<u64>,
    /// Eve accuracy that defines the threshold siphon n*.
    #[serde(default = "default_target")]
    pub accuracy_target: f64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::Plan(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.mu.is_empty() || self.z.is_empty() {
            return bad("mu and z grids must be non-empty".into());
        }
        if self.siphon_counts.is_empty() && self.siphon_fractions.is_empty() {
            return bad("give at least one siphon count or fraction".into());
        }
        if self.message_bits == 0 {
            return bad("message_bits must be at least 1".into());
        }
        if let Some(f) = self
            .siphon_fractions
            .iter()
            .find(|f| !(0.0..=1.0).contains(*f))
        {
            return bad(format!("siphon fraction {f} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.accuracy_target) {
            return bad(format!(
                "accuracy_target {} outside [0, 1]",
                self.accuracy_target
            ));
        }
        for &mu in &self.mu {
            for &z in &self.z {
                self.scenario(mu, z).rule(Default::default())?;
            }
        }
        Ok(())
    }

    pub fn siphons(&self) -> Vec<SiphonAmount> {
        self.siphon_counts
            .iter()
            .map(|&n| SiphonAmount::Count(n))
            .chain(
                self.siphon_fractions
                    .iter()
                    .map(|&f| SiphonAmount::Fraction(f)),
            )
            .collect()
    }

    pub fn scenario(&self, mu: f64, z: f64) -> Scenario {
        Scenario {
            attenuation: self.attenuation,
            tap_budget: self.tap_budget,
            message_bits: self.message_bits,
            ..Scenario::new(mu, z)
        }
    }

    /// Runs every cell. All siphon amounts at one `(mu, z)` share a seed, so
    /// neighbouring cells see the same messages and secret rotations.
    pub fn run(&self, exec: Exec) -> Result<SweepReport, AnalysisError> {
        self.validate()?;
        match self.kind {
            PlanKind::Tradeoff => {
                let mut cells = Vec::new();
                for (i, &mu) in self.mu.iter().enumerate() {
                    for (j, &z) in self.z.iter().enumerate() {
                        let seed = derive_seed(self.master_seed, &[i as u64, j as u64]);
                        for amount in self.siphons() {
                            cells.push(evaluate_cell(
                                &self.scenario(mu, z),
                                amount,
                                self.trials,
                                seed,
                                exec,
                            )?);
                        }
                    }
                }
                Ok(SweepReport::Tradeoff(cells))
            }
            PlanKind::Roc => {
                let mut rows = Vec::new();
                for (i, &mu) in self.mu.iter().enumerate() {
                    for (k, amount) in self.siphons().into_iter().enumerate() {
                        let seed = derive_seed(self.master_seed, &[i as u64, k as u64]);
                        let sc = self.scenario(mu, self.z[0]).siphon_first_leg(amount);
                        for p in roc_sweep(&sc, &self.z, self.trials, seed, exec)? {
                            rows.push(RocRow {
                                mu,
                                siphon: amount,
                                trials: self.trials,
                                point: p,
                            });
                        }
                    }
                }
                Ok(SweepReport::Roc(rows))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocRow {
    pub mu: f64,
    pub siphon: SiphonAmount,
    pub trials: u64,
    pub point: RocPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepReport {
    Tradeoff(Vec<TradeoffPoint>),
    Roc(Vec<RocRow>),
}

/// Smallest siphon count at one `(mu, z)` where Eve's accuracy reaches the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub mu: f64,
    pub z: f64,
    pub n_star: Option<u64>,
}

fn siphon_field(a: SiphonAmount) -> String {
    match a {
        SiphonAmount::Count(n) => n.to_string(),
        // Debug keeps the decimal point, so 1.0 never reads as a count
        SiphonAmount::Fraction(f) => format!("{f:?}"),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepReport {
    pub fn thresholds(&self, target: f64) -> Vec<Threshold> {
        let SweepReport::Tradeoff(cells) = self else {
            return Vec::new();
        };
        let mut out: Vec<Threshold> = Vec::new();
        for c in cells {
            let SiphonAmount::Count(n) = c.siphon else {
                continue;
            };
            let t = match out.iter_mut().find(|t| t.mu == c.mu && t.z == c.z) {
                Some(t) => t,
                None => {
                    out.push(Threshold {
                        mu: c.mu,
                        z: c.z,
                        n_star: None,
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            if c.eve_accuracy.point >= target && t.n_star.is_none_or(|m| n < m) {
                t.n_star = Some(n);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self {
            SweepReport::Tradeoff(cells) => {
                s.push_str(TRADEOFF_HEADER);
                s.push('\n');
                for c in cells {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        c.mu,
                        siphon_field(c.siphon),
                        c.z,
                        c.trials,
                        c.detection.point,
                        c.detection.interval.lo,
                        c.detection.interval.hi,
                        c.eve_accuracy.point,
                        c.eve_accuracy.interval.lo,
                        c.eve_accuracy.interval.hi,
                        c.rmse,
                        opt(c.oracle),
                    );
                }
            }
            SweepReport::Roc(rows) => {
                s.push_str(ROC_HEADER);
                s.push('\n');
                for r in rows {
                    let p = &r.point;
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        r.mu,
                        siphon_field(r.siphon),
                        p.z,
                        r.trials,
                        p.false_alarm.point,
                        p.false_alarm.interval.lo,
                        p.false_alarm.interval.hi,
                        p.detection.point,
                        p.detection.interval.lo,
                        p.detection.interval.hi,
                        opt(p.oracle_false_alarm),
                        opt(p.oracle_detection),
                    );
                }
            }
        }
        s
    }

    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}
