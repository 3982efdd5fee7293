//! Monte Carlo experiments over full protocol sessions.
//!
//! Every trial draws its message, secret rotations and channel noise from
//! `stream(seed, [.., trial])`, so results are identical for any executor.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::adversary::{EveStrategy, SiphonAmount, HOPS};
use crate::channel::{
    attenuate, emit_pulse, siphon, siphon_fraction, Emission, SourceModel, Stage,
};
use crate::exec::Exec;
use crate::message::BitString;
use crate::protocol::{
    nominal_tap_budget, run_session, AlarmPolicy, Decision, DetectionRule, HashPolicy, PartyConfig,
    SessionConfig,
};
use crate::quantum::{
    estimate_angle, measure, polarization_distance, Basis, PolarizationState, Rotation,
};
use crate::rng::{stream, SimRng};

use super::oracle::{exact_pulse_alarm, session_alarm, LegSiphons, MAX_ORACLE_MU};
use super::stats::{loglog_slope, mean_se, Interval, Proportion};
use super::AnalysisError;

/// Confidence level of every interval written to result tables.
pub const TABLE_CONFIDENCE: f64 = 0.95;

/// One experimental condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mu: f64,
    pub attenuation: f64,
    pub emission: Emission,
    /// Defaults to μ/4.
    pub tap_budget: Option<u64>,
    pub z: f64,
    pub message_bits: usize,
    pub checked: Vec<Stage>,
    /// Eve's siphon on the S1, S2 and S3 legs.
    pub siphons: LegSiphons,
}

impl Scenario {
    pub fn new(mu: f64, z: f64) -> Self {
        Self {
            mu,
            attenuation: 1.0,
            emission: Emission::Poisson,
            tap_budget: None,
            z,
            message_bits: 8,
            checked: vec![Stage::S2, Stage::S3, Stage::Final],
            siphons: [None; 3],
        }
    }

    pub fn siphon_all(mut self, amount: SiphonAmount) -> Self {
        self.siphons = [Some(amount); 3];
        self
    }

    pub fn siphon_first_leg(mut self, amount: SiphonAmount) -> Self {
        self.siphons = [Some(amount), None, None];
        self
    }

    pub fn checked(mut self, stages: &[Stage]) -> Self {
        self.checked = stages.to_vec();
        self
    }

    pub fn bits(mut self, n: usize) -> Self {
        self.message_bits = n;
        self
    }

    pub fn source(&self) -> Result<SourceModel, AnalysisError> {
        Ok(SourceModel::new(self.mu, self.attenuation)?.with_emission(self.emission))
    }

    pub fn tap(&self) -> Result<u64, AnalysisError> {
        Ok(self
            .tap_budget
            .unwrap_or(nominal_tap_budget(&self.source()?)))
    }

    pub fn rule(&self, policy: AlarmPolicy) -> Result<DetectionRule, AnalysisError> {
        Ok(
            DetectionRule::from_ledger(&self.source()?, self.tap()?, self.z)?
                .with_checked(self.checked.iter().copied())
                .with_policy(policy)?,
        )
    }

    pub fn strategy(&self) -> EveStrategy {
        if self.siphons.iter().all(Option::is_none) {
            EveStrategy::none()
        } else {
            EveStrategy::siphon(
                HOPS.iter()
                    .zip(self.siphons)
                    .filter_map(|(&s, a)| a.map(|a| (s, a))),
            )
        }
    }

    fn session_config<R: Rng + ?Sized>(
        &self,
        policy: AlarmPolicy,
        rng: &mut R,
    ) -> Result<SessionConfig, AnalysisError> {
        let tap = self.tap()?;
        Ok(SessionConfig {
            source: self.source()?,
            alice: PartyConfig::random(tap, rng),
            bob: PartyConfig::random(tap, rng),
            rule: self.rule(policy)?,
            eve: self.strategy(),
            eve_rotation: Rotation::random(rng),
            hash: HashPolicy::default(),
        })
    }

    /// Exact session-level alarm probability, when the enumeration is feasible.
    pub fn exact_session_alarm(&self) -> Result<Option<f64>, AnalysisError> {
        if self.mu > MAX_ORACLE_MU {
            return Ok(None);
        }
        let rule = self.rule(AlarmPolicy::RecordOnly)?;
        let p = exact_pulse_alarm(&self.source()?, self.tap()?, &self.siphons, &rule)?;
        Ok(Some(session_alarm(p, self.message_bits)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionEstimate {
    /// Point estimate with its 95% Wilson interval.
    pub detection: Proportion,
    pub interval_99: Interval,
    pub oracle: Option<f64>,
}

/// Fraction of sessions that abort, over `trials` independent sessions.
pub fn detection_probability(
    scenario: &Scenario,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<DetectionEstimate, AnalysisError> {
    if trials < 100 {
        return Err(AnalysisError::Plan(format!(
            "detection needs at least 100 trials, got {trials}"
        )));
    }
    scenario.rule(AlarmPolicy::default())?;
    let aborted = exec.map(trials, |t| -> Result<bool, AnalysisError> {
        let mut rng = stream(seed, &[t]);
        let cfg = scenario.session_config(AlarmPolicy::default(), &mut rng)?;
        let msg = BitString::random(scenario.message_bits, &mut rng);
        Ok(run_session(t, &msg, &cfg, &mut rng)?
            .transcript
            .aborted
            .is_some())
    });
    let hits = aborted
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .iter()
        .filter(|&&a| a)
        .count() as u64;
    let detection = Proportion::new(hits, trials, TABLE_CONFIDENCE);
    Ok(DetectionEstimate {
        detection,
        interval_99: Proportion::new(hits, trials, 0.99).interval,
        oracle: scenario.exact_session_alarm()?,
    })
}

/// Detection and leakage measured together in one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub mu: f64,
    pub siphon: SiphonAmount,
    pub z: f64,
    pub trials: u64,
    /// Sessions in which any check alarmed.
    pub detection: Proportion,
    /// Bits Eve guessed correctly (coin flip where a leg is missing).
    pub eve_accuracy: Proportion,
    /// RMSE of Eve's recovered message angle over fully captured bits.
    pub rmse: f64,
    pub oracle: Option<f64>,
}

struct TrialTally {
    detected: bool,
    correct: u64,
    bits: u64,
    sq_err: f64,
    estimated: u64,
}

/// Runs every session of a cell with monitoring in record-only mode, so Eve
/// observes all three legs while the alarms of the same run give detection.
pub fn evaluate_cell(
    scenario: &Scenario,
    amount: SiphonAmount,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<TradeoffPoint, AnalysisError> {
    let scenario = scenario.clone().siphon_all(amount);
    scenario.rule(AlarmPolicy::RecordOnly)?;
    let tallies = exec.map(trials, |t| -> Result<TrialTally, AnalysisError> {
        let mut rng = stream(seed, &[t]);
        let cfg = scenario.session_config(AlarmPolicy::RecordOnly, &mut rng)?;
        let msg = BitString::random(scenario.message_bits, &mut rng);
        let out = run_session(t, &msg, &cfg, &mut rng)?;
        let knowledge = out.eve.unwrap_or_default();
        let guess = knowledge.guess_bits(&mut rng);
        let mut tally = TrialTally {
            detected: out.transcript.alarm_count() > 0,
            correct: guess
                .bits()
                .iter()
                .zip(msg.bits())
                .filter(|(a, b)| a == b)
                .count() as u64,
            bits: msg.len() as u64,
            sq_err: 0.0,
            estimated: 0,
        };
        for (i, &b) in msg.bits().iter().enumerate() {
            if let Ok(est) = knowledge.correlate_bit(i) {
                let truth = PolarizationState::from_bit(b).angle();
                tally.sq_err += polarization_distance(est.angle, truth).powi(2);
                tally.estimated += 1;
            }
        }
        Ok(tally)
    });
    let tallies = tallies.into_iter().collect::<Result<Vec<_>, _>>()?;
    let detected = tallies.iter().filter(|t| t.detected).count() as u64;
    let correct: u64 = tallies.iter().map(|t| t.correct).sum();
    let bits: u64 = tallies.iter().map(|t| t.bits).sum();
    let estimated: u64 = tallies.iter().map(|t| t.estimated).sum();
    let sq: f64 = tallies.iter().map(|t| t.sq_err).sum();
    Ok(TradeoffPoint {
        mu: scenario.mu,
        siphon: amount,
        z: scenario.z,
        trials,
        detection: Proportion::new(detected, trials, TABLE_CONFIDENCE),
        eve_accuracy: Proportion::new(correct, bits, TABLE_CONFIDENCE),
        rmse: if estimated == 0 {
            f64::NAN
        } else {
            (sq / estimated as f64).sqrt()
        },
        oracle: scenario.exact_session_alarm()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakagePoint {
    /// Photons Eve measures, split evenly between the two bases.
    pub photons: u64,
    pub rmse: f64,
    pub trials: u64,
}

fn single_estimate_sq_error(photons: u64, rng: &mut SimRng) -> Option<f64> {
    let truth = rng.random::<f64>() * PI;
    let st = PolarizationState::new(truth);
    let m_hv = photons / 2;
    let hv = measure(st, m_hv, Basis::Hv, rng);
    let dg = measure(st, photons - m_hv, Basis::Diagonal, rng);
    estimate_angle(&hv, &dg)
        .ok()
        .map(|e| polarization_distance(e, truth).powi(2))
}

/// RMSE of a single-leg angle estimate at uniformly random true angles.
pub fn leakage_vs_n(photons: &[u64], trials: u64, seed: u64, exec: Exec) -> Vec<LeakagePoint> {
    photons
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = exec
                .map(trials, |t| {
                    single_estimate_sq_error(n, &mut stream(seed, &[n, t]))
                })
                .into_iter()
                .flatten()
                .collect();
            LeakagePoint {
                photons: n,
                rmse: (errs.iter().sum::<f64>() / errs.len() as f64).sqrt(),
                trials: errs.len() as u64,
            }
        })
        .collect()
}

pub fn rmse_slope(points: &[LeakagePoint]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.photons as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rmse).collect();
    loglog_slope(&xs, &ys)
}

/// Smallest photon count for which Eve's single-leg angle RMSE is at most
/// `target_rmse`; below it a returned pulse is too weak for a useful reading.
pub fn read_floor(target_rmse: f64, trials: u64, seed: u64, exec: Exec) -> u64 {
    let rmse = |n: u64| leakage_vs_n(&[n], trials, seed, exec)[0].rmse;
    let mut hi = 2;
    while rmse(hi) > target_rmse && hi < 1 << 40 {
        hi *= 2;
    }
    let mut lo = hi / 2;
    if lo < 2 || rmse(lo) <= target_rmse {
        return hi.min(2).max(lo);
    }
    // rmse(lo) > target >= rmse(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if rmse(mid) <= target_rmse {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub z: f64,
    pub false_alarm: Proportion,
    pub detection: Proportion,
    pub oracle_false_alarm: Option<f64>,
    pub oracle_detection: Option<f64>,
}

/// Operating characteristic of Bob's stage-2 check per pulse. Honest and
/// attacked arrivals are sampled once and scored at every threshold, so both
/// curves are exactly monotone in `z`.
pub fn roc_sweep(
    scenario: &Scenario,
    z_grid: &[f64],
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<RocPoint>, AnalysisError> {
    if z_grid.is_empty() {
        return Err(AnalysisError::Plan("z grid is empty".into()));
    }
    let src = scenario.source()?;
    let attack = scenario.siphons[0];
    if let Some(SiphonAmount::Fraction(f)) = attack {
        if !(0.0..=1.0).contains(&f) {
            return Err(crate::channel::ChannelError::Fraction(f).into());
        }
    }
    let arrivals: Vec<(u64, u64)> = exec.map(trials, |t| {
        let mut rng = stream(seed, &[t]);
        let pol = PolarizationState::HORIZONTAL;
        let honest = attenuate(&emit_pulse(&src, pol, &mut rng), &src, &mut rng).photon_count;
        let p = emit_pulse(&src, pol, &mut rng);
        let fwd = match attack {
            None => p,
            Some(SiphonAmount::Count(n)) => siphon(&p, n).1,
            Some(SiphonAmount::Fraction(f)) => siphon_fraction(&p, f, &mut rng).expect("checked").1,
        };
        (honest, attenuate(&fwd, &src, &mut rng).photon_count)
    });
    z_grid
        .iter()
        .map(|&z| {
            let sc = Scenario {
                z,
                ..scenario.clone()
            }
            .checked(&[Stage::S2]);
            let rule = sc.rule(AlarmPolicy::RecordOnly)?;
            let fa = arrivals
                .iter()
                .filter(|(h, _)| rule.is_alarm(Stage::S2, *h))
                .count() as u64;
            let det = arrivals
                .iter()
                .filter(|(_, a)| rule.is_alarm(Stage::S2, *a))
                .count() as u64;
            let (ofa, odet) = if sc.mu <= MAX_ORACLE_MU {
                let tap = sc.tap()?;
                (
                    Some(exact_pulse_alarm(&src, tap, &[None; 3], &rule)?),
                    Some(exact_pulse_alarm(&src, tap, &[attack, None, None], &rule)?),
                )
            } else {
                (None, None)
            };
            Ok(RocPoint {
                z,
                false_alarm: Proportion::new(fa, trials, TABLE_CONFIDENCE),
                detection: Proportion::new(det, trials, TABLE_CONFIDENCE),
                oracle_false_alarm: ofa,
                oracle_detection: odet,
            })
        })
        .collect()
}

/// Mean and standard error of a per-pulse quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerMeans {
    pub pulses: u64,
    pub arrivals_s2: MeanEstimate,
    pub arrivals_s3: MeanEstimate,
    pub arrivals_final: MeanEstimate,
    pub final_residue: MeanEstimate,
}

/// Ensemble means of what each honest check observes, taken from session
/// transcripts with monitoring in record-only mode.
pub fn intensity_ledger(
    scenario: &Scenario,
    sessions: u64,
    seed: u64,
    exec: Exec,
) -> Result<LedgerMeans, AnalysisError> {
    let scenario = Scenario {
        siphons: [None; 3],
        ..scenario.clone()
    };
    scenario.rule(AlarmPolicy::RecordOnly)?;
    let per_session = exec.map(
        sessions,
        |t| -> Result<Vec<(Stage, u64, u64)>, AnalysisError> {
            let mut rng = stream(seed, &[t]);
            let cfg = scenario.session_config(AlarmPolicy::RecordOnly, &mut rng)?;
            let msg = BitString::random(scenario.message_bits, &mut rng);
            let out = run_session(t, &msg, &cfg, &mut rng)?;
            Ok(out
                .transcript
                .events
                .iter()
                .filter(|e| matches!(e.decision, Decision::Pass | Decision::Alarm))
                .map(|e| (e.stage, e.consumed + e.forwarded, e.forwarded))
                .collect())
        },
    );
    let mut by_stage: [Vec<f64>; 3] = Default::default();
    let mut residue = Vec::new();
    for rows in per_session {
        for (stage, arrived, forwarded) in rows? {
            let i = match stage {
                Stage::S2 => 0,
                Stage::S3 => 1,
                _ => 2,
            };
            by_stage[i].push(arrived as f64);
            if stage == Stage::Final {
                residue.push(forwarded as f64);
            }
        }
    }
    let est = |xs: &[f64]| {
        let (mean, se) = mean_se(xs);
        MeanEstimate { mean, se }
    };
    Ok(LedgerMeans {
        pulses: residue.len() as u64,
        arrivals_s2: est(&by_stage[0]),
        arrivals_s3: est(&by_stage[1]),
        arrivals_final: est(&by_stage[2]),
        final_residue: est(&residue),
    })
}
