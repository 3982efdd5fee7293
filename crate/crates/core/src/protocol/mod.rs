//! The three-stage rotation exchange with per-stage intensity monitoring.
//!
//! Alice sends `U_A(X)`, Bob returns `U_B U_A(X)`, Alice strips her rotation and
//! sends `U_B(X)`, and Bob strips his to recover `X`. At every arrival the
//! receiving party taps a fixed photon budget and compares the arrival count
//! with the intensity ledger; a deficit beyond `z·√expected` raises an alarm.

pub mod auth;
pub mod session;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::channel::{emit_pulse, tap_intensity, IntensityReading, Pulse, SourceModel, Stage};
use crate::message::BitString;
use crate::quantum::{measure, Basis, MeasurementOutcome, PolarizationState, Rotation};

pub use auth::{publish_hash, verify_hash, HashCheck, MessageAuth};
pub use session::{run_session, HashPolicy, HashTiming, SessionConfig, SessionOutcome};
pub use transcript::{Decision, SessionTranscript, TranscriptEvent, Verdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("message must contain at least one bit")]
    EmptyMessage,
    #[error("pulse {index} is tagged {found}, expected {expected}")]
    WrongStage {
        index: usize,
        expected: Stage,
        found: Stage,
    },
    #[error("session aborted at {}", .0.stage)]
    Aborted(AbortSignal),
    #[error("z threshold must be non-negative, got {0}")]
    Threshold(f64),
    #[error("abort policy needs k >= 1")]
    Policy,
    #[error("invalid adversary strategy: {0}")]
    Strategy(#[from] crate::adversary::AdversaryError),
}

/// Evidence carried out of a stage whose monitoring fired.
#[derive(Debug, Clone, PartialEq)]
pub struct AbortSignal {
    pub stage: Stage,
    pub readings: Vec<IntensityReading>,
    pub alarms: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeFailure {
    Tie,
    NoPhotons,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("bit {index} could not be decoded: {reason:?}")]
pub struct DecodeError {
    pub index: usize,
    pub reason: DecodeFailure,
}

/// A party's private state for one session. Never serialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyConfig {
    pub secret_rotation: Rotation,
    /// Photons consumed by each intensity check, nominally μ/4.
    pub tap_budget: u64,
}

impl PartyConfig {
    pub fn new(secret_rotation: Rotation, tap_budget: u64) -> Self {
        Self {
            secret_rotation,
            tap_budget,
        }
    }

    pub fn random<R: Rng + ?Sized>(tap_budget: u64, rng: &mut R) -> Self {
        Self::new(Rotation::random(rng), tap_budget)
    }
}

/// Nominal tap budget for a source: a quarter of the mean photon number.
pub fn nominal_tap_budget(src: &SourceModel) -> u64 {
    (src.mean_photons() / 4.0).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmPolicy {
    /// Abort at a stage once at least `k` pulses alarm there.
    AbortAfter(usize),
    /// Record alarms but never abort.
    RecordOnly,
}

impl Default for AlarmPolicy {
    fn default() -> Self {
        AlarmPolicy::AbortAfter(1)
    }
}

/// One-sided intensity test against the expected arrival count of each check.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRule {
    expected_by_stage: BTreeMap<Stage, f64>,
    z_threshold: f64,
    checked: BTreeSet<Stage>,
    policy: AlarmPolicy,
    eve_read_floor: Option<u64>,
}

impl DetectionRule {
    /// Expectations from the tap ledger: Bob sees `μt` at S2, Alice `(μt − tap)t`
    /// at S3 and Bob `((μt − tap)t − tap)t` at FINAL, for per-hop transmission `t`.
    pub fn from_ledger(
        src: &SourceModel,
        tap_budget: u64,
        z_threshold: f64,
    ) -> Result<Self, ProtocolError> {
        if z_threshold.is_nan() || z_threshold < 0.0 {
            return Err(ProtocolError::Threshold(z_threshold));
        }
        let t = src.attenuation();
        let tap = tap_budget as f64;
        let s2 = src.mean_photons() * t;
        let s3 = (s2 - tap).max(0.0) * t;
        let fin = (s3 - tap).max(0.0) * t;
        Ok(Self {
            expected_by_stage: BTreeMap::from([
                (Stage::S2, s2),
                (Stage::S3, s3),
                (Stage::Final, fin),
            ]),
            z_threshold,
            checked: BTreeSet::from([Stage::S2, Stage::S3, Stage::Final]),
            policy: AlarmPolicy::default(),
            eve_read_floor: None,
        })
    }

    pub fn with_policy(mut self, policy: AlarmPolicy) -> Result<Self, ProtocolError> {
        if policy == AlarmPolicy::AbortAfter(0) {
            return Err(ProtocolError::Policy);
        }
        self.policy = policy;
        Ok(self)
    }

    pub fn with_checked(mut self, stages: impl IntoIterator<Item = Stage>) -> Self {
        self.checked = stages
            .into_iter()
            .filter(|s| self.expected_by_stage.contains_key(s))
            .collect();
        self
    }

    pub fn with_read_floor(mut self, floor: Option<u64>) -> Self {
        self.eve_read_floor = floor;
        self
    }

    pub fn with_z(mut self, z_threshold: f64) -> Result<Self, ProtocolError> {
        if z_threshold.is_nan() || z_threshold < 0.0 {
            return Err(ProtocolError::Threshold(z_threshold));
        }
        self.z_threshold = z_threshold;
        Ok(self)
    }

    pub fn expected(&self, stage: Stage) -> Option<f64> {
        self.expected_by_stage.get(&stage).copied()
    }

    pub fn z_threshold(&self) -> f64 {
        self.z_threshold
    }

    pub fn policy(&self) -> AlarmPolicy {
        self.policy
    }

    pub fn checked(&self) -> &BTreeSet<Stage> {
        &self.checked
    }

    pub fn is_checked(&self, stage: Stage) -> bool {
        self.checked.contains(&stage)
    }

    pub fn eve_read_floor(&self) -> Option<u64> {
        self.eve_read_floor
    }

    /// Arrival counts strictly below this value alarm.
    pub fn cutoff(&self, stage: Stage) -> Option<f64> {
        self.expected(stage)
            .map(|e| e - self.z_threshold * e.sqrt())
    }

    pub fn is_alarm(&self, stage: Stage, arrivals: u64) -> bool {
        self.is_checked(stage) && self.cutoff(stage).is_some_and(|c| (arrivals as f64) < c)
    }

    fn should_abort(&self, alarms: &[bool]) -> bool {
        match self.policy {
            AlarmPolicy::AbortAfter(k) => alarms.iter().filter(|&&a| a).count() >= k,
            AlarmPolicy::RecordOnly => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub train: Vec<Pulse>,
    pub readings: Vec<IntensityReading>,
    pub alarms: Vec<bool>,
}

impl StageOutput {
    pub fn alarm_count(&self) -> usize {
        self.alarms.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage3Output {
    pub output: StageOutput,
    /// Every forwarded pulse is at or below the photon count Eve needs for a
    /// useful reading, so returning the train leaks nothing useful.
    pub continue_low_power: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub readings: Vec<IntensityReading>,
    pub alarms: Vec<bool>,
    pub outcomes: Vec<MeasurementOutcome>,
    pub decoded: Result<BitString, DecodeError>,
}

fn expect_stage(train: &[Pulse], expected: Stage) -> Result<(), ProtocolError> {
    match train.iter().position(|p| p.stage != expected) {
        Some(index) => Err(ProtocolError::WrongStage {
            index,
            expected,
            found: train[index].stage,
        }),
        None => Ok(()),
    }
}

/// Retags arriving pulses as `stage`, taps each one and evaluates the rule.
fn receive(train: Vec<Pulse>, stage: Stage, tap_budget: u64, rule: &DetectionRule) -> StageOutput {
    let expected = rule.expected(stage).unwrap_or(0.0);
    let mut readings = Vec::with_capacity(train.len());
    let mut alarms = Vec::with_capacity(train.len());
    let train = train
        .into_iter()
        .map(|p| {
            let (mut reading, forwarded) = tap_intensity(&Pulse { stage, ..p }, tap_budget);
            reading.expected = expected;
            alarms.push(rule.is_alarm(stage, reading.arrivals()));
            readings.push(reading);
            forwarded
        })
        .collect();
    StageOutput {
        train,
        readings,
        alarms,
    }
}

fn rotate_train(train: &mut [Pulse], r: Rotation) {
    for p in train {
        p.polarization = p.polarization.rotate(r);
    }
}

fn abort_or(
    out: StageOutput,
    stage: Stage,
    rule: &DetectionRule,
) -> Result<StageOutput, ProtocolError> {
    if rule.should_abort(&out.alarms) {
        Err(ProtocolError::Aborted(AbortSignal {
            stage,
            readings: out.readings,
            alarms: out.alarms,
        }))
    } else {
        Ok(out)
    }
}

/// Stage 1: one pulse per bit, each carrying `U_A(encode(bit))`.
pub fn alice_stage1<R: Rng + ?Sized>(
    bits: &BitString,
    alice: &PartyConfig,
    src: &SourceModel,
    rng: &mut R,
) -> Result<Vec<Pulse>, ProtocolError> {
    if bits.is_empty() {
        return Err(ProtocolError::EmptyMessage);
    }
    Ok(bits
        .bits()
        .iter()
        .map(|&b| {
            let pol = PolarizationState::from_bit(b).rotate(alice.secret_rotation);
            emit_pulse(src, pol, rng)
        })
        .collect())
}

/// Stage 2: Bob checks arrivals, taps his budget and applies `U_B`.
pub fn bob_stage2(
    train: Vec<Pulse>,
    bob: &PartyConfig,
    rule: &DetectionRule,
) -> Result<StageOutput, ProtocolError> {
    expect_stage(&train, Stage::S1)?;
    let mut out = abort_or(
        receive(train, Stage::S2, bob.tap_budget, rule),
        Stage::S2,
        rule,
    )?;
    rotate_train(&mut out.train, bob.secret_rotation);
    Ok(out)
}

/// Stage 3: Alice checks arrivals, taps and removes `U_A`.
pub fn alice_stage3(
    train: Vec<Pulse>,
    alice: &PartyConfig,
    rule: &DetectionRule,
) -> Result<Stage3Output, ProtocolError> {
    expect_stage(&train, Stage::S2)?;
    let mut out = abort_or(
        receive(train, Stage::S3, alice.tap_budget, rule),
        Stage::S3,
        rule,
    )?;
    rotate_train(&mut out.train, alice.secret_rotation.inverse());
    let continue_low_power = rule
        .eve_read_floor
        .is_some_and(|floor| out.train.iter().all(|p| p.photon_count <= floor));
    Ok(Stage3Output {
        output: out,
        continue_low_power,
    })
}

/// Final step: Bob checks arrivals, taps, removes `U_B` and decodes each pulse
/// by majority vote over an HV measurement of the remaining photons.
pub fn bob_finalize<R: Rng + ?Sized>(
    train: Vec<Pulse>,
    bob: &PartyConfig,
    rule: &DetectionRule,
    rng: &mut R,
) -> Result<Finalized, ProtocolError> {
    expect_stage(&train, Stage::S3)?;
    let out = abort_or(
        receive(train, Stage::Final, bob.tap_budget, rule),
        Stage::Final,
        rule,
    )?;
    let undo = bob.secret_rotation.inverse();
    let outcomes: Vec<MeasurementOutcome> = out
        .train
        .iter()
        .map(|p| measure(p.polarization.rotate(undo), p.photon_count, Basis::Hv, rng))
        .collect();
    let decoded = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| {
            if o.total() == 0 {
                Err(DecodeError {
                    index,
                    reason: DecodeFailure::NoPhotons,
                })
            } else if o.v_count == o.h_count {
                Err(DecodeError {
                    index,
                    reason: DecodeFailure::Tie,
                })
            } else {
                Ok(o.v_count > o.h_count)
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(BitString::new);
    Ok(Finalized {
        readings: out.readings,
        alarms: out.alarms,
        outcomes,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Emission;
    use crate::quantum::{polarization_distance, ANGLE_EPS};
    use crate::rng::from_seed;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    fn fixed_src(mu: f64) -> SourceModel {
        SourceModel::lossless(mu)
            .unwrap()
            .with_emission(Emission::Fixed)
    }

    fn pulse(n: u64, stage: Stage) -> Pulse {
        Pulse {
            photon_count: n,
            polarization: PolarizationState::HORIZONTAL,
            stage,
        }
    }

    #[test]
    fn stage1_encodes_under_alice_rotation() {
        let src = fixed_src(1000.0);
        let mut rng = from_seed(0);
        let id = PartyConfig::new(Rotation::IDENTITY, 250);
        let t = alice_stage1(&"0".parse().unwrap(), &id, &src, &mut rng).unwrap();
        assert_eq!(t[0].polarization.angle(), 0.0);
        assert_eq!(t[0].stage, Stage::S1);

        let a = PartyConfig::new(Rotation::new(FRAC_PI_3), 250);
        let t = alice_stage1(&"1".parse().unwrap(), &a, &src, &mut rng).unwrap();
        assert!(polarization_distance(t[0].polarization.angle(), 5.0 * PI / 6.0) < ANGLE_EPS);
        assert!(t[0].polarization.angle() < PI);

        assert_eq!(
            alice_stage1(&BitString::default(), &a, &src, &mut rng),
            Err(ProtocolError::EmptyMessage)
        );
    }

    #[test]
    fn ledger_expectations() {
        let src = SourceModel::lossless(1000.0).unwrap();
        let rule = DetectionRule::from_ledger(&src, 250, 5.0).unwrap();
        assert_eq!(rule.expected(Stage::S2), Some(1000.0));
        assert_eq!(rule.expected(Stage::S3), Some(750.0));
        assert_eq!(rule.expected(Stage::Final), Some(500.0));
        assert!((rule.cutoff(Stage::S2).unwrap() - 841.886_116_991_581).abs() < 1e-9);
        assert!((rule.cutoff(Stage::S3).unwrap() - 613.069_360_623_708_5).abs() < 1e-9);
        assert!(DetectionRule::from_ledger(&src, 250, -1.0).is_err());
        assert!(rule
            .clone()
            .with_policy(AlarmPolicy::AbortAfter(0))
            .is_err());

        let lossy = SourceModel::new(1000.0, 0.9).unwrap();
        let rule = DetectionRule::from_ledger(&lossy, 250, 5.0).unwrap();
        assert!((rule.expected(Stage::S3).unwrap() - 585.0).abs() < 1e-9);
    }

    #[test]
    fn stage2_taps_and_alarms() {
        let src = SourceModel::lossless(1000.0).unwrap();
        let rule = DetectionRule::from_ledger(&src, 250, 5.0).unwrap();
        let bob = PartyConfig::new(Rotation::new(0.4), 250);

        let out = bob_stage2(vec![pulse(1000, Stage::S1)], &bob, &rule).unwrap();
        assert_eq!(out.train[0].photon_count, 750);
        assert_eq!(out.train[0].stage, Stage::S2);
        assert!((out.train[0].polarization.angle() - 0.4).abs() < ANGLE_EPS);
        assert_eq!(out.readings[0].stage, Stage::S2);
        assert_eq!(out.alarms, vec![false]);

        // Eve took 250 upstream: 750 < 841.9
        match bob_stage2(vec![pulse(750, Stage::S1)], &bob, &rule) {
            Err(ProtocolError::Aborted(sig)) => {
                assert_eq!(sig.stage, Stage::S2);
                assert_eq!(sig.alarms, vec![true]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            bob_stage2(vec![pulse(0, Stage::S1)], &bob, &rule),
            Err(ProtocolError::Aborted(_))
        ));
        assert!(matches!(
            bob_stage2(vec![pulse(1000, Stage::S2)], &bob, &rule),
            Err(ProtocolError::WrongStage { index: 0, .. })
        ));

        // unchecked stage records but never alarms
        let quiet = rule.clone().with_checked([Stage::S3, Stage::Final]);
        let out = bob_stage2(vec![pulse(10, Stage::S1)], &bob, &quiet).unwrap();
        assert_eq!(out.alarms, vec![false]);

        let record = rule.with_policy(AlarmPolicy::RecordOnly).unwrap();
        let out = bob_stage2(vec![pulse(10, Stage::S1)], &bob, &record).unwrap();
        assert_eq!(out.alarm_count(), 1);
    }

    #[test]
    fn k_out_of_m_policy() {
        let src = SourceModel::lossless(1000.0).unwrap();
        let rule = DetectionRule::from_ledger(&src, 250, 5.0)
            .unwrap()
            .with_policy(AlarmPolicy::AbortAfter(2))
            .unwrap();
        let bob = PartyConfig::new(Rotation::IDENTITY, 250);
        let one_bad = vec![pulse(700, Stage::S1), pulse(1000, Stage::S1)];
        assert!(bob_stage2(one_bad, &bob, &rule).is_ok());
        let two_bad = vec![pulse(700, Stage::S1), pulse(700, Stage::S1)];
        assert!(bob_stage2(two_bad, &bob, &rule).is_err());
    }

    #[test]
    fn stage3_checks_and_strips_alice_rotation() {
        let src = SourceModel::lossless(1000.0).unwrap();
        let rule = DetectionRule::from_ledger(&src, 250, 5.0).unwrap();
        let alice = PartyConfig::new(Rotation::new(FRAC_PI_3), 250);
        let bob = PartyConfig::new(Rotation::new(1.1), 250);

        let s1 = alice_stage1(
            &"1".parse().unwrap(),
            &alice,
            &fixed_src(1000.0),
            &mut from_seed(1),
        )
        .unwrap();
        let s2 = bob_stage2(s1, &bob, &rule).unwrap();
        let s3 = alice_stage3(s2.train, &alice, &rule).unwrap();
        assert_eq!(s3.output.train[0].photon_count, 500);
        let only_bob = PolarizationState::VERTICAL.rotate(bob.secret_rotation);
        assert!(s3.output.train[0].polarization.distance(only_bob) < ANGLE_EPS);
        assert!(!s3.continue_low_power);

        // 740 arrivals against 750 expected stays above 613
        let out = alice_stage3(vec![pulse(740, Stage::S2)], &alice, &rule).unwrap();
        assert_eq!(out.output.alarms, vec![false]);
        assert!(alice_stage3(vec![pulse(600, Stage::S2)], &alice, &rule).is_err());

        let floor = rule.with_read_floor(Some(500));
        let out = alice_stage3(vec![pulse(750, Stage::S2)], &alice, &floor).unwrap();
        assert!(out.continue_low_power);
    }

    #[test]
    fn finalize_recovers_bits_and_reports_empty_pulses() {
        let src = SourceModel::lossless(1000.0).unwrap();
        let rule = DetectionRule::from_ledger(&src, 250, 5.0).unwrap();
        let alice = PartyConfig::new(Rotation::new(2.3), 250);
        let bob = PartyConfig::new(Rotation::new(5.9), 250);
        let msg: BitString = "10110".parse().unwrap();
        let mut rng = from_seed(3);
        let s1 = alice_stage1(&msg, &alice, &fixed_src(1000.0), &mut rng).unwrap();
        let s2 = bob_stage2(s1, &bob, &rule).unwrap();
        let s3 = alice_stage3(s2.train, &alice, &rule).unwrap();
        let fin = bob_finalize(s3.output.train, &bob, &rule, &mut rng).unwrap();
        assert_eq!(fin.decoded, Ok(msg));
        assert!(fin.outcomes.iter().all(|o| o.total() == 250));

        let record = rule.with_policy(AlarmPolicy::RecordOnly).unwrap();
        let fin = bob_finalize(vec![pulse(0, Stage::S3)], &bob, &record, &mut rng).unwrap();
        assert_eq!(
            fin.decoded,
            Err(DecodeError {
                index: 0,
                reason: DecodeFailure::NoPhotons
            })
        );
    }

    #[test]
    fn finalize_rejects_ties() {
        // a diagonal state projects 50/50; with 2 photons a tie is common
        let src = SourceModel::lossless(4.0).unwrap();
        let rule = DetectionRule::from_ledger(&src, 0, 5.0)
            .unwrap()
            .with_policy(AlarmPolicy::RecordOnly)
            .unwrap();
        let bob = PartyConfig::new(Rotation::IDENTITY, 0);
        let p = Pulse {
            photon_count: 2,
            polarization: PolarizationState::new(FRAC_PI_2 / 2.0),
            stage: Stage::S3,
        };
        let mut rng = from_seed(12);
        let ties = (0..200)
            .filter(|_| {
                matches!(
                    bob_finalize(vec![p], &bob, &rule, &mut rng)
                        .unwrap()
                        .decoded,
                    Err(DecodeError {
                        reason: DecodeFailure::Tie,
                        ..
                    })
                )
            })
            .count();
        assert!(ties > 50 && ties < 150, "{ties}");
    }

    #[test]
    fn raising_z_never_creates_alarms() {
        let src = SourceModel::lossless(1000.0).unwrap();
        for arrivals in (0..1200).step_by(7) {
            let mut prev = true;
            for z in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 100.0] {
                let rule = DetectionRule::from_ledger(&src, 250, z).unwrap();
                let a = rule.is_alarm(Stage::S2, arrivals);
                assert!(prev || !a, "z={z} arrivals={arrivals}");
                prev = a;
            }
        }
    }
}
