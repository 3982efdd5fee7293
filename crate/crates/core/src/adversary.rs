//! Eve: passive photon siphoning with a three-stage correlation attack, and
//! impersonation of Alice.
//!
//! The hop angles are `a₁ = θ_X + θ_A`, `a₂ = θ_X + θ_A + θ_B` and
//! `a₃ = θ_X + θ_B` (mod π), so `a₁ + a₃ − a₂ = θ_X` cancels both secrets.
//! Each stage's captured photons are split evenly between the HV and diagonal
//! bases and turned into an angle estimate.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    emit_pulse, siphon, siphon_fraction, tap_intensity, ChannelError, IntensityReading, Pulse,
    SourceModel, Stage,
};
use crate::message::BitString;
use crate::protocol::PartyConfig;
use crate::quantum::{
    angle_to_bit, estimate_angle, measure, polarization_distance, reduce_angle, Basis,
    PolarizationState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("bit {bit}: no usable capture at {stage}")]
    InsufficientCapture { bit: usize, stage: Stage },
    #[error("strategy mode {0:?} does not support this operation")]
    WrongMode(EveMode),
    #[error("Eve cannot tap the {0} leg")]
    NotAHop(Stage),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiphonAmount {
    /// Exactly `n` photons (clamped to what the pulse holds).
    Count(u64),
    /// Beam splitter diverting each photon with probability `f`.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EveMode {
    None,
    Siphon,
    Impersonate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EveStrategy {
    pub mode: EveMode,
    pub siphon_per_stage: BTreeMap<Stage, SiphonAmount>,
    pub substitute_bits: Option<BitString>,
}

/// The three legs Eve can sit on.
pub const HOPS: [Stage; 3] = [Stage::S1, Stage::S2, Stage::S3];

fn hop_index(stage: Stage) -> Option<usize> {
    HOPS.iter().position(|&s| s == stage)
}

impl EveStrategy {
    pub fn none() -> Self {
        Self {
            mode: EveMode::None,
            siphon_per_stage: BTreeMap::new(),
            substitute_bits: None,
        }
    }

    /// The same siphon on every hop.
    pub fn siphon_all(amount: SiphonAmount) -> Self {
        Self::siphon(HOPS.iter().map(|&s| (s, amount)))
    }

    pub fn siphon(per_stage: impl IntoIterator<Item = (Stage, SiphonAmount)>) -> Self {
        Self {
            mode: EveMode::Siphon,
            siphon_per_stage: per_stage.into_iter().collect(),
            substitute_bits: None,
        }
    }

    pub fn impersonate(bits: BitString) -> Self {
        Self {
            mode: EveMode::Impersonate,
            siphon_per_stage: BTreeMap::new(),
            substitute_bits: Some(bits),
        }
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        for (&stage, &amount) in &self.siphon_per_stage {
            if hop_index(stage).is_none() {
                return Err(AdversaryError::NotAHop(stage));
            }
            if let SiphonAmount::Fraction(f) = amount {
                if !(0.0..=1.0).contains(&f) {
                    return Err(ChannelError::Fraction(f).into());
                }
            }
        }
        if self.mode == EveMode::Impersonate
            && self.substitute_bits.as_ref().is_none_or(|b| b.is_empty())
        {
            return Err(AdversaryError::WrongMode(self.mode));
        }
        Ok(())
    }
}

/// Beam-splits every pulse of the train on the `stage` leg. Returns the
/// forwarded train and the captured pulses, in bit order.
pub fn eve_intercept<R: Rng + ?Sized>(
    train: Vec<Pulse>,
    stage: Stage,
    strategy: &EveStrategy,
    rng: &mut R,
) -> Result<(Vec<Pulse>, Vec<Pulse>), AdversaryError> {
    if strategy.mode != EveMode::Siphon {
        return Err(AdversaryError::WrongMode(strategy.mode));
    }
    if hop_index(stage).is_none() {
        return Err(AdversaryError::NotAHop(stage));
    }
    let Some(&amount) = strategy.siphon_per_stage.get(&stage) else {
        let captured = train
            .iter()
            .map(|p| Pulse {
                photon_count: 0,
                ..*p
            })
            .collect();
        return Ok((train, captured));
    };
    let mut forwarded = Vec::with_capacity(train.len());
    let mut captured = Vec::with_capacity(train.len());
    for p in &train {
        let (t, f) = match amount {
            SiphonAmount::Count(n) => siphon(p, n),
            SiphonAmount::Fraction(f) => siphon_fraction(p, f, rng)?,
        };
        captured.push(t);
        forwarded.push(f);
    }
    Ok((forwarded, captured))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageEstimate {
    pub angle: f64,
    pub photons: u64,
    /// Delta-method variance of `angle`.
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitEstimate {
    /// Recovered message angle in `[0, π)`.
    pub angle: f64,
    pub bit: bool,
    /// Approximate posterior probability that the bit is 1 (equal priors).
    pub posterior_one: f64,
}

/// What Eve has learned in one session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EveKnowledge {
    per_bit: Vec<[Option<StageEstimate>; 3]>,
    captured: BTreeMap<Stage, u64>,
}

impl EveKnowledge {
    pub fn new(bits: usize) -> Self {
        Self {
            per_bit: vec![[None; 3]; bits],
            captured: BTreeMap::new(),
        }
    }

    pub fn bits(&self) -> usize {
        self.per_bit.len()
    }

    pub fn estimate(&self, bit: usize, stage: Stage) -> Option<StageEstimate> {
        hop_index(stage).and_then(|i| self.per_bit.get(bit)?[i])
    }

    /// Total photons captured on each leg.
    pub fn captured(&self) -> &BTreeMap<Stage, u64> {
        &self.captured
    }

    /// Sets a stage estimate directly (noise-free analysis).
    pub fn set_estimate(&mut self, bit: usize, stage: Stage, est: StageEstimate) {
        let i = hop_index(stage).expect("estimates exist only for hops");
        if bit >= self.per_bit.len() {
            self.per_bit.resize(bit + 1, [None; 3]);
        }
        self.per_bit[bit][i] = Some(est);
    }

    /// Measures photons captured on `stage`, half in each basis. A stage
    /// estimate is stored only when both bases received at least one photon.
    pub fn absorb<R: Rng + ?Sized>(&mut self, stage: Stage, captured: &[Pulse], rng: &mut R) {
        let Some(i) = hop_index(stage) else { return };
        if captured.len() > self.per_bit.len() {
            self.per_bit.resize(captured.len(), [None; 3]);
        }
        for (bit, p) in captured.iter().enumerate() {
            *self.captured.entry(stage).or_default() += p.photon_count;
            let m_hv = p.photon_count / 2;
            let m_d = p.photon_count - m_hv;
            if m_hv == 0 || m_d == 0 {
                continue;
            }
            let hv = measure(p.polarization, m_hv, Basis::Hv, rng);
            let dg = measure(p.polarization, m_d, Basis::Diagonal, rng);
            if let Ok(angle) = estimate_angle(&hv, &dg) {
                self.per_bit[bit][i] = Some(StageEstimate {
                    angle,
                    photons: p.photon_count,
                    variance: estimate_variance(angle, m_hv, m_d),
                });
            }
        }
    }

    /// Correlation result for one bit; fails unless all three legs were read.
    pub fn correlate_bit(&self, bit: usize) -> Result<BitEstimate, AdversaryError> {
        match self.per_bit.get(bit) {
            Some(stages) => correlate_bit(stages, bit),
            None => Err(AdversaryError::InsufficientCapture {
                bit,
                stage: Stage::S1,
            }),
        }
    }

    /// Eve's best guess per bit: the correlation result where all three legs
    /// were captured, otherwise a coin flip.
    pub fn guess_bits<R: Rng + ?Sized>(&self, rng: &mut R) -> BitString {
        (0..self.per_bit.len())
            .map(|b| match correlate_bit(&self.per_bit[b], b) {
                Ok(est) => est.bit,
                Err(_) => rng.random(),
            })
            .collect::<Vec<_>>()
            .into()
    }
}

/// `Var(θ̂) ≈ (sin⁴2θ/m_hv + cos⁴2θ/m_d) / 4`.
pub fn estimate_variance(angle: f64, m_hv: u64, m_d: u64) -> f64 {
    let (s, c) = (2.0 * angle).sin_cos();
    (s.powi(4) / m_hv as f64 + c.powi(4) / m_d as f64) / 4.0
}

/// `a₁ + a₃ − a₂ (mod π)`.
pub fn correlate_angles(a1: f64, a2: f64, a3: f64) -> f64 {
    reduce_angle(a1 + a3 - a2, PI)
}

fn correlate_bit(
    stages: &[Option<StageEstimate>; 3],
    bit: usize,
) -> Result<BitEstimate, AdversaryError> {
    let get = |i: usize| {
        stages[i].ok_or(AdversaryError::InsufficientCapture {
            bit,
            stage: HOPS[i],
        })
    };
    let (e1, e2, e3) = (get(0)?, get(1)?, get(2)?);
    let angle = correlate_angles(e1.angle, e2.angle, e3.angle);
    let var = e1.variance + e2.variance + e3.variance;
    let d0 = polarization_distance(angle, 0.0);
    let d1 = polarization_distance(angle, FRAC_PI_2);
    let posterior_one = if var > 0.0 {
        1.0 / (1.0 + ((d1 * d1 - d0 * d0) / (2.0 * var)).exp())
    } else if d1 < d0 {
        1.0
    } else {
        0.0
    };
    Ok(BitEstimate {
        angle,
        bit: angle_to_bit(angle),
        posterior_one,
    })
}

/// Combines the three leg estimates of every bit into a message-angle estimate.
pub fn eve_correlate(k: &EveKnowledge) -> Result<Vec<BitEstimate>, AdversaryError> {
    k.per_bit
        .iter()
        .enumerate()
        .map(|(bit, s)| correlate_bit(s, bit))
        .collect()
}

/// Eve posing as Alice: a fresh full-strength stage-1 train carrying her own
/// bits under her own rotation.
pub fn eve_impersonate<R: Rng + ?Sized>(
    strategy: &EveStrategy,
    eve: &PartyConfig,
    src: &SourceModel,
    rng: &mut R,
) -> Result<Vec<Pulse>, AdversaryError> {
    let bits = match (&strategy.mode, &strategy.substitute_bits) {
        (EveMode::Impersonate, Some(bits)) => bits,
        (mode, _) => return Err(AdversaryError::WrongMode(*mode)),
    };
    Ok(bits
        .bits()
        .iter()
        .map(|&b| {
            emit_pulse(
                src,
                PolarizationState::from_bit(b).rotate(eve.secret_rotation),
                rng,
            )
        })
        .collect())
}

/// Eve's version of Alice's third stage: keep the ledger honest by tapping the
/// same budget, then strip her rotation. No monitoring decision is made.
pub fn eve_relay_stage3(
    train: Vec<Pulse>,
    eve: &PartyConfig,
) -> (Vec<Pulse>, Vec<IntensityReading>) {
    let undo = eve.secret_rotation.inverse();
    train
        .into_iter()
        .map(|p| {
            let (reading, mut fwd) = tap_intensity(
                &Pulse {
                    stage: Stage::S3,
                    ..p
                },
                eve.tap_budget,
            );
            fwd.polarization = fwd.polarization.rotate(undo);
            (fwd, reading)
        })
        .unzip()
}
