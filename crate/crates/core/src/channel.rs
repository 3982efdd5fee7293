//! Photon source, pulse propagation, beam-splitter siphoning and intensity taps.
//!
//! Every split conserves photons exactly (`taken + forwarded == input`) and no
//! channel operation touches the polarization.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::PolarizationState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("mean photon number must be positive and finite, got {0}")]
    MeanPhotons(f64),
    #[error("attenuation must lie in (0, 1], got {0}")]
    Attenuation(f64),
    #[error("siphon fraction must lie in [0, 1], got {0}")]
    Fraction(f64),
}

/// Which leg of the exchange a pulse is on, or which check a reading belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
    #[serde(rename = "FINAL")]
    Final,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S1, Stage::S2, Stage::S3, Stage::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::S1 => "S1",
            Stage::S2 => "S2",
            Stage::S3 => "S3",
            Stage::Final => "FINAL",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S1" => Ok(Stage::S1),
            "S2" => Ok(Stage::S2),
            "S3" => Ok(Stage::S3),
            "FINAL" => Ok(Stage::Final),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Emission {
    /// Photon number per pulse is Poisson distributed.
    #[default]
    Poisson,
    /// Every pulse carries exactly `round(mean_photons)` photons (test mode).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    mean_photons: f64,
    attenuation: f64,
    emission: Emission,
}

impl SourceModel {
    pub fn new(mean_photons: f64, attenuation: f64) -> Result<Self, ChannelError> {
        if !(mean_photons.is_finite() && mean_photons > 0.0) {
            return Err(ChannelError::MeanPhotons(mean_photons));
        }
        if !(attenuation > 0.0 && attenuation <= 1.0) {
            return Err(ChannelError::Attenuation(attenuation));
        }
        Ok(Self {
            mean_photons,
            attenuation,
            emission: Emission::Poisson,
        })
    }

    /// Lossless Poisson source.
    pub fn lossless(mean_photons: f64) -> Result<Self, ChannelError> {
        Self::new(mean_photons, 1.0)
    }

    pub fn with_emission(mut self, emission: Emission) -> Self {
        self.emission = emission;
        self
    }

    pub fn mean_photons(&self) -> f64 {
        self.mean_photons
    }

    pub fn attenuation(&self) -> f64 {
        self.attenuation
    }

    pub fn emission(&self) -> Emission {
        self.emission
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub photon_count: u64,
    pub polarization: PolarizationState,
    pub stage: Stage,
}

impl Pulse {
    fn with_count(&self, photon_count: u64) -> Self {
        Self {
            photon_count,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityReading {
    pub stage: Stage,
    pub photons_consumed: u64,
    /// Photons left in the pulse after the tap.
    pub forwarded: u64,
    /// Expected arrival count for this check; zero until a rule fills it in.
    pub expected: f64,
}

impl IntensityReading {
    /// Arrival count as seen by a photon-number-resolving tap.
    pub fn arrivals(&self) -> u64 {
        self.photons_consumed + self.forwarded
    }
}

fn thin<R: Rng + ?Sized>(n: u64, keep: f64, rng: &mut R) -> u64 {
    if n == 0 || keep <= 0.0 {
        0
    } else if keep >= 1.0 {
        n
    } else {
        Binomial::new(n, keep)
            .expect("keep is a probability")
            .sample(rng)
    }
}

/// Emits a fresh stage-1 pulse.
pub fn emit_pulse<R: Rng + ?Sized>(
    src: &SourceModel,
    polarization: PolarizationState,
    rng: &mut R,
) -> Pulse {
    let photon_count = match src.emission {
        Emission::Poisson => Poisson::new(src.mean_photons)
            .expect("mean validated at construction")
            .sample(rng) as u64,
        Emission::Fixed => src.mean_photons.round() as u64,
    };
    Pulse {
        photon_count,
        polarization,
        stage: Stage::S1,
    }
}

/// Removes exactly `min(n, N)` photons. Returns `(taken, forwarded)`.
pub fn siphon(p: &Pulse, n: u64) -> (Pulse, Pulse) {
    let taken = n.min(p.photon_count);
    (p.with_count(taken), p.with_count(p.photon_count - taken))
}

/// Beam-splitter tap: each photon is diverted independently with probability `f`.
pub fn siphon_fraction<R: Rng + ?Sized>(
    p: &Pulse,
    f: f64,
    rng: &mut R,
) -> Result<(Pulse, Pulse), ChannelError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(ChannelError::Fraction(f));
    }
    let taken = thin(p.photon_count, f, rng);
    Ok((p.with_count(taken), p.with_count(p.photon_count - taken)))
}

/// Benign channel loss for one hop.
pub fn attenuate<R: Rng + ?Sized>(p: &Pulse, src: &SourceModel, rng: &mut R) -> Pulse {
    p.with_count(thin(p.photon_count, src.attenuation, rng))
}

/// Destructive intensity reading that consumes up to `tap_photons`.
pub fn tap_intensity(p: &Pulse, tap_photons: u64) -> (IntensityReading, Pulse) {
    let consumed = tap_photons.min(p.photon_count);
    let forwarded = p.photon_count - consumed;
    let reading = IntensityReading {
        stage: p.stage,
        photons_consumed: consumed,
        forwarded,
        expected: 0.0,
    };
    (reading, p.with_count(forwarded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use proptest::prelude::*;

    fn pulse(n: u64) -> Pulse {
        Pulse {
            photon_count: n,
            polarization: PolarizationState::new(0.7),
            stage: Stage::S1,
        }
    }

    #[test]
    fn source_bounds() {
        assert!(SourceModel::new(0.0, 1.0).is_err());
        assert!(SourceModel::new(-3.0, 1.0).is_err());
        assert!(SourceModel::new(f64::NAN, 1.0).is_err());
        assert_eq!(
            SourceModel::new(10.0, 0.0),
            Err(ChannelError::Attenuation(0.0))
        );
        assert!(SourceModel::new(10.0, 1.01).is_err());
        assert!(SourceModel::new(10.0, 1.0).is_ok());
    }

    #[test]
    fn fixed_emission_is_degenerate() {
        let src = SourceModel::lossless(1000.0)
            .unwrap()
            .with_emission(Emission::Fixed);
        let p = emit_pulse(&src, PolarizationState::HORIZONTAL, &mut from_seed(0));
        assert_eq!(p.photon_count, 1000);
        assert_eq!(p.stage, Stage::S1);
    }

    #[test]
    fn siphon_examples() {
        let (t, f) = siphon(&pulse(1000), 0);
        assert_eq!((t.photon_count, f.photon_count), (0, 1000));
        let (t, f) = siphon(&pulse(1000), 250);
        assert_eq!((t.photon_count, f.photon_count), (250, 750));
        let (t, f) = siphon(&pulse(100), 1000);
        assert_eq!((t.photon_count, f.photon_count), (100, 0));
    }

    #[test]
    fn fraction_extremes() {
        let mut rng = from_seed(4);
        for _ in 0..100 {
            let (t, _) = siphon_fraction(&pulse(977), 0.0, &mut rng).unwrap();
            assert_eq!(t.photon_count, 0);
            let (_, f) = siphon_fraction(&pulse(977), 1.0, &mut rng).unwrap();
            assert_eq!(f.photon_count, 0);
        }
        assert!(siphon_fraction(&pulse(1), 1.5, &mut rng).is_err());
        assert!(siphon_fraction(&pulse(1), -0.1, &mut rng).is_err());
    }

    #[test]
    fn tap_examples() {
        let (r, f) = tap_intensity(&pulse(1000), 250);
        assert_eq!((r.photons_consumed, f.photon_count), (250, 750));
        assert_eq!(r.arrivals(), 1000);
        let (r, f) = tap_intensity(&pulse(0), 250);
        assert_eq!((r.photons_consumed, f.photon_count), (0, 0));
        // three taps of N/4 leave N/4
        let p = (0..3).fold(pulse(1000), |p, _| tap_intensity(&p, 250).1);
        assert_eq!(p.photon_count, 250);
    }

    #[test]
    fn lossless_attenuation_is_identity() {
        let src = SourceModel::lossless(5.0).unwrap();
        let p = pulse(1234);
        assert_eq!(attenuate(&p, &src, &mut from_seed(1)), p);
    }

    #[test]
    fn weak_source_is_mostly_empty() {
        // P(0) = e^{-0.1} = 0.904837; 1e5 draws give SE ≈ 9.3e-4
        let src = SourceModel::lossless(0.1).unwrap();
        let mut rng = from_seed(99);
        let zeros = (0..100_000)
            .filter(|_| emit_pulse(&src, PolarizationState::HORIZONTAL, &mut rng).photon_count == 0)
            .count();
        let frac = zeros as f64 / 1e5;
        assert!((frac - 0.904_837).abs() < 0.01, "{frac}");
    }

    proptest! {
        #[test]
        fn splits_conserve_photons(n in 0u64..100_000, k in 0u64..200_000, f in 0.0..=1.0f64, seed: u64) {
            let mut rng = from_seed(seed);
            let p = pulse(n);
            let (t, fw) = siphon(&p, k);
            prop_assert_eq!(t.photon_count + fw.photon_count, n);
            let (t, fw) = siphon_fraction(&p, f, &mut rng).unwrap();
            prop_assert_eq!(t.photon_count + fw.photon_count, n);
            prop_assert_eq!(fw.polarization, p.polarization);
            prop_assert_eq!(t.polarization, p.polarization);
            let (r, fw) = tap_intensity(&p, k);
            prop_assert_eq!(r.photons_consumed + fw.photon_count, n);
            prop_assert!(r.photons_consumed <= n);
            let src = SourceModel::new(10.0, f.max(1e-9)).unwrap();
            let a = attenuate(&p, &src, &mut rng);
            prop_assert!(a.photon_count <= n);
            prop_assert_eq!(a.polarization, p.polarization);
        }

        #[test]
        fn emission_is_seed_deterministic(seed: u64, mu in 0.5..5000.0f64) {
            let src = SourceModel::lossless(mu).unwrap();
            let a: Vec<u64> = {
                let mut rng = from_seed(seed);
                (0..8).map(|_| emit_pulse(&src, PolarizationState::VERTICAL, &mut rng).photon_count).collect()
            };
            let b: Vec<u64> = {
                let mut rng = from_seed(seed);
                (0..8).map(|_| emit_pulse(&src, PolarizationState::VERTICAL, &mut rng).photon_count).collect()
            };
            prop_assert_eq!(a, b);
        }
    }
}
