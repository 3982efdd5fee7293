//! Linear polarization states, planar rotations and photon-counting measurement.
//!
//! A linear polarization is π-periodic while a rotation composes 2π-periodically;
//! [`PolarizationState`] keeps its angle in `[0, π)` and [`Rotation`] keeps
//! `theta` in `[0, 2π)`. Planar rotations about one fixed axis commute, which is
//! the only algebraic property the three-stage exchange relies on.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for algebraic angle identities.
pub const ANGLE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error(
        "ambiguous estimate: diagonal basis received no photons and HV ratio {ratio} is interior"
    )]
    AmbiguousEstimate { ratio: f64 },
    #[error("{0:?} measurement consumed no photons")]
    EmptyMeasurement(Basis),
    #[error("expected a {expected:?} outcome, got {got:?}")]
    WrongBasis { expected: Basis, got: Basis },
}

/// Reduces `x` into `[0, period)`, folding the rounding edge case onto 0.
pub fn reduce_angle(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Shortest distance between two linear polarization angles (mod π).
pub fn polarization_distance(a: f64, b: f64) -> f64 {
    let d = reduce_angle(a - b, PI);
    d.min(PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState {
    angle: f64,
}

impl PolarizationState {
    pub const HORIZONTAL: Self = Self { angle: 0.0 };
    pub const VERTICAL: Self = Self { angle: FRAC_PI_2 };

    pub fn new(angle: f64) -> Self {
        Self {
            angle: reduce_angle(angle, PI),
        }
    }

    /// Bit 0 is horizontal, bit 1 is vertical.
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Self::VERTICAL
        } else {
            Self::HORIZONTAL
        }
    }

    pub fn angle(self) -> f64 {
        self.angle
    }

    pub fn rotate(self, r: Rotation) -> Self {
        Self::new(self.angle + r.theta)
    }

    /// Nearest bit under the H/V encoding.
    pub fn nearest_bit(self) -> bool {
        angle_to_bit(self.angle)
    }

    pub fn distance(self, other: Self) -> f64 {
        polarization_distance(self.angle, other.angle)
    }
}

/// Bit decision for an angle: 1 when closer to π/2 than to 0 (mod π).
pub fn angle_to_bit(angle: f64) -> bool {
    polarization_distance(angle, FRAC_PI_2) < polarization_distance(angle, 0.0)
}

/// A planar polarization rotation. Deliberately not serializable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    theta: f64,
}

impl Rotation {
    pub const IDENTITY: Self = Self { theta: 0.0 };

    pub fn new(theta: f64) -> Self {
        Self {
            theta: reduce_angle(theta, TAU),
        }
    }

    /// Uniformly random rotation angle in `[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.random::<f64>() * TAU)
    }

    pub fn theta(self) -> f64 {
        self.theta
    }

    pub fn compose(self, other: Self) -> Self {
        Self::new(self.theta + other.theta)
    }

    pub fn inverse(self) -> Self {
        Self::new(TAU - self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    #[serde(rename = "HV")]
    Hv,
    #[serde(rename = "DIAGONAL")]
    Diagonal,
}

impl Basis {
    /// Probability that a photon at `angle` projects onto the "vertical" port.
    pub fn v_probability(self, angle: f64) -> f64 {
        let a = match self {
            Basis::Hv => angle,
            Basis::Diagonal => angle - FRAC_PI_4,
        };
        let s = a.sin();
        (s * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub v_count: u64,
    pub h_count: u64,
    pub basis: Basis,
}

impl MeasurementOutcome {
    pub fn empty(basis: Basis) -> Self {
        Self {
            v_count: 0,
            h_count: 0,
            basis,
        }
    }

    pub fn total(&self) -> u64 {
        self.v_count + self.h_count
    }

    pub fn v_fraction(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.v_count as f64 / n as f64)
    }
}

/// Projects `photons` identically prepared photons onto `basis`.
pub fn measure<R: Rng + ?Sized>(
    state: PolarizationState,
    photons: u64,
    basis: Basis,
    rng: &mut R,
) -> MeasurementOutcome {
    if photons == 0 {
        return MeasurementOutcome::empty(basis);
    }
    let p = basis.v_probability(state.angle);
    let v_count = if p <= 0.0 {
        0
    } else if p >= 1.0 {
        photons
    } else {
        Binomial::new(photons, p)
            .expect("p is a probability")
            .sample(rng)
    };
    MeasurementOutcome {
        v_count,
        h_count: photons - v_count,
        basis,
    }
}

// Two-basis log-likelihood and its first two derivatives in the angle.
struct Likelihood {
    v: f64,
    h: f64,
    a: f64,
    b: f64,
}

impl Likelihood {
    fn term(count: f64, trig: f64) -> f64 {
        if count == 0.0 {
            0.0
        } else {
            2.0 * count * trig.abs().ln()
        }
    }

    fn value(&self, t: f64) -> f64 {
        let p = t - FRAC_PI_4;
        Self::term(self.v, t.sin())
            + Self::term(self.h, t.cos())
            + Self::term(self.a, p.sin())
            + Self::term(self.b, p.cos())
    }

    fn derivatives(&self, t: f64) -> (f64, f64) {
        let p = t - FRAC_PI_4;
        let mut g = 0.0;
        let mut h = 0.0;
        if self.v > 0.0 {
            g += 2.0 * self.v * t.cos() / t.sin();
            h -= 2.0 * self.v / t.sin().powi(2);
        }
        if self.h > 0.0 {
            g -= 2.0 * self.h * t.tan();
            h -= 2.0 * self.h / t.cos().powi(2);
        }
        if self.a > 0.0 {
            g += 2.0 * self.a * p.cos() / p.sin();
            h -= 2.0 * self.a / p.sin().powi(2);
        }
        if self.b > 0.0 {
            g -= 2.0 * self.b * p.tan();
            h -= 2.0 * self.b / p.cos().powi(2);
        }
        (g, h)
    }
}

/// Maximum-likelihood polarization angle in `[0, π)` from one HV and one
/// diagonal measurement of identically prepared photons.
///
/// The Stokes estimate `½·atan2(1−2d, 1−2s)` seeds a safeguarded Newton ascent
/// on the joint binomial log-likelihood, which is concave between its poles.
pub fn estimate_angle(
    hv: &MeasurementOutcome,
    diag: &MeasurementOutcome,
) -> Result<f64, QuantumError> {
    if hv.basis != Basis::Hv {
        return Err(QuantumError::WrongBasis {
            expected: Basis::Hv,
            got: hv.basis,
        });
    }
    if diag.basis != Basis::Diagonal {
        return Err(QuantumError::WrongBasis {
            expected: Basis::Diagonal,
            got: diag.basis,
        });
    }
    let s = hv
        .v_fraction()
        .ok_or(QuantumError::EmptyMeasurement(Basis::Hv))?;
    let Some(d) = diag.v_fraction() else {
        return if hv.v_count == 0 {
            Ok(0.0)
        } else if hv.h_count == 0 {
            Ok(FRAC_PI_2)
        } else {
            Err(QuantumError::AmbiguousEstimate { ratio: s })
        };
    };

    let ll = Likelihood {
        v: hv.v_count as f64,
        h: hv.h_count as f64,
        a: diag.v_count as f64,
        b: diag.h_count as f64,
    };
    let mut theta = 0.5 * (1.0 - 2.0 * d).atan2(1.0 - 2.0 * s);
    let mut value = ll.value(theta);
    if !value.is_finite() {
        // seed sits on a pole of the likelihood; step off it
        let (lo, hi) = (theta - 1e-3, theta + 1e-3);
        let (vl, vh) = (ll.value(lo), ll.value(hi));
        (theta, value) = if vl >= vh { (lo, vl) } else { (hi, vh) };
    }
    if value.is_finite() {
        for _ in 0..60 {
            let (g, h) = ll.derivatives(theta);
            if !(g.is_finite() && h.is_finite()) || h >= 0.0 {
                break;
            }
            let mut step = (-g / h).clamp(-0.1, 0.1);
            let mut accepted = false;
            for _ in 0..40 {
                let cand = ll.value(theta + step);
                if cand.is_finite() && cand >= value {
                    theta += step;
                    value = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.abs() < 1e-15 {
                break;
            }
        }
    }
    Ok(reduce_angle(theta, PI))
}
