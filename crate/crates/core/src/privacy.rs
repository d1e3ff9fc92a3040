//! Scalar clipping, scalar Gaussian noise and privacy-budget arithmetic.
//!
//! The mechanism privatizes one scalar per direction: the batch sum of
//! clipped two-point differences. Its sensitivity under record replacement
//! is taken to be `C` (scaled by [`PrivacySpec::sensitivity_multiplier`] for
//! the stricter `2C` reading), so the injected noise is `N(0, (σ·C·mult)²)`.
//!
//! The calibration formulas carry unspecified constants `c₁, c₂`. They are
//! configuration values (default 1) and every calibration reports whether the
//! requested ε lies inside the regime the formula is stated for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::DirectionKey;
use crate::rng::{Domain, StreamKey};

/// `g / max(1, |g|/C)`: identity for `|g| <= C`, otherwise `±C`.
///
/// The saturated branch returns `C` with the sign of `g` directly instead of
/// dividing, so `|clip_scalar(g, C)| <= C` holds exactly in floating point
/// and the function is idempotent.
pub fn clip_scalar(g: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0, "clip threshold must be positive");
    if g.abs() <= c || g.is_nan() {
        g
    } else {
        c.copysign(g)
    }
}

/// `sum + σ·C·z`, `z` the standard normal draw keyed by `key`.
/// With `σ = 0` the input is returned unchanged, bit for bit.
pub fn add_noise(sum: f64, sigma: f64, c: f64, key: DirectionKey) -> f64 {
    if sigma == 0.0 {
        return sum;
    }
    let z = StreamKey::new(key.seed, Domain::Noise, key.stage, key.iteration, key.index)
        .stream()
        .normal(0);
    sum + sigma * c * z
}

/// Amplification by subsampling at rate `q`:
/// `(ln(1 + q(e^ε − 1)), qδ)`.
pub fn amplify_by_subsampling(eps: f64, delta: f64, q: f64) -> Result<(f64, f64)> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sampling rate must be in (0, 1], got {q}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {eps}")));
    }
    Ok(((q * eps.exp_m1()).ln_1p(), q * delta))
}

/// Strong composition of `T` adaptive (ε, δ) mechanisms:
/// `(√(2T ln(1/δ′))·ε + Tε(e^ε − 1), Tδ + δ′)`.
pub fn strong_compose(eps: f64, delta: f64, steps: u64, delta_prime: f64) -> Result<(f64, f64)> {
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::invalid(format!("delta' must be in (0, 1), got {delta_prime}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {eps}")));
    }
    let t = steps as f64;
    let eps_hat = (2.0 * t * (1.0 / delta_prime).ln()).sqrt() * eps + t * eps * eps.exp_m1();
    Ok((eps_hat, t * delta + delta_prime))
}

/// Where a requested ε sits relative to the regime a calibration formula is
/// stated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `ε` is below the formula's stated upper limit.
    Within,
    /// `ε` is at or above the limit; the σ is still reported but the
    /// guarantee is not claimed.
    Outside,
    /// `ε = ∞`: no noise, no guarantee.
    NonPrivate,
}

impl Regime {
    fn classify(eps: f64, limit: f64) -> Regime {
        if eps.is_infinite() {
            Regime::NonPrivate
        } else if eps < limit {
            Regime::Within
        } else {
            Regime::Outside
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Regime::Within => "within stated regime",
            Regime::Outside => "outside stated regime",
            Regime::NonPrivate => "non-private",
        }
    }
}

/// A noise multiplier together with the regime check of its formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    pub regime: Regime,
    /// The formula's upper limit on ε (`c₁q²T` or `c₁m²T/n²`).
    pub eps_limit: f64,
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Moments-accountant calibration `σ = c₂ q √(T ln(1/δ)) / ε`, stated for
/// `ε < c₁q²T`.
pub fn calibrate_sigma_ma(eps: f64, delta: f64, steps: u64, q: f64, c1: f64, c2: f64) -> Result<Calibration> {
    check_eps_delta(eps, delta)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sampling rate must be in (0, 1], got {q}")));
    }
    if steps == 0 {
        return Err(Error::invalid("step count must be positive"));
    }
    let t = steps as f64;
    let eps_limit = c1 * q * q * t;
    let sigma = if eps.is_infinite() {
        0.0
    } else {
        c2 * q * (t * (1.0 / delta).ln()).sqrt() / eps
    };
    Ok(Calibration {
        sigma,
        regime: Regime::classify(eps, eps_limit),
        eps_limit,
    })
}

/// Per-direction calibration for the private ZO optimizer:
/// `σ = c₂ P m √(T ln(P/δ)) / (ε n)`, stated for `ε < c₁m²T/n²`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_sigma_theorem1(
    eps: f64,
    delta: f64,
    steps: u64,
    directions: u64,
    batch: u64,
    n: u64,
    c1: f64,
    c2: f64,
) -> Result<Calibration> {
    check_eps_delta(eps, delta)?;
    if steps == 0 || directions == 0 || batch == 0 || n == 0 {
        return Err(Error::invalid("T, P, m and n must all be positive"));
    }
    if batch > n {
        return Err(Error::invalid(format!("batch size {batch} exceeds dataset size {n}")));
    }
    let (t, p, m, n) = (steps as f64, directions as f64, batch as f64, n as f64);
    let eps_limit = c1 * m * m * t / (n * n);
    let sigma = if eps.is_infinite() {
        0.0
    } else {
        c2 * p * m * (t * (p / delta).ln()).sqrt() / (eps * n)
    };
    Ok(Calibration {
        sigma,
        regime: Regime::classify(eps, eps_limit),
        eps_limit,
    })
}

/// Which calibration formula sets σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRoute {
    #[default]
    Theorem1,
    MomentsAccountant,
}

/// Sizes that enter the privacy calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccountingShape {
    pub steps: u64,
    pub directions: u64,
    pub batch: u64,
    pub n: u64,
}

impl AccountingShape {
    pub fn sampling_rate(&self) -> f64 {
        self.batch as f64 / self.n as f64
    }
}

/// Privacy target and mechanism constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    /// May be `f64::INFINITY` for a non-private run.
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    pub c1: f64,
    pub c2: f64,
    pub sensitivity_multiplier: f64,
    pub route: CalibrationRoute,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, clip: f64) -> Result<Self> {
        let spec = PrivacySpec {
            epsilon,
            delta,
            clip,
            c1: 1.0,
            c2: 1.0,
            sensitivity_multiplier: 1.0,
            route: CalibrationRoute::Theorem1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// No noise, with the given clip threshold.
    pub fn non_private(clip: f64) -> Self {
        PrivacySpec {
            epsilon: f64::INFINITY,
            delta: 0.5,
            clip,
            c1: 1.0,
            c2: 1.0,
            sensitivity_multiplier: 1.0,
            route: CalibrationRoute::Theorem1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eps_delta(self.epsilon, self.delta)?;
        if !(self.clip > 0.0) {
            return Err(Error::invalid(format!(
                "clip threshold must be positive, got {}",
                self.clip
            )));
        }
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("sensitivity_multiplier", self.sensitivity_multiplier),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// A δ at or above `1/n` is legal but weak.
    pub fn delta_warning(&self, n: u64) -> Option<String> {
        if self.epsilon.is_finite() && self.delta >= 1.0 / n as f64 {
            Some(format!(
                "delta = {} is not below 1/n = {}; the guarantee is weak",
                self.delta,
                1.0 / n as f64
            ))
        } else {
            None
        }
    }

    pub fn calibrate(&self, shape: &AccountingShape) -> Result<Calibration> {
        match self.route {
            CalibrationRoute::Theorem1 => calibrate_sigma_theorem1(
                self.epsilon,
                self.delta,
                shape.steps,
                shape.directions,
                shape.batch,
                shape.n,
                self.c1,
                self.c2,
            ),
            CalibrationRoute::MomentsAccountant => calibrate_sigma_ma(
                self.epsilon,
                self.delta,
                shape.steps,
                shape.sampling_rate(),
                self.c1,
                self.c2,
            ),
        }
    }

    /// Standard deviation scale applied to `z` in [`add_noise`]: `C · mult`.
    pub fn noise_scale(&self) -> f64 {
        self.clip * self.sensitivity_multiplier
    }
}

/// Running account of an optimizer's privacy spend.
///
/// The spent-ε estimate inverts the active calibration formula at the
/// current step count; it is an estimate, not a certified bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetLedger {
    pub steps_taken: u64,
    pub sigma: f64,
    pub q: f64,
    pub directions: u64,
    pub batch: u64,
    pub n: u64,
    pub delta: f64,
    pub c2: f64,
    pub route: CalibrationRoute,
    pub spent_epsilon_estimate: f64,
}

impl BudgetLedger {
    pub fn new(spec: &PrivacySpec, shape: &AccountingShape, sigma: f64) -> Self {
        BudgetLedger {
            steps_taken: 0,
            sigma,
            q: shape.sampling_rate(),
            directions: shape.directions,
            batch: shape.batch,
            n: shape.n,
            delta: spec.delta,
            c2: spec.c2,
            route: spec.route,
            spent_epsilon_estimate: 0.0,
        }
    }

    pub fn epsilon_after(&self, steps: u64) -> f64 {
        if steps == 0 {
            return 0.0;
        }
        if self.sigma == 0.0 {
            return f64::INFINITY;
        }
        let t = steps as f64;
        match self.route {
            CalibrationRoute::Theorem1 => {
                let p = self.directions as f64;
                self.c2 * p * self.batch as f64 * (t * (p / self.delta).ln()).sqrt() / (self.sigma * self.n as f64)
            }
            CalibrationRoute::MomentsAccountant => self.c2 * self.q * (t * (1.0 / self.delta).ln()).sqrt() / self.sigma,
        }
    }

    pub fn record_step(&mut self) {
        self.steps_taken += 1;
        self.spent_epsilon_estimate = self.epsilon_after(self.steps_taken);
    }
}
