//! Two-point (SPSA) gradient estimation and the per-stage ZO scale.

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::param::{Direction, DirectionSource, ParameterVector};

/// One training record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Sample { features, label }
    }
}

/// Per-sample loss `f(θ, x)`. Must be deterministic in its arguments.
pub trait LossEvaluator: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64], sample: &Sample) -> f64;

    /// A known Lipschitz constant of `θ ↦ f(θ, x)`, if any.
    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }
}

impl<T: LossEvaluator + ?Sized> LossEvaluator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        (**self).loss(theta, sample)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

impl<T: LossEvaluator + ?Sized> LossEvaluator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        (**self).loss(theta, sample)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

/// Whether the P×m loss evaluations of a step may run on the rayon pool.
/// Aggregation order is fixed either way, so results do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    #[default]
    Serial,
    Threads,
}

/// The two loss values of a symmetric probe and their scaled difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub plus: f64,
    pub minus: f64,
    pub diff: f64,
}

pub fn probe<L: LossEvaluator + ?Sized>(
    loss: &L,
    theta: &[f64],
    v: &Direction,
    beta: f64,
    sample: &Sample,
) -> Result<Probe> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!(
            "ZO scale must be positive and finite, got {beta}"
        )));
    }
    check_dims(theta.len(), v.dim())?;
    let mut point: Vec<f64> = theta.iter().zip(&v.values).map(|(t, vi)| t + beta * vi).collect();
    let plus = loss.loss(&point, sample);
    if !plus.is_finite() {
        return Err(Error::Evaluation {
            point: "theta + beta*v",
            value: plus,
        });
    }
    for ((p, t), vi) in point.iter_mut().zip(theta).zip(&v.values) {
        *p = t - beta * vi;
    }
    let minus = loss.loss(&point, sample);
    if !minus.is_finite() {
        return Err(Error::Evaluation {
            point: "theta - beta*v",
            value: minus,
        });
    }
    Ok(Probe {
        plus,
        minus,
        diff: (plus - minus) / (2.0 * beta),
    })
}

/// `(f(θ+βv, x) − f(θ−βv, x)) / 2β`, using exactly two loss evaluations.
pub fn finite_diff<L: LossEvaluator + ?Sized>(
    loss: &L,
    theta: &[f64],
    v: &Direction,
    beta: f64,
    sample: &Sample,
) -> Result<f64> {
    probe(loss, theta, v, beta, sample).map(|p| p.diff)
}

/// Non-private estimate of `∇f_β(θ)` on a minibatch:
/// `(1/P) Σ_p [(1/m) Σ_i finite_diff(θ, v_p, β, x_i)] v_p`.
///
/// Directions come from `source` at `(stage, iteration, p)` and are shared
/// across the batch.
#[allow(clippy::too_many_arguments)]
pub fn zo_gradient<L, D, S>(
    loss: &L,
    theta: &ParameterVector,
    batch: &[S],
    directions: usize,
    beta: f64,
    source: &D,
    stage: u64,
    iteration: u64,
    parallelism: Parallelism,
) -> Result<ParameterVector>
where
    L: LossEvaluator + ?Sized,
    D: DirectionSource + ?Sized,
    S: Borrow<Sample> + Sync,
{
    if batch.is_empty() {
        return Err(Error::invalid("minibatch must be non-empty"));
    }
    if directions == 0 {
        return Err(Error::invalid("number of directions must be positive"));
    }
    check_dims(theta.dim(), source.dim())?;
    let theta_s = theta.as_slice();
    let m = batch.len() as f64;

    let per_direction = |p: usize| -> Result<(Direction, f64)> {
        let v = source.direction(stage, iteration, p as u64);
        let mut sum = 0.0;
        for x in batch {
            sum += finite_diff(loss, theta_s, &v, beta, x.borrow())?;
        }
        Ok((v, sum / m))
    };
    let scalars: Vec<(Direction, f64)> = match parallelism {
        Parallelism::Serial => (0..directions).map(per_direction).collect::<Result<_>>()?,
        Parallelism::Threads => (0..directions)
            .into_par_iter()
            .map(per_direction)
            .collect::<Result<_>>()?,
    };

    let mut acc = vec![0.0; theta.dim()];
    for (v, s) in &scalars {
        for (a, vi) in acc.iter_mut().zip(&v.values) {
            *a += s * vi;
        }
    }
    let p = directions as f64;
    ParameterVector::new(acc.into_iter().map(|a| a / p).collect())
}

/// Geometric ZO-scale schedule `β_s = β₀ kˢ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoScale {
    beta0: f64,
    growth_k: f64,
    beta_end: Option<f64>,
}

impl ZoScale {
    pub fn new(beta0: f64, growth_k: f64) -> Result<Self> {
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(Error::invalid(format!("beta0 must be positive, got {beta0}")));
        }
        if !(growth_k >= 1.0 && growth_k.is_finite()) {
            return Err(Error::invalid(format!("growth k must be >= 1, got {growth_k}")));
        }
        Ok(ZoScale {
            beta0,
            growth_k,
            beta_end: None,
        })
    }

    /// Interpolate geometrically so that stage `stages` uses `beta_end`:
    /// `k = (beta_end / beta0)^(1/stages)`.
    pub fn interpolated(beta0: f64, beta_end: f64, stages: u32) -> Result<Self> {
        if stages == 0 {
            return Err(Error::invalid("stage count must be positive"));
        }
        if !(beta_end >= beta0 && beta_end.is_finite()) {
            return Err(Error::invalid(format!(
                "beta_end ({beta_end}) must be finite and at least beta0 ({beta0})"
            )));
        }
        let k = (beta_end / beta0).powf(1.0 / f64::from(stages));
        let mut s = ZoScale::new(beta0, k)?;
        s.beta_end = Some(beta_end);
        Ok(s)
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn growth_k(&self) -> f64 {
        self.growth_k
    }

    pub fn beta_end(&self) -> Option<f64> {
        self.beta_end
    }

    pub fn beta_at_stage(&self, s: u32) -> f64 {
        beta_at_stage(self, s)
    }
}

/// `β_s`, built by repeated multiplication so that `β_s = k·β_{s−1}` holds
/// exactly in floating point.
pub fn beta_at_stage(scale: &ZoScale, s: u32) -> f64 {
    (0..s).fold(scale.beta0, |b, _| scale.growth_k * b)
}
