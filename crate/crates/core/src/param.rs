//! Flat parameter storage, vector arithmetic and the direction sampler.
//!
//! All reductions run in ascending index order with a single accumulator so
//! results are bit-reproducible across runs and machines.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::rng::{Domain, StreamKey};

/// Model parameters. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParameterVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParameterVector) -> Result<f64> {
        dot(self.as_slice(), other.as_slice())
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self.as_slice())
    }

    /// `self + alpha * x`.
    pub fn axpy(&self, alpha: f64, x: &ParameterVector) -> Result<ParameterVector> {
        axpy(alpha, x, self)
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &ParameterVector) -> Result<ParameterVector> {
        axpy(-1.0, other, self)
    }

    /// Mutable access for the optimizer loop, which re-validates finiteness
    /// after each update.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParameterVector::new(values)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Vec<f64> {
        p.0
    }
}

/// Σ aᵢbᵢ in ascending index order.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    Ok(acc)
}

pub fn l2_norm(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        acc += x * x;
    }
    acc.sqrt()
}

/// `y + alpha * x`, elementwise.
pub fn axpy(alpha: f64, x: &ParameterVector, y: &ParameterVector) -> Result<ParameterVector> {
    check_dims(y.dim(), x.dim())?;
    let out = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(xi, yi)| yi + alpha * xi)
        .collect();
    ParameterVector::new(out)
}

/// Identifies one perturbation direction inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectionKey {
    pub seed: u64,
    pub stage: u64,
    pub iteration: u64,
    pub index: u64,
}

impl DirectionKey {
    pub fn new(seed: u64, stage: u64, iteration: u64, index: u64) -> Self {
        DirectionKey {
            seed,
            stage,
            iteration,
            index,
        }
    }
}

/// A sampled perturbation direction `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub values: Vec<f64>,
    pub index: u64,
    pub origin_seed: u64,
}

impl Direction {
    /// A direction with explicit values, for callers that need to force `v`.
    pub fn fixed(values: Vec<f64>, index: u64) -> Self {
        Direction {
            values,
            index,
            origin_seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn negated(&self) -> Direction {
        Direction {
            values: self.values.iter().map(|v| -v).collect(),
            index: self.index,
            origin_seed: self.origin_seed,
        }
    }
}

/// The law `M · N(0, I_d)` restricted to a trainable mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionDistribution {
    mask: Vec<bool>,
    importance_diag: Vec<f64>,
    upper_bound: f64,
}

impl DirectionDistribution {
    /// Standard normal directions over every coordinate.
    pub fn isotropic(dim: usize) -> Self {
        DirectionDistribution {
            mask: vec![true; dim],
            importance_diag: vec![1.0; dim],
            upper_bound: 1.0,
        }
    }

    /// Build from explicit parts. Masked-out coordinates must carry a zero
    /// diagonal and every diagonal entry must lie in `[0, upper_bound]`.
    pub fn new(mask: Vec<bool>, importance_diag: Vec<f64>, upper_bound: f64) -> Result<Self> {
        check_dims(mask.len(), importance_diag.len())?;
        if !(upper_bound.is_finite() && upper_bound >= 0.0) {
            return Err(Error::invalid(format!(
                "importance upper bound must be finite and non-negative, got {upper_bound}"
            )));
        }
        for (i, (&m, &w)) in mask.iter().zip(&importance_diag).enumerate() {
            if !(0.0..=upper_bound).contains(&w) {
                return Err(Error::invalid(format!(
                    "importance_diag[{i}] = {w} outside [0, {upper_bound}]"
                )));
            }
            if !m && w != 0.0 {
                return Err(Error::invalid(format!(
                    "coordinate {i} is masked but has importance {w}"
                )));
            }
        }
        Ok(DirectionDistribution {
            mask,
            importance_diag,
            upper_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn importance_diag(&self) -> &[f64] {
        &self.importance_diag
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Same distribution with every diagonal entry multiplied by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        DirectionDistribution::new(
            self.mask.clone(),
            self.importance_diag.iter().map(|w| w * c).collect(),
            self.upper_bound * c,
        )
    }
}

/// Draw direction `key` from `dist`.
///
/// Coordinate `i` is `importance_diag[i] * z_i` where `z_i` is the normal
/// draw at counter `i` of the stream keyed by `key`; masked coordinates are
/// exactly `+0.0`.
pub fn sample_direction(dist: &DirectionDistribution, key: DirectionKey) -> Direction {
    sample_direction_in(
        dist,
        StreamKey::new(key.seed, Domain::Direction, key.stage, key.iteration, key.index),
    )
}

pub(crate) fn sample_direction_in(dist: &DirectionDistribution, key: StreamKey) -> Direction {
    let stream = key.stream();
    let values = dist
        .mask
        .iter()
        .zip(&dist.importance_diag)
        .enumerate()
        .map(|(i, (&keep, &w))| if keep { w * stream.normal(i as u64) } else { 0.0 })
        .collect();
    Direction {
        values,
        index: key.index,
        origin_seed: key.seed,
    }
}

/// Supplies the directions an optimizer consumes.
///
/// The seeded implementation is [`SeededDirections`]; tests and experiments
/// can plug in fixed directions.
pub trait DirectionSource: Sync {
    fn dim(&self) -> usize;

    fn direction(&self, stage: u64, iteration: u64, index: u64) -> Direction;

    /// Whether the optimizer may move coordinate `coord`.
    fn is_trainable(&self, _coord: usize) -> bool {
        true
    }
}

/// Directions drawn from a [`DirectionDistribution`] under a fixed seed.
#[derive(Debug, Clone, Copy)]
pub struct SeededDirections<'a> {
    pub dist: &'a DirectionDistribution,
    pub seed: u64,
}

impl<'a> SeededDirections<'a> {
    pub fn new(dist: &'a DirectionDistribution, seed: u64) -> Self {
        SeededDirections { dist, seed }
    }
}

impl DirectionSource for SeededDirections<'_> {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn direction(&self, stage: u64, iteration: u64, index: u64) -> Direction {
        sample_direction(self.dist, DirectionKey::new(self.seed, stage, iteration, index))
    }

    fn is_trainable(&self, coord: usize) -> bool {
        self.dist.mask[coord]
    }
}
