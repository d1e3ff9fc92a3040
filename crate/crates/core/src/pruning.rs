//! Data-free saliency and importance-matrix construction.
//!
//! The saliency objective of a chain of weight matrices `W¹ … Wᴸ` is
//! `L(θ) = 1ᵀ |W¹| |W²| ⋯ |Wᴸ| 1`. It is positively homogeneous of degree one
//! in each layer, so for the exact gradient `Σ_{i∈l} θᵢ ∂L/∂θᵢ = L(θ)` for
//! every layer `l`. Nothing in this module takes a [`Dataset`](crate::Dataset).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::param::{sample_direction_in, Direction, DirectionDistribution, ParameterVector};
use crate::rng::{Domain, StreamKey};
use crate::zo::{Parallelism, Sample};

/// Weight matrices laid out back to back in row-major order.
///
/// Layer `l` has shape `rows[l] × cols[l]` with `cols[l] == rows[l+1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayeredShape {
    layers: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl LayeredShape {
    pub fn new(layers: Vec<(usize, usize)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a layered shape needs at least one layer"));
        }
        for (l, &(r, c)) in layers.iter().enumerate() {
            if r == 0 || c == 0 {
                return Err(Error::invalid(format!("layer {l} has an empty dimension {r}x{c}")));
            }
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].1 != w[1].0 {
                return Err(Error::invalid(format!(
                    "layer {l} is {}x{} but layer {} is {}x{}",
                    w[0].0,
                    w[0].1,
                    l + 1,
                    w[1].0,
                    w[1].1
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut at = 0usize;
        offsets.push(0);
        for &(r, c) in &layers {
            at = r
                .checked_mul(c)
                .and_then(|n| at.checked_add(n))
                .ok_or_else(|| Error::invalid("layered shape is too large"))?;
            offsets.push(at);
        }
        Ok(LayeredShape { layers, offsets })
    }

    pub fn layers(&self) -> &[(usize, usize)] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total number of weights `d`.
    pub fn dim(&self) -> usize {
        self.offsets[self.layers.len()]
    }

    /// Flat index range of layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    /// Flat index of entry `(i, j)` of layer `l`.
    pub fn flat_index(&self, l: usize, i: usize, j: usize) -> usize {
        debug_assert!(i < self.layers[l].0 && j < self.layers[l].1);
        self.offsets[l] + i * self.layers[l].1 + j
    }

    /// Per-layer sums of `values`.
    pub fn layer_sums(&self, values: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.dim(), values.len())?;
        Ok((0..self.num_layers())
            .map(|l| values[self.layer_range(l)].iter().sum())
            .collect())
    }
}

/// `u ← u |W|` for a row vector `u`.
fn row_times_abs(u: &[f64], w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let ui = u[i];
        for (o, x) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += ui * x.abs();
        }
    }
    out
}

/// `u ← |W| u` for a column vector `u`.
fn abs_times_col(w: &[f64], u: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(u)
                .map(|(x, y)| x.abs() * y)
                .sum()
        })
        .collect()
}

fn synflow_raw(theta: &[f64], shape: &LayeredShape) -> f64 {
    let mut u = vec![1.0; shape.layers[0].0];
    for (l, &(r, c)) in shape.layers.iter().enumerate() {
        u = row_times_abs(&u, &theta[shape.layer_range(l)], r, c);
    }
    u.iter().sum()
}

/// `1ᵀ |W¹| ⋯ |Wᴸ| 1`.
pub fn synflow_loss(theta: &ParameterVector, shape: &LayeredShape) -> Result<f64> {
    check_dims(shape.dim(), theta.dim())?;
    Ok(synflow_raw(theta.as_slice(), shape))
}

/// Adapter exposing the saliency objective through the probe interface.
struct SynflowObjective<'a>(&'a LayeredShape);

impl crate::zo::LossEvaluator for SynflowObjective<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn loss(&self, theta: &[f64], _: &Sample) -> f64 {
        synflow_raw(theta, self.0)
    }
}

/// Saliency scores `ĝ ⊙ θ` with the estimator settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScore {
    pub values: Vec<f64>,
    /// `0.0` for exact scores.
    pub beta_used: f64,
    /// `0` for exact scores.
    pub p_used: usize,
}

impl SaliencyScore {
    pub fn new(values: Vec<f64>, beta_used: f64, p_used: usize) -> Result<Self> {
        if let Some(index) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: values[index],
            });
        }
        Ok(SaliencyScore {
            values,
            beta_used,
            p_used,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Analytic gradient of [`synflow_loss`]:
/// `∂L/∂W^l_{ij} = sign(W^l_{ij}) · left_l[i] · right_l[j]` with
/// `left_l = 1ᵀ|W¹|⋯|W^{l−1}|` and `right_l = |W^{l+1}|⋯|Wᴸ|1`.
#[allow(clippy::needless_range_loop)]
pub fn synflow_gradient(theta: &ParameterVector, shape: &LayeredShape) -> Result<Vec<f64>> {
    check_dims(shape.dim(), theta.dim())?;
    let t = theta.as_slice();
    let n = shape.num_layers();
    let mut left = Vec::with_capacity(n);
    let mut u = vec![1.0; shape.layers[0].0];
    for (l, &(r, c)) in shape.layers.iter().enumerate() {
        left.push(u.clone());
        u = row_times_abs(&u, &t[shape.layer_range(l)], r, c);
    }
    let mut right = vec![Vec::new(); n];
    let mut w = vec![1.0; shape.layers[n - 1].1];
    for l in (0..n).rev() {
        let (r, c) = shape.layers[l];
        right[l] = w.clone();
        w = abs_times_col(&t[shape.layer_range(l)], &w, r, c);
    }
    let mut grad = vec![0.0; shape.dim()];
    for (l, &(r, c)) in shape.layers.iter().enumerate() {
        for i in 0..r {
            for j in 0..c {
                let k = shape.flat_index(l, i, j);
                let s = if t[k] > 0.0 {
                    1.0
                } else if t[k] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[k] = s * left[l][i] * right[l][j];
            }
        }
    }
    Ok(grad)
}

/// Exact saliency `∇L ⊙ θ`.
pub fn exact_saliency(theta: &ParameterVector, shape: &LayeredShape) -> Result<SaliencyScore> {
    let g = synflow_gradient(theta, shape)?;
    let values = g.iter().zip(theta.as_slice()).map(|(g, t)| g * t).collect();
    SaliencyScore::new(values, 0.0, 0)
}

/// Zeroth-order saliency `((1/P) Σ_p diff_p v_p) ⊙ θ` over `P` standard
/// normal directions from the saliency stream of `seed`.
pub fn zo_saliency(
    theta: &ParameterVector,
    shape: &LayeredShape,
    directions: usize,
    beta: f64,
    seed: u64,
    parallelism: Parallelism,
) -> Result<SaliencyScore> {
    if directions == 0 {
        return Err(Error::invalid("saliency needs at least one direction"));
    }
    let dist = DirectionDistribution::isotropic(shape.dim());
    let draw = |p: usize| sample_direction_in(&dist, StreamKey::new(seed, Domain::Saliency, 0, 0, p as u64));
    zo_saliency_from(theta, shape, directions, beta, draw, parallelism)
}

/// [`zo_saliency`] over caller-supplied directions.
pub fn zo_saliency_with(
    theta: &ParameterVector,
    shape: &LayeredShape,
    directions: &[Direction],
    beta: f64,
) -> Result<SaliencyScore> {
    if directions.is_empty() {
        return Err(Error::invalid("saliency needs at least one direction"));
    }
    zo_saliency_from(
        theta,
        shape,
        directions.len(),
        beta,
        |p| directions[p].clone(),
        Parallelism::Serial,
    )
}

/// Directions are summed in fixed blocks of this many, and blocks in
/// ascending order, so the result does not depend on the thread count.
const BLOCK: usize = 64;

fn zo_saliency_from<F>(
    theta: &ParameterVector,
    shape: &LayeredShape,
    directions: usize,
    beta: f64,
    draw: F,
    parallelism: Parallelism,
) -> Result<SaliencyScore>
where
    F: Fn(usize) -> Direction + Sync,
{
    check_dims(shape.dim(), theta.dim())?;
    let objective = SynflowObjective(shape);
    let x = Sample::default();
    let d = shape.dim();
    let block_sum = |b: usize| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; d];
        for p in b * BLOCK..((b + 1) * BLOCK).min(directions) {
            let v = draw(p);
            let diff = crate::zo::probe(&objective, theta.as_slice(), &v, beta, &x)?.diff;
            for (a, vi) in acc.iter_mut().zip(&v.values) {
                *a += diff * vi;
            }
        }
        Ok(acc)
    };
    let blocks = directions.div_ceil(BLOCK);
    let partial: Vec<Vec<f64>> = match parallelism {
        Parallelism::Serial => (0..blocks).map(block_sum).collect::<Result<_>>()?,
        Parallelism::Threads => (0..blocks).into_par_iter().map(block_sum).collect::<Result<_>>()?,
    };
    let mut total = vec![0.0; d];
    for part in &partial {
        for (t, a) in total.iter_mut().zip(part) {
            *t += a;
        }
    }
    let p = directions as f64;
    let values = total.iter().zip(theta.as_slice()).map(|(g, t)| g / p * t).collect();
    SaliencyScore::new(values, beta, directions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixType {
    /// Unit variance on the keep set.
    #[default]
    PruningOnly,
    /// Variance interpolated from `A` (best score) down towards `B`.
    RankBased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruningConfig {
    /// Fraction of parameters kept trainable, in `(0, 1]`.
    pub rate: f64,
    pub matrix_type: MatrixType,
    pub upper_a: f64,
    pub lower_b: f64,
    pub directions: usize,
    pub beta: f64,
}

impl PruningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::invalid(format!(
                "pruning rate must be in (0, 1], got {}",
                self.rate
            )));
        }
        if self.matrix_type == MatrixType::RankBased
            && !(self.lower_b > 0.0 && self.upper_a >= self.lower_b && self.upper_a.is_finite())
        {
            return Err(Error::invalid(format!(
                "rank-based interval needs A >= B > 0, got A = {}, B = {}",
                self.upper_a, self.lower_b
            )));
        }
        if self.directions == 0 {
            return Err(Error::invalid("saliency needs at least one direction"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "saliency beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `K = ⌈r·d⌉`, clamped to `[1, d]`.
///
/// Products that land within `1e-9` relative of an integer are snapped to
/// it first, so that e.g. `0.07 · 100 = 7.000000000000001` keeps 7.
pub fn keep_count(rate: f64, d: usize) -> usize {
    let x = rate * d as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, d.max(1))
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Keep the top `⌈r·d⌉` scores and assign their perturbation scales.
///
/// Rank-based scale of the entry at rank `k` in `0..K` is
/// `A − (A − B)·k/K`, which lies in `(B, A]` and strictly decreases in `k`.
pub fn build_importance_matrix(score: &SaliencyScore, cfg: &PruningConfig) -> Result<DirectionDistribution> {
    if !(cfg.rate > 0.0 && cfg.rate <= 1.0) {
        return Err(Error::invalid(format!(
            "pruning rate must be in (0, 1], got {}",
            cfg.rate
        )));
    }
    let d = score.dim();
    let k = keep_count(cfg.rate, d);
    let order = rank_order(&score.values);
    let mut mask = vec![false; d];
    let mut diag = vec![0.0; d];
    let (a, b) = (cfg.upper_a, cfg.lower_b);
    for (rank, &i) in order.iter().take(k).enumerate() {
        mask[i] = true;
        diag[i] = match cfg.matrix_type {
            MatrixType::PruningOnly => 1.0,
            MatrixType::RankBased => a - (a - b) * rank as f64 / k as f64,
        };
    }
    let upper = match cfg.matrix_type {
        MatrixType::PruningOnly => 1.0,
        MatrixType::RankBased => a,
    };
    DirectionDistribution::new(mask, diag, upper)
}

/// Phase 1 of prune-then-finetune: saliency and importance matrix from the
/// parameters alone.
pub fn prune(
    theta: &ParameterVector,
    shape: &LayeredShape,
    cfg: &PruningConfig,
    seed: u64,
    parallelism: Parallelism,
) -> Result<(SaliencyScore, DirectionDistribution)> {
    cfg.validate()?;
    let score = zo_saliency(theta, shape, cfg.directions, cfg.beta, seed, parallelism)?;
    let dist = build_importance_matrix(&score, cfg)?;
    Ok((score, dist))
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub score: SaliencyScore,
    pub distribution: DirectionDistribution,
    pub run: crate::stagewise::StagewiseOutcome,
}

/// Prune from `theta`'s saliency, then fine-tune on the resulting
/// distribution. The privacy spec is passed through to the second phase
/// unchanged.
#[allow(clippy::too_many_arguments)]
pub fn prune_then_finetune<L>(
    theta: ParameterVector,
    shape: &LayeredShape,
    cfg: &PruningConfig,
    loss: &L,
    data: &crate::Dataset,
    schedule: &crate::StageSchedule,
    privacy: &crate::PrivacySpec,
    opts: &crate::stagewise::RunOptions,
) -> Result<PruneOutcome>
where
    L: crate::LossEvaluator + ?Sized,
{
    let (score, distribution) = prune(&theta, shape, cfg, opts.seed, opts.parallelism)?;
    let source = crate::SeededDirections::new(&distribution, opts.seed);
    let run = crate::stagewise::run_stagewise(theta, loss, data, schedule, privacy, &source, opts)?;
    Ok(PruneOutcome {
        score,
        distribution,
        run,
    })
}
