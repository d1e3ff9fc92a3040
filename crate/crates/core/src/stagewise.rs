//! The private zeroth-order inner solver and the stagewise outer loop.
//!
//! Stage `s = 1..=S` runs `T_s = 2ˢT₀` steps at step size `η_s = η₀/2ˢ` and
//! ZO scale `β_s = β₀kˢ` on the proximal subproblem
//! `f_{β_s}(θ) + ‖θ − θ^{s−1}‖²/(2λ)`, starting from and anchored at the
//! previous stage's output.
//!
//! One step, for each direction `v_p` and minibatch sample `x_i`:
//!
//! ```text
//! diff   = (f(θ+βv_p, x_i) − f(θ−βv_p, x_i)) / 2β
//! gra    = clip(diff, C) + reg_p
//! g_p    = (Σ_i gra + N(0, σ²C²)) / m · v_p
//! θ     ←  θ − η · (1/P) Σ_p g_p
//! ```
//!
//! `reg_p` is the proximal term, added after clipping so that privacy only
//! depends on the data-dependent part. See [`RegMode`].

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_minibatch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::param::{dot, l2_norm, Direction, DirectionKey, DirectionSource, ParameterVector};
use crate::privacy::{add_noise, clip_scalar, AccountingShape, BudgetLedger, Calibration, PrivacySpec};
use crate::rng::{Domain, StreamKey};
use crate::zo::{probe, LossEvaluator, Parallelism, Sample, ZoScale};

/// How the proximal term enters the per-sample scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// `(1/λ)⟨θ − θ₀, v_p⟩`. Multiplied by `v_p` this is, in expectation,
    /// the gradient `(θ − θ₀)/λ` of the proximal term.
    #[default]
    Directional,
    /// `(1/λ)‖θ − θ₀‖`, the scalar norm as written in the original
    /// pseudo-code. Kept for comparison; it is not the regularizer's
    /// gradient in expectation.
    PaperLiteral,
}

/// Which iterate a stage returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterateChoice {
    #[default]
    Last,
    /// Mean of `θ_1..θ_T` (frozen coordinates are copied, not averaged).
    Average,
}

/// Per-stage quantities derived from a [`StageSchedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    pub stage: u32,
    pub beta: f64,
    pub eta: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSchedule {
    /// Proximal weight; `f64::INFINITY` disables the proximal term.
    pub lambda: f64,
    pub stages: u32,
    pub t0: u64,
    pub eta0: f64,
    pub zo_scale: ZoScale,
}

impl StageSchedule {
    pub fn new(lambda: f64, stages: u32, t0: u64, eta0: f64, zo_scale: ZoScale) -> Result<Self> {
        let s = StageSchedule {
            lambda,
            stages,
            t0,
            eta0,
            zo_scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.stages == 0 {
            return Err(Error::invalid("stage count must be positive"));
        }
        if self.t0 == 0 {
            return Err(Error::invalid("T0 must be positive"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::invalid(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if self.stages >= 63
            || self
                .t0
                .checked_shl(self.stages)
                .is_none_or(|t| t >> self.stages != self.t0)
        {
            return Err(Error::invalid("T0 * 2^S overflows"));
        }
        Ok(())
    }

    /// Stage `s >= 1`. Doubling `T` and halving `η` are exact in binary.
    pub fn stage(&self, s: u32) -> StageParams {
        StageParams {
            stage: s,
            beta: self.zo_scale.beta_at_stage(s),
            eta: self.eta0 * 0.5f64.powi(s as i32),
            steps: self.t0 << s,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = StageParams> + '_ {
        (1..=self.stages).map(|s| self.stage(s))
    }

    pub fn total_steps(&self) -> u64 {
        self.iter().map(|p| p.steps).sum()
    }
}

/// Problem constants that appear only in the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// PL constant μ.
    pub mu: f64,
    /// Per-sample gradient variance bound γ.
    pub gamma: f64,
    pub lipschitz_l: f64,
    /// Weak-convexity constant ρ.
    pub rho: f64,
    pub alpha0: f64,
    pub alpha_target: f64,
}

/// Inputs of the step-size rule other than the theory constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeInputs {
    pub directions: u64,
    pub batch: u64,
    pub dim: u64,
    pub clip: f64,
    pub total_steps: u64,
    pub n: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub c2: f64,
    pub beta_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Step {
    /// `Pm/6γ²`, `Pme/48dC²`, `ε²n²/(6dc₂²C²PT ln(P/δ))`, `Pm/384dβ_s²L⁴`.
    pub terms: [f64; 4],
    pub eta: f64,
}

/// Stage step size of the convergence analysis:
/// `η_s = α_{s−1} · min{Pm/6γ², Pme/48dC², ε²n²/(6dc₂²C²PT ln(P/δ)), Pm/384dβ_s²L⁴}`.
///
/// A documentation utility; the default loop uses the geometric schedule.
pub fn theorem2_eta(tp: &TheoryParams, alpha_prev: f64, x: &StepSizeInputs) -> Theorem2Step {
    let p = x.directions as f64;
    let m = x.batch as f64;
    let d = x.dim as f64;
    let c2 = x.clip * x.clip;
    let l4 = tp.lipschitz_l.powi(4);
    let n = x.n as f64;
    let terms = [
        p * m / (6.0 * tp.gamma * tp.gamma),
        p * m * std::f64::consts::E / (48.0 * d * c2),
        x.epsilon * x.epsilon * n * n / (6.0 * d * x.c2 * x.c2 * c2 * p * x.total_steps as f64 * (p / x.delta).ln()),
        p * m / (384.0 * d * x.beta_s * x.beta_s * l4),
    ];
    let min = terms.iter().copied().fold(f64::INFINITY, f64::min);
    Theorem2Step {
        terms,
        eta: alpha_prev * min,
    }
}

/// `λ = 3/(2μ)`, which is also the per-stage budget `η_s T_s`.
pub fn theorem2_lambda(tp: &TheoryParams) -> f64 {
    3.0 / (2.0 * tp.mu)
}

/// `S = ⌈log₂(α₀/α)⌉`, with `α_s` halving per stage.
pub fn theorem2_stage_count(tp: &TheoryParams) -> u32 {
    (tp.alpha0 / tp.alpha_target).log2().ceil().max(1.0) as u32
}

/// Mutable state of one optimizer run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub theta: ParameterVector,
    /// Proximal anchor `θ^{s−1}`.
    pub stage_anchor: ParameterVector,
    pub stage: u64,
    pub iteration: u64,
    pub ledger: BudgetLedger,
    pub metrics: MetricsLog,
}

impl OptimizerState {
    pub fn new(theta: ParameterVector, ledger: BudgetLedger) -> Self {
        OptimizerState {
            stage_anchor: theta.clone(),
            theta,
            stage: 0,
            iteration: 0,
            ledger,
            metrics: MetricsLog::new(),
        }
    }
}

/// Settings shared by every step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub directions: usize,
    pub beta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub privacy: PrivacySpec,
    pub reg_mode: RegMode,
    pub seed: u64,
    pub parallelism: Parallelism,
}

struct DirectionOutcome {
    v: Direction,
    scalar: f64,
    clipped: usize,
    probe_loss: f64,
}

/// One private ZO step at `(state.stage, state.iteration + 1)`.
///
/// Uses `state.ledger.sigma` as the noise multiplier. Coordinates the
/// direction source reports as untrainable are never written.
pub fn dp_zoo_step<L, D, S>(
    state: &mut OptimizerState,
    loss: &L,
    batch: &[S],
    cfg: &StepConfig,
    source: &D,
) -> Result<()>
where
    L: LossEvaluator + ?Sized,
    D: DirectionSource + ?Sized,
    S: Borrow<Sample> + Sync,
{
    if batch.is_empty() {
        return Err(Error::invalid("minibatch must be non-empty"));
    }
    if cfg.directions == 0 {
        return Err(Error::invalid("number of directions must be positive"));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {}", cfg.eta)));
    }
    let dim = state.theta.dim();
    crate::error::check_dims(dim, source.dim())?;

    let stage = state.stage;
    let iteration = state.iteration + 1;
    let sigma = state.ledger.sigma;
    let clip = cfg.privacy.clip;
    let noise_scale = cfg.privacy.noise_scale();
    let m = batch.len();

    let theta = state.theta.as_slice();
    let proximal = cfg.lambda.is_finite();
    let offset: Vec<f64> = if proximal {
        theta
            .iter()
            .zip(state.stage_anchor.as_slice())
            .map(|(t, a)| t - a)
            .collect()
    } else {
        Vec::new()
    };
    let inv_lambda = 1.0 / cfg.lambda;
    let literal_reg = inv_lambda * l2_norm(&offset);

    let diverged = |p: usize, detail: String| Error::Diverged {
        stage,
        iteration,
        direction: Some(p as u64),
        detail,
    };

    let per_direction = |p: usize| -> Result<DirectionOutcome> {
        let v = source.direction(stage, iteration, p as u64);
        let reg = if proximal {
            match cfg.reg_mode {
                RegMode::Directional => inv_lambda * dot(&offset, &v.values)?,
                RegMode::PaperLiteral => literal_reg,
            }
        } else {
            0.0
        };
        let mut sum = 0.0;
        let mut clipped = 0;
        let mut probe_loss = 0.0;
        for x in batch {
            let pr = probe(loss, theta, &v, cfg.beta, x.borrow()).map_err(|e| diverged(p, e.to_string()))?;
            if pr.diff.abs() > clip {
                clipped += 1;
            }
            let g = clip_scalar(pr.diff, clip);
            sum += if proximal { g + reg } else { g };
            probe_loss += 0.5 * (pr.plus + pr.minus);
        }
        let noised = add_noise(
            sum,
            sigma,
            noise_scale,
            DirectionKey::new(cfg.seed, stage, iteration, p as u64),
        );
        let scalar = noised / m as f64;
        if !scalar.is_finite() {
            return Err(diverged(p, format!("direction scalar is {scalar}")));
        }
        Ok(DirectionOutcome {
            v,
            scalar,
            clipped,
            probe_loss,
        })
    };

    let outcomes: Vec<DirectionOutcome> = match cfg.parallelism {
        Parallelism::Serial => (0..cfg.directions).map(per_direction).collect::<Result<_>>()?,
        Parallelism::Threads => (0..cfg.directions)
            .into_par_iter()
            .map(per_direction)
            .collect::<Result<_>>()?,
    };

    let mut grad = vec![0.0; dim];
    let mut clipped = 0usize;
    let mut probe_loss = 0.0;
    for o in &outcomes {
        for (g, vi) in grad.iter_mut().zip(&o.v.values) {
            *g += o.scalar * vi;
        }
        clipped += o.clipped;
        probe_loss += o.probe_loss;
    }
    let p = cfg.directions as f64;
    for g in grad.iter_mut() {
        *g /= p;
    }

    let mut next = state.theta.clone();
    for (j, (t, g)) in next.values_mut().iter_mut().zip(&grad).enumerate() {
        if !source.is_trainable(j) {
            continue;
        }
        let updated = *t - cfg.eta * g;
        if !updated.is_finite() {
            return Err(Error::Diverged {
                stage,
                iteration,
                direction: None,
                detail: format!("coordinate {j} became {updated}"),
            });
        }
        *t = updated;
    }
    state.theta = next;
    state.iteration = iteration;
    state.ledger.record_step();

    let evaluations = (cfg.directions * m) as f64;
    state.metrics.push(MetricsRow {
        stage,
        iteration,
        loss: probe_loss / evaluations,
        beta: cfg.beta,
        eta: cfg.eta,
        sigma,
        clip_fraction: clipped as f64 / evaluations,
        grad_norm_estimate: l2_norm(&grad),
        epsilon_spent_estimate: state.ledger.spent_epsilon_estimate,
    });
    Ok(())
}

/// Options of a stagewise run that are not part of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub directions: usize,
    pub batch: usize,
    pub reg_mode: RegMode,
    pub seed: u64,
    pub parallelism: Parallelism,
    pub iterate: IterateChoice,
}

impl RunOptions {
    pub fn new(directions: usize, batch: usize, seed: u64) -> Self {
        RunOptions {
            directions,
            batch,
            reg_mode: RegMode::Directional,
            seed,
            parallelism: Parallelism::Serial,
            iterate: IterateChoice::Last,
        }
    }
}

/// Run `params.steps` private steps of stage `params.stage`.
///
/// The proximal anchor is the stage's starting point. Each step draws a
/// minibatch of `opts.batch` indices without replacement from the stream
/// keyed by `(seed, stage, iteration)`. On return `stage_anchor` holds the
/// stage output.
#[allow(clippy::too_many_arguments)]
pub fn run_stage<L, D>(
    state: &mut OptimizerState,
    loss: &L,
    data: &Dataset,
    params: StageParams,
    lambda: f64,
    privacy: &PrivacySpec,
    source: &D,
    opts: &RunOptions,
) -> Result<()>
where
    L: LossEvaluator + ?Sized,
    D: DirectionSource + ?Sized,
{
    if params.steps == 0 {
        return Err(Error::invalid("a stage needs at least one step"));
    }
    state.stage = u64::from(params.stage);
    state.iteration = 0;
    state.stage_anchor = state.theta.clone();
    let cfg = StepConfig {
        directions: opts.directions,
        beta: params.beta,
        eta: params.eta,
        lambda,
        privacy: *privacy,
        reg_mode: opts.reg_mode,
        seed: opts.seed,
        parallelism: opts.parallelism,
    };
    let mut running_sum = match opts.iterate {
        IterateChoice::Average => Some(vec![0.0; state.theta.dim()]),
        IterateChoice::Last => None,
    };
    for t in 1..=params.steps {
        let stream = StreamKey::new(opts.seed, Domain::Minibatch, state.stage, t, 0).stream();
        let idx = sample_minibatch(stream, data.len(), opts.batch)?;
        let batch = data.select(&idx);
        dp_zoo_step(state, loss, &batch, &cfg, source)?;
        if let Some(acc) = running_sum.as_mut() {
            for (a, x) in acc.iter_mut().zip(state.theta.as_slice()) {
                *a += x;
            }
        }
    }
    if let Some(acc) = running_sum {
        let steps = params.steps as f64;
        let mut avg = state.theta.clone();
        for (j, (out, a)) in avg.values_mut().iter_mut().zip(acc).enumerate() {
            if source.is_trainable(j) {
                *out = a / steps;
            }
        }
        state.theta = avg;
    }
    state.stage_anchor = state.theta.clone();
    Ok(())
}

/// Result of [`run_stagewise`].
#[derive(Debug, Clone)]
pub struct StagewiseOutcome {
    pub theta: ParameterVector,
    pub calibration: Calibration,
    pub ledger: BudgetLedger,
    pub metrics: MetricsLog,
}

/// The stagewise outer loop. σ is calibrated once for the total step count
/// of the schedule.
pub fn run_stagewise<L, D>(
    initial: ParameterVector,
    loss: &L,
    data: &Dataset,
    schedule: &StageSchedule,
    privacy: &PrivacySpec,
    source: &D,
    opts: &RunOptions,
) -> Result<StagewiseOutcome>
where
    L: LossEvaluator + ?Sized,
    D: DirectionSource + ?Sized,
{
    schedule.validate()?;
    privacy.validate()?;
    if opts.batch == 0 || opts.batch > data.len() {
        return Err(Error::invalid(format!(
            "batch size {} must be in 1..={}",
            opts.batch,
            data.len()
        )));
    }
    let shape = AccountingShape {
        steps: schedule.total_steps(),
        directions: opts.directions as u64,
        batch: opts.batch as u64,
        n: data.len() as u64,
    };
    let calibration = privacy.calibrate(&shape)?;
    let ledger = BudgetLedger::new(privacy, &shape, calibration.sigma);
    let mut state = OptimizerState::new(initial, ledger);
    for params in schedule.iter() {
        run_stage(&mut state, loss, data, params, schedule.lambda, privacy, source, opts)?;
    }
    Ok(StagewiseOutcome {
        theta: state.theta,
        calibration,
        ledger: state.ledger,
        metrics: state.metrics,
    })
}

/// Mean loss over every sample of `data`.
pub fn dataset_loss<L: LossEvaluator + ?Sized>(loss: &L, theta: &ParameterVector, data: &Dataset) -> f64 {
    let mut acc = 0.0;
    for s in data.samples() {
        acc += loss.loss(theta.as_slice(), s);
    }
    acc / data.len() as f64
}
