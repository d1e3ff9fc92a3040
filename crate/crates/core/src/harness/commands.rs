//! The operations behind the command-line subcommands. Each returns a
//! report whose `Display` form is what the binary prints.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::ExperimentConfig;
use crate::param::{DirectionDistribution, SeededDirections};
use crate::privacy::{
    amplify_by_subsampling, calibrate_sigma_ma, calibrate_sigma_theorem1, strong_compose, Calibration,
};
use crate::pruning::{build_importance_matrix, exact_saliency, synflow_loss, zo_saliency, SaliencyScore};
use crate::stagewise::{run_stagewise, StageParams};
use crate::zo::LossEvaluator;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PRUNE_CHECKPOINT_FILE: &str = "prune.bin";

/// Inputs of [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateArgs {
    pub epsilon: f64,
    pub delta: f64,
    pub steps: u64,
    pub directions: u64,
    pub batch: u64,
    pub n: u64,
    pub c1: f64,
    pub c2: f64,
    /// Slack `δ′` of the composition bound.
    pub delta_prime: f64,
}

impl CalibrateArgs {
    pub fn from_config(cfg: &ExperimentConfig, n: u64) -> Result<Self> {
        Ok(CalibrateArgs {
            epsilon: cfg.privacy.epsilon,
            delta: cfg.privacy.delta,
            steps: cfg.schedule()?.total_steps(),
            directions: cfg.estimator.directions as u64,
            batch: cfg.estimator.batch as u64,
            n,
            c1: cfg.privacy.c1,
            c2: cfg.privacy.c2,
            delta_prime: cfg.privacy.delta,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub args: CalibrateArgs,
    pub theorem1: Calibration,
    pub moments_accountant: Calibration,
    /// `(ε′, δ′)` of one step after subsampling at `q = m/n`.
    pub amplified: (f64, f64),
    /// Strong composition of the amplified step over `T` steps.
    pub composed: (f64, f64),
}

pub fn calibrate(args: CalibrateArgs) -> Result<CalibrationReport> {
    let q = args.batch as f64 / args.n as f64;
    let theorem1 = calibrate_sigma_theorem1(
        args.epsilon,
        args.delta,
        args.steps,
        args.directions,
        args.batch,
        args.n,
        args.c1,
        args.c2,
    )?;
    let moments_accountant = calibrate_sigma_ma(args.epsilon, args.delta, args.steps, q, args.c1, args.c2)?;
    let amplified = amplify_by_subsampling(args.epsilon, args.delta, q)?;
    let composed = strong_compose(amplified.0, amplified.1, args.steps, args.delta_prime)?;
    Ok(CalibrationReport {
        args,
        theorem1,
        moments_accountant,
        amplified,
        composed,
    })
}

fn write_calibration(f: &mut fmt::Formatter<'_>, name: &str, c: &Calibration) -> fmt::Result {
    writeln!(
        f,
        "{name}: sigma={:.5} eps_limit={:.6e} ({})",
        c.sigma,
        c.eps_limit,
        c.regime.describe()
    )
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = &self.args;
        writeln!(
            f,
            "epsilon={} delta={} T={} P={} m={} n={} c1={} c2={}",
            a.epsilon, a.delta, a.steps, a.directions, a.batch, a.n, a.c1, a.c2
        )?;
        write_calibration(f, "theorem1", &self.theorem1)?;
        write_calibration(f, "moments_accountant", &self.moments_accountant)?;
        writeln!(
            f,
            "subsampled step: q={} eps'={:.6} delta'={:e}",
            a.batch as f64 / a.n as f64,
            self.amplified.0,
            self.amplified.1
        )?;
        write!(
            f,
            "composed over T={} (slack {:e}): eps={:.6} delta={:e}",
            a.steps, a.delta_prime, self.composed.0, self.composed.1
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub stages: Vec<StageParams>,
    pub total_steps: u64,
}

pub fn schedule(cfg: &ExperimentConfig) -> Result<ScheduleReport> {
    let s = cfg.schedule()?;
    Ok(ScheduleReport {
        stages: s.iter().collect(),
        total_steps: s.total_steps(),
    })
}

impl fmt::Display for ScheduleReport {
    /// Floats are printed in shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stage,beta,eta,steps,eta_times_steps")?;
        for p in &self.stages {
            writeln!(
                f,
                "{},{:e},{:e},{},{:e}",
                p.stage,
                p.beta,
                p.eta,
                p.steps,
                p.eta * p.steps as f64
            )?;
        }
        write!(f, "total_steps={}", self.total_steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub dim: usize,
    pub kept: usize,
    pub score: SaliencyScore,
    /// Ten equal-width bins over `[min, max]` of the scores.
    pub histogram: Vec<usize>,
    pub score_range: (f64, f64),
    /// Min and max of the diagonal over the keep set.
    pub diag_range: (f64, f64),
    pub saliency_loss: f64,
    pub zo_layer_sums: Vec<f64>,
    pub exact_layer_sums: Vec<f64>,
    pub checkpoint: PathBuf,
}

fn histogram(values: &[f64], bins: usize) -> (Vec<usize>, (f64, f64)) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    (counts, (lo, hi))
}

/// Saliency and importance matrix from the configured initial point.
///
/// Reads no data: a config with `data_path` set is rejected.
pub fn prune(cfg: &ExperimentConfig, out: &Path) -> Result<PruneReport> {
    if let Some(p) = &cfg.data_path {
        return Err(Error::Config(format!(
            "prune is data-free but the config points at {}",
            p.display()
        )));
    }
    let pcfg = cfg.pruning.to_config();
    pcfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let objective = cfg.build_objective()?;
    let theta = cfg.initial_point(&objective)?;
    let shape = objective.shape();
    let score = zo_saliency(
        &theta,
        shape,
        pcfg.directions,
        pcfg.beta,
        cfg.seed,
        cfg.estimator.parallelism,
    )?;
    let dist = build_importance_matrix(&score, &pcfg)?;
    let kept = dist.kept();
    let (hist, score_range) = histogram(&score.values, 10);
    let kept_diag = dist
        .importance_diag()
        .iter()
        .zip(dist.mask())
        .filter(|(_, &m)| m)
        .map(|(&w, _)| w);
    let diag_range = kept_diag.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)));
    let exact = exact_saliency(&theta, shape)?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let checkpoint = out.join(PRUNE_CHECKPOINT_FILE);
    Checkpoint::new(theta.clone(), &dist)?.write(&checkpoint)?;
    Ok(PruneReport {
        dim: theta.dim(),
        kept,
        histogram: hist,
        score_range,
        diag_range,
        saliency_loss: synflow_loss(&theta, shape)?,
        zo_layer_sums: shape.layer_sums(&score.values)?,
        exact_layer_sums: shape.layer_sums(&exact.values)?,
        score,
        checkpoint,
    })
}

impl fmt::Display for PruneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kept={}/{}", self.kept, self.dim)?;
        writeln!(
            f,
            "score: min={:e} max={:e} P={} beta={:e}",
            self.score_range.0, self.score_range.1, self.score.p_used, self.score.beta_used
        )?;
        let hist: Vec<String> = self.histogram.iter().map(|c| c.to_string()).collect();
        writeln!(f, "score histogram (10 bins): {}", hist.join(" "))?;
        writeln!(
            f,
            "diag over keep set: min={} max={}",
            self.diag_range.0, self.diag_range.1
        )?;
        writeln!(f, "saliency loss={:e}", self.saliency_loss)?;
        for (l, (z, e)) in self.zo_layer_sums.iter().zip(&self.exact_layer_sums).enumerate() {
            let rel = if self.saliency_loss != 0.0 {
                (z - self.saliency_loss) / self.saliency_loss
            } else {
                0.0
            };
            writeln!(f, "layer {l}: zo_sum={z:e} exact_sum={e:e} rel_err={rel:.4}")?;
        }
        write!(f, "checkpoint={}", self.checkpoint.display())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub final_loss: f64,
    pub initial_loss: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub kept: usize,
    pub dim: usize,
    pub warnings: Vec<String>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

/// Optional pruning, then the stagewise run. Writes the metrics CSV and the
/// final checkpoint into `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    let problem = cfg.build_problem()?;
    let schedule = cfg.schedule()?;
    let privacy = cfg.privacy_spec()?;
    let opts = cfg.run_options();
    let objective = &problem.objective;
    let d = objective.dim();
    crate::error::check_dims(d, problem.initial.dim())?;

    let mut warnings = Vec::new();
    if let Some(w) = privacy.delta_warning(problem.data.len() as u64) {
        warnings.push(w);
    }

    let dist = if cfg.pruning.enabled {
        let (_, dist) = crate::pruning::prune(
            &problem.initial,
            objective.shape(),
            &cfg.pruning.to_config(),
            opts.seed,
            opts.parallelism,
        )?;
        dist
    } else {
        DirectionDistribution::isotropic(d)
    };
    let source = SeededDirections::new(&dist, opts.seed);
    let initial_loss = objective.dataset_loss(problem.initial.as_slice(), &problem.data);
    let outcome = run_stagewise(
        problem.initial.clone(),
        objective,
        &problem.data,
        &schedule,
        &privacy,
        &source,
        &opts,
    )?;
    if outcome.calibration.regime == crate::Regime::Outside {
        warnings.push(format!(
            "epsilon = {} is outside the stated regime of the calibration (limit {})",
            privacy.epsilon, outcome.calibration.eps_limit
        ));
    }

    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let metrics = out.join(METRICS_FILE);
    outcome.metrics.write_csv(&metrics)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    Checkpoint::new(outcome.theta.clone(), &dist)?.write(&checkpoint)?;

    Ok(TrainReport {
        final_loss: objective.dataset_loss(outcome.theta.as_slice(), &problem.data),
        initial_loss,
        epsilon: outcome.ledger.spent_epsilon_estimate,
        sigma: outcome.calibration.sigma,
        kept: dist.kept(),
        dim: d,
        warnings,
        metrics,
        checkpoint,
    })
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "final_loss={} epsilon={} sigma={} kept={}/{}",
            self.final_loss, self.epsilon, self.sigma, self.kept, self.dim
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub kept: usize,
    pub dim: usize,
    pub samples: usize,
}

/// Mean loss of a checkpoint over the configured problem's data.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let problem = cfg.build_problem()?;
    let ckpt = Checkpoint::read(checkpoint)?;
    crate::error::check_dims(problem.objective.dim(), ckpt.theta.dim())?;
    Ok(EvalReport {
        loss: problem.objective.dataset_loss(ckpt.theta.as_slice(), &problem.data),
        kept: ckpt.mask.iter().filter(|&&m| m).count(),
        dim: ckpt.theta.dim(),
        samples: problem.data.len(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loss={} samples={} kept={}/{}",
            self.loss, self.samples, self.kept, self.dim
        )
    }
}
