//! Experiment configuration and its JSON form.
//!
//! Unknown fields are rejected at every level. `epsilon` and `lambda` accept
//! the string `"inf"` and are written back that way when infinite.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{
    make_lipschitz_norm, make_quadratic, make_tiny_mlp, make_weakly_convex_logistic, mlp_dataset, mlp_init, Activation,
    BenchObjective,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::param::ParameterVector;
use crate::privacy::{CalibrationRoute, PrivacySpec};
use crate::pruning::{MatrixType, PruningConfig};
use crate::rng::{Domain, StreamKey};
use crate::stagewise::{IterateChoice, RegMode, RunOptions, StageSchedule};
use crate::zo::{Parallelism, ZoScale};

mod maybe_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Number(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// Objective name and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Quadratic {
        d: usize,
        condition_number: f64,
        seed: u64,
    },
    LipschitzNorm {
        d: usize,
        lipschitz: f64,
        seed: u64,
    },
    WeaklyConvexLogistic {
        d: usize,
        n: usize,
        rho: f64,
        seed: u64,
    },
    TinyMlp {
        layer_dims: Vec<usize>,
        activation: Activation,
        n: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta0: f64,
    /// Final-stage β; exactly one of `beta_end` and `k` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub eta0: f64,
    pub t0: u64,
    #[serde(with = "maybe_inf")]
    pub lambda: f64,
    pub stages: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    #[serde(with = "maybe_inf")]
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    pub c1: f64,
    pub c2: f64,
    pub sensitivity_multiplier: f64,
    #[serde(default)]
    pub route: CalibrationRoute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub directions: usize,
    pub batch: usize,
    #[serde(default)]
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSection {
    pub enabled: bool,
    pub rate: f64,
    pub matrix_type: MatrixType,
    pub upper_a: f64,
    pub lower_b: f64,
    pub directions: usize,
    pub beta: f64,
}

impl PruningSection {
    pub fn to_config(&self) -> PruningConfig {
        PruningConfig {
            rate: self.rate,
            matrix_type: self.matrix_type,
            upper_a: self.upper_a,
            lower_b: self.lower_b,
            directions: self.directions,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    /// CSV dataset replacing the generated one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    /// Standard deviation of the initial point; `0` starts at the origin.
    #[serde(default)]
    pub init_scale: f64,
    pub schedule: ScheduleConfig,
    pub privacy: PrivacyConfig,
    pub estimator: EstimatorConfig,
    pub pruning: PruningSection,
    #[serde(default)]
    pub reg_mode: RegMode,
    #[serde(default)]
    pub iterate: IterateChoice,
    pub seed: u64,
}

/// A built objective with its data and layer shape.
pub struct Problem {
    pub objective: BenchObjective,
    pub data: Dataset,
    pub initial: ParameterVector,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every section; failures are reported as config errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::Config(e.to_string());
        self.schedule().map_err(as_config)?;
        self.privacy_spec().map_err(as_config)?;
        if self.estimator.directions == 0 || self.estimator.batch == 0 {
            return Err(Error::Config("estimator directions and batch must be positive".into()));
        }
        if self.pruning.enabled {
            self.pruning.to_config().validate().map_err(as_config)?;
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init_scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn zo_scale(&self) -> Result<ZoScale> {
        let s = &self.schedule;
        match (s.beta_end, s.k) {
            (Some(end), None) => ZoScale::interpolated(s.beta0, end, s.stages),
            (None, Some(k)) => ZoScale::new(s.beta0, k),
            _ => Err(Error::invalid("schedule needs exactly one of beta_end and k")),
        }
    }

    pub fn schedule(&self) -> Result<StageSchedule> {
        let s = &self.schedule;
        StageSchedule::new(s.lambda, s.stages, s.t0, s.eta0, self.zo_scale()?)
    }

    pub fn privacy_spec(&self) -> Result<PrivacySpec> {
        let p = &self.privacy;
        let spec = PrivacySpec {
            epsilon: p.epsilon,
            delta: p.delta,
            clip: p.clip,
            c1: p.c1,
            c2: p.c2,
            sensitivity_multiplier: p.sensitivity_multiplier,
            route: p.route,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            directions: self.estimator.directions,
            batch: self.estimator.batch,
            reg_mode: self.reg_mode,
            seed: self.seed,
            parallelism: self.estimator.parallelism,
            iterate: self.iterate,
        }
    }

    /// The objective alone; never touches a dataset file.
    pub fn build_objective(&self) -> Result<BenchObjective> {
        Ok(match &self.objective {
            ObjectiveConfig::Quadratic {
                d,
                condition_number,
                seed,
            } => make_quadratic(*d, *condition_number, *seed)?,
            ObjectiveConfig::LipschitzNorm { d, lipschitz, seed } => make_lipschitz_norm(*d, *lipschitz, *seed)?,
            ObjectiveConfig::WeaklyConvexLogistic { d, n, rho, seed } => {
                make_weakly_convex_logistic(*d, *n, *rho, *seed)?.0
            }
            ObjectiveConfig::TinyMlp {
                layer_dims, activation, ..
            } => make_tiny_mlp(layer_dims, *activation)?.0,
        })
    }

    /// The initial point: the MLP's own initializer scaled by `init_scale`
    /// for MLPs, `N(0, init_scale²)` entries otherwise.
    pub fn initial_point(&self, objective: &BenchObjective) -> Result<ParameterVector> {
        let d = crate::zo::LossEvaluator::dim(objective);
        if self.init_scale == 0.0 {
            return Ok(ParameterVector::zeros(d));
        }
        if let ObjectiveConfig::TinyMlp { seed, .. } = &self.objective {
            let base = mlp_init(objective.shape(), *seed);
            return ParameterVector::new(base.as_slice().iter().map(|x| self.init_scale * x).collect());
        }
        let s = StreamKey::new(self.seed, Domain::Init, 0, 0, 0).stream();
        ParameterVector::new((0..d).map(|i| self.init_scale * s.normal(i as u64)).collect())
    }

    /// Objective, training data and initial point.
    pub fn build_problem(&self) -> Result<Problem> {
        let (objective, generated) = match &self.objective {
            ObjectiveConfig::WeaklyConvexLogistic { d, n, rho, seed } => {
                let (o, data) = make_weakly_convex_logistic(*d, *n, *rho, *seed)?;
                (o, data)
            }
            ObjectiveConfig::TinyMlp {
                layer_dims,
                activation,
                n,
                seed,
            } => {
                let (o, _) = make_tiny_mlp(layer_dims, *activation)?;
                let classes = *layer_dims.last().expect("validated non-empty");
                (o, mlp_dataset(layer_dims[0], classes, *n, *seed)?)
            }
            _ => (self.build_objective()?, Dataset::unit()),
        };
        let data = match &self.data_path {
            Some(p) => Dataset::read_csv(p)?,
            None => generated,
        };
        let initial = self.initial_point(&objective)?;
        Ok(Problem {
            objective,
            data,
            initial,
        })
    }
}
