//! Per-step optimizer metrics and their CSV form.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "stage,iteration,loss,beta,eta,sigma,clip_fraction,grad_norm_estimate,epsilon_spent_estimate";

/// One optimizer step.
///
/// `loss` is the mean of the probe evaluations `(f(θ+βv) + f(θ−βv))/2`
/// over the step's directions and minibatch, so it costs no extra
/// evaluations. Like every column here it is a training diagnostic and is
/// not privatized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub stage: u64,
    pub iteration: u64,
    pub loss: f64,
    pub beta: f64,
    pub eta: f64,
    pub sigma: f64,
    pub clip_fraction: f64,
    pub grad_norm_estimate: f64,
    pub epsilon_spent_estimate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        MetricsLog::default()
    }

    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!((0.0..=1.0).contains(&row.clip_fraction));
        debug_assert!(self
            .rows
            .last()
            .is_none_or(|r| r.epsilon_spent_estimate <= row.epsilon_spent_estimate));
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.stage,
                r.iteration,
                r.loss,
                r.beta,
                r.eta,
                r.sigma,
                r.clip_fraction,
                r.grad_norm_estimate,
                r.epsilon_spent_estimate
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv_string().as_bytes()).map_err(io)
    }
}
