//! Datasets and their CSV form.
//!
//! CSV layout: header `f0,…,f{d−1},label`, UTF-8, `.` decimal separator,
//! LF line endings, one sample per row. Floats are written in Rust's
//! shortest round-trip form, so export → import is lossless.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::CounterStream;
use crate::zo::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    generator: String,
    seed: u64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, generator: impl Into<String>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        let d = samples[0].features.len();
        if let Some(bad) = samples.iter().position(|s| s.features.len() != d) {
            return Err(Error::invalid(format!(
                "sample {bad} has {} features, expected {d}",
                samples[bad].features.len()
            )));
        }
        Ok(Dataset {
            samples,
            generator: generator.into(),
            seed,
        })
    }

    /// A single featureless sample, for objectives that take no data.
    pub fn unit() -> Self {
        Dataset {
            samples: vec![Sample::default()],
            generator: "unit".into(),
            seed: 0,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    pub fn generator(&self) -> &str {
        &self.generator
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Sample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(csv_err)?;
        let mut header: Vec<String> = (0..self.feature_dim()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let row = s
                .features
                .iter()
                .chain(std::iter::once(&s.label))
                .map(|x| x.to_string());
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::ReaderBuilder::new().from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        let d = header
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::invalid("empty CSV header"))?;
        for (i, name) in header.iter().enumerate() {
            let expected = if i == d { "label".to_string() } else { format!("f{i}") };
            if name != expected {
                return Err(Error::invalid(format!(
                    "{}: header column {i} is {name:?}, expected {expected:?}",
                    path.display()
                )));
            }
        }
        let mut samples = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let mut vals = Vec::with_capacity(d + 1);
            for field in rec.iter() {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::invalid(format!("{}: row {row}: not a number: {field:?}", path.display())))?;
                vals.push(x);
            }
            let label = vals.pop().expect("csv reader enforces column count");
            samples.push(Sample::new(vals, label));
        }
        Dataset::new(samples, "csv", 0)
    }
}

/// Indices of a uniform minibatch of size `m` drawn without replacement
/// from `0..n`: a partial Fisher–Yates shuffle whose `j`-th swap uses
/// counter `j` of `stream`.
pub fn sample_minibatch(stream: CounterStream, n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("batch size {m} must be in 1..={n}")));
    }
    // sparse view of the permuted index array
    let mut swapped = std::collections::HashMap::with_capacity(2 * m);
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let r = j + stream.below(j as u64, (n - j) as u64) as usize;
        let at_r = *swapped.get(&r).unwrap_or(&r);
        let at_j = *swapped.get(&j).unwrap_or(&j);
        swapped.insert(r, at_j);
        out.push(at_r);
    }
    Ok(out)
}
