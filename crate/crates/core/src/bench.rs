//! Built-in objectives with known structure, and their synthetic data.
//!
//! Each objective exposes a [`LayeredShape`] so the pruning pass applies to
//! all of them: the linear models present their `d` weights as one `d × 1`
//! layer.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::param::{l2_norm, ParameterVector};
use crate::pruning::LayeredShape;
use crate::rng::{Domain, StreamKey};
use crate::zo::{LossEvaluator, Sample};

/// Per-sample model behind a [`BenchObjective`].
trait Model: Send + Sync {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &[f64], x: &Sample) -> f64;
    fn gradient(&self, _theta: &[f64], _x: &Sample) -> Option<Vec<f64>> {
        None
    }
}

/// A named loss with optional analytic gradient and structural constants.
pub struct BenchObjective {
    name: String,
    model: Box<dyn Model>,
    lipschitz_l: Option<f64>,
    weakly_convex_rho: Option<f64>,
    smoothness: Option<f64>,
    minimizer: Option<Vec<f64>>,
    shape: LayeredShape,
}

impl std::fmt::Debug for BenchObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchObjective")
            .field("name", &self.name)
            .field("dim", &self.model.dim())
            .field("lipschitz_l", &self.lipschitz_l)
            .field("weakly_convex_rho", &self.weakly_convex_rho)
            .finish_non_exhaustive()
    }
}

impl BenchObjective {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz_l(&self) -> Option<f64> {
        self.lipschitz_l
    }

    pub fn weakly_convex_rho(&self) -> Option<f64> {
        self.weakly_convex_rho
    }

    /// Smoothness constant of the mean loss over the objective's own data,
    /// when known. The logistic value uses a power-iteration estimate.
    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    /// `θ*` for objectives built around a planted minimizer.
    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    pub fn shape(&self) -> &LayeredShape {
        &self.shape
    }

    pub fn has_gradient(&self) -> bool {
        self.model
            .gradient(&vec![0.0; self.model.dim()], &Sample::default())
            .is_some()
    }

    pub fn gradient(&self, theta: &[f64], x: &Sample) -> Option<Vec<f64>> {
        self.model.gradient(theta, x)
    }

    /// Mean loss over `data`.
    pub fn dataset_loss(&self, theta: &[f64], data: &Dataset) -> f64 {
        data.samples().iter().map(|x| self.model.loss(theta, x)).sum::<f64>() / data.len() as f64
    }

    /// Mean analytic gradient over `data`.
    pub fn dataset_gradient(&self, theta: &[f64], data: &Dataset) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.model.dim()];
        for x in data.samples() {
            for (a, g) in acc.iter_mut().zip(self.model.gradient(theta, x)?) {
                *a += g;
            }
        }
        let n = data.len() as f64;
        Some(acc.into_iter().map(|a| a / n).collect())
    }

    /// Largest relative error `‖ĝ − g‖ / ‖g‖` between the analytic gradient
    /// and central differences with step `1e-6·(1 + |θᵢ|)`, over `points`
    /// standard normal points drawn from `seed` and the first sample of
    /// `data`. `None` if the objective has no analytic gradient.
    pub fn gradient_self_test(&self, data: &Dataset, points: u64, seed: u64) -> Option<f64> {
        let d = self.model.dim();
        let x = &data.samples()[0];
        let mut worst: f64 = 0.0;
        for k in 0..points {
            let s = StreamKey::new(seed, Domain::Init, 0, k, 0).stream();
            let mut theta: Vec<f64> = (0..d).map(|i| s.normal(i as u64)).collect();
            let g = self.model.gradient(&theta, x)?;
            let mut err = 0.0;
            for i in 0..d {
                let h = 1e-6 * (1.0 + theta[i].abs());
                let t = theta[i];
                theta[i] = t + h;
                let up = self.model.loss(&theta, x);
                theta[i] = t - h;
                let down = self.model.loss(&theta, x);
                theta[i] = t;
                let fd = (up - down) / (2.0 * h);
                err += (fd - g[i]) * (fd - g[i]);
            }
            worst = worst.max(err.sqrt() / l2_norm(&g).max(f64::MIN_POSITIVE));
        }
        Some(worst)
    }
}

impl LossEvaluator for BenchObjective {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn loss(&self, theta: &[f64], x: &Sample) -> f64 {
        self.model.loss(theta, x)
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_l
    }
}

fn normals(seed: u64, domain: Domain, iteration: u64, n: usize) -> Vec<f64> {
    let s = StreamKey::new(seed, domain, 0, iteration, 0).stream();
    (0..n).map(|i| s.normal(i as u64)).collect()
}

fn column_shape(d: usize) -> Result<LayeredShape> {
    LayeredShape::new(vec![(d, 1)])
}

struct Quadratic {
    eigen: Vec<f64>,
    center: Vec<f64>,
}

impl Model for Quadratic {
    fn dim(&self) -> usize {
        self.eigen.len()
    }

    fn loss(&self, t: &[f64], _: &Sample) -> f64 {
        let mut acc = 0.0;
        for ((a, c), x) in self.eigen.iter().zip(&self.center).zip(t) {
            let r = x - c;
            acc += a * r * r;
        }
        0.5 * acc
    }

    fn gradient(&self, t: &[f64], _: &Sample) -> Option<Vec<f64>> {
        Some(
            self.eigen
                .iter()
                .zip(&self.center)
                .zip(t)
                .map(|((a, c), x)| a * (x - c))
                .collect(),
        )
    }
}

/// Eigenvalues `κ^{i/(d−1)}`, `i = 0..d`, log-spaced over `[1, κ]`.
pub fn log_spaced_eigenvalues(d: usize, condition_number: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d)
        .map(|i| condition_number.powf(i as f64 / (d - 1) as f64))
        .collect()
}

/// `f(θ) = ½(θ − θ*)ᵀA(θ − θ*)` with `A` diagonal, eigenvalues log-spaced
/// in `[1, κ]`, and `θ*` standard normal from `seed`. Data-free.
pub fn make_quadratic(d: usize, condition_number: f64, seed: u64) -> Result<BenchObjective> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(condition_number >= 1.0 && condition_number.is_finite()) {
        return Err(Error::invalid(format!(
            "condition number must be >= 1, got {condition_number}"
        )));
    }
    let eigen = log_spaced_eigenvalues(d, condition_number);
    let center = normals(seed, Domain::Objective, 0, d);
    Ok(BenchObjective {
        name: "quadratic".into(),
        model: Box::new(Quadratic {
            eigen,
            center: center.clone(),
        }),
        lipschitz_l: None,
        weakly_convex_rho: Some(0.0),
        smoothness: Some(condition_number),
        minimizer: Some(center),
        shape: column_shape(d)?,
    })
}

struct NormModel {
    scale: f64,
    center: Vec<f64>,
}

impl Model for NormModel {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn loss(&self, t: &[f64], _: &Sample) -> f64 {
        let r: Vec<f64> = t.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        self.scale * l2_norm(&r)
    }

    /// `L(θ − θ*)/‖θ − θ*‖`, and zero at `θ*`.
    fn gradient(&self, t: &[f64], _: &Sample) -> Option<Vec<f64>> {
        let r: Vec<f64> = t.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        let n = l2_norm(&r);
        if n == 0.0 {
            return Some(vec![0.0; r.len()]);
        }
        Some(r.into_iter().map(|x| self.scale * x / n).collect())
    }
}

/// `f(θ) = L‖θ − θ*‖₂`, Lipschitz with constant exactly `L`.
pub fn make_lipschitz_norm(d: usize, lipschitz: f64, seed: u64) -> Result<BenchObjective> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::invalid(format!("L must be positive, got {lipschitz}")));
    }
    let center = normals(seed, Domain::Objective, 0, d);
    Ok(BenchObjective {
        name: "lipschitz_norm".into(),
        model: Box::new(NormModel {
            scale: lipschitz,
            center: center.clone(),
        }),
        lipschitz_l: Some(lipschitz),
        weakly_convex_rho: Some(0.0),
        smoothness: None,
        minimizer: Some(center),
        shape: column_shape(d)?,
    })
}

struct Logistic {
    d: usize,
    rho: f64,
}

impl Logistic {
    fn margin(&self, t: &[f64], x: &Sample) -> f64 {
        let mut z = 0.0;
        for (a, b) in x.features.iter().zip(t) {
            z += a * b;
        }
        x.label * z
    }
}

/// `ln(1 + e^{−z})` without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

impl Model for Logistic {
    fn dim(&self) -> usize {
        self.d
    }

    fn loss(&self, t: &[f64], x: &Sample) -> f64 {
        let reg: f64 = t.iter().map(|w| w * w / (1.0 + w * w)).sum();
        softplus_neg(self.margin(t, x)) + self.rho * reg
    }

    fn gradient(&self, t: &[f64], x: &Sample) -> Option<Vec<f64>> {
        let z = self.margin(t, x);
        // d/dz ln(1 + e^{−z}) = −1/(1 + e^{z})
        let s = -x.label / (1.0 + z.exp());
        Some(
            x.features
                .iter()
                .zip(t)
                .map(|(a, w)| {
                    let q = 1.0 + w * w;
                    s * a + self.rho * 2.0 * w / (q * q)
                })
                .collect(),
        )
    }
}

/// Offset of every sample along the separating direction beyond its
/// Gaussian component.
pub const LOGISTIC_MARGIN: f64 = 0.5;

/// Balanced binary data separable with margin, and the logistic loss plus
/// the nonconvex penalty `ρ Σᵢ θᵢ²/(1 + θᵢ²)`.
///
/// Labels are `±1` and alternate. Each feature vector is standard normal
/// with its component along a hidden unit direction `w` replaced by
/// `y·(margin + |⟨w, x⟩|)`. The penalty's curvature is at least `−ρ/2`, so
/// the documented weak-convexity constant `2ρ` is a valid upper bound.
pub fn make_weakly_convex_logistic(d: usize, n: usize, rho: f64, seed: u64) -> Result<(BenchObjective, Dataset)> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("n must be even and at least 2, got {n}")));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be non-negative, got {rho}")));
    }
    let mut w = normals(seed, Domain::Objective, 0, d);
    let norm = l2_norm(&w);
    w.iter_mut().for_each(|x| *x /= norm);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut x = normals(seed, Domain::Dataset, i as u64, d);
        let proj: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let shift = y * (LOGISTIC_MARGIN + proj.abs()) - proj;
        for (xi, wi) in x.iter_mut().zip(&w) {
            *xi += shift * wi;
        }
        samples.push(Sample::new(x, y));
    }
    let data = Dataset::new(samples, "weakly_convex_logistic", seed)?;
    // mean-loss smoothness: λ_max(XᵀX/n)/4 from the logistic part, 2ρ from the penalty
    let gram_top = top_eigenvalue_of_gram(&data, 200);
    let objective = BenchObjective {
        name: "weakly_convex_logistic".into(),
        model: Box::new(Logistic { d, rho }),
        lipschitz_l: None,
        weakly_convex_rho: Some(2.0 * rho),
        smoothness: Some(gram_top / 4.0 + 2.0 * rho),
        minimizer: None,
        shape: column_shape(d)?,
    };
    Ok((objective, data))
}

/// Power-iteration estimate of the largest eigenvalue of `XᵀX/n`.
fn top_eigenvalue_of_gram(data: &Dataset, iterations: usize) -> f64 {
    let d = data.feature_dim();
    let n = data.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let mut next = vec![0.0; d];
        for s in data.samples() {
            let proj: f64 = s.features.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (o, a) in next.iter_mut().zip(&s.features) {
                *o += proj * a / n;
            }
        }
        lambda = l2_norm(&next);
        if lambda == 0.0 {
            return 0.0;
        }
        v = next.into_iter().map(|x| x / lambda).collect();
    }
    lambda
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

struct Mlp {
    shape: LayeredShape,
    activation: Activation,
}

impl Mlp {
    /// Logits of one input; hidden layers apply the activation, the last
    /// layer is linear.
    fn logits(&self, t: &[f64], input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        let last = self.shape.num_layers() - 1;
        for (l, &(r, c)) in self.shape.layers().iter().enumerate() {
            let w = &t[self.shape.layer_range(l)];
            let mut out = vec![0.0; c];
            for i in 0..r {
                let hi = h[i];
                for (o, wij) in out.iter_mut().zip(&w[i * c..(i + 1) * c]) {
                    *o += hi * wij;
                }
            }
            if l < last {
                out.iter_mut().for_each(|o| *o = self.activation.apply(*o));
            }
            h = out;
        }
        h
    }
}

impl Model for Mlp {
    fn dim(&self) -> usize {
        self.shape.dim()
    }

    /// Cross-entropy of the softmax of the logits against class `label`.
    fn loss(&self, t: &[f64], x: &Sample) -> f64 {
        let z = self.logits(t, &x.features);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - z[x.label as usize]
    }
}

/// Bias-free multilayer perceptron with mean cross-entropy loss.
///
/// Layer `l` maps `layer_dims[l]` inputs to `layer_dims[l+1]` outputs with
/// weights stored row-major as a `layer_dims[l] × layer_dims[l+1]` matrix.
/// There is no gradient path; use ZO estimation.
pub fn make_tiny_mlp(layer_dims: &[usize], activation: Activation) -> Result<(BenchObjective, LayeredShape)> {
    if layer_dims.len() < 3 {
        return Err(Error::invalid(
            "an MLP needs an input, at least one hidden layer and an output",
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid("layer widths must be positive"));
    }
    let shape = LayeredShape::new(layer_dims.windows(2).map(|w| (w[0], w[1])).collect())?;
    if shape.dim() > 100_000 {
        return Err(Error::invalid(format!(
            "MLP has {} weights, limit is 100000",
            shape.dim()
        )));
    }
    let objective = BenchObjective {
        name: "tiny_mlp".into(),
        model: Box::new(Mlp {
            shape: shape.clone(),
            activation,
        }),
        lipschitz_l: None,
        weakly_convex_rho: None,
        smoothness: None,
        minimizer: None,
        shape: shape.clone(),
    };
    Ok((objective, shape))
}

/// Weights with entries `N(0, 1/fan_in)`.
pub fn mlp_init(shape: &LayeredShape, seed: u64) -> ParameterVector {
    let mut theta = Vec::with_capacity(shape.dim());
    for (l, &(r, c)) in shape.layers().iter().enumerate() {
        let scale = 1.0 / (r as f64).sqrt();
        theta.extend(
            normals(seed, Domain::Init, l as u64, r * c)
                .into_iter()
                .map(|z| scale * z),
        );
    }
    ParameterVector::new(theta).expect("normal draws are finite")
}

/// Standard normal inputs labelled by the argmax of a random linear teacher.
pub fn mlp_dataset(input_dim: usize, classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    if input_dim == 0 || classes < 2 || n == 0 {
        return Err(Error::invalid("need input_dim >= 1, classes >= 2 and n >= 1"));
    }
    let teacher = normals(seed, Domain::Objective, 0, input_dim * classes);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let x = normals(seed, Domain::Dataset, i as u64, input_dim);
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..classes {
            let score: f64 = (0..input_dim).map(|j| x[j] * teacher[j * classes + k]).sum();
            if score > best.1 {
                best = (k, score);
            }
        }
        samples.push(Sample::new(x, best.0 as f64));
    }
    Dataset::new(samples, "tiny_mlp", seed)
}

/// Full-batch gradient descent with the analytic gradient and step
/// `1/smoothness`; the reference optimizer for benchmark comparisons.
pub fn gradient_descent_oracle(
    objective: &BenchObjective,
    data: &Dataset,
    initial: &ParameterVector,
    steps: u64,
) -> Result<ParameterVector> {
    let smooth = objective
        .smoothness()
        .ok_or_else(|| Error::invalid(format!("{} has no smoothness bound", objective.name())))?;
    let eta = 1.0 / smooth;
    let mut theta = initial.as_slice().to_vec();
    for _ in 0..steps {
        let g = objective
            .dataset_gradient(&theta, data)
            .ok_or_else(|| Error::invalid(format!("{} has no analytic gradient", objective.name())))?;
        for (t, gi) in theta.iter_mut().zip(g) {
            *t -= eta * gi;
        }
    }
    ParameterVector::new(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_examples() {
        let q = make_quadratic(4, 1.0, 3).unwrap();
        let star = q.minimizer().unwrap().to_vec();
        let x = Sample::default();
        assert_eq!(q.loss(&star, &x), 0.0);
        let mut p = star.clone();
        p[0] += 1.0;
        assert_eq!(q.gradient(&p, &x).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);

        let q = make_quadratic(10, 100.0, 3).unwrap();
        let eig = log_spaced_eigenvalues(10, 100.0);
        assert_eq!(eig[0], 1.0);
        assert!((eig[9] - 100.0).abs() < 1e-12);
        for w in eig.windows(2) {
            assert!((w[1] / w[0] - 100f64.powf(1.0 / 9.0)).abs() < 1e-12);
        }
        assert!(q.gradient_self_test(&Dataset::unit(), 100, 1).unwrap() <= 1e-6);
    }

    #[test]
    fn lipschitz_norm_examples() {
        let f = make_lipschitz_norm(5, 2.5, 9).unwrap();
        let star = f.minimizer().unwrap().to_vec();
        let x = Sample::default();
        assert_eq!(f.loss(&star, &x), 0.0);
        let mut p = star.clone();
        p[0] += 1.0;
        assert_eq!(f.loss(&p, &x), 2.5);
        assert_eq!(f.lipschitz_hint(), Some(2.5));
        for k in 0..10_000 {
            let a = normals(1, Domain::Init, 2 * k, 5);
            let b = normals(1, Domain::Init, 2 * k + 1, 5);
            let dist = l2_norm(&a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>());
            assert!((f.loss(&a, &x) - f.loss(&b, &x)).abs() <= 2.5 * dist * (1.0 + 1e-12));
        }
        assert!(f.gradient_self_test(&Dataset::unit(), 100, 2).unwrap() <= 1e-6);
    }

    #[test]
    fn logistic_examples() {
        let (f, data) = make_weakly_convex_logistic(20, 64, 0.1, 4).unwrap();
        let zero = vec![0.0; 20];
        for s in data.samples() {
            assert_eq!(f.loss(&zero, s), std::f64::consts::LN_2);
        }
        assert_eq!(f.weakly_convex_rho(), Some(0.2));
        assert_eq!(data.samples().iter().filter(|s| s.label > 0.0).count(), 32);
        assert!(f.gradient_self_test(&data, 100, 5).unwrap() <= 1e-6);

        let (convex, _) = make_weakly_convex_logistic(3, 2, 0.0, 4).unwrap();
        assert_eq!(convex.weakly_convex_rho(), Some(0.0));
        assert!(make_weakly_convex_logistic(3, 3, 0.1, 0).is_err());
    }

    #[test]
    fn logistic_data_is_reproducible_and_separable() {
        let (_, a) = make_weakly_convex_logistic(6, 40, 0.1, 11).unwrap();
        let (_, b) = make_weakly_convex_logistic(6, 40, 0.1, 11).unwrap();
        assert_eq!(a, b);
        let w = {
            let mut w = normals(11, Domain::Objective, 0, 6);
            let n = l2_norm(&w);
            w.iter_mut().for_each(|x| *x /= n);
            w
        };
        for s in a.samples() {
            let m: f64 = s.features.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() * s.label;
            assert!(m >= LOGISTIC_MARGIN - 1e-12);
        }
    }

    #[test]
    fn convex_oracle_reaches_baseline() {
        let (f, data) = make_weakly_convex_logistic(20, 512, 0.0, 0).unwrap();
        let theta = gradient_descent_oracle(&f, &data, &ParameterVector::zeros(20), 2000).unwrap();
        let loss = f.dataset_loss(theta.as_slice(), &data);
        assert!(loss <= 0.05, "{loss}");
    }

    #[test]
    fn mlp_zero_weights_give_uniform_prediction() {
        let (f, shape) = make_tiny_mlp(&[4, 4, 3], Activation::Tanh).unwrap();
        assert_eq!(shape.dim(), 28);
        let data = mlp_dataset(4, 3, 8, 0).unwrap();
        for s in data.samples() {
            assert!((f.loss(&vec![0.0; 28], s) - 3f64.ln()).abs() < 1e-15);
        }
        assert!(!f.has_gradient());
        assert!(make_tiny_mlp(&[4, 3], Activation::Relu).is_err());
    }

    #[test]
    fn mlp_is_deterministic() {
        let (f, shape) = make_tiny_mlp(&[5, 6, 4, 2], Activation::Relu).unwrap();
        let theta = mlp_init(&shape, 3);
        assert_eq!(theta, mlp_init(&shape, 3));
        let data = mlp_dataset(5, 2, 4, 1).unwrap();
        for s in data.samples() {
            assert_eq!(
                f.loss(theta.as_slice(), s).to_bits(),
                f.loss(theta.as_slice(), s).to_bits()
            );
        }
        assert_eq!(data, mlp_dataset(5, 2, 4, 1).unwrap());
    }

    /// Hand-written backprop, used only as a test oracle.
    fn tanh_mlp_backprop(shape: &LayeredShape, t: &[f64], x: &Sample) -> Vec<f64> {
        let n = shape.num_layers();
        let mut acts = vec![x.features.clone()];
        for (l, &(r, c)) in shape.layers().iter().enumerate() {
            let w = &t[shape.layer_range(l)];
            let h = &acts[l];
            let mut z: Vec<f64> = (0..c).map(|j| (0..r).map(|i| h[i] * w[i * c + j]).sum()).collect();
            if l + 1 < n {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let logits = &acts[n];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        let mut delta: Vec<f64> = e.iter().map(|v| v / sum).collect();
        delta[x.label as usize] -= 1.0;
        let mut grad = vec![0.0; shape.dim()];
        for l in (0..n).rev() {
            let (r, c) = shape.layers()[l];
            let w = &t[shape.layer_range(l)];
            let h = &acts[l];
            for i in 0..r {
                for j in 0..c {
                    grad[shape.flat_index(l, i, j)] = h[i] * delta[j];
                }
            }
            if l > 0 {
                delta = (0..r)
                    .map(|i| {
                        let back: f64 = (0..c).map(|j| w[i * c + j] * delta[j]).sum();
                        back * (1.0 - h[i] * h[i])
                    })
                    .collect();
            }
        }
        grad
    }

    #[test]
    fn mlp_finite_differences_match_backprop() {
        let (f, shape) = make_tiny_mlp(&[4, 5, 3, 3], Activation::Tanh).unwrap();
        let mut theta = mlp_init(&shape, 8).into_vec();
        let data = mlp_dataset(4, 3, 3, 2).unwrap();
        let x = &data.samples()[1];
        let g = tanh_mlp_backprop(&shape, &theta, x);
        let pick = StreamKey::new(6, Domain::Init, 9, 0, 0).stream();
        for k in 0..20 {
            let i = pick.below(k, shape.dim() as u64) as usize;
            let h = 1e-5 * (1.0 + theta[i].abs());
            let t0 = theta[i];
            theta[i] = t0 + h;
            let up = f.loss(&theta, x);
            theta[i] = t0 - h;
            let down = f.loss(&theta, x);
            theta[i] = t0;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3),
                "coord {i}: {fd} vs {}",
                g[i]
            );
        }
    }
}
