//! RBF-kernel C-SVC trained by sequential minimal optimization.
//!
//! Each binary machine solves
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//! ```
//!
//! with `K(x, z) = exp(-gamma |x - z|^2)`. The working pair is the maximal
//! violating pair: the index with the largest `-y_i G_i` among those allowed
//! to move up, against the smallest among those allowed to move down, which
//! is the pair with the largest error gap `|E_i - E_j|` among KKT violators.
//! The solver stops once that gap is within the tolerance.
//!
//! Multiclass problems are split one-vs-one; for the pair `(a, b)` with
//! `a < b`, class `b` is the positive side.

use serde::{Deserialize, Serialize};

use super::{argmax, check_training_inputs, Classifier};
use crate::dataset::{FeatureTable, LabelVector};
use crate::error::{Error, Result};
use crate::par;

/// Box constraint used for the emotion-level runs.
pub const DEFAULT_C: f64 = 0.0538;

/// Above this many samples the solver computes kernel rows on demand
/// instead of holding the full matrix.
const FULL_KERNEL_LIMIT: usize = 2500;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `1 / D`
    Auto,
    /// `1 / (D * Var(X))` over every training value.
    Scale,
    Explicit(f64),
}

impl GammaMode {
    pub fn resolve(&self, x: &FeatureTable) -> Result<f64> {
        let d = x.n_cols();
        if d == 0 {
            return Err(Error::Validation("cannot resolve gamma for zero features".into()));
        }
        let gamma = match *self {
            GammaMode::Auto => 1.0 / d as f64,
            GammaMode::Scale => {
                let vals = x.values();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    1.0 / (d as f64 * var)
                } else {
                    1.0 / d as f64
                }
            }
            GammaMode::Explicit(g) => g,
        };
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Numeric(format!("gamma must be positive and finite, got {gamma}")));
        }
        Ok(gamma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: GammaMode,
    /// Stop once the maximal KKT violation gap is at most this.
    pub tolerance: f64,
    /// Iteration cap, in sweeps of `N` pair updates per binary problem.
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            gamma: GammaMode::Auto,
            tolerance: 1e-3,
            max_passes: 10_000,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be positive".into()));
        }
        if let GammaMode::Explicit(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum();
    (-gamma * d2).exp()
}

/// Row-major `n x dim` samples with an RBF kernel.
struct KernelRows<'a> {
    x: &'a [f64],
    dim: usize,
    gamma: f64,
    full: Option<Vec<f64>>,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [f64], dim: usize, gamma: f64) -> Result<Self> {
        let n = if dim == 0 { 0 } else { x.len() / dim };
        let mut rows = Self {
            x,
            dim,
            gamma,
            full: None,
        };
        if n <= FULL_KERNEL_LIMIT {
            let full: Vec<f64> = par::map_range(n, |i| rows.compute_row(i, n)).concat();
            if full.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite kernel value".into()));
            }
            rows.full = Some(full);
        }
        Ok(rows)
    }

    fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    fn compute_row(&self, i: usize, n: usize) -> Vec<f64> {
        let xi = self.sample(i);
        (0..n).map(|j| rbf(xi, self.sample(j), self.gamma)).collect()
    }

    fn row(&self, i: usize, n: usize) -> Result<std::borrow::Cow<'_, [f64]>> {
        match &self.full {
            Some(full) => Ok(std::borrow::Cow::Borrowed(&full[i * n..(i + 1) * n])),
            None => {
                let row = self.compute_row(i, n);
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite kernel value".into()));
                }
                Ok(std::borrow::Cow::Owned(row))
            }
        }
    }
}

/// Result of one binary dual solve.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DualSolution {
    /// Dual objective `sum a - 1/2 a'Qa`, evaluated from scratch.
    pub fn objective(&self, x: &[f64], dim: usize, y: &[f64], gamma: f64) -> f64 {
        dual_objective(x, dim, y, gamma, &self.alpha)
    }
}

/// Dual objective for arbitrary multipliers.
pub fn dual_objective(x: &[f64], dim: usize, y: &[f64], gamma: f64, alpha: &[f64]) -> f64 {
    let n = y.len();
    let sample = |i: usize| &x[i * dim..(i + 1) * dim];
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * rbf(sample(i), sample(j), gamma);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Solves one binary C-SVC dual. `x` is row-major `n x dim`, `y` holds ±1.
pub fn solve_binary_dual(
    x: &[f64],
    dim: usize,
    y: &[f64],
    c: f64,
    gamma: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<DualSolution> {
    let n = y.len();
    if x.len() != n * dim {
        return Err(Error::Validation("sample matrix does not match label count".into()));
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::Validation("binary SVM needs samples of both classes".into()));
    }
    let kernel = KernelRows::new(x, dim, gamma)?;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|i| rbf(kernel.sample(i), kernel.sample(i), gamma)).collect();

    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut i_sel = usize::MAX;
        let mut j_sel = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let can_up = if y[t] > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            let can_down = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
            if can_up && v > gmax {
                gmax = v;
                i_sel = t;
            }
            if can_down && v < gmin {
                gmin = v;
                j_sel = t;
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin <= tolerance {
            converged = true;
            break;
        }
        let (i, j) = (i_sel, j_sel);
        let ki = kernel.row(i, n)?;
        let kj = kernel.row(j, n)?;
        let q_ij = y[i] * y[j] * ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let d_i = alpha[i] - old_i;
        let d_j = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * d_i + y[j] * kj[t] * d_j);
        }
        iterations += 1;
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} pair updates without reaching tolerance {tolerance}");
    }

    // bias: mean over free multipliers, else the midpoint of the feasible range
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = is_upper(alpha[t]);
        let at_lower = is_lower(alpha[t]);
        if at_upper {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free_count += 1;
            free_sum += yg;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (upper + lower) / 2.0
    };
    if !rho.is_finite() {
        return Err(Error::Numeric("SMO produced a non-finite bias".into()));
    }
    Ok(DualSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
    })
}

/// Largest KKT violation of multipliers `alpha` with `bias` on the training
/// set, recomputing every decision value from scratch.
pub fn kkt_max_violation(x: &[f64], dim: usize, y: &[f64], alpha: &[f64], bias: f64, c: f64, gamma: f64) -> f64 {
    let n = y.len();
    let sample = |i: usize| &x[i * dim..(i + 1) * dim];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n)
            .filter(|&j| alpha[j] != 0.0)
            .map(|j| alpha[j] * y[j] * rbf(sample(j), sample(i), gamma))
            .sum::<f64>()
            + bias;
        let margin = y[i] * f;
        let violation = if alpha[i] <= 0.0 {
            1.0 - margin
        } else if alpha[i] >= c {
            margin - 1.0
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(violation);
    }
    worst
}

/// One trained pairwise machine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySvmModel {
    /// `(negative class, positive class)`
    pub class_pair: (usize, usize),
    pub dim: usize,
    /// Row-major `M x dim`.
    pub support_vectors: Vec<f64>,
    /// `a_i * y_i` for each support vector.
    pub dual_coeffs: Vec<f64>,
    /// Row index of each support vector in the training table.
    pub support_indices: Vec<usize>,
    pub bias: f64,
    pub gamma: f64,
    pub converged: bool,
}

impl BinarySvmModel {
    pub fn n_support(&self) -> usize {
        self.dual_coeffs.len()
    }

    pub fn support_vector(&self, k: usize) -> &[f64] {
        &self.support_vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// `sum_k coeff_k K(sv_k, x) + bias`; without the dimension check.
    pub fn decision_unchecked(&self, x: &[f64]) -> f64 {
        let mut f = self.bias;
        for (k, &coef) in self.dual_coeffs.iter().enumerate() {
            f += coef * rbf(self.support_vector(k), x, self.gamma);
        }
        f
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.decision_unchecked(x))
    }
}

pub fn svm_decision(model: &BinarySvmModel, x: &[f64]) -> Result<f64> {
    model.decision(x)
}

/// One-vs-one ensemble of binary machines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub config: SvmConfig,
    pub gamma: f64,
    pub n_classes: usize,
    pub dim: usize,
    pub binaries: Vec<BinarySvmModel>,
}

/// Per-class votes and oriented decision sums for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteTally {
    pub votes: Vec<f64>,
    pub margins: Vec<f64>,
}

impl SvmModel {
    /// A decision of exactly zero splits its vote between the two classes.
    pub fn tally(&self, x: &[f64]) -> VoteTally {
        let mut votes = vec![0.0; self.n_classes];
        let mut margins = vec![0.0; self.n_classes];
        for m in &self.binaries {
            let f = m.decision_unchecked(x);
            let (neg, pos) = m.class_pair;
            if f > 0.0 {
                votes[pos] += 1.0;
            } else if f < 0.0 {
                votes[neg] += 1.0;
            } else {
                votes[pos] += 0.5;
                votes[neg] += 0.5;
            }
            margins[pos] += f;
            margins[neg] -= f;
        }
        VoteTally { votes, margins }
    }

    /// Largest KKT violation over every binary machine, given the (already
    /// preprocessed) training data the model was fitted on.
    pub fn kkt_audit(&self, x: &FeatureTable, y: &LabelVector) -> Result<f64> {
        check_training_inputs(x, y)?;
        let mut worst: f64 = 0.0;
        for m in &self.binaries {
            let (neg, pos) = m.class_pair;
            let rows: Vec<usize> = (0..y.len())
                .filter(|&i| y.labels()[i] == neg || y.labels()[i] == pos)
                .collect();
            let mut alpha = vec![0.0; rows.len()];
            for (k, &sv) in m.support_indices.iter().enumerate() {
                let local = rows
                    .binary_search(&sv)
                    .map_err(|_| Error::Validation("support index outside its class pair".into()))?;
                alpha[local] = m.dual_coeffs[k].abs();
            }
            let xs: Vec<f64> = rows.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
            let ys: Vec<f64> = rows
                .iter()
                .map(|&i| if y.labels()[i] == pos { 1.0 } else { -1.0 })
                .collect();
            worst = worst.max(kkt_max_violation(&xs, x.n_cols(), &ys, &alpha, m.bias, self.config.c, m.gamma));
        }
        Ok(worst)
    }
}

impl Classifier for SvmModel {
    fn n_features(&self) -> usize {
        self.dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.scores_row(x))
    }

    /// `(votes + softmax(margins)) / (pairs + 1)`. A softmax term lies in
    /// (0, 1), so vote counts dominate and margins only break vote ties.
    fn scores_row(&self, x: &[f64]) -> Vec<f64> {
        let VoteTally { votes, margins } = self.tally(x);
        let top = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = margins.iter().map(|m| (m - top).exp()).collect();
        let z: f64 = exp.iter().sum();
        let mut scores: Vec<f64> = votes.iter().zip(&exp).map(|(v, e)| v + e / z).collect();
        let total: f64 = scores.iter().sum();
        for s in &mut scores {
            *s /= total;
        }
        scores
    }
}

/// Trains one machine per unordered class pair.
pub fn svm_train(x: &FeatureTable, y: &LabelVector, cfg: &SvmConfig) -> Result<SvmModel> {
    cfg.validate()?;
    check_training_inputs(x, y)?;
    let k = y.vocab().len();
    let counts = y.class_counts();
    if let Some(missing) = (0..k).find(|&c| counts[c] == 0) {
        return Err(Error::Validation(format!(
            "SVM training needs every class; {:?} has no samples",
            y.vocab().name(missing)
        )));
    }
    let gamma = cfg.gamma.resolve(x)?;
    let dim = x.n_cols();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let binaries = par::try_map_range(pairs.len(), |p| {
        let (neg, pos) = pairs[p];
        let rows: Vec<usize> = (0..y.len())
            .filter(|&i| y.labels()[i] == neg || y.labels()[i] == pos)
            .collect();
        let xs: Vec<f64> = rows.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
        let ys: Vec<f64> = rows
            .iter()
            .map(|&i| if y.labels()[i] == pos { 1.0 } else { -1.0 })
            .collect();
        let max_iter = cfg.max_passes.saturating_mul(rows.len().max(1));
        let sol = solve_binary_dual(&xs, dim, &ys, cfg.c, gamma, cfg.tolerance, max_iter)?;
        let mut support_vectors = Vec::new();
        let mut dual_coeffs = Vec::new();
        let mut support_indices = Vec::new();
        for (local, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                support_vectors.extend_from_slice(&xs[local * dim..(local + 1) * dim]);
                dual_coeffs.push(a * ys[local]);
                support_indices.push(rows[local]);
            }
        }
        Ok(BinarySvmModel {
            class_pair: (neg, pos),
            dim,
            support_vectors,
            dual_coeffs,
            support_indices,
            bias: sol.bias,
            gamma,
            converged: sol.converged,
        })
    })?;
    Ok(SvmModel {
        config: cfg.clone(),
        gamma,
        n_classes: k,
        dim,
        binaries,
    })
}
