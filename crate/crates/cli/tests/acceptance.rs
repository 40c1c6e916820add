//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p segclass-cli --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use segclass_core::classifiers::{
    svm_train, Classifier, FeaturesPerSplit, ForestConfig, GammaMode, KnnConfig, SvmConfig,
    SvmModel,
};
use segclass_core::classifiers::svm::solve_binary_dual;
use segclass_core::dataset::{FeatureTable, LabelVector};
use segclass_core::ensemble::{
    predict_from_probs, pseudo_label_round, self_train, soft_vote, EnsembleConfig, ProbabilityMatrix,
    PseudoLabelConfig,
};
use segclass_core::feature_selection::{anova_f_scores, SelectionMode};
use segclass_core::metrics::{confusion, score, ConfusionMatrix, DEFAULT_COMBINED_WEIGHTS};
use segclass_core::par::run_single_threaded;
use segclass_core::pipeline::{train_pipeline, ClassifierConfig, PipelineModel, PipelineSpec};
use segclass_core::synthetic::{gaussian_blobs, numeric_vocab, BlobSpec, SyntheticTask};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- oracles

struct BinaryProblem {
    x: Vec<f64>,
    dim: usize,
    y: Vec<f64>,
    c: f64,
    gamma: f64,
}

impl BinaryProblem {
    fn random(seed: u64, c: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=6);
        let dim = rng.gen_range(1..=3);
        let gamma = rng.gen_range(0.3..2.0);
        loop {
            let x: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
                return Self { x, dim, y, c, gamma };
            }
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn kernel(&self, i: usize, j: usize) -> f64 {
        let a = &self.x[i * self.dim..(i + 1) * self.dim];
        let b = &self.x[j * self.dim..(j + 1) * self.dim];
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-self.gamma * d2).exp()
    }

    fn q(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.y[i] * self.y[j] * self.kernel(i, j))
    }

    fn objective(&self, q: &DMatrix<f64>, alpha: &[f64]) -> f64 {
        let n = alpha.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += alpha[i] * alpha[j] * q[(i, j)];
            }
        }
        alpha.iter().sum::<f64>() - 0.5 * quad
    }

    /// Fills in the last multiplier from the equality constraint.
    fn complete_into(&self, head: &[f64], full: &mut [f64]) -> bool {
        let n = self.n();
        let s: f64 = head.iter().zip(&self.y).map(|(a, y)| a * y).sum();
        let last = -self.y[n - 1] * s;
        if !(-1e-15..=self.c + 1e-15).contains(&last) {
            return false;
        }
        full[..n - 1].copy_from_slice(head);
        full[n - 1] = last.clamp(0.0, self.c);
        true
    }

    /// Brute-force maximization: a full grid over the first n-1 multipliers,
    /// then a pattern search over every {-1,0,1} move at halving step sizes.
    fn grid_maximum(&self) -> f64 {
        let q = self.q();
        let m = self.n() - 1;
        let points = ((200_000f64).powf(1.0 / m as f64).floor() as usize).clamp(3, 201);
        let step = self.c / (points - 1) as f64;
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut idx = vec![0usize; m];
        let mut head = vec![0.0; m];
        let mut full = vec![0.0; m + 1];
        loop {
            for (h, &k) in head.iter_mut().zip(&idx) {
                *h = k as f64 * step;
            }
            if self.complete_into(&head, &mut full) {
                let f = self.objective(&q, &full);
                if best.as_ref().map_or(true, |(b, _)| f > *b) {
                    best = Some((f, head.clone()));
                }
            }
            let mut d = 0;
            while d < m {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == m {
                break;
            }
        }
        let (mut f_best, mut head) = best.expect("alpha = 0 is always feasible");
        let moves: Vec<Vec<i32>> = (0..3usize.pow(m as u32))
            .map(|mut code| {
                (0..m)
                    .map(|_| {
                        let v = (code % 3) as i32 - 1;
                        code /= 3;
                        v
                    })
                    .collect()
            })
            .filter(|mv: &Vec<i32>| mv.iter().any(|&v| v != 0))
            .collect();
        let mut h = step;
        while h > 1e-11 * self.c.max(1.0) {
            let mut improved = false;
            for mv in &moves {
                let cand: Vec<f64> = head.iter().zip(mv).map(|(a, &d)| a + d as f64 * h).collect();
                if cand.iter().any(|&a| !(0.0..=self.c).contains(&a)) {
                    continue;
                }
                if self.complete_into(&cand, &mut full) {
                    let f = self.objective(&q, &full);
                    if f > f_best {
                        f_best = f;
                        head = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                h /= 2.0;
            }
        }
        f_best
    }

    /// Exact optimum by enumerating every lower/upper/free status
    /// assignment and solving the stationarity system of each.
    fn active_set_maximum(&self) -> (f64, Vec<f64>, Vec<bool>) {
        let n = self.n();
        let q = self.q();
        let mut best: Option<(f64, Vec<f64>, Vec<bool>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut status = vec![0u8; n];
            let mut c2 = code;
            for s in status.iter_mut() {
                *s = (c2 % 3) as u8;
                c2 /= 3;
            }
            let mut alpha: Vec<f64> = status.iter().map(|&s| if s == 1 { self.c } else { 0.0 }).collect();
            let free: Vec<usize> = (0..n).filter(|&i| status[i] == 2).collect();
            let bound_sum: f64 = (0..n).filter(|&i| status[i] != 2).map(|i| alpha[i] * self.y[i]).sum();
            if free.is_empty() {
                if bound_sum.abs() > 1e-12 {
                    continue;
                }
            } else {
                let f = free.len();
                let mut a = DMatrix::zeros(f + 1, f + 1);
                let mut rhs = DVector::zeros(f + 1);
                for (r, &i) in free.iter().enumerate() {
                    for (s, &j) in free.iter().enumerate() {
                        a[(r, s)] = q[(i, j)];
                    }
                    a[(r, f)] = self.y[i];
                    a[(f, r)] = self.y[i];
                    let fixed: f64 = (0..n).filter(|&j| status[j] != 2).map(|j| q[(i, j)] * alpha[j]).sum();
                    rhs[r] = 1.0 - fixed;
                }
                rhs[f] = -bound_sum;
                let Some(sol) = a.lu().solve(&rhs) else { continue };
                if free.iter().enumerate().any(|(r, _)| !(sol[r] > 1e-12 && sol[r] < self.c - 1e-12)) {
                    continue;
                }
                for (r, &i) in free.iter().enumerate() {
                    alpha[i] = sol[r];
                }
            }
            let obj = self.objective(&q, &alpha);
            if best.as_ref().map_or(true, |(b, _, _)| obj > *b) {
                best = Some((obj, alpha, status.iter().map(|&s| s == 2).collect()));
            }
        }
        best.expect("alpha = 0 is always a candidate")
    }

    /// Training-set signs of the decision function for given multipliers,
    /// with the bias taken from free multipliers or else the feasible midpoint.
    fn decisions(&self, alpha: &[f64], free: &[bool]) -> Vec<f64> {
        let n = self.n();
        let g: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| alpha[j] * self.y[j] * self.kernel(j, i)).sum())
            .collect();
        let free_idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let b = if !free_idx.is_empty() {
            free_idx.iter().map(|&i| self.y[i] - g[i]).sum::<f64>() / free_idx.len() as f64
        } else {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..n {
                let at_upper = alpha[i] >= self.c;
                match (self.y[i] > 0.0, at_upper) {
                    (true, false) | (false, true) => lo = lo.max(self.y[i] - g[i]),
                    (false, false) | (true, true) => hi = hi.min(self.y[i] - g[i]),
                }
            }
            (lo + hi) / 2.0
        };
        g.iter().map(|gi| gi + b).collect()
    }

    fn table(&self) -> (FeatureTable, LabelVector) {
        let n = self.n();
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let names: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        let labels: Vec<usize> = self.y.iter().map(|&v| usize::from(v > 0.0)).collect();
        (
            FeatureTable::new(ids.clone(), names, self.x.clone()).unwrap(),
            LabelVector::new(ids, labels, numeric_vocab(2).unwrap()).unwrap(),
        )
    }

    fn config(&self, tolerance: f64) -> SvmConfig {
        SvmConfig {
            c: self.c,
            gamma: GammaMode::Explicit(self.gamma),
            tolerance,
            max_passes: 100_000,
        }
    }
}

fn suite() -> Vec<BinaryProblem> {
    (0..50).map(|p| BinaryProblem::random(1_000 + p, [0.1, 1.0, 10.0][p as usize % 3])).collect()
}

/// Textbook one-way ANOVA F: between-group mean square over within-group
/// mean square, two passes over the data.
fn f_oracle(values: &[f64], groups: &[usize], k: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0.0; k];
    for (&v, &g) in values.iter().zip(groups) {
        sums[g] += v;
        counts[g] += 1.0;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / c).collect();
    let ssb: f64 = (0..k).map(|g| counts[g] * (means[g] - mean).powi(2)).sum();
    let ssw: f64 = values.iter().zip(groups).map(|(&v, &g)| (v - means[g]).powi(2)).sum();
    (ssb / (k as f64 - 1.0)) / (ssw / (n - k as f64))
}

fn column_table(columns: &[Vec<f64>]) -> FeatureTable {
    let n = columns[0].len();
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    let names = (0..columns.len()).map(|j| format!("c{j}")).collect();
    let values = (0..n).flat_map(|i| columns.iter().map(move |c| c[i])).collect();
    FeatureTable::new(ids, names, values).unwrap()
}

fn label_vector(labels: &[usize], k: usize) -> LabelVector {
    let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
    LabelVector::new(ids, labels.to_vec(), numeric_vocab(k).unwrap()).unwrap()
}

// ---------------------------------------------------------------- criteria

fn ac1_smo_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst_obj: f64 = 0.0;
    let mut worst_grid: f64 = 0.0;
    for (p, prob) in suite().iter().enumerate() {
        let (exact, alpha, free) = prob.active_set_maximum();
        let grid = prob.grid_maximum();
        let sol = ok(solve_binary_dual(&prob.x, prob.dim, &prob.y, prob.c, prob.gamma, 1e-12, 10_000_000))?;
        ensure!(sol.converged, "problem {p}: SMO did not converge");
        let smo = prob.objective(&prob.q(), &sol.alpha);
        ensure!(
            (smo - grid).abs() <= 1e-6,
            "problem {p}: SMO objective {smo} vs grid maximum {grid}"
        );
        ensure!(
            (grid - exact).abs() <= 1e-6,
            "problem {p}: grid maximum {grid} vs active-set optimum {exact}"
        );
        worst_obj = worst_obj.max((smo - grid).abs());
        worst_grid = worst_grid.max((grid - exact).abs());

        let (x, y) = prob.table();
        let model = ok(svm_train(&x, &y, &prob.config(1e-12)))?;
        let predicted = ok(model.predict(&x))?;
        let oracle: Vec<usize> = prob
            .decisions(&alpha, &free)
            .iter()
            .map(|&f| usize::from(f > 0.0))
            .collect();
        ensure!(
            predicted == oracle,
            "problem {p}: SMO predicts {predicted:?}, oracle {oracle:?}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "suite took {secs:.1} s");
    Ok(format!(
        "50 problems, max |smo - grid| = {worst_obj:.1e}, max |grid - exact| = {worst_grid:.1e}, {secs:.2} s"
    ))
}

fn audit(model: &SvmModel, x: &FeatureTable, y: &LabelVector) -> Result<f64, String> {
    ok(model.kkt_audit(x, y))
}

fn ac2_kkt_audit() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut machines = 0;
    for (p, prob) in suite().iter().enumerate() {
        let (x, y) = prob.table();
        for tol in [1e-3, 1e-12] {
            let model = ok(svm_train(&x, &y, &prob.config(tol)))?;
            let v = audit(&model, &x, &y)?;
            ensure!(v <= 1e-3, "problem {p} (solver tolerance {tol}): violation {v:.3e}");
            worst = worst.max(v);
            machines += model.binaries.len();
        }
    }
    for seed in 0..10 {
        let task = ok(gaussian_blobs(&BlobSpec {
            n_classes: 3 + seed as usize % 3,
            n_train: 90,
            n_test: 1,
            dims: 6,
            informative: 3,
            separation: 1.0,
            seed,
        }))?;
        for c in [0.0538, 1.0, 10.0] {
            let cfg = SvmConfig { c, ..SvmConfig::default() };
            let model = ok(svm_train(&task.train_x, &task.train_y, &cfg))?;
            let v = audit(&model, &task.train_x, &task.train_y)?;
            ensure!(v <= 1e-3, "blob task {seed}, C={c}: violation {v:.3e}");
            worst = worst.max(v);
            machines += model.binaries.len();
        }
    }
    let spec = PipelineSpec::new(
        Some(SelectionMode::TopK { k: 20 }),
        ClassifierConfig::Svm(SvmConfig::default()),
    );
    let task = ok(gaussian_blobs(&BlobSpec { seed: 11, ..BlobSpec::default() }))?;
    let pm = ok(train_pipeline(&task.train_x, &task.train_y, &spec))?;
    let prepared = ok(pm.prepare(&task.train_x))?;
    if let segclass_core::pipeline::TrainedClassifier::Svm(m) = &pm.classifier {
        let v = audit(m, &prepared, &task.train_y)?;
        ensure!(v <= 1e-3, "full synthetic pipeline: violation {v:.3e}");
        worst = worst.max(v);
        machines += m.binaries.len();
    }
    Ok(format!("{machines} binary machines, worst violation {worst:.2e}"))
}

fn ac3_anova() -> Outcome {
    let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let groups = [0, 0, 0, 1, 1, 1];
    let oracle = f_oracle(&values, &groups, 2);
    ensure!((oracle - 13.5).abs() <= 1e-9, "oracle gives {oracle}");
    let f = ok(anova_f_scores(&column_table(&[values.to_vec()]), &label_vector(&groups, 2)))?[0];
    ensure!((f - 13.5).abs() <= 1e-9, "fixture scores {f}, expected 13.5");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for t in 0..100 {
        let n = 30;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let col: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 * rng.gen_range(0.0..1.0) + rng.gen_range(-2.0..2.0))
            .collect();
        let shift = rng.gen_range(-100.0..100.0);
        let scale = rng.gen_range(0.01..100.0);
        let moved: Vec<f64> = col.iter().map(|v| scale * v + shift).collect();
        let y = label_vector(&labels, 3);
        let base = ok(anova_f_scores(&column_table(&[col.clone()]), &y))?[0];
        let other = ok(anova_f_scores(&column_table(&[moved]), &y))?[0];
        let reference = f_oracle(&col, &labels, 3);
        let rel = ((other - base) / base).abs();
        ensure!(rel <= 1e-6, "column {t}: F {base} vs {other} after x -> {scale}x + {shift}");
        ensure!(
            ((base - reference) / reference).abs() <= 1e-9,
            "column {t}: F {base} vs textbook {reference}"
        );
        worst = worst.max(rel);
    }
    Ok(format!("fixture F = {f}, worst relative drift {worst:.1e} over 100 columns"))
}

fn ac4_selection_recovery() -> Outcome {
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let n = 90;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let informative = rng.gen_range(0..100);
        let columns: Vec<Vec<f64>> = (0..100)
            .map(|j| {
                labels
                    .iter()
                    .map(|&l| if j == informative { l as f64 + noise.sample(&mut rng) } else { rng.gen_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let f = ok(anova_f_scores(&column_table(&columns), &label_vector(&labels, 3)))?;
        let top = (0..100).fold(0, |b, j| if f[j] > f[b] { j } else { b });
        if top == informative {
            hits += 1;
        }
    }
    ensure!(hits >= 99, "informative column ranked first in {hits}/100 trials");
    Ok(format!("{hits}/100 trials"))
}

fn ac5_metrics() -> Outcome {
    let cm = ConfusionMatrix {
        vocab: numeric_vocab(2).unwrap(),
        counts: vec![vec![1, 1], vec![0, 2]],
    };
    let r = ok(score(&cm, DEFAULT_COMBINED_WEIGHTS))?;
    ensure!(r.uar == 0.75, "uar = {}", r.uar);
    ensure!(r.micro_f1 == 0.75, "micro_f1 = {}", r.micro_f1);
    let reference = label_vector(&[0, 0, 1, 1], 2);
    let predicted = label_vector(&[0, 1, 1, 1], 2);
    ensure!(
        ok(confusion(&reference, &predicted))?.counts == cm.counts,
        "tallying the fixture labels does not give [[1,1],[0,2]]"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..1000 {
        let k = rng.gen_range(2..=6);
        let mut counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.gen_range(0..20)).collect()).collect();
        counts[0][0] += 1;
        let total: u64 = counts.iter().flatten().sum();
        let correct: u64 = (0..k).map(|c| counts[c][c]).sum();
        let accuracy = correct as f64 / total as f64;
        let cm = ConfusionMatrix {
            vocab: numeric_vocab(k).unwrap(),
            counts,
        };
        let r = ok(score(&cm, DEFAULT_COMBINED_WEIGHTS))?;
        ensure!(r.micro_f1 == accuracy, "matrix {t}: micro_f1 {} vs accuracy {accuracy}", r.micro_f1);
    }
    Ok("fixture uar = micro_f1 = 0.75; micro_f1 == accuracy on 1000 matrices".into())
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

fn ac6_ensemble() -> Outcome {
    let vocab = numeric_vocab(2).unwrap();
    let m = |row: [f64; 2]| ProbabilityMatrix::from_rows(vec!["s".into()], vocab.clone(), vec![row.to_vec()]).unwrap();
    let fused = ok(soft_vote(&[m([0.8, 0.2]), m([0.4, 0.6])], &EnsembleConfig::default()))?;
    let row = fused.row(0);
    // 0.6 is not a double; the exact mean of the stored inputs lies halfway
    // between the two doubles around it, so either neighbour is exact.
    ensure!(
        ulps(row[0], 0.6) <= 1 && ulps(row[1], 0.4) <= 1,
        "fused row {row:?}, expected (0.6, 0.4)"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for t in 0..1000 {
        let k = rng.gen_range(2..=5);
        let models = rng.gen_range(2..=4);
        let n = rng.gen_range(1..=8);
        let vocab = numeric_vocab(k).unwrap();
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let inputs: Vec<ProbabilityMatrix> = (0..models)
            .map(|_| {
                let rows = (0..n)
                    .map(|_| {
                        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                        let s: f64 = raw.iter().sum();
                        raw.iter().map(|v| v / s).collect()
                    })
                    .collect();
                ProbabilityMatrix::from_rows(ids.clone(), vocab.clone(), rows).unwrap()
            })
            .collect();
        let weights: Vec<f64> = (0..models).map(|_| rng.gen_range(0.05..1.0)).collect();
        let factor = [0.5, 2.0, 10.0, 1e3][t % 4];
        let a = predict_from_probs(&ok(soft_vote(&inputs, &EnsembleConfig { weights: weights.clone() }))?);
        let scaled = EnsembleConfig {
            weights: weights.iter().map(|w| w * factor).collect(),
        };
        let b = predict_from_probs(&ok(soft_vote(&inputs, &scaled))?);
        ensure!(a.labels() == b.labels(), "row set {t}: argmax changed under weight scale {factor}");
    }
    Ok(format!("fused row ({:?}, {:?}); argmax stable on 1000 row sets", row[0], row[1]))
}

fn blob_task() -> SyntheticTask {
    gaussian_blobs(&BlobSpec { seed: 2024, ..BlobSpec::default() }).unwrap()
}

fn micro_f1(model: &PipelineModel, task: &SyntheticTask) -> Result<f64, String> {
    let predicted = ok(model.predict(&task.test_x))?;
    Ok(ok(score(&ok(confusion(&task.test_y, &predicted))?, DEFAULT_COMBINED_WEIGHTS))?.micro_f1)
}

fn ac7_end_to_end() -> Outcome {
    let task = blob_task();
    ensure!(
        task.train_x.n_rows() == 600 && task.test_x.n_rows() == 200 && task.train_x.n_cols() == 500,
        "unexpected synthetic shape"
    );
    let select = Some(SelectionMode::TopK { k: 20 });
    let svm = SvmConfig::default();
    ensure!(svm.c == 0.0538 && svm.gamma == GammaMode::Auto, "svm defaults changed");
    let (svm_f1, secs) = run_single_threaded(|| -> Result<(f64, f64), String> {
        let start = Instant::now();
        let model = ok(train_pipeline(&task.train_x, &task.train_y, &PipelineSpec::new(select, ClassifierConfig::Svm(svm))))?;
        let f1 = micro_f1(&model, &task)?;
        Ok((f1, start.elapsed().as_secs_f64()))
    })?;
    ensure!(svm_f1 >= 0.90, "svm micro_f1 {svm_f1:.4} < 0.90");
    ensure!(secs < 60.0, "svm pipeline took {secs:.1} s single-threaded");
    let forest = ForestConfig { max_depth: 7.0, seed: 1, ..ForestConfig::default() };
    let model = ok(train_pipeline(&task.train_x, &task.train_y, &PipelineSpec::new(select, ClassifierConfig::Forest(forest))))?;
    let forest_f1 = micro_f1(&model, &task)?;
    ensure!(forest_f1 >= 0.85, "forest micro_f1 {forest_f1:.4} < 0.85");
    Ok(format!(
        "svm micro_f1 {svm_f1:.4} in {secs:.2} s single-threaded, forest micro_f1 {forest_f1:.4}"
    ))
}

fn pseudo_task() -> SyntheticTask {
    gaussian_blobs(&BlobSpec {
        n_train: 150,
        n_test: 300,
        dims: 20,
        informative: 8,
        separation: 1.0,
        seed: 77,
        ..BlobSpec::default()
    })
    .unwrap()
}

fn forest_spec(seed: u64) -> PipelineSpec {
    PipelineSpec::new(
        None,
        ClassifierConfig::Forest(ForestConfig {
            n_trees: 50,
            seed,
            features_per_split: FeaturesPerSplit::Sqrt,
            ..ForestConfig::default()
        }),
    )
}

fn ac8_pseudo_label() -> Outcome {
    let task = pseudo_task();
    let cfg = PseudoLabelConfig { confidence_threshold: 0.9, max_rounds: 2 };
    let model = ok(train_pipeline(&task.train_x, &task.train_y, &forest_spec(3)))?;
    let mut scores = ok(model.scores(&task.test_x))?;
    // pin one row exactly on the threshold and one just below it
    let mut rows: Vec<Vec<f64>> = scores.rows().map(<[f64]>::to_vec).collect();
    rows[0] = vec![0.9, 0.1, 0.0];
    rows[1] = vec![0.1, 0.89, 0.01];
    scores = ok(ProbabilityMatrix::from_rows(scores.segment_ids().to_vec(), scores.vocab().clone(), rows))?;

    let step = ok(pseudo_label_round(&task.train_x, &task.train_y, &task.test_x, &scores, &cfg, 1))?;
    let mut expected_ids = Vec::new();
    let mut expected_labels = Vec::new();
    for (i, row) in scores.rows().enumerate() {
        let top = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        if row[top] >= 0.9 {
            expected_ids.push(scores.segment_ids()[i].clone());
            expected_labels.push(top);
        }
    }
    ensure!(expected_ids.first() == Some(&scores.segment_ids()[0]), "threshold row not selected by the oracle");
    ensure!(!expected_ids.contains(&scores.segment_ids()[1]), "below-threshold row selected by the oracle");
    ensure!(
        step.report.added_ids == expected_ids,
        "added {} segments, oracle expects {}",
        step.report.added_ids.len(),
        expected_ids.len()
    );
    let n0 = task.train_x.n_rows();
    ensure!(step.features.n_rows() == n0 + expected_ids.len(), "augmented feature count");
    ensure!(step.labels.labels()[n0..] == expected_labels[..], "appended labels differ from argmax");
    for (k, id) in expected_ids.iter().enumerate() {
        let src = task.test_x.segment_ids().iter().position(|s| s == id).unwrap();
        ensure!(step.features.row(n0 + k) == task.test_x.row(src), "appended features for {id} differ");
    }
    let retrained = ok(train_pipeline(&step.features, &step.labels, &forest_spec(3)))?;
    ok(retrained.predict(&task.test_x))?;

    let leaky = task.test_x.concat_rows(&task.train_x.select_rows(&[0]));
    let leaky = ok(leaky)?;
    let leak_scores = ok(model.scores(&leaky))?;
    match pseudo_label_round(&task.train_x, &task.train_y, &leaky, &leak_scores, &cfg, 1) {
        Err(e) if e.to_string().contains(&task.train_x.segment_ids()[0]) => {}
        Err(e) => return Err(format!("leakage rejected with an unhelpful message: {e}")),
        Ok(_) => return Err("leakage guard accepted an overlapping segment id".into()),
    }

    let run = ok(self_train(&task.train_x, &task.train_y, &task.test_x, &cfg, |x, y, pool| {
        train_pipeline(x, y, &forest_spec(3))?.scores(pool)
    }))?;
    ensure!(run.reports.len() == 2, "self-training stopped after {} round(s)", run.reports.len());
    let first: HashSet<&String> = run.reports[0].added_ids.iter().collect();
    ensure!(
        run.reports[1].added_ids.iter().all(|id| !first.contains(id)),
        "a segment was added in both rounds"
    );
    ensure!(run.features.n_rows() == n0 + first.len() + run.reports[1].added_ids.len(), "labeled set size");

    let cli = pseudo_label_cli()?;
    Ok(format!(
        "round sizes {} and {}, threshold row kept, leakage rejected, retrain ok; {cli}",
        run.reports[0].segments_added, run.reports[1].segments_added
    ))
}

// ---------------------------------------------------------------- CLI runs

fn segclass(args: &[&str]) -> Result<i32, String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_segclass"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output())?;
    Ok(out.status.code().unwrap_or(-1))
}

fn segclass_ok(args: &[&str]) -> Result<(), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_segclass"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output())?;
    ensure!(
        out.status.success(),
        "segclass {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn write_synthetic(dir: &Path, seed: u64, dims: usize, informative: usize) -> Result<PathBuf, String> {
    let data = dir.join("data");
    let cfg = dir.join("synthetic.toml");
    ok(fs::write(&cfg, format!("seed = {seed}\n[synthetic]\ntrain = 150\ntest = 120\ndims = {dims}\ninformative = {informative}\n")))?;
    segclass_ok(&["gen-synthetic", "--config", p(&cfg), "--out", p(&data)])?;
    Ok(data)
}

fn pseudo_label_cli() -> Result<String, String> {
    let tmp = ok(tempfile::tempdir())?;
    let dir = tmp.path();
    let data = write_synthetic(dir, 9, 20, 8)?;
    let config = |name: &str, feats: &Path, labels: &Path, unlabeled: &Path| -> Result<PathBuf, String> {
        let path = dir.join(name);
        ok(fs::write(
            &path,
            format!(
                "task = \"valence\"\nseed = 5\n[data]\ntrain_features = {:?}\ntrain_labels = {:?}\nunlabeled_features = {:?}\n\
                 [forest]\nn_trees = 40\n[pseudo_label]\nthreshold = 0.9\nmax_rounds = 2\n",
                feats, labels, unlabeled
            ),
        ))?;
        Ok(path)
    };
    let r1 = dir.join("round1");
    let r2 = dir.join("round2");
    let c1 = config("r1.toml", &data.join("train_features.csv"), &data.join("train_labels.csv"), &data.join("test_features.csv"))?;
    segclass_ok(&["pseudo-label", "--config", p(&c1), "--out", p(&r1)])?;
    let c2 = config("r2.toml", &r1.join("augmented_features.csv"), &r1.join("augmented_labels.csv"), &data.join("test_features.csv"))?;
    segclass_ok(&["pseudo-label", "--config", p(&c2), "--out", p(&r2)])?;
    let c3 = config("r3.toml", &r2.join("augmented_features.csv"), &r2.join("augmented_labels.csv"), &data.join("test_features.csv"))?;
    let code = segclass(&["pseudo-label", "--config", p(&c3), "--out", p(&dir.join("round3"))])?;
    ensure!(code == 2, "third round past max_rounds exited {code}, expected 2");
    let leak = config("leak.toml", &data.join("train_features.csv"), &data.join("train_labels.csv"), &data.join("train_features.csv"))?;
    let code = segclass(&["pseudo-label", "--config", p(&leak), "--out", p(&dir.join("leak"))])?;
    ensure!(code == 3, "leaking pool exited {code}, expected 3");

    let labels = ok(fs::read_to_string(r2.join("augmented_labels.csv")))?;
    let mut by_round: BTreeMap<String, HashSet<String>> = BTreeMap::new();
    for line in labels.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let ids = by_round.entry(cells[2].to_string()).or_default();
        ensure!(ids.insert(cells[0].to_string()), "segment {} listed twice", cells[0]);
    }
    let one = by_round.get("pseudo:1").cloned().unwrap_or_default();
    let two = by_round.get("pseudo:2").cloned().unwrap_or_default();
    ensure!(one.is_disjoint(&two), "CLI rounds overlap");
    ensure!(!one.is_empty(), "CLI round 1 added nothing");
    Ok(format!("CLI rounds added {} and {}", one.len(), two.len()))
}

fn ac9_persistence() -> Outcome {
    let task = gaussian_blobs(&BlobSpec {
        n_train: 150,
        n_test: 100,
        dims: 25,
        informative: 6,
        seed: 99,
        ..BlobSpec::default()
    })
    .unwrap();
    let tmp = ok(tempfile::tempdir())?;
    let specs = [
        PipelineSpec::new(Some(SelectionMode::TopK { k: 10 }), ClassifierConfig::Svm(SvmConfig::default())),
        PipelineSpec::new(
            Some(SelectionMode::Percentile { percent: 40.0 }),
            ClassifierConfig::Forest(ForestConfig { n_trees: 30, seed: 4, ..ForestConfig::default() }),
        ),
        PipelineSpec::new(None, ClassifierConfig::Knn(KnnConfig::default())),
    ];
    let mut names = Vec::new();
    for spec in &specs {
        let model = ok(train_pipeline(&task.train_x, &task.train_y, spec))?;
        let path = tmp.path().join(format!("{}.json", model.model_type()));
        ok(model.save(&path))?;
        let loaded = ok(PipelineModel::load(&path))?;
        let mem = (ok(model.predict(&task.test_x))?.to_csv_string(), ok(model.scores(&task.test_x))?.to_csv_string());
        let disk = (ok(loaded.predict(&task.test_x))?.to_csv_string(), ok(loaded.scores(&task.test_x))?.to_csv_string());
        ensure!(mem.0 == disk.0, "{}: predictions differ after reload", model.model_type());
        ensure!(mem.1 == disk.1, "{}: probabilities differ after reload", model.model_type());
        names.push(model.model_type());
    }
    Ok(format!("{} byte-identical on 100 segments", names.join(", ")))
}

fn run_pipeline(root: &Path) -> Result<(), String> {
    let data = write_synthetic(root, 21, 60, 10)?;
    let common = format!(
        "task = \"arousal\"\nseed = 13\n[data]\ntrain_features = {:?}\ntrain_labels = {:?}\ndevel_features = {:?}\n\
         devel_labels = {:?}\ntest_features = {:?}\nunlabeled_features = {:?}\n[selection]\nmode = \"top_k\"\nk = 15\n",
        data.join("train_features.csv"),
        data.join("train_labels.csv"),
        data.join("test_features.csv"),
        data.join("test_labels.csv"),
        data.join("test_features.csv"),
        data.join("test_features.csv"),
    );
    let svm = root.join("svm.toml");
    ok(fs::write(&svm, format!("{common}[svm]\n")))?;
    let forest = root.join("forest.toml");
    ok(fs::write(&forest, format!("{common}[forest]\nn_trees = 40\n[pseudo_label]\nthreshold = 0.9\n")))?;
    let ens = root.join("ensemble.toml");
    ok(fs::write(
        &ens,
        format!(
            "task = \"arousal\"\n[data]\ndevel_labels = {:?}\n[ensemble]\nprobability_files = [{:?}, {:?}]\nweights = [0.5, 0.5]\n",
            data.join("test_labels.csv"),
            root.join("out/svm/test_probabilities.csv"),
            root.join("out/forest/test_probabilities.csv")
        ),
    ))?;
    let out = root.join("out");
    segclass_ok(&["select", "--config", p(&svm), "--out", p(&out.join("select"))])?;
    segclass_ok(&["train", "--config", p(&svm), "--out", p(&out.join("svm"))])?;
    segclass_ok(&["train", "--config", p(&forest), "--out", p(&out.join("forest"))])?;
    segclass_ok(&["predict", "--config", p(&forest), "--out", p(&out.join("forest_predict")), "--model", p(&out.join("forest/model.json"))])?;
    segclass_ok(&["ensemble", "--config", p(&ens), "--out", p(&out.join("ensemble"))])?;
    segclass_ok(&[
        "evaluate",
        "--config",
        p(&ens),
        "--out",
        p(&out.join("evaluate")),
        "--predictions",
        p(&out.join("ensemble/ensemble_predictions.csv")),
    ])?;
    segclass_ok(&["pseudo-label", "--config", p(&forest), "--out", p(&out.join("pseudo"))])?;
    Ok(())
}

fn collect_files(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in ok(fs::read_dir(&dir))? {
            let path = ok(entry)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e != "toml") {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), ok(fs::read(&path))?);
            }
        }
    }
    Ok(files)
}

fn ac10_determinism() -> Outcome {
    let a = ok(tempfile::tempdir())?;
    let b = ok(tempfile::tempdir())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let fa = collect_files(a.path())?;
    let fb = collect_files(b.path())?;
    ensure!(
        fa.keys().collect::<Vec<_>>() == fb.keys().collect::<Vec<_>>(),
        "runs wrote different file sets"
    );
    // configs embed the temp root, so compare outputs only
    for (name, bytes) in &fa {
        ensure!(fb[name] == *bytes, "{} differs between runs", name.display());
    }
    ensure!(fa.len() >= 20, "only {} output files", fa.len());
    Ok(format!("{} output files byte-identical across two runs", fa.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 smo oracle", ac1_smo_oracle),
        ("2 kkt audit", ac2_kkt_audit),
        ("3 anova fixture and invariance", ac3_anova),
        ("4 selection recovery", ac4_selection_recovery),
        ("5 metrics fixture", ac5_metrics),
        ("6 ensemble fixtures", ac6_ensemble),
        ("7 synthetic end to end", ac7_end_to_end),
        ("8 pseudo-labeling contract", ac8_pseudo_label),
        ("9 persistence", ac9_persistence),
        ("10 determinism", ac10_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
