//! Maximum-likelihood scaling of pairwise preference counts to JOD scores
//! under the Thurstone Case V model, with bootstrap confidence intervals.
//!
//! The discriminal dispersion is fixed at `1/Φ⁻¹(0.75)` so that a 1-JOD
//! difference predicts a 75% observer preference; the log-likelihood is
//! concave in the latent scores and is maximized by gradient ascent with a
//! backtracking line search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JodError {
    #[error("comparison matrix must be square (labels {labels}, rows {rows})")]
    NotSquare { labels: usize, rows: usize },
    #[error("diagonal entry ({0},{0}) must be zero")]
    NonZeroDiagonal(usize),
    #[error("need at least two conditions")]
    TooFewConditions,
    #[error("comparison graph is disconnected; components: {0}")]
    Disconnected(String),
    #[error("no condition labeled '{0}'")]
    UnknownLabel(String),
    #[error("CSV parse error on line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("optimizer failed to converge within {0} iterations")]
    NoConvergence(usize),
}

/// `K×K` pairwise preference counts; `counts[i][j]` is how many times
/// condition `i` was preferred over condition `j`.
#[derive(Debug, Clone)]
pub struct ComparisonMatrix {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl ComparisonMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, JodError> {
        let k = labels.len();
        if k < 2 {
            return Err(JodError::TooFewConditions);
        }
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(JodError::NotSquare {
                labels: k,
                rows: counts.len(),
            });
        }
        for (i, row) in counts.iter().enumerate() {
            if row[i] != 0 {
                return Err(JodError::NonZeroDiagonal(i));
            }
        }
        Ok(Self {
            labels,
            counts: counts.into_iter().flatten().collect(),
        })
    }

    /// Parses the CSV interchange format: a header row of labels followed by
    /// `K` rows of `K` integers.
    pub fn from_csv(text: &str) -> Result<Self, JodError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(JodError::Csv {
            line: 1,
            reason: "empty input".into(),
        })?;
        let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let k = labels.len();
        let mut counts = Vec::with_capacity(k);
        for (line_no, line) in lines {
            let row: Result<Vec<u64>, _> = line
                .split(',')
                .map(|cell| cell.trim().parse::<u64>())
                .collect();
            let row = row.map_err(|e| JodError::Csv {
                line: line_no + 1,
                reason: e.to_string(),
            })?;
            if row.len() != k {
                return Err(JodError::Csv {
                    line: line_no + 1,
                    reason: format!("expected {k} cells, found {}", row.len()),
                });
            }
            counts.push(row);
        }
        if counts.len() != k {
            return Err(JodError::Csv {
                line: 0,
                reason: format!("expected {k} rows, found {}", counts.len()),
            });
        }
        Self::new(labels, counts)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.k() + j]
    }

    pub fn label_index(&self, label: &str) -> Result<usize, JodError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| JodError::UnknownLabel(label.to_string()))
    }

    /// Connected components of the comparison graph (edges where either
    /// direction has a count).
    fn components(&self) -> Vec<Vec<usize>> {
        let k = self.k();
        let mut seen = vec![false; k];
        let mut components = Vec::new();
        for start in 0..k {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut component = Vec::new();
            seen[start] = true;
            while let Some(i) = stack.pop() {
                component.push(i);
                for j in 0..k {
                    if !seen[j] && (self.get(i, j) + self.get(j, i)) > 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            component.sort_unstable();
            components.push(component);
        }
        components
    }
}

/// How the translation-invariant JOD scale is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Scores are shifted to mean zero.
    MeanZero,
    /// The given condition is assigned JOD zero.
    Reference(usize),
}

impl Anchor {
    fn label(&self, labels: &[String]) -> String {
        match self {
            Anchor::MeanZero => "mean".to_string(),
            Anchor::Reference(i) => format!("ref:{}", labels[*i]),
        }
    }
}

/// Anchored JOD scores with 95% bounds.
#[derive(Debug, Clone, Serialize)]
pub struct JodResult {
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
    /// 2.5th percentile of the bootstrap distribution; equals `scores` when
    /// no bootstrap was run.
    pub ci_low: Vec<f64>,
    /// 97.5th percentile of the bootstrap distribution.
    pub ci_high: Vec<f64>,
    pub anchor: String,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Add 0.5 to both cells of a unanimous pair before fitting; without it
    /// the MLE diverges.
    pub smooth_unanimous: bool,
    pub max_iterations: usize,
    /// Convergence threshold on the gradient max-norm.
    pub gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            smooth_unanimous: true,
            max_iterations: 20_000,
            gradient_tolerance: 1e-8,
        }
    }
}

/// `1 / Φ⁻¹(0.75)`: the dispersion that makes a 1-JOD gap predict 75%
/// preference.
pub fn sigma_jod() -> f64 {
    1.0 / Normal::standard().inverse_cdf(0.75)
}

struct CaseVModel {
    k: usize,
    /// Smoothed counts, row-major.
    counts: Vec<f64>,
    inv_sigma: f64,
    normal: Normal,
}

impl CaseVModel {
    fn new(m: &ComparisonMatrix, options: &FitOptions) -> Self {
        let k = m.k();
        let mut counts: Vec<f64> = m.counts.iter().map(|&c| c as f64).collect();
        if options.smooth_unanimous {
            for i in 0..k {
                for j in (i + 1)..k {
                    let a = counts[i * k + j];
                    let b = counts[j * k + i];
                    if a + b > 0.0 && (a == 0.0 || b == 0.0) {
                        counts[i * k + j] += 0.5;
                        counts[j * k + i] += 0.5;
                    }
                }
            }
        }
        Self {
            k,
            counts,
            inv_sigma: 1.0 / sigma_jod(),
            normal: Normal::standard(),
        }
    }

    fn log_likelihood(&self, q: &[f64]) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                let c = self.counts[i * self.k + j];
                if i == j || c == 0.0 {
                    continue;
                }
                let p = self.normal.cdf((q[i] - q[j]) * self.inv_sigma);
                ll += c * p.max(f64::MIN_POSITIVE).ln();
            }
        }
        ll
    }

    fn gradient(&self, q: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        for i in 0..self.k {
            for j in 0..self.k {
                let c = self.counts[i * self.k + j];
                if i == j || c == 0.0 {
                    continue;
                }
                let d = (q[i] - q[j]) * self.inv_sigma;
                let ratio = self.normal.pdf(d) / self.normal.cdf(d).max(f64::MIN_POSITIVE);
                let g = c * ratio * self.inv_sigma;
                grad[i] += g;
                grad[j] -= g;
            }
        }
    }

    /// Directional curvature `−gᵀHg` along the gradient; positive by
    /// concavity. Used to scale the first line-search trial.
    fn curvature_along(&self, q: &[f64], grad: &[f64]) -> f64 {
        let mut curv = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                let c = self.counts[i * self.k + j];
                if i == j || c == 0.0 {
                    continue;
                }
                let d = (q[i] - q[j]) * self.inv_sigma;
                let rho = self.normal.pdf(d) / self.normal.cdf(d).max(f64::MIN_POSITIVE);
                // (φ/Φ)' = −d·ρ − ρ²
                let rho_prime = -d * rho - rho * rho;
                let diff = grad[i] - grad[j];
                curv -= c * rho_prime * self.inv_sigma * self.inv_sigma * diff * diff;
            }
        }
        curv
    }

    /// Gradient ascent with a backtracking (Armijo) line search from the
    /// given initial scores.
    ///
    /// Close to the optimum the likelihood goes flat at f64 resolution while
    /// the analytically computed gradient is still well resolved, so once
    /// Armijo improvements drop below floating-point noise a step is instead
    /// accepted when it shrinks the gradient max-norm.
    fn maximize(&self, mut q: Vec<f64>, options: &FitOptions) -> Result<Vec<f64>, JodError> {
        let linf = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut grad = vec![0.0; self.k];
        let mut trial_grad = vec![0.0; self.k];
        self.gradient(&q, &mut grad);
        let mut ll = self.log_likelihood(&q);
        for _ in 0..options.max_iterations {
            let gmax = linf(&grad);
            if gmax < options.gradient_tolerance {
                return Ok(q);
            }
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            // the exact maximizer along the gradient for the local quadratic
            // model is ‖g‖²/(−gᵀHg); start the backtracking there
            let curv = self.curvature_along(&q, &grad);
            let mut step = if curv > 0.0 { gnorm2 / curv } else { 1.0 };
            let mut moved = false;
            while step >= 1e-18 {
                let trial: Vec<f64> =
                    q.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
                let trial_ll = self.log_likelihood(&trial);
                if trial_ll >= ll + 1e-4 * step * gnorm2 {
                    q = trial;
                    ll = trial_ll;
                    self.gradient(&q, &mut grad);
                    moved = true;
                    break;
                }
                if trial_ll >= ll - (ll.abs() * 1e-14 + 1e-14) {
                    self.gradient(&trial, &mut trial_grad);
                    let tnorm2: f64 = trial_grad.iter().map(|g| g * g).sum();
                    if tnorm2 < gnorm2 {
                        q = trial;
                        ll = trial_ll;
                        std::mem::swap(&mut grad, &mut trial_grad);
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                // no step improves either the likelihood or the gradient
                // norm: converged to machine precision
                return Ok(q);
            }
        }
        Err(JodError::NoConvergence(options.max_iterations))
    }
}

fn apply_anchor(scores: &mut [f64], anchor: Anchor) {
    match anchor {
        Anchor::MeanZero => {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            for s in scores.iter_mut() {
                *s -= mean;
            }
        }
        Anchor::Reference(i) => {
            let offset = scores[i];
            for s in scores.iter_mut() {
                *s -= offset;
            }
        }
    }
}

fn check_connected(m: &ComparisonMatrix) -> Result<(), JodError> {
    let components = m.components();
    if components.len() > 1 {
        let described = components
            .iter()
            .map(|c| {
                let names: Vec<&str> = c.iter().map(|&i| m.labels[i].as_str()).collect();
                format!("{{{}}}", names.join(", "))
            })
            .collect::<Vec<_>>()
            .join(" | ");
        return Err(JodError::Disconnected(described));
    }
    Ok(())
}

fn fit_scores(
    m: &ComparisonMatrix,
    anchor: Anchor,
    options: &FitOptions,
    init: Vec<f64>,
) -> Result<Vec<f64>, JodError> {
    let model = CaseVModel::new(m, options);
    let mut scores = model.maximize(init, options)?;
    apply_anchor(&mut scores, anchor);
    Ok(scores)
}

/// Maximum-likelihood JOD scores for a comparison matrix.
pub fn fit_jod(m: &ComparisonMatrix, anchor: Anchor) -> Result<JodResult, JodError> {
    fit_jod_with(m, anchor, &FitOptions::default())
}

pub fn fit_jod_with(
    m: &ComparisonMatrix,
    anchor: Anchor,
    options: &FitOptions,
) -> Result<JodResult, JodError> {
    check_connected(m)?;
    let scores = fit_scores(m, anchor, options, vec![0.0; m.k()])?;
    Ok(JodResult {
        labels: m.labels.clone(),
        ci_low: scores.clone(),
        ci_high: scores.clone(),
        scores,
        anchor: anchor.label(&m.labels),
    })
}

/// Fits the matrix and estimates 95% confidence intervals by resampling each
/// pair's outcomes binomially at the empirical proportion and refitting.
/// Replicates run in parallel on deterministic per-replicate RNG streams.
pub fn bootstrap_ci(
    m: &ComparisonMatrix,
    anchor: Anchor,
    n_boot: usize,
    seed: u64,
) -> Result<JodResult, JodError> {
    bootstrap_ci_with(m, anchor, n_boot, seed, &FitOptions::default())
}

pub fn bootstrap_ci_with(
    m: &ComparisonMatrix,
    anchor: Anchor,
    n_boot: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<JodResult, JodError> {
    let mut result = fit_jod_with(m, anchor, options)?;
    if n_boot == 0 {
        return Ok(result);
    }
    let k = m.k();

    let replicates: Result<Vec<Vec<f64>>, JodError> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let mut resampled = m.clone();
            for i in 0..k {
                for j in (i + 1)..k {
                    let a = m.get(i, j);
                    let n = a + m.get(j, i);
                    if n == 0 {
                        continue;
                    }
                    let p = a as f64 / n as f64;
                    let wins = Binomial::new(n, p).expect("valid proportion").sample(&mut rng);
                    resampled.counts[i * k + j] = wins;
                    resampled.counts[j * k + i] = n - wins;
                }
            }
            fit_scores(&resampled, anchor, options, vec![0.0; k])
        })
        .collect();
    let replicates = replicates?;

    for c in 0..k {
        let mut values: Vec<f32> = replicates.iter().map(|r| r[c] as f32).collect();
        values.sort_by(f32::total_cmp);
        result.ci_low[c] = crate::image::percentile_sorted(&values, 2.5);
        result.ci_high[c] = crate::image::percentile_sorted(&values, 97.5);
    }
    Ok(result)
}
