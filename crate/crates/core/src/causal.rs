//! Causal validation of category confidence against cross-entropy loss.
//!
//! For a chosen treatment (a subcategory's per-snippet confidence, a
//! category's, or the model's raw mean token probability) this module
//! estimates:
//!
//! * the Pearson correlation with per-snippet cross-entropy,
//! * the average treatment effect from a linear outcome model that adjusts for
//!   the four structural confounders (cyclomatic complexity, tree depth, node
//!   count, sequence size), and
//! * a placebo refutation: the treatment column is permuted and the effect
//!   re-estimated; a real effect should vanish, so the check passes when the
//!   mean absolute placebo effect is small both absolutely and relative to the
//!   estimate.
//!
//! Estimation is deterministic given the seed. Per-treatment failures (too few
//! samples, degenerate variance, collinear design) are recorded on the row
//! rather than aborting the whole report.

use crate::cluster::{Aggregator, Category, CategoryMapping};
use crate::report::CorpusReport;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// One snippet's data point for effect estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalSample {
    pub treatment: f64,
    /// Cross-entropy of the snippet.
    pub outcome: f64,
    /// Structural confounders: cyclomatic complexity, tree depth, node count,
    /// sequence size.
    pub confounders: [f64; 4],
}

/// Estimation errors.
#[derive(Debug, thiserror::Error)]
pub enum CausalError {
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("a variable has (near-)zero variance; correlation undefined")]
    DegenerateVariance,
    #[error("design matrix is rank deficient (collinear or constant columns)")]
    RankDeficient,
}

/// Sample Pearson correlation between two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CausalError> {
    if x.len() != y.len() {
        return Err(CausalError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(CausalError::InsufficientSamples { need: 3, got: n });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(CausalError::DegenerateVariance);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Number of columns in the outcome model: intercept, treatment, and the four
/// confounders.
const DESIGN_COLS: usize = 6;

/// Average treatment effect and its standard error from the linear outcome
/// model `Y ~ 1 + T + Z₁..Z₄` (backdoor adjustment over the measured
/// confounders).
///
/// With a correctly specified noiseless linear outcome this recovers the
/// treatment coefficient to machine precision.
pub fn ate_linear(samples: &[CausalSample]) -> Result<(f64, f64), CausalError> {
    let n = samples.len();
    if n <= DESIGN_COLS {
        return Err(CausalError::InsufficientSamples { need: DESIGN_COLS + 1, got: n });
    }
    let x = DMatrix::from_fn(n, DESIGN_COLS, |r, c| match c {
        0 => 1.0,
        1 => samples[r].treatment,
        _ => samples[r].confounders[c - 2],
    });
    let y = DVector::from_fn(n, |r, _| samples[r].outcome);
    // Rank check on the design itself: a collinear or constant column makes
    // the normal equations meaningless long before inversion fails outright.
    let sv = x.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= smax * 1e-10 {
        return Err(CausalError::RankDeficient);
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let inv = xtx.try_inverse().ok_or(CausalError::RankDeficient)?;
    let beta = &inv * xty;
    let residuals = &y - &x * &beta;
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let sigma2 = rss / (n - DESIGN_COLS) as f64;
    let stderr = (sigma2 * inv[(1, 1)]).sqrt();
    Ok((beta[1], stderr))
}

/// Outcome of a placebo refutation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceboCheck {
    /// Mean signed placebo effect across permutations.
    pub mean_ate: f64,
    /// Mean absolute placebo effect across permutations.
    pub mean_abs_ate: f64,
    /// True when the placebo effect is negligible next to the real estimate:
    /// `mean_abs_ate < max(0.05, 0.1 · |ate|)`.
    pub pass: bool,
}

/// Permute the treatment column and re-estimate the effect.
///
/// Permuting breaks any real treatment→outcome link, so surviving effect mass
/// measures confounding and overfitting. Deterministic given `seed`.
pub fn placebo_refute(
    samples: &[CausalSample],
    seed: u64,
    permutations: u32,
) -> Result<PlaceboCheck, CausalError> {
    let (ate, _) = ate_linear(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut treatments: Vec<f64> = samples.iter().map(|s| s.treatment).collect();
    let mut shuffled = samples.to_vec();
    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    let mut done = 0u32;
    for _ in 0..permutations {
        treatments.shuffle(&mut rng);
        for (s, t) in shuffled.iter_mut().zip(&treatments) {
            s.treatment = *t;
        }
        match ate_linear(&shuffled) {
            Ok((p, _)) => {
                sum += p;
                sum_abs += p.abs();
                done += 1;
            }
            // A permutation can in principle go degenerate; skip it rather
            // than fail the refutation outright.
            Err(_) => {}
        }
    }
    if done == 0 {
        return Err(CausalError::RankDeficient);
    }
    let mean_ate = sum / done as f64;
    let mean_abs_ate = sum_abs / done as f64;
    Ok(PlaceboCheck {
        mean_ate,
        mean_abs_ate,
        pass: mean_abs_ate < f64::max(0.05, 0.1 * ate.abs()),
    })
}

// ---------------------------------------------------------------------------
// Corpus-level report
// ---------------------------------------------------------------------------

/// What varies across snippets as the treatment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Treatment {
    /// Per-snippet confidence of one node kind.
    Subcategory(String),
    /// Per-snippet confidence pooled over a category's kinds.
    Category(Category),
    /// The model's mean token probability per snippet.
    Intrinsic,
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Treatment::Subcategory(kind) => f.write_str(kind),
            Treatment::Category(c) => f.write_str(c.name()),
            Treatment::Intrinsic => f.write_str("intrinsic"),
        }
    }
}

impl FromStr for Treatment {
    type Err = String;
    /// Category names resolve to categories, `intrinsic` to the baseline, and
    /// anything else is taken as a node kind.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("intrinsic") {
            return Ok(Treatment::Intrinsic);
        }
        if let Ok(c) = Category::from_str(s) {
            return Ok(Treatment::Category(c));
        }
        if s.is_empty() {
            return Err("empty treatment name".into());
        }
        Ok(Treatment::Subcategory(s.to_string()))
    }
}

/// Settings for a causal report run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub seed: u64,
    pub permutations: u32,
    /// Standardize treatment and confounders to z-scores before fitting
    /// (diagnostic; effects are then per standard deviation).
    pub zscore: bool,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig { seed: 0, permutations: 20, zscore: false }
    }
}

/// One treatment's estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalRow {
    pub category: String,
    pub subcategory: String,
    pub model_id: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub ate: Option<f64>,
    pub stderr: Option<f64>,
    pub placebo_ate: Option<f64>,
    pub placebo_pass: Option<bool>,
    /// Why estimates are missing, when they are.
    pub error: Option<String>,
}

/// Estimates for a set of treatments over one analyzed corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalReport {
    pub model_id: String,
    pub seed: u64,
    pub permutations: u32,
    pub rows: Vec<CausalRow>,
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 {
        for v in values.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

/// Collect per-snippet `(treatment, outcome, confounders)` triples for one
/// treatment. Snippets without a value for the treatment are left out.
pub fn collect_samples(
    corpus: &CorpusReport,
    treatment: &Treatment,
    mapping: &CategoryMapping,
    agg: Aggregator,
) -> Vec<CausalSample> {
    let mut out = Vec::new();
    for snip in &corpus.snippet_analyses {
        let t = match treatment {
            Treatment::Subcategory(kind) => snip.per_kind.get(kind).copied(),
            Treatment::Category(cat) => {
                let values: Vec<f64> = snip
                    .per_kind
                    .iter()
                    .filter(|(kind, _)| mapping.category_for(kind) == *cat)
                    .map(|(_, v)| *v)
                    .collect();
                agg.apply(&values)
            }
            Treatment::Intrinsic => Some(snip.intrinsic),
        };
        if let Some(t) = t {
            out.push(CausalSample {
                treatment: t,
                outcome: snip.cross_entropy,
                confounders: [
                    snip.metrics.cyclomatic_complexity as f64,
                    snip.metrics.ast_levels as f64,
                    snip.metrics.node_count as f64,
                    snip.metrics.sequence_size as f64,
                ],
            });
        }
    }
    out
}

/// Estimate correlation, adjusted effect, and placebo refutation for each
/// treatment over the corpus.
pub fn causal_report(
    corpus: &CorpusReport,
    treatments: &[Treatment],
    mapping: &CategoryMapping,
    cfg: &CausalConfig,
) -> CausalReport {
    let agg = corpus.category_report.aggregator;
    let mut rows = Vec::with_capacity(treatments.len());
    for treatment in treatments {
        let mut samples = collect_samples(corpus, treatment, mapping, agg);
        if cfg.zscore {
            let mut t: Vec<f64> = samples.iter().map(|s| s.treatment).collect();
            standardize(&mut t);
            for (s, v) in samples.iter_mut().zip(&t) {
                s.treatment = *v;
            }
            for k in 0..4 {
                let mut z: Vec<f64> = samples.iter().map(|s| s.confounders[k]).collect();
                standardize(&mut z);
                for (s, v) in samples.iter_mut().zip(&z) {
                    s.confounders[k] = *v;
                }
            }
        }
        let (category, subcategory) = match treatment {
            Treatment::Subcategory(kind) => {
                (mapping.category_for(kind).name().to_string(), kind.clone())
            }
            Treatment::Category(c) => (c.name().to_string(), String::new()),
            Treatment::Intrinsic => ("Intrinsic".to_string(), "mean_probability".to_string()),
        };
        let mut row = CausalRow {
            category,
            subcategory,
            model_id: corpus.model_id.clone(),
            n: samples.len(),
            rho: None,
            ate: None,
            stderr: None,
            placebo_ate: None,
            placebo_pass: None,
            error: None,
        };
        let t: Vec<f64> = samples.iter().map(|s| s.treatment).collect();
        let y: Vec<f64> = samples.iter().map(|s| s.outcome).collect();
        let estimate = pearson(&t, &y)
            .and_then(|rho| ate_linear(&samples).map(|(ate, se)| (rho, ate, se)))
            .and_then(|(rho, ate, se)| {
                placebo_refute(&samples, cfg.seed, cfg.permutations)
                    .map(|p| (rho, ate, se, p))
            });
        match estimate {
            Ok((rho, ate, se, placebo)) => {
                row.rho = Some(rho);
                row.ate = Some(ate);
                row.stderr = Some(se);
                row.placebo_ate = Some(placebo.mean_ate);
                row.placebo_pass = Some(placebo.pass);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    CausalReport {
        model_id: corpus.model_id.clone(),
        seed: cfg.seed,
        permutations: cfg.permutations,
        rows,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Flat CSV export, one row per treatment.
pub fn causal_csv(report: &CausalReport) -> String {
    let mut out =
        String::from("category,subcategory,model_id,rho,ate,stderr,placebo_ate,placebo_pass,n\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.category),
            csv_field(&r.subcategory),
            csv_field(&r.model_id),
            csv_opt(r.rho),
            csv_opt(r.ate),
            csv_opt(r.stderr),
            csv_opt(r.placebo_ate),
            r.placebo_pass.map(|b| b.to_string()).unwrap_or_default(),
            r.n
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    /// Standard normal via Box–Muller, good enough for synthetic fixtures.
    pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn pearson_known_value() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn pearson_perfect_lines() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -0.5 * v + 4.0).collect();
        assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_bad_input() {
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]).unwrap_err(),
            CausalError::LengthMismatch(2, 1)
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[3.0, 4.0]).unwrap_err(),
            CausalError::InsufficientSamples { .. }
        ));
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            CausalError::DegenerateVariance
        ));
    }

    #[test]
    fn pearson_is_invariant_under_affine_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..50).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 0.3 * normal(&mut rng)).collect();
        let base = pearson(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| 0.01 * v + 100.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - base).abs() < 1e-9);
        // Negative scaling flips the sign.
        let neg: Vec<f64> = x.iter().map(|v| -2.0 * v).collect();
        assert!((pearson(&neg, &y).unwrap() + base).abs() < 1e-9);
    }

    fn synthetic(n: usize, seed: u64, noise: f64) -> Vec<CausalSample> {
        // T is confounded: it shares Z₁ and Z₂ with the outcome.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z1 = normal(&mut rng);
                let z2 = normal(&mut rng);
                let z3 = normal(&mut rng);
                let z4 = normal(&mut rng);
                let t = 0.8 * z1 - 0.5 * z2 + normal(&mut rng);
                let y = 2.0 * t + 3.0 * z1 + 0.5 * z2 + noise * normal(&mut rng);
                CausalSample { treatment: t, outcome: y, confounders: [z1, z2, z3, z4] }
            })
            .collect()
    }

    #[test]
    fn ols_recovers_noiseless_coefficients_exactly() {
        let samples = synthetic(500, 5, 0.0);
        let (ate, stderr) = ate_linear(&samples).unwrap();
        assert!((ate - 2.0).abs() < 1e-8, "ate = {ate}");
        assert!(stderr < 1e-8);
    }

    #[test]
    fn ols_matches_bruteforce_normal_equations() {
        // Independent oracle: solve XᵀXβ = Xᵀy by Gaussian elimination.
        let samples = synthetic(800, 9, 0.7);
        let (ate, _) = ate_linear(&samples).unwrap();
        let p = 6;
        let mut xtx = vec![vec![0.0f64; p]; p];
        let mut xty = vec![0.0f64; p];
        let row_of = |s: &CausalSample| {
            [1.0, s.treatment, s.confounders[0], s.confounders[1], s.confounders[2], s.confounders[3]]
        };
        for s in &samples {
            let row = row_of(s);
            for i in 0..p {
                xty[i] += row[i] * s.outcome;
                for j in 0..p {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..p {
            let pivot = (col..p)
                .max_by(|a, b| xtx[*a][col].abs().total_cmp(&xtx[*b][col].abs()))
                .unwrap();
            xtx.swap(col, pivot);
            xty.swap(col, pivot);
            for r in (col + 1)..p {
                let f = xtx[r][col] / xtx[col][col];
                for c in col..p {
                    xtx[r][c] -= f * xtx[col][c];
                }
                xty[r] -= f * xty[col];
            }
        }
        let mut beta = vec![0.0f64; p];
        for r in (0..p).rev() {
            let mut v = xty[r];
            for c in (r + 1)..p {
                v -= xtx[r][c] * beta[c];
            }
            beta[r] = v / xtx[r][r];
        }
        assert!((ate - beta[1]).abs() < 1e-8);
    }

    #[test]
    fn constant_treatment_is_rank_deficient() {
        let mut samples = synthetic(100, 2, 0.5);
        for s in &mut samples {
            s.treatment = 1.3;
        }
        assert!(matches!(ate_linear(&samples).unwrap_err(), CausalError::RankDeficient));
    }

    #[test]
    fn too_few_samples_are_rejected() {
        let samples = synthetic(6, 2, 0.5);
        assert!(matches!(
            ate_linear(&samples).unwrap_err(),
            CausalError::InsufficientSamples { .. }
        ));
    }

    #[test]
    fn placebo_effect_is_near_zero_for_real_effects() {
        let samples = synthetic(2000, 21, 0.5);
        let check = placebo_refute(&samples, 77, 20).unwrap();
        assert!(check.mean_abs_ate < 0.05, "placebo |ate| = {}", check.mean_abs_ate);
        assert!(check.pass);
    }

    #[test]
    fn placebo_is_deterministic_in_seed() {
        let samples = synthetic(400, 3, 0.5);
        let a = placebo_refute(&samples, 9, 10).unwrap();
        let b = placebo_refute(&samples, 9, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn placebo_centers_near_zero_across_seeds() {
        let samples = synthetic(600, 13, 0.5);
        let mut means = Vec::new();
        for seed in 0..40 {
            means.push(placebo_refute(&samples, seed, 5).unwrap().mean_ate);
        }
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        assert!(grand.abs() < 0.02, "grand placebo mean = {grand}");
    }

    #[test]
    fn treatment_parsing_covers_all_forms() {
        assert_eq!("intrinsic".parse::<Treatment>().unwrap(), Treatment::Intrinsic);
        assert_eq!(
            "Natural Language".parse::<Treatment>().unwrap(),
            Treatment::Category(Category::NaturalLanguage)
        );
        assert_eq!(
            "identifier".parse::<Treatment>().unwrap(),
            Treatment::Subcategory("identifier".into())
        );
        assert!("".parse::<Treatment>().is_err());
    }

    #[test]
    fn csv_export_has_header_and_one_row_per_treatment() {
        let report = CausalReport {
            model_id: "m".into(),
            seed: 0,
            permutations: 5,
            rows: vec![CausalRow {
                category: "Natural Language".into(),
                subcategory: "identifier".into(),
                model_id: "m".into(),
                n: 42,
                rho: Some(-0.56),
                ate: Some(-1.78),
                stderr: Some(0.12),
                placebo_ate: Some(-0.003),
                placebo_pass: Some(true),
                error: None,
            }],
        };
        let csv = causal_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "category,subcategory,model_id,rho,ate,stderr,placebo_ate,placebo_pass,n"
        );
        assert_eq!(
            lines.next().unwrap(),
            "Natural Language,identifier,m,-0.56,-1.78,0.12,-0.003,true,42"
        );
        assert!(lines.next().is_none());
    }
}
