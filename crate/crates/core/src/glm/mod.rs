//! Elastic-net penalized GLMs fitted by cyclic coordinate descent.
//!
//! Supports gaussian, binomial and poisson families, optional nonnegativity
//! constraints on the slope coefficients, per-feature penalty weights,
//! warm-started lambda paths, cross-validated lambda selection, relaxed
//! refits and ridge-initialized adaptive weights.
//!
//! The intercept is always fitted and is never penalized or sign-constrained.

mod solver;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cv::make_folds;
use crate::data::{CvConfig, Dataset, Family, LambdaRule};
use crate::error::{Error, Result};

pub(crate) use solver::Design;
use solver::{log_spaced, Problem, State};

/// Weight assigned to a feature whose ridge coefficient is exactly zero.
pub const ADAPTIVE_WEIGHT_CAP: f64 = 1e12;

/// `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `max(z - gamma, 0)`: the coordinate update under a nonnegativity constraint.
#[inline]
pub fn nonneg_soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPath {
    /// Strictly decreasing positive values.
    Explicit(Vec<f64>),
    /// `count` log-spaced values from lambda_max down to `ratio * lambda_max`.
    Auto { count: usize, ratio: f64 },
}

impl Default for LambdaPath {
    fn default() -> Self {
        LambdaPath::Auto {
            count: 100,
            ratio: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub family: Family,
    pub alpha: f64,
    pub nonneg: bool,
    /// Per-feature penalty multipliers; `None` means all ones.
    #[serde(default)]
    pub penalty_weights: Option<Vec<f64>>,
    pub standardize: bool,
    pub lambda_path: LambdaPath,
    /// Refit without penalty on the selected support after lambda selection.
    #[serde(default)]
    pub relax: bool,
}

impl GlmSpec {
    pub fn new(family: Family, alpha: f64) -> Self {
        Self {
            family,
            alpha,
            nonneg: false,
            penalty_weights: None,
            standardize: true,
            lambda_path: LambdaPath::default(),
            relax: false,
        }
    }

    pub fn lasso(family: Family) -> Self {
        Self::new(family, 1.0)
    }

    pub fn ridge(family: Family) -> Self {
        Self::new(family, 0.0)
    }

    pub fn nonneg(mut self, on: bool) -> Self {
        self.nonneg = on;
        self
    }

    pub fn standardize(mut self, on: bool) -> Self {
        self.standardize = on;
        self
    }

    pub fn lambdas(mut self, path: LambdaPath) -> Self {
        self.lambda_path = path;
        self
    }

    pub fn weights(mut self, w: Vec<f64>) -> Self {
        self.penalty_weights = Some(w);
        self
    }

    pub fn relax(mut self, on: bool) -> Self {
        self.relax = on;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Some(w) = &self.penalty_weights {
            if w.len() != p {
                return Err(Error::Shape(format!(
                    "{} penalty weights for {p} features",
                    w.len()
                )));
            }
            if w.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::Config("penalty weights must be nonnegative".into()));
            }
        }
        match &self.lambda_path {
            LambdaPath::Explicit(l) => {
                if l.is_empty() {
                    return Err(Error::Config("empty lambda path".into()));
                }
                if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config(
                        "lambda values must be finite and nonnegative".into(),
                    ));
                }
                if l.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Config(
                        "lambda path must be strictly decreasing".into(),
                    ));
                }
            }
            LambdaPath::Auto { count, ratio } => {
                if *count == 0 || !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::Config(format!(
                        "automatic lambda path needs count >= 1 and ratio in (0, 1), got {count} and {ratio}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn penalty_vec(&self, p: usize) -> Vec<f64> {
        self.penalty_weights.clone().unwrap_or_else(|| vec![1.0; p])
    }
}

/// Coefficients along a lambda path, on the original feature scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmPath {
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    pub deviance: Vec<f64>,
    pub null_deviance: f64,
}

impl GlmPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Cross-validation summary across the path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub rule: LambdaRule,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub intercept: f64,
    /// Slope coefficients on the original feature scale.
    pub beta: Vec<f64>,
    pub lambda_selected: f64,
    pub path: GlmPath,
    #[serde(default)]
    pub cv: Option<CvCurve>,
    pub spec: GlmSpec,
    /// True when `beta` comes from an unpenalized refit on the selected support.
    #[serde(default)]
    pub relaxed: bool,
}

impl GlmFit {
    /// The fit at path index `k`.
    pub fn at(path: GlmPath, k: usize, spec: GlmSpec) -> Self {
        Self {
            intercept: path.intercepts[k],
            beta: path.betas[k].clone(),
            lambda_selected: path.lambdas[k],
            path,
            cv: None,
            spec,
            relaxed: false,
        }
    }

    /// Intercept-only model predicting `mean(y)` on the response scale.
    pub fn intercept_only(spec: GlmSpec, y: ArrayView1<f64>, p: usize) -> Self {
        let y = y.to_vec();
        let st = State::null(spec.family, &y, p);
        let null_dev = solver::null_deviance(spec.family, &y);
        let path = GlmPath {
            lambdas: vec![0.0],
            intercepts: vec![st.b0],
            betas: vec![vec![0.0; p]],
            deviance: vec![null_dev],
            null_deviance: null_dev,
        };
        Self::at(path, 0, spec)
    }

    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictScale {
    Link,
    Response,
}

fn check_fit_input(data: &Dataset, spec: &GlmSpec) -> Result<()> {
    spec.validate(data.p())?;
    if spec.family != data.family() {
        return Err(Error::Config(format!(
            "spec family {} does not match data family {}",
            spec.family,
            data.family()
        )));
    }
    if data.n() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 observations, got {}",
            data.n()
        )));
    }
    Ok(())
}

fn build_design(data: &Dataset, spec: &GlmSpec) -> Result<Design> {
    let design = Design::new(data.x(), spec.standardize)?;
    if !design.any_usable() {
        return Err(Error::Degenerate("every feature column is constant".into()));
    }
    Ok(design)
}

fn path_on(
    design: &Design,
    y: &[f64],
    spec: &GlmSpec,
    lambdas: Option<&[f64]>,
    stop_early: bool,
) -> Result<GlmPath> {
    let penalty = spec.penalty_vec(design.p);
    let problem = Problem {
        design,
        y,
        family: spec.family,
        alpha: spec.alpha,
        nonneg: spec.nonneg,
        penalty: &penalty,
    };
    let (lambdas, stop_early) = match (lambdas, &spec.lambda_path) {
        (Some(l), _) => (l.to_vec(), stop_early),
        (None, LambdaPath::Explicit(l)) => (l.clone(), false),
        (None, LambdaPath::Auto { count, ratio }) => {
            let mut max = problem.lambda_max();
            if !(max > 0.0) {
                // Nothing can enter; any lambda gives the null model.
                max = 1.0;
            }
            (log_spaced(max, *ratio, *count), true)
        }
    };
    let states = problem.path(&lambdas, stop_early)?;
    let mut path = GlmPath {
        lambdas: Vec::with_capacity(states.len()),
        intercepts: Vec::with_capacity(states.len()),
        betas: Vec::with_capacity(states.len()),
        deviance: Vec::with_capacity(states.len()),
        null_deviance: solver::null_deviance(spec.family, y),
    };
    for (k, (st, dev)) in states.into_iter().enumerate() {
        let (b0, beta) = design.to_original(&st);
        path.lambdas.push(lambdas[k]);
        path.intercepts.push(b0);
        path.betas.push(beta);
        path.deviance.push(dev);
    }
    Ok(path)
}

/// Fits the penalized GLM along the lambda path with warm starts.
///
/// Automatic paths may end early once the fit explains 99.9% of the null
/// deviance or stops improving; explicit paths are always fitted in full.
pub fn fit_path(data: &Dataset, spec: &GlmSpec) -> Result<GlmPath> {
    check_fit_input(data, spec)?;
    let design = build_design(data, spec)?;
    let y = data.y().to_vec();
    path_on(&design, &y, spec, None, false)
}

/// Fits a single lambda from a cold start.
pub fn fit_lambda(data: &Dataset, spec: &GlmSpec, lambda: f64) -> Result<GlmFit> {
    let spec = spec.clone().lambdas(LambdaPath::Explicit(vec![lambda]));
    let path = fit_path(data, &spec)?;
    Ok(GlmFit::at(path, 0, spec))
}

/// Objective value after every coordinate-descent sweep at a fixed lambda,
/// grouped by IRLS iteration (a single group for the gaussian family).
/// The objective inside each group is the penalized weighted least-squares
/// objective that the sweeps minimize.
pub fn objective_trace(data: &Dataset, spec: &GlmSpec, lambda: f64) -> Result<Vec<Vec<f64>>> {
    check_fit_input(data, spec)?;
    let design = build_design(data, spec)?;
    let y = data.y().to_vec();
    let penalty = spec.penalty_vec(design.p);
    let problem = Problem {
        design: &design,
        y: &y,
        family: spec.family,
        alpha: spec.alpha,
        nonneg: spec.nonneg,
        penalty: &penalty,
    };
    let mut state = State::null(spec.family, &y, design.p);
    let mut trace = Vec::new();
    problem.solve(lambda, 0, &mut state, Some(&mut trace))?;
    Ok(trace)
}

/// Mean held-out deviance per observation.
fn holdout_deviance(family: Family, y: &[f64], eta: &[f64]) -> f64 {
    let mu: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let m = family.inverse_link(e);
            if family == Family::Binomial {
                m.clamp(1e-5, 1.0 - 1e-5)
            } else {
                m
            }
        })
        .collect();
    solver::deviance(family, y, &mu) / y.len() as f64
}

/// Index selected from a CV curve by `rule`. Ties go to the larger lambda.
pub fn select_lambda_index(mean: &[f64], std_err: &[f64], rule: LambdaRule) -> usize {
    let mut best = 0;
    for k in 1..mean.len() {
        if mean[k] < mean[best] {
            best = k;
        }
    }
    match rule {
        LambdaRule::Min => best,
        LambdaRule::OneSe => {
            let bound = mean[best] + std_err[best];
            (0..=best).find(|&k| mean[k] <= bound).unwrap_or(best)
        }
    }
}

/// Selects lambda by k-fold cross-validated deviance and returns the
/// full-data fit at that lambda (relaxed if the spec asks for it).
pub fn cv_select_lambda(data: &Dataset, spec: &GlmSpec, cv: &CvConfig) -> Result<GlmFit> {
    check_fit_input(data, spec)?;
    if cv.k_lambda < 2 || cv.k_lambda > data.n() {
        return Err(Error::Config(format!(
            "k_lambda must lie in [2, n = {}], got {}",
            data.n(),
            cv.k_lambda
        )));
    }
    let design = build_design(data, spec)?;
    let y = data.y().to_vec();
    let full = path_on(&design, &y, spec, None, false)?;

    let folds = make_folds(data.y(), cv.k_lambda, data.family(), cv.seed)?;
    let mut fold_dev: Vec<Vec<f64>> = Vec::with_capacity(folds.k());
    let mut usable_len = full.len();
    for f in 0..folds.k() {
        let (train, test) = folds.split(f);
        if data.family() == Family::Binomial {
            let ones = train.iter().filter(|&&i| y[i] > 0.5).count();
            if ones == 0 || ones == train.len() {
                return Err(Error::Stratification(format!(
                    "training set of lambda-selection fold {} contains a single outcome class",
                    f + 1
                )));
            }
        }
        let cols: Vec<usize> = (0..data.p()).collect();
        let sub = data.subset(&train, &cols);
        let sub_design = Design::new(sub.x(), spec.standardize).map_err(|e| e.in_fold(f + 1))?;
        let sub_y = sub.y().to_vec();
        let path = if sub_design.any_usable() {
            let path = path_on(&sub_design, &sub_y, spec, Some(&full.lambdas), true)
                .map_err(|e| e.in_fold(f + 1))?;
            usable_len = usable_len.min(path.len());
            path
        } else {
            // Constant training features: only the intercept can be estimated.
            let null = GlmFit::intercept_only(spec.clone(), sub.y(), data.p());
            GlmPath {
                lambdas: full.lambdas.clone(),
                intercepts: vec![null.intercept; full.len()],
                betas: vec![null.beta; full.len()],
                deviance: vec![null.path.null_deviance; full.len()],
                null_deviance: null.path.null_deviance,
            }
        };
        let test_x = data.x().select(ndarray::Axis(0), &test);
        let test_y: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let devs: Vec<f64> = (0..path.len())
            .map(|k| {
                let eta = linear_predictor(path.intercepts[k], &path.betas[k], test_x.view());
                holdout_deviance(data.family(), &test_y, eta.as_slice().unwrap())
            })
            .collect();
        fold_dev.push(devs);
    }
    let usable_len = usable_len.max(1);
    let k = fold_dev.len() as f64;
    let mut mean = Vec::with_capacity(usable_len);
    let mut std_err = Vec::with_capacity(usable_len);
    for l in 0..usable_len {
        let m = fold_dev.iter().map(|d| d[l]).sum::<f64>() / k;
        let var = fold_dev.iter().map(|d| (d[l] - m).powi(2)).sum::<f64>() / (k - 1.0);
        mean.push(m);
        std_err.push((var / k).sqrt());
    }
    let selected = select_lambda_index(&mean, &std_err, cv.lambda_rule);
    let mut fit = GlmFit::at(full, selected, spec.clone());
    fit.cv = Some(CvCurve {
        mean,
        std_err,
        rule: cv.lambda_rule,
        selected,
    });
    if spec.relax {
        relax_fit(data, &mut fit)?;
    }
    Ok(fit)
}

/// Replaces the coefficients with an unpenalized refit restricted to the
/// current support. Nonnegativity is kept when the spec asks for it.
pub fn relax_fit(data: &Dataset, fit: &mut GlmFit) -> Result<()> {
    let support = fit.support();
    let p = data.p();
    if support.is_empty() {
        let only = GlmFit::intercept_only(fit.spec.clone(), data.y(), p);
        fit.intercept = only.intercept;
        fit.beta = vec![0.0; p];
        fit.relaxed = true;
        return Ok(());
    }
    let mut weights = vec![f64::INFINITY; p];
    for &j in &support {
        weights[j] = 0.0;
    }
    let mut refit_spec = fit.spec.clone();
    refit_spec.penalty_weights = Some(weights);
    refit_spec.lambda_path = LambdaPath::Explicit(vec![0.0]);
    refit_spec.relax = false;
    let design = build_design(data, &refit_spec)?;
    let y = data.y().to_vec();
    let path = path_on(&design, &y, &refit_spec, None, false)?;
    fit.intercept = path.intercepts[0];
    fit.beta = path.betas[0].clone();
    fit.relaxed = true;
    Ok(())
}

/// Reciprocal magnitudes, capped at [`ADAPTIVE_WEIGHT_CAP`] for zero coefficients.
pub fn weights_from_coefficients(beta: &[f64]) -> Vec<f64> {
    beta.iter()
        .map(|b| {
            if *b == 0.0 {
                ADAPTIVE_WEIGHT_CAP
            } else {
                (1.0 / b.abs()).min(ADAPTIVE_WEIGHT_CAP)
            }
        })
        .collect()
}

/// Adaptive penalty weights from a cross-validated ridge fit.
///
/// The reciprocals are taken on the scale on which the penalty acts, i.e.
/// of the standardized coefficients when `standardize` is set.
pub fn adaptive_weights(data: &Dataset, cv: &CvConfig, standardize: bool) -> Result<Vec<f64>> {
    let spec = GlmSpec::ridge(data.family()).standardize(standardize);
    let fit = cv_select_lambda(data, &spec, cv)?;
    let design = Design::new(data.x(), standardize)?;
    let penalized_scale: Vec<f64> = fit
        .beta
        .iter()
        .enumerate()
        .map(|(j, b)| {
            if design.usable[j] {
                b * design.scale[j]
            } else {
                0.0
            }
        })
        .collect();
    Ok(weights_from_coefficients(&penalized_scale))
}

fn linear_predictor(intercept: f64, beta: &[f64], x: ArrayView2<f64>) -> Array1<f64> {
    let mut eta = Array1::from_elem(x.nrows(), intercept);
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            eta.scaled_add(b, &x.column(j));
        }
    }
    eta
}

pub fn glm_predict(
    fit: &GlmFit,
    x_new: ArrayView2<f64>,
    scale: PredictScale,
) -> Result<Array1<f64>> {
    if x_new.ncols() != fit.n_features() {
        return Err(Error::Shape(format!(
            "model expects {} columns, got {}",
            fit.n_features(),
            x_new.ncols()
        )));
    }
    let eta = linear_predictor(fit.intercept, &fit.beta, x_new);
    Ok(match scale {
        PredictScale::Link => eta,
        PredictScale::Response => eta.mapv(|e| fit.spec.family.inverse_link(e)),
    })
}

#[cfg(test)]
mod tests;
