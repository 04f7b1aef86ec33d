//! Cyclic coordinate descent for the elastic-net penalized GLM objective
//!
//! ```text
//! (1/n) * loss(b0, beta) + lambda * sum_j w_j * (alpha * |beta_j| + (1 - alpha)/2 * beta_j^2)
//! ```
//!
//! on centered (and optionally scaled) columns, where `loss` is half the
//! residual sum of squares for the gaussian family and the negative
//! log-likelihood otherwise. Non-gaussian families are handled with an outer
//! IRLS loop around a weighted least-squares coordinate descent.

use ndarray::ArrayView2;

use crate::data::Family;
use crate::error::{Error, Result};

/// Stop coordinate descent once no coordinate moves by more than this (standardized scale).
pub(crate) const CD_TOL: f64 = 1e-7;
pub(crate) const MAX_SWEEPS: usize = 100_000;
pub(crate) const IRLS_DEV_TOL: f64 = 1e-8;
/// IRLS additionally requires the coefficients to have settled to this tolerance.
pub(crate) const IRLS_COEF_TOL: f64 = 1e-7;
pub(crate) const MAX_IRLS: usize = 25;
pub(crate) const BINOMIAL_WEIGHT_FLOOR: f64 = 1e-5;
/// Early path exit once this fraction of the null deviance is explained.
const SATURATED_DEV_RATIO: f64 = 0.999;
/// Early path exit once the explained deviance stalls (relative change).
const STALLED_DEV_RATIO: f64 = 1e-5;
const MIN_PATH_BEFORE_STALL: usize = 5;

/// Column-major copy of the design with centering and scaling applied.
#[derive(Clone, Debug)]
pub(crate) struct Design {
    pub n: usize,
    pub p: usize,
    cols: Vec<f64>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// False for constant columns, whose coefficient is pinned at zero.
    pub usable: Vec<bool>,
}

impl Design {
    pub fn new(x: ArrayView2<f64>, standardize: bool) -> Result<Self> {
        let (n, p) = x.dim();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "feature matrix contains missing or non-finite values".into(),
            ));
        }
        let mut cols = vec![0.0; n * p];
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut usable = vec![true; p];
        for j in 0..p {
            let col = x.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            center[j] = mean;
            if sd <= 1e-10 * mean.abs().max(1.0) {
                usable[j] = false;
                continue;
            }
            if standardize {
                scale[j] = sd;
            }
            let s = scale[j];
            for (dst, v) in cols[j * n..(j + 1) * n].iter_mut().zip(col.iter()) {
                *dst = (v - mean) / s;
            }
        }
        Ok(Self {
            n,
            p,
            cols,
            center,
            scale,
            usable,
        })
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    pub fn any_usable(&self) -> bool {
        self.usable.iter().any(|u| *u)
    }

    pub fn linear_predictor(&self, state: &State, out: &mut [f64]) {
        out.fill(state.b0);
        for j in 0..self.p {
            let b = state.beta[j];
            if b != 0.0 {
                for (o, x) in out.iter_mut().zip(self.col(j)) {
                    *o += b * x;
                }
            }
        }
    }

    /// Converts standardized-scale coefficients to the original feature scale.
    pub fn to_original(&self, state: &State) -> (f64, Vec<f64>) {
        let beta: Vec<f64> = (0..self.p).map(|j| state.beta[j] / self.scale[j]).collect();
        let b0 = state.b0
            - beta
                .iter()
                .zip(&self.center)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        (b0, beta)
    }
}

/// Coefficients on the internal (centered/scaled) scale.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct State {
    pub b0: f64,
    pub beta: Vec<f64>,
}

impl State {
    pub fn null(family: Family, y: &[f64], p: usize) -> Self {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        Self {
            b0: null_link(family, mean),
            beta: vec![0.0; p],
        }
    }
}

fn null_link(family: Family, mean: f64) -> f64 {
    match family {
        Family::Gaussian => mean,
        Family::Binomial => {
            let m = mean.clamp(1e-10, 1.0 - 1e-10);
            (m / (1.0 - m)).ln()
        }
        Family::Poisson => mean.max(1e-10).ln(),
    }
}

pub(crate) fn deviance(family: Family, y: &[f64], mu: &[f64]) -> f64 {
    match family {
        Family::Gaussian => y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum(),
        Family::Binomial => {
            -2.0 * y
                .iter()
                .zip(mu)
                .map(|(&yi, &m)| {
                    let m = m.clamp(1e-15, 1.0 - 1e-15);
                    if yi > 0.5 {
                        m.ln()
                    } else {
                        (1.0 - m).ln()
                    }
                })
                .sum::<f64>()
        }
        Family::Poisson => {
            2.0 * y
                .iter()
                .zip(mu)
                .map(|(&yi, &m)| {
                    let t = if yi > 0.0 { yi * (yi / m).ln() } else { 0.0 };
                    t - (yi - m)
                })
                .sum::<f64>()
        }
    }
}

pub(crate) fn null_deviance(family: Family, y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    deviance(family, y, &vec![mean; y.len()])
}

/// One penalized GLM problem over a fixed design.
pub(crate) struct Problem<'a> {
    pub design: &'a Design,
    pub y: &'a [f64],
    pub family: Family,
    pub alpha: f64,
    pub nonneg: bool,
    /// Per-feature penalty multipliers; `f64::INFINITY` pins a coefficient at zero.
    pub penalty: &'a [f64],
}

/// Per-sweep objective values, one inner vector per weighted least-squares solve.
pub(crate) type Trace = Vec<Vec<f64>>;

enum Failure {
    NonFinite(String),
    NotConverged(String),
}

impl<'a> Problem<'a> {
    fn fixed_zero(&self, j: usize) -> bool {
        !self.design.usable[j] || self.penalty[j].is_infinite()
    }

    /// Smallest lambda at which every penalized coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        let d = self.design;
        let mean = self.y.iter().sum::<f64>() / d.n as f64;
        let a = self.alpha.max(1e-3);
        let mut best = 0.0f64;
        for j in 0..d.p {
            if self.fixed_zero(j) || self.penalty[j] <= 0.0 {
                continue;
            }
            let g: f64 = d
                .col(j)
                .iter()
                .zip(self.y)
                .map(|(x, y)| x * (y - mean))
                .sum();
            let g = if self.nonneg { g.max(0.0) } else { g.abs() };
            best = best.max(g / (d.n as f64 * a * self.penalty[j]));
        }
        best
    }

    /// Weighted least-squares coordinate descent from `state` toward the
    /// minimizer of `(1/2n) sum w_i (z_i - eta_i)^2 + penalty`.
    fn weighted_cd(
        &self,
        z: &[f64],
        w: &[f64],
        lambda: f64,
        state: &mut State,
        sweeps: &mut usize,
        trace: Option<&mut Vec<f64>>,
    ) -> std::result::Result<(), Failure> {
        let d = self.design;
        let n = d.n as f64;
        let mut r = vec![0.0; d.n];
        d.linear_predictor(state, &mut r);
        for i in 0..d.n {
            r[i] = z[i] - r[i];
        }
        let wsum: f64 = w.iter().sum();
        let v: Vec<f64> = (0..d.p)
            .map(|j| {
                if self.fixed_zero(j) {
                    0.0
                } else {
                    d.col(j)
                        .iter()
                        .zip(w)
                        .map(|(x, wi)| wi * x * x)
                        .sum::<f64>()
                        / n
                }
            })
            .collect();
        let scaled = |f: f64| -> Vec<f64> {
            self.penalty
                .iter()
                .map(|pf| if pf.is_finite() { lambda * f * pf } else { 0.0 })
                .collect()
        };
        let l1 = scaled(self.alpha);
        let l2 = scaled(1.0 - self.alpha);

        let mut trace = trace;
        let objective = |r: &[f64], st: &State| -> f64 {
            let loss = r.iter().zip(w).map(|(ri, wi)| wi * ri * ri).sum::<f64>() / (2.0 * n);
            let pen: f64 = st
                .beta
                .iter()
                .enumerate()
                .filter(|(_, b)| **b != 0.0)
                .map(|(j, b)| l1[j] * b.abs() + 0.5 * l2[j] * b * b)
                .sum();
            loss + pen
        };

        // One sweep over the intercept and the given coordinates; returns the max change.
        let sweep =
            |coords: &mut dyn Iterator<Item = usize>, st: &mut State, r: &mut [f64]| -> f64 {
                let mut max_change = 0.0f64;
                let db0 = r.iter().zip(w).map(|(ri, wi)| wi * ri).sum::<f64>() / wsum;
                if db0 != 0.0 {
                    st.b0 += db0;
                    for ri in r.iter_mut() {
                        *ri -= db0;
                    }
                    max_change = max_change.max(db0.abs());
                }
                for j in coords {
                    let vj = v[j];
                    let denom = vj + l2[j];
                    if denom <= 0.0 {
                        continue;
                    }
                    let xj = d.col(j);
                    let old = st.beta[j];
                    let grad = xj
                        .iter()
                        .zip(r.iter())
                        .zip(w)
                        .map(|((x, ri), wi)| wi * x * ri)
                        .sum::<f64>()
                        / n
                        + vj * old;
                    let num = if self.nonneg {
                        super::nonneg_soft_threshold(grad, l1[j])
                    } else {
                        super::soft_threshold(grad, l1[j])
                    };
                    let new = num / denom;
                    let delta = new - old;
                    if delta != 0.0 {
                        st.beta[j] = new;
                        for (ri, x) in r.iter_mut().zip(xj) {
                            *ri -= delta * x;
                        }
                        max_change = max_change.max(delta.abs());
                    }
                }
                max_change
            };

        let all: Vec<usize> = (0..d.p).filter(|&j| !self.fixed_zero(j)).collect();
        loop {
            let change = sweep(&mut all.iter().copied(), state, &mut r);
            *sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(objective(&r, state));
            }
            if !change.is_finite() {
                return Err(Failure::NonFinite(
                    "coordinate update produced a non-finite value".into(),
                ));
            }
            if change < CD_TOL {
                return Ok(());
            }
            if *sweeps >= MAX_SWEEPS {
                return Err(Failure::NotConverged(format!(
                    "coordinate descent exceeded {MAX_SWEEPS} sweeps"
                )));
            }
            // Iterate on the current active set, then confirm with a full sweep.
            let active: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&j| state.beta[j] != 0.0)
                .collect();
            loop {
                let change = sweep(&mut active.iter().copied(), state, &mut r);
                *sweeps += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(objective(&r, state));
                }
                if !change.is_finite() {
                    return Err(Failure::NonFinite(
                        "coordinate update produced a non-finite value".into(),
                    ));
                }
                if change < CD_TOL {
                    break;
                }
                if *sweeps >= MAX_SWEEPS {
                    return Err(Failure::NotConverged(format!(
                        "coordinate descent exceeded {MAX_SWEEPS} sweeps"
                    )));
                }
            }
        }
    }

    /// Solves at one lambda, warm-started from `state`. Returns the deviance.
    fn solve_inner(
        &self,
        lambda: f64,
        state: &mut State,
        mut trace: Option<&mut Trace>,
    ) -> std::result::Result<f64, Failure> {
        let d = self.design;
        let mut sweeps = 0usize;
        let mut eta = vec![0.0; d.n];
        let mut mu = vec![0.0; d.n];
        if self.family == Family::Gaussian {
            let w = vec![1.0; d.n];
            let mut t = Vec::new();
            self.weighted_cd(
                self.y,
                &w,
                lambda,
                state,
                &mut sweeps,
                trace.as_ref().map(|_| &mut t),
            )?;
            if let Some(tr) = trace {
                tr.push(t);
            }
            d.linear_predictor(state, &mut eta);
            return Ok(deviance(self.family, self.y, &eta));
        }

        let mut z = vec![0.0; d.n];
        let mut w = vec![0.0; d.n];
        d.linear_predictor(state, &mut eta);
        self.mean_values(&eta, &mut mu);
        let mut dev_old = deviance(self.family, self.y, &mu);
        for _ in 0..MAX_IRLS {
            for i in 0..d.n {
                let (wi, zi) = self.working(eta[i], mu[i], self.y[i]);
                w[i] = wi;
                z[i] = zi;
            }
            let before = state.clone();
            let mut t = Vec::new();
            self.weighted_cd(
                &z,
                &w,
                lambda,
                state,
                &mut sweeps,
                trace.as_ref().map(|_| &mut t),
            )?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(t);
            }
            d.linear_predictor(state, &mut eta);
            self.mean_values(&eta, &mut mu);
            let dev = deviance(self.family, self.y, &mu);
            if !dev.is_finite() || eta.iter().any(|e| !e.is_finite()) {
                return Err(Failure::NonFinite(
                    "IRLS produced a non-finite deviance".into(),
                ));
            }
            let coef_change = before
                .beta
                .iter()
                .zip(&state.beta)
                .map(|(a, b)| (a - b).abs())
                .fold((before.b0 - state.b0).abs(), f64::max);
            if (dev - dev_old).abs() / (dev.abs() + 0.1) < IRLS_DEV_TOL
                && coef_change < IRLS_COEF_TOL
            {
                return Ok(dev);
            }
            dev_old = dev;
        }
        Err(Failure::NotConverged(format!(
            "IRLS did not converge within {MAX_IRLS} iterations"
        )))
    }

    fn mean_values(&self, eta: &[f64], mu: &mut [f64]) {
        for (m, &e) in mu.iter_mut().zip(eta) {
            *m = self.family.inverse_link(e);
        }
    }

    /// IRLS working weight and response.
    #[inline]
    fn working(&self, eta: f64, mu: f64, y: f64) -> (f64, f64) {
        match self.family {
            Family::Gaussian => (1.0, y),
            Family::Binomial => {
                let w = (mu * (1.0 - mu)).max(BINOMIAL_WEIGHT_FLOOR);
                (w, eta + (y - mu) / w)
            }
            Family::Poisson => {
                let w = mu.max(1e-10);
                (w, eta + (y - mu) / w)
            }
        }
    }

    /// Solves at a single lambda. Convergence failures become errors tagged with `index`.
    pub fn solve(
        &self,
        lambda: f64,
        index: usize,
        state: &mut State,
        trace: Option<&mut Trace>,
    ) -> Result<f64> {
        self.solve_inner(lambda, state, trace).map_err(|f| match f {
            Failure::NonFinite(m) | Failure::NotConverged(m) => Error::Convergence {
                lambda_index: index,
                message: m,
            },
        })
    }

    /// Fits the whole path with warm starts. With `stop_early`, the path
    /// ends once the fit saturates or stops improving, and a convergence
    /// failure past the first lambda truncates the path instead of failing.
    pub fn path(&self, lambdas: &[f64], stop_early: bool) -> Result<Vec<(State, f64)>> {
        let d = self.design;
        let null_dev = null_deviance(self.family, self.y);
        let mut state = State::null(self.family, self.y, d.p);
        let mut out: Vec<(State, f64)> = Vec::with_capacity(lambdas.len());
        let mut prev_ratio = 0.0;
        for (k, &lambda) in lambdas.iter().enumerate() {
            let mut trial = state.clone();
            match self.solve_inner(lambda, &mut trial, None) {
                Ok(dev) => {
                    state = trial;
                    out.push((state.clone(), dev));
                    if stop_early && null_dev > 0.0 {
                        let ratio = 1.0 - dev / null_dev;
                        if ratio >= SATURATED_DEV_RATIO {
                            break;
                        }
                        if k >= MIN_PATH_BEFORE_STALL
                            && ratio - prev_ratio < STALLED_DEV_RATIO * ratio
                        {
                            break;
                        }
                        prev_ratio = ratio;
                    }
                }
                Err(f) if stop_early && k > 0 => {
                    let m = match f {
                        Failure::NonFinite(m) | Failure::NotConverged(m) => m,
                    };
                    log::debug!("path truncated at lambda index {k}: {m}");
                    break;
                }
                Err(Failure::NonFinite(m)) | Err(Failure::NotConverged(m)) => {
                    return Err(Error::Convergence {
                        lambda_index: k,
                        message: m,
                    })
                }
            }
        }
        Ok(out)
    }
}

/// Log-spaced descending sequence from `max` to `max * ratio`.
pub(crate) fn log_spaced(max: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![max];
    }
    let (hi, lo) = (max.ln(), (max * ratio).ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                max
            } else {
                (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}
