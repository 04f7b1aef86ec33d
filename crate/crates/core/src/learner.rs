//! The learner interface shared by every level of a stacked model.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{CvConfig, Dataset, LambdaRule};
use crate::error::{Error, Result};
use crate::forest::{forest_fit, forest_predict, ForestFit, ForestSpec};
use crate::glm::{
    adaptive_weights, cv_select_lambda, fit_path, glm_predict, GlmFit, GlmSpec, PredictScale,
};
use crate::seed::{self, purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerSpec {
    Glm {
        spec: GlmSpec,
        /// Scale the penalty by reciprocal ridge coefficients first.
        adaptive: bool,
        k_lambda: usize,
        lambda_rule: LambdaRule,
        /// Select lambda by cross-validation. When false the last lambda of
        /// the path is used.
        tune: bool,
    },
    Forest(ForestSpec),
}

impl LearnerSpec {
    pub fn glm(spec: GlmSpec, adaptive: bool, k_lambda: usize, lambda_rule: LambdaRule) -> Self {
        LearnerSpec::Glm {
            spec,
            adaptive,
            k_lambda,
            lambda_rule,
            tune: true,
        }
    }

    /// A GLM fitted along its path without lambda selection.
    pub fn glm_fixed(spec: GlmSpec) -> Self {
        LearnerSpec::Glm {
            spec,
            adaptive: false,
            k_lambda: 10,
            lambda_rule: LambdaRule::Min,
            tune: false,
        }
    }

    /// Fits on `data`. All randomness is derived from `seed`.
    ///
    /// A GLM whose input columns are all constant becomes an intercept-only
    /// model.
    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<SubModel> {
        match self {
            LearnerSpec::Glm {
                spec,
                adaptive,
                k_lambda,
                lambda_rule,
                tune,
            } => {
                let mut spec = spec.clone();
                spec.family = data.family();
                match fit_glm(
                    data,
                    &mut spec,
                    *adaptive,
                    *k_lambda,
                    *lambda_rule,
                    *tune,
                    seed,
                ) {
                    Ok(fit) => Ok(SubModel::Glm(fit)),
                    Err(Error::Degenerate(msg)) => {
                        log::warn!("{msg}; using an intercept-only model");
                        Ok(SubModel::Glm(GlmFit::intercept_only(
                            spec,
                            data.y(),
                            data.p(),
                        )))
                    }
                    Err(e) => Err(e),
                }
            }
            LearnerSpec::Forest(spec) => {
                let mut spec = spec.clone();
                spec.seed = seed::derive(seed, &[purpose::FOREST]);
                Ok(SubModel::Forest(forest_fit(data, &spec)?))
            }
        }
    }
}

fn fit_glm(
    data: &Dataset,
    spec: &mut GlmSpec,
    adaptive: bool,
    k_lambda: usize,
    lambda_rule: LambdaRule,
    tune: bool,
    seed: u64,
) -> Result<GlmFit> {
    let cv = |purpose: u64| CvConfig {
        k_outer: 2,
        k_lambda: k_lambda.min(data.n()),
        seed: seed::derive(seed, &[purpose]),
        lambda_rule,
    };
    if adaptive {
        let w = adaptive_weights(data, &cv(purpose::ADAPTIVE), spec.standardize)?;
        let w = match &spec.penalty_weights {
            Some(base) => base.iter().zip(&w).map(|(a, b)| a * b).collect(),
            None => w,
        };
        spec.penalty_weights = Some(w);
    }
    if tune {
        cv_select_lambda(data, spec, &cv(purpose::LAMBDA_FOLDS))
    } else {
        let path = fit_path(data, spec)?;
        let last = path.len() - 1;
        let mut fit = GlmFit::at(path, last, spec.clone());
        if spec.relax {
            crate::glm::relax_fit(data, &mut fit)?;
        }
        Ok(fit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubModel {
    Glm(GlmFit),
    Forest(ForestFit),
}

impl SubModel {
    /// Predictions on the response scale (probabilities for binomial outcomes).
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            SubModel::Glm(fit) => glm_predict(fit, x, PredictScale::Response),
            SubModel::Forest(fit) => forest_predict(fit, x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            SubModel::Glm(fit) => fit.n_features(),
            SubModel::Forest(fit) => fit.n_features,
        }
    }

    /// Intercept and slopes of a GLM; `None` for forests.
    pub fn coefficients(&self) -> Option<(f64, &[f64])> {
        match self {
            SubModel::Glm(fit) => Some((fit.intercept, &fit.beta)),
            SubModel::Forest(_) => None,
        }
    }

    /// Absolute slopes for GLMs, mean decrease in impurity for forests.
    pub fn importance(&self) -> Vec<f64> {
        match self {
            SubModel::Glm(fit) => fit.beta.iter().map(|b| b.abs()).collect(),
            SubModel::Forest(fit) => fit.importance.clone(),
        }
    }
}
