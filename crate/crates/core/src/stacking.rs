//! Multi-view stacking over a view hierarchy of any depth.
//!
//! Level 1 fits one sub-model per lowest-level view on the raw features and
//! collects their cross-validated predictions in Z₁. Every higher level
//! groups the columns of the previous Z by the next grouping of the
//! hierarchy and fits one sub-model per group; the last level fits a single
//! meta-model on all columns of the last Z.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{make_folds, oos_predictions_partial, FoldAssignment};
use crate::data::{
    is_missing, CvConfig, Dataset, Family, LearnerKind, LevelPlan, LevelSettings, ViewHierarchy,
};
use crate::error::{Error, Result};
use crate::forest::ForestSpec;
use crate::glm::GlmSpec;
use crate::learner::{LearnerSpec, SubModel};
use crate::missing::{
    complete_rows, impute_meta, screen_missing, ImputationReport, NaAction, NaKind,
};
use crate::seed::{self, purpose, FULL_DATA};

/// Progress event, sent after each sub-model of a level is finished.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Progress {
    pub level: usize,
    pub levels: usize,
    pub done: usize,
    pub total: usize,
}

pub type ProgressFn = Arc<dyn Fn(&Progress) + Send + Sync>;

#[derive(Clone, Default)]
pub struct FitOptions {
    /// Fit the sub-models of each level concurrently.
    pub parallel: bool,
    /// Worker threads when `parallel` is set; 0 uses the global rayon pool.
    pub threads: usize,
    pub progress: Option<ProgressFn>,
    /// Trees per forest when a level uses random forests.
    pub forest: Option<ForestSpec>,
}

impl std::fmt::Debug for FitOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FitOptions")
            .field("parallel", &self.parallel)
            .field("threads", &self.threads)
            .field("progress", &self.progress.is_some())
            .field("forest", &self.forest)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFit {
    /// 1-based level.
    pub level: usize,
    /// Input columns of each sub-model: feature indices at level 1, column
    /// indices of the previous level's Z above it.
    pub groups: Vec<Vec<usize>>,
    pub models: Vec<SubModel>,
    /// Outer folds used for the cross-validated predictions; absent at the top.
    pub folds: Option<FoldAssignment>,
    /// Cross-validated predictions (n × groups) fed to the next level, after
    /// any imputation. Absent at the top level.
    #[serde(with = "crate::model_file::nan_matrix")]
    pub z: Option<Array2<f64>>,
    pub imputation: Option<ImputationReport>,
}

impl LevelFit {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvsModel {
    pub family: Family,
    pub n_features: usize,
    /// Mean outcome of the training data.
    pub y_mean: f64,
    pub hierarchy: ViewHierarchy,
    pub plan: LevelPlan,
    pub cv: CvConfig,
    pub na: NaAction,
    pub levels: Vec<LevelFit>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MvsModel {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Fitted level `level` (1-based).
    pub fn level(&self, level: usize) -> &LevelFit {
        &self.levels[level - 1]
    }

    /// The single top-level meta-model.
    pub fn meta(&self) -> &SubModel {
        &self.levels.last().expect("fitted model has levels").models[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredType {
    Response,
    Class,
}

impl std::str::FromStr for PredType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(PredType::Response),
            "class" => Ok(PredType::Class),
            other => Err(Error::Config(format!(
                "unknown prediction type '{other}' (expected response or class)"
            ))),
        }
    }
}

fn level_learner(
    settings: &LevelSettings,
    level: usize,
    family: Family,
    cv: &CvConfig,
    forest: &ForestSpec,
    warnings: &mut Vec<String>,
) -> LearnerSpec {
    match settings.learner {
        LearnerKind::PenalizedGlm => {
            // Meta-level inputs share one scale and are used as they are.
            let spec = GlmSpec::new(family, settings.alpha)
                .nonneg(settings.nonneg)
                .standardize(level == 1)
                .relax(settings.relax);
            LearnerSpec::glm(spec, settings.adaptive, cv.k_lambda, cv.lambda_rule)
        }
        LearnerKind::RandomForest => {
            for (on, what) in [
                (settings.nonneg, "nonnegativity constraint"),
                (settings.relax, "relaxation"),
                (settings.adaptive, "adaptive weights"),
            ] {
                if on {
                    let msg = format!(
                        "level {level}: {what} does not apply to random forests and is ignored"
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
            LearnerSpec::Forest(ForestSpec {
                parallel: false,
                ..forest.clone()
            })
        }
    }
}

/// Input groups of every level.
fn level_groups(hierarchy: &ViewHierarchy) -> Vec<Vec<Vec<usize>>> {
    let levels = hierarchy.levels();
    let mut out = vec![hierarchy.members(0)];
    for l in 2..levels {
        let parents = hierarchy.parents(l - 2);
        let mut groups = vec![Vec::new(); hierarchy.view_counts()[l - 1]];
        for (v, &g) in parents.iter().enumerate() {
            groups[g].push(v);
        }
        out.push(groups);
    }
    out.push(vec![(0..hierarchy.view_counts()[levels - 2]).collect()]);
    out
}

struct Job {
    model: SubModel,
    z: Option<Array1<f64>>,
}

/// Fits a stacked model.
///
/// All randomness derives from `cv.seed`: outer folds of level `l` from
/// `[OUTER_FOLDS, l]`, the full-data fit of sub-model `g` at level `l` from
/// `[l, g, FULL_DATA]`, its cross-validation fits from `[l, g]` and
/// imputation from `[IMPUTE, l]`. Results do not depend on `opts.parallel`.
pub fn mvs_fit(
    data: &Dataset,
    hierarchy: &ViewHierarchy,
    plan: &LevelPlan,
    cv: &CvConfig,
    na: &NaAction,
    opts: &FitOptions,
) -> Result<MvsModel> {
    if hierarchy.levels() != plan.len() {
        return Err(Error::Config(format!(
            "the hierarchy has {} levels but the level plan has {}",
            hierarchy.levels(),
            plan.len()
        )));
    }
    cv.validate()?;
    let complete_views = screen_missing(data, hierarchy, na)?;
    let run = || fit_levels(data, hierarchy, plan, cv, na, opts, complete_views);
    if opts.parallel && opts.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

fn fit_levels(
    data: &Dataset,
    hierarchy: &ViewHierarchy,
    plan: &LevelPlan,
    cv: &CvConfig,
    na: &NaAction,
    opts: &FitOptions,
    complete_views: Vec<Vec<usize>>,
) -> Result<MvsModel> {
    let levels = plan.len();
    let family = data.family();
    let forest = opts.forest.clone().unwrap_or_default();
    let mut warnings = Vec::new();
    let mut fits: Vec<LevelFit> = Vec::with_capacity(levels);
    let mut input: Option<Dataset> = None;

    for (l, groups) in (1..=levels).zip(level_groups(hierarchy)) {
        let top = l == levels;
        let learner = level_learner(plan.level(l), l, family, cv, &forest, &mut warnings);
        let current = input.as_ref().unwrap_or(data);
        let complete: Vec<Vec<usize>> = if l == 1 {
            complete_views.clone()
        } else {
            groups
                .iter()
                .map(|g| complete_rows(current.x(), g))
                .collect()
        };
        let folds = if top {
            None
        } else {
            Some(make_folds(
                data.y(),
                cv.k_outer,
                family,
                seed::derive(cv.seed, &[purpose::OUTER_FOLDS, l as u64]),
            )?)
        };

        let done = std::sync::atomic::AtomicUsize::new(0);
        let job = |g: usize| -> Result<Job> {
            let cols = &groups[g];
            let rows = &complete[g];
            if rows.len() < 2 {
                return Err(Error::Data(format!(
                    "level {l}, view {}: only {} complete rows",
                    g + 1,
                    rows.len()
                )));
            }
            let model = learner.fit(
                &current.subset(rows, cols),
                seed::derive(cv.seed, &[l as u64, g as u64, FULL_DATA]),
            )?;
            let z = match &folds {
                Some(f) => Some(oos_predictions_partial(
                    current,
                    cols,
                    &learner,
                    f,
                    rows,
                    seed::derive(cv.seed, &[l as u64, g as u64]),
                    opts.parallel,
                )?),
                None => None,
            };
            if let Some(cb) = &opts.progress {
                let d = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                cb(&Progress {
                    level: l,
                    levels,
                    done: d,
                    total: groups.len(),
                });
            }
            Ok(Job { model, z })
        };
        let jobs: Vec<Result<Job>> = if opts.parallel {
            (0..groups.len()).into_par_iter().map(job).collect()
        } else {
            (0..groups.len()).map(job).collect()
        };
        let jobs = jobs.into_iter().collect::<Result<Vec<Job>>>()?;

        let mut models = Vec::with_capacity(jobs.len());
        let mut z = if top {
            None
        } else {
            Some(Array2::zeros((data.n(), groups.len())))
        };
        for (g, j) in jobs.into_iter().enumerate() {
            if let (Some(z), Some(col)) = (z.as_mut(), j.z) {
                z.column_mut(g).assign(&col);
            }
            models.push(j.model);
        }
        let mut imputation = None;
        if let Some(zm) = z.as_mut() {
            if zm.iter().any(|v| is_missing(*v)) {
                let (done, report) = impute_meta(
                    zm.view(),
                    data.y(),
                    na,
                    seed::derive(cv.seed, &[purpose::IMPUTE, l as u64]),
                )?;
                if na.kind != NaKind::Pass {
                    let msg = format!(
                        "level {l}: imputed {} missing meta-level values ({})",
                        report.columns.iter().map(|c| c.rows.len()).sum::<usize>(),
                        na.kind
                    );
                    log::info!("{msg}");
                }
                *zm = done;
                imputation = Some(report);
            }
            input = Some(Dataset::new(zm.clone(), data.y().to_owned(), family)?);
        }
        fits.push(LevelFit {
            level: l,
            groups,
            models,
            folds,
            z,
            imputation,
        });
    }
    Ok(MvsModel {
        family,
        n_features: data.p(),
        y_mean: data.y().mean().unwrap_or(0.0),
        hierarchy: hierarchy.clone(),
        plan: plan.clone(),
        cv: *cv,
        na: na.clone(),
        levels: fits,
        warnings,
    })
}

/// Propagates `input`, the matrix of inputs to level `level`, through that
/// level and every level above it. Returns response-scale predictions.
pub fn predict_from(model: &MvsModel, level: usize, input: ArrayView2<f64>) -> Result<Array1<f64>> {
    if level < 1 || level > model.n_levels() {
        return Err(Error::Config(format!(
            "level must lie in [1, {}], got {level}",
            model.n_levels()
        )));
    }
    let expected = if level == 1 {
        model.n_features
    } else {
        model.level(level - 1).n_models()
    };
    if input.ncols() != expected {
        return Err(Error::Shape(format!(
            "level {level} expects {expected} input columns, got {}",
            input.ncols()
        )));
    }
    let mut current = input.to_owned();
    for fit in &model.levels[level - 1..] {
        let mut next = Array2::zeros((current.nrows(), fit.n_models()));
        for (g, (cols, m)) in fit.groups.iter().zip(&fit.models).enumerate() {
            let x = current.select(Axis(1), cols);
            next.column_mut(g).assign(&m.predict(x.view())?);
        }
        current = next;
    }
    Ok(current.column(0).to_owned())
}

/// Predictions for new observations. Class labels are returned as 0/1:
/// a response strictly above 0.5 is class 1.
pub fn mvs_predict(
    model: &MvsModel,
    x_new: ArrayView2<f64>,
    predtype: PredType,
) -> Result<Array1<f64>> {
    if predtype == PredType::Class && model.family != Family::Binomial {
        return Err(Error::Config(format!(
            "class predictions need a binomial model, this one is {}",
            model.family
        )));
    }
    if x_new.ncols() != model.n_features {
        return Err(Error::Shape(format!(
            "model expects {} feature columns, got {}",
            model.n_features,
            x_new.ncols()
        )));
    }
    if x_new.iter().any(|v| is_missing(*v)) {
        return Err(Error::MissingData(
            "missing values are not supported at prediction time".into(),
        ));
    }
    let response = predict_from(model, 1, x_new)?;
    Ok(match predtype {
        PredType::Response => response,
        PredType::Class => response.mapv(|p| if p > 0.5 { 1.0 } else { 0.0 }),
    })
}

/// Coefficients of one GLM sub-model. `inputs` are the columns it reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefRecord {
    pub intercept: f64,
    pub inputs: Vec<usize>,
    pub values: Vec<f64>,
}

/// Per level, per sub-model: its coefficients, or `None` for forests.
pub fn mvs_coef(model: &MvsModel) -> Vec<Vec<Option<CoefRecord>>> {
    model
        .levels
        .iter()
        .map(|fit| {
            fit.groups
                .iter()
                .zip(&fit.models)
                .map(|(cols, m)| {
                    m.coefficients().map(|(b0, beta)| CoefRecord {
                        intercept: b0,
                        inputs: cols.clone(),
                        values: beta.to_vec(),
                    })
                })
                .collect()
        })
        .collect()
}

/// Importance of one forest sub-model's inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub inputs: Vec<usize>,
    pub values: Vec<f64>,
}

/// Per level, per sub-model: mean decrease in impurity, or `None` for GLMs.
pub fn mvs_importance(model: &MvsModel) -> Vec<Vec<Option<ImportanceRecord>>> {
    model
        .levels
        .iter()
        .map(|fit| {
            fit.groups
                .iter()
                .zip(&fit.models)
                .map(|(cols, m)| match m {
                    SubModel::Forest(f) => Some(ImportanceRecord {
                        inputs: cols.clone(),
                        values: f.importance.clone(),
                    }),
                    SubModel::Glm(_) => None,
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LambdaRule, LevelSettings};
    use crate::glm::{glm_predict, PredictScale};
    use rand::Rng;

    fn toy(seed_: u64, n: usize, views: &[usize], family: Family) -> (Dataset, ViewHierarchy) {
        let mut rng = seed::rng(seed_);
        let p: usize = views.iter().sum();
        let x = Array2::from_shape_fn((n, p), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let y = Array1::from_iter((0..n).map(|i| {
            let eta = 3.0 * x[[i, 0]] + 2.0 * x[[i, 1]];
            match family {
                Family::Binomial => (rng.gen::<f64>() < family.inverse_link(eta)) as u8 as f64,
                _ => eta + 0.1 * rng.gen::<f64>(),
            }
        }));
        let labels: Vec<i64> = views
            .iter()
            .enumerate()
            .flat_map(|(v, &c)| std::iter::repeat(v as i64 + 1).take(c))
            .collect();
        (
            Dataset::new(x, y, family).unwrap(),
            ViewHierarchy::from_vector(&labels).unwrap(),
        )
    }

    fn cv(seed_: u64) -> CvConfig {
        CvConfig {
            k_outer: 5,
            k_lambda: 5,
            seed: seed_,
            lambda_rule: LambdaRule::Min,
        }
    }

    #[test]
    fn prediction_composes_sub_models() {
        let (data, h) = toy(1, 60, &[3, 2, 2], Family::Binomial);
        let model = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(2),
            &cv(1),
            &NaAction::default(),
            &FitOptions::default(),
        )
        .unwrap();
        let manual_z = Array2::from_shape_fn((60, 3), |_| 0.0);
        let mut manual_z = manual_z;
        for (g, cols) in model.level(1).groups.iter().enumerate() {
            let SubModel::Glm(fit) = &model.level(1).models[g] else {
                panic!()
            };
            let x = data.x().select(Axis(1), cols);
            manual_z
                .column_mut(g)
                .assign(&glm_predict(fit, x.view(), PredictScale::Response).unwrap());
        }
        let SubModel::Glm(meta) = model.meta() else {
            panic!()
        };
        let manual = glm_predict(meta, manual_z.view(), PredictScale::Response).unwrap();
        let pred = mvs_predict(&model, data.x(), PredType::Response).unwrap();
        for (a, b) in pred.iter().zip(&manual) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(meta.beta.iter().all(|b| *b >= 0.0));
        let classes = mvs_predict(&model, data.x(), PredType::Class).unwrap();
        assert!(classes
            .iter()
            .zip(&pred)
            .all(|(c, p)| *c == if *p > 0.5 { 1.0 } else { 0.0 }));
    }

    #[test]
    fn single_view_collapses() {
        let (data, h) = toy(2, 40, &[4], Family::Binomial);
        let model = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(2),
            &cv(3),
            &NaAction::default(),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(model.level(1).n_models(), 1);
        let rec = &mvs_coef(&model)[1][0].clone().unwrap();
        assert_eq!(rec.values.len(), 1);
        assert!(rec.values[0] >= 0.0);
    }

    #[test]
    fn parallel_is_bit_identical() {
        let (data, h) = toy(3, 50, &[2, 3, 2], Family::Gaussian);
        let plan = LevelPlan::from_vectors(
            &[0.0, 1.0],
            &[false, true],
            &[LearnerKind::PenalizedGlm, LearnerKind::PenalizedGlm],
            &[false, true],
            &[true, false],
        )
        .unwrap();
        let seq = mvs_fit(
            &data,
            &h,
            &plan,
            &cv(5),
            &NaAction::default(),
            &FitOptions::default(),
        )
        .unwrap();
        let par = mvs_fit(
            &data,
            &h,
            &plan,
            &cv(5),
            &NaAction::default(),
            &FitOptions {
                parallel: true,
                threads: 3,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn forest_levels_report_markers() {
        let (data, h) = toy(4, 60, &[2, 2], Family::Binomial);
        let plan = LevelPlan::new(vec![
            LevelSettings {
                learner: LearnerKind::RandomForest,
                ..LevelSettings::glm(0.0, true)
            },
            LevelSettings::glm(1.0, true),
        ])
        .unwrap();
        let opts = FitOptions {
            forest: Some(ForestSpec {
                n_trees: 25,
                ..ForestSpec::default()
            }),
            ..FitOptions::default()
        };
        let model = mvs_fit(&data, &h, &plan, &cv(2), &NaAction::default(), &opts).unwrap();
        assert_eq!(model.warnings.len(), 1);
        let coef = mvs_coef(&model);
        assert!(coef[0].iter().all(|c| c.is_none()));
        assert_eq!(coef[1][0].as_ref().unwrap().values.len(), 2);
        let imp = mvs_importance(&model);
        assert!(imp[0]
            .iter()
            .all(|r| r.as_ref().unwrap().values.iter().all(|v| *v >= 0.0)));
        assert!(imp[1][0].is_none());
    }

    #[test]
    fn errors() {
        let (data, h) = toy(5, 30, &[2, 2], Family::Gaussian);
        let model = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(2),
            &cv(1),
            &NaAction::default(),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(
            mvs_predict(&model, data.x(), PredType::Class)
                .unwrap_err()
                .kind(),
            "config"
        );
        let narrow = data.x().slice(ndarray::s![.., 0..3]).to_owned();
        assert_eq!(
            mvs_predict(&model, narrow.view(), PredType::Response)
                .unwrap_err()
                .kind(),
            "shape"
        );
        let err = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(3),
            &cv(1),
            &NaAction::default(),
            &FitOptions::default(),
        );
        assert_eq!(err.unwrap_err().kind(), "config");
    }

    #[test]
    fn missing_block_under_pass_and_mean() {
        let (data, h) = toy(6, 60, &[3, 2, 2], Family::Binomial);
        let (mut x, y, fam) = data.into_parts();
        for i in 0..10 {
            for j in 0..3 {
                x[[i, j]] = f64::NAN;
            }
        }
        let data = Dataset::new(x, y, fam).unwrap();
        let fail = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(2),
            &cv(1),
            &NaAction::default(),
            &FitOptions::default(),
        );
        assert_eq!(fail.unwrap_err().kind(), "missing_data");
        let pass = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(2),
            &cv(1),
            &NaAction::new(NaKind::Pass),
            &FitOptions::default(),
        )
        .unwrap();
        let z = pass.level(1).z.as_ref().unwrap();
        let counts: Vec<usize> = (0..3)
            .map(|j| z.column(j).iter().filter(|v| v.is_nan()).count())
            .collect();
        assert_eq!(counts, vec![10, 0, 0]);
        let mean = mvs_fit(
            &data,
            &h,
            &LevelPlan::staplr(2),
            &cv(1),
            &NaAction::new(NaKind::Mean),
            &FitOptions::default(),
        )
        .unwrap();
        let zm = mean.level(1).z.as_ref().unwrap();
        assert!(zm.iter().all(|v| v.is_finite()));
        assert_eq!(
            mean.level(1).imputation.as_ref().unwrap().method_tags(),
            vec!["mean", "", ""]
        );
    }
}
