//! Multi-view stacking: one penalized GLM or random forest per view,
//! combined level by level by meta-learners trained on cross-validated
//! view predictions.
//!
//! ```no_run
//! use mvstack::{mvs_fit, mvs_predict, CvConfig, FitOptions, LevelPlan, NaAction, PredType, SimSpec};
//!
//! let sim = mvstack::simulate(&SimSpec::two_level(1)).unwrap();
//! let model = mvs_fit(
//!     &sim.data,
//!     &sim.hierarchy,
//!     &LevelPlan::staplr(2),
//!     &CvConfig::with_seed(1),
//!     &NaAction::default(),
//!     &FitOptions::default(),
//! )
//! .unwrap();
//! let p = mvs_predict(&model, sim.data.x(), PredType::Response).unwrap();
//! ```

pub mod cv;
pub mod data;
pub mod error;
pub mod forest;
pub mod glm;
pub mod io;
pub mod learner;
pub mod missing;
pub mod model_file;
pub mod mrm;
pub mod seed;
pub mod sim;
pub mod stacking;

pub use cv::{make_folds, oos_predictions, oos_predictions_partial, FoldAssignment};
pub use data::{
    CvConfig, Dataset, Family, LambdaRule, LearnerKind, LevelPlan, LevelSettings, ViewHierarchy,
    MISSING,
};
pub use error::{Error, Result};
pub use forest::{forest_fit, forest_predict, ForestFit, ForestSpec};
pub use glm::{
    adaptive_weights, cv_select_lambda, fit_lambda, fit_path, glm_predict, relax_fit, GlmFit,
    GlmPath, GlmSpec, LambdaPath, PredictScale,
};
pub use learner::{LearnerSpec, SubModel};
pub use missing::{impute_meta, screen_missing, ImputationReport, NaAction, NaKind};
pub use mrm::{mrm, MrmQuery, MrmResult};
pub use sim::{simulate, MissingBlock, SimSpec, Simulated};
pub use stacking::{
    mvs_coef, mvs_fit, mvs_importance, mvs_predict, predict_from, CoefRecord, FitOptions,
    ImportanceRecord, LevelFit, MvsModel, PredType, Progress,
};
