//! Core records shared by the solvers and the stacking engine.
//!
//! Missing feature cells are stored as `NaN` in the feature matrix. The
//! outcome vector may never contain one.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for a missing cell.
pub const MISSING: f64 = f64::NAN;

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
        }
    }

    /// Inverse link: identity, logistic or exp.
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Family::Poisson => eta.exp(),
        }
    }

    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => (mu / (1.0 - mu)).ln(),
            Family::Poisson => mu.ln(),
        }
    }

    /// Checks that `y` is a legal outcome vector for this family.
    pub fn check_outcome(self, y: ArrayView1<f64>) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "outcome value at row {} is not finite",
                    i + 1
                )));
            }
            match self {
                Family::Gaussian => {}
                Family::Binomial if v != 0.0 && v != 1.0 => {
                    return Err(Error::Data(format!(
                        "binomial outcome must be 0 or 1, found {v} at row {}",
                        i + 1
                    )))
                }
                Family::Poisson if v < 0.0 || v.fract() != 0.0 => {
                    return Err(Error::Data(format!(
                        "poisson outcome must be a nonnegative integer, found {v} at row {}",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::Config(format!(
                "unknown family '{other}' (expected gaussian, binomial or poisson)"
            ))),
        }
    }
}

/// Feature matrix, outcome and family.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    family: Family,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, family: Family) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows but outcome has {} values",
                x.nrows(),
                y.len()
            )));
        }
        if y.iter().any(|v| is_missing(*v)) {
            return Err(Error::Data("outcome vector contains missing values".into()));
        }
        family.check_outcome(y.view())?;
        if x.iter().any(|v| v.is_infinite()) {
            return Err(Error::Numeric(
                "feature matrix contains infinite values".into(),
            ));
        }
        Ok(Self { x, y, family })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn has_missing(&self) -> bool {
        self.x.iter().any(|v| is_missing(*v))
    }

    /// Restricts to the given rows and columns (both in the given order).
    pub fn subset(&self, rows: &[usize], cols: &[usize]) -> Dataset {
        let x = self.x.select(Axis(0), rows).select(Axis(1), cols);
        let y = self.y.select(Axis(0), rows);
        Dataset {
            x,
            y,
            family: self.family,
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Array1<f64>, Family) {
        (self.x, self.y, self.family)
    }
}

/// Grouping of features into views at each level of a stacked model.
///
/// `labels[(j, c)]` is the 1-based view label of feature `j` in grouping
/// column `c`; column 0 is the lowest grouping. A model with `levels`
/// levels has `levels - 1` grouping columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewHierarchy {
    levels: usize,
    labels: Array2<usize>,
    view_counts: Vec<usize>,
    /// Original label to assigned label, per grouping column. Empty when
    /// the input already used 1..V.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    relabeling: Vec<BTreeMap<i64, usize>>,
}

impl ViewHierarchy {
    /// Validates a label matrix whose labels must already be exactly `1..=V`
    /// in every column.
    pub fn validate(assignment: ArrayView2<i64>, p: usize, levels: usize) -> Result<Self> {
        Self::check_dims(assignment, p, levels)?;
        let mut labels = Array2::<usize>::zeros(assignment.raw_dim());
        let mut view_counts = Vec::with_capacity(levels - 1);
        for c in 0..assignment.ncols() {
            let col = assignment.column(c);
            let mut max = 0i64;
            for (j, &l) in col.iter().enumerate() {
                if l < 1 {
                    return Err(Error::Label(format!(
                        "label {l} of feature {} in grouping column {} is not a positive integer",
                        j + 1,
                        c + 1
                    )));
                }
                max = max.max(l);
            }
            let mut used = vec![false; max as usize];
            for &l in col.iter() {
                used[(l - 1) as usize] = true;
            }
            if let Some(gap) = used.iter().position(|u| !u) {
                return Err(Error::Label(format!(
                    "grouping column {} uses labels up to {max} but label {} is never used",
                    c + 1,
                    gap + 1
                )));
            }
            for (j, &l) in col.iter().enumerate() {
                labels[(j, c)] = l as usize;
            }
            view_counts.push(max as usize);
        }
        let h = Self {
            levels,
            labels,
            view_counts,
            relabeling: Vec::new(),
        };
        h.check_nesting()?;
        Ok(h)
    }

    /// Accepts arbitrary integer labels and remaps each column onto `1..=V`
    /// in ascending order of the original labels. The mapping is kept.
    pub fn from_raw_labels(assignment: ArrayView2<i64>, p: usize, levels: usize) -> Result<Self> {
        Self::check_dims(assignment, p, levels)?;
        let mut remapped = Array2::<i64>::zeros(assignment.raw_dim());
        let mut maps = Vec::new();
        let mut changed = false;
        for c in 0..assignment.ncols() {
            let mut map = BTreeMap::new();
            for &l in assignment.column(c) {
                map.insert(l, 0usize);
            }
            for (i, v) in map.values_mut().enumerate() {
                *v = i + 1;
            }
            for (j, &l) in assignment.column(c).iter().enumerate() {
                remapped[(j, c)] = map[&l] as i64;
                changed |= map[&l] as i64 != l;
            }
            maps.push(map);
        }
        let mut h = Self::validate(remapped.view(), p, levels)?;
        if changed {
            h.relabeling = maps;
        }
        Ok(h)
    }

    /// Two-level hierarchy from a single label vector.
    pub fn from_vector(labels: &[i64]) -> Result<Self> {
        let a = Array2::from_shape_vec((labels.len(), 1), labels.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::validate(a.view(), labels.len(), 2)
    }

    fn check_dims(assignment: ArrayView2<i64>, p: usize, levels: usize) -> Result<()> {
        if levels < 2 {
            return Err(Error::Config(format!(
                "levels must be at least 2, got {levels}"
            )));
        }
        if assignment.nrows() != p {
            return Err(Error::Shape(format!(
                "view assignment has {} rows but there are {p} features",
                assignment.nrows()
            )));
        }
        if assignment.ncols() != levels - 1 {
            return Err(Error::Shape(format!(
                "a {levels}-level model needs {} grouping column(s), got {}",
                levels - 1,
                assignment.ncols()
            )));
        }
        if p == 0 {
            return Err(Error::Shape("no features".into()));
        }
        Ok(())
    }

    fn check_nesting(&self) -> Result<()> {
        for c in 0..self.labels.ncols().saturating_sub(1) {
            let mut parent: Vec<Option<usize>> = vec![None; self.view_counts[c]];
            for j in 0..self.labels.nrows() {
                let child = self.labels[(j, c)] - 1;
                let up = self.labels[(j, c + 1)];
                match parent[child] {
                    None => parent[child] = Some(up),
                    Some(q) if q != up => {
                        return Err(Error::Nesting(format!(
                            "view {} of grouping column {} spans parent views {q} and {up} in column {}",
                            child + 1,
                            c + 1,
                            c + 2
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_features(&self) -> usize {
        self.labels.nrows()
    }

    /// Number of grouping columns (`levels - 1`).
    pub fn n_groupings(&self) -> usize {
        self.labels.ncols()
    }

    /// View count per grouping column.
    pub fn view_counts(&self) -> &[usize] {
        &self.view_counts
    }

    pub fn labels(&self) -> ArrayView2<'_, usize> {
        self.labels.view()
    }

    pub fn relabeling(&self) -> &[BTreeMap<i64, usize>] {
        &self.relabeling
    }

    /// Feature indices (0-based, ascending) of each view in grouping column `c`.
    pub fn members(&self, c: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.view_counts[c]];
        for j in 0..self.labels.nrows() {
            out[self.labels[(j, c)] - 1].push(j);
        }
        out
    }

    /// Parent view (0-based, in column `c + 1`) of every view (0-based) in column `c`.
    pub fn parents(&self, c: usize) -> Vec<usize> {
        let mut out = vec![0; self.view_counts[c]];
        for j in 0..self.labels.nrows() {
            out[self.labels[(j, c)] - 1] = self.labels[(j, c + 1)] - 1;
        }
        out
    }

    /// The assignment as plain integers, e.g. for writing back to disk.
    pub fn to_label_matrix(&self) -> Array2<i64> {
        self.labels.mapv(|l| l as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    PenalizedGlm,
    RandomForest,
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "glm" | "staplr" | "penalized_glm" => Ok(LearnerKind::PenalizedGlm),
            "rf" | "random_forest" => Ok(LearnerKind::RandomForest),
            other => Err(Error::Config(format!(
                "unknown learner type '{other}' (expected StaPLR/glm or RF)"
            ))),
        }
    }
}

/// Learner settings for one level of the hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSettings {
    pub alpha: f64,
    pub nonneg: bool,
    pub learner: LearnerKind,
    pub relax: bool,
    pub adaptive: bool,
}

impl LevelSettings {
    pub fn glm(alpha: f64, nonneg: bool) -> Self {
        Self {
            alpha,
            nonneg,
            learner: LearnerKind::PenalizedGlm,
            relax: false,
            adaptive: false,
        }
    }
}

/// Per-level learner plan. Level 1 fits on raw features; the last level is
/// the final meta-learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    levels: Vec<LevelSettings>,
}

impl LevelPlan {
    pub fn new(levels: Vec<LevelSettings>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Config(
                "a level plan needs at least two levels".into(),
            ));
        }
        for (i, l) in levels.iter().enumerate() {
            if !(0.0..=1.0).contains(&l.alpha) {
                return Err(Error::Config(format!(
                    "alpha of level {} must lie in [0, 1], got {}",
                    i + 1,
                    l.alpha
                )));
            }
        }
        Ok(Self { levels })
    }

    /// Builds a plan from per-level vectors, all of which must have the same length.
    pub fn from_vectors(
        alphas: &[f64],
        nnc: &[bool],
        learners: &[LearnerKind],
        relax: &[bool],
        adaptive: &[bool],
    ) -> Result<Self> {
        let n = alphas.len();
        for (name, len) in [
            ("nnc", nnc.len()),
            ("type", learners.len()),
            ("relax", relax.len()),
            ("adaptive", adaptive.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!(
                    "{name} has {len} entries but alphas has {n}"
                )));
            }
        }
        Self::new(
            (0..n)
                .map(|i| LevelSettings {
                    alpha: alphas[i],
                    nonneg: nnc[i],
                    learner: learners[i],
                    relax: relax[i],
                    adaptive: adaptive[i],
                })
                .collect(),
        )
    }

    /// The usual StaPLR plan: ridge base learners and a nonnegative lasso on
    /// every level above the features.
    pub fn staplr(levels: usize) -> Self {
        let mut v = vec![LevelSettings::glm(0.0, false)];
        for _ in 1..levels {
            v.push(LevelSettings::glm(1.0, true));
        }
        Self { levels: v }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Settings for 1-based level `level`.
    pub fn level(&self, level: usize) -> &LevelSettings {
        &self.levels[level - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LevelSettings> {
        self.levels.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaRule {
    /// Lambda with the lowest mean cross-validated deviance.
    #[default]
    Min,
    /// Largest lambda within one standard error of the minimum.
    #[serde(rename = "1se")]
    OneSe,
}

impl FromStr for LambdaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(LambdaRule::Min),
            "1se" => Ok(LambdaRule::OneSe),
            other => Err(Error::Config(format!(
                "unknown lambda rule '{other}' (expected min or 1se)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    /// Folds used to produce out-of-sample predictions for the next level.
    pub k_outer: usize,
    /// Folds used for lambda selection inside each GLM fit.
    pub k_lambda: usize,
    pub seed: u64,
    pub lambda_rule: LambdaRule,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k_outer: 10,
            k_lambda: 10,
            seed: 0,
            lambda_rule: LambdaRule::Min,
        }
    }
}

impl CvConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_outer < 2 || self.k_lambda < 2 {
            return Err(Error::Config(format!(
                "fold counts must be at least 2 (k_outer = {}, k_lambda = {})",
                self.k_outer, self.k_lambda
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn two_level_views() -> Vec<i64> {
        let mut v = vec![1; 45];
        v.extend(vec![2; 20]);
        v.extend(vec![3; 20]);
        v
    }

    fn three_level_views() -> Array2<i64> {
        let mut sub = Vec::new();
        for l in 1..=3 {
            sub.extend(vec![l; 15]);
        }
        for l in 4..=5 {
            sub.extend(vec![l; 10]);
        }
        for l in 6..=9 {
            sub.extend(vec![l; 5]);
        }
        let top = two_level_views();
        Array2::from_shape_fn((85, 2), |(j, c)| if c == 0 { sub[j] } else { top[j] })
    }

    #[test]
    fn two_level_vector() {
        let h = ViewHierarchy::from_vector(&two_level_views()).unwrap();
        assert_eq!(h.view_counts(), &[3]);
        let sizes: Vec<usize> = h.members(0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![45, 20, 20]);
    }

    #[test]
    fn three_level_matrix_nests() {
        let h = ViewHierarchy::validate(three_level_views().view(), 85, 3).unwrap();
        assert_eq!(h.view_counts(), &[9, 3]);
        assert_eq!(h.parents(0), vec![0, 0, 0, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn single_view_is_legal() {
        let h = ViewHierarchy::from_vector(&[1; 7]).unwrap();
        assert_eq!(h.view_counts(), &[1]);
    }

    #[test]
    fn gaps_and_nonpositive_labels_rejected() {
        assert!(matches!(
            ViewHierarchy::from_vector(&[1, 3, 3]),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            ViewHierarchy::from_vector(&[0, 1, 1]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn raw_labels_are_remapped() {
        let a = array![[20i64], [10], [20], [30]];
        let h = ViewHierarchy::from_raw_labels(a.view(), 4, 2).unwrap();
        assert_eq!(h.labels().column(0).to_vec(), vec![2, 1, 2, 3]);
        assert_eq!(h.relabeling()[0][&30], 3);
    }

    #[test]
    fn straddling_subview_is_nesting_error() {
        let a = array![[1i64, 1], [1, 2], [2, 2]];
        assert!(matches!(
            ViewHierarchy::validate(a.view(), 3, 3),
            Err(Error::Nesting(_))
        ));
    }

    #[test]
    fn dimension_errors() {
        let a = array![[1i64], [1]];
        assert!(matches!(
            ViewHierarchy::validate(a.view(), 3, 2),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ViewHierarchy::validate(a.view(), 2, 3),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ViewHierarchy::validate(a.view(), 2, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dataset_invariants() {
        let x = Array2::zeros((3, 2));
        assert!(Dataset::new(x.clone(), array![0.0, 1.0], Family::Binomial).is_err());
        assert!(Dataset::new(x.clone(), array![0.0, 1.0, 2.0], Family::Binomial).is_err());
        assert!(Dataset::new(x.clone(), array![0.0, 1.5, 2.0], Family::Poisson).is_err());
        assert!(Dataset::new(x.clone(), array![0.0, f64::NAN, 2.0], Family::Gaussian).is_err());
        assert!(Dataset::new(x, array![0.0, 1.0, 3.0], Family::Poisson).is_ok());
    }

    #[test]
    fn plan_length_mismatch() {
        let err = LevelPlan::from_vectors(
            &[0.0, 1.0],
            &[false],
            &[LearnerKind::PenalizedGlm; 2],
            &[false; 2],
            &[false; 2],
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partitions_cover_all_features(labels in proptest::collection::vec(1i64..6, 1..40)) {
                let h = match ViewHierarchy::from_raw_labels(
                    Array2::from_shape_vec((labels.len(), 1), labels.clone()).unwrap().view(),
                    labels.len(),
                    2,
                ) {
                    Ok(h) => h,
                    Err(e) => panic!("{e}"),
                };
                let mut all: Vec<usize> = h.members(0).into_iter().flatten().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                // serialization round-trip
                let s = serde_json::to_string(&h).unwrap();
                let back: ViewHierarchy = serde_json::from_str(&s).unwrap();
                prop_assert_eq!(back.labels(), h.labels());
            }
        }
    }
}
