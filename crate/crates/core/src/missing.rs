//! Missing views: screening at the feature level and imputation of the
//! cross-validated prediction matrix Z at the meta level.
//!
//! A row that misses any cell of a view misses that view. Each view's
//! sub-model is trained on the rows where it is complete, so missingness in
//! the features turns into missing entries of Z, one per (row, view) pair.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{is_missing, Dataset, Family, ViewHierarchy};
use crate::error::{Error, Result};
use crate::glm::{GlmSpec, LambdaPath};
use crate::learner::LearnerSpec;
use crate::seed;

pub const FAIL_MESSAGE: &str =
    "Missing values detected in x. Either remove or impute missing values, or choose a different na.action";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaKind {
    Fail,
    Pass,
    Mean,
    MatchedDraw,
}

impl NaKind {
    pub fn name(self) -> &'static str {
        match self {
            NaKind::Fail => "fail",
            NaKind::Pass => "pass",
            NaKind::Mean => "mean",
            NaKind::MatchedDraw => "matched-draw",
        }
    }
}

impl fmt::Display for NaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail" => Ok(NaKind::Fail),
            "pass" => Ok(NaKind::Pass),
            "mean" => Ok(NaKind::Mean),
            "matched-draw" | "matched_draw" => Ok(NaKind::MatchedDraw),
            other => Err(Error::Config(format!(
                "unsupported na action '{other}'; supported actions are fail, pass, mean, matched-draw"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaAction {
    pub kind: NaKind,
    /// Number of imputation rounds averaged by matched-draw imputation.
    pub m: usize,
    /// Candidate donors per missing cell.
    pub donors: usize,
    /// Options as given, echoed in the imputation report.
    pub options: BTreeMap<String, String>,
}

impl Default for NaAction {
    fn default() -> Self {
        Self::new(NaKind::Fail)
    }
}

impl NaAction {
    pub fn new(kind: NaKind) -> Self {
        Self {
            kind,
            m: 5,
            donors: 5,
            options: BTreeMap::new(),
        }
    }

    /// Applies `key=value` options. Matched-draw understands `m` and
    /// `donors`; `fail` takes no options.
    pub fn with_options<K: AsRef<str>, V: AsRef<str>>(
        kind: NaKind,
        options: &[(K, V)],
    ) -> Result<Self> {
        let mut na = Self::new(kind);
        if kind == NaKind::Fail && !options.is_empty() {
            return Err(Error::Config("na action 'fail' takes no options".into()));
        }
        for (k, v) in options {
            let (k, v) = (k.as_ref(), v.as_ref());
            let count = || -> Result<usize> {
                v.parse::<usize>().ok().filter(|c| *c >= 1).ok_or_else(|| {
                    Error::Config(format!("option {k} must be a positive integer, got '{v}'"))
                })
            };
            match (kind, k) {
                (NaKind::MatchedDraw, "m") => na.m = count()?,
                (NaKind::MatchedDraw, "donors") => na.donors = count()?,
                _ => {
                    return Err(Error::Config(format!(
                        "na action '{kind}' does not accept option '{k}'"
                    )))
                }
            }
            na.options.insert(k.to_string(), v.to_string());
        }
        Ok(na)
    }
}

/// How one column of Z was completed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnImputation {
    /// `"mean"`, `"matched_draw"` or `"pass"`; empty when the column was complete.
    pub method: String,
    /// Rows that were missing.
    pub rows: Vec<usize>,
    /// Matched-draw only: the donor value drawn for each missing row, per round.
    #[serde(default)]
    pub draws: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub kind: NaKind,
    pub m: usize,
    pub options: BTreeMap<String, String>,
    pub columns: Vec<ColumnImputation>,
}

impl ImputationReport {
    pub fn method_tags(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.method.as_str()).collect()
    }

    pub fn any_imputed(&self) -> bool {
        self.columns.iter().any(|c| !c.rows.is_empty())
    }
}

/// Per lowest-level view, the rows on which every feature of the view is
/// observed.
pub fn screen_missing(
    data: &Dataset,
    hierarchy: &ViewHierarchy,
    na: &NaAction,
) -> Result<Vec<Vec<usize>>> {
    if data.p() != hierarchy.n_features() {
        return Err(Error::Shape(format!(
            "data has {} features, hierarchy covers {}",
            data.p(),
            hierarchy.n_features()
        )));
    }
    if na.kind == NaKind::Fail && data.has_missing() {
        return Err(Error::MissingData(FAIL_MESSAGE.into()));
    }
    let x = data.x();
    Ok(hierarchy
        .members(0)
        .iter()
        .map(|cols| {
            (0..data.n())
                .filter(|&i| cols.iter().all(|&j| !is_missing(x[[i, j]])))
                .collect()
        })
        .collect())
}

/// Rows of `z` with no missing entry in `cols`.
pub fn complete_rows(z: ArrayView2<f64>, cols: &[usize]) -> Vec<usize> {
    (0..z.nrows())
        .filter(|&i| cols.iter().all(|&j| !is_missing(z[[i, j]])))
        .collect()
}

/// Completes the meta-level matrix `z` according to `na`.
///
/// Matched-draw imputation runs `m` rounds. Each round fills every missing
/// cell with column means, then revisits the incomplete columns in
/// ascending order: a near-unpenalized linear model of the column on all
/// other columns and `y` is fitted to a bootstrap sample of the observed
/// rows, and each missing cell receives the observed value of one of the
/// `donors` observed rows whose predictions are closest to its own. The
/// returned matrix is the average of the completed matrices.
pub fn impute_meta(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    na: &NaAction,
    seed: u64,
) -> Result<(Array2<f64>, ImputationReport)> {
    if y.len() != z.nrows() {
        return Err(Error::Shape(format!(
            "{} outcomes for {} rows",
            y.len(),
            z.nrows()
        )));
    }
    let missing: Vec<Vec<usize>> = z
        .axis_iter(Axis(1))
        .map(|c| (0..c.len()).filter(|&i| is_missing(c[i])).collect())
        .collect();
    let tag = match na.kind {
        NaKind::Fail => {
            if missing.iter().any(|r| !r.is_empty()) {
                return Err(Error::MissingData(FAIL_MESSAGE.into()));
            }
            ""
        }
        NaKind::Pass => "pass",
        NaKind::Mean => "mean",
        NaKind::MatchedDraw => "matched_draw",
    };
    let mut report = ImputationReport {
        kind: na.kind,
        m: if na.kind == NaKind::MatchedDraw {
            na.m
        } else {
            1
        },
        options: na.options.clone(),
        columns: missing
            .iter()
            .map(|rows| ColumnImputation {
                method: if rows.is_empty() {
                    String::new()
                } else {
                    tag.to_string()
                },
                rows: rows.clone(),
                draws: Vec::new(),
            })
            .collect(),
    };
    if na.kind == NaKind::Pass || missing.iter().all(|r| r.is_empty()) {
        return Ok((z.to_owned(), report));
    }
    for (j, rows) in missing.iter().enumerate() {
        if rows.len() == z.nrows() {
            return Err(Error::Impute(format!(
                "column {} of the meta-level matrix is entirely missing",
                j + 1
            )));
        }
    }

    let mut filled = z.to_owned();
    for (j, rows) in missing.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let col = z.column(j);
        let observed: Vec<f64> = col.iter().copied().filter(|v| !is_missing(*v)).collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for &i in rows {
            filled[[i, j]] = mean;
        }
    }
    if na.kind == NaKind::Mean {
        return Ok((filled, report));
    }

    let mut sums: Vec<Vec<f64>> = missing.iter().map(|rows| vec![0.0; rows.len()]).collect();
    for round in 0..na.m {
        let draws = matched_draw_round(
            z,
            y,
            &filled,
            &missing,
            na.donors,
            seed::derive(seed, &[round as u64]),
        )?;
        for (j, d) in draws.into_iter().enumerate() {
            if missing[j].is_empty() {
                continue;
            }
            for (s, v) in sums[j].iter_mut().zip(&d) {
                *s += v;
            }
            report.columns[j].draws.push(d);
        }
    }
    for (j, rows) in missing.iter().enumerate() {
        for (&i, s) in rows.iter().zip(&sums[j]) {
            filled[[i, j]] = s / na.m as f64;
        }
    }
    Ok((filled, report))
}

fn matched_draw_round(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    initial: &Array2<f64>,
    missing: &[Vec<usize>],
    donors: usize,
    seed_: u64,
) -> Result<Vec<Vec<f64>>> {
    let (n, v) = z.dim();
    let mut rng = seed::rng(seed_);
    let mut current = initial.clone();
    let mut draws = vec![Vec::new(); v];
    let learner = LearnerSpec::glm_fixed(
        GlmSpec::ridge(Family::Gaussian).lambdas(LambdaPath::Explicit(vec![1e-6])),
    );
    for (j, rows) in missing.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        // Predictors: every other column as currently completed, plus y.
        let predictors =
            Array2::from_shape_fn((n, v), |(i, c)| if c == j { y[i] } else { current[[i, c]] });
        let observed: Vec<usize> = (0..n).filter(|&i| !is_missing(z[[i, j]])).collect();
        let boot: Vec<usize> = (0..observed.len())
            .map(|_| observed[rng.gen_range(0..observed.len())])
            .collect();
        let train_x = predictors.select(Axis(0), &boot);
        let train_y = Array1::from_iter(boot.iter().map(|&i| z[[i, j]]));
        let train = Dataset::new(train_x, train_y, Family::Gaussian)?;
        let model = learner.fit(&train, seed::derive(seed_, &[j as u64]))?;
        let pred = model.predict(predictors.view())?;
        let k = donors.min(observed.len());
        for &i in rows {
            let mut nearest = observed.clone();
            nearest.sort_by(|&a, &b| {
                (pred[a] - pred[i])
                    .abs()
                    .total_cmp(&(pred[b] - pred[i]).abs())
                    .then(a.cmp(&b))
            });
            let donor = nearest[rng.gen_range(0..k)];
            let value = z[[donor, j]];
            current[[i, j]] = value;
            draws[j].push(value);
        }
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const NA: f64 = f64::NAN;

    #[test]
    fn parse_actions() {
        assert_eq!(
            "matched-draw".parse::<NaKind>().unwrap(),
            NaKind::MatchedDraw
        );
        let err = "mice".parse::<NaKind>().unwrap_err().to_string();
        assert!(err.contains("fail, pass, mean, matched-draw"));
        let na = NaAction::with_options(NaKind::MatchedDraw, &[("m", "10")]).unwrap();
        assert_eq!((na.m, na.donors), (10, 5));
        assert!(NaAction::with_options(NaKind::Fail, &[("m", "2")]).is_err());
        assert!(NaAction::with_options(NaKind::MatchedDraw, &[("m", "0")]).is_err());
        assert!(NaAction::with_options(NaKind::Mean, &[("donors", "3")]).is_err());
    }

    #[test]
    fn mean_imputation() {
        let z = array![[0.2, 0.5], [NA, 0.1], [0.6, 0.3]];
        let y = array![0.0, 1.0, 1.0];
        let (out, report) =
            impute_meta(z.view(), y.view(), &NaAction::new(NaKind::Mean), 0).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![0.2, 0.4, 0.6]);
        assert_eq!(out.column(1), z.column(1));
        assert_eq!(report.method_tags(), vec!["mean", ""]);
    }

    #[test]
    fn pass_is_identity() {
        let z = array![[0.2, NA], [NA, 0.1], [0.6, 0.3]];
        let y = array![0.0, 1.0, 1.0];
        let (out, report) =
            impute_meta(z.view(), y.view(), &NaAction::new(NaKind::Pass), 0).unwrap();
        for (a, b) in out.iter().zip(z.iter()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(report.method_tags(), vec!["pass", "pass"]);
    }

    #[test]
    fn fully_missing_column_is_an_error() {
        let z = array![[NA, 0.5], [NA, 0.1]];
        let y = array![0.0, 1.0];
        let err = impute_meta(z.view(), y.view(), &NaAction::new(NaKind::Mean), 0).unwrap_err();
        assert_eq!(err.kind(), "impute");
    }

    #[test]
    fn matched_draw_uses_donor_values() {
        let mut rng = seed::rng(1);
        let n = 40;
        let y = Array1::from_iter((0..n).map(|i| (i % 2) as f64));
        let mut z =
            Array2::from_shape_fn((n, 3), |(i, _)| 0.3 + 0.4 * y[i] + 0.2 * rng.gen::<f64>());
        for i in 0..8 {
            z[[i, 0]] = NA;
        }
        z[[10, 2]] = NA;
        let na = NaAction::with_options(NaKind::MatchedDraw, &[("m", "10")]).unwrap();
        let (out, report) = impute_meta(z.view(), y.view(), &na, 3).unwrap();
        assert_eq!(report.m, 10);
        assert_eq!(
            report.method_tags(),
            vec!["matched_draw", "", "matched_draw"]
        );
        for j in [0, 2] {
            let observed: Vec<f64> = z
                .column(j)
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            let col = &report.columns[j];
            assert_eq!(col.draws.len(), 10);
            for round in &col.draws {
                assert_eq!(round.len(), col.rows.len());
                assert!(round.iter().all(|v| observed.contains(v)));
            }
            let lo = observed.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(col
                .rows
                .iter()
                .all(|&i| out[[i, j]] >= lo && out[[i, j]] <= hi));
        }
        for i in 8..n {
            if i != 10 {
                assert_eq!(out.row(i), z.row(i));
            }
        }
        let again = impute_meta(z.view(), y.view(), &na, 3).unwrap();
        assert_eq!(again.0, out);
    }
}
