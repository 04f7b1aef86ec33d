//! Fold assignment and out-of-sample (cross-validated) predictions.

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family, MISSING};
use crate::error::{Error, Result};
use crate::learner::LearnerSpec;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
    stratified: bool,
    seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn stratified(&self) -> bool {
        self.stratified
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// 0-based fold of every observation.
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }

    /// (training rows, held-out rows) for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n()).partition(|&i| self.fold_of[i] != f)
    }
}

/// Assigns `n = y.len()` observations to `k` folds.
///
/// Rows are shuffled with the seed and dealt round-robin, so fold sizes
/// differ by at most one. Binomial outcomes are stratified: each class is
/// dealt in turn, which keeps every fold's class counts within one of each
/// other. If a class has fewer than `k` members, stratification is dropped.
pub fn make_folds(
    y: ArrayView1<f64>,
    k: usize,
    family: Family,
    seed: u64,
) -> Result<FoldAssignment> {
    let n = y.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!(
            "cannot split {n} observations into {k} folds"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut stratified = false;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    if family == Family::Binomial {
        let (mut ones, mut zeros): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| y[i] > 0.5);
        if ones.len() >= k && zeros.len() >= k {
            ones.shuffle(&mut rng);
            zeros.shuffle(&mut rng);
            order.extend(ones);
            order.extend(zeros);
            stratified = true;
        } else {
            log::warn!(
                "a class has fewer than {k} members ({} ones, {} zeros); using unstratified folds",
                ones.len(),
                zeros.len()
            );
        }
    }
    if !stratified {
        order.extend(0..n);
        order.shuffle(&mut rng);
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment {
        fold_of,
        k,
        stratified,
        seed,
    })
}

/// Cross-validated response-scale predictions of `learner` trained on the
/// given columns. Every `z[i]` comes from a model that never saw row `i`.
///
/// The learner for fold `f` is seeded with `derive(seed, [f])`.
pub fn oos_predictions(
    data: &Dataset,
    columns: &[usize],
    learner: &LearnerSpec,
    folds: &FoldAssignment,
    seed: u64,
    parallel: bool,
) -> Result<Array1<f64>> {
    let all: Vec<usize> = (0..data.n()).collect();
    oos_predictions_partial(data, columns, learner, folds, &all, seed, parallel)
}

/// As [`oos_predictions`], but training and predicting only on `complete`
/// rows. Rows outside `complete` get the missing marker.
pub fn oos_predictions_partial(
    data: &Dataset,
    columns: &[usize],
    learner: &LearnerSpec,
    folds: &FoldAssignment,
    complete: &[usize],
    seed: u64,
    parallel: bool,
) -> Result<Array1<f64>> {
    if folds.n() != data.n() {
        return Err(Error::Shape(format!(
            "fold assignment covers {} rows, data has {}",
            folds.n(),
            data.n()
        )));
    }
    if complete.len() < folds.k() {
        return Err(Error::Data(format!(
            "only {} complete rows for {} folds",
            complete.len(),
            folds.k()
        )));
    }
    let run = |f: usize| -> Result<(Vec<usize>, Array1<f64>)> {
        let (train, test): (Vec<usize>, Vec<usize>) =
            complete.iter().partition(|&&i| folds.fold_of[i] != f);
        if test.is_empty() {
            return Ok((test, Array1::zeros(0)));
        }
        if train.len() < 2 {
            return Err(Error::Data(format!(
                "fold {} has {} complete training rows",
                f + 1,
                train.len()
            ))
            .in_fold(f + 1));
        }
        let model = learner
            .fit(
                &data.subset(&train, columns),
                seed::derive(seed, &[f as u64]),
            )
            .map_err(|e| e.in_fold(f + 1))?;
        let held_out = data.subset(&test, columns);
        let pred = model.predict(held_out.x()).map_err(|e| e.in_fold(f + 1))?;
        Ok((test, pred))
    };
    let results: Vec<Result<(Vec<usize>, Array1<f64>)>> = if parallel {
        (0..folds.k()).into_par_iter().map(run).collect()
    } else {
        (0..folds.k()).map(run).collect()
    };
    let mut z = Array1::from_elem(data.n(), MISSING);
    for r in results {
        let (rows, pred) = r?;
        for (i, v) in rows.into_iter().zip(pred) {
            z[i] = v;
        }
    }
    Ok(z)
}
