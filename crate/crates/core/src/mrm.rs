//! Minority Report Measure: how much the stacked prediction moves when one
//! view's prediction moves from `a` to `b` while every other view at the
//! same level is held at `constant`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stacking::{predict_from, MvsModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrmQuery {
    /// Level whose inputs are scored: `level = 2` scores the lowest-level
    /// views, `level = levels` the inputs of the final meta-model.
    pub level: usize,
    pub a: f64,
    pub b: f64,
    /// Value of the other inputs; `None` uses the mean outcome of the
    /// training data.
    pub constant: Option<f64>,
}

impl MrmQuery {
    pub fn new(level: usize) -> Self {
        Self {
            level,
            a: 0.0,
            b: 1.0,
            constant: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrmResult {
    pub level: usize,
    pub a: f64,
    pub b: f64,
    /// The constant actually used.
    pub constant: f64,
    pub values: Vec<f64>,
}

pub fn mrm(model: &MvsModel, query: &MrmQuery) -> Result<MrmResult> {
    let levels = model.n_levels();
    if query.level < 2 || query.level > levels {
        return Err(Error::Config(format!(
            "MRM level must lie in [2, {levels}], got {}",
            query.level
        )));
    }
    if query.a == query.b || !query.a.is_finite() || !query.b.is_finite() {
        return Err(Error::Config(format!(
            "a and b must be distinct finite values, got {} and {}",
            query.a, query.b
        )));
    }
    let constant = query.constant.unwrap_or(model.y_mean);
    let v = model.level(query.level - 1).n_models();
    let mut rows = Array2::from_elem((2 * v, v), constant);
    for i in 0..v {
        rows[[2 * i, i]] = query.b;
        rows[[2 * i + 1, i]] = query.a;
    }
    let pred = predict_from(model, query.level, rows.view())?;
    Ok(MrmResult {
        level: query.level,
        a: query.a,
        b: query.b,
        constant,
        values: (0..v).map(|i| pred[2 * i] - pred[2 * i + 1]).collect(),
    })
}
