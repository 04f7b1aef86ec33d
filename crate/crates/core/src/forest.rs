//! CART random forests for classification (binomial) and regression.
//!
//! Classification leaves store the proportion of class 1, so forest
//! predictions are probabilities. Importance is the mean decrease in
//! impurity (Gini for classification, squared error for regression) summed
//! over each tree's splits and averaged over trees.

use ndarray::{Array1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::seed::{self, purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestSpec {
    pub n_trees: usize,
    /// Features tried per split; defaults to `floor(sqrt(p))` for
    /// classification and `floor(p / 3)` for regression (at least 1).
    pub mtry: Option<usize>,
    /// Nodes with at most this many samples are not split; defaults to 1
    /// for classification and 5 for regression.
    pub min_node: Option<usize>,
    /// Grow each tree on a bootstrap resample of size n.
    pub bootstrap: bool,
    pub seed: u64,
    /// Grow trees on the rayon pool. Results are identical either way.
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node: None,
            bootstrap: true,
            seed: 0,
            parallel: false,
        }
    }
}

impl ForestSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn resolve(&self, p: usize, classification: bool) -> Result<(usize, usize)> {
        if self.n_trees == 0 {
            return Err(Error::Config("a forest needs at least one tree".into()));
        }
        let mtry = self.mtry.unwrap_or(if classification {
            (p as f64).sqrt().floor() as usize
        } else {
            p / 3
        });
        let mtry = if self.mtry.is_none() {
            mtry.max(1)
        } else {
            mtry
        };
        if mtry < 1 || mtry > p {
            return Err(Error::Config(format!(
                "mtry must lie in [1, {p}], got {mtry}"
            )));
        }
        let min_node = self
            .min_node
            .unwrap_or(if classification { 1 } else { 5 })
            .max(1);
        Ok((mtry, min_node))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestFit {
    pub classification: bool,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Mean decrease in impurity per feature.
    pub importance: Vec<f64>,
    /// Out-of-bag prediction per training row; `None` for rows that were in
    /// every bootstrap sample. Diagnostics only.
    pub oob_predictions: Vec<Option<f64>>,
}

struct Grown {
    tree: Tree,
    importance: Vec<f64>,
    in_bag: Vec<bool>,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    classification: bool,
    mtry: usize,
    min_node: usize,
}

impl Grower<'_> {
    /// `n * impurity` of the samples: `2 n1 n0 / n` for two classes, or the
    /// sum of squared deviations for regression.
    fn total_impurity(&self, sum: f64, sum_sq: f64, count: f64) -> f64 {
        if count == 0.0 {
            return 0.0;
        }
        if self.classification {
            2.0 * sum * (count - sum) / count
        } else {
            (sum_sq - sum * sum / count).max(0.0)
        }
    }

    fn grow(&self, rng: &mut seed::Rng, rows: Vec<usize>) -> (Tree, Vec<f64>) {
        let p = self.x.ncols();
        let mut importance = vec![0.0; p];
        let mut nodes: Vec<Node> = Vec::new();
        // (node slot, samples)
        let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
        nodes.push(Node::Leaf { value: 0.0 });
        stack.push((0, rows));
        let mut order: Vec<(f64, f64)> = Vec::new();
        while let Some((slot, samples)) = stack.pop() {
            let count = samples.len() as f64;
            let (sum, sum_sq) = samples.iter().fold((0.0, 0.0), |(s, q), &i| {
                let v = self.y[i];
                (s + v, q + v * v)
            });
            let value = sum / count;
            let parent = self.total_impurity(sum, sum_sq, count);
            if samples.len() <= self.min_node || parent <= 1e-12 {
                nodes[slot] = Node::Leaf { value };
                continue;
            }
            let mut features = sample(rng, p, self.mtry).into_vec();
            features.sort_unstable();

            let mut best: Option<(f64, usize, f64)> = None;
            for &f in &features {
                order.clear();
                order.extend(samples.iter().map(|&i| (self.x[(i, f)], self.y[i])));
                order.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (mut ls, mut lq) = (0.0, 0.0);
                for k in 0..order.len() - 1 {
                    let (xv, yv) = order[k];
                    ls += yv;
                    lq += yv * yv;
                    let next = order[k + 1].0;
                    if next <= xv {
                        continue;
                    }
                    let lc = (k + 1) as f64;
                    let left = self.total_impurity(ls, lq, lc);
                    let right = self.total_impurity(sum - ls, sum_sq - lq, count - lc);
                    let decrease = parent - left - right;
                    if best.map_or(true, |(d, _, _)| decrease > d) {
                        let mut thr = 0.5 * (xv + next);
                        if thr >= next {
                            thr = xv;
                        }
                        best = Some((decrease, f, thr));
                    }
                }
            }
            match best {
                Some((decrease, feature, threshold)) if decrease > 1e-12 => {
                    importance[feature] += decrease;
                    let (l, r): (Vec<usize>, Vec<usize>) = samples
                        .iter()
                        .partition(|&&i| self.x[(i, feature)] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, r));
                    stack.push((left, l));
                }
                _ => nodes[slot] = Node::Leaf { value },
            }
        }
        (Tree { nodes }, importance)
    }

    fn grow_tree(&self, seed: u64, index: usize, bootstrap: bool) -> Grown {
        let n = self.y.len();
        let mut rng = seed::rng_at(seed, &[purpose::TREE, index as u64]);
        let mut in_bag = vec![false; n];
        let rows: Vec<usize> = if bootstrap {
            (0..n)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect()
        } else {
            in_bag.fill(true);
            (0..n).collect()
        };
        let (tree, importance) = self.grow(&mut rng, rows);
        Grown {
            tree,
            importance,
            in_bag,
        }
    }
}

pub fn forest_fit(data: &Dataset, spec: &ForestSpec) -> Result<ForestFit> {
    let n = data.n();
    let p = data.p();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    if data.x().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "feature matrix contains missing or non-finite values".into(),
        ));
    }
    let classification = data.family() == Family::Binomial;
    let y = data.y().to_vec();
    if classification {
        let ones = y.iter().filter(|v| **v > 0.5).count();
        if ones == 0 || ones == n {
            return Err(Error::Degenerate(
                "binomial outcome has a single class".into(),
            ));
        }
    }
    let (mtry, min_node) = spec.resolve(p, classification)?;
    let grower = Grower {
        x: data.x(),
        y: &y,
        classification,
        mtry,
        min_node,
    };
    let grow = |t: usize| grower.grow_tree(spec.seed, t, spec.bootstrap);
    let grown: Vec<Grown> = if spec.parallel {
        (0..spec.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..spec.n_trees).map(grow).collect()
    };

    let mut importance = vec![0.0; p];
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    for g in &grown {
        for (acc, v) in importance.iter_mut().zip(&g.importance) {
            *acc += v;
        }
        for i in (0..n).filter(|&i| !g.in_bag[i]) {
            oob_sum[i] += g.tree.predict_row(|j| data.x()[(i, j)]);
            oob_count[i] += 1;
        }
    }
    let t = spec.n_trees as f64;
    importance.iter_mut().for_each(|v| *v /= t);
    let oob_predictions = oob_sum
        .iter()
        .zip(&oob_count)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(ForestFit {
        classification,
        n_features: p,
        trees: grown.into_iter().map(|g| g.tree).collect(),
        importance,
        oob_predictions,
    })
}

pub fn forest_predict(fit: &ForestFit, x_new: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x_new.ncols() != fit.n_features {
        return Err(Error::Shape(format!(
            "forest expects {} columns, got {}",
            fit.n_features,
            x_new.ncols()
        )));
    }
    let t = fit.trees.len() as f64;
    Ok(Array1::from_iter(x_new.rows().into_iter().map(|row| {
        fit.trees
            .iter()
            .map(|tree| tree.predict_row(|j| row[j]))
            .sum::<f64>()
            / t
    })))
}
