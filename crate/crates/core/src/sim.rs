//! Synthetic multi-view data: standard normal features, a block of signal
//! coefficients with random signs, and an outcome drawn from the family.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family, ViewHierarchy, MISSING};
use crate::error::{Error, Result};
use crate::seed;

/// Rows `first..=last` (1-based) lose every feature of lowest-level view `view` (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingBlock {
    pub first: usize,
    pub last: usize,
    pub view: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    /// Feature counts of the lowest-level views, in column order.
    pub views: Vec<usize>,
    /// Top-level view (1-based) of every lowest-level view. When present the
    /// hierarchy has three levels.
    #[serde(default)]
    pub parents: Option<Vec<usize>>,
    /// Magnitude of the nonzero coefficients.
    pub signal: f64,
    /// 0-based position of the first nonzero coefficient.
    #[serde(default)]
    pub signal_start: usize,
    pub signal_count: usize,
    /// Multiply every coefficient by an independent random sign.
    #[serde(default = "yes")]
    pub random_sign: bool,
    pub family: Family,
    pub seed: u64,
    #[serde(default)]
    pub missing: Option<MissingBlock>,
}

fn yes() -> bool {
    true
}

impl SimSpec {
    /// n = 100, views of 45, 20 and 20 features, the first 65 coefficients ±10.
    pub fn two_level(seed: u64) -> Self {
        Self {
            n: 100,
            views: vec![45, 20, 20],
            parents: None,
            signal: 10.0,
            signal_start: 0,
            signal_count: 65,
            random_sign: true,
            family: Family::Binomial,
            seed,
            missing: None,
        }
    }

    /// The same 85 features split into nine sub-views (3 × 15, 2 × 10,
    /// 4 × 5) nested in the three views, with signal on features 16 to 55:
    /// sub-views 2 and 3 of view 1 and sub-view 1 of view 2.
    pub fn three_level(seed: u64) -> Self {
        Self {
            views: vec![15, 15, 15, 10, 10, 5, 5, 5, 5],
            parents: Some(vec![1, 1, 1, 2, 2, 3, 3, 3, 3]),
            signal_start: 15,
            signal_count: 40,
            ..Self::two_level(seed)
        }
    }

    pub fn p(&self) -> usize {
        self.views.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "need at least 2 observations, got {}",
                self.n
            )));
        }
        if self.views.is_empty() || self.views.contains(&0) {
            return Err(Error::Config(
                "every view needs at least one feature".into(),
            ));
        }
        if self.signal_start + self.signal_count > self.p() {
            return Err(Error::Config(format!(
                "signal block {}..{} exceeds the {} features",
                self.signal_start,
                self.signal_start + self.signal_count,
                self.p()
            )));
        }
        if !self.signal.is_finite() {
            return Err(Error::Config("signal magnitude must be finite".into()));
        }
        if let Some(par) = &self.parents {
            if par.len() != self.views.len() {
                return Err(Error::Config(format!(
                    "{} parents for {} views",
                    par.len(),
                    self.views.len()
                )));
            }
        }
        if let Some(m) = &self.missing {
            if m.first < 1
                || m.first > m.last
                || m.last > self.n
                || m.view < 1
                || m.view > self.views.len()
            {
                return Err(Error::Config(format!(
                    "missing block rows {}..={} of view {} is out of range",
                    m.first, m.last, m.view
                )));
            }
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<ViewHierarchy> {
        let p = self.p();
        let lowest: Vec<i64> = self
            .views
            .iter()
            .enumerate()
            .flat_map(|(v, &c)| std::iter::repeat(v as i64 + 1).take(c))
            .collect();
        match &self.parents {
            None => ViewHierarchy::from_vector(&lowest),
            Some(par) => {
                let labels = Array2::from_shape_fn((p, 2), |(j, c)| {
                    let v = lowest[j];
                    if c == 0 {
                        v
                    } else {
                        par[(v - 1) as usize] as i64
                    }
                });
                ViewHierarchy::validate(labels.view(), p, 3)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulated {
    pub data: Dataset,
    pub hierarchy: ViewHierarchy,
    /// The true coefficients.
    pub beta: Array1<f64>,
}

pub fn simulate(spec: &SimSpec) -> Result<Simulated> {
    spec.validate()?;
    let hierarchy = spec.hierarchy()?;
    let (n, p) = (spec.n, spec.p());
    let mut rng = seed::rng(spec.seed);
    let mut x = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    let beta = Array1::from_iter((0..p).map(|j| {
        let on = j >= spec.signal_start && j < spec.signal_start + spec.signal_count;
        let magnitude = if on { spec.signal } else { 0.0 };
        // Signs are drawn for every coefficient so the stream does not
        // depend on where the signal sits.
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if spec.random_sign {
            magnitude * sign
        } else {
            magnitude
        }
    }));
    let eta = x.dot(&beta);
    let y = Array1::from_iter(eta.iter().map(|&e| match spec.family {
        Family::Gaussian => {
            let noise: f64 = StandardNormal.sample(&mut rng);
            e + noise
        }
        Family::Binomial => {
            if rng.gen::<f64>() < Family::Binomial.inverse_link(e) {
                1.0
            } else {
                0.0
            }
        }
        Family::Poisson => {
            let rate = e.clamp(-30.0, 13.0).exp();
            Poisson::new(rate)
                .map(|d| d.sample(&mut rng))
                .unwrap_or(0.0)
        }
    }));
    if let Some(m) = &spec.missing {
        let cols = &hierarchy.members(0)[m.view - 1];
        for i in m.first - 1..m.last {
            for &j in cols {
                x[[i, j]] = MISSING;
            }
        }
    }
    Ok(Simulated {
        data: Dataset::new(x, y, spec.family)?,
        hierarchy,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_zero_block() {
        let s = simulate(&SimSpec::two_level(1)).unwrap();
        assert_eq!((s.data.n(), s.data.p()), (100, 85));
        let zeros: Vec<usize> = (0..85).filter(|&j| s.beta[j] == 0.0).collect();
        assert_eq!(zeros, (65..85).collect::<Vec<_>>());
        assert!(s.beta.iter().all(|b| b.abs() == 10.0 || *b == 0.0));
        assert!(s.beta.iter().any(|b| *b < 0.0));
        assert_eq!(s.hierarchy.view_counts(), &[3]);
    }

    #[test]
    fn three_level_zero_sub_views() {
        let s = simulate(&SimSpec::three_level(2)).unwrap();
        assert_eq!(s.hierarchy.view_counts(), &[9, 3]);
        let subs = s.hierarchy.members(0);
        let signal: Vec<bool> = subs
            .iter()
            .map(|f| f.iter().any(|&j| s.beta[j] != 0.0))
            .collect();
        assert_eq!(
            signal,
            vec![false, true, true, true, false, false, false, false, false]
        );
        for (f, on) in subs.iter().zip(&signal) {
            assert!(f.iter().all(|&j| (s.beta[j] != 0.0) == *on));
        }
    }

    #[test]
    fn reproducible_with_missing_block() {
        let spec = SimSpec {
            missing: Some(MissingBlock {
                first: 1,
                last: 50,
                view: 1,
            }),
            ..SimSpec::two_level(7)
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.data.y(), b.data.y());
        let x = a.data.x();
        let missing = x.iter().filter(|v| v.is_nan()).count();
        assert_eq!(missing, 50 * 45);
        assert!(
            x[[0, 0]].is_nan()
                && x[[49, 44]].is_nan()
                && !x[[50, 0]].is_nan()
                && !x[[0, 45]].is_nan()
        );
    }

    #[test]
    fn invalid_specs() {
        let mut s = SimSpec::two_level(0);
        s.signal_count = 90;
        assert!(simulate(&s).is_err());
        let mut s = SimSpec::two_level(0);
        s.views = vec![45, 0, 40];
        assert!(simulate(&s).is_err());
    }
}
