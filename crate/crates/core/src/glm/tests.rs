use super::*;
use crate::data::Family;
use crate::seed;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn dataset(x: Array2<f64>, y: Array1<f64>, family: Family) -> Dataset {
    Dataset::new(x, y, family).unwrap()
}

/// Columns 1..=p of the 8x8 Sylvester Hadamard matrix: centered,
/// mutually orthogonal, each with squared norm n = 8.
fn hadamard_design(p: usize) -> Array2<f64> {
    Array2::from_shape_fn((8, p), |(i, j)| {
        if ((i & (j + 1)).count_ones() % 2) == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

fn random_problem(seed_: u64, n: usize, p: usize, family: Family) -> Dataset {
    let mut rng = seed::rng(seed_);
    let x = Array2::from_shape_fn((n, p), |_| rng.gen::<f64>() * 2.0 - 1.0);
    let y = Array1::from_iter((0..n).map(|i| {
        let eta = x[[i, 0]] - 0.5 * x[[i, 1 % p]] + 0.3 * rng.gen::<f64>();
        match family {
            Family::Gaussian => eta,
            Family::Binomial => (rng.gen::<f64>() < family.inverse_link(2.0 * eta)) as u8 as f64,
            Family::Poisson => (eta + 1.0).exp().round(),
        }
    }));
    dataset(x, y, family)
}

/// Minimizes a convex function of one variable on `[lo, hi]`.
fn ternary(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn soft_threshold_values() {
    assert_eq!(soft_threshold(3.0, 1.0), 2.0);
    assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    assert_eq!(nonneg_soft_threshold(3.0, 1.0), 2.0);
    assert_eq!(nonneg_soft_threshold(-3.0, 1.0), 0.0);
    assert_eq!(nonneg_soft_threshold(0.5, 1.0), 0.0);
}

#[test]
fn orthonormal_design_closed_form() {
    let x = hadamard_design(4);
    let y = array![3.0, -1.0, 2.5, 0.0, 1.0, 4.0, -2.0, 0.5];
    let data = dataset(x.clone(), y.clone(), Family::Gaussian);
    let ybar = y.mean().unwrap();
    let z: Vec<f64> = (0..4)
        .map(|j| {
            x.column(j)
                .iter()
                .zip(&y)
                .map(|(a, b)| a * (b - ybar))
                .sum::<f64>()
                / 8.0
        })
        .collect();
    for &alpha in &[1.0, 0.5, 0.0] {
        for &lambda in &[0.05, 0.3, 0.8, 2.0] {
            for &nonneg in &[false, true] {
                let spec = GlmSpec::new(Family::Gaussian, alpha)
                    .standardize(false)
                    .nonneg(nonneg);
                let fit = fit_lambda(&data, &spec, lambda).unwrap();
                for j in 0..4 {
                    let shrunk = if nonneg {
                        nonneg_soft_threshold(z[j], lambda * alpha)
                    } else {
                        soft_threshold(z[j], lambda * alpha)
                    };
                    let expected = shrunk / (1.0 + lambda * (1.0 - alpha));
                    assert!(
                        (fit.beta[j] - expected).abs() < 1e-7,
                        "alpha {alpha} lambda {lambda} nonneg {nonneg} j {j}: {} vs {expected}",
                        fit.beta[j]
                    );
                }
                assert!((fit.intercept - ybar).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn binomial_lasso_matches_grid_search() {
    let x = array![[-1.2], [-0.7], [-0.3], [0.1], [0.4], [0.9], [1.3], [1.8]];
    let y = array![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
    let data = dataset(x.clone(), y.clone(), Family::Binomial);
    let objective = |b0: f64, b1: f64, lambda: f64| {
        let nll: f64 = (0..8)
            .map(|i| {
                let eta = b0 + b1 * x[[i, 0]];
                (1.0 + eta.exp()).ln() - y[i] * eta
            })
            .sum();
        nll / 8.0 + lambda * b1.abs()
    };
    for &lambda in &[0.01, 0.05, 0.1] {
        let profile = |b1: f64| {
            let b0 = ternary(-10.0, 10.0, |b0| objective(b0, b1, lambda));
            objective(b0, b1, lambda)
        };
        let b1 = ternary(-10.0, 10.0, profile);
        let b0 = ternary(-10.0, 10.0, |b0| objective(b0, b1, lambda));
        let fit = fit_lambda(
            &data,
            &GlmSpec::lasso(Family::Binomial).standardize(false),
            lambda,
        )
        .unwrap();
        assert!((fit.beta[0] - b1).abs() < 1e-4, "{} vs {b1}", fit.beta[0]);
        assert!(
            (fit.intercept - b0).abs() < 1e-4,
            "{} vs {b0}",
            fit.intercept
        );
    }
}

/// Solves the p = 2 gaussian lasso by enumerating every support and sign
/// pattern and keeping the best consistent stationary point.
fn brute_force_lasso(x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> [f64; 2] {
    let n = x.nrows() as f64;
    let xm: Vec<f64> = (0..2).map(|j| x.column(j).mean().unwrap()).collect();
    let ym = y.mean().unwrap();
    let xc = Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, j]] - xm[j]);
    let yc = y - ym;
    let g: Vec<f64> = (0..2).map(|j| xc.column(j).dot(&yc) / n).collect();
    let h = |a: usize, b: usize| xc.column(a).dot(&xc.column(b)) / n;
    let obj = |b: [f64; 2]| {
        let r = &yc - &(&xc.column(0) * b[0] + &xc.column(1) * b[1]);
        r.dot(&r) / (2.0 * n) + lambda * (b[0].abs() + b[1].abs())
    };
    let mut best = [0.0, 0.0];
    let mut best_obj = obj(best);
    for s0 in [-1.0, 0.0, 1.0] {
        for s1 in [-1.0, 0.0, 1.0] {
            let cand = match (s0 != 0.0, s1 != 0.0) {
                (false, false) => continue,
                (true, false) => [(g[0] - lambda * s0) / h(0, 0), 0.0],
                (false, true) => [0.0, (g[1] - lambda * s1) / h(1, 1)],
                (true, true) => {
                    let (a, b, d) = (h(0, 0), h(0, 1), h(1, 1));
                    let r0 = g[0] - lambda * s0;
                    let r1 = g[1] - lambda * s1;
                    let det = a * d - b * b;
                    [(d * r0 - b * r1) / det, (a * r1 - b * r0) / det]
                }
            };
            let consistent = (s0 == 0.0 || cand[0] * s0 > 0.0) && (s1 == 0.0 || cand[1] * s1 > 0.0);
            if consistent && obj(cand) < best_obj {
                best_obj = obj(cand);
                best = cand;
            }
        }
    }
    best
}

#[test]
fn two_feature_lasso_matches_subset_enumeration() {
    for s in 0..10 {
        let mut rng = seed::rng(100 + s);
        let x = Array2::from_shape_fn((12, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let y = Array1::from_iter(
            (0..12).map(|i| x[[i, 0]] * 1.5 + x[[i, 1]] * 0.5 + rng.gen::<f64>()),
        );
        let data = dataset(x.clone(), y.clone(), Family::Gaussian);
        for &lambda in &[0.01, 0.1, 0.3] {
            let fit = fit_lambda(
                &data,
                &GlmSpec::lasso(Family::Gaussian).standardize(false),
                lambda,
            )
            .unwrap();
            let oracle = brute_force_lasso(&x, &y, lambda);
            for j in 0..2 {
                assert!(
                    (fit.beta[j] - oracle[j]).abs() < 1e-6,
                    "{:?} vs {oracle:?}",
                    fit.beta
                );
            }
        }
    }
}

#[test]
fn orthogonal_noise_feature_never_enters() {
    // x2 is orthogonal to x1, to the intercept and to y.
    let x = array![[1.0, 1.0], [2.0, -1.0], [3.0, -1.0], [4.0, 1.0]];
    let y = array![1.0, 3.0, 3.0, 5.0];
    let data = dataset(x, y, Family::Gaussian);
    let path = fit_path(&data, &GlmSpec::lasso(Family::Gaussian)).unwrap();
    assert!(path.betas.iter().all(|b| b[1] == 0.0));
    let mut fit = fit_lambda(&data, &GlmSpec::lasso(Family::Gaussian), 0.05).unwrap();
    relax_fit(&data, &mut fit).unwrap();
    // Least squares on x1 alone: slope 1.2, intercept 0.
    assert!((fit.beta[0] - 1.2).abs() < 1e-7);
    assert!(fit.intercept.abs() < 1e-7);
    assert_eq!(fit.beta[1], 0.0);
}

#[test]
fn large_lambda_gives_null_model() {
    for family in [Family::Gaussian, Family::Binomial, Family::Poisson] {
        let data = random_problem(3, 40, 3, family);
        let fit = fit_lambda(&data, &GlmSpec::lasso(family), 1e4).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        let ybar = data.y().mean().unwrap();
        assert!(
            (family.inverse_link(fit.intercept) - ybar).abs() < 1e-8,
            "{family}"
        );
        let path = fit_path(&data, &GlmSpec::lasso(family)).unwrap();
        assert!(path.betas[0].iter().all(|b| *b == 0.0));
        assert!(path.betas.last().unwrap().iter().any(|b| *b != 0.0));
    }
}

/// Largest violation of the elastic-net optimality conditions, on the
/// unstandardized scale.
fn kkt_violation(data: &Dataset, fit: &GlmFit, lambda: f64, alpha: f64, nonneg: bool) -> f64 {
    let x = data.x();
    let n = data.n() as f64;
    let family = data.family();
    let mu: Vec<f64> = (0..data.n())
        .map(|i| family.inverse_link(fit.intercept + x.row(i).dot(&Array1::from(fit.beta.clone()))))
        .collect();
    let mut worst: f64 = (data.y().iter().zip(&mu).map(|(y, m)| y - m).sum::<f64>() / n).abs();
    for j in 0..data.p() {
        let g: f64 = (0..data.n())
            .map(|i| x[[i, j]] * (data.y()[i] - mu[i]))
            .sum::<f64>()
            / n
            - lambda * (1.0 - alpha) * fit.beta[j];
        let b = fit.beta[j];
        let v = if b > 0.0 {
            (g - lambda * alpha).abs()
        } else if b < 0.0 {
            (g + lambda * alpha).abs()
        } else if nonneg {
            (g - lambda * alpha).max(0.0)
        } else {
            (g.abs() - lambda * alpha).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kkt_conditions_hold(
        seed_ in 0u64..1000,
        fam in 0usize..3,
        alpha in prop::sample::select(vec![0.0, 0.3, 1.0]),
        nonneg in any::<bool>(),
        frac in 0.02f64..0.8,
    ) {
        let family = [Family::Gaussian, Family::Binomial, Family::Poisson][fam];
        let data = random_problem(seed_, 30, 4, family);
        let spec = GlmSpec::new(family, alpha).standardize(false).nonneg(nonneg);
        let design = Design::new(data.x(), false).unwrap();
        let y = data.y().to_vec();
        let penalty = vec![1.0; 4];
        let lmax = Problem { design: &design, y: &y, family, alpha, nonneg, penalty: &penalty }.lambda_max();
        let lambda = (lmax * frac).max(1e-3);
        let fit = fit_lambda(&data, &spec, lambda).unwrap();
        prop_assert!(kkt_violation(&data, &fit, lambda, alpha, nonneg) < 1e-6);
        if nonneg {
            prop_assert!(fit.beta.iter().all(|b| *b >= 0.0));
        }
    }

    #[test]
    fn objective_never_increases_within_a_solve(seed_ in 0u64..1000, fam in 0usize..3, frac in 0.02f64..0.5) {
        let family = [Family::Gaussian, Family::Binomial, Family::Poisson][fam];
        let data = random_problem(seed_, 25, 5, family);
        let spec = GlmSpec::new(family, 0.5);
        let trace = objective_trace(&data, &spec, frac).unwrap();
        prop_assert!(!trace.is_empty());
        for inner in &trace {
            for w in inner.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn warm_start_matches_cold_start(seed_ in 0u64..1000, fam in 0usize..3) {
        let family = [Family::Gaussian, Family::Binomial, Family::Poisson][fam];
        let data = random_problem(seed_, 30, 4, family);
        let spec = GlmSpec::new(family, 0.7);
        let path = fit_path(&data, &spec).unwrap();
        for k in [0, path.len() / 2, path.len() - 1] {
            let cold = fit_lambda(&data, &spec, path.lambdas[k]).unwrap();
            for j in 0..4 {
                prop_assert!((cold.beta[j] - path.betas[k][j]).abs() < 1e-6);
            }
            prop_assert!((cold.intercept - path.intercepts[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn standardized_fit_is_scale_equivariant(seed_ in 0u64..1000, c in 0.01f64..100.0, fam in 0usize..2) {
        let family = [Family::Gaussian, Family::Binomial][fam];
        let data = random_problem(seed_, 30, 3, family);
        let mut x = data.x().to_owned();
        x.column_mut(1).mapv_inplace(|v| v * c);
        let scaled = dataset(x, data.y().to_owned(), family);
        let spec = GlmSpec::lasso(family);
        let a = fit_lambda(&data, &spec, 0.02).unwrap();
        let b = fit_lambda(&scaled, &spec, 0.02).unwrap();
        prop_assert!((a.beta[1] - b.beta[1] * c).abs() < 1e-8 * (1.0 + a.beta[1].abs()) + 1e-7);
        prop_assert!((a.beta[0] - b.beta[0]).abs() < 1e-7);
        prop_assert!((a.intercept - b.intercept).abs() < 1e-7);
    }

    #[test]
    fn one_se_never_picks_a_smaller_lambda(
        mean in prop::collection::vec(0.0f64..10.0, 1..30),
        se_scale in 0.0f64..3.0,
    ) {
        let se: Vec<f64> = mean.iter().map(|m| m * se_scale * 0.1).collect();
        let min = select_lambda_index(&mean, &se, LambdaRule::Min);
        let one = select_lambda_index(&mean, &se, LambdaRule::OneSe);
        prop_assert!(one <= min);
        prop_assert!(mean.iter().all(|m| *m >= mean[min]));
        prop_assert!(mean[one] <= mean[min] + se[min]);
    }
}

#[test]
fn lambda_selection_rules() {
    let mean = [3.0, 2.0, 1.0, 1.5];
    assert_eq!(select_lambda_index(&mean, &[0.0; 4], LambdaRule::Min), 2);
    assert_eq!(
        select_lambda_index(&mean, &[0.1, 0.1, 0.6, 0.1], LambdaRule::OneSe),
        2
    );
    assert_eq!(
        select_lambda_index(&mean, &[0.1, 0.1, 1.2, 0.1], LambdaRule::OneSe),
        1
    );
    // Ties go to the larger lambda, which comes first on the path.
    assert_eq!(
        select_lambda_index(&[2.0, 1.0, 1.0], &[0.0; 3], LambdaRule::Min),
        1
    );
}

#[test]
fn cv_selection_is_deterministic_and_on_path() {
    let data = random_problem(11, 60, 5, Family::Binomial);
    let cv = CvConfig::with_seed(5);
    let a = cv_select_lambda(&data, &GlmSpec::lasso(Family::Binomial), &cv).unwrap();
    let b = cv_select_lambda(&data, &GlmSpec::lasso(Family::Binomial), &cv).unwrap();
    assert_eq!(a, b);
    let curve = a.cv.as_ref().unwrap();
    assert_eq!(a.lambda_selected, a.path.lambdas[curve.selected]);
    assert_eq!(a.beta, a.path.betas[curve.selected]);
}

#[test]
fn single_class_fold_is_a_stratification_error() {
    let x = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
    let y = array![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let data = dataset(x, y, Family::Binomial);
    let cv = CvConfig {
        k_lambda: 6,
        ..CvConfig::default()
    };
    let err = cv_select_lambda(&data, &GlmSpec::lasso(Family::Binomial), &cv).unwrap_err();
    assert_eq!(err.kind(), "stratification");
}

#[test]
fn relaxing_an_empty_support_gives_the_intercept_model() {
    let data = random_problem(2, 20, 3, Family::Binomial);
    let mut fit = fit_lambda(&data, &GlmSpec::lasso(Family::Binomial), 1e3).unwrap();
    relax_fit(&data, &mut fit).unwrap();
    assert!(fit.relaxed);
    assert!(fit.beta.iter().all(|b| *b == 0.0));
    let ybar = data.y().mean().unwrap();
    assert!((Family::Binomial.inverse_link(fit.intercept) - ybar).abs() < 1e-10);
}

#[test]
fn relaxed_orthonormal_fit_is_least_squares_on_support() {
    let x = hadamard_design(3);
    let y = array![3.0, -1.0, 2.5, 0.0, 1.0, 4.0, -2.0, 0.5];
    let data = dataset(x.clone(), y.clone(), Family::Gaussian);
    let ybar = y.mean().unwrap();
    let mut fit = fit_lambda(
        &data,
        &GlmSpec::lasso(Family::Gaussian).standardize(false),
        0.4,
    )
    .unwrap();
    let support = fit.support();
    assert!(!support.is_empty() && support.len() < 3);
    relax_fit(&data, &mut fit).unwrap();
    for j in 0..3 {
        let z = x
            .column(j)
            .iter()
            .zip(&y)
            .map(|(a, b)| a * (b - ybar))
            .sum::<f64>()
            / 8.0;
        let expected = if support.contains(&j) { z } else { 0.0 };
        assert!((fit.beta[j] - expected).abs() < 1e-7);
    }
}

#[test]
fn adaptive_weight_values() {
    assert_eq!(
        weights_from_coefficients(&[2.0, -0.5, 0.0]),
        vec![0.5, 2.0, ADAPTIVE_WEIGHT_CAP]
    );
    assert_eq!(
        weights_from_coefficients(&[1e-20]),
        vec![ADAPTIVE_WEIGHT_CAP]
    );
}

#[test]
fn duplicated_columns_get_equal_adaptive_weights() {
    let base = random_problem(8, 40, 2, Family::Gaussian);
    let x = base.x();
    let dup = Array2::from_shape_fn((40, 3), |(i, j)| x[[i, if j == 2 { 0 } else { j }]]);
    let data = dataset(dup, base.y().to_owned(), Family::Gaussian);
    let w = adaptive_weights(&data, &CvConfig::with_seed(1), true).unwrap();
    assert!((w[0] - w[2]).abs() < 1e-8 * w[0]);
    assert!(w.iter().all(|v| *v > 0.0 && v.is_finite()));
}

#[test]
fn prediction_scales() {
    let data = random_problem(1, 10, 1, Family::Binomial);
    let mut fit = GlmFit::intercept_only(GlmSpec::lasso(Family::Binomial), data.y(), 1);
    fit.intercept = 1.0;
    fit.beta = vec![2.0];
    let x = array![[0.0], [1.0]];
    let link = glm_predict(&fit, x.view(), PredictScale::Link).unwrap();
    assert_eq!(link.to_vec(), vec![1.0, 3.0]);
    let resp = glm_predict(&fit, x.view(), PredictScale::Response).unwrap();
    assert!((resp[1] - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
    let wide = array![[0.0, 1.0]];
    assert_eq!(
        glm_predict(&fit, wide.view(), PredictScale::Link)
            .unwrap_err()
            .kind(),
        "shape"
    );
}

#[test]
fn constant_features_are_degenerate() {
    let x = Array2::from_elem((5, 2), 4.0);
    let data = dataset(x, array![1.0, 2.0, 3.0, 4.0, 5.0], Family::Gaussian);
    assert_eq!(
        fit_path(&data, &GlmSpec::ridge(Family::Gaussian))
            .unwrap_err()
            .kind(),
        "degenerate"
    );
}

#[test]
fn invalid_specs_are_rejected() {
    let data = random_problem(1, 10, 2, Family::Gaussian);
    let bad = [
        GlmSpec::new(Family::Gaussian, 1.5),
        GlmSpec::lasso(Family::Gaussian).lambdas(LambdaPath::Explicit(vec![0.1, 0.2])),
        GlmSpec::lasso(Family::Gaussian).weights(vec![1.0]),
        GlmSpec::lasso(Family::Binomial),
    ];
    for spec in bad {
        assert!(fit_path(&data, &spec).is_err());
    }
}
