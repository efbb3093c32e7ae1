use lmebn::lme::{fit_lme, profiled_deviance, LmeConfig, LmeProblem};
use lmebn::nalgebra::{DMatrix, DVector};
use lmebn_oracles::gauss::mean_and_se;
use lmebn_oracles::mixed::{one_way_loglik, one_way_max, DenseLme};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Random-intercept-and-slopes data; returns the problem and its dense twin.
fn instance(seed: u64, n_groups: usize, per_group: usize, parents: usize, re_sd: f64) -> (LmeProblem, DenseLme) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = parents + 1;
    let n = n_groups * per_group;
    let beta: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
    let effects: Vec<Vec<f64>> = (0..n_groups)
        .map(|_| (0..q).map(|_| re_sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut y = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n * q);
    let mut groups = Vec::with_capacity(n);
    for k in 0..n {
        let g = k % n_groups;
        let mut row = vec![1.0];
        row.extend((0..parents).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mean: f64 = row.iter().enumerate().map(|(c, x)| x * (beta[c] + effects[g][c])).sum();
        y.push(mean + rng.sample::<f64, _>(StandardNormal));
        rows.extend(row);
        groups.push(g);
    }
    let design = DMatrix::from_row_slice(n, q, &rows);
    let problem = LmeProblem::new(y.clone(), design.clone(), groups.clone(), n_groups).unwrap();
    (problem, DenseLme::new(y, design, groups))
}

#[test]
fn ml_matches_dense_brute_force_on_tiny_instances() {
    let mut worst: f64 = 0.0;
    for seed in 0..12 {
        let re_sd = [0.0, 0.3, 1.0][seed as usize % 3];
        let (problem, dense) = instance(100 + seed, 3, 8, 1, re_sd);
        let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
        let (oracle, _) = dense.brute_force_max();
        let gap = (fit.loglik - oracle).abs();
        worst = worst.max(gap);
        assert!(gap < 1e-3, "seed {seed}: fit {} vs brute force {oracle}", fit.loglik);
    }
    eprintln!("largest log-likelihood gap {worst:.2e}");
}

#[test]
fn intercept_only_matches_brute_force() {
    for seed in 0..4 {
        let (problem, dense) = instance(200 + seed, 5, 6, 0, 0.8);
        let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
        let (oracle, _) = dense.brute_force_max();
        assert!((fit.loglik - oracle).abs() < 1e-3);
    }
}

#[test]
fn loglik_is_the_dense_density_at_the_estimates() {
    for (seed, parents, groups, per) in [(1, 0, 4, 10), (2, 1, 5, 12), (3, 2, 6, 20), (4, 2, 10, 20), (5, 1, 8, 25)] {
        let (problem, dense) = instance(seed, groups, per, parents, 0.7);
        let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
        let direct = dense.loglik(&fit.beta, &fit.re_cov, fit.sigma2);
        assert!((fit.loglik - direct).abs() < 1e-6, "{} vs {direct}", fit.loglik);
    }
}

#[test]
fn balanced_one_way_matches_closed_form_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let group_effect = Normal::new(0.0, 1.2).unwrap();
    for _ in 0..3 {
        let groups: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let b = group_effect.sample(&mut rng);
                (0..6).map(|_| 5.0 + b + rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let y: Vec<f64> = groups.iter().flatten().copied().collect();
        let labels: Vec<usize> = (0..24).map(|k| k / 6).collect();
        let problem = LmeProblem::new(y, DMatrix::from_element(24, 1, 1.0), labels, 4).unwrap();
        let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
        let (oracle, between, within) = one_way_max(&groups);
        assert!((fit.loglik - oracle).abs() < 1e-4, "{} vs {oracle}", fit.loglik);
        assert!((fit.re_cov[(0, 0)] - between).abs() < 1e-3 * (1.0 + between));
        assert!((fit.sigma2 - within).abs() < 1e-3 * within);
    }
}

#[test]
fn identity_theta_deviance_matches_dense_formula() {
    let groups = vec![vec![1.0, 2.5, 0.5], vec![3.0, 4.0, 2.0], vec![-1.0, 0.0, 1.5], vec![2.0, 2.2, 1.9]];
    let y: Vec<f64> = groups.iter().flatten().copied().collect();
    let labels: Vec<usize> = (0..12).map(|k| k / 3).collect();
    let design = DMatrix::from_element(12, 1, 1.0);
    let problem = LmeProblem::new(y.clone(), design.clone(), labels.clone(), 4).unwrap();
    let dense = DenseLme::new(y, design, labels);
    let profile = profiled_deviance(&problem, &[1.0]);
    assert!((profile.deviance + 2.0 * dense.profiled(&[1.0])).abs() < 1e-6);
    // the same value through the closed form at the profiled variances
    let sigma2 = profile.sigma2;
    let direct = one_way_loglik(&groups, sigma2, sigma2);
    assert!((profile.deviance + 2.0 * direct).abs() < 1e-6);
}

#[test]
fn single_group_beta_is_gls() {
    for seed in 0..5 {
        let (problem, _) = instance(300 + seed, 1, 15, 2, 0.0);
        let n = problem.n_obs();
        let dense = DenseLme::new(
            problem.response().iter().copied().collect(),
            problem.design().clone(),
            vec![0; n],
        );
        let theta = [0.8, -0.3, 0.5, 0.1, 0.2, 0.4];
        let profile = profiled_deviance(&problem, &theta);
        let l = lmebn_oracles::mixed::unpack(&theta, 3);
        let v = dense.marginal_cov(&(&l * l.transpose()), 1.0);
        let gls = dense.gls(&v);
        assert!((&profile.beta - &gls).amax() < 1e-6, "{} vs {gls}", profile.beta);
    }
}

#[test]
fn boundary_fit_reduces_to_pooled_ols() {
    // every group holds exactly the same points, so there is no between-group variation
    let xs = [-1.5, -0.5, 0.2, 0.9, 1.7, 2.4];
    let ys = [0.1, 1.9, 2.2, 3.9, 4.4, 6.8];
    let mut y = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for g in 0..4 {
        for (x, v) in xs.iter().zip(&ys) {
            y.push(*v);
            rows.extend([1.0, *x]);
            labels.push(g);
        }
    }
    let n = y.len();
    let design = DMatrix::from_row_slice(n, 2, &rows);
    let problem = LmeProblem::new(y.clone(), design.clone(), labels, 4).unwrap();
    let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
    assert!(fit.boundary);
    let ols = (design.transpose() * &design).try_inverse().unwrap() * design.transpose() * DVector::from_vec(y);
    for c in 0..2 {
        assert!((fit.beta[c] - ols[c]).abs() <= 1e-4 * ols[c].abs().max(1.0), "{} vs {ols}", fit.beta);
    }
}

#[test]
fn implied_variance_matches_simulation() {
    let (problem, _) = instance(77, 6, 20, 1, 0.8);
    let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
    let x = [1.0, 1.3];
    let expected = fit.marginal_variance(&x[1..]);
    let chol = (&fit.re_cov + DMatrix::identity(2, 2) * 1e-12).cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws: Vec<f64> = (0..40_000)
        .map(|_| {
            let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = &chol * z;
            let coef = &fit.beta + b;
            x[0] * coef[0] + x[1] * coef[1] + fit.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let (mean, _) = mean_and_se(&draws);
    let sq: Vec<f64> = draws.iter().map(|d| (d - mean).powi(2)).collect();
    let (var, se) = mean_and_se(&sq);
    assert!((var - expected).abs() < 3.0 * se, "{var} vs {expected} (se {se})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_parameters_are_valid(seed in 0u64..10_000, parents in 0usize..3, groups in 2usize..7, sd in 0.0f64..1.5) {
        let (problem, _) = instance(seed, groups, 8, parents, sd);
        let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
        prop_assert!(fit.sigma2 > 0.0);
        let c = &fit.re_cov;
        prop_assert!((c - c.transpose()).amax() <= 1e-12 * (1.0 + c.amax()));
        let eig = c.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-9 * (1.0 + c.amax()));
        let mut mean = DVector::zeros(fit.n_fixed());
        for b in &fit.blups {
            mean += b;
        }
        mean /= groups as f64;
        prop_assert!(mean.norm() <= 1e-3 * (1.0 + fit.beta.norm()));
    }

    #[test]
    fn random_intercepts_shrink_toward_pooled_mean(seed in 0u64..10_000, groups in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per = rng.random_range(2..8);
        let mut y = Vec::new();
        let mut labels = Vec::new();
        for g in 0..groups {
            let shift: f64 = rng.random_range(-2.0..2.0);
            for _ in 0..per {
                y.push(shift + rng.sample::<f64, _>(StandardNormal));
                labels.push(g);
            }
        }
        let n = y.len();
        let problem = LmeProblem::new(y.clone(), DMatrix::from_element(n, 1, 1.0), labels.clone(), groups).unwrap();
        let fit = fit_lme(&problem, &LmeConfig::default()).unwrap();
        let pooled = y.iter().sum::<f64>() / n as f64;
        for g in 0..groups {
            let own: Vec<f64> = y.iter().zip(&labels).filter(|(_, &l)| l == g).map(|(v, _)| *v).collect();
            let own = own.iter().sum::<f64>() / own.len() as f64;
            let fitted = fit.beta[0] + fit.blups[g][0];
            let (lo, hi) = (pooled.min(own), pooled.max(own));
            prop_assert!(fitted >= lo - 1e-6 && fitted <= hi + 1e-6, "group {}: {} not in [{}, {}]", g, fitted, lo, hi);
        }
    }
}
