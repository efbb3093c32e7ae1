use lmebn::model::{fit_parameters, LocalDistribution};
use lmebn::nalgebra::{DMatrix, DVector};
use lmebn::search::{hill_climb, SearchConfig};
use lmebn::simgen::{
    build_replicate, generate_dataset, make_homogeneous, random_connected_dag, sample_true_bn, ExperimentConfig,
    Scenario, TrueBn,
};
use lmebn::{Execution, LmeConfig, Strategy};
use lmebn_oracles::gauss::{mean_and_se, sample_variance};

fn truth(n: usize, groups: usize, seed: u64) -> TrueBn {
    let dag = random_connected_dag(n, 1.5, seed).unwrap();
    sample_true_bn(&dag, groups, seed + 1).unwrap()
}

#[test]
fn simulated_parents_explain_85_percent() {
    let bn = truth(10, 5, 40);
    let data = generate_dataset(&bn, &[10_000; 5], 41).unwrap();
    let by_group = data.rows_by_group();
    let mut checked = 0;
    for i in 0..bn.n_vars() {
        let parents = bn.dag().continuous_parents(i);
        if parents.is_empty() {
            continue;
        }
        for (j, rows) in by_group.iter().enumerate() {
            let lg = bn.params(i, j);
            let x: Vec<f64> = rows.iter().map(|&r| data.value(r, i)).collect();
            let fitted: Vec<f64> = rows
                .iter()
                .map(|&r| lg.intercept + parents.iter().zip(&lg.coefficients).map(|(&p, b)| b * data.value(r, p)).sum::<f64>())
                .collect();
            let resid: Vec<f64> = x.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            let r2 = 1.0 - sample_variance(&resid) / sample_variance(&x);
            assert!((0.80..=0.90).contains(&r2), "node {i} group {j}: R^2 = {r2}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn sampled_covariance_matches_compiled_joint() {
    let bn = truth(5, 3, 7);
    let model = bn.to_model().unwrap();
    let joint = model.compile_joint().unwrap();
    let data = generate_dataset(&bn, &[20_000; 3], 8).unwrap();
    for (j, rows) in data.rows_by_group().iter().enumerate() {
        let g = joint.component(j);
        for a in 0..5 {
            for b in 0..=a {
                let prods: Vec<f64> = rows
                    .iter()
                    .map(|&r| (data.value(r, a) - g.mean()[a]) * (data.value(r, b) - g.mean()[b]))
                    .collect();
                let (cov, se) = mean_and_se(&prods);
                let expected = g.cov()[(a, b)];
                assert!((cov - expected).abs() < 4.0 * se, "group {j} ({a},{b}): {cov} vs {expected} (se {se})");
            }
        }
    }
}

#[test]
fn predictor_variance_matches_compiled_joint() {
    let bn = truth(8, 4, 3);
    let joint = bn.to_model().unwrap().compile_joint().unwrap();
    for i in 0..8 {
        let parents = bn.dag().continuous_parents(i);
        for j in 0..4 {
            let b = DVector::from_vec(bn.params(i, j).coefficients.clone());
            let sub = DMatrix::from_fn(parents.len(), parents.len(), |r, c| joint.component(j).cov()[(parents[r], parents[c])]);
            let direct = if parents.is_empty() { 0.0 } else { (b.transpose() * sub * &b)[(0, 0)] };
            let lib = bn.predictor_variance(i, j);
            assert!((lib - direct).abs() <= 1e-9 * (1.0 + direct), "{lib} vs {direct}");
            if parents.is_empty() {
                assert_eq!(bn.params(i, j).variance, 1.0);
            } else {
                assert!((bn.params(i, j).variance - direct * 0.15 / 0.85).abs() <= 1e-9 * direct);
            }
        }
    }
}

#[test]
fn homogeneous_truth_has_identical_groups() {
    let bn = make_homogeneous(&truth(6, 5, 11));
    let joint = bn.to_model().unwrap().compile_joint().unwrap();
    for j in 1..5 {
        assert_eq!(joint.component(j).mean(), joint.component(0).mean());
        assert_eq!(joint.component(j).cov(), joint.component(0).cov());
    }
}

#[test]
fn log_density_equals_compiled_joint_for_learned_models() {
    let config = ExperimentConfig {
        n_vars: vec![6],
        n_j: vec![20],
        ..ExperimentConfig::default()
    };
    let rep = build_replicate(&config, &config.cells()[0], 0).unwrap();
    for strategy in Strategy::ALL {
        let found = hill_climb(&rep.train, strategy, &SearchConfig::default()).unwrap();
        let model = fit_parameters(&found.dag, &rep.train, strategy, &LmeConfig::default(), Execution::Sequential).unwrap();
        let joint = model.compile_joint().unwrap();
        for k in (0..rep.eval.n_rows()).step_by(97) {
            let row = rep.eval.row(k);
            for j in 0..model.n_groups() {
                let a = model.log_density(&row, j).unwrap();
                let b = joint.log_joint(&row, j);
                assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{strategy}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn per_group_fits_are_per_group_least_squares() {
    let config = ExperimentConfig {
        n_vars: vec![5],
        n_j: vec![30],
        ..ExperimentConfig::default()
    };
    let rep = build_replicate(&config, &config.cells()[0], 1).unwrap();
    let d = &rep.train;
    let dag = lmebn::model::strategy_dag(d, Strategy::Cgbn, &[(0, 2), (1, 2)]).unwrap();
    let model = fit_parameters(&dag, d, Strategy::Cgbn, &LmeConfig::default(), Execution::Sequential).unwrap();
    let LocalDistribution::PerGroup { groups, .. } = &model.local(2).distribution else { panic!() };
    for (j, rows) in d.rows_by_group().iter().enumerate() {
        let x = DMatrix::from_fn(rows.len(), 3, |r, c| if c == 0 { 1.0 } else { d.value(rows[r], c - 1) });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| d.value(r, 2)));
        let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
        assert!((groups[j].intercept - beta[0]).abs() < 1e-8);
        assert!((groups[j].coefficients[0] - beta[1]).abs() < 1e-8);
        assert!((groups[j].coefficients[1] - beta[2]).abs() < 1e-8);
    }
}

#[test]
fn replicates_are_reproducible_and_shared_across_sample_sizes() {
    let config = ExperimentConfig {
        n_j: vec![10, 20],
        scenarios: vec![Scenario::Balanced, Scenario::Unbalanced],
        ..ExperimentConfig::default()
    };
    let cells = config.cells();
    let a = build_replicate(&config, &cells[0], 1).unwrap();
    let b = build_replicate(&config, &cells[0], 1).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.eval, b.eval);
    for cell in &cells[1..] {
        let other = build_replicate(&config, cell, 1).unwrap();
        assert_eq!(other.truth.dag(), a.truth.dag());
        assert_ne!(other.train, a.train);
        assert_eq!(other.train.n_rows(), cell.group_sizes().unwrap().iter().sum::<usize>());
    }
    let unbalanced = cells.iter().find(|c| c.scenario == Scenario::Unbalanced).unwrap();
    let sizes = unbalanced.group_sizes().unwrap();
    let n: usize = sizes.iter().sum();
    assert_eq!(n, unbalanced.n_groups * unbalanced.n_j);
    let big = (0.3 * n as f64).round() as usize;
    assert_eq!(sizes.iter().filter(|&&s| s == big).count(), 2);
}
