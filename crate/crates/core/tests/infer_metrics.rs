use lmebn::infer::{classify_all, exact_conditional_mean, likelihood_weighting, predict_all, Engine, Evidence};
use lmebn::metrics::{evaluate, mc_kl_variables, model_kl, EvalOptions};
use lmebn::model::fit_parameters;
use lmebn::search::{hill_climb, SearchConfig};
use lmebn::simgen::{build_replicate, ExperimentConfig, Replicate};
use lmebn::{BnModel, Execution, GroupJoint, LmeConfig, Strategy};
use lmebn_oracles::gauss::{kl, labelled_mixture_kl, mixture_kl, Mvn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn replicate(n_vars: usize, groups: usize, n_j: usize, rep: usize) -> Replicate {
    let config = ExperimentConfig {
        n_vars: vec![n_vars],
        n_groups: vec![groups],
        n_j: vec![n_j],
        eval_rows: 300,
        ..ExperimentConfig::default()
    };
    build_replicate(&config, &config.cells()[0], rep).unwrap()
}

fn learn(rep: &Replicate, strategy: Strategy) -> BnModel {
    let found = hill_climb(&rep.train, strategy, &SearchConfig::default()).unwrap();
    fit_parameters(&found.dag, &rep.train, strategy, &LmeConfig::default(), Execution::Sequential).unwrap()
}

fn dense(joint: &GroupJoint) -> Vec<(f64, Mvn)> {
    joint
        .components()
        .iter()
        .zip(joint.prior())
        .map(|(g, &w)| (w, Mvn::new(g.mean().clone(), g.cov().clone())))
        .collect()
}

#[test]
fn exact_conditioning_matches_dense_formula() {
    let rep = replicate(6, 3, 20, 0);
    let truth = rep.truth.to_model().unwrap();
    let joint = truth.compile_joint().unwrap();
    let comps = dense(&joint);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let row = rep.eval.row(rng.random_range(0..rep.eval.n_rows()));
        let target = rng.random_range(0..6);
        let observed: Vec<usize> = (0..6).filter(|&i| i != target && rng.random_bool(0.6)).collect();
        let mut ev = Evidence::none(6);
        for &i in &observed {
            ev.values[i] = Some(row[i]);
        }
        let values: Vec<f64> = observed.iter().map(|&i| row[i]).collect();
        for j in 0..3 {
            ev.group = Some(j);
            let (m, _) = comps[j].1.condition(&observed, &values, target);
            let got = exact_conditional_mean(&joint, &ev, target).unwrap();
            assert!((got - m).abs() < 1e-8 * (1.0 + m.abs()), "{got} vs {m}");
        }
        // unknown group: mixture weights from the marginal density of the evidence
        ev.group = None;
        let logs: Vec<f64> = comps
            .iter()
            .map(|(w, c)| {
                if observed.is_empty() {
                    return w.ln();
                }
                let sub = Mvn::new(
                    lmebn::nalgebra::DVector::from_iterator(observed.len(), observed.iter().map(|&i| c.mean[i])),
                    lmebn::nalgebra::DMatrix::from_fn(observed.len(), observed.len(), |a, b| c.cov[(observed[a], observed[b])]),
                );
                w.ln() + sub.log_pdf(&values)
            })
            .collect();
        let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = logs.iter().map(|l| (l - hi).exp()).collect();
        let total: f64 = ws.iter().sum();
        let expected: f64 = ws
            .iter()
            .zip(&comps)
            .map(|(w, (_, c))| w / total * c.condition(&observed, &values, target).0)
            .sum();
        let got = exact_conditional_mean(&joint, &ev, target).unwrap();
        assert!((got - expected).abs() < 1e-7 * (1.0 + expected.abs()), "{got} vs {expected}");
    }
}

#[test]
fn likelihood_weighting_agrees_with_exact_inference() {
    let rep = replicate(5, 3, 20, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut queries = 0;
    for strategy in [Strategy::Cgbn, Strategy::Lme] {
        let model = learn(&rep, strategy);
        let joint = model.compile_joint().unwrap();
        for q in 0..5 {
            let row = rep.eval.row(rng.random_range(0..rep.eval.n_rows()));
            let target = rng.random_range(0..5);
            let mut ev = Evidence::leave_one_out(&row, target, None);
            if q % 2 == 0 {
                ev.group = Some(rng.random_range(0..3));
            }
            if q == 4 {
                ev.values[(target + 1) % 5] = None;
            }
            let exact = exact_conditional_mean(&joint, &ev, target).unwrap();
            let lw = likelihood_weighting(&model, &ev, &[target], 20_000, 1000 + q as u64).unwrap();
            let se = lw.standard_errors[0];
            assert!((lw.means[0] - exact).abs() <= 3.0 * se, "{strategy} query {q}: {} vs {exact} (se {se})", lw.means[0]);
            queries += 1;
        }
    }
    assert_eq!(queries, 10);
}

#[test]
fn predictions_match_conditioning_on_everything_else() {
    let rep = replicate(5, 3, 20, 2);
    let model = learn(&rep, Strategy::Lme);
    let joint = model.compile_joint().unwrap();
    let known = predict_all(&model, &rep.eval, true, Engine::Exact, 0, Execution::Parallel).unwrap();
    let unknown = predict_all(&model, &rep.eval, false, Engine::Exact, 0, Execution::Sequential).unwrap();
    let groups = rep.eval.groups();
    for k in (0..rep.eval.n_rows()).step_by(37) {
        let row = rep.eval.row(k);
        for i in 0..5 {
            let a = exact_conditional_mean(&joint, &Evidence::leave_one_out(&row, i, Some(groups[k])), i).unwrap();
            let b = exact_conditional_mean(&joint, &Evidence::leave_one_out(&row, i, None), i).unwrap();
            assert!((known[i][k] - a).abs() < 1e-7 * (1.0 + a.abs()));
            assert!((unknown[i][k] - b).abs() < 1e-7 * (1.0 + b.abs()));
        }
    }
    let gbn = learn(&rep, Strategy::Gbn);
    let a = predict_all(&gbn, &rep.eval, true, Engine::Exact, 0, Execution::Sequential).unwrap();
    let b = predict_all(&gbn, &rep.eval, false, Engine::Exact, 0, Execution::Sequential).unwrap();
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
    }
}

#[test]
fn model_kl_agrees_with_monte_carlo_on_random_pairs() {
    for pair in 0..20 {
        let rep = replicate(4, 2 + pair % 3, 15, pair);
        let truth = rep.truth.to_model().unwrap();
        let learned = learn(&rep, Strategy::ALL[pair % 3]);
        let closed = model_kl(&truth, &learned).unwrap();
        let t = dense(&truth.compile_joint().unwrap());
        let lj = learned.compile_joint().unwrap();
        let l: Vec<(f64, Mvn)> = truth
            .group_labels()
            .iter()
            .map(|lab| {
                let j = learned.group_index(lab).unwrap();
                let g = lj.component(j);
                (lj.prior()[j], Mvn::new(g.mean().clone(), g.cov().clone()))
            })
            .collect();
        let direct: f64 = t.iter().zip(&l).map(|((wp, p), (wq, q))| wp * ((wp / wq).ln() + kl(p, q))).sum();
        assert!((closed - direct).abs() < 1e-8 * (1.0 + direct), "pair {pair}: {closed} vs {direct}");
        let (mc, se) = labelled_mixture_kl(&t, &l, 40_000, 500 + pair as u64);
        assert!((closed - mc).abs() <= 3.0 * se, "pair {pair}: closed {closed} vs MC {mc} (se {se})");
    }
}

#[test]
fn variable_only_kl_estimates_agree() {
    for pair in 0..5 {
        let rep = replicate(4, 3, 15, 40 + pair);
        let truth = rep.truth.to_model().unwrap();
        let learned = learn(&rep, Strategy::Lme);
        let lib = mc_kl_variables(&truth, &learned, 20_000, 7).unwrap();
        let (mc, se) = mixture_kl(&dense(&truth.compile_joint().unwrap()), &dense(&learned.compile_joint().unwrap()), 20_000, 8);
        let tol = 3.0 * (lib.standard_error.powi(2) + se.powi(2)).sqrt();
        assert!((lib.value - mc).abs() <= tol, "{} vs {mc} (tol {tol})", lib.value);
    }
}

#[test]
fn evaluating_the_truth_against_itself() {
    let rep = replicate(6, 4, 20, 3);
    let truth = rep.truth.to_model().unwrap();
    let row = evaluate(&truth, &truth, &rep.eval, rep.train.n_rows(), rep.truth.parameter_count(), &EvalOptions::default()).unwrap();
    assert_eq!(row.shd, 0);
    assert_eq!(row.shd_xonly, 0);
    assert!(row.kl_joint.abs() < 1e-9);
    assert!(row.kl_mc_xonly.abs() < 1e-12);
    let classes = classify_all(&truth, &rep.eval, Execution::Sequential).unwrap();
    let joint = truth.compile_joint().unwrap();
    for k in (0..rep.eval.n_rows()).step_by(29) {
        let x = rep.eval.row(k);
        let post = lmebn::infer::classify_group(&joint, &x);
        let best = (0..post.len()).fold(0, |b, j| if post[j] > post[b] { j } else { b });
        assert_eq!(classes[k], best);
    }
    assert!(row.f1 > 0.5 && row.f1 <= 1.0);
}

#[test]
fn evaluation_is_reproducible_across_execution_modes() {
    let rep = replicate(5, 3, 15, 4);
    let truth = rep.truth.to_model().unwrap();
    let learned = learn(&rep, Strategy::Lme);
    let run = |execution| {
        let opts = EvalOptions {
            engine: Engine::LikelihoodWeighting { samples: 200 },
            mc_samples: 500,
            seed: 3,
            execution,
        };
        evaluate(&truth, &learned, &rep.eval, rep.train.n_rows(), 10, &opts).unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metric_rows_stay_in_range(rep in 0usize..1000, strategy in 0usize..3) {
        let r = replicate(4, 3, 10, rep);
        let truth = r.truth.to_model().unwrap();
        let learned = learn(&r, Strategy::ALL[strategy]);
        let opts = EvalOptions { mc_samples: 200, ..EvalOptions::default() };
        let m = evaluate(&truth, &learned, &r.eval, r.train.n_rows(), r.truth.parameter_count(), &opts).unwrap();
        prop_assert!(m.kl_joint >= -1e-9);
        prop_assert!((0.0..=1.0).contains(&m.f1));
        prop_assert!(m.rmad_known_f >= 0.0 && m.rmad_unknown_f >= 0.0);
        prop_assert!(m.n_over_p > 0.0);
        prop_assert!(m.shd_xonly <= m.shd);
    }
}
