//! Bound-constrained Nelder-Mead simplex search.

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub initial_step: f64,
    pub rel_tol: f64,
    pub max_evals: usize,
    /// Extra searches started from the incumbent once a search has converged.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            rel_tol: 1e-8,
            max_evals: 1000,
            restarts: 2,
        }
    }
}

fn project(x: &mut [f64], lower: &[f64]) {
    for (xi, &lo) in x.iter_mut().zip(lower) {
        if *xi < lo {
            *xi = lo;
        }
    }
}

/// Minimises `f` over the box `x >= lower`; infeasible trial points are
/// projected back onto the box. Non-finite values are treated as +inf.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lower: &[f64], opts: SimplexOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    project(&mut best_x, lower);
    let mut best_f = eval(&best_x, &mut evals);
    let mut converged = false;

    for round in 0..=opts.restarts {
        let start_f = best_f;
        let run = simplex_run(&mut eval, &best_x, best_f, lower, opts, &mut evals);
        if run.1 <= best_f {
            best_x = run.0;
            best_f = run.1;
        }
        converged = run.2;
        if evals >= opts.max_evals {
            break;
        }
        // a restart that finds nothing new confirms the optimum
        if round > 0 && converged && (start_f - best_f).abs() <= tolerance(opts.rel_tol, best_f) {
            break;
        }
    }
    Minimum {
        x: best_x,
        value: best_f,
        evaluations: evals,
        converged,
    }
}

fn tolerance(rel_tol: f64, reference: f64) -> f64 {
    rel_tol * reference.abs().max(1.0)
}

fn simplex_run<E>(
    eval: &mut E,
    x0: &[f64],
    f0: f64,
    lower: &[f64],
    opts: SimplexOptions,
    evals: &mut usize,
) -> (Vec<f64>, f64, bool)
where
    E: FnMut(&[f64], &mut usize) -> f64,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let d = x0.len();
    if d == 0 {
        return (Vec::new(), f0, true);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..d {
        let mut x = x0.to_vec();
        let step = if x[i].abs() > 1e-8 { opts.initial_step * x[i].abs().max(0.1) } else { opts.initial_step };
        x[i] += step;
        project(&mut x, lower);
        let fx = eval(&x, evals);
        simplex.push((x, fx));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fb = simplex[0].1;
        let fw = simplex[d].1;
        if fw.is_finite() && fw - fb <= tolerance(opts.rel_tol, fb) {
            let best = simplex.swap_remove(0);
            return (best.0, best.1, true);
        }
        if *evals >= opts.max_evals {
            let best = simplex.swap_remove(0);
            return (best.0, best.1, false);
        }

        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / d as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p, lower);
            p
        };
        let worst = simplex[d].0.clone();
        let xr = along(ALPHA, &worst);
        let fr = eval(&xr, evals);

        if fr < fb {
            let xe = along(GAMMA, &worst);
            let fe = eval(&xe, evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < fw {
            let xc = along(ALPHA * RHO, &worst);
            let fc = eval(&xc, evals);
            (xc, fc)
        } else {
            let xc = along(-RHO, &worst);
            let fc = eval(&xc, evals);
            (xc, fc)
        };
        if fc < fr.min(fw) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best
                .iter()
                .zip(&item.0)
                .map(|(b, xi)| b + SIGMA * (xi - b))
                .collect();
            project(&mut x, lower);
            let fx = eval(&x, evals);
            *item = (x, fx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions {
            max_evals: 5000,
            rel_tol: 1e-14,
            ..Default::default()
        };
        let m = nelder_mead(f, &[-1.2, 1.0], &[f64::NEG_INFINITY; 2], opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn respects_lower_bound() {
        let f = |x: &[f64]| (x[0] + 2.0).powi(2) + (x[1] - 3.0).powi(2);
        let m = nelder_mead(f, &[1.0, 1.0], &[0.0, f64::NEG_INFINITY], SimplexOptions::default());
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 3.0).abs() < 1e-3);
        assert!(m.converged);
    }
}
