//! Derivative-free simplex minimization with the standard coefficients
//! (reflection 1, expansion 2, contraction 1/2, shrink 1/2).

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop once the spread of simplex values falls below this.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 200, f_tol: 1e-9 }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Minimizes `f` from `x0`; the initial simplex offsets coordinate i by `step[i]`.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        if evals >= opts.max_evals {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    if simplex.len() < n + 1 {
        let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty simplex");
        return NelderMeadResult { x: best.0, f: best.1, evals };
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    // A step costs at most two evaluations before any shrink.
    while evals + 2 <= opts.max_evals {
        let worst = simplex[n].1;
        let best = simplex[0].1;
        if (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) {
            break;
        }
        let mut c = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { c.iter().zip(&simplex[n].0).map(|(ci, wi)| ci + t * (ci - wi)).collect() };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(worst) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    if evals >= opts.max_evals {
                        break;
                    }
                    let x: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, xi)| b + 0.5 * (xi - b)).collect();
                    let v = eval(&x, &mut evals);
                    *item = (x, v);
                }
            }
        }
        order(&mut simplex);
    }
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult { x, f, evals }
}
