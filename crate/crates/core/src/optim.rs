//! Minimizers and finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this (absolute).
    pub f_tol: f64,
    /// and the simplex diameter below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 20_000, f_tol: 1e-10, x_tol: 1e-8 }
    }
}

/// Nelder–Mead simplex search with dimension-adaptive coefficients.
///
/// `step[i]` is the initial simplex edge along coordinate `i`. Non-finite
/// objective values are treated as worse than any finite value.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(step.len(), n);
    let nf = n as f64;
    let (alpha, gamma, rho, shrink) = if n > 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut converged = false;

    while evals < opts.max_evals {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let spread = fv[n] - fv[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if fv[0].is_finite() && spread.abs() <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let towards = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let xr = towards(alpha);
        let fr = eval(&xr);
        evals += 1;
        if fr < fv[0] {
            let xe = towards(alpha * gamma);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[n] {
            let xc = towards(alpha * rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = towards(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < fv[n].min(fr) {
            simplex[n] = xc;
            fv[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + shrink * (*x - b);
            }
            fv[i] = eval(&simplex[i]);
        }
        evals += n;
    }

    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), f: fv[best], iterations, evaluations: evals, converged }
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Convergence when half the Newton decrement `g' H^-1 g / 2` drops below this.
    pub decrement_tol: f64,
    pub max_damping_steps: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 200, decrement_tol: 1e-12, max_damping_steps: 40 }
    }
}

/// Value, gradient and Hessian, or `None` outside the domain.
pub type Derivatives = Option<(f64, Vec<f64>, Vec<Vec<f64>>)>;

/// Levenberg–Marquardt damped Newton minimization.
///
/// `f` is the objective used for step acceptance (it may add box penalties);
/// `derivs` returns value, gradient and Hessian. Convergence requires a
/// positive definite Hessian and a small Newton decrement.
pub fn damped_newton<F, D>(f: F, derivs: D, x0: &[f64], opts: &NewtonOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    D: Fn(&[f64]) -> Derivatives,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut lambda = 0.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    if !fx.is_finite() {
        return Minimum { x, f: fx, iterations, evaluations: evals, converged };
    }

    'outer: while iterations < opts.max_iter {
        iterations += 1;
        let Some((_, g, h)) = derivs(&x) else { break };
        evals += 1;
        let hm = DMatrix::from_fn(n, n, |i, j| h[i][j]);
        let gv = DVector::from_vec(g);

        if let Some(chol) = hm.clone().cholesky() {
            let step = chol.solve(&gv);
            let dec = gv.dot(&step);
            if dec.is_finite() && dec * 0.5 < opts.decrement_tol {
                converged = true;
                break;
            }
        }

        let scale: Vec<f64> = (0..n).map(|i| hm[(i, i)].abs().max(1e-8)).collect();
        for _ in 0..opts.max_damping_steps {
            let mut damped = hm.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * scale[i];
            }
            let Some(chol) = damped.cholesky() else {
                lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                continue;
            };
            let step = chol.solve(&gv);
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
            let ft = f(&trial);
            evals += 1;
            if ft.is_finite() && ft <= fx {
                let gain = fx - ft;
                x = trial;
                fx = ft;
                lambda = if lambda < 1e-6 { 0.0 } else { lambda * 0.1 };
                if gain == 0.0 {
                    // no progress possible at machine precision
                    converged = is_pd(&hm);
                    break 'outer;
                }
                continue 'outer;
            }
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
        }
        // damping exhausted: no descent step found
        converged = false;
        break;
    }
    Minimum { x, f: fx, iterations, evaluations: evals, converged }
}

fn is_pd(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Per-coordinate step `1e-4 (1 + |x_i|)`.
pub fn default_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect()
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], steps: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = steps[i];
            xp[i] = x[i] + h;
            let a = f(&xp);
            xp[i] = x[i] - h;
            let b = f(&xp);
            xp[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference Hessian.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut h = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        h[i][i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Inverse of a symmetric positive definite matrix, or `None`.
pub fn spd_inverse(h: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = h.len();
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let inv = m.cholesky()?.inverse();
    Some((0..n).map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect()).collect())
}

/// General inverse via LU, or `None` when singular.
pub fn general_inverse(h: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = h.len();
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let inv = m.try_inverse()?;
    Some((0..n).map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect()).collect())
}
