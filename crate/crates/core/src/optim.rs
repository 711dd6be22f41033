//! Projected quasi-Newton minimization over the non-negative orthant.
//!
//! Bound-constrained BFGS in the style of projected Newton methods: variables
//! sitting on their bound with a gradient pushing outward are held fixed, the
//! remaining ones take a quasi-Newton step, and the step is projected back onto
//! `x ≥ 0` during a backtracking Armijo search. An objective may return
//! `+∞` to mark a point as infeasible; the line search then backs off.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Convergence threshold on the projected-gradient infinity norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x − P(x − ∇f)‖∞` at the returned point.
    pub projected_gradient: f64,
}

pub fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| (xi - (xi - gi).max(0.0)).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, `n × n`).
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = scale;
    }
    m
}

/// Minimizes `f` over `x ≥ 0` starting from the projection of `start`.
///
/// `f` returns the value and gradient; an error aborts the search. The start
/// must evaluate to a finite value.
pub fn minimize_nonneg<E, F>(mut f: F, start: &[f64], opts: &BfgsOptions) -> Result<Minimum, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let n = start.len();
    let mut x: Vec<f64> = start.iter().map(|v| v.max(0.0)).collect();
    let (mut fx, mut g) = f(&x)?;
    assert!(fx.is_finite(), "start point must be feasible");

    let mut hess = identity(n, 1.0);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let pg = projected_gradient_norm(&x, &g);
        if pg <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<usize> = (0..n).filter(|&i| !(x[i] <= 0.0 && g[i] > 0.0)).collect();
        let mut d = vec![0.0; n];
        let sub: Vec<f64> = free
            .iter()
            .flat_map(|&i| free.iter().map(move |&j| (i, j)))
            .map(|(i, j)| hess[i * n + j])
            .collect();
        let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
        match cholesky_solve(&sub, &rhs) {
            Some(step) => {
                for (k, &i) in free.iter().enumerate() {
                    d[i] = step[k];
                }
            }
            None => {
                hess = identity(n, 1.0);
                fresh = true;
                for &i in &free {
                    d[i] = -g[i];
                }
            }
        }
        if fresh {
            let big = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if big > 1.0 {
                d.iter_mut().for_each(|v| *v /= big);
            }
        }
        if dot(&g, &d) >= 0.0 {
            hess = identity(n, 1.0);
            fresh = true;
            for &i in &free {
                d[i] = -g[i];
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| (xi + alpha * di).max(0.0)).collect();
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if s.iter().all(|v| *v == 0.0) {
                break;
            }
            let (ft, gt) = f(&trial)?;
            let slack = 8.0 * f64::EPSILON * fx.abs();
            if ft.is_finite() && ft <= fx + 1e-4 * dot(&g, &s) + slack {
                accepted = Some((trial, s, ft, gt));
                break;
            }
            alpha *= 0.5;
        }

        let Some((trial, s, ft, gt)) = accepted else {
            if fresh {
                break;
            }
            hess = identity(n, 1.0);
            fresh = true;
            continue;
        };

        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                hess = identity(n, dot(&y, &y) / sy);
            }
            let bs: Vec<f64> = (0..n).map(|i| dot(&hess[i * n..(i + 1) * n], &s)).collect();
            let sbs = dot(&s, &bs);
            for i in 0..n {
                for j in 0..n {
                    hess[i * n + j] += y[i] * y[j] / sy - bs[i] * bs[j] / sbs;
                }
            }
            fresh = false;
        }
        x = trial;
        fx = ft;
        g = gt;
    }

    let projected_gradient = projected_gradient_norm(&x, &g);
    Ok(Minimum {
        converged: converged || projected_gradient <= opts.tol,
        x,
        value: fx,
        gradient: g,
        iterations,
        projected_gradient,
    })
}
