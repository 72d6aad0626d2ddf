//! BFGS minimisation with finite-difference derivatives.

/// Settings for [`minimize_bfgs`].
#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    /// Converged when the gradient infinity-norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Central-difference step for gradients.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 500, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl OptimResult {
    pub fn gradient_norm(&self) -> f64 {
        inf_norm(&self.gradient)
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order five-point stencil, used as an independent reference gradient.
pub fn richardson_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut at = |xp: &mut Vec<f64>, i: usize, d: f64| {
        xp[i] = x[i] + d;
        let v = f(xp);
        xp[i] = x[i];
        v
    };
    (0..x.len())
        .map(|i| {
            let f2p = at(&mut xp, i, 2.0 * h);
            let f1p = at(&mut xp, i, h);
            let f1m = at(&mut xp, i, -h);
            let f2m = at(&mut xp, i, -2.0 * h);
            (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h)
        })
        .collect()
}

/// Symmetric Hessian by central second differences with step `h`.
pub fn central_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut xp = x.to_vec();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        hess[i][i] = (up - 2.0 * f0 + down) / (h * h);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Inverse of a symmetric positive-definite matrix via Cholesky; `None` if
/// the matrix is not numerically positive definite.
pub fn spd_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 1e-12 * a[i][i].abs().max(1e-300)) || !d.is_finite() {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    // columns of L^-T L^-1
    let mut inv = vec![vec![0.0; n]; n];
    for c in 0..n {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
            y[i] = (rhs - s) / l[i][i];
        }
        let mut z = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[k][i] * z[k]).sum();
            z[i] = (y[i] - s) / l[i][i];
        }
        for i in 0..n {
            inv[i][c] = z[i];
        }
    }
    Some(inv)
}

/// Minimises `f` from `x0` by BFGS with an Armijo backtracking line search.
/// Non-finite function values are treated as infeasible and backtracked from.
pub fn minimize_bfgs<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut g = central_gradient(&mut eval, &x, opts.fd_step);
    let mut h_inv: Vec<Vec<f64>> = (0..n).map(|i| unit(n, i)).collect();
    let mut iterations = 0;
    let mut fresh = true;
    let mut stalled = 0;

    while iterations < opts.max_iter && inf_norm(&g) >= opts.grad_tol && fx.is_finite() {
        iterations += 1;
        let mut d: Vec<f64> = h_inv.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h_inv = (0..n).map(|i| unit(n, i)).collect();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            fresh = true;
        }
        if fresh {
            // keep the first step in a sane range for log-parameters
            let max = inf_norm(&d);
            if max > 1.0 {
                d.iter_mut().for_each(|v| *v /= max);
                slope /= max;
            }
        }
        let noise = 8.0 * f64::EPSILON * fx.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let fnew = eval(&xn);
            if fnew.is_finite() && (fnew <= fx + 1e-4 * step * slope || (step == 1.0 && fnew <= fx + noise && !fresh)) {
                accepted = Some((xn, fnew));
                break;
            }
            step *= if fnew.is_finite() { 0.5 } else { 0.1 };
        }
        // a step that leaves x unchanged is a failed line search
        let accepted = accepted.filter(|(xn, _)| xn != &x);
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            h_inv = (0..n).map(|i| unit(n, i)).collect();
            fresh = true;
            continue;
        };
        let gn = central_gradient(&mut eval, &xn, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h_inv.iter_mut().flatten().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
            fresh = false;
        }
        stalled = if fnew < fx { 0 } else { stalled + 1 };
        x = xn;
        fx = fnew;
        g = gn;
        if stalled == 3 {
            break;
        }
    }
    let converged = inf_norm(&g) < opts.grad_tol && fx.is_finite();
    OptimResult { x, value: fx, gradient: g, iterations, evaluations, converged }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

// H <- (I - rho s y') H (I - rho y s') + rho s s'
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}
