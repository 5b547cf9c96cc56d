//! Bounded Levenberg-Marquardt for small dense problems.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative decrease of the cost falls below this.
    pub ftol: f64,
    /// Stop when every relative parameter step falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-15,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    /// `(J^T J)^-1` at the solution; `None` if singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub iterations: usize,
    pub converged: bool,
}

fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], r0: &[f64], lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let mut jac = vec![vec![0.0; x.len()]; r0.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let mut h = 1e-7 * x[k].abs().max(1e-7);
        // Step inward at an upper bound.
        if x[k] + h > upper[k] {
            h = -h;
        }
        if x[k] + h < lower[k] {
            h = -h;
        }
        xp[k] = x[k] + h;
        let r = f(&xp);
        xp[k] = x[k];
        for i in 0..r0.len() {
            jac[i][k] = (r[i] - r0[i]) / h;
        }
    }
    jac
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        cols.push(solve(a.to_vec(), e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

fn normal_equations(jac: &[Vec<f64>], r: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = jac.first().map_or(0, Vec::len);
    let mut jtj = vec![vec![0.0; n]; n];
    let mut jtr = vec![0.0; n];
    for (row, &ri) in jac.iter().zip(r) {
        for a in 0..n {
            jtr[a] += row[a] * ri;
            for b in a..n {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[a][b] = jtj[b][a];
        }
    }
    (jtj, jtr)
}

/// Minimizes `sum(residuals(x)^2)` with `x` clamped to `[lower, upper]`.
pub fn levenberg_marquardt(
    residuals: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> LmResult {
    let clamp = |x: &mut Vec<f64>| {
        for k in 0..x.len() {
            x[k] = x[k].clamp(lower[k], upper[k]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut r = residuals(&x);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(residuals, &x, &r, lower, upper);
        let (jtj, jtr) = normal_equations(&jac, &r);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..a.len() {
                a[k][k] += lambda * jtj[k][k].max(1e-12);
            }
            let Some(step) = solve(a, jtr.iter().map(|v| -v).collect()) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            clamp(&mut trial);
            let rt = residuals(&trial);
            let ct: f64 = rt.iter().map(|v| v * v).sum();
            if ct.is_finite() && ct <= cost {
                let small_step = trial
                    .iter()
                    .zip(&x)
                    .all(|(a, b)| (a - b).abs() <= opts.xtol * b.abs().max(1e-12));
                let small_drop = cost - ct <= opts.ftol * cost.max(1e-300);
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small_step || small_drop {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a (possibly bounded) minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let jac = jacobian(residuals, &x, &r, lower, upper);
    let (jtj, _) = normal_equations(&jac, &r);
    LmResult {
        covariance: invert(&jtj),
        params: x,
        cost,
        iterations,
        converged,
    }
}
