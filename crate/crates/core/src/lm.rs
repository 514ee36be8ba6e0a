//! A small dense Levenberg–Marquardt solver for problems with a handful of
//! parameters.

/// Residuals and Jacobian of a least-squares problem.
pub trait Problem {
    fn n_params(&self) -> usize;

    /// Residual vector at `p`.
    fn residuals(&self, p: &[f64]) -> Vec<f64>;

    /// Row-major Jacobian `∂r_i/∂p_j`, one row per residual.
    fn jacobian(&self, p: &[f64]) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options {
    pub max_iterations: usize,
    /// Converged when every Jacobian column is this close to orthogonal to
    /// the residual (cosine), or the residual vanishes.
    pub gtol: f64,
    /// Stop when a step changes no parameter by more than this (relative).
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options { max_iterations: 200, gtol: 1e-8, xtol: 1e-15, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest residual-column cosine at the solution.
    pub gradient_cosine: f64,
    /// `JᵀJ` at the solution.
    pub jtj: Vec<Vec<f64>>,
}

fn rss(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn normal_equations(j: &[Vec<f64>], r: &[f64], n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = vec![vec![0.0; n]; n];
    let mut g = vec![0.0; n];
    for (row, ri) in j.iter().zip(r) {
        for p in 0..n {
            g[p] += row[p] * ri;
            for q in 0..=p {
                a[p][q] += row[p] * row[q];
            }
        }
    }
    for p in 0..n {
        for q in p + 1..n {
            a[p][q] = a[q][p];
        }
    }
    (a, g)
}

fn gradient_cosine(a: &[Vec<f64>], g: &[f64], rss: f64) -> f64 {
    if rss == 0.0 {
        return 0.0;
    }
    g.iter()
        .enumerate()
        .map(|(p, gp)| {
            let col = a[p][p].sqrt();
            if col == 0.0 {
                0.0
            } else {
                gp.abs() / (col * rss.sqrt())
            }
        })
        .fold(0.0, f64::max)
}

/// Solves `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting. Returns `None` if `a` is singular.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col] == 0.0 || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    Some(x)
}

/// Inverse of a small symmetric positive definite matrix.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = solve(a, &e)?;
        for r in 0..n {
            inv[r][c] = col[r];
        }
    }
    Some(inv)
}

/// Minimizes `Σ r_i²` from `start`. `stop` may end the search early (for
/// example when a parameter runs to a boundary); it sees the current
/// parameters after each accepted step.
pub fn minimize(
    problem: &impl Problem,
    start: &[f64],
    opts: &Options,
    stop: impl Fn(&[f64]) -> bool,
) -> Report {
    let n = problem.n_params();
    let mut p = start.to_vec();
    let mut r = problem.residuals(&p);
    let mut cost = rss(&r);
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;
    let (mut a, mut g) = normal_equations(&problem.jacobian(&p), &r, n);

    while iterations < opts.max_iterations {
        if gradient_cosine(&a, &g, cost) <= opts.gtol || cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        let mut tiny_step = false;
        // raise the damping until the step lowers the cost
        while lambda < 1e20 {
            let mut damped = a.clone();
            for k in 0..n {
                damped[k][k] += lambda * a[k][k].max(1e-300);
            }
            let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
            let Some(step) = solve(&damped, &neg_g) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(x, s)| x + s).collect();
            let tr = problem.residuals(&trial);
            let tc = rss(&tr);
            if tc.is_finite() && tc < cost {
                tiny_step = step
                    .iter()
                    .zip(&p)
                    .all(|(s, x)| s.abs() <= opts.xtol * (x.abs() + opts.xtol));
                p = trial;
                r = tr;
                cost = tc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if accepted {
            (a, g) = normal_equations(&problem.jacobian(&p), &r, n);
        }
        if !accepted || tiny_step || stop(&p) {
            // no further progress: accept when the first-order condition holds
            // to the precision the cost can still resolve
            converged = gradient_cosine(&a, &g, cost) <= opts.gtol.max(1e-6) || cost == 0.0;
            break;
        }
    }
    let gradient_cosine = gradient_cosine(&a, &g, cost);
    if iterations >= opts.max_iterations && gradient_cosine <= opts.gtol {
        converged = true;
    }
    Report { params: p, rss: cost, iterations, converged, gradient_cosine, jtj: a }
}
