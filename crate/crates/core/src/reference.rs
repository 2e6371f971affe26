//! Slow reference implementations used by the test suites to cross-check
//! the coordinate-descent solver through an independent algorithm. Nothing
//! here shares code with the solver's update path.

use ndarray::{Array1, Array2};

use crate::solver::{PenalizedProblem, PenaltyOrder, SmoothQuadraticTerm};

/// Accelerated proximal-gradient (FISTA with restart) minimizer of the same
/// objective the solver targets. Runs until the iterate stops moving by
/// more than `tol` in any coordinate.
pub fn proximal_gradient_solve(
    problem: &PenalizedProblem,
    extra: Option<&SmoothQuadraticTerm>,
    tol: f64,
    max_iter: usize,
) -> Array1<f64> {
    let n = problem.n();
    let p = problem.p();
    if p == 0 {
        return Array1::zeros(0);
    }
    let design = problem.design();
    let w = problem.sample_weight();
    let y = problem.response();
    let q = extra.map(|e| e.matrix());
    let b = extra.and_then(|e| e.linear());
    let lambda = problem.lambda();
    let pf = problem.penalty_factor();

    // grad(v) = 2 X' (w o (Xv - y)) + 2 Q v + b
    let grad = |v: &Array1<f64>| -> Array1<f64> {
        let fitted = design.dot(v);
        let mut wres = Array1::zeros(n);
        for i in 0..n {
            wres[i] = w[i] * (fitted[i] - y[i]);
        }
        let mut g = 2.0 * design.t().dot(&wres);
        if let Some(q) = q {
            g = g + 2.0 * q.dot(v);
        }
        if let Some(b) = &b {
            for j in 0..p {
                g[j] += b[j];
            }
        }
        g
    };

    // Lipschitz constant of the smooth part: 2 * lambda_max(X'WX + Q),
    // estimated by power iteration with a safety margin.
    let apply_s = |v: &Array1<f64>| -> Array1<f64> {
        let xv = design.dot(v);
        let mut wxv = Array1::zeros(n);
        for i in 0..n {
            wxv[i] = w[i] * xv[i];
        }
        let mut out = design.t().dot(&wxv);
        if let Some(q) = q {
            out = out + q.dot(v);
        }
        out
    };
    let mut pv = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut eig = 1.0f64;
    for _ in 0..300 {
        let next = apply_s(&pv);
        let norm = next.dot(&next).sqrt();
        if norm <= 0.0 {
            break;
        }
        eig = norm;
        pv = next / norm;
    }
    let step = 1.0 / (2.0 * eig * 1.05).max(1e-12);

    let prox = |u: &Array1<f64>| -> Array1<f64> {
        let mut out = u.clone();
        for j in 0..p {
            let t = step * lambda * pf[j];
            out[j] = match problem.penalty_order() {
                PenaltyOrder::Lasso => {
                    if out[j] > t {
                        out[j] - t
                    } else if out[j] < -t {
                        out[j] + t
                    } else {
                        0.0
                    }
                }
                PenaltyOrder::Ridge => out[j] / (1.0 + 2.0 * t),
            };
        }
        out
    };

    let mut beta = Array1::<f64>::zeros(p);
    let mut beta_prev = beta.clone();
    let mut momentum = beta.clone();
    let mut tk = 1.0f64;
    for _ in 0..max_iter {
        let g = grad(&momentum);
        let next = prox(&(&momentum - &(step * &g)));
        let tk_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let accel = (tk - 1.0) / tk_next;
        let diff = &next - &beta;
        // restart when the momentum direction opposes the step
        let restart = (&momentum - &next).dot(&diff) > 0.0;
        beta_prev.assign(&beta);
        beta.assign(&next);
        if restart {
            momentum.assign(&beta);
            tk = 1.0;
        } else {
            momentum = &beta + &(accel * &diff);
            tk = tk_next;
        }
        let moved = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if moved <= tol {
            break;
        }
    }
    beta
}

/// Weighted least squares via the normal equations (Gaussian elimination
/// with partial pivoting). Assumes a full-rank design.
pub fn weighted_least_squares(
    design: &Array2<f64>,
    y: &Array1<f64>,
    w: &Array1<f64>,
) -> Array1<f64> {
    let n = design.nrows();
    let p = design.ncols();
    let mut xx = vec![vec![0.0f64; p]; p];
    let mut xy = vec![0.0f64; p];
    for i in 0..n {
        for a in 0..p {
            xy[a] += w[i] * design[[i, a]] * y[i];
            for b in 0..p {
                xx[a][b] += w[i] * design[[i, a]] * design[[i, b]];
            }
        }
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&a, &b| xx[a][col].abs().partial_cmp(&xx[b][col].abs()).unwrap())
            .unwrap();
        xx.swap(col, pivot);
        xy.swap(col, pivot);
        let d = xx[col][col];
        for row in 0..p {
            if row != col && xx[row][col] != 0.0 {
                let f = xx[row][col] / d;
                for c in 0..p {
                    xx[row][c] -= f * xx[col][c];
                }
                xy[row] -= f * xy[col];
            }
        }
    }
    Array1::from_iter((0..p).map(|i| xy[i] / xx[i][i]))
}
