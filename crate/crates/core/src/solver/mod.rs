//! Weighted penalized least-squares by cyclic coordinate descent.
//!
//! Minimizes, over coefficients `b`,
//!
//! ```text
//!   sum_i w_i (y_i - x_i . b)^2  +  b'Qb + q'b  +  lambda * sum_j p_j * pen(b_j)
//! ```
//!
//! where `pen` is `|.|` (lasso) or `(.)^2` (ridge), `w` are strictly positive
//! sample weights, `p_j >= 0` are per-coefficient penalty factors, and the
//! optional `(Q, q)` pair adds a smooth quadratic (used for fusion terms).
//! Per-group penalties are encoded entirely through the factor vector, and
//! the `1/n_k` loss scaling through the sample weights, so this one routine
//! sits under every estimator in the crate.
//!
//! Coordinates coupled by off-diagonal entries of `Q` are updated jointly by
//! an exact small L1-quadratic solve; all other coordinates take the usual
//! soft-threshold update with precomputed weighted column norms and residual
//! maintenance.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::FitDiagnostics;
use crate::error::{Error, Result};

mod feature_sign;
use feature_sign::solve_l1_quadratic;

/// Penalty exponent: lasso (`r = 1`) or ridge (`r = 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyOrder {
    Lasso,
    Ridge,
}

/// A fully specified solver-level problem.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    design: Array2<f64>,
    response: Array1<f64>,
    sample_weight: Array1<f64>,
    penalty_factor: Array1<f64>,
    penalty_order: PenaltyOrder,
    lambda: f64,
}

impl PenalizedProblem {
    pub fn new(
        design: Array2<f64>,
        response: Array1<f64>,
        sample_weight: Array1<f64>,
        penalty_factor: Array1<f64>,
        penalty_order: PenaltyOrder,
        lambda: f64,
    ) -> Result<Self> {
        let n = design.nrows();
        let p = design.ncols();
        if n == 0 {
            return Err(Error::InvalidArgument("design has no rows".into()));
        }
        if response.len() != n || sample_weight.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "design has {n} rows, response {} entries, weights {}",
                response.len(),
                sample_weight.len()
            )));
        }
        if penalty_factor.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "design has {p} columns but {} penalty factors",
                penalty_factor.len()
            )));
        }
        if design.iter().any(|v| !v.is_finite()) || response.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "design and response must be finite".into(),
            ));
        }
        if sample_weight.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "sample weights must be strictly positive and finite".into(),
            ));
        }
        if penalty_factor.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(Error::InvalidArgument(
                "penalty factors must be nonnegative and finite".into(),
            ));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(
                "lambda must be nonnegative and finite".into(),
            ));
        }
        Ok(Self {
            design,
            response,
            sample_weight,
            penalty_factor,
            penalty_order,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &Array2<f64> {
        &self.design
    }

    pub fn response(&self) -> ArrayView1<'_, f64> {
        self.response.view()
    }

    pub fn sample_weight(&self) -> ArrayView1<'_, f64> {
        self.sample_weight.view()
    }

    pub fn penalty_factor(&self) -> ArrayView1<'_, f64> {
        self.penalty_factor.view()
    }

    pub fn penalty_order(&self) -> PenaltyOrder {
        self.penalty_order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same problem at a different global penalty scale.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.design.clone(),
            self.response.clone(),
            self.sample_weight.clone(),
            self.penalty_factor.clone(),
            self.penalty_order,
            lambda,
        )
    }
}

/// Symmetric positive-semidefinite quadratic `b'Qb + q'b` added to the
/// smooth part of the objective. Symmetry is checked to 1e-10 and the stored
/// matrix symmetrized exactly; positive-semidefiniteness is the caller's
/// contract.
#[derive(Debug, Clone)]
pub struct SmoothQuadraticTerm {
    matrix: Array2<f64>,
    linear: Option<Array1<f64>>,
}

impl SmoothQuadraticTerm {
    pub fn new(matrix: Array2<f64>, linear: Option<Array1<f64>>) -> Result<Self> {
        let p = matrix.nrows();
        if matrix.ncols() != p {
            return Err(Error::ShapeMismatch(format!(
                "quadratic term must be square, got {p} x {}",
                matrix.ncols()
            )));
        }
        if let Some(l) = &linear {
            if l.len() != p {
                return Err(Error::ShapeMismatch(format!(
                    "linear term has {} entries for a {p} x {p} matrix",
                    l.len()
                )));
            }
        }
        let scale = matrix.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..p {
            for j in (i + 1)..p {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic term not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let matrix = 0.5 * (&matrix + &matrix.t());
        Ok(Self { matrix, linear })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn linear(&self) -> Option<ArrayView1<'_, f64>> {
        self.linear.as_ref().map(|l| l.view())
    }
}

/// Coordinate-descent controls.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Maximum absolute coefficient change allowed on a converged full sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Iterate only nonzero coordinates between full entry-check sweeps.
    pub use_active_set: bool,
    /// KKT certificate tolerance, relative to the penalty scale.
    pub kkt_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_sweeps: 100_000,
            use_active_set: true,
            kkt_tolerance: 1e-6,
        }
    }
}

/// `sign(z) * max(|z| - gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Relative variance below which a column counts as constant.
const CONST_COL_REL: f64 = 1e-10;

#[derive(Debug)]
struct ColumnStats {
    /// `2 * sum_i w_i x_ij^2` per column.
    a_data: Vec<f64>,
    /// Columns fixed at zero by the degeneracy policy.
    pinned: Vec<bool>,
    /// Constant, effectively unpenalized, uncoupled columns (rank hazard).
    free_constant: Vec<usize>,
}

fn column_stats(problem: &PenalizedProblem, coupled: &[bool]) -> ColumnStats {
    let p = problem.p();
    let w = &problem.sample_weight;
    let wsum: f64 = w.sum();
    let mut a_data = vec![0.0; p];
    let mut pinned = vec![false; p];
    let mut free_constant = Vec::new();
    for j in 0..p {
        let col = problem.design.column(j);
        let mut msq = 0.0;
        let mut swx = 0.0;
        for (xi, wi) in col.iter().zip(w.iter()) {
            msq += wi * xi * xi;
            swx += wi * xi;
        }
        a_data[j] = 2.0 * msq;
        let wvar = msq - swx * swx / wsum;
        let is_const = wvar <= CONST_COL_REL * msq;
        let penalized = problem.lambda * problem.penalty_factor[j] > 0.0;
        if !coupled[j] {
            if msq == 0.0 || (penalized && is_const) {
                pinned[j] = true;
            } else if !penalized && is_const {
                free_constant.push(j);
            }
        }
    }
    ColumnStats {
        a_data,
        pinned,
        free_constant,
    }
}

/// Connected components of the coupling graph induced by off-diagonal `Q`
/// entries, in order of first coordinate. Singleton components are plain
/// scalar-update coordinates.
fn coupling_classes(p: usize, q: Option<&Array2<f64>>) -> (Vec<Vec<usize>>, Vec<bool>) {
    let mut coupled = vec![false; p];
    let Some(q) = q else {
        return ((0..p).map(|j| vec![j]).collect(), coupled);
    };
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..p {
        for j in (i + 1)..p {
            if q[[i, j]] != 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); p];
    for j in 0..p {
        let r = find(&mut parent, j);
        members[r].push(j);
    }
    let mut classes = Vec::new();
    for j in 0..p {
        if !members[j].is_empty() {
            if members[j].len() > 1 || q[[j, j]] != 0.0 {
                for &u in &members[j] {
                    coupled[u] = true;
                }
            }
            classes.push(std::mem::take(&mut members[j]));
        }
    }
    (classes, coupled)
}

struct CdState<'a> {
    problem: &'a PenalizedProblem,
    q: Option<&'a Array2<f64>>,
    b_lin: Option<ArrayView1<'a, f64>>,
    x_cols: Vec<Vec<f64>>,
    wx_cols: Vec<Vec<f64>>,
    a_data: Vec<f64>,
    pinned: Vec<bool>,
    /// Per class: member coordinates and, for multi-member classes, the
    /// row-major smooth Hessian `2G + 2Q` (ridge adds `2*lambda*p` on the
    /// diagonal).
    classes: Vec<(Vec<usize>, Vec<f64>)>,
    beta: Vec<f64>,
    resid: Vec<f64>,
    qbeta: Vec<f64>,
    #[cfg(debug_assertions)]
    last_objective: f64,
}

impl<'a> CdState<'a> {
    fn new(
        problem: &'a PenalizedProblem,
        extra: Option<&'a SmoothQuadraticTerm>,
        warm_start: Option<ArrayView1<'_, f64>>,
    ) -> Result<Self> {
        let n = problem.n();
        let p = problem.p();
        let q = extra.map(|e| e.matrix());
        if let Some(q) = q {
            if q.nrows() != p {
                return Err(Error::ShapeMismatch(format!(
                    "quadratic term is {} x {} for a {p}-column design",
                    q.nrows(),
                    q.ncols()
                )));
            }
        }
        let b_lin = extra.and_then(|e| e.linear());

        let (raw_classes, coupled) = coupling_classes(p, q);
        let mut stats = column_stats(problem, &coupled);

        // a fully data-degenerate coupled class is pinned wholesale: the loss
        // is indifferent and the fusion quadratic vanishes on the zero vector
        let mut classes = Vec::with_capacity(raw_classes.len());
        for coords in raw_classes {
            if coords.len() > 1 && coords.iter().all(|&u| stats.a_data[u] == 0.0) {
                for &u in &coords {
                    stats.pinned[u] = true;
                }
                continue;
            }
            if coords.len() == 1 && stats.pinned[coords[0]] {
                continue;
            }
            classes.push(coords);
        }
        if stats.free_constant.len() >= 2 {
            return Err(Error::RankDeficient(format!(
                "columns {:?} are constant and effectively unpenalized",
                stats.free_constant
            )));
        }

        let mut x_cols = Vec::with_capacity(p);
        let mut wx_cols = Vec::with_capacity(p);
        let w = &problem.sample_weight;
        for j in 0..p {
            let col: Vec<f64> = problem.design.column(j).iter().copied().collect();
            let wx: Vec<f64> = col.iter().zip(w.iter()).map(|(x, wi)| x * wi).collect();
            x_cols.push(col);
            wx_cols.push(wx);
        }

        let mut beta = vec![0.0; p];
        if let Some(warm) = warm_start {
            if warm.len() != p {
                return Err(Error::ShapeMismatch(format!(
                    "warm start has {} entries for {p} columns",
                    warm.len()
                )));
            }
            if warm.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("warm start must be finite".into()));
            }
            for j in 0..p {
                beta[j] = if stats.pinned[j] { 0.0 } else { warm[j] };
            }
        }

        // Hessian blocks for coupled classes
        let lambda = problem.lambda;
        let ridge = problem.penalty_order == PenaltyOrder::Ridge;
        let mut with_hess = Vec::with_capacity(classes.len());
        for coords in classes {
            let hess = if coords.len() > 1 {
                let d = coords.len();
                let mut h = vec![0.0; d * d];
                for (ci, &u) in coords.iter().enumerate() {
                    for (cj, &v) in coords.iter().enumerate() {
                        let mut g = 0.0;
                        if ci <= cj {
                            for i in 0..n {
                                g += w[i] * x_cols[u][i] * x_cols[v][i];
                            }
                        }
                        let qv = q.map_or(0.0, |q| q[[u, v]]);
                        if ci <= cj {
                            h[ci * d + cj] = 2.0 * g + 2.0 * qv;
                        }
                    }
                }
                for ci in 0..d {
                    for cj in 0..ci {
                        h[ci * d + cj] = h[cj * d + ci];
                    }
                }
                if ridge {
                    for (ci, &u) in coords.iter().enumerate() {
                        h[ci * d + ci] += 2.0 * lambda * problem.penalty_factor[u];
                    }
                }
                h
            } else {
                Vec::new()
            };
            with_hess.push((coords, hess));
        }

        let mut state = Self {
            problem,
            q,
            b_lin,
            x_cols,
            wx_cols,
            a_data: stats.a_data,
            pinned: stats.pinned,
            classes: with_hess,
            beta,
            resid: vec![0.0; n],
            qbeta: vec![0.0; p],
            #[cfg(debug_assertions)]
            last_objective: f64::INFINITY,
        };
        state.refresh();
        Ok(state)
    }

    /// Recomputes the residual and `Q*beta` from scratch.
    fn refresh(&mut self) {
        let n = self.problem.n();
        for i in 0..n {
            self.resid[i] = self.problem.response[i];
        }
        for (j, col) in self.x_cols.iter().enumerate() {
            let bj = self.beta[j];
            if bj != 0.0 {
                for i in 0..n {
                    self.resid[i] -= col[i] * bj;
                }
            }
        }
        if let Some(q) = self.q {
            let p = self.beta.len();
            for u in 0..p {
                let mut s = 0.0;
                for v in 0..p {
                    s += q[[u, v]] * self.beta[v];
                }
                self.qbeta[u] = s;
            }
        }
    }

    fn effective_penalty(&self, j: usize) -> f64 {
        self.problem.lambda * self.problem.penalty_factor[j]
    }

    fn apply_delta(&mut self, j: usize, new: f64) {
        let old = self.beta[j];
        if new == old {
            return;
        }
        let delta = new - old;
        let col = &self.x_cols[j];
        for (ri, xi) in self.resid.iter_mut().zip(col.iter()) {
            *ri -= xi * delta;
        }
        if let Some(q) = self.q {
            for (u, qb) in self.qbeta.iter_mut().enumerate() {
                *qb += q[[u, j]] * delta;
            }
        }
        self.beta[j] = new;
    }

    fn update_singleton(&mut self, j: usize) -> f64 {
        let old = self.beta[j];
        let grad_dot: f64 = self.wx_cols[j]
            .iter()
            .zip(self.resid.iter())
            .map(|(wx, r)| wx * r)
            .sum();
        let mut z = 2.0 * grad_dot + self.a_data[j] * old;
        let mut a = self.a_data[j];
        if let Some(q) = self.q {
            let qjj = q[[j, j]];
            z -= 2.0 * (self.qbeta[j] - qjj * old);
            a += 2.0 * qjj;
        }
        if let Some(b) = &self.b_lin {
            z -= b[j];
        }
        let pen = self.effective_penalty(j);
        let new = match self.problem.penalty_order {
            PenaltyOrder::Lasso => soft_threshold(z, pen) / a,
            PenaltyOrder::Ridge => z / (a + 2.0 * pen),
        };
        self.apply_delta(j, new);
        (new - old).abs()
    }

    fn update_block(&mut self, class_idx: usize) -> f64 {
        let (coords, hess) = {
            let (c, h) = &self.classes[class_idx];
            (c.clone(), h.clone())
        };
        let d = coords.len();
        let lasso = self.problem.penalty_order == PenaltyOrder::Lasso;
        let mut grad = vec![0.0; d];
        for (ci, &u) in coords.iter().enumerate() {
            let dot: f64 = self.wx_cols[u]
                .iter()
                .zip(self.resid.iter())
                .map(|(wx, r)| wx * r)
                .sum();
            let mut g = -2.0 * dot;
            g += 2.0 * self.qbeta[u];
            if let Some(b) = &self.b_lin {
                g += b[u];
            }
            grad[ci] = g;
        }
        let current: Vec<f64> = coords.iter().map(|&u| self.beta[u]).collect();
        let mut z = vec![0.0; d];
        for ci in 0..d {
            let mut hu = 0.0;
            for cj in 0..d {
                hu += hess[ci * d + cj] * current[cj];
            }
            z[ci] = hu - grad[ci];
        }
        let c_vec: Vec<f64> = coords
            .iter()
            .map(|&u| if lasso { self.effective_penalty(u) } else { 0.0 })
            .collect();
        let solution = solve_l1_quadratic(&hess, d, &z, &c_vec, &current);
        let mut max_delta = 0.0f64;
        for (ci, &u) in coords.iter().enumerate() {
            max_delta = max_delta.max((solution[ci] - current[ci]).abs());
            self.apply_delta(u, solution[ci]);
        }
        max_delta
    }

    fn class_is_active(&self, coords: &[usize]) -> bool {
        coords
            .iter()
            .any(|&u| self.beta[u] != 0.0 || self.effective_penalty(u) == 0.0)
    }

    fn sweep(&mut self, active_only: bool) -> f64 {
        let mut max_delta = 0.0f64;
        for idx in 0..self.classes.len() {
            let coords = &self.classes[idx].0;
            if active_only && !self.class_is_active(coords) {
                continue;
            }
            let delta = if coords.len() == 1 {
                let j = coords[0];
                self.update_singleton(j)
            } else {
                self.update_block(idx)
            };
            max_delta = max_delta.max(delta);
        }
        #[cfg(debug_assertions)]
        {
            let obj = self.objective_maintained();
            debug_assert!(
                obj <= self.last_objective + 1e-9 * (1.0 + self.last_objective.abs()),
                "objective increased across a sweep: {} -> {obj}",
                self.last_objective
            );
            self.last_objective = obj;
        }
        max_delta
    }

    /// Objective from the maintained residual and `Q*beta` (cheap; used by
    /// the per-sweep monotonicity assertion in debug builds).
    #[cfg(debug_assertions)]
    fn objective_maintained(&self) -> f64 {
        let mut obj: f64 = self
            .resid
            .iter()
            .zip(self.problem.sample_weight.iter())
            .map(|(r, w)| w * r * r)
            .sum();
        if self.q.is_some() {
            obj += self
                .beta
                .iter()
                .zip(self.qbeta.iter())
                .map(|(b, qb)| b * qb)
                .sum::<f64>();
        }
        if let Some(b) = &self.b_lin {
            obj += self.beta.iter().zip(b.iter()).map(|(x, v)| x * v).sum::<f64>();
        }
        for (j, &bj) in self.beta.iter().enumerate() {
            let pen = match self.problem.penalty_order {
                PenaltyOrder::Lasso => bj.abs(),
                PenaltyOrder::Ridge => bj * bj,
            };
            obj += self.problem.lambda * self.problem.penalty_factor[j] * pen;
        }
        obj
    }

    /// KKT violation from the maintained residual (cheap, for convergence
    /// checks; the reported diagnostics use a fresh evaluation).
    fn kkt_maintained(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.beta.len() {
            if self.pinned[j] {
                continue;
            }
            let dot: f64 = self.wx_cols[j]
                .iter()
                .zip(self.resid.iter())
                .map(|(wx, r)| wx * r)
                .sum();
            let mut g = -2.0 * dot;
            if self.q.is_some() {
                g += 2.0 * self.qbeta[j];
            }
            if let Some(b) = &self.b_lin {
                g += b[j];
            }
            worst = worst.max(kkt_coordinate_violation(
                g,
                self.beta[j],
                self.effective_penalty(j),
                self.problem.penalty_order,
            ));
        }
        worst
    }

    fn max_curvature(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.beta.len() {
            let qjj = self.q.map_or(0.0, |q| q[[j, j]].abs());
            m = m.max(self.a_data[j] + 2.0 * qjj);
        }
        m
    }
}

fn kkt_coordinate_violation(g: f64, beta: f64, pen: f64, order: PenaltyOrder) -> f64 {
    match order {
        PenaltyOrder::Lasso => {
            if pen == 0.0 {
                g.abs()
            } else if beta != 0.0 {
                (g + pen * beta.signum()).abs()
            } else {
                (g.abs() - pen).max(0.0)
            }
        }
        PenaltyOrder::Ridge => (g + 2.0 * pen * beta).abs(),
    }
}

/// Objective and max KKT violation at `beta`, evaluated from scratch.
/// Pinned columns are excluded from the certificate: they are fixed by the
/// degeneracy policy, not by optimality.
fn evaluate(
    problem: &PenalizedProblem,
    q: Option<&Array2<f64>>,
    b_lin: Option<&ArrayView1<'_, f64>>,
    beta: &[f64],
    pinned: &[bool],
) -> (f64, f64) {
    let n = problem.n();
    let p = problem.p();
    let mut resid: Vec<f64> = problem.response.iter().copied().collect();
    for j in 0..p {
        if beta[j] != 0.0 {
            let col = problem.design.column(j);
            for i in 0..n {
                resid[i] -= col[i] * beta[j];
            }
        }
    }
    let mut obj: f64 = resid
        .iter()
        .zip(problem.sample_weight.iter())
        .map(|(r, w)| w * r * r)
        .sum();
    let mut qbeta = vec![0.0; p];
    if let Some(q) = q {
        for u in 0..p {
            let mut s = 0.0;
            for v in 0..p {
                s += q[[u, v]] * beta[v];
            }
            qbeta[u] = s;
            obj += beta[u] * s;
        }
    }
    if let Some(b) = b_lin {
        obj += beta.iter().zip(b.iter()).map(|(x, b)| x * b).sum::<f64>();
    }
    for j in 0..p {
        let pen = match problem.penalty_order {
            PenaltyOrder::Lasso => beta[j].abs(),
            PenaltyOrder::Ridge => beta[j] * beta[j],
        };
        obj += problem.lambda * problem.penalty_factor[j] * pen;
    }

    let mut worst = 0.0f64;
    for j in 0..p {
        if pinned[j] {
            continue;
        }
        let col = problem.design.column(j);
        let mut dot = 0.0;
        for i in 0..n {
            dot += problem.sample_weight[i] * col[i] * resid[i];
        }
        let mut g = -2.0 * dot;
        if q.is_some() {
            g += 2.0 * qbeta[j];
        }
        if let Some(b) = b_lin {
            g += b[j];
        }
        worst = worst.max(kkt_coordinate_violation(
            g,
            beta[j],
            problem.lambda * problem.penalty_factor[j],
            problem.penalty_order,
        ));
    }
    (obj, worst)
}

fn pinned_for(problem: &PenalizedProblem, extra: Option<&SmoothQuadraticTerm>) -> Vec<bool> {
    let (raw_classes, coupled) = coupling_classes(problem.p(), extra.map(|e| e.matrix()));
    let mut stats = column_stats(problem, &coupled);
    for coords in raw_classes {
        if coords.len() > 1 && coords.iter().all(|&u| stats.a_data[u] == 0.0) {
            for &u in &coords {
                stats.pinned[u] = true;
            }
        }
    }
    stats.pinned
}

/// Full objective value at `beta`.
pub fn objective_value(
    problem: &PenalizedProblem,
    extra: Option<&SmoothQuadraticTerm>,
    beta: ArrayView1<'_, f64>,
) -> f64 {
    let pinned = pinned_for(problem, extra);
    let b_lin = extra.and_then(|e| e.linear());
    let beta = beta.to_vec();
    evaluate(
        problem,
        extra.map(|e| e.matrix()),
        b_lin.as_ref(),
        &beta,
        &pinned,
    )
    .0
}

/// Max KKT violation of the convex objective at `beta` (gradient units).
pub fn kkt_violation(
    problem: &PenalizedProblem,
    extra: Option<&SmoothQuadraticTerm>,
    beta: ArrayView1<'_, f64>,
) -> f64 {
    let pinned = pinned_for(problem, extra);
    let b_lin = extra.and_then(|e| e.linear());
    let beta = beta.to_vec();
    evaluate(
        problem,
        extra.map(|e| e.matrix()),
        b_lin.as_ref(),
        &beta,
        &pinned,
    )
    .1
}

/// Absolute KKT threshold implied by the settings for this problem: the
/// certificate tolerance scaled to the penalty, plus a floor for what f64
/// gradient evaluation can resolve at the problem's curvature.
pub fn kkt_threshold(
    problem: &PenalizedProblem,
    extra: Option<&SmoothQuadraticTerm>,
    settings: &SolverSettings,
    beta_inf_norm: f64,
) -> f64 {
    let p_max = problem
        .penalty_factor
        .iter()
        .fold(0.0f64, |m, &f| m.max(f));
    let mut curv = 0.0f64;
    let w = &problem.sample_weight;
    for j in 0..problem.p() {
        let col = problem.design.column(j);
        let msq: f64 = col.iter().zip(w.iter()).map(|(x, wi)| wi * x * x).sum();
        let qjj = extra.map_or(0.0, |e| e.matrix()[[j, j]].abs());
        curv = curv.max(2.0 * msq + 2.0 * qjj);
    }
    let scale = (problem.lambda * p_max).max(1.0);
    settings.kkt_tolerance * scale + 1e-12 * curv * (1.0 + beta_inf_norm)
}

/// Runs cyclic coordinate descent on `problem` (+ optional smooth quadratic).
///
/// Returns the coefficients and diagnostics; a fit that hits `max_sweeps`
/// comes back with `converged = false` rather than an error. Convergence
/// requires both a stable full sweep (max coefficient change below
/// `tolerance`) and the KKT certificate within the settings threshold.
pub fn solve(
    problem: &PenalizedProblem,
    extra: Option<&SmoothQuadraticTerm>,
    settings: &SolverSettings,
    warm_start: Option<ArrayView1<'_, f64>>,
) -> Result<(Array1<f64>, FitDiagnostics)> {
    if settings.tolerance <= 0.0 || settings.max_sweeps == 0 {
        return Err(Error::InvalidArgument(
            "tolerance must be positive and max_sweeps at least 1".into(),
        ));
    }
    if problem.p() == 0 {
        let obj: f64 = problem
            .response
            .iter()
            .zip(problem.sample_weight.iter())
            .map(|(y, w)| w * y * y)
            .sum();
        return Ok((
            Array1::zeros(0),
            FitDiagnostics {
                iterations: 0,
                final_objective: obj,
                converged: true,
                max_kkt_violation: 0.0,
            },
        ));
    }

    let mut state = CdState::new(problem, extra, warm_start)?;
    let mut sweeps = 0usize;
    let mut converged = false;

    while sweeps < settings.max_sweeps {
        let delta = state.sweep(false);
        sweeps += 1;
        if delta < settings.tolerance {
            state.refresh();
            let viol = state.kkt_maintained();
            let threshold = {
                let beta_inf = state.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
                settings.kkt_tolerance
                    * (problem.lambda
                        * problem
                            .penalty_factor
                            .iter()
                            .fold(0.0f64, |m, &f| m.max(f)))
                    .max(1.0)
                    + 1e-12 * state.max_curvature() * (1.0 + beta_inf)
            };
            if viol <= threshold {
                converged = true;
                break;
            }
            if delta == 0.0 {
                break; // numeric fixed point, certificate unreachable
            }
        } else if settings.use_active_set {
            while sweeps < settings.max_sweeps {
                let inner = state.sweep(true);
                sweeps += 1;
                if inner < settings.tolerance {
                    break;
                }
            }
        }
    }

    let beta = Array1::from(state.beta.clone());
    let b_lin = extra.and_then(|e| e.linear());
    let (objective, viol) = evaluate(
        problem,
        extra.map(|e| e.matrix()),
        b_lin.as_ref(),
        &state.beta,
        &state.pinned,
    );
    Ok((
        beta,
        FitDiagnostics {
            iterations: sweeps,
            final_objective: objective,
            converged,
            max_kkt_violation: viol,
        },
    ))
}

/// Smallest global penalty at which every penalized coefficient is zero.
///
/// Unpenalized coordinates are fit freely first; the entry criterion is then
/// evaluated on their residual: `max_j 2 |sum_i w_i x_ij r_i| / p_j`.
pub fn lambda_max(problem: &PenalizedProblem) -> Result<f64> {
    let p = problem.p();
    let penalized: Vec<usize> = (0..p).filter(|&j| problem.penalty_factor[j] > 0.0).collect();
    if penalized.is_empty() {
        return Err(Error::InvalidArgument(
            "lambda_max needs at least one penalized coefficient".into(),
        ));
    }
    let unpenalized: Vec<usize> = (0..p).filter(|&j| problem.penalty_factor[j] == 0.0).collect();

    let resid: Array1<f64> = if unpenalized.is_empty() {
        problem.response.clone()
    } else {
        let sub_design = problem.design.select(Axis(1), &unpenalized);
        let sub = PenalizedProblem::new(
            sub_design.clone(),
            problem.response.clone(),
            problem.sample_weight.clone(),
            Array1::zeros(unpenalized.len()),
            problem.penalty_order,
            0.0,
        )?;
        let settings = SolverSettings {
            tolerance: 1e-10,
            kkt_tolerance: 1e-8,
            ..SolverSettings::default()
        };
        let (beta, _) = solve(&sub, None, &settings, None)?;
        &problem.response - &sub_design.dot(&beta)
    };

    let mut best = 0.0f64;
    for &j in &penalized {
        let col = problem.design.column(j);
        let mut dot = 0.0;
        for i in 0..problem.n() {
            dot += problem.sample_weight[i] * col[i] * resid[i];
        }
        best = best.max(2.0 * dot.abs() / problem.penalty_factor[j]);
    }
    Ok(best)
}
