//! Two-phase revised simplex for `min cᵀx  s.t.  Ax = b, x ≥ 0` with `b ≥ 0`.
//!
//! The basis inverse is kept as a dense matrix, updated by elementary row
//! operations after each pivot and recomputed from an LU factorization every
//! [`REINVERT_EVERY`] pivots. Pricing is Dantzig's rule, switching to Bland's
//! rule after a run of degenerate pivots and back once progress resumes.
//!
//! Phase 1 starts from an all-artificial basis. Artificials left basic at zero
//! afterwards belong to redundant rows; in phase 2 they are held at zero by the
//! ratio test, which treats them as bounded in `[0, 0]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const REINVERT_EVERY: usize = 50;
const DEGENERATE_RUN_FOR_BLAND: usize = 50;
const PIVOT_TOL: f64 = 1e-9;
const OPTIMALITY_TOL: f64 = 1e-11;
const FEASIBILITY_TOL: f64 = 1e-9;

/// Sparse matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub rows: usize,
    pub cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (i, v) in self.column(j) {
                    out[i] += v * xj;
                }
            }
        }
        out
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|j| self.column(j).map(|(i, v)| v * y[i]).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    /// Row duals `y` with `Aᵀy ≤ c` at optimality.
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub phase1_iterations: usize,
    /// Rows whose artificial stayed basic (linearly dependent constraints).
    pub redundant_rows: Vec<usize>,
}

struct Tableau<'a> {
    a: &'a CscMatrix,
    b: &'a [f64],
    m: usize,
    n: usize,
    /// Basic variable per row; indices `>= n` are artificials (`n + row`).
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: DMatrix<f64>,
    x_b: DVector<f64>,
    since_reinvert: usize,
}

impl<'a> Tableau<'a> {
    fn new(a: &'a CscMatrix, b: &'a [f64]) -> Self {
        let (m, n) = (a.rows, a.cols);
        let basis: Vec<usize> = (0..m).map(|i| n + i).collect();
        let mut is_basic = vec![false; n + m];
        for &k in &basis {
            is_basic[k] = true;
        }
        Self {
            a,
            b,
            m,
            n,
            basis,
            is_basic,
            binv: DMatrix::identity(m, m),
            x_b: DVector::from_column_slice(b),
            since_reinvert: 0,
        }
    }

    fn column_dense(&self, k: usize) -> DVector<f64> {
        let mut col = DVector::zeros(self.m);
        if k >= self.n {
            col[k - self.n] = 1.0;
        } else {
            for (i, v) in self.a.column(k) {
                col[i] = v;
            }
        }
        col
    }

    /// `B⁻¹ a_k` without densifying `a_k`.
    fn ftran(&self, k: usize) -> DVector<f64> {
        if k >= self.n {
            return self.binv.column(k - self.n).into_owned();
        }
        let mut w = DVector::zeros(self.m);
        for (i, v) in self.a.column(k) {
            w.axpy(v, &self.binv.column(i), 1.0);
        }
        w
    }

    fn reinvert(&mut self) -> Result<()> {
        let mut bmat = DMatrix::zeros(self.m, self.m);
        for (r, &k) in self.basis.iter().enumerate() {
            bmat.set_column(r, &self.column_dense(k));
        }
        self.binv = bmat
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("simplex basis became singular".into()))?;
        let b = DVector::from_column_slice(self.b);
        let mut x_b = &self.binv * &b;
        // One step of iterative refinement on the basic solution.
        let mut resid = b.clone();
        for (r, &k) in self.basis.iter().enumerate() {
            resid.axpy(-x_b[r], &self.column_dense(k), 1.0);
        }
        x_b += &self.binv * resid;
        self.x_b = x_b;
        self.since_reinvert = 0;
        Ok(())
    }

    fn try_crash(&mut self, start: &[usize]) {
        let mut seen = vec![false; self.n + self.m];
        if start.len() != self.m || start.iter().any(|&k| k >= self.n + self.m || std::mem::replace(&mut seen[k], true)) {
            return;
        }
        let saved = (self.basis.clone(), self.is_basic.clone());
        self.basis = start.to_vec();
        self.is_basic = seen;
        let ok = self.reinvert().is_ok()
            && self.x_b.iter().all(|&v| v >= -FEASIBILITY_TOL)
            && self.binv.iter().all(|v| v.is_finite());
        if ok {
            for v in self.x_b.iter_mut() {
                *v = v.max(0.0);
            }
        } else {
            (self.basis, self.is_basic) = saved;
            self.binv = DMatrix::identity(self.m, self.m);
            self.x_b = DVector::from_column_slice(self.b);
            self.since_reinvert = 0;
        }
    }

    fn duals(&self, cost: &dyn Fn(usize) -> f64) -> DVector<f64> {
        let c_b = DVector::from_iterator(self.m, self.basis.iter().map(|&k| cost(k)));
        self.binv.tr_mul(&c_b)
    }

    fn reduced_cost(&self, k: usize, y: &DVector<f64>, cost: &dyn Fn(usize) -> f64) -> f64 {
        if k >= self.n {
            cost(k) - y[k - self.n]
        } else {
            cost(k) - self.a.column(k).map(|(i, v)| v * y[i]).sum::<f64>()
        }
    }

    fn pivot(&mut self, row: usize, entering: usize, w: &DVector<f64>) -> Result<()> {
        let pivot = w[row];
        let theta = self.x_b[row] / pivot;
        for i in 0..self.m {
            if i != row {
                self.x_b[i] -= theta * w[i];
            }
        }
        self.x_b[row] = theta;

        let pivot_row = self.binv.row(row).into_owned() / pivot;
        for i in 0..self.m {
            if i != row && w[i] != 0.0 {
                let factor = w[i];
                for c in 0..self.m {
                    self.binv[(i, c)] -= factor * pivot_row[c];
                }
            }
        }
        self.binv.set_row(row, &pivot_row);

        let leaving = self.basis[row];
        self.is_basic[leaving] = false;
        self.is_basic[entering] = true;
        self.basis[row] = entering;
        self.since_reinvert += 1;
        if self.since_reinvert >= REINVERT_EVERY {
            self.reinvert()?;
        }
        Ok(())
    }

    /// Runs simplex iterations for the given cost until optimality.
    ///
    /// `allowed` filters candidate entering variables; `pinned` marks basic
    /// variables that must stay at zero.
    fn optimize(
        &mut self,
        cost: &dyn Fn(usize) -> f64,
        allowed: &dyn Fn(usize) -> bool,
        pinned: &dyn Fn(usize) -> bool,
        max_iters: usize,
    ) -> Result<usize> {
        let mut iterations = 0;
        let mut degenerate_run = 0;
        loop {
            if iterations >= max_iters {
                return Err(Error::PivotLimit(iterations));
            }
            let y = self.duals(cost);
            let bland = degenerate_run >= DEGENERATE_RUN_FOR_BLAND;
            let mut entering = None;
            let mut best = -OPTIMALITY_TOL;
            for k in 0..self.n + self.m {
                if self.is_basic[k] || !allowed(k) {
                    continue;
                }
                let d = self.reduced_cost(k, &y, cost);
                let scale = 1.0 + cost(k).abs();
                if d < -OPTIMALITY_TOL * scale {
                    if bland {
                        entering = Some(k);
                        break;
                    }
                    if d < best {
                        best = d;
                        entering = Some(k);
                    }
                }
            }
            let Some(q) = entering else {
                return Ok(iterations);
            };

            let w = self.ftran(q);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let wi = w[i];
                let ratio = if pinned(self.basis[i]) {
                    if wi.abs() > PIVOT_TOL {
                        0.0
                    } else {
                        continue;
                    }
                } else if wi > PIVOT_TOL {
                    self.x_b[i].max(0.0) / wi
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r, best_ratio)) => {
                        if ratio < best_ratio - 1e-12 {
                            true
                        } else if ratio <= best_ratio + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                wi.abs() > w[r].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(Error::Unbounded);
            };
            if pinned(self.basis[row]) {
                // Keep the pinned artificial exactly at zero.
                self.x_b[row] = 0.0;
            }
            degenerate_run = if ratio <= 1e-12 { degenerate_run + 1 } else { 0 };
            self.pivot(row, q, &w)?;
            iterations += 1;
        }
    }
}

/// Solves the standard-form program from the all-artificial basis. Requires `b ≥ 0`.
pub fn solve(a: &CscMatrix, b: &[f64], c: &[f64]) -> Result<SimplexResult> {
    solve_from(a, b, c, None)
}

/// As [`solve`], optionally starting from a crash basis (one variable per row,
/// artificial of row `i` written `n + i`). A crash basis that is singular or
/// primal infeasible is ignored.
pub fn solve_from(a: &CscMatrix, b: &[f64], c: &[f64], start: Option<&[usize]>) -> Result<SimplexResult> {
    let (m, n) = (a.rows, a.cols);
    if b.len() != m || c.len() != n {
        return Err(Error::InvalidArgument("simplex dimensions do not match".into()));
    }
    if b.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("simplex right-hand side must be nonnegative".into()));
    }
    let max_iters = 50 * (m + n) + 1000;
    let mut t = Tableau::new(a, b);
    if let Some(start) = start {
        t.try_crash(start);
    }

    let phase1_cost = |k: usize| if k >= n { 1.0 } else { 0.0 };
    let phase1_iterations = t.optimize(&phase1_cost, &|_| true, &|_| false, max_iters)?;
    t.reinvert()?;
    let infeasibility: f64 =
        t.basis.iter().zip(t.x_b.iter()).filter(|(&k, _)| k >= n).map(|(_, &v)| v.abs()).sum();
    if infeasibility > FEASIBILITY_TOL * (1.0 + b.iter().sum::<f64>()) {
        return Err(Error::Infeasible(format!("phase 1 ended with infeasibility {infeasibility:e}")));
    }

    // Drive zero artificials out of the basis where some column allows it.
    for row in 0..m {
        if t.basis[row] < n {
            continue;
        }
        let binv_row = t.binv.row(row).into_owned();
        let candidate = (0..n).filter(|&k| !t.is_basic[k]).find(|&k| {
            let v: f64 = a.column(k).map(|(i, v)| v * binv_row[i]).sum();
            v.abs() > 1e-7
        });
        if let Some(k) = candidate {
            let w = t.ftran(k);
            t.x_b[row] = 0.0;
            t.pivot(row, k, &w)?;
        }
    }
    t.reinvert()?;

    let phase2_cost = |k: usize| if k >= n { 0.0 } else { c[k] };
    let iterations = t.optimize(&phase2_cost, &|k| k < n, &|k| k >= n, max_iters)?;
    t.reinvert()?;

    let mut x = vec![0.0; n];
    let mut redundant_rows = Vec::new();
    for (r, &k) in t.basis.iter().enumerate() {
        if k < n {
            x[k] = t.x_b[r].max(0.0);
        } else {
            redundant_rows.push(k - n);
        }
    }
    let y = t.duals(&phase2_cost).iter().copied().collect();
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(SimplexResult { x, y, objective, iterations: phase1_iterations + iterations, phase1_iterations, redundant_rows })
}
