//! The discrete controlled generator `−Δ^h + ξ·D^h` on interior nodes.
//!
//! Row `x` of the assembled matrix is `Σ_y q(x,y) (u(x) − u(y))`, where the
//! jump rates to the axis neighbours are `1/h² + ξ_k⁺/h` (backward) and
//! `1/h² + ξ_k⁻/h` (forward). That is the upwind stencil
//! `−Δ^h u + ξ⁺·D⁻u − ξ⁻·D⁺u`, and the matrix is an M-matrix for every control.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Vector};

/// How rates that point at boundary nodes are closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Rates into the boundary are dropped: the chain is reflected and every
    /// row sums to zero.
    Reflect,
    /// Rates into the boundary stay on the diagonal and the boundary value
    /// enters the right-hand side through [`Generator::boundary_rate`].
    Absorb,
}

/// Sparse generator in compressed-row form over interior nodes, with columns
/// indexed by interior position.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    /// Total rate from each interior row into boundary nodes.
    pub boundary_rate: Vec<f64>,
}

impl Generator {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `A v` for a vector over interior nodes.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, a)| a * v[j]).sum()).collect()
    }

    /// `Aᵀ w` for a vector over interior nodes.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &wi) in w.iter().enumerate().take(self.n) {
            for (j, a) in self.row(i) {
                out[j] += a * wi;
            }
        }
        out
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }
}

/// Jump rates `(backward, forward)` along one axis for control component `c`.
pub fn axis_rates(c: f64, h: f64) -> (f64, f64) {
    let diffusion = 1.0 / (h * h);
    (diffusion + c.max(0.0) / h, diffusion + (-c).max(0.0) / h)
}

/// Assembles the generator for a control given at every grid node (only
/// interior entries are read).
pub fn assemble(grid: &Grid, control: &[Vector], closure: Closure) -> Generator {
    let n = grid.interior_count();
    let h = grid.spacing();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n * (2 * grid.dim() + 1));
    let mut values = Vec::with_capacity(n * (2 * grid.dim() + 1));
    let mut boundary_rate = vec![0.0; n];
    row_ptr.push(0);

    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * grid.dim() + 1);
    for (i, &node) in grid.interior_nodes().iter().enumerate() {
        entries.clear();
        let mut diag = 0.0;
        for axis in 0..grid.dim() {
            let (back, fwd) = axis_rates(control[node][axis], h);
            for (forward, rate) in [(false, back), (true, fwd)] {
                let nb = grid.neighbor(node, axis, forward).expect("interior node has neighbours");
                match grid.interior_index(nb) {
                    Some(j) => {
                        diag += rate;
                        entries.push((j, -rate));
                    }
                    None => {
                        if closure == Closure::Absorb {
                            diag += rate;
                            boundary_rate[i] += rate;
                        }
                    }
                }
            }
        }
        entries.push((i, diag));
        entries.sort_by_key(|e| e.0);
        for &(j, v) in &entries {
            col_idx.push(j);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Generator { n, row_ptr, col_idx, values, boundary_rate }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swirl(grid: &Grid) -> Vec<Vector> {
        (0..grid.node_count())
            .map(|i| {
                let x = grid.coords(i);
                [x[1] - 0.3 * x[0], -x[0] + 0.5 * x[1] * x[1]]
            })
            .collect()
    }

    #[test]
    fn reflected_rows_sum_to_zero_and_off_diagonals_are_nonpositive() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 1.0, 0.1).unwrap();
            let a = assemble(&g, &swirl(&g), Closure::Reflect);
            for i in 0..a.n {
                let s: f64 = a.row(i).map(|(_, v)| v).sum();
                assert!(s.abs() < 1e-9, "row {i} sums to {s}");
                for (j, v) in a.row(i) {
                    if j != i {
                        assert!(v <= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn absorbed_rows_sum_to_boundary_rate() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let a = assemble(&g, &swirl(&g), Closure::Absorb);
        for i in 0..a.n {
            let s: f64 = a.row(i).map(|(_, v)| v).sum();
            assert!((s - a.boundary_rate[i]).abs() < 1e-9);
        }
        let corner = g.interior_index(g.node_at([1, 1])).unwrap();
        assert!(a.boundary_rate[corner] > 0.0);
        let centre = g.interior_index(g.origin()).unwrap();
        assert_eq!(a.boundary_rate[centre], 0.0);
    }

    #[test]
    fn matches_stencil_form_away_from_the_boundary() {
        let g = Grid::new(2, 1.0, 0.1).unwrap();
        let control = swirl(&g);
        let u: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let x = g.coords(i);
                (x[0] * 2.0).sin() + x[0] * x[1]
            })
            .collect();
        let interior_u: Vec<f64> = g.interior_nodes().iter().map(|&n| u[n]).collect();
        let a = assemble(&g, &control, Closure::Reflect);
        let au = a.apply(&interior_u);
        let field = crate::grid::ScalarField { values: u.clone() };
        let drift = crate::grid::VectorField { values: control };
        let lap = crate::grid::laplacian(&field, &g);
        let adv = crate::grid::advect_upwind(&field, &drift, &g);
        for (i, &node) in g.interior_nodes().iter().enumerate() {
            let mi = g.multi_index(node);
            if mi[0] < 2 || mi[1] < 2 || mi[0] + 2 >= g.nodes_per_axis() || mi[1] + 2 >= g.nodes_per_axis() {
                continue;
            }
            let expected = -lap.values[node] + adv.values[node];
            assert!((au[i] - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn transpose_product_is_adjoint() {
        let g = Grid::new(1, 1.0, 0.1).unwrap();
        let a = assemble(&g, &swirl(&g), Closure::Absorb);
        let v: Vec<f64> = (0..a.n).map(|i| (i as f64).sin()).collect();
        let w: Vec<f64> = (0..a.n).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = a.apply(&v).iter().zip(&w).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.apply_transpose(&w).iter().zip(&v).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
