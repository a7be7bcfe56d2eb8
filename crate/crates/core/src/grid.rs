//! Uniform lattice on `[-R, R]^d` and the finite-difference stencils shared by
//! every solver.
//!
//! Nodes are stored in lexicographic order with the first axis varying
//! slowest. Points and vectors are carried as `[f64; 2]`; in one dimension the
//! second component is identically zero, so Euclidean norms and dot products
//! need no special casing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// A point or vector in `R^d`, padded with zeros up to [`MAX_DIM`].
pub type Vector = [f64; MAX_DIM];

pub const MAX_NODES: usize = 10_000_000;

const NOT_INTERIOR: usize = usize::MAX;

pub fn norm(v: &Vector) -> f64 {
    v[0].hypot(v[1])
}

pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Whether stencil loops run on the calling thread or on the rayon pool.
///
/// Every stencil is a per-node map with no cross-node reduction, so both modes
/// return bitwise identical fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    radius: f64,
    spacing: f64,
    half: usize,
    nodes_per_axis: usize,
    interior_mask: Vec<bool>,
    interior_nodes: Vec<usize>,
    interior_local: Vec<usize>,
}

/// Serializable identity of a grid: enough to rebuild it bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub dim: usize,
    pub radius: f64,
    pub spacing: f64,
    pub nodes_per_axis: usize,
}

impl Grid {
    /// Builds the lattice `{ (i - ⌊R/h⌋) h }^d` with `2⌊R/h⌋ + 1` nodes per axis.
    pub fn new(dim: usize, radius: f64, spacing: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} is outside the supported range {{1, 2}}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        // One interior node is the minimum; solvers that need a wider box
        // check that themselves.
        if !(radius.is_finite() && radius >= spacing) {
            return Err(Error::InvalidGrid(format!(
                "radius {radius} must be at least the spacing {spacing}"
            )));
        }
        // Guard against R/h landing a hair below an integer, e.g. 6.0 / 0.01.
        let ratio = radius / spacing;
        let half_f = (ratio * (1.0 + 1e-12)).floor();
        if half_f > (MAX_NODES as f64) {
            return Err(Error::InvalidGrid(format!(
                "radius/spacing = {ratio} produces more than {MAX_NODES} nodes"
            )));
        }
        let half = half_f as usize;
        let nodes_per_axis = 2 * half + 1;
        let total = (nodes_per_axis as u128).pow(dim as u32);
        if total > MAX_NODES as u128 {
            return Err(Error::InvalidGrid(format!(
                "{total} nodes exceed the limit of {MAX_NODES}"
            )));
        }
        let total = total as usize;

        let mut interior_mask = vec![false; total];
        let mut interior_nodes = Vec::new();
        let mut interior_local = vec![NOT_INTERIOR; total];
        for idx in 0..total {
            let mi = multi_index(idx, dim, nodes_per_axis);
            let inside = mi[..dim].iter().all(|&i| i > 0 && i + 1 < nodes_per_axis);
            if inside {
                interior_mask[idx] = true;
                interior_local[idx] = interior_nodes.len();
                interior_nodes.push(idx);
            }
        }

        Ok(Self {
            dim,
            radius,
            spacing,
            half,
            nodes_per_axis,
            interior_mask,
            interior_nodes,
            interior_local,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn node_count(&self) -> usize {
        self.interior_mask.len()
    }

    /// Volume element `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            dim: self.dim,
            radius: self.radius,
            spacing: self.spacing,
            nodes_per_axis: self.nodes_per_axis,
        }
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior_mask
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior_mask[node]
    }

    /// Interior node ids in lexicographic order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Position of `node` within [`Grid::interior_nodes`].
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        match self.interior_local[node] {
            NOT_INTERIOR => None,
            i => Some(i),
        }
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        multi_index(node, self.dim, self.nodes_per_axis)
    }

    pub fn node_at(&self, mi: [usize; MAX_DIM]) -> usize {
        match self.dim {
            1 => mi[0],
            _ => mi[0] * self.nodes_per_axis + mi[1],
        }
    }

    pub fn origin(&self) -> usize {
        self.node_at([self.half, if self.dim == 2 { self.half } else { 0 }])
    }

    pub fn axis_coordinate(&self, i: usize) -> f64 {
        (i as f64 - self.half as f64) * self.spacing
    }

    pub fn coords(&self, node: usize) -> Vector {
        let mi = self.multi_index(node);
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = self.axis_coordinate(mi[k]);
        }
        x
    }

    /// Neighbour of `node` one step along `axis` (`forward` = increasing index).
    pub fn neighbor(&self, node: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut mi = self.multi_index(node);
        if forward {
            if mi[axis] + 1 >= self.nodes_per_axis {
                return None;
            }
            mi[axis] += 1;
        } else {
            if mi[axis] == 0 {
                return None;
            }
            mi[axis] -= 1;
        }
        Some(self.node_at(mi))
    }

    /// Nearest interior node to a boundary node (identity on interior nodes).
    pub fn nearest_interior(&self, node: usize) -> usize {
        let mut mi = self.multi_index(node);
        for k in 0..self.dim {
            mi[k] = mi[k].clamp(1, self.nodes_per_axis - 2);
        }
        self.node_at(mi)
    }

    /// Nearest node to an arbitrary point, clamped to the box.
    pub fn nearest_node(&self, x: &Vector) -> usize {
        let mut mi = [0usize; MAX_DIM];
        for k in 0..self.dim {
            let t = (x[k] / self.spacing).round() + self.half as f64;
            mi[k] = t.clamp(0.0, (self.nodes_per_axis - 1) as f64) as usize;
        }
        self.node_at(mi)
    }

    /// Euclidean distance from an interior point to the box boundary.
    pub fn distance_to_boundary(&self, x: &Vector) -> f64 {
        let edge = self.half as f64 * self.spacing;
        (0..self.dim)
            .map(|k| edge - x[k].abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest coordinate of the node set, `⌊R/h⌋ h`.
    pub fn extent(&self) -> f64 {
        self.half as f64 * self.spacing
    }

    /// Multilinear interpolation weights of `x`, clamped to the node box.
    ///
    /// Returns up to `2^d` `(node, weight)` pairs whose weights sum to one.
    pub fn interpolation_stencil(&self, x: &Vector) -> ([(usize, f64); 4], usize) {
        let n = self.nodes_per_axis;
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let t = (x[k] / self.spacing + self.half as f64).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut out = [(0usize, 0.0); 4];
        if self.dim == 1 {
            out[0] = (base[0], 1.0 - frac[0]);
            out[1] = (base[0] + 1, frac[0]);
            (out, 2)
        } else {
            let mut m = 0;
            for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                    out[m] = (self.node_at([base[0] + di, base[1] + dj]), wi * wj);
                    m += 1;
                }
            }
            (out, 4)
        }
    }

    pub fn interpolate_scalar(&self, values: &[f64], x: &Vector) -> f64 {
        let (stencil, m) = self.interpolation_stencil(x);
        stencil[..m].iter().map(|&(node, w)| w * values[node]).sum()
    }

    pub fn interpolate_vector(&self, values: &[Vector], x: &Vector) -> Vector {
        let (stencil, m) = self.interpolation_stencil(x);
        let mut out = [0.0; MAX_DIM];
        for &(node, w) in &stencil[..m] {
            out[0] += w * values[node][0];
            out[1] += w * values[node][1];
        }
        out
    }
}

fn multi_index(node: usize, dim: usize, n: usize) -> [usize; MAX_DIM] {
    match dim {
        1 => [node, 0],
        _ => [node / n, node % n],
    }
}

/// Real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "scalar field has {} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {i}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { values: vec![0.0; grid.node_count()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&Vector) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|i| f(&grid.coords(i))).collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A `d`-vector per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub values: Vec<Vector>,
}

impl VectorField {
    pub fn new(grid: &Grid, values: Vec<Vector>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "vector field has {} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite vector at node {i}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { values: vec![[0.0; MAX_DIM]; grid.node_count()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&Vector) -> Vector) -> Self {
        let dim = grid.dim();
        let values = (0..grid.node_count())
            .map(|i| {
                let mut v = f(&grid.coords(i));
                if dim == 1 {
                    v[1] = 0.0;
                }
                v
            })
            .collect();
        Self { values }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| [factor * v[0], factor * v[1]]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(norm).fold(0.0, f64::max)
    }
}

fn map_nodes<T: Send>(grid: &Grid, mode: ExecMode, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    match mode {
        ExecMode::Serial => (0..grid.node_count()).map(f).collect(),
        ExecMode::Parallel => (0..grid.node_count()).into_par_iter().map(f).collect(),
    }
}

/// Centered second-difference Laplacian on interior nodes; boundary nodes carry 0.
pub fn laplacian(field: &ScalarField, grid: &Grid) -> ScalarField {
    laplacian_with(field, grid, ExecMode::Serial)
}

pub fn laplacian_with(field: &ScalarField, grid: &Grid, mode: ExecMode) -> ScalarField {
    let u = &field.values;
    let h2 = grid.spacing() * grid.spacing();
    let values = map_nodes(grid, mode, |node| {
        if !grid.is_interior(node) {
            return 0.0;
        }
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            let l = grid.neighbor(node, axis, false).expect("interior node");
            let r = grid.neighbor(node, axis, true).expect("interior node");
            acc += (u[l] - 2.0 * u[node] + u[r]) / h2;
        }
        acc
    });
    ScalarField { values }
}

/// Centered first differences on interior nodes; boundary nodes carry 0.
pub fn gradient_central(field: &ScalarField, grid: &Grid) -> VectorField {
    gradient_central_with(field, grid, ExecMode::Serial)
}

pub fn gradient_central_with(field: &ScalarField, grid: &Grid, mode: ExecMode) -> VectorField {
    let u = &field.values;
    let h = grid.spacing();
    let values = map_nodes(grid, mode, |node| {
        let mut g = [0.0; MAX_DIM];
        if grid.is_interior(node) {
            for (axis, gk) in g.iter_mut().enumerate().take(grid.dim()) {
                let l = grid.neighbor(node, axis, false).expect("interior node");
                let r = grid.neighbor(node, axis, true).expect("interior node");
                *gk = (u[r] - u[l]) / (2.0 * h);
            }
        }
        g
    });
    VectorField { values }
}

/// Backward and forward differences `(D⁻u, D⁺u)` at an interior node.
pub fn one_sided(u: &[f64], grid: &Grid, node: usize) -> (Vector, Vector) {
    let h = grid.spacing();
    let mut minus = [0.0; MAX_DIM];
    let mut plus = [0.0; MAX_DIM];
    for axis in 0..grid.dim() {
        let l = grid.neighbor(node, axis, false).expect("interior node");
        let r = grid.neighbor(node, axis, true).expect("interior node");
        minus[axis] = (u[node] - u[l]) / h;
        plus[axis] = (u[r] - u[node]) / h;
    }
    (minus, plus)
}

/// `drift · Du` with first-order upwinding per axis: backward differences where
/// the drift component is positive, forward where it is negative.
///
/// With the generator convention `-Δ + ξ·D` this choice makes the assembled
/// matrix an M-matrix (nonpositive off-diagonals).
pub fn advect_upwind(field: &ScalarField, drift: &VectorField, grid: &Grid) -> ScalarField {
    advect_upwind_with(field, drift, grid, ExecMode::Serial)
}

pub fn advect_upwind_with(
    field: &ScalarField,
    drift: &VectorField,
    grid: &Grid,
    mode: ExecMode,
) -> ScalarField {
    let u = &field.values;
    let values = map_nodes(grid, mode, |node| {
        if !grid.is_interior(node) {
            return 0.0;
        }
        let (minus, plus) = one_sided(u, grid, node);
        upwind_product(&drift.values[node], &minus, &plus)
    });
    ScalarField { values }
}

/// `ξ⁺·D⁻u − ξ⁻·D⁺u`, the upwind evaluation of `ξ·Du`.
pub fn upwind_product(xi: &Vector, minus: &Vector, plus: &Vector) -> f64 {
    let mut acc = 0.0;
    for k in 0..MAX_DIM {
        acc += if xi[k] > 0.0 { xi[k] * minus[k] } else { xi[k] * plus[k] };
    }
    acc
}
