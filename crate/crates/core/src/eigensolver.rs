//! Ergodic eigenpair `(u, λ)` of `−Δu + H(x, Du) = f − λ` by Howard policy
//! iteration on the monotone upwind scheme.
//!
//! Evaluation solves `A_ξ u + λ = F(·, ξ)` with `u(origin) = 0`, where `A_ξ` is
//! the generator from [`crate::operator`]. Improvement replaces `ξ(x)` by the
//! exact maximizer of the upwind Hamiltonian
//! `H^h(x) = max_ξ [ξ⁺·D⁻u − ξ⁻·D⁺u − L(x, ξ)]`, so a converged pair satisfies
//! `−Δ^h u + H^h = f − λ` to solver precision and every improvement step lowers
//! `λ` (reflected closure).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{one_sided, Grid, GridDescriptor, ScalarField, VectorField, MAX_DIM};
use crate::hamiltonian::{HamiltonianModel, PotentialSpec, DEFAULT_EPS_GRAD};
use crate::linsolve;
use crate::operator::{self, Closure};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Reflected closure: no boundary value is referenced.
    #[default]
    StateConstraint,
    /// `u` pinned to the given large value on the boundary layer.
    DirichletBig(f64),
}

impl BoundaryMode {
    pub fn closure(&self) -> Closure {
        match self {
            BoundaryMode::StateConstraint => Closure::Reflect,
            BoundaryMode::DirichletBig(_) => Closure::Absorb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_policy_iters: usize,
    /// Relative residual bound for each linear solve.
    pub eval_tolerance: f64,
    /// Stop when successive eigenvalues differ by at most this (relative to `max(1, |λ|)`).
    pub lambda_tolerance: f64,
    /// Stop only once the control moves by at most this (relative to `max(1, sup|ξ|)`).
    pub control_tolerance: f64,
    pub boundary_mode: BoundaryMode,
    pub eps_grad: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_policy_iters: 200,
            eval_tolerance: 1e-10,
            lambda_tolerance: 1e-10,
            control_tolerance: 1e-8,
            boundary_mode: BoundaryMode::StateConstraint,
            eps_grad: DEFAULT_EPS_GRAD,
        }
    }
}

impl SolverOptions {
    pub fn with_boundary(mut self, mode: BoundaryMode) -> Self {
        self.boundary_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("eval_tolerance", self.eval_tolerance)?;
        positive("lambda_tolerance", self.lambda_tolerance)?;
        positive("control_tolerance", self.control_tolerance)?;
        positive("eps_grad", self.eps_grad)?;
        if self.max_policy_iters == 0 {
            return Err(Error::InvalidArgument("max_policy_iters must be at least 1".into()));
        }
        if let BoundaryMode::DirichletBig(m) = self.boundary_mode {
            positive("dirichlet_big value", m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSolution {
    pub grid: Grid,
    pub boundary_mode: BoundaryMode,
    /// Value function on every node, shifted so that its minimum is 1.
    pub u: ScalarField,
    pub lambda: f64,
    /// Feedback control on interior nodes, zero on the boundary layer.
    pub xi_u: VectorField,
    pub residual_sup: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ErgodicSolution {
    pub fn grid_ref(&self) -> GridDescriptor {
        self.grid.descriptor()
    }
}

/// Extends interior values to the boundary layer: a copy of the nearest
/// interior node under reflection, the pinned value under Dirichlet closure.
fn fill_boundary(grid: &Grid, interior: &[f64], mode: BoundaryMode) -> Vec<f64> {
    (0..grid.node_count())
        .map(|node| match grid.interior_index(node) {
            Some(i) => interior[i],
            None => match mode {
                BoundaryMode::StateConstraint => {
                    interior[grid.interior_index(grid.nearest_interior(node)).expect("interior")]
                }
                BoundaryMode::DirichletBig(m) => m,
            },
        })
        .collect()
}

/// Solves `A_ξ u + λ = cost` on interior nodes with `u(origin) = 0`.
///
/// The unknown in the origin's slot is `λ`: the origin column of `A_ξ` is
/// replaced by ones. Under Dirichlet closure the pinned boundary value enters
/// the right-hand side.
pub fn policy_evaluation(
    grid: &Grid,
    control: &VectorField,
    cost: &ScalarField,
    opts: &SolverOptions,
) -> Result<(ScalarField, f64)> {
    if control.len() != grid.node_count() || cost.len() != grid.node_count() {
        return Err(Error::InvalidArgument("control and cost must be defined on the grid".into()));
    }
    let a = operator::assemble(grid, &control.values, opts.boundary_mode.closure());
    let origin = grid.interior_index(grid.origin()).expect("origin is interior");

    let mut triplets = Vec::with_capacity(a.values.len() + a.n);
    for (i, j, v) in a.triplets() {
        if j != origin {
            triplets.push((i, j, v));
        }
    }
    for i in 0..a.n {
        triplets.push((i, origin, 1.0));
    }
    let pinned = match opts.boundary_mode {
        BoundaryMode::StateConstraint => 0.0,
        BoundaryMode::DirichletBig(m) => m,
    };
    let rhs: Vec<f64> = grid
        .interior_nodes()
        .iter()
        .enumerate()
        .map(|(i, &node)| cost.values[node] + a.boundary_rate[i] * pinned)
        .collect();

    let mut z = linsolve::solve(a.n, &triplets, &rhs, opts.eval_tolerance)?;
    let lambda = z[origin];
    z[origin] = 0.0;
    let u = fill_boundary(grid, &z, opts.boundary_mode);
    Ok((ScalarField { values: u }, lambda))
}

/// Upwind-maximizing control for `u` on interior nodes (default `eps_grad`).
pub fn policy_improvement(grid: &Grid, u: &ScalarField, model: &HamiltonianModel) -> VectorField {
    policy_improvement_with(grid, u, model, DEFAULT_EPS_GRAD)
}

pub fn policy_improvement_with(
    grid: &Grid,
    u: &ScalarField,
    model: &HamiltonianModel,
    eps_grad: f64,
) -> VectorField {
    let values = (0..grid.node_count())
        .map(|node| {
            if !grid.is_interior(node) {
                return [0.0; MAX_DIM];
            }
            let (minus, plus) = one_sided(&u.values, grid, node);
            model.upwind_hamiltonian(&grid.coords(node), &minus, &plus, grid.dim(), eps_grad).1
        })
        .collect();
    VectorField { values }
}

fn running_costs(grid: &Grid, model: &HamiltonianModel, f: &[f64], control: &VectorField) -> ScalarField {
    let values = (0..grid.node_count())
        .map(|node| f[node] + model.lagrangian_value(&grid.coords(node), &control.values[node]))
        .collect();
    ScalarField { values }
}

fn max_control_change(a: &VectorField, b: &VectorField) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
        .fold(0.0, f64::max)
}

/// Howard iteration from `ξ ≡ 0`.
///
/// Without convergence after `max_policy_iters` the last iterate is returned
/// with `converged = false`.
pub fn solve_ergodic_hjb(
    grid: &Grid,
    model: &HamiltonianModel,
    potential: &PotentialSpec,
    opts: &SolverOptions,
) -> Result<ErgodicSolution> {
    model.validate()?;
    potential.validate()?;
    opts.validate()?;
    let mut warnings = Vec::new();
    if let Some(w) = potential.coercivity_warning(grid) {
        warnings.push(w);
    }
    let f: Vec<f64> = (0..grid.node_count()).map(|n| potential.value(&grid.coords(n))).collect();

    let mut control = VectorField::zeros(grid);
    let mut history = Vec::new();
    let mut converged = false;
    let mut u = ScalarField::zeros(grid);
    let mut lambda = f64::NAN;
    let mut iterations = 0;

    while iterations < opts.max_policy_iters {
        iterations += 1;
        let cost = running_costs(grid, model, &f, &control);
        let (u_k, lambda_k) = policy_evaluation(grid, &control, &cost, opts)?;
        let next = policy_improvement_with(grid, &u_k, model, opts.eps_grad);
        let change = max_control_change(&next, &control);
        let scale = next.max_norm().max(1.0);
        let lambda_settled = history
            .last()
            .is_some_and(|&prev: &f64| (lambda_k - prev).abs() <= opts.lambda_tolerance * lambda_k.abs().max(1.0));
        history.push(lambda_k);
        u = u_k;
        lambda = lambda_k;
        control = next;
        if lambda_settled && change <= opts.control_tolerance * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("policy iteration did not converge in {iterations} iterations"));
    }

    let shift = 1.0 - u.values.iter().copied().fold(f64::INFINITY, f64::min);
    for v in &mut u.values {
        *v += shift;
    }
    let mut solution = ErgodicSolution {
        grid: grid.clone(),
        boundary_mode: opts.boundary_mode,
        u,
        lambda,
        xi_u: control,
        residual_sup: f64::NAN,
        iterations,
        converged,
        lambda_history: history,
        warnings,
    };
    solution.residual_sup = pde_residual(&solution, model, potential);
    Ok(solution)
}

/// Pointwise `−Δ^h u + H^h(x) − f(x) + λ` on interior nodes, zero elsewhere.
pub fn pointwise_residual(solution: &ErgodicSolution, model: &HamiltonianModel, potential: &PotentialSpec) -> ScalarField {
    let grid = &solution.grid;
    let u = &solution.u.values;
    let lap = crate::grid::laplacian(&solution.u, grid);
    let values = (0..grid.node_count())
        .map(|node| {
            if !grid.is_interior(node) {
                return 0.0;
            }
            let x = grid.coords(node);
            let (minus, plus) = one_sided(u, grid, node);
            let (h, _) = model.upwind_hamiltonian(&x, &minus, &plus, grid.dim(), DEFAULT_EPS_GRAD);
            -lap.values[node] + h - potential.value(&x) + solution.lambda
        })
        .collect();
    ScalarField { values }
}

/// `sup_x |−Δ^h u + H^h(x) − f(x) + λ|` over interior nodes.
pub fn pde_residual(solution: &ErgodicSolution, model: &HamiltonianModel, potential: &PotentialSpec) -> f64 {
    pointwise_residual(solution, model, potential).values.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionEntry {
    pub radius: f64,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `λ(R_k) − λ(R_{k−1})` when both are available.
    pub difference: Option<f64>,
    pub error: Option<String>,
}

/// Eigenvalues on growing boxes at fixed spacing, solved in parallel.
///
/// A failed radius is recorded in its entry and the remaining radii proceed.
pub fn domain_exhaustion(
    dim: usize,
    model: &HamiltonianModel,
    potential: &PotentialSpec,
    radii: &[f64],
    spacing: f64,
    opts: &SolverOptions,
) -> Result<Vec<ExhaustionEntry>> {
    if radii.is_empty() {
        return Err(Error::InvalidArgument("at least one radius is required".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("radii must be strictly increasing".into()));
    }
    if radii[0] < 4.0 * spacing {
        return Err(Error::InvalidArgument(format!(
            "smallest radius {} is below 4 * spacing",
            radii[0]
        )));
    }
    let results: Vec<Result<ErgodicSolution>> = radii
        .par_iter()
        .map(|&r| {
            let grid = Grid::new(dim, r, spacing)?;
            solve_ergodic_hjb(&grid, model, potential, opts)
        })
        .collect();
    let mut entries: Vec<ExhaustionEntry> = radii
        .iter()
        .zip(results)
        .map(|(&radius, res)| match res {
            Ok(s) => ExhaustionEntry {
                radius,
                lambda: Some(s.lambda),
                iterations: s.iterations,
                converged: s.converged,
                difference: None,
                error: None,
            },
            Err(e) => ExhaustionEntry {
                radius,
                lambda: None,
                iterations: 0,
                converged: false,
                difference: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    for k in 1..entries.len() {
        if let (Some(a), Some(b)) = (entries[k - 1].lambda, entries[k].lambda) {
            entries[k].difference = Some(b - a);
        }
    }
    Ok(entries)
}
