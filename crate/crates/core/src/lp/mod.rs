//! Occupation-measure linear program over infinitesimally invariant measures.
//!
//! Variables are the weights `μ(x, ξ_j)` on interior nodes × a control grid.
//! One equality row per interior node `i` states `Σ μ(x, ξ) (A_ξ g_i)(x) = 0`
//! for the nodal indicator `g_i`, and a final row fixes the total mass to one.
//! The conservation rows sum to zero column by column, so one of them is
//! redundant; the simplex handles that generically.

pub mod simplex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigensolver::ErgodicSolution;
use crate::error::{Error, Result};
use crate::grid::{norm, one_sided, upwind_product, Grid, Vector, VectorField, MAX_DIM};
use crate::hamiltonian::{running_cost, HamiltonianModel, PotentialSpec, DEFAULT_EPS_GRAD};
use crate::measure::{nearest_xi, pair_measure, stationary_density, Atom};
use crate::operator;

pub use crate::measure::GridMeasure;
pub use simplex::CscMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub grid: Grid,
    pub xi_grid: Vec<Vector>,
    /// Equality rows: interior nodes in order, then the mass row.
    pub matrix: CscMatrix,
    pub rhs: Vec<f64>,
    pub objective: Vec<f64>,
}

impl LpProblem {
    pub fn n_rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn n_vars(&self) -> usize {
        self.matrix.cols
    }

    /// Column of the pair (interior position `i`, control index `j`).
    pub fn column_index(&self, interior: usize, xi: usize) -> usize {
        interior * self.xi_grid.len() + xi
    }

    /// Inverse of [`LpProblem::column_index`]: (grid node, control index).
    pub fn column_pair(&self, col: usize) -> (usize, usize) {
        let k = self.xi_grid.len();
        (self.grid.interior_nodes()[col / k], col % k)
    }

    /// Adds `delta` to every objective coefficient.
    pub fn shift_objective(&mut self, delta: f64) {
        for c in &mut self.objective {
            *c += delta;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpCertificate {
    /// `max |Aμ − b|`.
    pub primal_residual: f64,
    /// `max (Aᵀy − c)⁺`.
    pub dual_infeasibility: f64,
    /// `max μ_j |c_j − (Aᵀy)_j|`.
    pub complementary_slackness: f64,
    /// `|cᵀμ − bᵀy|`.
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub measure: GridMeasure,
    /// Optimal value `λ̄`.
    pub lambda_bar: f64,
    pub weights: Vec<f64>,
    /// Duals of the conservation rows on every node (boundary copies the
    /// nearest interior value); a discrete subsolution `A_ξ φ + λ̄ ≤ F`.
    pub dual_potential: Vec<f64>,
    pub certificate: LpCertificate,
    pub iterations: usize,
}

/// `count` points per axis on `[−bound, bound]^d`.
pub fn uniform_xi_grid(dim: usize, bound: f64, count: usize) -> Result<Vec<Vector>> {
    if count < 1 || !(bound.is_finite() && bound >= 0.0) || !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidArgument(format!(
            "invalid control grid: dim {dim}, bound {bound}, count {count}"
        )));
    }
    let axis: Vec<f64> = if count == 1 {
        vec![0.0]
    } else {
        (0..count).map(|k| -bound + 2.0 * bound * k as f64 / (count - 1) as f64).collect()
    };
    // Snap the midpoint so that 0 is represented exactly.
    let axis: Vec<f64> = axis.into_iter().map(|v| if v.abs() < 1e-12 * bound.max(1.0) { 0.0 } else { v }).collect();
    Ok(match dim {
        1 => axis.iter().map(|&v| [v, 0.0]).collect(),
        _ => axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect(),
    })
}

pub fn assemble_lp(
    grid: &Grid,
    xi_grid: &[Vector],
    model: &HamiltonianModel,
    potential: &PotentialSpec,
) -> Result<LpProblem> {
    if xi_grid.is_empty() {
        return Err(Error::InvalidArgument("control grid is empty".into()));
    }
    if !xi_grid.iter().any(|xi| xi[0] == 0.0 && xi[1] == 0.0) {
        return Err(Error::InvalidArgument(
            "control grid must contain 0 so that the pure-diffusion measure is feasible".into(),
        ));
    }
    if grid.dim() == 1 && xi_grid.iter().any(|xi| xi[1] != 0.0) {
        return Err(Error::InvalidArgument("one-dimensional control grid has a second component".into()));
    }
    let n_int = grid.interior_count();
    let k = xi_grid.len();
    let h = grid.spacing();
    let mass_row = n_int;

    let mut col_ptr = Vec::with_capacity(n_int * k + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    let mut objective = Vec::with_capacity(n_int * k);
    col_ptr.push(0);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * MAX_DIM + 2);
    for (i, &node) in grid.interior_nodes().iter().enumerate() {
        let x = grid.coords(node);
        for xi in xi_grid {
            entries.clear();
            let mut diag = 0.0;
            for axis in 0..grid.dim() {
                let (back, fwd) = operator::axis_rates(xi[axis], h);
                for (forward, rate) in [(false, back), (true, fwd)] {
                    let nb = grid.neighbor(node, axis, forward).expect("interior node");
                    if let Some(j) = grid.interior_index(nb) {
                        diag += rate;
                        entries.push((j, -rate));
                    }
                }
            }
            entries.push((i, diag));
            entries.push((mass_row, 1.0));
            entries.sort_by_key(|e| e.0);
            for &(r, v) in &entries {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
            objective.push(running_cost(model, potential, &x, xi));
        }
    }
    let mut rhs = vec![0.0; n_int + 1];
    rhs[mass_row] = 1.0;
    Ok(LpProblem {
        grid: grid.clone(),
        xi_grid: xi_grid.to_vec(),
        matrix: CscMatrix { rows: n_int + 1, cols: n_int * k, col_ptr, row_idx, values },
        rhs,
        objective,
    })
}

/// Crash basis: the zero-control column at every interior node plus the
/// artificial of the last conservation row, which is redundant. Its basic
/// solution is the reflected pure-diffusion stationary measure.
fn zero_control_basis(problem: &LpProblem) -> Option<Vec<usize>> {
    let zero = problem.xi_grid.iter().position(|xi| xi[0] == 0.0 && xi[1] == 0.0)?;
    let n_int = problem.grid.interior_count();
    let mut basis: Vec<usize> = (0..n_int).map(|i| problem.column_index(i, zero)).collect();
    basis.push(problem.n_vars() + n_int - 1);
    Some(basis)
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    let start = zero_control_basis(problem);
    let r = simplex::solve_from(&problem.matrix, &problem.rhs, &problem.objective, start.as_deref())?;
    let ax = problem.matrix.mul_vec(&r.x);
    let primal_residual = ax.iter().zip(&problem.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let aty = problem.matrix.tr_mul_vec(&r.y);
    let mut dual_infeasibility: f64 = 0.0;
    let mut complementary_slackness: f64 = 0.0;
    for j in 0..problem.n_vars() {
        let d = problem.objective[j] - aty[j];
        dual_infeasibility = dual_infeasibility.max(-d);
        complementary_slackness = complementary_slackness.max((r.x[j] * d).abs());
    }
    let bty: f64 = problem.rhs.iter().zip(&r.y).map(|(b, y)| b * y).sum();
    let certificate = LpCertificate {
        primal_residual,
        dual_infeasibility,
        complementary_slackness,
        duality_gap: (r.objective - bty).abs(),
    };

    let atoms = r
        .x
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(col, &w)| {
            let (node, j) = problem.column_pair(col);
            Atom { node, xi: problem.xi_grid[j], weight: w }
        })
        .collect();
    let measure = GridMeasure::new(&problem.grid, atoms)?;

    let grid = &problem.grid;
    let dual_potential = (0..grid.node_count())
        .map(|n| r.y[grid.interior_index(grid.nearest_interior(n)).expect("interior")])
        .collect();
    Ok(LpSolution {
        measure,
        lambda_bar: r.objective,
        weights: r.x,
        dual_potential,
        certificate,
        iterations: r.iterations,
    })
}

/// Largest absolute violation of the conservation and mass rows.
pub fn feasibility_violation(measure: &GridMeasure, problem: &LpProblem) -> f64 {
    let moments = measure.generator_moments();
    let off_grid_mass: f64 =
        measure.atoms.iter().filter(|a| !problem.grid.is_interior(a.node)).map(|a| a.weight).sum();
    let conservation = moments.iter().map(|m| m.abs()).fold(0.0, f64::max);
    let mass = (measure.total_mass() - off_grid_mass - 1.0).abs();
    conservation.max(mass).max(off_grid_mass)
}

/// Convex combination `t μ₁ + (1 − t) μ₂` of measures on the same grid.
pub fn mixture(a: &GridMeasure, b: &GridMeasure, t: f64) -> Result<GridMeasure> {
    if a.grid != b.grid {
        return Err(Error::InvalidArgument("mixture of measures on different grids".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("mixture weight {t} outside [0, 1]")));
    }
    let atoms = a
        .atoms
        .iter()
        .map(|x| Atom { weight: t * x.weight, ..*x })
        .chain(b.atoms.iter().map(|x| Atom { weight: (1.0 - t) * x.weight, ..*x }))
        .filter(|x| x.weight > 0.0)
        .collect();
    GridMeasure::new(&a.grid, atoms)
}

/// Pair measure of the stationary density of a control snapped to `xi_grid`.
fn snapped_control_measure(grid: &Grid, xi_grid: &[Vector], control: &VectorField) -> Result<GridMeasure> {
    let snapped = VectorField {
        values: (0..grid.node_count())
            .map(|n| if grid.is_interior(n) { xi_grid[nearest_xi(xi_grid, &control.values[n])] } else { [0.0; MAX_DIM] })
            .collect(),
    };
    let density = stationary_density(grid, &snapped)?;
    Ok(pair_measure(&density, &snapped, xi_grid)?.measure)
}

fn random_control(grid: &Grid, xi_grid: &[Vector], rng: &mut ChaCha8Rng) -> VectorField {
    let dim = grid.dim();
    if rng.random_bool(0.5) {
        // Independent control-grid node per state node.
        VectorField {
            values: (0..grid.node_count())
                .map(|_| xi_grid[rng.random_range(0..xi_grid.len())])
                .collect(),
        }
    } else {
        // Smooth affine field plus noise.
        let mut gain = [[0.0; MAX_DIM]; MAX_DIM];
        let mut offset = [0.0; MAX_DIM];
        for k in 0..dim {
            for l in 0..dim {
                gain[k][l] = rng.random_range(-2.0..2.0);
            }
            offset[k] = rng.random_range(-1.0..1.0);
        }
        let noise = rng.random_range(0.0..1.0);
        VectorField {
            values: (0..grid.node_count())
                .map(|n| {
                    let x = grid.coords(n);
                    let mut v = [0.0; MAX_DIM];
                    for k in 0..dim {
                        v[k] = offset[k] + gain[k][0] * x[0] + gain[k][1] * x[1] + noise * rng.random_range(-1.0..1.0);
                    }
                    v
                })
                .collect(),
        }
    }
}

/// Seeded random feasible measure: the pair measure of a random grid-valued
/// control's stationary density, mixed with a second such measure one time
/// in three so that conditional kernels need not be Dirac.
pub fn random_feasible_measure(grid: &Grid, xi_grid: &[Vector], seed: u64) -> Result<GridMeasure> {
    if xi_grid.is_empty() {
        return Err(Error::InvalidArgument("control grid is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = random_control(grid, xi_grid, &mut rng);
    let mu = snapped_control_measure(grid, xi_grid, &first)?;
    if rng.random_range(0..3) == 0 {
        let second = random_control(grid, xi_grid, &mut rng);
        let nu = snapped_control_measure(grid, xi_grid, &second)?;
        let t = rng.random_range(0.05..0.95);
        return mixture(&mu, &nu, t);
    }
    Ok(mu)
}

/// Both sides of the verification identity
/// `μ(F) − λ = Σ μ(x, ξ) [H^h(x) + L(x, ξ) − ξ·D^h u(x)]`,
/// where `H^h` and `ξ·D^h u` are the upwind Hamiltonian and upwind derivative
/// of the solution's value function. The right side is a sum of nonnegative
/// Fenchel gaps; equality holds for every invariant measure.
pub fn verification_gap(
    measure: &GridMeasure,
    solution: &ErgodicSolution,
    model: &HamiltonianModel,
    potential: &PotentialSpec,
) -> (f64, f64) {
    let grid = &solution.grid;
    let lhs = measure.cost(model, potential) - solution.lambda;
    let u = &solution.u.values;
    let mut rhs = 0.0;
    let mut cached: Option<(usize, Vector, Vector, f64)> = None;
    for a in &measure.atoms {
        if !grid.is_interior(a.node) {
            continue;
        }
        let x = grid.coords(a.node);
        let (minus, plus, h_up) = match cached {
            Some((n, m, p, hv)) if n == a.node => (m, p, hv),
            _ => {
                let (m, p) = one_sided(u, grid, a.node);
                let hv = model.upwind_hamiltonian(&x, &m, &p, grid.dim(), DEFAULT_EPS_GRAD).0;
                cached = Some((a.node, m, p, hv));
                (m, p, hv)
            }
        };
        let gap = h_up + model.lagrangian_value(&x, &a.xi) - upwind_product(&a.xi, &minus, &plus);
        rhs += a.weight * gap;
    }
    (lhs, rhs)
}

/// Mass-weighted mean distance between the measure's conditional control
/// barycenter and the solution's feedback control.
pub fn minimizer_control_distance(measure: &GridMeasure, solution: &ErgodicSolution) -> f64 {
    let marginal = measure.state_marginal();
    let bary = measure.barycentric_control();
    let total: f64 = marginal.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    marginal
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(n, &m)| {
            let b = bary.values[n];
            let s = solution.xi_u.values[n];
            m * norm(&[b[0] - s[0], b[1] - s[1]])
        })
        .sum::<f64>()
        / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::{solve_ergodic_hjb, SolverOptions};
    use approx::assert_abs_diff_eq;

    fn manufactured() -> (HamiltonianModel, PotentialSpec) {
        (HamiltonianModel::pure_power(1.5).unwrap(), PotentialSpec::QuadraticPower { gamma: 1.5 })
    }

    #[test]
    fn counting_example() {
        let g = Grid::new(1, 2.0, 0.5).unwrap();
        assert_eq!(g.interior_count(), 7);
        let small = Grid::new(1, 1.0, 0.5).unwrap();
        let (m, f) = manufactured();
        let xi = uniform_xi_grid(1, 1.0, 3).unwrap();
        let p = assemble_lp(&small, &xi, &m, &f).unwrap();
        assert_eq!(p.n_rows(), 4);
        assert_eq!(p.n_vars(), 9);
        // Per-column sums of the conservation rows vanish.
        for j in 0..p.n_vars() {
            let s: f64 = p.matrix.column(j).filter(|&(r, _)| r < 3).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn objective_entry_and_missing_zero() {
        let g = Grid::new(1, 2.0, 0.5).unwrap();
        let (m, f) = manufactured();
        let xi = uniform_xi_grid(1, 2.0, 3).unwrap();
        let p = assemble_lp(&g, &xi, &m, &f).unwrap();
        let node = g.nearest_node(&[1.0, 0.0]);
        let col = p.column_index(g.interior_index(node).unwrap(), 2);
        assert_abs_diff_eq!(p.objective[col], 13.0 / 3.0, epsilon = 1e-12);
        assert!(assemble_lp(&g, &[[1.0, 0.0], [-1.0, 0.0]], &m, &f).is_err());
    }

    #[test]
    fn pure_diffusion_measure_is_feasible() {
        let g = Grid::new(1, 2.0, 0.1).unwrap();
        let (m, f) = manufactured();
        let xi = uniform_xi_grid(1, 2.0, 5).unwrap();
        let p = assemble_lp(&g, &xi, &m, &f).unwrap();
        let zero = VectorField::zeros(&g);
        let d = stationary_density(&g, &zero).unwrap();
        let mu = pair_measure(&d, &zero, &xi).unwrap().measure;
        assert!(feasibility_violation(&mu, &p) < 1e-9);
        let point = crate::measure::dirac_measure(&g, g.origin(), [1.0, 0.0]).unwrap();
        let expected = 2.0 / (g.spacing() * g.spacing()) + 1.0 / g.spacing();
        assert_abs_diff_eq!(feasibility_violation(&point, &p), expected, epsilon = 1e-9);
    }

    #[test]
    fn constant_potential_and_objective_shift() {
        let g = Grid::new(1, 1.0, 0.1).unwrap();
        let m = HamiltonianModel::pure_power(2.0).unwrap();
        let f = PotentialSpec::Constant { value: 2.5 };
        let p = assemble_lp(&g, &[[0.0, 0.0]], &m, &f).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_abs_diff_eq!(s.lambda_bar, 2.5, epsilon = 1e-12);
        assert!(s.certificate.primal_residual < 1e-9);

        let q = PotentialSpec::QuadraticPower { gamma: 2.0 };
        let xi = uniform_xi_grid(1, 2.0, 9).unwrap();
        let mut p = assemble_lp(&g, &xi, &m, &q).unwrap();
        let base = solve_lp(&p).unwrap().lambda_bar;
        p.shift_objective(0.125);
        assert_abs_diff_eq!(solve_lp(&p).unwrap().lambda_bar, base + 0.125, epsilon = 1e-10);
    }

    #[test]
    fn random_measures_are_deterministic_and_feasible() {
        let g = Grid::new(1, 2.0, 0.1).unwrap();
        let (m, f) = manufactured();
        let xi = uniform_xi_grid(1, 3.0, 13).unwrap();
        let p = assemble_lp(&g, &xi, &m, &f).unwrap();
        for seed in 0..10 {
            let a = random_feasible_measure(&g, &xi, seed).unwrap();
            let b = random_feasible_measure(&g, &xi, seed).unwrap();
            assert_eq!(a, b);
            assert!(feasibility_violation(&a, &p) < 1e-9);
        }
    }

    #[test]
    fn lp_matches_policy_iteration_on_a_small_grid() {
        let g = Grid::new(1, 2.5, 0.1).unwrap();
        let (m, f) = manufactured();
        let xi = uniform_xi_grid(1, 3.0, 31).unwrap();
        let p = assemble_lp(&g, &xi, &m, &f).unwrap();
        let lp = solve_lp(&p).unwrap();
        let s = solve_ergodic_hjb(&g, &m, &f, &SolverOptions::default()).unwrap();
        assert!(lp.lambda_bar >= s.lambda - 1e-8, "weak duality: {} < {}", lp.lambda_bar, s.lambda);
        assert!((lp.lambda_bar - s.lambda).abs() < 0.05);
        assert!(lp.certificate.primal_residual < 1e-9);
        assert!(lp.certificate.complementary_slackness < 1e-8);
        let (lhs, rhs) = verification_gap(&lp.measure, &s, &m, &f);
        assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + lhs.abs()));
    }
}
