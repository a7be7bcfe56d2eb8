//! Stationary densities of controlled generators and measures on state×control
//! space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norm, Grid, Vector, VectorField, MAX_DIM};
use crate::hamiltonian::{running_cost, HamiltonianModel, PotentialSpec};
use crate::linsolve;
use crate::operator::{self, Closure};

/// Relative residual bound for the adjoint solve.
pub const ADJOINT_TOLERANCE: f64 = 1e-10;

/// Grid density with `Σ ρ h^d = 1`, zero on the boundary layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub rho: Vec<f64>,
}

impl DensityField {
    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `Σ g(x) ρ(x) h^d`.
    pub fn integrate(&self, g: impl Fn(&Vector) -> f64) -> f64 {
        let h = self.grid.cell_volume();
        self.rho.iter().enumerate().filter(|(_, r)| **r != 0.0).map(|(n, r)| g(&self.grid.coords(n)) * r * h).sum()
    }

    /// `Σ |ρ − φ| h^d` against a density `φ` sampled at the nodes.
    pub fn l1_distance(&self, other: impl Fn(&Vector) -> f64) -> f64 {
        let h = self.grid.cell_volume();
        (0..self.grid.node_count()).map(|n| (self.rho[n] - other(&self.grid.coords(n))).abs() * h).sum()
    }
}

/// Null vector of the transposed reflected generator, normalized to unit mass.
///
/// Solves `A_ξᵀ ρ = 0` with the origin's row replaced by the mass row `h^d·1`.
pub fn stationary_density(grid: &Grid, control: &VectorField) -> Result<DensityField> {
    if control.len() != grid.node_count() {
        return Err(Error::InvalidArgument("control must be defined on the grid".into()));
    }
    let a = operator::assemble(grid, &control.values, Closure::Reflect);
    let origin = grid.interior_index(grid.origin()).expect("origin is interior");
    let vol = grid.cell_volume();

    let mut triplets = Vec::with_capacity(a.values.len() + a.n);
    for (i, j, v) in a.triplets() {
        if j != origin {
            triplets.push((j, i, v));
        }
    }
    for k in 0..a.n {
        triplets.push((origin, k, vol));
    }
    let mut rhs = vec![0.0; a.n];
    rhs[origin] = 1.0;
    let mut rho_int = linsolve::solve(a.n, &triplets, &rhs, ADJOINT_TOLERANCE)?;

    let max = rho_int.iter().copied().fold(0.0, f64::max);
    let min = rho_int.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-12 * max {
        return Err(Error::NullSpace(format!(
            "stationary density has a negative entry {min}; the chain is not irreducible"
        )));
    }
    for r in &mut rho_int {
        *r = r.max(0.0);
    }

    // The origin row only fixes the mass; check the conservation it replaced.
    let residual = a.apply_transpose(&rho_int);
    let a_norm = (0..a.n).map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let rel = residual.iter().map(|r| r.abs()).fold(0.0, f64::max) / (a_norm * max);
    if rel > ADJOINT_TOLERANCE {
        return Err(Error::LinearResidual { residual: rel, tolerance: ADJOINT_TOLERANCE });
    }

    let mass: f64 = rho_int.iter().sum::<f64>() * vol;
    let mut rho = vec![0.0; grid.node_count()];
    for (i, &node) in grid.interior_nodes().iter().enumerate() {
        rho[node] = rho_int[i] / mass;
    }
    Ok(DensityField { grid: grid.clone(), rho })
}

/// `Σ_x F(x, ξ(x)) ρ(x) h^d`.
pub fn average_cost(
    density: &DensityField,
    control: &VectorField,
    model: &HamiltonianModel,
    potential: &PotentialSpec,
) -> f64 {
    let grid = &density.grid;
    let vol = grid.cell_volume();
    grid.interior_nodes()
        .iter()
        .map(|&n| running_cost(model, potential, &grid.coords(n), &control.values[n]) * density.rho[n] * vol)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Grid node of the state coordinate.
    pub node: usize,
    pub xi: Vector,
    pub weight: f64,
}

/// Finitely supported probability measure on (grid nodes) × `R^d`.
///
/// Atoms are kept sorted by node, then by control, without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    pub grid: Grid,
    pub atoms: Vec<Atom>,
}

impl GridMeasure {
    pub fn new(grid: &Grid, mut atoms: Vec<Atom>) -> Result<Self> {
        if let Some(a) = atoms.iter().find(|a| !(a.weight >= 0.0 && a.weight.is_finite())) {
            return Err(Error::InvalidArgument(format!("negative or non-finite weight {}", a.weight)));
        }
        if atoms.iter().any(|a| a.node >= grid.node_count()) {
            return Err(Error::InvalidArgument("atom node outside the grid".into()));
        }
        atoms.sort_by(|a, b| {
            a.node.cmp(&b.node).then(a.xi[0].total_cmp(&b.xi[0])).then(a.xi[1].total_cmp(&b.xi[1]))
        });
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.node == a.node && last.xi == a.xi => last.weight += a.weight,
                _ => merged.push(a),
            }
        }
        Ok(Self { grid: grid.clone(), atoms: merged })
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `μ(F) = Σ w F(x, ξ)`.
    pub fn cost(&self, model: &HamiltonianModel, potential: &PotentialSpec) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * running_cost(model, potential, &self.grid.coords(a.node), &a.xi))
            .sum()
    }

    /// State marginal per grid node.
    pub fn state_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.node_count()];
        for a in &self.atoms {
            m[a.node] += a.weight;
        }
        m
    }

    /// Conditional mean control per node (zero where the marginal vanishes).
    pub fn barycentric_control(&self) -> VectorField {
        let mut sum = vec![[0.0; MAX_DIM]; self.grid.node_count()];
        let marginal = self.state_marginal();
        for a in &self.atoms {
            sum[a.node][0] += a.weight * a.xi[0];
            sum[a.node][1] += a.weight * a.xi[1];
        }
        for (s, m) in sum.iter_mut().zip(&marginal) {
            if *m > 0.0 {
                s[0] /= m;
                s[1] /= m;
            }
        }
        VectorField { values: sum }
    }

    /// `Σ_x Σ_ξ μ(x, ξ) (A_ξ g)(x)` for every interior basis function `g`.
    ///
    /// This is the vector of equality-row values of the occupation-measure
    /// program; it vanishes exactly for infinitesimally invariant measures.
    pub fn generator_moments(&self) -> Vec<f64> {
        let grid = &self.grid;
        let h = grid.spacing();
        let mut out = vec![0.0; grid.interior_count()];
        for a in &self.atoms {
            let Some(i) = grid.interior_index(a.node) else {
                continue;
            };
            for axis in 0..grid.dim() {
                let (back, fwd) = operator::axis_rates(a.xi[axis], h);
                for (forward, rate) in [(false, back), (true, fwd)] {
                    let nb = grid.neighbor(a.node, axis, forward).expect("interior node");
                    if let Some(j) = grid.interior_index(nb) {
                        out[i] += a.weight * rate;
                        out[j] -= a.weight * rate;
                    }
                }
            }
        }
        out
    }
}

/// Puts mass `ρ(x) h^d` at `(x, ξ(x))` with the control kept exactly.
pub fn control_measure(density: &DensityField, control: &VectorField) -> GridMeasure {
    let grid = &density.grid;
    let vol = grid.cell_volume();
    let atoms = grid
        .interior_nodes()
        .iter()
        .filter(|&&n| density.rho[n] > 0.0)
        .map(|&n| Atom { node: n, xi: control.values[n], weight: density.rho[n] * vol })
        .collect();
    GridMeasure::new(grid, atoms).expect("density weights are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedMeasure {
    pub measure: GridMeasure,
    /// Nodes whose control fell outside the bounding box of the control grid.
    pub clipped: usize,
}

/// Index of the control-grid node nearest to `xi` (first one on ties).
pub fn nearest_xi(xi_grid: &[Vector], xi: &Vector) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in xi_grid.iter().enumerate() {
        let d = norm(&[c[0] - xi[0], c[1] - xi[1]]);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Puts mass `ρ(x) h^d` on the control-grid node nearest to `ξ(x)`.
pub fn pair_measure(density: &DensityField, control: &VectorField, xi_grid: &[Vector]) -> Result<PairedMeasure> {
    if xi_grid.is_empty() {
        return Err(Error::InvalidArgument("control grid is empty".into()));
    }
    let grid = &density.grid;
    let dim = grid.dim();
    let mut lo = [f64::INFINITY; MAX_DIM];
    let mut hi = [f64::NEG_INFINITY; MAX_DIM];
    for c in xi_grid {
        for k in 0..dim {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let vol = grid.cell_volume();
    let mut clipped = 0;
    let mut atoms = Vec::new();
    for &n in grid.interior_nodes() {
        let xi = control.values[n];
        if (0..dim).any(|k| xi[k] < lo[k] || xi[k] > hi[k]) {
            clipped += 1;
        }
        if density.rho[n] > 0.0 {
            atoms.push(Atom { node: n, xi: xi_grid[nearest_xi(xi_grid, &xi)], weight: density.rho[n] * vol });
        }
    }
    Ok(PairedMeasure { measure: GridMeasure::new(grid, atoms)?, clipped })
}

/// Unit mass at a single `(node, ξ)`.
pub fn dirac_measure(grid: &Grid, node: usize, xi: Vector) -> Result<GridMeasure> {
    GridMeasure::new(grid, vec![Atom { node, xi, weight: 1.0 }])
}

/// Mass of the radial density `∝ exp(−|x|^γ/γ)` on `R^d` outside the ball of
/// the given radius, by composite Simpson quadrature in the radius.
pub fn power_density_tail_mass(dim: usize, gamma: f64, radius: f64) -> f64 {
    let weight = |r: f64| r.powi(dim as i32 - 1) * (-r.powf(gamma) / gamma).exp();
    // exp(−r^γ/γ) < 1e-30 beyond this point.
    let cutoff = (69.1 * gamma).powf(1.0 / gamma).max(radius);
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = weight(a) + weight(b);
        for i in 1..n {
            s += weight(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let total = simpson(0.0, cutoff);
    if radius >= cutoff {
        return 0.0;
    }
    simpson(radius, cutoff) / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ou(grid: &Grid) -> VectorField {
        VectorField::from_fn(grid, |x| [x[0], x[1]])
    }

    #[test]
    fn ornstein_uhlenbeck_density_is_gaussian() {
        let g = Grid::new(1, 6.0, 0.01).unwrap();
        let d = stationary_density(&g, &ou(&g)).unwrap();
        assert_abs_diff_eq!(d.mass(), 1.0, epsilon = 1e-12);
        let var = d.integrate(|x| x[0] * x[0]);
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        let gauss = |x: &Vector| (-x[0] * x[0] / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!(d.l1_distance(gauss) < 0.02);
        assert!(g.interior_nodes().iter().all(|&n| d.rho[n] > 0.0));
    }

    #[test]
    fn zero_control_density_is_uniform() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let d = stationary_density(&g, &VectorField::zeros(&g)).unwrap();
        let first = d.rho[g.interior_nodes()[0]];
        for &n in g.interior_nodes() {
            assert_abs_diff_eq!(d.rho[n], first, epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_orthogonality() {
        let g = Grid::new(2, 2.0, 0.1).unwrap();
        let control = VectorField::from_fn(&g, |x| [x[0] + 0.5 * x[1], x[1] - x[0]]);
        let d = stationary_density(&g, &control).unwrap();
        let a = operator::assemble(&g, &control.values, Closure::Reflect);
        let test: Vec<f64> = g.interior_nodes().iter().map(|&n| (g.coords(n)[0] * 3.0).sin()).collect();
        let ag = a.apply(&test);
        let pairing: f64 = g.interior_nodes().iter().enumerate().map(|(i, &n)| ag[i] * d.rho[n]).sum();
        assert!(pairing.abs() <= 1e-10 * 1.0);
    }

    #[test]
    fn control_measure_is_invariant() {
        let g = Grid::new(1, 3.0, 0.05).unwrap();
        let control = ou(&g);
        let d = stationary_density(&g, &control).unwrap();
        let mu = control_measure(&d, &control);
        let moments = mu.generator_moments();
        assert!(moments.iter().all(|m| m.abs() < 1e-9));
    }

    #[test]
    fn pair_measure_examples() {
        let g = Grid::new(1, 2.0, 0.1).unwrap();
        let xi_grid: Vec<Vector> = (-2..=2).map(|k| [k as f64, 0.0]).collect();
        let zero = VectorField::zeros(&g);
        let d = stationary_density(&g, &zero).unwrap();
        let p = pair_measure(&d, &zero, &xi_grid).unwrap();
        assert_eq!(p.clipped, 0);
        assert!(p.measure.atoms.iter().all(|a| a.xi == [0.0, 0.0]));
        assert_abs_diff_eq!(p.measure.total_mass(), 1.0, epsilon = 1e-12);

        let big = VectorField::from_fn(&g, |x| [3.0 * x[0], 0.0]);
        let p = pair_measure(&d, &big, &xi_grid).unwrap();
        assert!(p.clipped > 0);

        let toy = Grid::new(1, 1.0, 0.5).unwrap();
        let mut rho = vec![0.0; 5];
        rho[1] = 1.2;
        rho[3] = 0.8;
        let density = DensityField { grid: toy.clone(), rho };
        let control = VectorField::from_fn(&toy, |x| [if x[0] < 0.0 { 1.0 } else { -1.0 }, 0.0]);
        let p = pair_measure(&density, &control, &xi_grid).unwrap();
        assert_eq!(
            p.measure.atoms,
            vec![Atom { node: 1, xi: [1.0, 0.0], weight: 0.6 }, Atom { node: 3, xi: [-1.0, 0.0], weight: 0.4 }]
        );
    }

    #[test]
    fn gaussian_average_cost() {
        let g = Grid::new(1, 6.0, 0.01).unwrap();
        let control = ou(&g);
        let d = stationary_density(&g, &control).unwrap();
        let m = HamiltonianModel::pure_power(2.0).unwrap();
        let f = PotentialSpec::QuadraticPower { gamma: 2.0 };
        let c = average_cost(&d, &control, &m, &f);
        assert!((c - 2.0).abs() < 0.02, "average cost {c}");
    }

    #[test]
    fn tail_mass_oracle() {
        // Half-line Gaussian tail beyond 1.96 is 0.05 of the two-sided mass.
        let t = power_density_tail_mass(1, 2.0, 1.959963984540054);
        assert_abs_diff_eq!(t, 0.05, epsilon = 1e-8);
        assert_abs_diff_eq!(power_density_tail_mass(2, 2.0, 0.0), 1.0, epsilon = 1e-12);
    }
}
