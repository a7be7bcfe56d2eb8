//! Euler–Maruyama ergodic averages of `F(X_t, ξ(X_t))` for
//! `dX = −ξ(X) dt + √2 dW` under Markov feedback controls.
//!
//! Every path draws from its own ChaCha stream (seed, stream = path index), so
//! results do not depend on how paths are scheduled across threads, and the
//! same path index sees the same Brownian increments under every control.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norm, Grid, Vector, VectorField, MAX_DIM};
use crate::hamiltonian::{running_cost, HamiltonianModel, PotentialSpec};

pub trait MarkovControl: Sync {
    fn eval(&self, x: &Vector) -> Vector;
    fn dim(&self) -> usize;
    /// Half-width of the box the control was computed on; paths leaving three
    /// times this box are discarded as divergent.
    fn domain_radius(&self) -> f64;
}

/// Control field on a grid, multilinear inside and clamped to the nearest
/// boundary value outside, optionally scaled.
#[derive(Debug, Clone)]
pub struct GridControl {
    grid: Grid,
    values: Vec<Vector>,
    scale: f64,
}

impl GridControl {
    /// Boundary-layer values are replaced by their nearest interior value so
    /// that the clamped extension carries the interior control outward.
    pub fn new(grid: &Grid, field: &VectorField) -> Result<Self> {
        if field.len() != grid.node_count() {
            return Err(Error::InvalidArgument("control field does not match the grid".into()));
        }
        let values = (0..grid.node_count()).map(|n| field.values[grid.nearest_interior(n)]).collect();
        Ok(Self { grid: grid.clone(), values, scale: 1.0 })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { scale: self.scale * factor, ..self.clone() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

impl MarkovControl for GridControl {
    fn eval(&self, x: &Vector) -> Vector {
        let v = self.grid.interpolate_vector(&self.values, x);
        [self.scale * v[0], self.scale * v[1]]
    }

    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn domain_radius(&self) -> f64 {
        self.grid.radius()
    }
}

/// A base control switched off on the ball `|x| ≤ zone`.
#[derive(Debug, Clone)]
pub struct DeadZoneControl<C> {
    pub base: C,
    pub zone: f64,
}

impl<C: MarkovControl> MarkovControl for DeadZoneControl<C> {
    fn eval(&self, x: &Vector) -> Vector {
        if norm(x) <= self.zone {
            [0.0; MAX_DIM]
        } else {
            self.base.eval(x)
        }
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn domain_radius(&self) -> f64 {
        self.base.domain_radius()
    }
}

/// Control given by a closure.
pub struct FnControl<F> {
    pub f: F,
    pub dim: usize,
    pub radius: f64,
}

impl<F: Fn(&Vector) -> Vector + Sync> MarkovControl for FnControl<F> {
    fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn domain_radius(&self) -> f64 {
        self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub horizon: f64,
    pub timestep: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vector,
    pub burn_in: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { horizon: 2000.0, timestep: 1e-3, n_paths: 16, seed: 20240917, x0: [0.0; MAX_DIM], burn_in: 10.0 }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.timestep.is_finite() && self.timestep > 0.0) {
            return Err(Error::InvalidArgument(format!("timestep must be positive, got {}", self.timestep)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 100.0 * self.timestep) {
            return Err(Error::InvalidArgument("horizon must be at least 100 timesteps".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(Error::InvalidArgument("burn_in must lie in [0, horizon)".into()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        Ok(())
    }

    fn steps(&self) -> (usize, usize, usize) {
        let n = (self.horizon / self.timestep).round() as usize;
        let burn = (self.burn_in / self.timestep).round() as usize;
        (n, burn, n / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path: usize,
    /// Time average of `F` over `[burn_in, T]`.
    pub average: f64,
    /// Time average of `F` over `[T/2, T]`.
    pub late_average: f64,
    /// `Σ |ξ(X_t)|^γ* dt` over `[0, T]`.
    pub admissibility_integral: f64,
    /// Time averages of `|ξ|^γ*` over `[0, T/2]` and `[T/2, T]`.
    pub admissibility_halves: [f64; 2],
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicAverageReport {
    pub paths: Vec<PathRecord>,
    /// Mean over non-divergent paths.
    pub mean: f64,
    /// Sample standard deviation over √(non-divergent paths).
    pub standard_error: f64,
    pub late_mean: f64,
    pub late_standard_error: f64,
    pub divergent: usize,
    /// `|ratio − 1|` of the second to first half-window admissibility
    /// averages, pooled over non-divergent paths.
    pub admissibility_drift: f64,
}

fn simulate_path<C: MarkovControl + ?Sized>(
    control: &C,
    model: &HamiltonianModel,
    potential: &PotentialSpec,
    params: &SimParams,
    path: usize,
) -> PathRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(path as u64);
    let dim = control.dim();
    let dt = params.timestep;
    let sigma = (2.0 * dt).sqrt();
    let bound = 3.0 * control.domain_radius();
    let (n, burn, mid) = params.steps();
    let mut x = params.x0;
    if dim == 1 {
        x[1] = 0.0;
    }
    let mut sum = 0.0;
    let mut late = 0.0;
    let mut adm_first = 0.0;
    let mut adm_second = 0.0;
    for k in 0..n {
        let xi = control.eval(&x);
        let cost = running_cost(model, potential, &x, &xi);
        let adm = norm(&xi).powf(model.gamma_star) * dt;
        if k >= burn {
            sum += cost * dt;
        }
        if k >= mid {
            late += cost * dt;
            adm_second += adm;
        } else {
            adm_first += adm;
        }
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[j] += -xi[j] * dt + sigma * z;
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > bound) {
            return PathRecord {
                path,
                average: f64::NAN,
                late_average: f64::NAN,
                admissibility_integral: f64::INFINITY,
                admissibility_halves: [f64::NAN; 2],
                divergent: true,
            };
        }
    }
    let first_len = mid as f64 * dt;
    let second_len = (n - mid) as f64 * dt;
    PathRecord {
        path,
        average: sum / ((n - burn) as f64 * dt),
        late_average: late / second_len,
        admissibility_integral: adm_first + adm_second,
        admissibility_halves: [adm_first / first_len, adm_second / second_len],
        divergent: false,
    }
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn simulate_average<C: MarkovControl + ?Sized>(
    control: &C,
    model: &HamiltonianModel,
    potential: &PotentialSpec,
    params: &SimParams,
) -> Result<ErgodicAverageReport> {
    params.validate()?;
    let paths: Vec<PathRecord> =
        (0..params.n_paths).into_par_iter().map(|p| simulate_path(control, model, potential, params, p)).collect();
    let ok = || paths.iter().filter(|p| !p.divergent);
    let (mean, standard_error) = mean_and_se(ok().map(|p| p.average));
    let (late_mean, late_standard_error) = mean_and_se(ok().map(|p| p.late_average));
    let divergent = paths.iter().filter(|p| p.divergent).count();
    let first: f64 = ok().map(|p| p.admissibility_halves[0]).sum();
    let second: f64 = ok().map(|p| p.admissibility_halves[1]).sum();
    let admissibility_drift = if first > 0.0 { (second / first - 1.0).abs() } else { 0.0 };
    Ok(ErgodicAverageReport { paths, mean, standard_error, late_mean, late_standard_error, divergent, admissibility_drift })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwiseCheck {
    pub competitor: String,
    /// Paths on which the reference late average exceeds the competitor's by
    /// more than the slack.
    pub violations: usize,
    pub slack: f64,
    /// Largest `reference − competitor` late-average difference.
    pub max_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reports: Vec<(String, ErgodicAverageReport)>,
    /// Names ordered by increasing mean.
    pub ranking: Vec<String>,
    /// Pathwise comparison of the first control against each other one.
    pub pathwise: Vec<PathwiseCheck>,
    pub reference_ranked_first: bool,
    pub pathwise_ok: bool,
}

/// Simulates every control with common random numbers; the first entry is the
/// reference (the candidate optimum).
pub fn compare_controls(
    controls: &[(&str, &dyn MarkovControl)],
    model: &HamiltonianModel,
    potential: &PotentialSpec,
    params: &SimParams,
) -> Result<ComparisonReport> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("no controls to compare".into()));
    }
    let mut reports = Vec::with_capacity(controls.len());
    for (name, c) in controls {
        reports.push((name.to_string(), simulate_average(*c, model, potential, params)?));
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].1.mean.total_cmp(&reports[b].1.mean).then(a.cmp(&b)));
    let ranking = order.iter().map(|&i| reports[i].0.clone()).collect();

    let reference = &reports[0].1;
    let mut pathwise = Vec::new();
    for (name, other) in reports.iter().skip(1) {
        let slack = 5.0 * (reference.late_standard_error.powi(2) + other.late_standard_error.powi(2)).sqrt();
        let mut violations = 0;
        let mut max_excess = f64::NEG_INFINITY;
        for (a, b) in reference.paths.iter().zip(&other.paths) {
            if a.divergent || b.divergent {
                continue;
            }
            let excess = a.late_average - b.late_average;
            max_excess = max_excess.max(excess);
            if excess > slack {
                violations += 1;
            }
        }
        pathwise.push(PathwiseCheck { competitor: name.clone(), violations, slack, max_excess });
    }
    let reference_ranked_first = order[0] == 0;
    let pathwise_ok = pathwise.iter().all(|p| p.violations == 0);
    Ok(ComparisonReport { reports, ranking, pathwise, reference_ranked_first, pathwise_ok })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> FnControl<impl Fn(&Vector) -> Vector + Sync> {
        FnControl { f: |x: &Vector| [x[0], 0.0], dim: 1, radius: 6.0 }
    }

    fn short() -> SimParams {
        SimParams { horizon: 200.0, timestep: 2e-3, n_paths: 8, seed: 7, x0: [0.0; 2], burn_in: 5.0 }
    }

    #[test]
    fn ornstein_uhlenbeck_average() {
        let m = HamiltonianModel::pure_power(2.0).unwrap();
        let f = PotentialSpec::QuadraticPower { gamma: 2.0 };
        let r = simulate_average(&ou(), &m, &f, &short()).unwrap();
        assert_eq!(r.divergent, 0);
        assert!((r.mean - 2.0).abs() < 4.0 * r.standard_error + 0.01, "mean {} se {}", r.mean, r.standard_error);
    }

    #[test]
    fn reports_are_bitwise_reproducible() {
        let m = HamiltonianModel::pure_power(1.5).unwrap();
        let f = PotentialSpec::QuadraticPower { gamma: 1.5 };
        let a = simulate_average(&ou(), &m, &f, &short()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_average(&ou(), &m, &f, &short()).unwrap());
        assert_eq!(a, b);
        let c = ou();
        let d = ou();
        let cmp = compare_controls(&[("a", &c), ("b", &d)], &m, &f, &short()).unwrap();
        assert_eq!(cmp.reports[0].1, cmp.reports[1].1);
    }

    #[test]
    fn single_control_comparison_matches_simulation() {
        let m = HamiltonianModel::pure_power(2.0).unwrap();
        let f = PotentialSpec::QuadraticPower { gamma: 2.0 };
        let c = ou();
        let cmp = compare_controls(&[("ou", &c)], &m, &f, &short()).unwrap();
        assert_eq!(cmp.reports[0].1, simulate_average(&c, &m, &f, &short()).unwrap());
        assert!(cmp.pathwise.is_empty() && cmp.reference_ranked_first);
    }

    #[test]
    fn escaping_paths_are_flagged() {
        let m = HamiltonianModel::pure_power(2.0).unwrap();
        let f = PotentialSpec::QuadraticPower { gamma: 2.0 };
        let push = FnControl { f: |_: &Vector| [-5.0, 0.0], dim: 1, radius: 1.0 };
        let r = simulate_average(&push, &m, &f, &short()).unwrap();
        assert_eq!(r.divergent, 8);
    }

    #[test]
    fn grid_control_clamps_outside() {
        let g = Grid::new(1, 2.0, 0.5).unwrap();
        let field = VectorField::from_fn(&g, |x| [x[0], 0.0]);
        let c = GridControl::new(&g, &field).unwrap();
        assert_eq!(c.eval(&[0.25, 0.0])[0], 0.25);
        // Boundary takes the nearest interior value 1.5, and beyond that is clamped.
        assert_eq!(c.eval(&[10.0, 0.0])[0], 1.5);
        assert_eq!(c.scaled(2.0).eval(&[0.25, 0.0])[0], 0.5);
    }

    #[test]
    fn rejects_invalid_params() {
        let bad = SimParams { horizon: 0.01, ..short() };
        assert!(bad.validate().is_err());
        let bad = SimParams { burn_in: 300.0, ..short() };
        assert!(bad.validate().is_err());
        let bad = SimParams { n_paths: 0, ..short() };
        assert!(bad.validate().is_err());
    }
}
