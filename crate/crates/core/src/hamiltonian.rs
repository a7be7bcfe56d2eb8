//! Hamiltonians, their Lagrangians, the feedback control map and running costs.
//!
//! Two families are supported:
//!
//! * pure power: `H(p) = |p|^γ/γ`, `L(ξ) = |ξ|^γ*/γ*`;
//! * drift power: `H(x,p) = b(x)·p + |p|^γ/γ`, `L(x,ξ) = |ξ − b(x)|^γ*/γ*`,
//!
//! with `γ* = γ/(γ−1)`. Both Lagrangians are closed-form conjugates, so the
//! Fenchel gap `H + L − ξ·p` is exact up to rounding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, norm, Grid, Vector, MAX_DIM};

pub const DEFAULT_EPS_GRAD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianKind {
    PurePower,
    DriftPower,
}

/// Drift field `b(x)` of the drift-power family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftSpec {
    Constant { b: Vector },
    /// `b_k(x) = amplitude_k · tanh(x_k / scale)`.
    Tanh { amplitude: Vector, scale: f64 },
    /// `b(x) = M x`. Unbounded, so model construction rejects it.
    Linear { matrix: [[f64; MAX_DIM]; MAX_DIM] },
}

impl DriftSpec {
    pub fn value(&self, x: &Vector) -> Vector {
        match self {
            DriftSpec::Constant { b } => *b,
            DriftSpec::Tanh { amplitude, scale } => {
                [amplitude[0] * (x[0] / scale).tanh(), amplitude[1] * (x[1] / scale).tanh()]
            }
            DriftSpec::Linear { matrix } => [
                matrix[0][0] * x[0] + matrix[0][1] * x[1],
                matrix[1][0] * x[0] + matrix[1][1] * x[1],
            ],
        }
    }

    /// Jacobian `Db(x)`, row `i` holding `∂b_i/∂x_j`.
    pub fn jacobian(&self, x: &Vector) -> [[f64; MAX_DIM]; MAX_DIM] {
        match self {
            DriftSpec::Constant { .. } => [[0.0; MAX_DIM]; MAX_DIM],
            DriftSpec::Tanh { amplitude, scale } => {
                let d = |k: usize| {
                    let c = (x[k] / scale).cosh();
                    amplitude[k] / (scale * c * c)
                };
                [[d(0), 0.0], [0.0, d(1)]]
            }
            DriftSpec::Linear { matrix } => *matrix,
        }
    }

    /// Global bound on `|b|`, `None` when the drift is unbounded.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            DriftSpec::Constant { b } => Some(norm(b)),
            DriftSpec::Tanh { amplitude, .. } => Some(norm(amplitude)),
            DriftSpec::Linear { matrix } => {
                if matrix.iter().flatten().all(|&m| m == 0.0) {
                    Some(0.0)
                } else {
                    None
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &Vector| v.iter().all(|c| c.is_finite());
        match self {
            DriftSpec::Constant { b } if !finite(b) => {
                Err(Error::InvalidModel("drift vector must be finite".into()))
            }
            DriftSpec::Tanh { amplitude, scale } => {
                if !finite(amplitude) {
                    Err(Error::InvalidModel("drift amplitude must be finite".into()))
                } else if !(scale.is_finite() && *scale > 0.0) {
                    Err(Error::InvalidModel(format!("drift scale must be positive, got {scale}")))
                } else {
                    Ok(())
                }
            }
            DriftSpec::Linear { .. } if self.sup_norm().is_none() => Err(Error::InvalidModel(
                "linear drift is unbounded; the drift-power family needs a bounded b(x)".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianModel {
    pub kind: HamiltonianKind,
    pub gamma: f64,
    pub gamma_star: f64,
    pub drift: Option<DriftSpec>,
}

/// Fitted constants of the growth sandwiches for `H`, `D_pH` and `D_ξL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    /// Smallest `h₀` with `|p|^γ/h₀ − h₀ ≤ H ≤ h₀(|p|^γ + 1)` on the sample.
    pub h0: f64,
    /// Whether that `h₀` also satisfies `|D_xH| ≤ (1 + |p|^γ)/h₀`.
    pub h0_consistent: bool,
    /// Largest `h₁` with `h₁|p|^{γ−1} − 1/h₁ ≤ |D_pH| ≤ (|p|^{γ−1} + 1)/h₁`.
    pub h1: f64,
    /// Largest `l₁` with the analogous sandwich for `|D_ξL|` in `|ξ|^{γ*−1}`.
    pub l1: f64,
}

impl HamiltonianModel {
    pub fn pure_power(gamma: f64) -> Result<Self> {
        let gamma_star = conjugate_exponent(gamma)?;
        Ok(Self { kind: HamiltonianKind::PurePower, gamma, gamma_star, drift: None })
    }

    pub fn drift_power(gamma: f64, drift: DriftSpec) -> Result<Self> {
        let gamma_star = conjugate_exponent(gamma)?;
        drift.validate()?;
        Ok(Self { kind: HamiltonianKind::DriftPower, gamma, gamma_star, drift: Some(drift) })
    }

    pub fn validate(&self) -> Result<()> {
        let gamma_star = conjugate_exponent(self.gamma)?;
        if (gamma_star - self.gamma_star).abs() > 1e-12 * gamma_star {
            return Err(Error::InvalidModel(format!(
                "gamma_star {} is not the conjugate of gamma {}",
                self.gamma_star, self.gamma
            )));
        }
        match (&self.kind, &self.drift) {
            (HamiltonianKind::PurePower, None) => Ok(()),
            (HamiltonianKind::DriftPower, Some(d)) => d.validate(),
            (HamiltonianKind::PurePower, Some(_)) => {
                Err(Error::InvalidModel("pure_power model carries no drift".into()))
            }
            (HamiltonianKind::DriftPower, None) => {
                Err(Error::InvalidModel("drift_power model needs a drift".into()))
            }
        }
    }

    pub fn drift_at(&self, x: &Vector) -> Vector {
        self.drift.as_ref().map_or([0.0; MAX_DIM], |d| d.value(x))
    }

    /// `sup |b|`, zero for the pure-power family.
    pub fn drift_bound(&self) -> f64 {
        self.drift.as_ref().and_then(DriftSpec::sup_norm).unwrap_or(0.0)
    }

    pub fn hamiltonian_value(&self, x: &Vector, p: &Vector) -> f64 {
        dot(&self.drift_at(x), p) + norm(p).powf(self.gamma) / self.gamma
    }

    pub fn lagrangian_value(&self, x: &Vector, xi: &Vector) -> f64 {
        let b = self.drift_at(x);
        let shifted = [xi[0] - b[0], xi[1] - b[1]];
        norm(&shifted).powf(self.gamma_star) / self.gamma_star
    }

    /// `D_pH(x, p)`; the power part is taken as zero when `|p| < eps_grad`.
    pub fn optimal_control(&self, x: &Vector, p: &Vector, eps_grad: f64) -> Vector {
        let b = self.drift_at(x);
        let r = norm(p);
        if r < eps_grad {
            return b;
        }
        let s = r.powf(self.gamma - 2.0);
        [b[0] + s * p[0], b[1] + s * p[1]]
    }

    /// `H(x,p) + L(x,ξ) − ξ·p`, nonnegative by Young's inequality.
    pub fn duality_gap(&self, x: &Vector, xi: &Vector, p: &Vector) -> f64 {
        self.hamiltonian_value(x, p) + self.lagrangian_value(x, xi) - dot(xi, p)
    }

    /// `D_ξL(x, ξ) = |ξ − b|^{γ*−2}(ξ − b)`.
    pub fn lagrangian_gradient(&self, x: &Vector, xi: &Vector) -> Vector {
        let b = self.drift_at(x);
        let w = [xi[0] - b[0], xi[1] - b[1]];
        let r = norm(&w);
        if r == 0.0 {
            return [0.0; MAX_DIM];
        }
        let s = r.powf(self.gamma_star - 2.0);
        [s * w[0], s * w[1]]
    }

    /// `D_xH(x, p) = Db(x)ᵀ p`.
    pub fn hamiltonian_x_gradient(&self, x: &Vector, p: &Vector) -> Vector {
        match &self.drift {
            None => [0.0; MAX_DIM],
            Some(d) => {
                let j = d.jacobian(x);
                [j[0][0] * p[0] + j[1][0] * p[1], j[0][1] * p[0] + j[1][1] * p[1]]
            }
        }
    }

    /// Grid Legendre transform: `max_j (ξ_j·p − L(x, ξ_j))` over a sample.
    pub fn legendre_numeric(&self, x: &Vector, p: &Vector, xi_samples: &[Vector]) -> f64 {
        xi_samples
            .iter()
            .map(|xi| dot(xi, p) - self.lagrangian_value(x, xi))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Monotone upwind Hamiltonian and its maximizing control.
    ///
    /// Maximizes `J(ξ) = Σ_k [ξ_k⁺ D⁻_k u − ξ_k⁻ D⁺_k u] − L(x, ξ)` over `ξ ∈ R^d`,
    /// where `ξ⁺ = max(ξ, 0)` and `ξ⁻ = max(−ξ, 0)`. `J` is concave on each
    /// closed orthant, so the maximum is attained at the unconstrained maximizer
    /// of some face (a set of free coordinates with a fixed sign pattern, the
    /// rest pinned to zero). Every such candidate is evaluated with the true `J`
    /// and the best is kept, which needs no feasibility test.
    pub fn upwind_hamiltonian(
        &self,
        x: &Vector,
        minus: &Vector,
        plus: &Vector,
        dim: usize,
        eps_grad: f64,
    ) -> (f64, Vector) {
        let b = self.drift_at(x);
        let objective = |xi: &Vector| {
            crate::grid::upwind_product(xi, minus, plus) - self.lagrangian_value(x, xi)
        };
        let mut best_xi = [0.0; MAX_DIM];
        let mut best = objective(&best_xi);

        // Each coordinate is either pinned (0), free with slope D⁻ (1) or free
        // with slope D⁺ (2): 3^d faces.
        let faces = 3usize.pow(dim as u32);
        for code in 1..faces {
            let mut q = [0.0; MAX_DIM];
            let mut free = [false; MAX_DIM];
            let mut c = code;
            for k in 0..dim {
                match c % 3 {
                    1 => {
                        free[k] = true;
                        q[k] = minus[k];
                    }
                    2 => {
                        free[k] = true;
                        q[k] = plus[k];
                    }
                    _ => {}
                }
                c /= 3;
            }
            let pinned_drift: f64 =
                (0..dim).filter(|&k| !free[k]).map(|k| b[k] * b[k]).sum::<f64>().sqrt();
            let m = norm(&q);
            let mut xi = [0.0; MAX_DIM];
            for k in 0..dim {
                if free[k] {
                    xi[k] = b[k];
                }
            }
            if m >= eps_grad {
                let t = radial_root(m, pinned_drift, self.gamma, self.gamma_star);
                for k in 0..dim {
                    if free[k] {
                        xi[k] += t * q[k] / m;
                    }
                }
            }
            let value = objective(&xi);
            if value > best {
                best = value;
                best_xi = xi;
            }
        }
        (best, best_xi)
    }

    /// Fits the growth constants on sampled `(x, p, ξ)` triples.
    pub fn fit_growth_constants(&self, samples: &[(Vector, Vector, Vector)]) -> GrowthConstants {
        let g = self.gamma;
        let gs = self.gamma_star;
        let mut h0: f64 = 0.0;
        let mut h1 = f64::INFINITY;
        let mut l1 = f64::INFINITY;
        for (x, p, xi) in samples {
            let a = norm(p).powf(g);
            let hv = self.hamiltonian_value(x, p);
            // Lower sandwich a/h − h ≤ H holds for h ≥ positive root of h² + H h − a.
            h0 = h0.max((-hv + (hv * hv + 4.0 * a).sqrt()) / 2.0);
            h0 = h0.max(hv / (a + 1.0));

            let dp = norm(&self.optimal_control(x, p, 0.0));
            h1 = h1.min(largest_lower_constant(norm(p).powf(g - 1.0), dp));

            let dl = norm(&self.lagrangian_gradient(x, xi));
            l1 = l1.min(largest_lower_constant(norm(xi).powf(gs - 1.0), dl));
        }
        let h0_consistent = samples.iter().all(|(x, p, _)| {
            norm(&self.hamiltonian_x_gradient(x, p)) * h0 <= 1.0 + norm(p).powf(g) + 1e-12
        });
        GrowthConstants { h0, h0_consistent, h1, l1 }
    }
}

/// Largest `k` with `k A − 1/k ≤ B ≤ (A + 1)/k`.
fn largest_lower_constant(a: f64, b: f64) -> f64 {
    let upper = if b > 0.0 { (a + 1.0) / b } else { f64::INFINITY };
    let lower = if a > 0.0 { (b + (b * b + 4.0 * a).sqrt()) / (2.0 * a) } else { f64::INFINITY };
    upper.min(lower)
}

fn conjugate_exponent(gamma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::InvalidModel(format!("gamma must exceed 1, got {gamma}")));
    }
    Ok(gamma / (gamma - 1.0))
}

/// Solves `t (t² + c²)^{(γ*−2)/2} = m` for `t ≥ 0`.
///
/// With `c = 0` this is `t = m^{γ−1}`. Otherwise the left side is strictly
/// increasing and the root is bracketed and refined by safeguarded Newton.
fn radial_root(m: f64, c: f64, gamma: f64, gamma_star: f64) -> f64 {
    if c == 0.0 {
        return m.powf(gamma - 1.0);
    }
    let e = (gamma_star - 2.0) / 2.0;
    let g = |t: f64| t * (t * t + c * c).powf(e);
    let dg = |t: f64| {
        let s = t * t + c * c;
        s.powf(e - 1.0) * ((gamma_star - 1.0) * t * t + c * c)
    };
    let mut lo = 0.0;
    let mut hi = m.powf(gamma - 1.0).max(1.0);
    while g(hi) < m {
        lo = hi;
        hi *= 2.0;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = g(t) - m;
        if r == 0.0 {
            return t;
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - r / dg(t);
        t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    t
}

/// Sampled potential with centered-difference gradient on its own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPotential {
    grid: Grid,
    values: Vec<f64>,
    gradient: Vec<Vector>,
}

impl TabulatedPotential {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidPotential(format!(
                "tabulated potential has {} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential("tabulated potential has non-finite values".into()));
        }
        let h = grid.spacing();
        let gradient = (0..grid.node_count())
            .map(|node| {
                let mut g = [0.0; MAX_DIM];
                for (axis, gk) in g.iter_mut().enumerate().take(grid.dim()) {
                    let l = grid.neighbor(node, axis, false);
                    let r = grid.neighbor(node, axis, true);
                    *gk = match (l, r) {
                        (Some(l), Some(r)) => (values[r] - values[l]) / (2.0 * h),
                        (None, Some(r)) => (values[r] - values[node]) / h,
                        (Some(l), None) => (values[node] - values[l]) / h,
                        (None, None) => 0.0,
                    };
                }
                g
            })
            .collect();
        Ok(Self { grid, values, gradient })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The state cost `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    /// `f = 1 + |x|^γ/γ`.
    QuadraticPower { gamma: f64 },
    /// `f = 1 + |x|^β`.
    PowerBeta { beta: f64 },
    /// `f ≡ value`.
    Constant { value: f64 },
    /// `f = 1 + e^{|x|}`.
    Exponential,
    /// `f = |x|² + sin(|x|⁴) + 2`.
    QuarticOscillation,
    Tabulated(Arc<TabulatedPotential>),
}

impl PotentialSpec {
    pub fn tabulated(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Ok(PotentialSpec::Tabulated(Arc::new(TabulatedPotential::new(grid, values)?)))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::QuadraticPower { gamma } if !(gamma.is_finite() && *gamma > 1.0) => Err(
                Error::InvalidPotential(format!("quadratic_power gamma must exceed 1, got {gamma}")),
            ),
            PotentialSpec::PowerBeta { beta } if !(beta.is_finite() && *beta >= 0.0) => Err(
                Error::InvalidPotential(format!("power_beta exponent must be nonnegative, got {beta}")),
            ),
            PotentialSpec::Constant { value } if !(value.is_finite() && *value >= 1.0) => Err(
                Error::InvalidPotential(format!("constant potential must be at least 1, got {value}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        let r = norm(x);
        match self {
            PotentialSpec::QuadraticPower { gamma } => 1.0 + r.powf(*gamma) / gamma,
            PotentialSpec::PowerBeta { beta } => 1.0 + r.powf(*beta),
            PotentialSpec::Constant { value } => *value,
            PotentialSpec::Exponential => 1.0 + r.exp(),
            PotentialSpec::QuarticOscillation => r * r + (r * r * r * r).sin() + 2.0,
            PotentialSpec::Tabulated(t) => t.grid.interpolate_scalar(&t.values, x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let r = norm(x);
        let radial = |s: f64| [s * x[0], s * x[1]];
        match self {
            PotentialSpec::QuadraticPower { gamma } => {
                if r == 0.0 {
                    [0.0; MAX_DIM]
                } else {
                    radial(r.powf(gamma - 2.0))
                }
            }
            PotentialSpec::PowerBeta { beta } => {
                if r == 0.0 || *beta == 0.0 {
                    [0.0; MAX_DIM]
                } else {
                    radial(beta * r.powf(beta - 2.0))
                }
            }
            PotentialSpec::Constant { .. } => [0.0; MAX_DIM],
            PotentialSpec::Exponential => {
                if r == 0.0 {
                    [0.0; MAX_DIM]
                } else {
                    radial(r.exp() / r)
                }
            }
            PotentialSpec::QuarticOscillation => {
                radial(2.0 + 4.0 * r * r * (r * r * r * r).cos())
            }
            PotentialSpec::Tabulated(t) => t.grid.interpolate_vector(&t.gradient, x),
        }
    }

    /// Returns a warning when `f` is not visibly coercive on the grid: the
    /// smallest boundary value must exceed the largest value on the inner
    /// quarter-radius ball.
    pub fn coercivity_warning(&self, grid: &Grid) -> Option<String> {
        let inner_radius = grid.radius() / 4.0;
        let mut inner_max = f64::NEG_INFINITY;
        let mut boundary_min = f64::INFINITY;
        for node in 0..grid.node_count() {
            let x = grid.coords(node);
            let f = self.value(&x);
            if !grid.is_interior(node) {
                boundary_min = boundary_min.min(f);
            } else if norm(&x) <= inner_radius {
                inner_max = inner_max.max(f);
            }
        }
        (boundary_min <= inner_max).then(|| {
            format!(
                "potential is not coercive on the grid: boundary minimum {boundary_min} <= inner maximum {inner_max}"
            )
        })
    }
}

/// `F(x, ξ) = f(x) + L(x, ξ)`.
pub fn running_cost(model: &HamiltonianModel, potential: &PotentialSpec, x: &Vector, xi: &Vector) -> f64 {
    potential.value(x) + model.lagrangian_value(x, xi)
}
