//! Scenario orchestration, declared checks and the JSON report.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ergodic_core::eigensolver::{domain_exhaustion, solve_ergodic_hjb, ExhaustionEntry};
use ergodic_core::estimates::{
    check_drift_absorption, check_growth_condition, check_power_law_bounds, gradient_bound_check,
    lower_bound_check, refinement_check, superquadratic_check, EstimateReport,
};
use ergodic_core::grid::norm;
use ergodic_core::hamiltonian::HamiltonianKind;
use ergodic_core::io;
use ergodic_core::lp::{
    assemble_lp, feasibility_violation, minimizer_control_distance, random_feasible_measure, solve_lp,
    verification_gap, LpCertificate,
};
use ergodic_core::measure::{average_cost, stationary_density};
use ergodic_core::sde::{compare_controls, DeadZoneControl, ErgodicAverageReport, GridControl, MarkovControl, PathwiseCheck};
use ergodic_core::{
    BoundaryMode, ErgodicSolution, Error, Grid, PotentialSpec, VectorField,
};
use serde::{Deserialize, Serialize};

use crate::config::{Format, Instance, RunConfig, Scenario};

/// `|μ_u(F) − λ|` tolerance for the Fokker–Planck route.
pub const FOKKER_PLANCK_TOLERANCE: f64 = 0.05;
/// L¹ tolerance against the closed-form density of the manufactured instance.
pub const DENSITY_L1_TOLERANCE: f64 = 0.05;
pub const LP_LAMBDA_TOLERANCE: f64 = 0.05;
pub const LP_PRIMAL_TOLERANCE: f64 = 1e-9;
/// Relative tolerance of the verification identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;
pub const POSITIVITY_SLACK: f64 = 1e-8;
pub const ADMISSIBILITY_DRIFT: f64 = 0.1;
/// Standard errors allowed between a Monte Carlo mean and its oracle.
pub const MC_SIGMAS: f64 = 3.0;
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    CheckFailure,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::CheckFailure => 1,
            Status::NumericalFailure => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Informational checks are reported but do not affect the status.
    pub required: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_sup: f64,
    pub boundary_mode: BoundaryMode,
    pub lambda_history: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FokkerPlanckSummary {
    pub average_cost: f64,
    pub lambda: f64,
    pub mass: f64,
    /// L¹ distance to `exp(−|x|^γ/γ)` normalized, on the manufactured instance.
    pub manufactured_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSummary {
    pub lambda_bar: f64,
    /// Policy-iteration eigenvalue on the LP grid.
    pub lambda_pi: f64,
    pub iterations: usize,
    pub certificate: LpCertificate,
    pub minimizer_distance: f64,
    pub minimizer_threshold: f64,
    /// Both sides of the verification identity at the LP optimum.
    pub optimum_identity: [f64; 2],
    pub random_measures: usize,
    pub min_random_gap: f64,
    pub max_identity_error: f64,
    pub max_random_feasibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary {
    pub name: String,
    pub mean: f64,
    pub standard_error: f64,
    pub late_mean: f64,
    pub divergent: usize,
    pub admissibility_drift: f64,
    /// Long-run cost of the same control from the stationary density.
    pub fokker_planck: f64,
}

impl ControlSummary {
    fn new(name: &str, r: &ErgodicAverageReport, fokker_planck: f64) -> Self {
        Self {
            name: name.to_string(),
            mean: r.mean,
            standard_error: r.standard_error,
            late_mean: r.late_mean,
            divergent: r.divergent,
            admissibility_drift: r.admissibility_drift,
            fokker_planck,
        }
    }
}

/// The four routes to the optimal long-run cost side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationTable {
    pub lambda_pi: f64,
    pub lambda_bar_lp: f64,
    pub lambda_pi_lp_grid: f64,
    pub fokker_planck_cost: f64,
    pub simulation_mean: f64,
    pub simulation_standard_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub solve: Option<SolveSummary>,
    pub fokker_planck: Option<FokkerPlanckSummary>,
    pub exhaustion: Option<Vec<ExhaustionEntry>>,
    pub lp: Option<LpSummary>,
    pub simulation: Option<ControlSummary>,
    pub comparison: Option<Vec<ControlSummary>>,
    pub ranking: Option<Vec<String>>,
    pub pathwise: Option<Vec<PathwiseCheck>>,
    pub estimates: Vec<EstimateReport>,
    pub verification_table: Option<VerificationTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub config: RunConfig,
    pub results: Results,
    pub checks: Vec<CheckOutcome>,
    pub errors: Vec<String>,
    pub status: Status,
    /// Wall-clock milliseconds per stage; the only non-reproducible field.
    pub timing_ms: BTreeMap<String, f64>,
}

impl RunReport {
    /// The report with timings cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { timing_ms: BTreeMap::new(), ..self.clone() }
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Runner<'a> {
    config: &'a RunConfig,
    inst: &'a Instance,
    out_dir: Option<&'a Path>,
    report: RunReport,
    solution: Option<ErgodicSolution>,
}

type Step<T> = Result<T, Error>;

impl<'a> Runner<'a> {
    fn check(&mut self, name: &str, passed: bool, value: f64, threshold: f64) {
        self.push_check(name, passed, true, value, threshold);
    }

    fn push_check(&mut self, name: &str, passed: bool, required: bool, value: f64, threshold: f64) {
        self.report.checks.push(CheckOutcome { name: name.to_string(), passed, required, value, threshold });
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let t = Instant::now();
        let out = f(self);
        self.report.timing_ms.insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn csv(&self, name: &str, write: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Step<()>) -> Step<()> {
        match self.out_dir {
            Some(dir) if self.config.output.wants(Format::Csv) => io::write_file(&dir.join(name), write),
            _ => Ok(()),
        }
    }

    fn solution(&mut self) -> Step<&ErgodicSolution> {
        if self.solution.is_none() {
            let s = self.timed("solve", |r| {
                solve_ergodic_hjb(&r.inst.grid, &r.inst.model, &r.inst.potential, &r.config.solver)
            })?;
            self.report.results.solve = Some(SolveSummary {
                lambda: s.lambda,
                iterations: s.iterations,
                converged: s.converged,
                residual_sup: s.residual_sup,
                boundary_mode: s.boundary_mode,
                lambda_history: s.lambda_history.clone(),
                warnings: s.warnings.clone(),
            });
            self.check("solve.converged", s.converged, s.iterations as f64, self.config.solver.max_policy_iters as f64);
            self.csv("fields.csv", |o| io::write_solution(o, &s))?;
            self.solution = Some(s);
        }
        Ok(self.solution.as_ref().expect("set above"))
    }

    fn is_manufactured(&self) -> bool {
        self.inst.model.kind == HamiltonianKind::PurePower
            && matches!(self.inst.potential, PotentialSpec::QuadraticPower { gamma } if gamma == self.inst.model.gamma)
    }

    fn fokker_planck(&mut self) -> Step<f64> {
        let s = self.solution()?.clone();
        let density = self.timed("fokker_planck", |_| stationary_density(&s.grid, &s.xi_u))?;
        let cost = average_cost(&density, &s.xi_u, &self.inst.model, &self.inst.potential);
        let manufactured_l1 = self.is_manufactured().then(|| {
            let gamma = self.inst.model.gamma;
            let weight = |x: &[f64; 2]| (-norm(x).powf(gamma) / gamma).exp();
            let z: f64 = (0..s.grid.node_count()).map(|n| weight(&s.grid.coords(n))).sum::<f64>() * s.grid.cell_volume();
            density.l1_distance(|x| weight(x) / z)
        });
        let diff = (cost - s.lambda).abs();
        self.check("fokker_planck.cost_matches_lambda", diff <= FOKKER_PLANCK_TOLERANCE, diff, FOKKER_PLANCK_TOLERANCE);
        if let Some(l1) = manufactured_l1 {
            self.check("fokker_planck.density_l1", l1 <= DENSITY_L1_TOLERANCE, l1, DENSITY_L1_TOLERANCE);
        }
        self.report.results.fokker_planck =
            Some(FokkerPlanckSummary { average_cost: cost, lambda: s.lambda, mass: density.mass(), manufactured_l1 });
        self.csv("density.csv", |o| io::write_density(o, &density))?;
        Ok(cost)
    }

    fn exhaustion(&mut self) -> Step<()> {
        let ex = &self.config.exhaustion;
        let opts = self.config.solver.with_boundary(ex.boundary_mode);
        let spacing = ex.spacing.unwrap_or(self.config.grid.spacing);
        let entries = self.timed("exhaustion", |r| {
            domain_exhaustion(r.inst.grid.dim(), &r.inst.model, &r.inst.potential, &ex.radii, spacing, &opts)
        })?;
        self.csv("exhaustion.csv", |o| io::write_exhaustion(o, &entries))?;
        let lambdas: Vec<f64> = entries.iter().filter_map(|e| e.lambda).collect();
        let complete = lambdas.len() == entries.len();
        self.check("exhaustion.all_converged", complete && entries.iter().all(|e| e.converged), 0.0, 0.0);
        let rise = lambdas.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        self.check("exhaustion.non_increasing", complete && rise <= MONOTONE_SLACK, rise, MONOTONE_SLACK);
        if lambdas.len() >= 4 {
            let n = lambdas.len();
            let first = (lambdas[1] - lambdas[0]).abs();
            let last = (lambdas[n - 1] - lambdas[n - 2]).abs();
            self.check("exhaustion.differences_shrink", last < first, last, first);
        }
        self.report.results.exhaustion = Some(entries);
        Ok(())
    }

    fn lp(&mut self) -> Step<f64> {
        let inst = self.inst;
        let (model, potential) = (&inst.model, &inst.potential);
        let pi = self.timed("lp_grid_solve", |r| solve_ergodic_hjb(&inst.lp_grid, model, potential, &r.config.solver))?;
        let problem = assemble_lp(&inst.lp_grid, &inst.xi_grid, model, potential)?;
        let sol = self.timed("lp", |_| solve_lp(&problem))?;
        self.csv("measure.csv", |o| io::write_measure(o, &sol.measure))?;

        let xi_spacing = 2.0 * self.config.lp.xi_bound / (self.config.lp.xi_count - 1) as f64;
        let minimizer_threshold = xi_spacing + 2.0 * inst.lp_grid.spacing();
        let minimizer_distance = minimizer_control_distance(&sol.measure, &pi);
        let (lhs, rhs) = verification_gap(&sol.measure, &pi, model, potential);

        let count = self.config.lp.random_measures;
        let mut min_gap = f64::INFINITY;
        let mut max_err = relative_error(lhs, rhs);
        let mut max_feas = 0.0_f64;
        let seed = self.config.seed;
        let gaps = self.timed("random_measures", |_| -> Step<Vec<(f64, f64, f64)>> {
            (0..count as u64)
                .map(|i| {
                    let mu = random_feasible_measure(&inst.lp_grid, &inst.xi_grid, seed.wrapping_add(i))?;
                    let (l, r) = verification_gap(&mu, &pi, model, potential);
                    Ok((l, r, feasibility_violation(&mu, &problem)))
                })
                .collect()
        })?;
        for (l, r, f) in gaps {
            min_gap = min_gap.min(l);
            max_err = max_err.max(relative_error(l, r));
            max_feas = max_feas.max(f);
        }

        let c = &sol.certificate;
        let diff = (sol.lambda_bar - pi.lambda).abs();
        self.check("lp.primal_feasibility", c.primal_residual <= LP_PRIMAL_TOLERANCE, c.primal_residual, LP_PRIMAL_TOLERANCE);
        self.check("lp.lambda_matches_policy_iteration", diff <= LP_LAMBDA_TOLERANCE, diff, LP_LAMBDA_TOLERANCE);
        self.check(
            "lp.minimizer_matches_feedback",
            minimizer_distance <= minimizer_threshold,
            minimizer_distance,
            minimizer_threshold,
        );
        self.check("lp.verification_identity", max_err <= IDENTITY_TOLERANCE, max_err, IDENTITY_TOLERANCE);
        if count > 0 {
            self.check("lp.random_measures_above_lambda", min_gap >= -POSITIVITY_SLACK, min_gap, -POSITIVITY_SLACK);
        }
        self.report.results.lp = Some(LpSummary {
            lambda_bar: sol.lambda_bar,
            lambda_pi: pi.lambda,
            iterations: sol.iterations,
            certificate: sol.certificate.clone(),
            minimizer_distance,
            minimizer_threshold,
            optimum_identity: [lhs, rhs],
            random_measures: count,
            min_random_gap: if count > 0 { min_gap } else { f64::NAN },
            max_identity_error: max_err,
            max_random_feasibility: max_feas,
        });
        Ok(sol.lambda_bar)
    }

    fn simulation_checks(&mut self, prefix: &str, s: &ControlSummary, target: f64) {
        let diff = (s.mean - target).abs();
        self.check(&format!("{prefix}.mean_matches_lambda"), diff <= MC_SIGMAS * s.standard_error, diff, MC_SIGMAS * s.standard_error);
        self.check(&format!("{prefix}.no_divergent_paths"), s.divergent == 0, s.divergent as f64, 0.0);
        self.check(
            &format!("{prefix}.admissibility"),
            s.admissibility_drift <= ADMISSIBILITY_DRIFT,
            s.admissibility_drift,
            ADMISSIBILITY_DRIFT,
        );
    }

    fn simulate(&mut self) -> Step<ControlSummary> {
        let s = self.solution()?.clone();
        let control = GridControl::new(&s.grid, &s.xi_u)?;
        let params = self.inst.sim;
        let (model, potential) = (&self.inst.model, &self.inst.potential);
        let report = self.timed("simulate", |_| ergodic_core::sde::simulate_average(&control, model, potential, &params))?;
        self.csv("paths.csv", |o| io::write_paths(o, &[("xi_u", &report)]))?;
        let summary = ControlSummary::new("xi_u", &report, s.lambda);
        self.simulation_checks("simulate", &summary, s.lambda);
        self.report.results.simulation = Some(summary.clone());
        Ok(summary)
    }

    fn compare(&mut self) -> Step<ControlSummary> {
        let s = self.solution()?.clone();
        let grid = &s.grid;
        let base = GridControl::new(grid, &s.xi_u)?;
        let sde = &self.config.sde;
        let scaled: Vec<(String, GridControl, VectorField)> = sde
            .competitor_scales
            .iter()
            .map(|&k| (format!("scaled_{k}"), base.scaled(k), s.xi_u.scaled(k)))
            .collect();
        let dead = sde.dead_zone.map(|zone| {
            let values = (0..grid.node_count())
                .map(|n| if norm(&grid.coords(n)) <= zone { [0.0; 2] } else { s.xi_u.values[n] })
                .collect();
            (format!("dead_zone_{zone}"), DeadZoneControl { base: base.clone(), zone }, VectorField { values })
        });

        let mut named: Vec<(&str, &dyn MarkovControl)> = vec![("xi_u", &base)];
        let mut fields: Vec<&VectorField> = vec![&s.xi_u];
        for (name, c, f) in &scaled {
            named.push((name, c));
            fields.push(f);
        }
        if let Some((name, c, f)) = &dead {
            named.push((name, c));
            fields.push(f);
        }
        let (model, potential) = (&self.inst.model, &self.inst.potential);
        let params = self.inst.sim;
        let cmp = self.timed("compare", |_| compare_controls(&named, model, potential, &params))?;
        let runs: Vec<(&str, &ErgodicAverageReport)> = cmp.reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
        self.csv("paths.csv", |o| io::write_paths(o, &runs))?;

        let mut summaries = Vec::new();
        for ((name, report), field) in cmp.reports.iter().zip(&fields) {
            let oracle = if std::ptr::eq(*field, &s.xi_u) {
                s.lambda
            } else {
                let d = stationary_density(grid, field)?;
                average_cost(&d, field, model, potential)
            };
            summaries.push(ControlSummary::new(name, report, oracle));
        }
        let reference = summaries[0].clone();
        self.simulation_checks("simulate", &reference, s.lambda);
        for c in &summaries[1..] {
            let diff = (c.mean - c.fokker_planck).abs();
            let band = MC_SIGMAS * c.standard_error;
            self.check(&format!("compare.{}.matches_fokker_planck", c.name), diff <= band, diff, band);
            let excess = c.mean - s.lambda;
            self.check(&format!("compare.{}.above_lambda", c.name), excess > band, excess, band);
            self.check(&format!("compare.{}.no_divergent_paths", c.name), c.divergent == 0, c.divergent as f64, 0.0);
        }
        self.check("compare.reference_ranked_first", cmp.reference_ranked_first, 0.0, 0.0);
        let violations: usize = cmp.pathwise.iter().map(|p| p.violations).sum();
        self.check("compare.pathwise_ordering", cmp.pathwise_ok, violations as f64, 0.0);
        self.report.results.simulation = Some(reference.clone());
        self.report.results.comparison = Some(summaries);
        self.report.results.ranking = Some(cmp.ranking.clone());
        self.report.results.pathwise = Some(cmp.pathwise.clone());
        Ok(reference)
    }

    fn estimates(&mut self) -> Step<()> {
        let inst = self.inst;
        let gamma = inst.model.gamma;
        let growth = check_growth_condition(&inst.potential, &inst.grid, gamma)?;
        self.check("estimates.growth_condition", growth.passed, growth.fitted_constant, f64::NAN);
        let power = check_power_law_bounds(&inst.potential, &inst.grid)?;
        self.push_check("estimates.power_law_bounds", power.passed, false, power.fitted_constant, f64::NAN);
        self.report.results.estimates.extend([growth, power]);

        if inst.model.kind == HamiltonianKind::DriftPower {
            let r = check_drift_absorption(&inst.model, gamma, inst.grid.dim(), inst.grid.extent())?;
            self.check("estimates.drift_absorption", r.passed, r.fitted_constant, f64::NAN);
            self.report.results.estimates.push(r);
        }

        let fine = self.solution()?.clone();
        let g = &inst.grid;
        let coarse_grid = Grid::new(g.dim(), g.radius(), 2.0 * g.spacing())?;
        let coarse = self.timed("coarse_solve", |r| solve_ergodic_hjb(&coarse_grid, &inst.model, &inst.potential, &r.config.solver))?;
        let radii = &self.config.checks.gradient_radii;
        let mut reports = vec![
            refinement_check(
                &gradient_bound_check(&coarse, &inst.potential, radii, gamma)?,
                &gradient_bound_check(&fine, &inst.potential, radii, gamma)?,
            ),
            refinement_check(
                &lower_bound_check(&coarse, &inst.potential, gamma)?,
                &lower_bound_check(&fine, &inst.potential, gamma)?,
            ),
        ];
        if gamma >= 2.0 {
            reports.push(refinement_check(
                &superquadratic_check(&coarse, &inst.potential, gamma)?,
                &superquadratic_check(&fine, &inst.potential, gamma)?,
            ));
        }
        for r in reports {
            self.check(&format!("estimates.{}", r.name), r.passed, r.fitted_constant, f64::NAN);
            self.report.results.estimates.push(r);
        }
        Ok(())
    }

    fn run(&mut self) -> Step<()> {
        match self.config.scenario {
            Scenario::Solve => self.solution().map(|_| ()),
            Scenario::Exhaust => self.exhaustion(),
            Scenario::Lp => self.lp().map(|_| ()),
            Scenario::FokkerPlanck => self.fokker_planck().map(|_| ()),
            Scenario::Simulate => self.simulate().map(|_| ()),
            Scenario::Compare => self.compare().map(|_| ()),
            Scenario::Check => self.estimates(),
            Scenario::FullVerify => {
                let lambda = self.solution()?.lambda;
                let fp = self.fokker_planck()?;
                let lambda_bar = self.lp()?;
                let lambda_pi_lp_grid = self.report.results.lp.as_ref().map_or(f64::NAN, |l| l.lambda_pi);
                self.report.results.verification_table = Some(VerificationTable {
                    lambda_pi: lambda,
                    lambda_bar_lp: lambda_bar,
                    lambda_pi_lp_grid,
                    fokker_planck_cost: fp,
                    simulation_mean: f64::NAN,
                    simulation_standard_error: f64::NAN,
                });
                let sim = self.compare()?;
                if let Some(t) = self.report.results.verification_table.as_mut() {
                    t.simulation_mean = sim.mean;
                    t.simulation_standard_error = sim.standard_error;
                }
                self.estimates()
            }
        }
    }
}

fn relative_error(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
}

/// Runs the configured scenario. With `out_dir`, artifacts are written as
/// each stage finishes, so a failing run still leaves the earlier files, and
/// `summary.json` is always written last.
pub fn run_scenario(config: &RunConfig, inst: &Instance, out_dir: Option<&Path>) -> RunReport {
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: config.scenario,
        seed: config.seed,
        config: config.clone(),
        results: Results::default(),
        checks: Vec::new(),
        errors: Vec::new(),
        status: Status::Pass,
        timing_ms: BTreeMap::new(),
    };
    let mut runner = Runner { config, inst, out_dir, report, solution: None };
    if let Some(dir) = out_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            runner.report.errors.push(format!("output directory: {e}"));
        }
    }
    if runner.report.errors.is_empty() {
        if let Err(e) = runner.run() {
            runner.report.errors.push(e.to_string());
        }
    }
    let mut report = runner.report;
    report.status = status_of(&report);
    if let Some(dir) = out_dir.filter(|_| config.output.wants(Format::Json)) {
        let written = serde_json::to_string_pretty(&report)
            .map_err(|e| e.to_string())
            .and_then(|text| std::fs::write(dir.join("summary.json"), text + "\n").map_err(|e| e.to_string()));
        if let Err(e) = written {
            report.errors.push(format!("summary.json: {e}"));
            report.status = Status::NumericalFailure;
        }
    }
    report
}

fn status_of(report: &RunReport) -> Status {
    if !report.errors.is_empty() {
        Status::NumericalFailure
    } else if report.checks.iter().any(|c| c.required && !c.passed) {
        Status::CheckFailure
    } else {
        Status::Pass
    }
}
