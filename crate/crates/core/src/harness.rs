//! Scenario files, estimate campaigns and the command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compat::{self, CompatReport};
use crate::divstruct::{brute_force_cancellation, cancellation_pair, MuTilde};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Field, Grid, NodeField};
use crate::linalg::{Mat3, Mat6};
use crate::localize::{self, Chart, ChartData};
use crate::materials::{assemble_coefficients, MaterialLaw, TensorExpr};
use crate::problem::{manufactured, InitialData, Problem, Source};
use crate::solver::{Closure, RunRecord, Solver, SolverConfig};
use crate::spaces::{self, NormReport, TimeSeries};

pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------- scenario

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lengths: [f64; 3],
    pub counts: [usize; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Upper bound for admissible horizons; defaults to `T`.
    #[serde(rename = "T_prime", default)]
    pub horizon_max: Option<f64>,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { t0: 0.0, horizon: 1.0, horizon_max: None }
    }
}

/// A tensor as a number, a scalar expression or a 3x3 matrix of expressions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorSpec {
    Number(f64),
    Scalar(String),
    Matrix(Vec<Vec<String>>),
}

impl TensorSpec {
    pub fn to_expr(&self) -> Result<TensorExpr> {
        match self {
            TensorSpec::Number(x) => Ok(TensorExpr::scalar(Expr::constant(*x))),
            TensorSpec::Scalar(s) => Ok(TensorExpr::scalar(Expr::parse(s)?)),
            TensorSpec::Matrix(rows) => TensorExpr::parse(rows),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LawSpec {
    pub epsilon: TensorSpec,
    pub mu: TensorSpec,
    pub sigma: TensorSpec,
    pub eta: f64,
}

impl Default for LawSpec {
    fn default() -> Self {
        LawSpec {
            epsilon: TensorSpec::Number(1.0),
            mu: TensorSpec::Number(1.0),
            sigma: TensorSpec::Number(0.0),
            eta: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    /// Six expressions in `(t, x, y, z)`.
    pub u0: Option<Vec<String>>,
    /// Flat little-endian `f64`, node-major, six components per node.
    pub u0_file: Option<PathBuf>,
    pub f: Option<Vec<String>>,
    /// Current density `J`; enters as `f = (-J, 0)`.
    pub current: Option<Vec<String>>,
    pub g: Option<Vec<String>>,
    pub exact: Option<Vec<String>>,
    /// Derive `f`, `g` and `u0` from `exact`.
    pub manufactured: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSpec {
    pub cfl: f64,
    pub dt: Option<f64>,
    pub snapshot_stride: usize,
    pub diagnostics_stride: usize,
    pub closure: Closure,
}

impl Default for SchemeSpec {
    fn default() -> Self {
        SchemeSpec { cfl: 0.4, dt: None, snapshot_stride: 0, diagnostics_stride: 1, closure: Closure::Sbp }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    #[serde(default)]
    pub name: String,
    pub forward: Vec<String>,
    pub inverse: Vec<String>,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_tau() -> f64 {
    localize::DEFAULT_TAU
}

/// `A0 + δ·shape·I` for the data-correction command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub shape: String,
    pub delta: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec { shape: "sin(x)".into(), delta: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub energy_tol: f64,
    /// Number of halvings in estimate campaigns.
    pub refinements: usize,
    /// Snapshots per run in estimate campaigns.
    pub samples: usize,
    pub l2: bool,
    pub hm: bool,
    pub tangential: bool,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec { energy_tol: 1e-6, refinements: 1, samples: 32, l2: true, hm: true, tangential: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub law: LawSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_gamma")]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub chart: Option<ChartSpec>,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    /// Directory used to resolve relative file paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_m() -> usize {
    1
}

pub fn default_gamma() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}

fn exprs(v: &[String], n: usize, what: &str) -> Result<Vec<Expr>> {
    if v.len() != n {
        return Err(Error::Scenario(format!("{what}: expected {n} expressions, got {}", v.len())));
    }
    v.iter().map(|s| Expr::parse(s)).collect()
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(src).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = Self::from_toml(&std::fs::read_to_string(path)?)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {}", self.schema));
        }
        if self.time.horizon < 0.0 {
            return bad("T must be nonnegative".into());
        }
        if self.time.horizon_max.is_some_and(|tp| self.time.horizon > tp) {
            return bad("T exceeds T_prime".into());
        }
        if self.m > compat::MAX_LIFT_ORDER {
            return bad(format!("m = {} exceeds {}", self.m, compat::MAX_LIFT_ORDER));
        }
        if self.gamma.is_empty() || self.gamma.iter().any(|g| !(*g > 0.0)) {
            return bad("gamma grid must be nonempty and positive".into());
        }
        if self.data.manufactured && self.data.exact.is_none() {
            return bad("manufactured data need `exact`".into());
        }
        Ok(())
    }

    pub fn base_grid(&self) -> Result<Grid<f64>> {
        Grid::new(self.grid.lengths, self.grid.counts)
    }

    /// Base grid refined `level` times (slabs stay one node thick).
    pub fn grid_at(&self, level: usize) -> Result<Grid<f64>> {
        let mut g = self.base_grid()?;
        for _ in 0..level {
            g = if g.ny() == 1 { g.refined_slab() } else { g.refined() };
        }
        Ok(g)
    }

    pub fn t_end(&self) -> f64 {
        self.time.t0 + self.time.horizon
    }

    pub fn law(&self) -> Result<MaterialLaw<f64>> {
        let mut law =
            MaterialLaw::closed(self.law.epsilon.to_expr()?, self.law.mu.to_expr()?, self.law.sigma.to_expr()?);
        law.eta = self.law.eta;
        Ok(law)
    }

    /// Law with `δ·shape` added to the diagonals of `ε` and `μ`.
    pub fn perturbed_law(&self, delta: f64) -> Result<MaterialLaw<f64>> {
        let bump = Expr::constant(delta).mul(&Expr::parse(&self.perturbation.shape)?);
        let add = |t: TensorExpr| TensorExpr::from_fn(|i, j| if i == j { t.0[i][j].add(&bump) } else { t.0[i][j].clone() });
        let mut law = MaterialLaw::closed(
            add(self.law.epsilon.to_expr()?),
            add(self.law.mu.to_expr()?),
            self.law.sigma.to_expr()?,
        );
        law.eta = self.law.eta;
        Ok(law)
    }

    fn chart(&self) -> Result<Option<Chart>> {
        self.chart
            .as_ref()
            .map(|c| Chart::parse(if c.name.is_empty() { "chart" } else { &c.name }, &c.forward, &c.inverse))
            .transpose()
    }

    /// Problem on `grid` in physical coordinates (no chart applied).
    pub fn problem_with_law(&self, grid: &Grid<f64>, law: &MaterialLaw<f64>) -> Result<Problem<f64>> {
        let t0 = self.time.t0;
        let coeffs = assemble_coefficients(law, grid, &[t0, self.t_end()])?;
        let d = &self.data;
        let exact = d.exact.as_ref().map(|v| exprs(v, 6, "exact")).transpose()?;
        if d.manufactured {
            return manufactured(coeffs, exact.expect("validated"), t0);
        }
        let f = match (&d.f, &d.current) {
            (Some(_), Some(_)) => return Err(Error::Scenario("give either `f` or `current`".into())),
            (Some(f), None) => Source::closed(exprs(f, 6, "f")?),
            (None, Some(j)) => {
                let j = exprs(j, 3, "current")?;
                Source::from_current(&[j[0].clone(), j[1].clone(), j[2].clone()])
            }
            (None, None) => Source::Zero,
        };
        let g = match &d.g {
            Some(g) => {
                let g = exprs(g, 2, "g")?;
                [g[0].clone(), g[1].clone()]
            }
            None => [Expr::zero(), Expr::zero()],
        };
        let u0 = match (&d.u0, &d.u0_file, &exact) {
            (Some(u), _, _) => InitialData::closed(exprs(u, 6, "u0")?),
            (None, Some(path), _) => InitialData::Sampled(read_field(&self.base_dir.join(path), grid)?),
            (None, None, Some(u)) => InitialData::closed(u.clone()),
            (None, None, None) => InitialData::closed(vec![Expr::zero(); 6]),
        };
        Ok(Problem { coeffs, t0, f, g, u0, exact })
    }

    /// Problem on `grid`; normalized through the chart when one is given.
    pub fn problem(&self, grid: &Grid<f64>) -> Result<Problem<f64>> {
        let law = self.law()?;
        match self.chart()? {
            None => self.problem_with_law(grid, &law),
            Some(chart) => Ok(self.normalized(grid, &chart, &law)?.problem),
        }
    }

    fn normalized(&self, grid: &Grid<f64>, chart: &Chart, law: &MaterialLaw<f64>) -> Result<localize::Normalized<f64>> {
        let tau = self.chart.as_ref().map_or(localize::DEFAULT_TAU, |c| c.tau);
        let base = self.problem_with_law(grid, law)?;
        let u0 = match &base.u0 {
            InitialData::Closed { exprs, .. } => exprs.clone(),
            InitialData::Sampled(_) => return Err(Error::Scenario("charts need closed-form initial data".into())),
        };
        let f = base
            .f
            .exprs()
            .ok_or_else(|| Error::Scenario("charts need closed-form sources".into()))?;
        let transport = localize::transport_operator(chart, law, grid, tau)?;
        let data = ChartData { f, g: base.g.clone(), u0, exact: base.exact.clone(), t0: self.time.t0 };
        localize::normalize(&transport, &data)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            cfl: self.scheme.cfl,
            dt: self.scheme.dt,
            t_end: self.t_end(),
            snapshot_stride: self.scheme.snapshot_stride,
            diagnostics_stride: self.scheme.diagnostics_stride,
            closure: self.scheme.closure,
            ..Default::default()
        }
    }
}

fn read_field(path: &Path, grid: &Grid<f64>) -> Result<Field<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != grid.len() * 6 * 8 {
        return Err(Error::Scenario(format!(
            "{}: expected {} bytes for the grid, found {}",
            path.display(),
            grid.len() * 48,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Field { ncomp: 6, data })
}

// ---------------------------------------------------------------- estimates

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EstimateRow {
    pub level: usize,
    pub h: f64,
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct DomainSpec {
    pub lengths: [f64; 3],
    pub counts: [usize; 3],
    pub t0: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EstimateReport {
    pub campaign: String,
    pub m: usize,
    /// Left side on the finest grid at the smallest γ.
    pub lhs: f64,
    pub rhs_terms: BTreeMap<String, f64>,
    pub gamma_used: Vec<f64>,
    /// Largest fitted constant in the table.
    pub ratio: f64,
    /// `max/min` of the fitted constants (1 when all vanish).
    pub spread: f64,
    pub table: Vec<EstimateRow>,
    pub domain: DomainSpec,
    pub pass: bool,
    pub note: String,
}

/// One solver run with `samples` evenly strided snapshots.
struct Sampled {
    grid: Grid<f64>,
    problem: Problem<f64>,
    series: TimeSeries<f64>,
}

fn sampled_run(scenario: &Scenario, level: usize) -> Result<Sampled> {
    let grid = scenario.grid_at(level)?;
    let problem = scenario.problem(&grid)?;
    let mut cfg = scenario.solver_config();
    cfg.track_charge = false;
    let probe = Solver::new(problem.clone(), cfg.clone())?;
    cfg.snapshot_stride = (probe.steps / scenario.verify.samples.max(1)).max(1);
    cfg.diagnostics_stride = probe.steps.max(1);
    cfg.keep_first = 0;
    let solver = Solver::new(problem.clone(), cfg)?;
    let rec: RunRecord<f64> = solver.run().map_err(|e| match e {
        e @ Error::NonFiniteField { .. } | e @ Error::CflViolation { .. } => Error::RunFailure(e.to_string()),
        e => e,
    })?;
    let mut series = rec.time_series();
    let t0 = problem.t0;
    series.times.iter_mut().for_each(|t| *t -= t0);
    Ok(Sampled { grid, problem, series })
}

fn weights(times: &[f64], gamma: f64) -> Vec<f64> {
    times.iter().map(|t| (-2.0 * gamma * t).exp()).collect()
}

/// `(sup_t w ‖·‖², ∫ w ‖·‖²)` of per-time squared norms.
fn sup_and_integral(times: &[f64], vals: &[f64], gamma: f64) -> (f64, f64) {
    let w = weights(times, gamma);
    let wv: Vec<f64> = vals.iter().zip(&w).map(|(v, w)| v * w).collect();
    (wv.iter().copied().fold(0.0, f64::max), spaces::trapezoid(times, &wv))
}

/// `Σ_{j<=m} ‖∂t^j u(t)‖²_{H^{m-j}}` (tangential-only when `tangential`).
fn derivative_energy(grid: &Grid<f64>, series: &TimeSeries<f64>, m: usize, tangential: bool) -> Vec<Vec<f64>> {
    (0..=m)
        .map(|j| {
            series
                .time_derivative(j)
                .par_iter()
                .map(|f| {
                    let n = if tangential {
                        spaces::tangential_fd_norm(grid, f, m - j)
                    } else {
                        spaces::sobolev_norm(grid, f, m - j)
                    };
                    n * n
                })
                .collect()
        })
        .collect()
}

/// `∫ e^{-2γt} Σ_j ‖∂t^j f‖²_{H^{m-j}}` from closed-form sources.
fn source_norm_sq(s: &Sampled, m: usize, gamma: f64, tangential: bool) -> f64 {
    let p = &s.problem;
    if p.f.is_zero() {
        return 0.0;
    }
    let vals: Vec<f64> = s
        .series
        .times
        .par_iter()
        .map(|tau| {
            (0..=m)
                .map(|j| match p.f.dt_at(&s.grid, p.t0 + tau, j) {
                    Some(f) => {
                        let n = if tangential {
                            spaces::tangential_fd_norm(&s.grid, &f, m - j)
                        } else {
                            spaces::sobolev_norm(&s.grid, &f, m - j)
                        };
                        n * n
                    }
                    None => 0.0,
                })
                .sum()
        })
        .collect();
    sup_and_integral(&s.series.times, &vals, gamma).1
}

/// `Σ_{j<m} ‖∂t^j f(t0)‖²_{H^{m-1-j}}`.
fn initial_source_traces(s: &Sampled, m: usize) -> f64 {
    (0..m)
        .map(|j| match s.problem.f.dt_at(&s.grid, s.problem.t0, j) {
            Some(f) => spaces::sobolev_norm(&s.grid, &f, m - 1 - j).powi(2),
            None => 0.0,
        })
        .sum()
}

/// `‖g‖²_{E_m,γ}` (for `m = 0`, the weighted `L²` norm on the wall).
fn wall_data_norm_sq(s: &Sampled, m: usize, gamma: f64) -> f64 {
    let p = &s.problem;
    if p.homogeneous_boundary() {
        return 0.0;
    }
    let times = &s.series.times;
    if m == 0 {
        let vals: Vec<f64> = times
            .iter()
            .map(|tau| spaces::boundary_multiplier_sq(&s.grid, &p.g_dt_wall(p.t0 + tau, 0), |_| 1.0))
            .collect();
        return sup_and_integral(times, &vals, gamma).1;
    }
    let derivs: Vec<Vec<Field<f64>>> =
        (0..=m).map(|j| times.iter().map(|tau| p.g_dt_wall(p.t0 + tau, j)).collect()).collect();
    spaces::em_norm_from_derivatives(&s.grid, times, &derivs, m, gamma).powi(2)
}

fn fitted(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Campaign {
    L2,
    Hm,
    Tangential,
}

impl Campaign {
    fn name(self) -> &'static str {
        match self {
            Campaign::L2 => "l2",
            Campaign::Hm => "hm",
            Campaign::Tangential => "tangential",
        }
    }
}

fn rows_for(s: &Sampled, level: usize, campaign: Campaign, m: usize, gammas: &[f64]) -> Vec<EstimateRow> {
    let tangential = campaign == Campaign::Tangential;
    let m_eff = if campaign == Campaign::L2 { 0 } else { m };
    let times = &s.series.times;
    let u_energy = derivative_energy(&s.grid, &s.series, m_eff, tangential);
    let full_energy = if tangential { Some(derivative_energy(&s.grid, &s.series, m_eff, false)) } else { None };
    let u0 = s.problem.u0_field();
    let u0_norm = spaces::sobolev_norm(&s.grid, &u0, m_eff).powi(2);
    let f_traces = initial_source_traces(s, m_eff);
    gammas
        .par_iter()
        .map(|&gamma| {
            let mut terms = BTreeMap::new();
            let mut lhs = 0.0;
            if tangential {
                // Σ_α sup_t ‖∂^α u‖² + γ ∫ ‖∂^α u‖², grouped by time order
                let mut integ = 0.0;
                for e in &u_energy {
                    let (sup, int) = sup_and_integral(times, e, gamma);
                    lhs += sup;
                    integ += int;
                }
                lhs += gamma * integ;
            } else {
                let total: Vec<f64> = (0..times.len()).map(|n| u_energy.iter().map(|e| e[n]).sum()).collect();
                let sup_gm = u_energy
                    .iter()
                    .map(|e| sup_and_integral(times, e, gamma).0)
                    .fold(0.0, f64::max);
                let (_, int) = sup_and_integral(times, &total, gamma);
                lhs = sup_gm + gamma * int;
            }
            terms.insert("u0".to_string(), u0_norm);
            terms.insert("g".to_string(), wall_data_norm_sq(s, m_eff, gamma));
            if m_eff > 0 {
                terms.insert("f_traces".to_string(), f_traces);
            }
            let f_int = source_norm_sq(s, m_eff, gamma, tangential);
            terms.insert("f_over_gamma".to_string(), f_int / gamma);
            if let Some(full) = &full_energy {
                let gm = full.iter().map(|e| sup_and_integral(times, e, gamma).0).fold(0.0, f64::max);
                terms.insert("u_gm_over_gamma".to_string(), gm / gamma);
            }
            let rhs: f64 = terms.values().sum();
            EstimateRow {
                level,
                h: s.grid.spacing(2),
                gamma,
                lhs,
                rhs,
                ratio: fitted(lhs, rhs),
                terms,
            }
        })
        .collect()
}

fn campaign_report(scenario: &Scenario, campaign: Campaign, m: usize, gammas: &[f64]) -> Result<EstimateReport> {
    let levels: Vec<usize> = (0..=scenario.verify.refinements).collect();
    let runs: Vec<Sampled> = levels
        .par_iter()
        .map(|&l| sampled_run(scenario, l))
        .collect::<Result<_>>()?;
    let table: Vec<EstimateRow> = runs
        .iter()
        .zip(&levels)
        .flat_map(|(s, &l)| rows_for(s, l, campaign, m, gammas))
        .collect();
    Ok(assemble_report(scenario, campaign.name(), if campaign == Campaign::L2 { 0 } else { m }, gammas, table))
}

fn assemble_report(scenario: &Scenario, name: &str, m: usize, gammas: &[f64], table: Vec<EstimateRow>) -> EstimateReport {
    let ratios: Vec<f64> = table.iter().map(|r| r.ratio).collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if max == 0.0 { 1.0 } else { max / min };
    // halving must not grow a fitted constant by more than 2x
    let monotone = table.iter().all(|r| {
        table
            .iter()
            .filter(|q| q.gamma == r.gamma && q.level == r.level + 1)
            .all(|q| q.ratio <= 2.0 * r.ratio || r.ratio == 0.0 && q.ratio == 0.0)
    });
    let finest = table.iter().map(|r| r.level).max().unwrap_or(0);
    let head = table
        .iter()
        .find(|r| r.level == finest)
        .cloned()
        .expect("nonempty table");
    let all_finite = ratios.iter().all(|r| r.is_finite());
    EstimateReport {
        campaign: name.to_string(),
        m,
        lhs: head.lhs,
        rhs_terms: head.terms,
        gamma_used: gammas.to_vec(),
        ratio: max,
        spread,
        pass: monotone && all_finite && spread < 2.0,
        table,
        domain: DomainSpec {
            lengths: scenario.grid.lengths,
            counts: scenario.grid.counts,
            t0: scenario.time.t0,
            horizon: scenario.time.horizon,
        },
        note: "smooth data only; norms on the truncated periodic slab".into(),
    }
}

/// Weighted `L²` estimate: `sup e^{-2γt}‖u‖² + γ‖u‖²_γ` against
/// `‖u0‖² + ‖g‖²_γ + ‖f‖²_γ/γ`.
pub fn verify_l2_estimate(scenario: &Scenario) -> Result<EstimateReport> {
    campaign_report(scenario, Campaign::L2, 0, &scenario.gamma)
}

/// Order-`m` estimate; gated on compatibility of order `m`.
pub fn verify_hm_estimate(scenario: &Scenario, m: usize) -> Result<EstimateReport> {
    if m == 0 {
        return verify_l2_estimate(scenario);
    }
    compat_gate(scenario, m)?;
    campaign_report(scenario, Campaign::Hm, m, &scenario.gamma)
}

/// Tangential-derivative estimate of order `m`.
pub fn verify_tangential_estimate(scenario: &Scenario, m: usize) -> Result<EstimateReport> {
    compat_gate(scenario, m)?;
    campaign_report(scenario, Campaign::Tangential, m, &scenario.gamma)
}

fn compat_gate(scenario: &Scenario, m: usize) -> Result<CompatReport> {
    let p = scenario.problem(&scenario.base_grid()?)?;
    compat::check_compatibility(&p, m, None)?.into_result()
}

// ---------------------------------------------------------------- campaigns

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CancellationReport {
    pub seed: u64,
    pub trials: usize,
    pub points_per_trial: usize,
    pub max_residual: f64,
    pub max_brute_force: f64,
    pub max_disagreement: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Polynomial of total degree `<= 4` in three variables.
struct Poly {
    terms: Vec<(f64, [u32; 3])>,
}

impl Poly {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut terms = Vec::new();
        for a in 0..=4u32 {
            for b in 0..=4 - a {
                for c in 0..=4 - a - b {
                    terms.push((rng.random_range(-1.0..1.0), [a, b, c]));
                }
            }
        }
        Poly { terms }
    }

    fn hessian(&self, x: &[f64; 3]) -> Mat3<f64> {
        let d = |e: [u32; 3], k: usize| -> (f64, [u32; 3]) {
            if e[k] == 0 {
                (0.0, e)
            } else {
                let mut e2 = e;
                e2[k] -= 1;
                (e[k] as f64, e2)
            }
        };
        Mat3::from_fn(|k, j| {
            self.terms
                .iter()
                .map(|(c, e)| {
                    let (a, e1) = d(*e, k);
                    let (b, e2) = d(e1, j);
                    c * a * b * (0..3).map(|i| x[i].powi(e2[i] as i32)).product::<f64>()
                })
                .sum()
        })
    }
}

/// Both cancellation traces for random constant `μ` and random quartic `u`,
/// cross-checked against the index-loop evaluation.
pub fn cancellation_campaign(seed: u64, trials: usize, tol: f64) -> CancellationReport {
    const POINTS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut res, mut brute, mut dis) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let mu = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let tilde = MuTilde { mu: NodeField::Uniform(mu) };
        let a: [Mat6<f64>; 3] = std::array::from_fn(|j| tilde.recompose(0, j));
        let polys: Vec<Poly> = (0..6).map(|_| Poly::random(&mut rng)).collect();
        for _ in 0..POINTS {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let hess: [Mat3<f64>; 6] = std::array::from_fn(|p| polys[p].hessian(&x));
            let (c1, c2) = cancellation_pair(&mu, &a, &hess);
            let (b1, b2) = brute_force_cancellation(&mu, &hess);
            res = res.max(c1.abs()).max(c2.abs());
            brute = brute.max(b1.abs()).max(b2.abs());
            dis = dis.max((c1 - b1).abs()).max((c2 - b2).abs());
        }
    }
    CancellationReport {
        seed,
        trials,
        points_per_trial: POINTS,
        max_residual: res,
        max_brute_force: brute,
        max_disagreement: dis,
        tol,
        pass: res <= tol && brute <= tol && dis <= tol,
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TransformReport {
    pub chart: String,
    pub min_mu33: f64,
    pub chart_inverse_residual: f64,
    pub normal_coefficient_defect: f64,
    pub normalizer_inverse_residual: f64,
    pub round_trip: f64,
    pub min_eta: f64,
    pub tol_defect: f64,
    pub tol_round_trip: f64,
    pub pass: bool,
}

pub fn transform_report(scenario: &Scenario) -> Result<TransformReport> {
    let chart = scenario.chart()?.ok_or_else(|| Error::Scenario("no [chart] section".into()))?;
    let grid = scenario.base_grid()?;
    let law = scenario.law()?;
    let tau = scenario.chart.as_ref().map_or(localize::DEFAULT_TAU, |c| c.tau);
    let transport = localize::transport_operator(&chart, &law, &grid, tau)?;
    let min_mu33 = (0..grid.len()).map(|n| transport.mu.at(n)[(2, 2)]).fold(f64::INFINITY, f64::min);
    let nz = scenario.normalized(&grid, &chart, &law)?;
    let v = nz.problem.u0_field();
    let back = nz.normalizer.pushforward(&nz.normalizer.pullback_solution(&v));
    let round_trip = back.sub(&v).max_abs() / v.max_abs().max(1.0);
    let defect = localize::normal_coefficient_defect(&nz.problem);
    let inv = nz.normalizer.inverse_residual(grid.len());
    let (td, tr) = (1e-12, 1e-13);
    Ok(TransformReport {
        chart: chart.name.clone(),
        min_mu33,
        chart_inverse_residual: chart.inverse_residual(&grid),
        normal_coefficient_defect: defect,
        normalizer_inverse_residual: inv,
        round_trip,
        min_eta: nz.problem.coeffs.eta,
        tol_defect: td,
        tol_round_trip: tr,
        pass: defect <= td && round_trip <= tr,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectionReport {
    pub order: usize,
    pub delta: f64,
    pub h_norm: f64,
    pub h_norm_over_delta: f64,
    pub defects: Vec<f64>,
    pub amplification: Vec<f64>,
    pub compat: CompatReport,
    pub pass: bool,
}

pub fn correction_report(scenario: &Scenario, order: usize, delta: f64) -> Result<CorrectionReport> {
    let grid = scenario.base_grid()?;
    let original = scenario.problem_with_law(&grid, &scenario.law()?)?;
    let perturbed = assemble_coefficients(&scenario.perturbed_law(delta)?, &grid, &[scenario.time.t0])?;
    let c = compat::correct_initial_data(&original, &perturbed, order)?;
    Ok(CorrectionReport {
        order,
        delta,
        h_norm: c.h_norm,
        h_norm_over_delta: c.h_norm / delta,
        defects: c.defects.clone(),
        amplification: c.amplification.clone(),
        pass: c.report.pass,
        compat: c.report,
    })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SimulationSummary {
    pub name: String,
    pub dt: f64,
    pub steps: usize,
    pub energy_drift: f64,
    pub final_l2_error: Option<f64>,
    pub max_r1: f64,
    pub max_r2: f64,
    pub max_wall_residual: f64,
}

pub fn simulate(scenario: &Scenario, out: Option<&Path>) -> Result<(SimulationSummary, RunRecord<f64>)> {
    let grid = scenario.base_grid()?;
    let problem = scenario.problem(&grid)?;
    let solver = Solver::new(problem.clone(), scenario.solver_config())?;
    let rec = solver.run()?;
    let fmax = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let summary = SimulationSummary {
        name: scenario.name.clone(),
        dt: rec.dt,
        steps: rec.steps,
        energy_drift: rec.energy_drift(),
        final_l2_error: crate::solver::l2_error(&problem, &rec.final_state.u, rec.final_state.t),
        max_r1: fmax(&rec.r1),
        max_r2: fmax(&rec.r2),
        max_wall_residual: fmax(&rec.wall_residual),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        rec.write_csv(&dir.join("series.csv"))?;
        if !rec.snapshots.is_empty() {
            rec.write_snapshots(&grid, &dir.join("snapshots"))?;
        }
    }
    Ok((summary, rec))
}

/// Norms of the initial data and of the run for each γ.
pub fn norms_report(scenario: &Scenario, m: usize) -> Result<Vec<NormReport>> {
    let s = sampled_run(scenario, 0)?;
    scenario
        .gamma
        .par_iter()
        .map(|&gamma| {
            Ok(NormReport {
                gm: spaces::gm_norm(&s.grid, &s.series, m, gamma),
                hm: spaces::sobolev_norm(&s.grid, &s.problem.u0_field(), m),
                em: wall_data_norm_sq(&s, m, gamma).sqrt(),
                gamma,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- CLI

#[derive(Parser, Debug)]
#[command(name = "maxwell-ibvp", version, about = "Maxwell half-space IBVP toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Output directory for reports and series.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Pass/fail tolerance override.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Regularity / compatibility order.
    #[arg(long, global = true)]
    pub order: Option<usize>,
    /// Weight parameters (repeatable); replaces the scenario grid.
    #[arg(long, global = true)]
    pub gamma: Vec<f64>,
    /// Number of grid halvings in campaigns.
    #[arg(long, global = true)]
    pub refine: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the solver and write the diagnostic series.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check compatibility conditions of the scenario data.
    CheckCompat {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Correct the initial data after perturbing the material law.
    CorrectData {
        scenario: PathBuf,
        /// Perturbation size (overrides the scenario).
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the estimate campaigns selected in the scenario.
    VerifyEnergy {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Randomized check of the second-order cancellation traces.
    VerifyCancellation {
        #[arg(long, alias = "random-seed", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Transport and normalize through the scenario chart.
    Transform {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Function-space norms of the data and of a run.
    Norms {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

fn write_json<S: Serialize>(out: &Option<PathBuf>, file: &str, value: &S) -> Result<String> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(file), format!("{text}\n"))?;
    }
    Ok(text)
}

fn load(path: &Path, common: &Common) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if !common.gamma.is_empty() {
        s.gamma = common.gamma.clone();
    }
    if let Some(r) = common.refine {
        s.verify.refinements = r;
    }
    s.validate()?;
    Ok(s)
}

#[derive(Serialize)]
struct EnergyVerdict {
    summary: SimulationSummary,
    energy_tol: f64,
    energy_pass: bool,
    estimates: Vec<EstimateReport>,
    pass: bool,
}

fn dispatch(cmd: Command) -> Result<(bool, String)> {
    match cmd {
        Command::Simulate { scenario, common } => {
            let s = load(&scenario, &common)?;
            let (summary, _) = simulate(&s, common.out.as_deref())?;
            Ok((true, write_json(&common.out, "summary.json", &summary)?))
        }
        Command::CheckCompat { scenario, common } => {
            let s = load(&scenario, &common)?;
            let p = s.problem(&s.base_grid()?)?;
            let report = compat::check_compatibility(&p, common.order.unwrap_or(s.m), common.tol)?;
            Ok((report.pass, write_json(&common.out, "compat.json", &report)?))
        }
        Command::CorrectData { scenario, delta, common } => {
            let s = load(&scenario, &common)?;
            let report = correction_report(&s, common.order.unwrap_or(s.m), delta.unwrap_or(s.perturbation.delta))?;
            Ok((report.pass, write_json(&common.out, "correction.json", &report)?))
        }
        Command::VerifyEnergy { scenario, common } => {
            let s = load(&scenario, &common)?;
            let m = common.order.unwrap_or(s.m);
            let (summary, _) = simulate(&s, common.out.as_deref())?;
            let tol = common.tol.unwrap_or(s.verify.energy_tol);
            let energy_pass = summary.energy_drift <= tol;
            let mut estimates = Vec::new();
            if s.verify.l2 {
                estimates.push(verify_l2_estimate(&s)?);
            }
            if s.verify.hm && m > 0 {
                estimates.push(verify_hm_estimate(&s, m)?);
            }
            if s.verify.tangential {
                estimates.push(verify_tangential_estimate(&s, m)?);
            }
            for e in &estimates {
                if let Some(dir) = &common.out {
                    write_table_csv(&dir.join(format!("estimate_{}.csv", e.campaign)), e)?;
                }
            }
            let pass = energy_pass && estimates.iter().all(|e| e.pass);
            let v = EnergyVerdict { summary, energy_tol: tol, energy_pass, estimates, pass };
            Ok((pass, write_json(&common.out, "verify_energy.json", &v)?))
        }
        Command::VerifyCancellation { seed, trials, common } => {
            let report = cancellation_campaign(seed, trials, common.tol.unwrap_or(1e-13));
            Ok((report.pass, write_json(&common.out, "cancellation.json", &report)?))
        }
        Command::Transform { scenario, common } => {
            let s = load(&scenario, &common)?;
            let report = transform_report(&s)?;
            Ok((report.pass, write_json(&common.out, "transform.json", &report)?))
        }
        Command::Norms { scenario, common } => {
            let s = load(&scenario, &common)?;
            let report = norms_report(&s, common.order.unwrap_or(s.m))?;
            Ok((true, write_json(&common.out, "norms.json", &report)?))
        }
    }
}

fn write_table_csv(path: &Path, e: &EstimateReport) -> Result<()> {
    let mut s = String::from("level,h,gamma,lhs,rhs,ratio\n");
    for r in &e.table {
        s.push_str(&format!("{},{:.12e},{},{:.12e},{:.12e},{:.12e}\n", r.level, r.h, r.gamma, r.lhs, r.rhs, r.ratio));
    }
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    std::fs::write(path, s)?;
    Ok(())
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok((pass, json)) => {
            println!("{json}");
            if pass {
                EXIT_OK
            } else {
                EXIT_FAIL
            }
        }
        Err(Error::CompatibilityFailure { report, .. }) => {
            let v = serde_json::json!({ "error": "compatibility failure", "report": *report });
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            EXIT_FAIL
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WAVE: &str = r#"
schema = 1
name = "wave"
grid = { lengths = [1.0, 1.0, 1.0], counts = [4, 4, 17] }
time = { T = 0.5 }
data = { exact = ["0", "sin(2*pi*z)*sin(2*pi*t)", "0", "-cos(2*pi*z)*cos(2*pi*t)", "0", "0"] }
gamma = [2.0, 4.0]
"#;

    #[test]
    fn scenario_parses_and_validates() {
        let s = Scenario::from_toml(WAVE).unwrap();
        assert_eq!(s.m, 1);
        assert_eq!(s.scheme.cfl, 0.4);
        assert!(Scenario::from_toml(&WAVE.replace("schema = 1", "schema = 2")).is_err());
        assert!(Scenario::from_toml(&WAVE.replace("time = { T = 0.5 }", "time = { T = 2, T_prime = 1 }")).is_err());
        assert!(Scenario::from_toml(&format!("{WAVE}\nm = 4\n")).is_err());
        assert!(Scenario::from_toml(&format!("{WAVE}\nbogus = 1\n")).is_err());
        let p = s.problem(&s.base_grid().unwrap()).unwrap();
        assert!(p.homogeneous_boundary());
        assert!(p.f.is_zero());
    }

    #[test]
    fn tensor_spec_forms() {
        let src = WAVE.replace(
            "gamma",
            "law = { epsilon = 2.0, mu = \"1 + 0.1*sin(x)\", sigma = [[\"0.1\", \"0\", \"0\"], [\"0\", \"0.1\", \"0\"], [\"0\", \"0\", \"0.1\"]] }\ngamma",
        );
        let s = Scenario::from_toml(&src).unwrap();
        let law = s.law().unwrap();
        let a0 = law.a0_expr(0).unwrap();
        assert_eq!(a0[0].eval_f64(0.0, [0.0; 3]), 2.0);
        assert!((a0[21].eval_f64(0.0, [1.0, 0.0, 0.0]) - (1.0 + 0.1 * 1f64.sin())).abs() < 1e-15);
    }

    #[test]
    fn zero_scenario_gives_zero_ratios() {
        let s = Scenario::from_toml(&WAVE.replace("data = { exact", "data = { u0").replace("sin(2*pi*z)*sin(2*pi*t)", "0").replace("-cos(2*pi*z)*cos(2*pi*t)", "0")).unwrap();
        for r in [verify_l2_estimate(&s).unwrap(), verify_tangential_estimate(&s, 1).unwrap()] {
            assert!(r.table.iter().all(|row| row.lhs == 0.0 && row.rhs == 0.0 && row.ratio == 0.0));
            assert!(r.pass);
        }
    }

    #[test]
    fn f_term_shrinks_with_gamma() {
        let src = WAVE.replace(
            "data = { exact = [\"0\", \"sin(2*pi*z)*sin(2*pi*t)\", \"0\", \"-cos(2*pi*z)*cos(2*pi*t)\", \"0\", \"0\"] }",
            "data = { current = [\"0\", \"sin(2*pi*z)*cos(t)\", \"0\"] }",
        );
        let mut s = Scenario::from_toml(&src).unwrap();
        s.gamma = vec![1.0, 2.0, 4.0, 8.0];
        s.verify.refinements = 0;
        let r = verify_l2_estimate(&s).unwrap();
        let f: Vec<f64> = r.table.iter().map(|row| row.terms["f_over_gamma"]).collect();
        assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
    }

    #[test]
    fn m0_hm_is_l2() {
        let mut s = Scenario::from_toml(WAVE).unwrap();
        s.verify.refinements = 0;
        assert_eq!(verify_hm_estimate(&s, 0).unwrap(), verify_l2_estimate(&s).unwrap());
    }

    #[test]
    fn incompatible_data_is_gated() {
        let src = WAVE.replace("data = { exact", "data = { u0").replace("\"0\", \"sin(2*pi*z)*sin(2*pi*t)\"", "\"0\", \"cos(z)\"");
        let s = Scenario::from_toml(&src).unwrap();
        assert!(matches!(verify_hm_estimate(&s, 1), Err(Error::CompatibilityFailure { .. })));
    }

    #[test]
    fn cancellation_campaign_is_reproducible() {
        let a = cancellation_campaign(7, 20, 1e-13);
        let b = cancellation_campaign(7, 20, 1e-13);
        assert_eq!(a, b);
        assert!(a.pass, "{a:?}");
    }

    #[test]
    fn quartic_hessian_oracle() {
        let p = Poly { terms: vec![(2.0, [2, 1, 1]), (-1.0, [0, 0, 4])] };
        // ∂x∂x (2x²yz) = 4yz, ∂x∂y = 4xz, ∂z∂z(-z⁴) = -12z²
        let h = p.hessian(&[1.0, 2.0, 3.0]);
        assert_eq!(h[(0, 0)], 24.0);
        assert_eq!(h[(0, 1)], 12.0);
        assert_eq!(h[(1, 0)], 12.0);
        assert_eq!(h[(2, 2)], -108.0);
        assert_eq!(h[(0, 2)], 8.0);
    }

    #[test]
    fn cli_usage_and_gate_codes() {
        assert_eq!(run_cli(["maxwell-ibvp", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_cli(["maxwell-ibvp", "verify-cancellation", "--random-seed", "7", "--trials", "5"]), EXIT_OK);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        let src = WAVE.replace("data = { exact", "data = { u0").replace("\"0\", \"sin(2*pi*z)*sin(2*pi*t)\"", "\"0\", \"cos(z)\"");
        std::fs::write(&path, src).unwrap();
        let p = path.to_str().unwrap();
        assert_eq!(run_cli(["maxwell-ibvp", "check-compat", "--order", "2", p]), EXIT_FAIL);
        assert_eq!(run_cli(["maxwell-ibvp", "simulate", "/nonexistent.toml"]), EXIT_ERROR);
    }
}
