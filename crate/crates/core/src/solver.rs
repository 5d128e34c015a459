//! Explicit finite-difference evolution of the half-space problem with a
//! perfectly conducting wall at `x3 = 0` and a second one at the cap.
//!
//! Collocated grid, centered differences, classical RK4. Tangential
//! directions are periodic. The tangential electric field is held at zero on
//! both walls by zeroing its rate of change there. Inhomogeneous wall data
//! are handled by evolving `w = u − L` with the closed-form lift
//! `L = (−g2 c, g1 c, 0, 0, 0, 0)`, `c` a cutoff in `x3`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{self, Field, Grid, NodeField};
use crate::linalg::{self, Mat6, Vec6};
use crate::materials::CoefficientSet;
use crate::problem::Problem;
use crate::scalar::Real;
use crate::spaces::TimeSeries;

/// Normal-derivative closure at the two walls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Summation-by-parts: `(u1 − u0)/h` at the wall, centered inside.
    #[default]
    Sbp,
    /// Second-order one-sided `(−3u0 + 4u1 − u2)/2h`.
    OneSided,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub cfl: f64,
    /// Fixed step; must respect the CFL limit. Chosen from `cfl` when absent.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Snapshot every `snapshot_stride` steps (0 disables).
    pub snapshot_stride: usize,
    /// Additionally keep the first `keep_first` states.
    pub keep_first: usize,
    /// Energy/divergence/wall series every `diagnostics_stride` steps.
    pub diagnostics_stride: usize,
    pub closure: Closure,
    pub track_charge: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl: 0.4,
            dt: None,
            t_end: 1.0,
            snapshot_stride: 0,
            keep_first: 3,
            diagnostics_stride: 1,
            closure: Closure::Sbp,
            track_charge: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FieldState<T> {
    pub u: Field<T>,
    pub t: T,
    pub rho: Field<T>,
}

#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub step: usize,
    pub t: T,
    pub u: Field<T>,
    /// `∂t u` from the semi-discrete right-hand side.
    pub du: Field<T>,
}

#[derive(Clone, Debug)]
pub struct RunRecord<T> {
    pub dt: T,
    pub steps: usize,
    pub times: Vec<T>,
    pub energy: Vec<T>,
    pub r1: Vec<T>,
    pub r2: Vec<T>,
    pub wall_residual: Vec<T>,
    pub snapshots: Vec<Snapshot<T>>,
    pub early: Vec<Snapshot<T>>,
    pub final_state: FieldState<T>,
}

impl<T: Real> RunRecord<T> {
    /// `max_n |E_n − E_0| / E_0` (0 for a zero run).
    pub fn energy_drift(&self) -> T {
        let e0 = self.energy[0];
        if e0 == T::zero() {
            return T::zero();
        }
        self.energy.iter().fold(T::zero(), |m, e| m.max((*e - e0).abs() / e0))
    }

    /// Snapshot series with stored time derivatives.
    pub fn time_series(&self) -> TimeSeries<T> {
        TimeSeries {
            times: self.snapshots.iter().map(|s| s.t).collect(),
            values: self.snapshots.iter().map(|s| s.u.clone()).collect(),
            derivs: Some(self.snapshots.iter().map(|s| s.du.clone()).collect()),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,energy,r1,r2,wall_residual")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                self.times[i].to_f64_lossy(),
                self.energy[i].to_f64_lossy(),
                self.r1[i].to_f64_lossy(),
                self.r2[i].to_f64_lossy(),
                self.wall_residual[i].to_f64_lossy()
            )?;
        }
        Ok(())
    }

    /// Flat little-endian `f64` snapshots with JSON sidecars.
    pub fn write_snapshots(&self, grid: &Grid<T>, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for s in &self.snapshots {
            write_snapshot(grid, s, dir)?;
        }
        Ok(())
    }
}

pub fn write_snapshot<T: Real>(grid: &Grid<T>, s: &Snapshot<T>, dir: &Path) -> Result<()> {
    let stem = format!("u_{:06}", s.step);
    let mut bytes = Vec::with_capacity(s.u.data.len() * 8);
    for v in &s.u.data {
        bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    let meta = serde_json::json!({
        "t": s.t.to_f64_lossy(),
        "step": s.step,
        "dtype": "f64le",
        "layout": "node-major, node = (k*ny + j)*nx + i",
        "components": ["E1", "E2", "E3", "H1", "H2", "H3"],
        "counts": grid.counts,
        "lengths": grid.lengths.map(|l| l.to_f64_lossy()),
    });
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Largest stable step `cfl · h_min · λmin(A0) / max‖A_j‖` over `times`.
pub fn cfl_limit<T: Real>(coeffs: &CoefficientSet<T>, times: &[T], cfl: T) -> T {
    let lam = times
        .iter()
        .map(|t| coeffs.min_a0_eigenvalue(*t))
        .fold(T::infinity(), |a, b| a.min(b));
    cfl * coeffs.grid.min_spacing() * lam / coeffs.max_spatial_norm()
}

#[inline]
fn normal_diff<T: Real>(grid: &Grid<T>, u: &[T], i: usize, j: usize, k: usize, c: usize, closure: Closure) -> T {
    let nz = grid.nz();
    let h = grid.spacing(2);
    let at = |kk: usize| u[grid.index(i, j, kk) * 6 + c];
    let half = T::lit(0.5);
    if k == 0 {
        match closure {
            Closure::Sbp => (at(1) - at(0)) / h,
            Closure::OneSided => (-T::lit(3.0) * at(0) + T::lit(4.0) * at(1) - at(2)) * half / h,
        }
    } else if k + 1 == nz {
        match closure {
            Closure::Sbp => (at(nz - 1) - at(nz - 2)) / h,
            Closure::OneSided => (T::lit(3.0) * at(nz - 1) - T::lit(4.0) * at(nz - 2) + at(nz - 3)) * half / h,
        }
    } else {
        (at(k + 1) - at(k - 1)) * half / h
    }
}

#[inline]
fn tangential_diff<T: Real>(grid: &Grid<T>, u: &[T], axis: usize, i: usize, j: usize, k: usize, c: usize) -> T {
    let half = T::lit(0.5);
    let h = grid.spacing(axis);
    let (p, m) = if axis == 0 {
        let n = grid.nx();
        (grid.index((i + 1) % n, j, k), grid.index((i + n - 1) % n, j, k))
    } else {
        let n = grid.ny();
        (grid.index(i, (j + 1) % n, k), grid.index(i, (j + n - 1) % n, k))
    };
    (u[p * 6 + c] - u[m * 6 + c]) * half / h
}

/// `(Σ_j A_j ∂_j u)` at one node with the solver's stencils.
#[inline]
fn flux_at<T: Real>(
    grid: &Grid<T>,
    a: &[NodeField<Mat6<T>>; 3],
    u: &[T],
    node: usize,
    closure: Closure,
) -> Vec6<T> {
    let [i, j, k] = grid.ijk(node);
    let mut acc = Vec6::zeros();
    for (axis, aj) in a.iter().enumerate() {
        if axis < 2 && grid.counts[axis] == 1 {
            continue;
        }
        let d = Vec6::from_fn(|c, _| {
            if axis == 2 {
                normal_diff(grid, u, i, j, k, c, closure)
            } else {
                tangential_diff(grid, u, axis, i, j, k, c)
            }
        });
        acc += aj.at(node) * d;
    }
    acc
}

struct Lift {
    /// `L`, `∂t L`, `∂_j L` (6 entries each).
    l: Vec<Expr>,
    lt: Vec<Expr>,
    lx: [Vec<Expr>; 3],
    /// Planes `k < active` carry the lift.
    active: usize,
}

impl Lift {
    fn new<T: Real>(grid: &Grid<T>, g: &[Expr; 2]) -> Option<Self> {
        if g.iter().all(Expr::is_zero) {
            return None;
        }
        let lz = grid.lengths[2].to_f64_lossy();
        let (a, b) = (0.25 * lz, 0.5 * lz);
        let c = Expr::cutoff(&Expr::x(2), a, b);
        let z = Expr::zero();
        let l = vec![g[1].mul(&c).neg(), g[0].mul(&c), z.clone(), z.clone(), z.clone(), z];
        let lt = l.iter().map(|e| e.diff(Var::T)).collect();
        let lx = std::array::from_fn(|j| l.iter().map(|e| e.diff(Var::space(j))).collect());
        let h = grid.spacing(2).to_f64_lossy();
        let active = ((b / h).ceil() as usize + 1).min(grid.nz());
        Some(Lift { l, lt, lx, active })
    }

    fn sample<T: Real>(&self, grid: &Grid<T>, exprs: &[Expr], t: T) -> Field<T> {
        let np = grid.plane_len();
        let mut out = Field::zeros(grid, 6);
        out.data[..self.active * np * 6]
            .par_chunks_mut(6)
            .enumerate()
            .for_each(|(n, o)| {
                let p = grid.point(n);
                let at = [t, p[0], p[1], p[2]];
                for (v, e) in o.iter_mut().zip(exprs) {
                    *v = e.eval(&at);
                }
            });
        out
    }
}

/// Time-stepper for one problem.
pub struct Solver<T: Real> {
    pub problem: Problem<T>,
    pub config: SolverConfig,
    pub dt: T,
    pub steps: usize,
    cached: Option<(NodeField<Mat6<T>>, NodeField<Mat6<T>>)>,
    lift: Option<Lift>,
}

fn inverse_field<T: Real>(a0: &NodeField<Mat6<T>>) -> Result<NodeField<Mat6<T>>> {
    let inv = |n: usize, m: &Mat6<T>| {
        linalg::inverse(m).ok_or(Error::SingularMass { node: n, min_eig: linalg::min_eigenvalue(m).to_f64_lossy() })
    };
    Ok(match a0 {
        NodeField::Uniform(m) => NodeField::Uniform(inv(0, m)?),
        NodeField::Nodal(v) => NodeField::Nodal(
            v.par_iter().enumerate().map(|(n, m)| inv(n, m)).collect::<Result<Vec<_>>>()?,
        ),
    })
}

impl<T: Real> Solver<T> {
    pub fn new(problem: Problem<T>, config: SolverConfig) -> Result<Self> {
        let t0 = problem.t0;
        let t_end = T::lit(config.t_end);
        if !(t_end >= t0) {
            return Err(Error::Invalid("t_end precedes t0".into()));
        }
        let limit = cfl_limit(&problem.coeffs, &[t0, (t0 + t_end) * T::lit(0.5), t_end], T::lit(config.cfl));
        let span = t_end - t0;
        let (dt, steps) = match config.dt {
            Some(dt) => {
                let dt = T::lit(dt);
                if dt > limit * T::lit(1.0 + 1e-12) {
                    return Err(Error::CflViolation { dt: dt.to_f64_lossy(), limit: limit.to_f64_lossy() });
                }
                (dt, (span / dt).round().to_f64_lossy() as usize)
            }
            None => {
                let n = (span / limit).ceil().to_f64_lossy().max(1.0) as usize;
                (span / T::from_usize_lossy(n), n)
            }
        };
        let cached = if problem.coeffs.is_time_independent() {
            Some((inverse_field(&problem.coeffs.a0_at(t0))?, problem.coeffs.d_at(t0)))
        } else {
            None
        };
        let lift = Lift::new(problem.grid(), &problem.g);
        Ok(Solver { problem, config, dt, steps, cached, lift })
    }

    pub fn grid(&self) -> &Grid<T> {
        self.problem.grid()
    }

    fn lift_at(&self, t: T) -> Option<Field<T>> {
        self.lift.as_ref().map(|l| l.sample(self.grid(), &l.l, t))
    }

    fn lift_rate(&self, t: T) -> Option<Field<T>> {
        self.lift.as_ref().map(|l| l.sample(self.grid(), &l.lt, t))
    }

    /// `∂t w` for the homogeneous-wall unknown `w`.
    pub fn rhs(&self, w: &Field<T>, t: T) -> Result<Field<T>> {
        let grid = self.grid();
        let coeffs = &self.problem.coeffs;
        let owned;
        let (a0inv, d) = match &self.cached {
            Some((a, d)) => (a, d),
            None => {
                owned = (inverse_field(&coeffs.a0_at(t))?, coeffs.d_at(t));
                (&owned.0, &owned.1)
            }
        };
        let f = self.problem.f.dt_at(grid, t, 0);
        // forcing from the lift: A0 ∂tL + Σ A_j ∂_j L + D L
        let lift_forcing = self.lift.as_ref().map(|l| {
            let a0 = coeffs.a0_at(t);
            let lv = l.sample(grid, &l.l, t);
            let lt = l.sample(grid, &l.lt, t);
            let lx: Vec<Field<T>> = l.lx.iter().map(|e| l.sample(grid, e, t)).collect();
            let np = grid.plane_len();
            let mut out = Field::zeros(grid, 6);
            out.data[..l.active * np * 6]
                .par_chunks_mut(6)
                .enumerate()
                .for_each(|(n, o)| {
                    let mut r = a0.at(n) * lt.vec6(n) + d.at(n) * lv.vec6(n);
                    for j in 0..3 {
                        r += coeffs.a[j].at(n) * lx[j].vec6(n);
                    }
                    o.copy_from_slice(r.as_slice());
                });
            out
        });
        let closure = self.config.closure;
        let nz = grid.nz();
        let np = grid.plane_len();
        let mut out = Field::zeros(grid, 6);
        out.data.par_chunks_mut(6).enumerate().for_each(|(n, o)| {
            let mut r = -flux_at(grid, &coeffs.a, &w.data, n, closure) - d.at(n) * w.vec6(n);
            if let Some(f) = &f {
                r += f.vec6(n);
            }
            if let Some(lf) = &lift_forcing {
                r -= lf.vec6(n);
            }
            let v = a0inv.at(n) * r;
            o.copy_from_slice(v.as_slice());
            let k = n / np;
            if k == 0 || k + 1 == nz {
                o[0] = T::zero();
                o[1] = T::zero();
            }
        });
        Ok(out)
    }

    /// One RK4 step of `w` from `t`.
    pub fn step_w(&self, w: &Field<T>, t: T) -> Result<Field<T>> {
        let dt = self.dt;
        let half = dt * T::lit(0.5);
        let k1 = self.rhs(w, t)?;
        let k2 = self.rhs(&w.axpy(half, &k1), t + half)?;
        let k3 = self.rhs(&w.axpy(half, &k2), t + half)?;
        let k4 = self.rhs(&w.axpy(dt, &k3), t + dt)?;
        let sixth = dt / T::lit(6.0);
        let mut out = w.clone();
        out.data.par_iter_mut().enumerate().for_each(|(i, v)| {
            *v += sixth * (k1.data[i] + T::lit(2.0) * (k2.data[i] + k3.data[i]) + k4.data[i]);
        });
        Ok(out)
    }

    /// Advance a physical state `u` by one step.
    pub fn step(&self, state: &FieldState<T>) -> Result<FieldState<T>> {
        let w = self.to_w(&state.u, state.t);
        let t1 = state.t + self.dt;
        let w1 = self.step_w(&w, state.t)?;
        let u1 = self.to_u(w1, t1);
        let rho = if self.config.track_charge {
            let q0 = charge_flux(&self.problem, &state.u, state.t);
            let q1 = charge_flux(&self.problem, &u1, t1);
            update_charge(&state.rho, &q0, &q1, self.dt)
        } else {
            state.rho.clone()
        };
        Ok(FieldState { u: u1, t: t1, rho })
    }

    fn to_w(&self, u: &Field<T>, t: T) -> Field<T> {
        match self.lift_at(t) {
            Some(l) => u.sub(&l),
            None => u.clone(),
        }
    }

    fn to_u(&self, w: Field<T>, t: T) -> Field<T> {
        match self.lift_at(t) {
            Some(l) => w.axpy(T::one(), &l),
            None => w,
        }
    }

    /// `∂t u` of the semi-discrete system at a physical state.
    pub fn rate(&self, u: &Field<T>, t: T) -> Result<Field<T>> {
        let dw = self.rhs(&self.to_w(u, t), t)?;
        Ok(match self.lift_rate(t) {
            Some(l) => dw.axpy(T::one(), &l),
            None => dw,
        })
    }

    pub fn initial_state(&self) -> FieldState<T> {
        let u = self.problem.u0_field();
        let rho = initial_charge(&self.problem.coeffs, &u, self.problem.t0);
        FieldState { u, t: self.problem.t0, rho }
    }

    pub fn run(&self) -> Result<RunRecord<T>> {
        let mut state = self.initial_state();
        let mut rec = RunRecord {
            dt: self.dt,
            steps: self.steps,
            times: vec![],
            energy: vec![],
            r1: vec![],
            r2: vec![],
            wall_residual: vec![],
            snapshots: vec![],
            early: vec![],
            final_state: state.clone(),
        };
        let cfg = &self.config;
        let mut w = self.to_w(&state.u, state.t);
        let mut q_prev = cfg.track_charge.then(|| charge_flux(&self.problem, &state.u, state.t));
        for n in 0..=self.steps {
            let last = n == self.steps;
            if n > 0 {
                let t_prev = state.t;
                w = self.step_w(&w, t_prev)?;
                state.t = self.problem.t0 + self.dt * T::from_usize_lossy(n);
                state.u = self.to_u(w.clone(), state.t);
                if !state.u.is_finite() {
                    return Err(Error::NonFiniteField { step: n, t: state.t.to_f64_lossy() });
                }
                if let Some(q0) = &q_prev {
                    let q1 = charge_flux(&self.problem, &state.u, state.t);
                    state.rho = update_charge(&state.rho, q0, &q1, self.dt);
                    q_prev = Some(q1);
                }
            }
            if n % cfg.diagnostics_stride.max(1) == 0 || last {
                let (r1, r2) = divergence_residuals(&state, &self.problem.coeffs);
                rec.times.push(state.t);
                rec.energy.push(energy(&self.problem.coeffs, &state.u, state.t));
                rec.r1.push(r1);
                rec.r2.push(r2);
                rec.wall_residual.push(wall_condition_residual(&state, &self.problem.coeffs));
            }
            let snap = cfg.snapshot_stride > 0 && (n % cfg.snapshot_stride == 0 || last);
            if snap || n < cfg.keep_first {
                let s = Snapshot { step: n, t: state.t, u: state.u.clone(), du: self.rate(&state.u, state.t)? };
                if n < cfg.keep_first {
                    rec.early.push(s.clone());
                }
                if snap {
                    rec.snapshots.push(s);
                }
            }
        }
        rec.final_state = state;
        Ok(rec)
    }
}

/// `∫ uᵀ A0(t) u` with trapezoid weights, summed plane by plane in order.
pub fn energy<T: Real>(coeffs: &CoefficientSet<T>, u: &Field<T>, t: T) -> T {
    let grid = &coeffs.grid;
    let a0 = coeffs.a0_at(t);
    let np = grid.plane_len();
    let planes: Vec<T> = (0..grid.nz())
        .into_par_iter()
        .map(|k| {
            let mut acc = T::zero();
            for n in k * np..(k + 1) * np {
                let v = u.vec6(n);
                acc += v.dot(&(a0.at(n) * v));
            }
            acc * grid.z_weight(k)
        })
        .collect();
    planes.iter().fold(T::zero(), |a, b| a + *b) * grid.wall_weight()
}

fn divergence<T: Real>(grid: &Grid<T>, v: &Field<T>) -> Field<T> {
    let mut out = Field::zeros(grid, 1);
    out.data.par_iter_mut().enumerate().for_each(|(n, o)| {
        *o = (0..3).map(|a| grid::diff_at(grid, v, a, n, a)).fold(T::zero(), |x, y| x + y);
    });
    out
}

fn tensor_apply<T: Real>(grid: &Grid<T>, m: &NodeField<crate::linalg::Mat3<T>>, u: &Field<T>, off: usize) -> Field<T> {
    Field::from_fn(grid, 3, |n, _, o| {
        let v = nalgebra::Vector3::new(u.get(n, off), u.get(n, off + 1), u.get(n, off + 2));
        o.copy_from_slice((m.at(n) * v).as_slice());
    })
}

fn upper_block<T: Real>(m: &NodeField<Mat6<T>>, row: usize) -> NodeField<crate::linalg::Mat3<T>> {
    m.map(|x| x.fixed_view::<3, 3>(row, row).clone_owned())
}

/// `div(ε(t0) E0)`.
pub fn initial_charge<T: Real>(coeffs: &CoefficientSet<T>, u: &Field<T>, t0: T) -> Field<T> {
    let eps = upper_block(&coeffs.a0_at(t0), 0);
    divergence(&coeffs.grid, &tensor_apply(&coeffs.grid, &eps, u, 0))
}

/// `div(σE + J)` with `J = −f_E`.
pub fn charge_flux<T: Real>(problem: &Problem<T>, u: &Field<T>, t: T) -> Field<T> {
    let grid = problem.grid();
    let sigma = problem.coeffs.sigma_at(t);
    let mut flux = tensor_apply(grid, &sigma, u, 0);
    if let Some(f) = problem.f.dt_at(grid, t, 0) {
        flux = flux.axpy(-T::one(), &f.components(0..3));
    }
    divergence(grid, &flux)
}

/// Trapezoidal update `ρ ← ρ − dt/2 (q_old + q_new)`.
pub fn update_charge<T: Real>(rho: &Field<T>, q_old: &Field<T>, q_new: &Field<T>, dt: T) -> Field<T> {
    let h = dt * T::lit(0.5);
    rho.axpy(-h, q_old).axpy(-h, q_new)
}

/// `(‖div(εE) − ρ‖, ‖div(μH)‖)` in `L²`.
pub fn divergence_residuals<T: Real>(state: &FieldState<T>, coeffs: &CoefficientSet<T>) -> (T, T) {
    let grid = &coeffs.grid;
    let a0 = coeffs.a0_at(state.t);
    let de = divergence(grid, &tensor_apply(grid, &upper_block(&a0, 0), &state.u, 0)).sub(&state.rho);
    let dh = divergence(grid, &tensor_apply(grid, &upper_block(&a0, 3), &state.u, 3));
    (de.l2_norm(grid), dh.l2_norm(grid))
}

/// `‖(μH)·ν‖_{L²(wall)}`.
pub fn wall_condition_residual<T: Real>(state: &FieldState<T>, coeffs: &CoefficientSet<T>) -> T {
    let grid = &coeffs.grid;
    let a0 = coeffs.a0_at(state.t);
    let mut acc = T::zero();
    for n in 0..grid.plane_len() {
        let m = a0.at(n);
        let v = (3..6).fold(T::zero(), |s, c| s + m[(5, c)] * state.u.get(n, c));
        acc += v * v;
    }
    (acc * grid.wall_weight()).sqrt()
}

/// `L²` distance between a field and the sampled exact solution.
pub fn l2_error<T: Real>(problem: &Problem<T>, u: &Field<T>, t: T) -> Option<T> {
    problem.exact_at(t).map(|e| u.sub(&e).l2_norm(problem.grid()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{assemble_coefficients, MaterialLaw, TensorExpr};
    use crate::problem::{free_wave, manufactured, pec_mode, standing_wave, InitialData};
    use std::f64::consts::PI;

    fn wave_problem(n: usize, nz: usize) -> Problem<f64> {
        let g = Grid::new([1.0, 1.0, 1.0], [n, n, nz]).unwrap();
        let c = assemble_coefficients(&MaterialLaw::vacuum(), &g, &[0.0]).unwrap();
        free_wave(c, standing_wave(2.0 * PI), 0.0)
    }

    #[test]
    fn zero_stays_zero() {
        let g = Grid::new([1.0, 1.0, 1.0], [4, 4, 9]).unwrap();
        let eps = TensorExpr::parse(&[
            vec!["2 + sin(x)".into(), "0.1".into(), "0".into()],
            vec!["0.1".into(), "1".into(), "0".into()],
            vec!["0".into(), "0".into(), "1 + 0.1*t".into()],
        ])
        .unwrap();
        let law = MaterialLaw::closed(eps, TensorExpr::identity(), TensorExpr::identity());
        let c = assemble_coefficients(&law, &g, &[0.0]).unwrap();
        let p = free_wave(c, vec![Expr::zero(); 6], 0.0);
        let s = Solver::new(p, SolverConfig { t_end: 0.2, ..Default::default() }).unwrap();
        let r = s.run().unwrap();
        assert!(r.final_state.u.data.iter().all(|v| *v == 0.0));
        assert!(r.energy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_is_enforced() {
        let p = wave_problem(4, 9);
        let cfg = SolverConfig { dt: Some(0.1), ..Default::default() };
        assert!(matches!(Solver::new(p, cfg), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn standing_wave_second_order() {
        let mut errs = vec![];
        for nz in [17, 33, 65] {
            let p = wave_problem(4, nz);
            let s = Solver::new(p.clone(), SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
            let r = s.run().unwrap();
            errs.push(l2_error(&p, &r.final_state.u, 1.0).unwrap());
            assert_eq!(r.wall_residual.iter().cloned().fold(0.0, f64::max), 0.0);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.5, "{errs:?}");
        }
    }

    #[test]
    fn energy_conserved_for_vacuum() {
        let p = wave_problem(4, 33);
        let s = Solver::new(p, SolverConfig { t_end: 2.0, ..Default::default() }).unwrap();
        let r = s.run().unwrap();
        assert!(r.energy_drift() < 1e-6, "{}", r.energy_drift());
    }

    #[test]
    fn charge_constant_without_current() {
        let g = Grid::new([2.0 * PI, 1.0, 1.0], [16, 1, 17]).unwrap();
        let c = assemble_coefficients(&MaterialLaw::vacuum(), &g, &[0.0]).unwrap();
        let mut p = free_wave(c, pec_mode(1.0, PI), 0.0);
        let cfg = SolverConfig { t_end: 0.2, ..Default::default() };
        let s = Solver::new(p.clone(), cfg.clone()).unwrap();
        let r = s.run().unwrap();
        let rho0 = s.initial_state().rho;
        assert!(r.final_state.rho.sub(&rho0).max_abs() == 0.0);
        // a divergence-free current leaves ρ unchanged too
        p.f = crate::problem::Source::from_current(&[Expr::x(1).sin(), Expr::zero(), Expr::zero()]);
        p.exact = None;
        let s = Solver::new(p, cfg).unwrap();
        let r = s.run().unwrap();
        assert!(r.final_state.rho.sub(&rho0).max_abs() < 1e-12);
    }

    #[test]
    fn inhomogeneous_wall_data_via_lift() {
        let mut errs = vec![];
        for (n, nz) in [(32, 33), (64, 65)] {
            let g = Grid::new([2.0 * PI, 1.0, 1.0], [n, 1, nz]).unwrap();
            let c = assemble_coefficients(&MaterialLaw::vacuum(), &g, &[0.0]).unwrap();
            let u = vec![
                Expr::parse("cos(z) * sin(x + t) * (1 - z)").unwrap(),
                Expr::parse("sin(t) * cos(x) * (1 - z * z)").unwrap(),
                Expr::zero(),
                Expr::parse("z * cos(x)").unwrap(),
                Expr::zero(),
                Expr::parse("sin(x) * cos(t + z)").unwrap(),
            ];
            let p = manufactured(c, u, 0.0).unwrap();
            assert!(!p.homogeneous_boundary());
            let s = Solver::new(p.clone(), SolverConfig { t_end: 0.5, ..Default::default() }).unwrap();
            let r = s.run().unwrap();
            errs.push(l2_error(&p, &r.final_state.u, 0.5).unwrap());
        }
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn snapshots_and_outputs() {
        let p = wave_problem(4, 9);
        let cfg = SolverConfig { t_end: 0.1, snapshot_stride: 2, ..Default::default() };
        let s = Solver::new(p, cfg).unwrap();
        let r = s.run().unwrap();
        assert_eq!(r.early.len(), 3);
        assert_eq!(r.snapshots.first().unwrap().step, 0);
        assert_eq!(r.snapshots.last().unwrap().step, s.steps);
        let dir = tempfile::tempdir().unwrap();
        r.write_csv(&dir.path().join("series.csv")).unwrap();
        r.write_snapshots(s.grid(), dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
        assert!(csv.starts_with("t,energy,r1,r2,wall_residual\n"));
        assert_eq!(csv.lines().count(), r.times.len() + 1);
        let bin = std::fs::read(dir.path().join("u_000000.bin")).unwrap();
        assert_eq!(bin.len(), s.grid().len() * 6 * 8);
        let _ = InitialData::<f64>::closed(vec![]);
    }
}
