//! Problem data `(A, f, g, u0)` and closed-form reference solutions.

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{self, Field, Grid};
use crate::materials::{CoefficientSet, MaterialLaw};
use crate::scalar::Real;
use crate::structmat::curl_coefficient;

/// Right-hand side `f` of `A0 ∂t u + Σ A_j ∂_j u + D u = f`.
#[derive(Clone, Debug)]
pub enum Source<T> {
    Zero,
    Closed(Vec<Expr>),
    Sampled { times: Vec<T>, frames: Vec<Field<T>> },
}

impl<T: Real> Source<T> {
    /// From a current density: `f = (-J, 0)`.
    pub fn from_current(j: &[Expr; 3]) -> Self {
        let mut v: Vec<Expr> = j.iter().map(Expr::neg).collect();
        v.extend(std::iter::repeat_n(Expr::zero(), 3));
        Self::closed(v)
    }

    pub fn closed(v: Vec<Expr>) -> Self {
        if v.iter().all(Expr::is_zero) {
            Source::Zero
        } else {
            Source::Closed(v)
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    pub fn exprs(&self) -> Option<Vec<Expr>> {
        match self {
            Source::Zero => Some(vec![Expr::zero(); 6]),
            Source::Closed(v) => Some(v.clone()),
            Source::Sampled { .. } => None,
        }
    }

    /// `∂t^l f(t)` on the grid; `None` when identically zero.
    pub fn dt_at(&self, grid: &Grid<T>, t: T, l: usize) -> Option<Field<T>> {
        match self {
            Source::Zero => None,
            Source::Closed(v) => {
                let d: Vec<Expr> = v.iter().map(|e| e.diff_n(Var::T, l)).collect();
                if d.iter().all(Expr::is_zero) {
                    None
                } else {
                    Some(grid::sample(grid, &d, t))
                }
            }
            Source::Sampled { times, frames } => {
                let n = times.len();
                let i = times.iter().position(|s| *s >= t).unwrap_or(n - 1);
                match l {
                    0 => Some(frames[i].clone()),
                    1 if n >= 2 => {
                        let (a, b) = if i == 0 { (0, 1) } else { (i - 1, i) };
                        Some(frames[b].sub(&frames[a]).scale(T::one() / (times[b] - times[a])))
                    }
                    _ => None,
                }
            }
        }
    }
}

/// Wall-supported correction `h = Σ_p b_p x3^p / p! · c(x3)`.
#[derive(Clone, Debug)]
pub struct WallLift<T> {
    /// `b_p` on the wall plane (6 components per node).
    pub traces: Vec<Field<T>>,
    /// Cutoff `c = 1` on `x3 <= a`, `0` on `x3 >= b`.
    pub cutoff: (f64, f64),
}

impl<T: Real> WallLift<T> {
    pub fn default_cutoff(grid: &Grid<T>) -> (f64, f64) {
        let lz = grid.lengths[2].to_f64_lossy();
        (0.25 * lz, 0.5 * lz)
    }

    pub fn cutoff_expr(&self) -> Expr {
        Expr::cutoff(&Expr::x(2), self.cutoff.0, self.cutoff.1)
    }

    /// Sample `h` on the grid.
    pub fn field(&self, grid: &Grid<T>) -> Field<T> {
        let c = self.cutoff_expr();
        let np = grid.plane_len();
        let profile: Vec<Vec<T>> = (0..grid.nz())
            .map(|k| {
                let z = grid.coord(2, k);
                let ck: T = c.eval(&[T::zero(), T::zero(), T::zero(), z]);
                let mut fact = T::one();
                (0..self.traces.len())
                    .map(|p| {
                        if p > 0 {
                            fact *= T::from_usize_lossy(p);
                        }
                        z.powi(p as i32) / fact * ck
                    })
                    .collect()
            })
            .collect();
        Field::from_fn(grid, 6, |node, _, out| {
            let (k, n) = (node / np, node % np);
            for (p, b) in self.traces.iter().enumerate() {
                let w = profile[k][p];
                if w != T::zero() {
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += w * b.get(n, c);
                    }
                }
            }
        })
    }

    /// `∂3^q h` on the wall (`c ≡ 1` near the wall, so this is `b_q`).
    pub fn normal_jet(&self, q: usize, np: usize) -> Field<T> {
        self.traces.get(q).cloned().unwrap_or_else(|| Field {
            ncomp: 6,
            data: vec![T::zero(); np * 6],
        })
    }
}

#[derive(Clone, Debug)]
pub enum InitialData<T> {
    Closed { exprs: Vec<Expr>, lift: Option<WallLift<T>> },
    Sampled(Field<T>),
}

impl<T: Real> InitialData<T> {
    pub fn closed(exprs: Vec<Expr>) -> Self {
        InitialData::Closed { exprs, lift: None }
    }

    pub fn sample(&self, grid: &Grid<T>, t0: T) -> Field<T> {
        match self {
            InitialData::Closed { exprs, lift } => {
                let base = grid::sample(grid, exprs, t0);
                match lift {
                    Some(l) => base.axpy(T::one(), &l.field(grid)),
                    None => base,
                }
            }
            InitialData::Sampled(f) => f.clone(),
        }
    }
}

/// Coefficients plus data of one initial boundary value problem.
#[derive(Clone, Debug)]
pub struct Problem<T: Real> {
    pub coeffs: CoefficientSet<T>,
    pub t0: T,
    pub f: Source<T>,
    /// `g = B u` on the wall, functions of `(t, x1, x2)`.
    pub g: [Expr; 2],
    pub u0: InitialData<T>,
    /// Closed-form solution when known.
    pub exact: Option<Vec<Expr>>,
}

impl<T: Real> Problem<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.coeffs.grid
    }

    pub fn homogeneous_boundary(&self) -> bool {
        self.g.iter().all(Expr::is_zero)
    }

    pub fn u0_field(&self) -> Field<T> {
        self.u0.sample(self.grid(), self.t0)
    }

    /// Every ingredient available in closed form.
    pub fn is_closed(&self) -> bool {
        self.coeffs.law().is_some_and(|l| l.is_closed())
            && !matches!(self.f, Source::Sampled { .. })
            && matches!(self.u0, InitialData::Closed { .. })
    }

    /// `∂t^p g(t)` on the wall plane.
    pub fn g_dt_wall(&self, t: T, p: usize) -> Field<T> {
        let grid = self.grid();
        let d: Vec<Expr> = self.g.iter().map(|e| e.diff_n(Var::T, p)).collect();
        Field::from_fn(&wall_grid(grid), 2, |n, _, out| {
            let q = grid.point(n);
            for (o, e) in out.iter_mut().zip(&d) {
                *o = e.eval(&[t, q[0], q[1], T::zero()]);
            }
        })
    }

    /// Exact solution sampled at `t`, if known.
    pub fn exact_at(&self, t: T) -> Option<Field<T>> {
        self.exact.as_ref().map(|e| grid::sample(self.grid(), e, t))
    }

    /// Same data with different coefficients.
    pub fn with_coefficients(&self, coeffs: CoefficientSet<T>) -> Self {
        Problem { coeffs, ..self.clone() }
    }
}

/// A grid with a single `x3` layer pattern for wall-plane sampling: the
/// first `plane_len` nodes coincide with the wall.
fn wall_grid<T: Real>(grid: &Grid<T>) -> Grid<T> {
    Grid {
        lengths: grid.lengths,
        counts: [grid.nx(), grid.ny(), 1],
    }
}

/// Zero-initialized wall-plane field.
pub fn wall_field<T: Real>(grid: &Grid<T>, ncomp: usize) -> Field<T> {
    Field {
        ncomp,
        data: vec![T::zero(); grid.plane_len() * ncomp],
    }
}

/// `B u = (u2, -u1)` as boundary expressions at `x3 = 0`.
pub fn wall_data_of(u: &[Expr]) -> [Expr; 2] {
    let z = Expr::zero();
    [u[1].subst(Var::X3, &z), u[0].subst(Var::X3, &z).neg()]
}

/// `f = A0 ∂t u + Σ_j A_j^co ∂_j u + D u` for a closed-form law and field.
pub fn manufactured_source<T: Real>(law: &MaterialLaw<T>, u: &[Expr]) -> Result<Vec<Expr>> {
    let a0 = law
        .a0_expr(0)
        .ok_or_else(|| Error::Invalid("manufactured data needs a closed-form law".into()))?;
    let d = law.d_expr(0).expect("closed law");
    let a: [_; 3] = std::array::from_fn(curl_coefficient::<f64>);
    let du: Vec<Vec<Expr>> = [Var::T, Var::X1, Var::X2, Var::X3]
        .iter()
        .map(|v| u.iter().map(|e| e.diff(*v)).collect())
        .collect();
    Ok((0..6)
        .map(|i| {
            let mut acc = Expr::zero();
            for k in 0..6 {
                acc = acc.add(&a0[i * 6 + k].mul(&du[0][k]));
                acc = acc.add(&d[i * 6 + k].mul(&u[k]));
                for j in 0..3 {
                    let c = a[j][(i, k)];
                    if c != 0.0 {
                        acc = acc.add(&Expr::constant(c).mul(&du[j + 1][k]));
                    }
                }
            }
            acc
        })
        .collect())
}

/// Problem whose exact solution is `u`: `f`, `g`, `u0` derived from it.
pub fn manufactured<T: Real>(coeffs: CoefficientSet<T>, u: Vec<Expr>, t0: T) -> Result<Problem<T>> {
    let law = coeffs
        .law()
        .ok_or_else(|| Error::Invalid("manufactured data needs a material law".into()))?;
    let f = manufactured_source(law, &u)?;
    Ok(Problem {
        t0,
        f: Source::closed(f),
        g: wall_data_of(&u),
        u0: InitialData::closed(u.clone()),
        exact: Some(u),
        coeffs,
    })
}

/// Vacuum standing wave `E2 = sin(k x3) sin(k t)`, `H1 = -cos(k x3) cos(k t)`.
pub fn standing_wave(k: f64) -> Vec<Expr> {
    let kz = Expr::constant(k).mul(&Expr::x(2));
    let kt = Expr::constant(k).mul(&Expr::t());
    vec![
        Expr::zero(),
        kz.sin().mul(&kt.sin()),
        Expr::zero(),
        kz.cos().mul(&kt.cos()).neg(),
        Expr::zero(),
        Expr::zero(),
    ]
}

/// Vacuum PEC cavity mode with `ω² = a² + c²`, invariant in `x2`.
pub fn pec_mode(a: f64, c: f64) -> Vec<Expr> {
    let w = (a * a + c * c).sqrt();
    let ax = Expr::constant(a).mul(&Expr::x(0));
    let cz = Expr::constant(c).mul(&Expr::x(2));
    let wt = Expr::constant(w).mul(&Expr::t());
    vec![
        Expr::zero(),
        cz.sin().mul(&ax.cos()).mul(&wt.sin()),
        Expr::zero(),
        Expr::constant(-c / w).mul(&cz.cos()).mul(&ax.cos()).mul(&wt.cos()),
        Expr::zero(),
        Expr::constant(-a / w).mul(&cz.sin()).mul(&ax.sin()).mul(&wt.cos()),
    ]
}

/// Homogeneous problem with exact solution `u` (requires `f = 0`, `g = 0`).
pub fn free_wave<T: Real>(coeffs: CoefficientSet<T>, u: Vec<Expr>, t0: T) -> Problem<T> {
    Problem {
        coeffs,
        t0,
        f: Source::Zero,
        g: [Expr::zero(), Expr::zero()],
        u0: InitialData::closed(u.clone()),
        exact: Some(u),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::assemble_coefficients;
    use std::f64::consts::PI;

    #[test]
    fn reference_solutions_have_zero_residual() {
        let law = MaterialLaw::<f64>::vacuum();
        for u in [standing_wave(2.0 * PI), pec_mode(2.0 * PI, 3.0 * PI)] {
            let f = manufactured_source(&law, &u).unwrap();
            for e in &f {
                for at in [[0.1, 0.2, 0.3, 0.4], [0.7, 0.9, 0.1, 0.05]] {
                    assert!(e.eval::<f64>(&at).abs() < 1e-12, "{e}");
                }
            }
            let g = wall_data_of(&u);
            for e in &g {
                assert!(e.eval_f64(0.3, [0.2, 0.1, 0.0]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lift_has_prescribed_normal_derivatives() {
        let grid = Grid::new([1.0, 1.0, 1.0], [4, 4, 257]).unwrap();
        let np = grid.plane_len();
        let mut b1 = wall_field(&grid, 6);
        for n in 0..np {
            b1.set(n, 0, 1.0 + n as f64);
        }
        let lift = WallLift {
            traces: vec![wall_field(&grid, 6), b1.clone()],
            cutoff: WallLift::<f64>::default_cutoff(&grid),
        };
        let h = lift.field(&grid);
        let dz = grid::diff(&grid, &h, 2);
        for n in 0..np {
            assert_eq!(h.get(n, 0), 0.0);
            assert!((dz.get(n, 0) - b1.get(n, 0)).abs() < 1e-12);
        }
        assert_eq!(h.get(grid.len() - 1, 0), 0.0);
    }

    #[test]
    fn current_maps_to_negative_source() {
        let grid = Grid::new([1.0, 1.0, 1.0], [2, 2, 4]).unwrap();
        let s = Source::<f64>::from_current(&[Expr::one(), Expr::zero(), Expr::t()]);
        let f = s.dt_at(&grid, 2.0, 0).unwrap();
        assert_eq!(f.node(0), &[-1.0, 0.0, -2.0, 0.0, 0.0, 0.0]);
        let c = assemble_coefficients(&MaterialLaw::vacuum(), &grid, &[0.0]).unwrap();
        let p = free_wave(c, standing_wave(1.0), 0.0);
        assert!(p.is_closed() && p.homogeneous_boundary());
    }
}
