//! Chart transport of the curl structure and the normalizing transform
//! `u = G v` that restores `Ã3 = A3^co`.
//!
//! A chart `φ` maps original coordinates `x` to half-space coordinates
//! `y = φ(x)`; coefficients are evaluated at `x = φ⁻¹(y)`. Only the case
//! where the normal coordinate is `x3` after transport is handled.

use rayon::prelude::*;

use crate::divstruct::{decompose_mu, MuTilde};
use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{self, Field, Grid, NodeField};
use crate::linalg::{self, Mat3, Mat6, Vec6};
use crate::materials::{assemble_coefficients, MaterialLaw, TensorExpr, TensorLaw};
use crate::problem::{InitialData, Problem, Source};
use crate::scalar::Real;
use crate::structmat::curl_coefficient;

/// Default lower bound for `μ33`.
pub const DEFAULT_TAU: f64 = 0.1;

/// A diffeomorphism given by closed-form forward and inverse maps.
#[derive(Clone, Debug)]
pub struct Chart {
    pub name: String,
    pub forward: [Expr; 3],
    pub inverse: [Expr; 3],
}

impl Chart {
    pub fn identity() -> Self {
        let id = [Expr::x(0), Expr::x(1), Expr::x(2)];
        Chart { name: "identity".into(), forward: id.clone(), inverse: id }
    }

    pub fn parse(name: &str, forward: &[String], inverse: &[String]) -> Result<Self> {
        let p = |v: &[String]| -> Result<[Expr; 3]> {
            if v.len() != 3 {
                return Err(Error::Invalid("chart maps need three components".into()));
            }
            Ok([Expr::parse(&v[0])?, Expr::parse(&v[1])?, Expr::parse(&v[2])?])
        };
        Ok(Chart { name: name.into(), forward: p(forward)?, inverse: p(inverse)? })
    }

    /// Flattens the wall `x3 = a sin(x1)`: `y3 = x3 - a sin(x1)`.
    pub fn curved_wall(a: f64) -> Self {
        let s = Expr::constant(a).mul(&Expr::x(0).sin());
        Chart {
            name: format!("curved_wall({a})"),
            forward: [Expr::x(0), Expr::x(1), Expr::x(2).sub(&s)],
            inverse: [Expr::x(0), Expr::x(1), Expr::x(2).add(&s)],
        }
    }

    /// `y3 = x3 (1 + a sin(x2))`.
    pub fn normal_stretch(a: f64) -> Self {
        let w = Expr::one().add(&Expr::constant(a).mul(&Expr::x(1).sin()));
        Chart {
            name: format!("normal_stretch({a})"),
            forward: [Expr::x(0), Expr::x(1), Expr::x(2).mul(&w)],
            inverse: [Expr::x(0), Expr::x(1), Expr::x(2).div(&w)],
        }
    }

    /// Rotation by `theta` about the `x1` axis.
    pub fn tilt(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let k = Expr::constant;
        let (x2, x3) = (Expr::x(1), Expr::x(2));
        Chart {
            name: format!("tilt({theta})"),
            forward: [Expr::x(0), k(c).mul(&x2).sub(&k(s).mul(&x3)), k(s).mul(&x2).add(&k(c).mul(&x3))],
            inverse: [Expr::x(0), k(c).mul(&x2).add(&k(s).mul(&x3)), k(c).mul(&x3).sub(&k(s).mul(&x2))],
        }
    }

    /// `jac[l][j] = ∂_j φ_l` as functions of `x`.
    pub fn jacobian(&self) -> [[Expr; 3]; 3] {
        std::array::from_fn(|l| std::array::from_fn(|j| self.forward[l].diff(Var::space(j))))
    }

    /// `max |φ(φ⁻¹(y)) − y|` over the grid.
    pub fn inverse_residual<T: Real>(&self, grid: &Grid<T>) -> T {
        let back: Vec<Expr> = self.forward.iter().map(|e| e.compose_space(&self.inverse)).collect();
        let f = grid::sample(grid, &back, T::zero());
        (0..grid.len())
            .map(|n| {
                let p = grid.point(n);
                (0..3).fold(T::zero(), |m, i| m.max((f.get(n, i) - p[i]).abs()))
            })
            .fold(T::zero(), |a, b| a.max(b))
    }
}

fn sample_mat<T: Real>(grid: &Grid<T>, m: &TensorExpr) -> NodeField<Mat3<T>> {
    m.sample(grid, T::zero())
}

fn compose_law<T: Real>(law: &MaterialLaw<T>, map: &[Expr; 3], g: Option<&TensorExpr>) -> Result<MaterialLaw<T>> {
    let tr = |t: &TensorLaw<T>| -> Result<TensorLaw<T>> {
        let e = t
            .closed()
            .ok_or_else(|| Error::Invalid("chart transport needs closed-form material tensors".into()))?
            .compose_space(map);
        Ok(TensorLaw::Closed(match g {
            Some(g) => e.congruence(g),
            None => e,
        }))
    };
    Ok(MaterialLaw {
        epsilon: tr(&law.epsilon)?,
        mu: tr(&law.mu)?,
        sigma: tr(&law.sigma)?,
        eta: law.eta,
        limit: None,
    })
}

/// Transported operator on the half-space grid.
#[derive(Clone, Debug)]
pub struct ChartTransport<T: Real> {
    pub chart: Chart,
    pub grid: Grid<T>,
    pub tau: T,
    /// `jac_y[l][j] = ∂_j φ_l ∘ φ⁻¹`.
    pub jac_y: [[Expr; 3]; 3],
    /// `μ_{jl} = ∂_j φ_l ∘ φ⁻¹`, so that `A_l = Σ_j A_j^co μ_{jl}`.
    pub mu: NodeField<Mat3<T>>,
    pub a: [NodeField<Mat6<T>>; 3],
    /// Material law composed with `φ⁻¹`.
    pub law: MaterialLaw<T>,
}

impl<T: Real> ChartTransport<T> {
    /// `(μ13, μ23, μ33)` in closed form.
    pub fn mu3(&self) -> [Expr; 3] {
        [self.jac_y[2][0].clone(), self.jac_y[2][1].clone(), self.jac_y[2][2].clone()]
    }
}

pub fn transport_operator<T: Real>(
    chart: &Chart,
    law: &MaterialLaw<T>,
    grid: &Grid<T>,
    tau: T,
) -> Result<ChartTransport<T>> {
    let jac = chart.jacobian();
    let jac_y: [[Expr; 3]; 3] =
        std::array::from_fn(|l| std::array::from_fn(|j| jac[l][j].compose_space(&chart.inverse)));
    let mu = sample_mat(grid, &TensorExpr::from_fn(|j, l| jac_y[l][j].clone()));
    let bad = match &mu {
        NodeField::Uniform(m) => (!(m[(2, 2)] >= tau)).then_some((0, m[(2, 2)])),
        NodeField::Nodal(v) => v
            .iter()
            .enumerate()
            .find(|(_, m)| !(m[(2, 2)] >= tau))
            .map(|(n, m)| (n, m[(2, 2)])),
    };
    if let Some((n, m33)) = bad {
        let p = grid.point(n);
        return Err(Error::DegenerateChart {
            mu33: m33.to_f64_lossy(),
            tau: tau.to_f64_lossy(),
            location: format!(
                "node {n} (y = {:.4}, {:.4}, {:.4})",
                p[0].to_f64_lossy(),
                p[1].to_f64_lossy(),
                p[2].to_f64_lossy()
            ),
        });
    }
    let a: [NodeField<Mat6<T>>; 3] = std::array::from_fn(|l| {
        mu.map(|m| (0..3).fold(Mat6::zeros(), |acc, j| acc + curl_coefficient::<T>(j) * m[(j, l)]))
    });
    Ok(ChartTransport {
        chart: chart.clone(),
        grid: grid.clone(),
        tau,
        jac_y,
        mu,
        a,
        law: compose_law(law, &chart.inverse, None)?,
    })
}

/// `G = blockdiag(Ĝ, Ĝ)` and its inverse, in closed form and sampled.
#[derive(Clone, Debug)]
pub struct Normalizer<T> {
    pub ghat: TensorExpr,
    pub ghat_inv: TensorExpr,
    pub g: NodeField<Mat6<T>>,
    pub ginv: NodeField<Mat6<T>>,
}

fn block<T: Real>(m: &NodeField<Mat3<T>>) -> NodeField<Mat6<T>> {
    m.map(|x| linalg::block_diag3(x, x))
}

impl<T: Real> Normalizer<T> {
    pub fn new(transport: &ChartTransport<T>) -> Self {
        let [m13, m23, m33] = transport.mu3();
        let s = m33.sqrt();
        let z = Expr::zero;
        let ghat = TensorExpr([
            [Expr::one().div(&s), z(), m13.div(&s)],
            [z(), Expr::one().div(&s), m23.div(&s)],
            [z(), z(), s.clone()],
        ]);
        let ghat_inv = TensorExpr([
            [s.clone(), z(), m13.div(&s).neg()],
            [z(), s.clone(), m23.div(&s).neg()],
            [z(), z(), Expr::one().div(&s)],
        ]);
        let grid = &transport.grid;
        Normalizer {
            g: block(&sample_mat(grid, &ghat)),
            ginv: block(&sample_mat(grid, &ghat_inv)),
            ghat,
            ghat_inv,
        }
    }

    /// `max |G G⁻¹ − I|` over the grid.
    pub fn inverse_residual(&self, nodes: usize) -> T {
        (0..nodes)
            .map(|n| linalg::max_abs(&(self.g.at(n) * self.ginv.at(n) - Mat6::identity())))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// `u = G v`.
    pub fn pullback_solution(&self, v: &Field<T>) -> Field<T> {
        apply(&self.g, v)
    }

    /// `v = G⁻¹ u`.
    pub fn pushforward(&self, u: &Field<T>) -> Field<T> {
        apply(&self.ginv, u)
    }
}

fn apply<T: Real>(m: &NodeField<Mat6<T>>, v: &Field<T>) -> Field<T> {
    let mut out = v.clone();
    out.data.par_chunks_mut(6).enumerate().for_each(|(n, o)| {
        let r = m.at(n) * Vec6::from_column_slice(o);
        o.copy_from_slice(r.as_slice());
    });
    out
}

fn apply_expr(g: &TensorExpr, v: &[Expr], transpose: bool) -> Vec<Expr> {
    let g = if transpose { g.transpose() } else { g.clone() };
    let mut out = g.apply(&v[..3]);
    out.extend(g.apply(&v[3..6]));
    out
}

/// Closed-form data of the original problem in `x` coordinates.
#[derive(Clone, Debug)]
pub struct ChartData {
    pub f: Vec<Expr>,
    pub g: [Expr; 2],
    pub u0: Vec<Expr>,
    pub exact: Option<Vec<Expr>>,
    pub t0: f64,
}

#[derive(Clone, Debug)]
pub struct Normalized<T: Real> {
    pub problem: Problem<T>,
    pub normalizer: Normalizer<T>,
    pub mu: MuTilde<T>,
}

/// Apply `u = G v`: `Ã_j = GᵀA_jG`, `D̃ = GᵀDG − Σ_j Ã_j ∂_j(G⁻¹) G`,
/// `f̃ = Gᵀf`, `ũ0 = G⁻¹u0`; the wall data carry over unchanged.
pub fn normalize<T: Real>(transport: &ChartTransport<T>, data: &ChartData) -> Result<Normalized<T>> {
    let grid = &transport.grid;
    let nz = Normalizer::new(transport);
    let inv = &transport.chart.inverse;

    // Ã0 >= η σ_min(Ĝ)², σ_min² = λ_min(ĜᵀĜ).
    let smin = match &sample_mat(grid, &nz.ghat) {
        NodeField::Uniform(m) => linalg::min_eigenvalue(&(m.transpose() * m)),
        NodeField::Nodal(v) => v
            .par_iter()
            .map(|m| linalg::min_eigenvalue(&(m.transpose() * m)))
            .reduce(T::infinity, |a, b| a.min(b)),
    };
    let mut law = compose_law(&transport.law, &[Expr::x(0), Expr::x(1), Expr::x(2)], Some(&nz.ghat))?;
    law.eta = transport.law.eta * smin.min(T::one());
    let t0 = T::lit(data.t0);
    let mut coeffs = assemble_coefficients(&law, grid, &[t0])?;

    let a: [NodeField<Mat6<T>>; 3] = std::array::from_fn(|j| {
        NodeField::Nodal(
            (0..grid.len())
                .into_par_iter()
                .map(|n| nz.g.at(n).transpose() * transport.a[j].at(n) * nz.g.at(n))
                .collect(),
        )
    });
    let dginv: [NodeField<Mat6<T>>; 3] =
        std::array::from_fn(|j| block(&sample_mat(grid, &nz.ghat_inv.diff(Var::space(j)))));
    let extra = NodeField::Nodal(
        (0..grid.len())
            .into_par_iter()
            .map(|n| {
                let mut m = Mat6::zeros();
                for j in 0..3 {
                    m -= a[j].at(n) * dginv[j].at(n) * nz.g.at(n);
                }
                m
            })
            .collect(),
    );
    let mu = decompose_mu(&a, grid.len())?;
    coeffs.a = a;
    coeffs.mu = mu.mu.clone();
    coeffs.d_extra = Some(extra);

    let compose = |v: &[Expr]| -> Vec<Expr> { v.iter().map(|e| e.compose_space(inv)).collect() };
    let f = apply_expr(&nz.ghat, &compose(&data.f), true);
    let u0 = apply_expr(&nz.ghat_inv, &compose(&data.u0), false);
    let exact = data.exact.as_ref().map(|u| apply_expr(&nz.ghat_inv, &compose(u), false));
    let g = [data.g[0].compose_space(inv), data.g[1].compose_space(inv)];
    Ok(Normalized {
        problem: Problem {
            coeffs,
            t0,
            f: Source::closed(f),
            g,
            u0: InitialData::closed(u0),
            exact,
        },
        normalizer: nz,
        mu,
    })
}

/// `max |Ã3 − A3^co|` over the grid.
pub fn normal_coefficient_defect<T: Real>(p: &Problem<T>) -> T {
    let a3 = curl_coefficient::<T>(2);
    (0..p.grid().len())
        .map(|n| linalg::max_abs(&(p.coeffs.a[2].at(n) - a3)))
        .fold(T::zero(), |a, b| a.max(b))
}
