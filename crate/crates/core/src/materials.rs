//! Material laws and assembly of the first-order coefficient fields.
//!
//! `A0 = blockdiag(ε, μ)`, `D = blockdiag(∂t ε + σ, ∂t μ)`; in the physical
//! model `A_j = A_j^co` and the decomposition coefficients are the identity.

use std::array;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{self, Field, Grid, NodeField};
use crate::linalg::{self, Mat3, Mat6};
use crate::scalar::Real;
use crate::structmat::curl_coefficient;

/// 3×3 matrix of closed-form entries.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorExpr(pub [[Expr; 3]; 3]);

impl TensorExpr {
    pub fn from_fn(f: impl Fn(usize, usize) -> Expr) -> Self {
        TensorExpr(array::from_fn(|i| array::from_fn(|j| f(i, j))))
    }

    pub fn zero() -> Self {
        Self::from_fn(|_, _| Expr::zero())
    }

    /// `s · I`.
    pub fn scalar(s: Expr) -> Self {
        Self::from_fn(|i, j| if i == j { s.clone() } else { Expr::zero() })
    }

    pub fn identity() -> Self {
        Self::scalar(Expr::one())
    }

    pub fn parse(rows: &[Vec<String>]) -> Result<Self> {
        if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
            return Err(Error::Invalid("tensor must be 3x3".into()));
        }
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = Expr::parse(&rows[i][j])?;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> Self {
        Self::from_fn(|i, j| f(&self.0[i][j]))
    }

    pub fn diff(&self, v: Var) -> Self {
        self.map(|e| e.diff(v))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i].clone())
    }

    pub fn matmul(&self, o: &TensorExpr) -> Self {
        Self::from_fn(|i, j| (0..3).fold(Expr::zero(), |acc, k| acc.add(&self.0[i][k].mul(&o.0[k][j]))))
    }

    /// `gᵀ · self · g`.
    pub fn congruence(&self, g: &TensorExpr) -> Self {
        g.transpose().matmul(self).matmul(g)
    }

    /// `self · v` for a closed-form 3-vector.
    pub fn apply(&self, v: &[Expr]) -> Vec<Expr> {
        (0..3)
            .map(|i| (0..3).fold(Expr::zero(), |acc, k| acc.add(&self.0[i][k].mul(&v[k]))))
            .collect()
    }

    /// Substitute `x = map(y)` in every entry.
    pub fn compose_space(&self, map: &[Expr; 3]) -> Self {
        self.map(|e| e.compose_space(map))
    }

    pub fn diff_n(&self, v: Var, n: usize) -> Self {
        self.map(|e| e.diff_n(v, n))
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.0.iter().flatten().any(|e| e.depends_on(v))
    }

    pub fn is_space_uniform(&self) -> bool {
        Var::SPACE.iter().all(|v| !self.depends_on(*v))
    }

    pub fn eval<T: Real>(&self, at: &[T; 4]) -> Mat3<T> {
        Mat3::from_fn(|i, j| self.0[i][j].eval(at))
    }

    /// Sample over the grid at time `t`.
    pub fn sample<T: Real>(&self, grid: &Grid<T>, t: T) -> NodeField<Mat3<T>> {
        if self.is_space_uniform() {
            let z = T::zero();
            return NodeField::Uniform(self.eval(&[t, z, z, z]));
        }
        NodeField::Nodal(
            (0..grid.len())
                .into_par_iter()
                .map(|n| {
                    let p = grid.point(n);
                    self.eval(&[t, p[0], p[1], p[2]])
                })
                .collect(),
        )
    }
}

/// A tensor field given in closed form or as time samples on the grid.
#[derive(Clone, Debug)]
pub enum TensorLaw<T> {
    Closed(TensorExpr),
    Sampled {
        times: Vec<T>,
        frames: Vec<NodeField<Mat3<T>>>,
    },
}

impl<T: Real> TensorLaw<T> {
    pub fn closed(&self) -> Option<&TensorExpr> {
        match self {
            TensorLaw::Closed(e) => Some(e),
            TensorLaw::Sampled { .. } => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            TensorLaw::Closed(e) => !e.depends_on(Var::T),
            TensorLaw::Sampled { frames, .. } => frames.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// `∂t^l` at time `t`: symbolic for closed laws, differenced for samples.
    pub fn dt_at(&self, grid: &Grid<T>, t: T, l: usize) -> NodeField<Mat3<T>> {
        match self {
            TensorLaw::Closed(e) => e.diff_n(Var::T, l).sample(grid, t),
            TensorLaw::Sampled { times, frames } => sampled_dt(grid, times, frames, t, l),
        }
    }
}

fn combine<T: Real>(
    grid: &Grid<T>,
    terms: &[(T, &NodeField<Mat3<T>>)],
) -> NodeField<Mat3<T>> {
    if terms.iter().all(|(_, f)| f.is_uniform()) {
        let mut m = Mat3::zeros();
        for (c, f) in terms {
            m += f.at(0) * *c;
        }
        return NodeField::Uniform(m);
    }
    NodeField::Nodal(
        (0..grid.len())
            .into_par_iter()
            .map(|n| {
                let mut m = Mat3::zeros();
                for (c, f) in terms {
                    m += f.at(n) * *c;
                }
                m
            })
            .collect(),
    )
}

/// Time derivatives of sampled data: piecewise linear value, centered
/// differences on the (assumed uniform) sample spacing for `l >= 1`.
fn sampled_dt<T: Real>(
    grid: &Grid<T>,
    times: &[T],
    frames: &[NodeField<Mat3<T>>],
    t: T,
    l: usize,
) -> NodeField<Mat3<T>> {
    let n = times.len();
    if n == 1 {
        return if l == 0 {
            frames[0].clone()
        } else {
            NodeField::Uniform(Mat3::zeros())
        };
    }
    let idx = times
        .iter()
        .position(|s| *s >= t)
        .unwrap_or(n - 1)
        .clamp(1, n - 1);
    let (a, b) = (idx - 1, idx);
    let dt = times[b] - times[a];
    match l {
        0 => {
            let w = ((t - times[a]) / dt).max(T::zero()).min(T::one());
            combine(grid, &[(T::one() - w, &frames[a]), (w, &frames[b])])
        }
        1 => {
            // centered around the nearest sample where possible
            let c = nearest(times, t).clamp(1, n.saturating_sub(2).max(1));
            if n >= 3 {
                let h = times[c + 1] - times[c - 1];
                combine(grid, &[(T::one() / h, &frames[c + 1]), (-T::one() / h, &frames[c - 1])])
            } else {
                combine(grid, &[(T::one() / dt, &frames[b]), (-T::one() / dt, &frames[a])])
            }
        }
        2 if n >= 3 => {
            let c = nearest(times, t).clamp(1, n - 2);
            let h = times[c + 1] - times[c];
            let w = T::one() / (h * h);
            combine(
                grid,
                &[(w, &frames[c + 1]), (T::lit(-2.0) * w, &frames[c]), (w, &frames[c - 1])],
            )
        }
        _ => NodeField::Uniform(Mat3::zeros()),
    }
}

fn nearest<T: Real>(times: &[T], t: T) -> usize {
    let mut best = 0;
    for (i, s) in times.iter().enumerate() {
        if (*s - t).abs() < (times[best] - t).abs() {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct MaterialLaw<T> {
    pub epsilon: TensorLaw<T>,
    pub mu: TensorLaw<T>,
    pub sigma: TensorLaw<T>,
    pub eta: T,
    /// When set, ε and μ must equal these limits on the outer two-cell shell
    /// below the cap (model of "constant outside a compact set").
    pub limit: Option<(Mat3<T>, Mat3<T>)>,
}

impl<T: Real> MaterialLaw<T> {
    pub fn closed(epsilon: TensorExpr, mu: TensorExpr, sigma: TensorExpr) -> Self {
        MaterialLaw {
            epsilon: TensorLaw::Closed(epsilon),
            mu: TensorLaw::Closed(mu),
            sigma: TensorLaw::Closed(sigma),
            eta: T::lit(1e-3),
            limit: None,
        }
    }

    pub fn vacuum() -> Self {
        Self::closed(TensorExpr::identity(), TensorExpr::identity(), TensorExpr::zero())
    }

    /// Multiply ε and μ by a closed-form scalar factor.
    pub fn scaled(&self, factor: &Expr) -> Result<Self> {
        let scale = |law: &TensorLaw<T>| -> Result<TensorLaw<T>> {
            law.closed()
                .map(|e| TensorLaw::Closed(e.map(|x| x.mul(factor))))
                .ok_or_else(|| Error::Invalid("scaling needs closed-form tensors".into()))
        };
        Ok(MaterialLaw {
            epsilon: scale(&self.epsilon)?,
            mu: scale(&self.mu)?,
            sigma: self.sigma.clone(),
            eta: self.eta,
            limit: None,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.epsilon.closed().is_some() && self.mu.closed().is_some() && self.sigma.closed().is_some()
    }

    pub fn is_time_independent(&self) -> bool {
        self.epsilon.is_time_independent()
            && self.mu.is_time_independent()
            && self.sigma.is_time_independent()
    }

    /// Closed-form `∂t^l A0` entries (row-major 6×6), if available.
    pub fn a0_expr(&self, l: usize) -> Option<Vec<Expr>> {
        let e = self.epsilon.closed()?.diff_n(Var::T, l);
        let m = self.mu.closed()?.diff_n(Var::T, l);
        Some(block_expr(&e, &m))
    }

    /// Closed-form `∂t^l D` entries (row-major 6×6), if available.
    pub fn d_expr(&self, l: usize) -> Option<Vec<Expr>> {
        let e = self.epsilon.closed()?.diff_n(Var::T, l + 1);
        let s = self.sigma.closed()?.diff_n(Var::T, l);
        let m = self.mu.closed()?.diff_n(Var::T, l + 1);
        let upper = TensorExpr::from_fn(|i, j| e.0[i][j].add(&s.0[i][j]));
        Some(block_expr(&upper, &m))
    }
}

fn block_expr(a: &TensorExpr, b: &TensorExpr) -> Vec<Expr> {
    let mut out = vec![Expr::zero(); 36];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 6 + j] = a.0[i][j].clone();
            out[(i + 3) * 6 + j + 3] = b.0[i][j].clone();
        }
    }
    out
}

fn block_field<T: Real>(
    grid: &Grid<T>,
    a: &NodeField<Mat3<T>>,
    b: &NodeField<Mat3<T>>,
) -> NodeField<Mat6<T>> {
    if a.is_uniform() && b.is_uniform() {
        return NodeField::Uniform(linalg::block_diag3(a.at(0), b.at(0)));
    }
    NodeField::Nodal(
        (0..grid.len())
            .into_par_iter()
            .map(|n| linalg::block_diag3(a.at(n), b.at(n)))
            .collect(),
    )
}

/// Time-dependent part of the coefficients.
#[derive(Clone, Debug)]
pub enum Temporal<T> {
    /// Evaluated from a material law on demand.
    Law(MaterialLaw<T>),
    /// Fixed fields (time-independent transformed coefficients).
    Static {
        a0: NodeField<Mat6<T>>,
        d: NodeField<Mat6<T>>,
    },
}

#[derive(Clone, Debug)]
pub struct CoefficientSet<T: Real> {
    pub grid: Grid<T>,
    /// `A_1, A_2, A_3` (time independent).
    pub a: [NodeField<Mat6<T>>; 3],
    /// Decomposition coefficients `μ_lj` with `A_j = Σ_l A_l^co μ_lj`.
    pub mu: NodeField<Mat3<T>>,
    pub temporal: Temporal<T>,
    /// Time-independent addition to `D` (e.g. from a normalizing transform).
    pub d_extra: Option<NodeField<Mat6<T>>>,
    pub eta: T,
}

impl<T: Real> CoefficientSet<T> {
    pub fn law(&self) -> Option<&MaterialLaw<T>> {
        match &self.temporal {
            Temporal::Law(l) => Some(l),
            Temporal::Static { .. } => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.temporal {
            Temporal::Law(l) => l.is_time_independent(),
            Temporal::Static { .. } => true,
        }
    }

    /// `A_j = A_j^co` everywhere.
    pub fn is_physical(&self) -> bool {
        self.d_extra.is_none()
            && (0..3).all(|j| matches!(&self.a[j], NodeField::Uniform(m) if *m == curl_coefficient(j)))
    }

    /// `∂t^l A0(t)`.
    pub fn a0_dt(&self, t: T, l: usize) -> NodeField<Mat6<T>> {
        match &self.temporal {
            Temporal::Law(law) => block_field(
                &self.grid,
                &law.epsilon.dt_at(&self.grid, t, l),
                &law.mu.dt_at(&self.grid, t, l),
            ),
            Temporal::Static { a0, .. } => {
                if l == 0 {
                    a0.clone()
                } else {
                    NodeField::Uniform(Mat6::zeros())
                }
            }
        }
    }

    pub fn a0_at(&self, t: T) -> NodeField<Mat6<T>> {
        self.a0_dt(t, 0)
    }

    /// `∂t^l D(t)`.
    pub fn d_dt(&self, t: T, l: usize) -> NodeField<Mat6<T>> {
        let base = self.d_base(t, l);
        match (&self.d_extra, l) {
            (Some(extra), 0) => {
                if base.is_uniform() && extra.is_uniform() {
                    NodeField::Uniform(base.at(0) + extra.at(0))
                } else {
                    NodeField::Nodal(
                        (0..self.grid.len())
                            .into_par_iter()
                            .map(|n| base.at(n) + extra.at(n))
                            .collect(),
                    )
                }
            }
            _ => base,
        }
    }

    fn d_base(&self, t: T, l: usize) -> NodeField<Mat6<T>> {
        match &self.temporal {
            Temporal::Law(law) => {
                let g = &self.grid;
                let de = law.epsilon.dt_at(g, t, l + 1);
                let s = law.sigma.dt_at(g, t, l);
                let upper = combine(g, &[(T::one(), &de), (T::one(), &s)]);
                block_field(g, &upper, &law.mu.dt_at(g, t, l + 1))
            }
            Temporal::Static { d, .. } => {
                if l == 0 {
                    d.clone()
                } else {
                    NodeField::Uniform(Mat6::zeros())
                }
            }
        }
    }

    pub fn d_at(&self, t: T) -> NodeField<Mat6<T>> {
        self.d_dt(t, 0)
    }

    /// σ at time `t` (zero for static transformed sets).
    pub fn sigma_at(&self, t: T) -> NodeField<Mat3<T>> {
        match &self.temporal {
            Temporal::Law(law) => law.sigma.dt_at(&self.grid, t, 0),
            Temporal::Static { .. } => NodeField::Uniform(Mat3::zeros()),
        }
    }

    /// Max over nodes of `max‖A_j‖₂` (spectral norm).
    pub fn max_spatial_norm(&self) -> T {
        let mut out = T::zero();
        for a in &self.a {
            match a {
                NodeField::Uniform(m) => out = out.max(linalg::symmetric_norm(m)),
                NodeField::Nodal(v) => {
                    let m = v
                        .par_iter()
                        .map(linalg::symmetric_norm)
                        .reduce(T::zero, |x, y| x.max(y));
                    out = out.max(m);
                }
            }
        }
        out
    }

    /// Minimum eigenvalue of `A0(t)` over the grid.
    pub fn min_a0_eigenvalue(&self, t: T) -> T {
        match self.a0_at(t) {
            NodeField::Uniform(m) => linalg::min_eigenvalue(&m),
            NodeField::Nodal(v) => v
                .par_iter()
                .map(linalg::min_eigenvalue)
                .reduce(T::infinity, |x, y| x.min(y)),
        }
    }

    /// `A0(t)` entries as a 36-component field.
    pub fn a0_field(&self, t: T) -> Field<T> {
        let a0 = self.a0_at(t);
        Field::from_fn(&self.grid, 36, |n, _, out| out.copy_from_slice(a0.at(n).as_slice()))
    }
}

fn check_tensor<T: Real>(
    name: &'static str,
    field: &NodeField<Mat3<T>>,
    n: usize,
    t: T,
    eta: T,
    positive: bool,
) -> Result<()> {
    let tol = T::lit(1e-12);
    let check = |node: usize, m: &Mat3<T>| -> Result<()> {
        let asym = linalg::asymmetry(m);
        if asym > tol {
            return Err(Error::SymmetryViolation {
                tensor: name,
                node,
                t: t.to_f64_lossy(),
                asym: asym.to_f64_lossy(),
            });
        }
        if positive {
            let ev = linalg::min_eigenvalue(m);
            if !(ev >= eta) {
                return Err(Error::PositivityViolation {
                    tensor: name,
                    node,
                    t: t.to_f64_lossy(),
                    min_eig: ev.to_f64_lossy(),
                    eta: eta.to_f64_lossy(),
                });
            }
        }
        Ok(())
    };
    match field {
        NodeField::Uniform(m) => check(0, m),
        NodeField::Nodal(v) => {
            let _ = n;
            // first failing node in index order for reproducible messages
            let bad = v
                .par_iter()
                .enumerate()
                .filter_map(|(i, m)| check(i, m).err().map(|e| (i, e)))
                .min_by_key(|(i, _)| *i);
            match bad {
                Some((_, e)) => Err(e),
                None => Ok(()),
            }
        }
    }
}

/// Validate a law on the grid at `times` and build the coefficient set.
pub fn assemble_coefficients<T: Real>(
    law: &MaterialLaw<T>,
    grid: &Grid<T>,
    times: &[T],
) -> Result<CoefficientSet<T>> {
    if !(law.eta > T::zero()) {
        return Err(Error::Invalid("eta must be positive".into()));
    }
    for &t in times {
        let eps = law.epsilon.dt_at(grid, t, 0);
        let mu = law.mu.dt_at(grid, t, 0);
        check_tensor("epsilon", &eps, grid.len(), t, law.eta, true)?;
        check_tensor("mu", &mu, grid.len(), t, law.eta, true)?;
        if let Some((le, lm)) = &law.limit {
            let shell = grid.plane_len() * (grid.nz() - 3);
            for n in shell..grid.len() {
                let de = linalg::max_abs(&(eps.at(n) - le));
                let dm = linalg::max_abs(&(mu.at(n) - lm));
                if de > T::lit(1e-12) || dm > T::lit(1e-12) {
                    return Err(Error::Invalid(format!(
                        "law differs from its limit value on the outer shell (node {n})"
                    )));
                }
            }
        }
    }
    Ok(CoefficientSet {
        grid: grid.clone(),
        a: [
            NodeField::Uniform(curl_coefficient(0)),
            NodeField::Uniform(curl_coefficient(1)),
            NodeField::Uniform(curl_coefficient(2)),
        ],
        mu: NodeField::Uniform(Mat3::identity()),
        temporal: Temporal::Law(law.clone()),
        d_extra: None,
        eta: law.eta,
    })
}

/// Discrete `F^m` surrogate of a coefficient time series.
///
/// `frames` are fields of matrix entries at uniformly spaced times `dt`
/// apart (a single frame means time independent). Returns the max of the
/// `W^{1,∞}` part (sup of entries and first derivatives) and
/// `sup_t ‖∂^α A‖_{L²}` over `1 <= |α| <= m`, `α` ranging over `(t, x)`.
pub fn fm_norm_estimate<T: Real>(grid: &Grid<T>, frames: &[Field<T>], dt: T, m: usize) -> T {
    assert!(!frames.is_empty());
    let time_diff = |series: &[Field<T>]| -> Vec<Field<T>> {
        let n = series.len();
        if n == 1 {
            return vec![series[0].scale(T::zero())];
        }
        (0..n)
            .map(|i| {
                let (a, b, w) = if i == 0 {
                    (0, 1, T::one())
                } else if i + 1 == n {
                    (n - 2, n - 1, T::one())
                } else {
                    (i - 1, i + 1, T::lit(0.5))
                };
                series[b].sub(&series[a]).scale(w / dt)
            })
            .collect()
    };
    let space_diff = |series: &[Field<T>], axis: usize| -> Vec<Field<T>> {
        series.iter().map(|f| grid::diff(grid, f, axis)).collect()
    };

    let sup_all = |series: &[Field<T>]| series.iter().fold(T::zero(), |a, f| a.max(f.max_abs()));
    let l2_sup = |series: &[Field<T>]| series.iter().fold(T::zero(), |a, f| a.max(f.l2_norm(grid)));

    let mut w1 = sup_all(frames);
    let mut first = Vec::with_capacity(4);
    first.push(time_diff(frames));
    for axis in 0..3 {
        first.push(space_diff(frames, axis));
    }
    for d in &first {
        w1 = w1.max(sup_all(d));
    }
    let mut best = w1;
    if m == 0 {
        return best;
    }
    // breadth-first over multi-indices, non-decreasing direction order
    let mut level: Vec<(usize, Vec<Field<T>>)> = first.into_iter().enumerate().collect();
    for order in 1..=m {
        for (_, s) in &level {
            best = best.max(l2_sup(s));
        }
        if order == m {
            break;
        }
        let mut next = Vec::new();
        for (last, s) in &level {
            for dir in *last..4 {
                let d = if dir == 0 { time_diff(s) } else { space_diff(s, dir - 1) };
                next.push((dir, d));
            }
        }
        level = next;
    }
    best
}
