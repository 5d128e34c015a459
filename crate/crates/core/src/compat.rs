//! Compatibility conditions and data correction.
//!
//! `S_p = ∂t^p u(t0)` is produced from the equation recursively. Two routes:
//! a grid route with finite differences, and a wall-jet route that carries
//! normal Taylor jets of closed-form data at `x3 = 0` (exact up to
//! spectral tangential differentiation).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{self, Field, Grid, NodeField};
use crate::linalg::{self, binomial, Mat6, Vec6};
use crate::materials::CoefficientSet;
use crate::problem::{wall_field, InitialData, Problem, Source, WallLift};
use crate::scalar::{Real, Ring};
use crate::spaces;
use crate::structmat::curl_coefficient;

/// Highest order handled by [`correct_initial_data`].
pub const MAX_LIFT_ORDER: usize = 3;

/// Tolerance of the jet route.
pub const JET_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Jet,
    Grid,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompatReport {
    pub order: usize,
    pub route: Route,
    pub tol: f64,
    /// `‖B S_p − ∂t^p g(t0)‖_{L²(wall)}` for `p = 0..order`.
    pub residuals: Vec<f64>,
    pub pass: bool,
    /// Wall traces of `S_0, …, S_{order-1}` (6 components per node).
    #[serde(skip)]
    pub s_values: Vec<Field<f64>>,
}

impl CompatReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `Err(CompatibilityFailure)` unless the report passes.
    pub fn into_result(self) -> Result<Self> {
        if self.pass {
            Ok(self)
        } else {
            Err(Error::CompatibilityFailure {
                order: self.order,
                max_residual: self.max_residual(),
                tol: self.tol,
                report: Box::new(self),
            })
        }
    }
}

fn a0_inverse<T: Real>(a0: &NodeField<Mat6<T>>, n: usize) -> Result<NodeField<Mat6<T>>> {
    let inv = |node: usize, m: &Mat6<T>| -> Result<Mat6<T>> {
        let min_eig = linalg::min_eigenvalue(m);
        if !(min_eig > T::zero()) {
            return Err(Error::SingularMass { node, min_eig: min_eig.to_f64_lossy() });
        }
        linalg::inverse(m).ok_or(Error::SingularMass { node, min_eig: min_eig.to_f64_lossy() })
    };
    match a0 {
        NodeField::Uniform(m) => Ok(NodeField::Uniform(inv(0, m)?)),
        NodeField::Nodal(v) => Ok(NodeField::Nodal(
            v.iter().take(n).enumerate().map(|(i, m)| inv(i, m)).collect::<Result<_>>()?,
        )),
    }
}

/// `out += s · M(node) v(node)` over all nodes.
fn apply_add<T: Real>(out: &mut Field<T>, s: T, m: &NodeField<Mat6<T>>, v: &Field<T>) {
    for n in 0..out.nodes() {
        let r = m.at(n) * v.vec6(n) * s;
        for (o, x) in out.node_mut(n).iter_mut().zip(r.iter()) {
            *o += *x;
        }
    }
}

fn apply<T: Real>(m: &NodeField<Mat6<T>>, v: &Field<T>) -> Field<T> {
    let mut out = Field { ncomp: 6, data: vec![T::zero(); v.data.len()] };
    apply_add(&mut out, T::one(), m, v);
    out
}

/// `S_0, …, S_p` on the whole grid (finite differences in space).
pub fn s_levels<T: Real>(
    coeffs: &CoefficientSet<T>,
    t0: T,
    f: &Source<T>,
    u0: &Field<T>,
    p: usize,
) -> Result<Vec<Field<T>>> {
    let grid = &coeffs.grid;
    let ainv = a0_inverse(&coeffs.a0_at(t0), grid.len())?;
    let a0: Vec<_> = (0..p).map(|l| coeffs.a0_dt(t0, l)).collect();
    let d: Vec<_> = (0..p).map(|l| coeffs.d_dt(t0, l)).collect();
    let mut s = vec![u0.clone()];
    for q in 1..=p {
        let mut rhs = f
            .dt_at(grid, t0, q - 1)
            .unwrap_or_else(|| Field::zeros(grid, 6));
        for j in 0..3 {
            let dj = grid::diff(grid, &s[q - 1], j);
            apply_add(&mut rhs, -T::one(), &coeffs.a[j], &dj);
        }
        for l in 1..q {
            let c = T::from_usize_lossy(binomial(q - 1, l) as usize);
            apply_add(&mut rhs, -c, &a0[l], &s[q - l]);
        }
        for l in 0..q {
            let c = T::from_usize_lossy(binomial(q - 1, l) as usize);
            apply_add(&mut rhs, -c, &d[l], &s[q - 1 - l]);
        }
        s.push(apply(&ainv, &rhs));
    }
    Ok(s)
}

/// `S_{m,p}(t0, A, f, u0)` on the grid.
pub fn s_mp<T: Real>(coeffs: &CoefficientSet<T>, t0: T, f: &Source<T>, u0: &Field<T>, p: usize) -> Result<Field<T>> {
    Ok(s_levels(coeffs, t0, f, u0, p)?.pop().expect("non-empty"))
}

// ------------------------------------------------------------------ jets

/// Normal jets `∂3^q e` at the wall, `q = 0..=k`, as plane fields.
fn expr_jets<T: Real>(grid: &Grid<T>, exprs: &[Expr], t: T, k: usize) -> Vec<Field<T>> {
    let np = grid.plane_len();
    let mut cur: Vec<Expr> = exprs.to_vec();
    let mut out = Vec::with_capacity(k + 1);
    for q in 0..=k {
        if q > 0 {
            cur = cur.iter().map(|e| e.diff(Var::X3)).collect();
        }
        let mut f = Field { ncomp: exprs.len(), data: vec![T::zero(); np * exprs.len()] };
        if !cur.iter().all(Expr::is_zero) {
            for n in 0..np {
                let p = grid.point(n);
                for (c, e) in cur.iter().enumerate() {
                    f.set(n, c, e.eval(&[t, p[0], p[1], T::zero()]));
                }
            }
        }
        out.push(f);
    }
    out
}

fn matrix_jets<T: Real>(grid: &Grid<T>, entries: &[Expr], t: T, k: usize) -> Vec<NodeField<Mat6<T>>> {
    let uniform = !entries
        .iter()
        .any(|e| e.depends_on(Var::X1) || e.depends_on(Var::X2) || e.depends_on(Var::X3));
    if uniform {
        let mut v = vec![NodeField::Uniform(Mat6::zeros()); k + 1];
        let at = [t, T::zero(), T::zero(), T::zero()];
        v[0] = NodeField::Uniform(Mat6::from_row_iterator(entries.iter().map(|e| e.eval(&at))));
        return v;
    }
    expr_jets(grid, entries, t, k)
        .into_iter()
        .map(|f| {
            NodeField::Nodal(
                (0..grid.plane_len())
                    .map(|n| Mat6::from_row_slice(f.node(n)))
                    .collect(),
            )
        })
        .collect()
}

/// `(M v)` jet of order `q` by Leibniz: `Σ_r C(q,r) M[r] v[q−r]`.
fn product_jet<T: Real>(m: &[NodeField<Mat6<T>>], v: &[Field<T>], q: usize, out: &mut Field<T>, s: T) {
    for r in 0..=q {
        if matches!(&m[r], NodeField::Uniform(x) if x.iter().all(|e| *e == T::zero())) {
            continue;
        }
        let c = T::from_usize_lossy(binomial(q, r) as usize);
        apply_add(out, s * c, &m[r], &v[q - r]);
    }
}

/// Wall jets of `S_0, …, S_{k}`: `S_p` carries normal orders `0..=k−p`.
pub fn s_jets<T: Real>(problem: &Problem<T>, k: usize) -> Result<Vec<Vec<Field<T>>>> {
    let coeffs = &problem.coeffs;
    let grid = &coeffs.grid;
    let law = coeffs
        .law()
        .filter(|l| l.is_closed())
        .ok_or_else(|| Error::Invalid("jet route needs a closed-form material law".into()))?;
    if !coeffs.is_physical() {
        return Err(Error::Invalid("jet route needs A_j = A_j^co".into()));
    }
    let (u0, lift) = match &problem.u0 {
        InitialData::Closed { exprs, lift } => (exprs, lift),
        InitialData::Sampled(_) => return Err(Error::Invalid("jet route needs closed-form u0".into())),
    };
    let f = problem
        .f
        .exprs()
        .ok_or_else(|| Error::Invalid("jet route needs a closed-form source".into()))?;
    let t0 = problem.t0;
    let np = grid.plane_len();

    let mut s0 = expr_jets(grid, u0, t0, k);
    if let Some(l) = lift {
        for (q, s) in s0.iter_mut().enumerate() {
            *s = s.axpy(T::one(), &l.normal_jet(q, np));
        }
    }
    let a0: Vec<Vec<_>> = (0..k.max(1))
        .map(|l| matrix_jets(grid, &law.a0_expr(l).expect("closed"), t0, k))
        .collect();
    let d: Vec<Vec<_>> = (0..k)
        .map(|l| matrix_jets(grid, &law.d_expr(l).expect("closed"), t0, k))
        .collect();
    let inv0 = a0_inverse(&a0[0][0], np)?;
    let a: [NodeField<Mat6<T>>; 3] = std::array::from_fn(|j| NodeField::Uniform(curl_coefficient(j)));

    let mut s = vec![s0];
    for p in 1..=k {
        let ff: Vec<Expr> = f.iter().map(|e| e.diff_n(Var::T, p - 1)).collect();
        let fj = expr_jets(grid, &ff, t0, k - p);
        let prev = &s[p - 1];
        let mut x: Vec<Field<T>> = Vec::with_capacity(k - p + 1);
        for q in 0..=k - p {
            let mut rhs = fj[q].clone();
            for (j, aj) in a.iter().enumerate().take(2) {
                let dj = spaces::spectral_diff_plane_field(grid, &prev[q], j);
                apply_add(&mut rhs, -T::one(), aj, &dj);
            }
            apply_add(&mut rhs, -T::one(), &a[2], &prev[q + 1]);
            for l in 1..p {
                let c = T::from_usize_lossy(binomial(p - 1, l) as usize);
                product_jet(&a0[l], &s[p - l], q, &mut rhs, -c);
            }
            for l in 0..p {
                let c = T::from_usize_lossy(binomial(p - 1, l) as usize);
                product_jet(&d[l], &s[p - 1 - l], q, &mut rhs, -c);
            }
            // A0 X = rhs as jets: peel off the x3-variation of A0.
            for r in 1..=q {
                let c = T::from_usize_lossy(binomial(q, r) as usize);
                apply_add(&mut rhs, -c, &a0[0][r], &x[q - r]);
            }
            x.push(apply(&inv0, &rhs));
        }
        s.push(x);
    }
    Ok(s)
}

fn wall_residual<T: Real>(grid: &Grid<T>, s: &Field<T>, g: &Field<T>) -> f64 {
    let mut acc = T::zero();
    for n in 0..grid.plane_len() {
        let b0 = s.get(n, 1) - g.get(n, 0);
        let b1 = -s.get(n, 0) - g.get(n, 1);
        acc += b0 * b0 + b1 * b1;
    }
    (acc * grid.wall_weight()).sqrt().to_f64_lossy()
}

fn plane_l2<T: Real>(grid: &Grid<T>, f: &Field<T>) -> f64 {
    let acc = f.data.iter().fold(T::zero(), |a, v| a + *v * *v);
    (acc * grid.wall_weight()).sqrt().to_f64_lossy()
}

fn to_f64_field<T: Real>(f: &Field<T>) -> Field<f64> {
    Field { ncomp: f.ncomp, data: f.data.iter().map(|v| v.to_f64_lossy()).collect() }
}

/// Check the conditions of order `m` (`p = 0..m`). The jet route is used
/// whenever the data allow it; `tol` overrides the route default.
pub fn check_compatibility<T: Real>(problem: &Problem<T>, m: usize, tol: Option<f64>) -> Result<CompatReport> {
    let jets = problem.is_closed() && problem.coeffs.is_physical();
    check_compatibility_with(problem, m, tol, if jets { Route::Jet } else { Route::Grid })
}

pub fn check_compatibility_with<T: Real>(
    problem: &Problem<T>,
    m: usize,
    tol: Option<f64>,
    route: Route,
) -> Result<CompatReport> {
    let grid = problem.grid();
    let k = m.saturating_sub(1);
    let traces: Vec<Field<T>> = match route {
        Route::Jet => s_jets(problem, k)?.into_iter().map(|mut v| v.swap_remove(0)).collect(),
        Route::Grid => s_levels(&problem.coeffs, problem.t0, &problem.f, &problem.u0_field(), k)?
            .iter()
            .map(|f| f.wall_trace(grid))
            .collect(),
    };
    let tol = tol.unwrap_or_else(|| match route {
        Route::Jet => JET_TOLERANCE,
        Route::Grid => {
            let h = grid.spacings().iter().fold(T::zero(), |a, b| a.max(*b)).to_f64_lossy();
            4.0 * h * h
        }
    });
    let residuals: Vec<f64> = traces
        .iter()
        .take(m)
        .enumerate()
        .map(|(p, s)| wall_residual(grid, s, &problem.g_dt_wall(problem.t0, p)))
        .collect();
    let pass = residuals.iter().all(|r| *r <= tol);
    Ok(CompatReport {
        order: m,
        route,
        tol,
        residuals,
        pass,
        s_values: traces.iter().take(m).map(to_f64_field).collect(),
    })
}

// ---------------------------------------------------------- kernel solve

/// `v_p` with `A3 (−A0⁻¹ A3)^p v_p = A3 v0`, or `None` if the `{3,6}` block
/// of `A0` is singular.
pub fn kernel_solve_node<T: Ring>(a0: &Mat6<T>, v0: &Vec6<T>, p: usize) -> Option<Vec6<T>> {
    let (t11, t12, t21, t22) = (a0[(2, 2)], a0[(2, 5)], a0[(5, 2)], a0[(5, 5)]);
    let det = t11 * t22 - t12 * t21;
    if det == T::zero() {
        return None;
    }
    let mut q = curl_coefficient::<T>(2);
    q[(2, 2)] = T::one();
    q[(5, 5)] = T::one();
    let mut w = *v0;
    for _ in 0..p {
        let y = a0 * w;
        let (y1, y2) = (y[2], y[5]);
        let h1 = -(t22 * y1 - t12 * y2) / det;
        let h2 = -(t11 * y2 - t21 * y1) / det;
        let mut z = w;
        z[2] += h1;
        z[5] += h2;
        w = q * (-(a0 * z));
    }
    Some(w)
}

pub struct KernelSolution<T> {
    pub v: Field<T>,
    /// `max_node |v_p| / |v0|`.
    pub amplification: T,
}

/// Nodewise [`kernel_solve_node`] over a field (node `n` uses `a0.at(n)`).
pub fn kernel_solve<T: Real>(a0: &NodeField<Mat6<T>>, v0: &Field<T>, p: usize) -> Result<KernelSolution<T>> {
    let mut v = v0.clone();
    let mut amp = T::zero();
    for n in 0..v0.nodes() {
        let x = v0.vec6(n);
        let y = kernel_solve_node(a0.at(n), &x, p).ok_or(Error::SingularTheta { node: n })?;
        let nx = x.dot(&x).sqrt();
        if nx > T::zero() {
            amp = amp.max(y.dot(&y).sqrt() / nx);
        }
        v.set_node(n, y.as_slice());
    }
    Ok(KernelSolution { v, amplification: amp })
}

// ------------------------------------------------------- data correction

#[derive(Clone, Debug)]
pub struct Correction<T: Real> {
    /// Perturbed problem with corrected initial data `u0 + h`.
    pub problem: Problem<T>,
    pub lift: WallLift<T>,
    /// `h` on the grid.
    pub h: Field<T>,
    /// Discrete `H^m` norm of `h`.
    pub h_norm: T,
    /// `‖ΔS_p‖_{L²(wall)}` before each lifting step.
    pub defects: Vec<f64>,
    pub amplification: Vec<T>,
    pub report: CompatReport,
}

/// Correct `u0` so the problem with `perturbed` coefficients satisfies the
/// conditions of order `m`, given that `original` does.
pub fn correct_initial_data<T: Real>(
    original: &Problem<T>,
    perturbed: &CoefficientSet<T>,
    m: usize,
) -> Result<Correction<T>> {
    if m > MAX_LIFT_ORDER {
        return Err(Error::LiftFailure { order: m, max: MAX_LIFT_ORDER });
    }
    check_compatibility_with(original, m, None, Route::Jet)?.into_result()?;
    let grid = original.grid().clone();
    let np = grid.plane_len();
    let k = m.saturating_sub(1);
    let orig = s_jets(original, k)?;
    let exprs = match &original.u0 {
        InitialData::Closed { exprs, .. } => exprs.clone(),
        InitialData::Sampled(_) => unreachable!("jet route checked"),
    };
    let mut lift = WallLift {
        traces: vec![wall_field(&grid, 6); m.max(1)],
        cutoff: WallLift::<T>::default_cutoff(&grid),
    };
    let a0 = perturbed.a0_at(original.t0);
    let mut defects = Vec::new();
    let mut amplification = Vec::new();
    let mut problem = original.with_coefficients(perturbed.clone());
    for p in 1..m {
        problem.u0 = InitialData::Closed { exprs: exprs.clone(), lift: Some(lift.clone()) };
        let pert = s_jets(&problem, p)?;
        let delta = orig[p][0].sub(&pert[p][0]);
        defects.push(plane_l2(&grid, &delta));
        let sol = kernel_solve(&a0, &delta, p)?;
        lift.traces[p] = sol.v;
        amplification.push(sol.amplification);
    }
    problem.u0 = InitialData::Closed { exprs, lift: Some(lift.clone()) };
    let report = check_compatibility_with(&problem, m, None, Route::Jet)?;
    let h = lift.field(&grid);
    let h_norm = spaces::sobolev_norm(&grid, &h, m);
    debug_assert_eq!(lift.traces[0].nodes(), np);
    Ok(Correction { problem, lift, h, h_norm, defects, amplification, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{assemble_coefficients, MaterialLaw, TensorExpr};
    use crate::problem::{free_wave, manufactured, pec_mode, standing_wave};
    use num_rational::Rational64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize, nz: usize) -> Grid<f64> {
        Grid::new([2.0 * PI, 2.0 * PI, 1.0], [n, n, nz]).unwrap()
    }

    fn vacuum(g: &Grid<f64>) -> CoefficientSet<f64> {
        assemble_coefficients(&MaterialLaw::vacuum(), g, &[0.0]).unwrap()
    }

    #[test]
    fn first_level_of_linear_magnetic_field() {
        let g = grid(4, 17);
        let u0 = vec![
            Expr::zero(),
            Expr::zero(),
            Expr::zero(),
            Expr::x(2).neg(),
            Expr::zero(),
            Expr::zero(),
        ];
        let p = free_wave(vacuum(&g), u0, 0.0);
        let s = s_mp(&p.coeffs, 0.0, &p.f, &p.u0_field(), 1).unwrap();
        let j = s_jets(&p, 1).unwrap();
        for n in [0, 5, g.len() - 1] {
            for (c, want) in [0.0, -1.0, 0.0, 0.0, 0.0, 0.0].iter().enumerate() {
                assert!((s.get(n, c) - want).abs() < 1e-13);
            }
        }
        for (c, want) in [0.0, -1.0, 0.0, 0.0, 0.0, 0.0].iter().enumerate() {
            assert!((j[1][0].get(3, c) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn s_levels_are_linear_in_data() {
        let g = grid(8, 9);
        let c = vacuum(&g);
        let a = grid::sample(&g, &pec_mode(1.0, PI), 0.3);
        let b = grid::sample(&g, &standing_wave(2.0 * PI), 0.1);
        let fa = Source::Closed(vec![Expr::t().sin(); 6]);
        let sa = s_mp(&c, 0.2, &fa, &a, 2).unwrap();
        let sb = s_mp(&c, 0.2, &Source::Zero, &b, 2).unwrap();
        let sab = s_mp(&c, 0.2, &fa, &a.axpy(2.0, &b), 2).unwrap();
        let lin = sa.axpy(2.0, &sb);
        assert!(sab.sub(&lin).max_abs() < 1e-10);
    }

    #[test]
    fn jets_match_exact_time_derivatives() {
        let g = grid(16, 9);
        let u = pec_mode(1.0, PI);
        let p = free_wave(vacuum(&g), u.clone(), 0.4);
        let s = s_jets(&p, 3).unwrap();
        for (lvl, jets) in s.iter().enumerate() {
            let want: Vec<Expr> = u.iter().map(|e| e.diff_n(Var::T, lvl)).collect();
            let w = expr_jets(&g, &want, 0.4, 3 - lvl);
            for q in 0..jets.len() {
                assert!(jets[q].sub(&w[q]).max_abs() < 1e-10, "level {lvl} jet {q}");
            }
        }
        let r = check_compatibility(&p, 4, None).unwrap();
        assert_eq!(r.route, Route::Jet);
        assert!(r.pass, "{:?}", r.residuals);
        assert_eq!(r.s_values[0].data, to_f64_field(&p.u0_field().wall_trace(&g)).data);
    }

    #[test]
    fn grid_route_tolerance_and_failure() {
        let g = grid(16, 33);
        let p = free_wave(vacuum(&g), standing_wave(2.0 * PI), 0.2);
        let r = check_compatibility_with(&p, 2, None, Route::Grid).unwrap();
        assert!(r.pass, "{:?} tol {}", r.residuals, r.tol);
        let mut bad = p.clone();
        bad.g = [Expr::one(), Expr::zero()];
        let r = check_compatibility(&bad, 1, None).unwrap();
        assert!(!r.pass);
        assert!(matches!(r.into_result(), Err(Error::CompatibilityFailure { .. })));
    }

    #[test]
    fn manufactured_data_is_compatible_in_varying_media() {
        let g = grid(8, 17);
        let eps = TensorExpr::parse(&[
            vec!["2 + 0.3*sin(x)*z".into(), "0.1*z".into(), "0".into()],
            vec!["0.1*z".into(), "2".into(), "0".into()],
            vec!["0".into(), "0".into(), "1.5 + 0.2*t".into()],
        ])
        .unwrap();
        let law = MaterialLaw::closed(eps, TensorExpr::identity(), TensorExpr::scalar(Expr::constant(0.3)));
        let c = assemble_coefficients(&law, &g, &[0.0, 1.0]).unwrap();
        let u = vec![
            Expr::parse("sin(x + t) * cos(z)").unwrap(),
            Expr::parse("cos(y) * exp(-t) + z").unwrap(),
            Expr::parse("z*z*sin(t)").unwrap(),
            Expr::parse("cos(x) * z").unwrap(),
            Expr::parse("sin(t + y)").unwrap(),
            Expr::parse("z * cos(x + y)").unwrap(),
        ];
        let p = manufactured(c, u, 0.3).unwrap();
        let r = check_compatibility(&p, 3, None).unwrap();
        assert!(r.pass, "{:?}", r.residuals);
    }

    #[test]
    fn kernel_solve_exact_in_rationals() {
        let r = |n: i64, d: i64| Rational64::new(n, d);
        let mut a0 = Mat6::<Rational64>::identity();
        a0[(0, 2)] = r(1, 3);
        a0[(2, 0)] = r(1, 3);
        a0[(5, 5)] = r(2, 1);
        a0[(2, 5)] = r(1, 4);
        a0[(5, 2)] = r(1, 4);
        let ainv = linalg::inverse(&a0).unwrap();
        let a3 = curl_coefficient::<Rational64>(2);
        let v0 = Vec6::from_iterator((1..=6).map(|i| r(i, 7)));
        for p in 0..4 {
            let v = kernel_solve_node(&a0, &v0, p).unwrap();
            let mut lhs = v;
            for _ in 0..p {
                lhs = -(ainv * (a3 * lhs));
            }
            assert_eq!(a3 * lhs, a3 * v0);
        }
    }

    #[test]
    fn lift_order_is_capped() {
        let g = grid(4, 9);
        let p = free_wave(vacuum(&g), standing_wave(2.0 * PI), 0.0);
        assert!(matches!(
            correct_initial_data(&p, &p.coeffs, 4),
            Err(Error::LiftFailure { order: 4, max: 3 })
        ));
    }

    #[test]
    fn correction_restores_compatibility() {
        let g = grid(8, 33);
        let c = vacuum(&g);
        let u = vec![
            Expr::zero(),
            Expr::parse("sin(x) * sin(t + 1) * cos(z)").unwrap(),
            Expr::zero(),
            Expr::parse("cos(y) * z").unwrap(),
            Expr::parse("sin(x + t)").unwrap(),
            Expr::zero(),
        ];
        let p = manufactured(c, u, 0.0).unwrap();
        let eps = TensorExpr::parse(&[
            vec!["1.2".into(), "0.1".into(), "0".into()],
            vec!["0.1".into(), "1 + 0.1*cos(x)".into(), "0.05".into()],
            vec!["0".into(), "0.05".into(), "1.3".into()],
        ])
        .unwrap();
        let law = MaterialLaw::closed(eps, TensorExpr::identity(), TensorExpr::zero());
        let pert = assemble_coefficients(&law, &g, &[0.0]).unwrap();
        let before = check_compatibility(&p.with_coefficients(pert.clone()), 3, None).unwrap();
        assert!(!before.pass);
        let fix = correct_initial_data(&p, &pert, 3).unwrap();
        assert!(fix.report.pass, "{:?}", fix.report.residuals);
        assert!(fix.defects[0] > 1e-3);
    }

    proptest! {
        #[test]
        fn kernel_solve_identity(
            diag in proptest::collection::vec(1.0f64..3.0, 6),
            off in proptest::collection::vec(-0.2f64..0.2, 15),
            v in proptest::collection::vec(-1.0f64..1.0, 6),
            p in 0usize..4,
        ) {
            let mut a0 = Mat6::from_diagonal(&Vec6::from_column_slice(&diag));
            let mut it = off.iter();
            for i in 0..6 {
                for j in i + 1..6 {
                    let x = *it.next().unwrap();
                    a0[(i, j)] = x;
                    a0[(j, i)] = x;
                }
            }
            let v0 = Vec6::from_column_slice(&v);
            let w = kernel_solve_node(&a0, &v0, p).unwrap();
            let ainv = a0.try_inverse().unwrap();
            let a3 = curl_coefficient::<f64>(2);
            let mut lhs = w;
            for _ in 0..p {
                lhs = -(ainv * (a3 * lhs));
            }
            prop_assert!((a3 * lhs - a3 * v0).amax() < 1e-9 * (1.0 + w.amax()));
        }
    }
}
