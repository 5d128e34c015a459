//! Discrete function-space norms, Fourier multipliers and mollifiers.
//!
//! Tangential directions are periodic, so fractional and weighted norms are
//! exact FFT multipliers on each `x3` plane; `x3` is integrated by the
//! trapezoid rule.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{self, Field, Grid};
use crate::scalar::Real;

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct NormReport {
    pub gm: f64,
    pub hm: f64,
    pub em: f64,
    pub gamma: f64,
}

// ---------------------------------------------------------------- Fourier

/// Angular wavenumber of FFT bin `i` out of `n` on a period `l`.
pub fn wavenumber<T: Real>(i: usize, n: usize, l: T) -> T {
    let s = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    T::lit(2.0 * std::f64::consts::PI * s) / l
}

/// Forward 2D FFT of a scalar plane stored with `x1` fastest.
pub fn fft2<T: Real>(nx: usize, ny: usize, data: &[T]) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = data.iter().map(|v| Complex::new(*v, T::zero())).collect();
    transform2(nx, ny, &mut buf, false);
    buf
}

/// Inverse 2D FFT (normalized), returning real parts.
pub fn ifft2<T: Real>(nx: usize, ny: usize, mut buf: Vec<Complex<T>>) -> Vec<T> {
    transform2(nx, ny, &mut buf, true);
    let scale = T::one() / T::from_usize_lossy(nx * ny);
    buf.iter().map(|c| c.re * scale).collect()
}

fn transform2<T: Real>(nx: usize, ny: usize, buf: &mut [Complex<T>], inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    for row in buf.chunks_mut(nx) {
        fx.process(row);
    }
    if ny > 1 {
        let mut col = vec![Complex::new(T::zero(), T::zero()); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            fy.process(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
    }
}

/// Apply a real Fourier multiplier `m(ξ1, ξ2)` to a scalar plane.
pub fn apply_multiplier<T: Real>(
    grid: &Grid<T>,
    plane: &[T],
    m: impl Fn(T, T) -> T,
) -> Vec<T> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut hat = fft2(nx, ny, plane);
    for j in 0..ny {
        let ky = wavenumber(j, ny, grid.lengths[1]);
        for i in 0..nx {
            let kx = wavenumber(i, nx, grid.lengths[0]);
            hat[j * nx + i] = hat[j * nx + i] * m(kx, ky);
        }
    }
    ifft2(nx, ny, hat)
}

/// Spectral tangential derivative of a scalar plane (Nyquist mode dropped).
pub fn spectral_diff_plane<T: Real>(grid: &Grid<T>, plane: &[T], axis: usize) -> Vec<T> {
    assert!(axis < 2);
    let (nx, ny) = (grid.nx(), grid.ny());
    let n = grid.counts[axis];
    let mut hat = fft2(nx, ny, plane);
    for j in 0..ny {
        for i in 0..nx {
            let idx = if axis == 0 { i } else { j };
            let k = if n.is_multiple_of(2) && idx == n / 2 {
                T::zero()
            } else {
                wavenumber(idx, n, grid.lengths[axis])
            };
            let c = hat[j * nx + i];
            // i k ĉ
            hat[j * nx + i] = Complex::new(-k * c.im, k * c.re);
        }
    }
    ifft2(nx, ny, hat)
}

/// Spectral tangential derivative of every component of a plane field.
pub fn spectral_diff_plane_field<T: Real>(grid: &Grid<T>, f: &Field<T>, axis: usize) -> Field<T> {
    let nc = f.ncomp;
    let np = grid.plane_len();
    let mut out = Field {
        ncomp: nc,
        data: vec![T::zero(); np * nc],
    };
    for c in 0..nc {
        let plane: Vec<T> = (0..np).map(|n| f.get(n, c)).collect();
        let d = spectral_diff_plane(grid, &plane, axis);
        for n in 0..np {
            out.set(n, c, d[n]);
        }
    }
    out
}

/// `Σ_ξ m(ξ) |v̂(ξ)|²` scaled to approximate `∫ m |v̂|² dξ` (Parseval).
fn plane_multiplier_energy<T: Real>(grid: &Grid<T>, plane: &[T], m: &impl Fn(T) -> T) -> T {
    let (nx, ny) = (grid.nx(), grid.ny());
    let hat = fft2(nx, ny, plane);
    let mut acc = T::zero();
    for j in 0..ny {
        let ky = wavenumber(j, ny, grid.lengths[1]);
        for i in 0..nx {
            let kx = wavenumber(i, nx, grid.lengths[0]);
            acc += m(kx * kx + ky * ky) * hat[j * nx + i].norm_sqr();
        }
    }
    acc * grid.wall_weight() / T::from_usize_lossy(nx * ny)
}

/// Tangential multiplier norm squared of a 3D field: planes by FFT,
/// `x3` by trapezoid. `m` receives `|ξ|²`.
pub fn tangential_multiplier_sq<T: Real>(grid: &Grid<T>, v: &Field<T>, m: impl Fn(T) -> T + Sync) -> T {
    let np = grid.plane_len();
    let per_plane: Vec<T> = (0..grid.nz())
        .into_par_iter()
        .map(|k| {
            let mut acc = T::zero();
            for c in 0..v.ncomp {
                let plane: Vec<T> = (0..np).map(|n| v.get(k * np + n, c)).collect();
                acc += plane_multiplier_energy(grid, &plane, &m);
            }
            acc
        })
        .collect();
    per_plane
        .iter()
        .enumerate()
        .fold(T::zero(), |a, (k, e)| a + *e * grid.z_weight(k))
}

/// Multiplier norm squared of a wall-plane field (no `x3` integration).
pub fn boundary_multiplier_sq<T: Real>(grid: &Grid<T>, g: &Field<T>, m: impl Fn(T) -> T) -> T {
    let np = grid.plane_len();
    let mut acc = T::zero();
    for c in 0..g.ncomp {
        let plane: Vec<T> = (0..np).map(|n| g.get(n, c)).collect();
        acc += plane_multiplier_energy(grid, &plane, &m);
    }
    acc
}

/// `‖v‖_{s,δ}` with multiplier `(1+|ξ|²)^{s+1} (1+δ²|ξ|²)^{-1}`.
pub fn weighted_tangential_norm<T: Real>(grid: &Grid<T>, v: &Field<T>, s: T, delta: T) -> T {
    let d2 = delta * delta;
    tangential_multiplier_sq(grid, v, |k2| (T::one() + k2).powf(s + T::one()) / (T::one() + d2 * k2)).sqrt()
}

/// Tangential Sobolev norm `‖v‖_{H^s_ta}`.
pub fn tangential_sobolev_norm<T: Real>(grid: &Grid<T>, v: &Field<T>, s: T) -> T {
    tangential_multiplier_sq(grid, v, |k2| (T::one() + k2).powf(s)).sqrt()
}

/// Fractional boundary norm `‖g‖_{H^s(∂G)}` on the periodic wall plane.
pub fn boundary_sobolev_norm<T: Real>(grid: &Grid<T>, g: &Field<T>, s: T) -> T {
    boundary_multiplier_sq(grid, g, |k2| (T::one() + k2).powf(s)).sqrt()
}

// ---------------------------------------------------------------- Sobolev

/// All multi-indices `(a1, a2, a3)` with `|α| <= m`, as derivative fields.
fn derivative_tower<T: Real>(grid: &Grid<T>, v: &Field<T>, m: usize, axes: &[usize]) -> Vec<Field<T>> {
    let mut out = vec![v.clone()];
    let mut level: Vec<(usize, Field<T>)> = vec![(0, v.clone())];
    for _ in 0..m {
        let mut next = Vec::new();
        for (first, f) in &level {
            for (ai, &axis) in axes.iter().enumerate().skip(*first) {
                let d = grid::diff(grid, f, axis);
                next.push((ai, d));
            }
        }
        out.extend(next.iter().map(|(_, f)| f.clone()));
        level = next;
    }
    out
}

/// Discrete `H^m` norm by finite differences (all mixed derivatives counted
/// once per sorted multi-index).
pub fn sobolev_norm<T: Real>(grid: &Grid<T>, v: &Field<T>, m: usize) -> T {
    derivative_tower(grid, v, m, &[0, 1, 2])
        .iter()
        .fold(T::zero(), |a, f| a + f.l2_squared(grid))
        .sqrt()
}

/// Discrete tangential `H^m_ta` norm (derivatives in `x1`, `x2` only).
pub fn tangential_fd_norm<T: Real>(grid: &Grid<T>, v: &Field<T>, m: usize) -> T {
    derivative_tower(grid, v, m, &[0, 1])
        .iter()
        .fold(T::zero(), |a, f| a + f.l2_squared(grid))
        .sqrt()
}

/// Snapshots `u(t_n)` with optional stored `∂t u(t_n)`.
#[derive(Clone, Debug)]
pub struct TimeSeries<T> {
    pub times: Vec<T>,
    pub values: Vec<Field<T>>,
    pub derivs: Option<Vec<Field<T>>>,
}

impl<T: Real> TimeSeries<T> {
    fn difference(times: &[T], s: &[Field<T>]) -> Vec<Field<T>> {
        let n = s.len();
        if n < 2 {
            return s.iter().map(|f| f.scale(T::zero())).collect();
        }
        (0..n)
            .map(|i| {
                if n >= 3 && i == 0 {
                    let h = times[1] - times[0];
                    // (-3 f0 + 4 f1 - f2) / 2h
                    s[0].scale(T::lit(-1.5) / h)
                        .axpy(T::lit(2.0) / h, &s[1])
                        .axpy(T::lit(-0.5) / h, &s[2])
                } else if n >= 3 && i + 1 == n {
                    let h = times[n - 1] - times[n - 2];
                    s[n - 1]
                        .scale(T::lit(1.5) / h)
                        .axpy(T::lit(-2.0) / h, &s[n - 2])
                        .axpy(T::lit(0.5) / h, &s[n - 3])
                } else if n == 2 {
                    s[1].sub(&s[0]).scale(T::one() / (times[1] - times[0]))
                } else {
                    s[i + 1].sub(&s[i - 1]).scale(T::one() / (times[i + 1] - times[i - 1]))
                }
            })
            .collect()
    }

    /// `∂t^j u` at every snapshot: stored stage derivatives when available,
    /// else second-order differences.
    pub fn time_derivative(&self, j: usize) -> Vec<Field<T>> {
        match (j, &self.derivs) {
            (0, _) => self.values.clone(),
            (_, Some(d)) => {
                let mut s = d.clone();
                for _ in 1..j {
                    s = Self::difference(&self.times, &s);
                }
                s
            }
            (_, None) => {
                let mut s = self.values.clone();
                for _ in 0..j {
                    s = Self::difference(&self.times, &s);
                }
                s
            }
        }
    }
}

/// `max_{j<=m} sup_t e^{-γt} ‖∂t^j u(t)‖_{H^{m-j}}`.
pub fn gm_norm<T: Real>(grid: &Grid<T>, u: &TimeSeries<T>, m: usize, gamma: T) -> T {
    let mut best = T::zero();
    for j in 0..=m {
        let dj = u.time_derivative(j);
        for (t, f) in u.times.iter().zip(&dj) {
            let w = (-gamma * *t).exp();
            best = best.max(w * sobolev_norm(grid, f, m - j));
        }
    }
    best
}

/// `max_{j<=m} ( ∫ e^{-2γt} ‖∂t^j g‖²_{H^{m+1/2-j}} dt )^{1/2}` given the
/// time derivatives `derivs[j][n]` of the wall data at `times[n]`.
pub fn em_norm_from_derivatives<T: Real>(
    grid: &Grid<T>,
    times: &[T],
    derivs: &[Vec<Field<T>>],
    m: usize,
    gamma: T,
) -> T {
    let mut best = T::zero();
    for (j, dj) in derivs.iter().enumerate().take(m + 1) {
        let s = T::from_usize_lossy(m) + T::lit(0.5) - T::from_usize_lossy(j);
        let vals: Vec<T> = times
            .iter()
            .zip(dj)
            .map(|(t, g)| (T::lit(-2.0) * gamma * *t).exp() * boundary_sobolev_norm(grid, g, s).powi(2))
            .collect();
        best = best.max(trapezoid(times, &vals).sqrt());
    }
    best
}

/// `em_norm` of sampled wall data, time derivatives by differences.
pub fn em_norm<T: Real>(grid: &Grid<T>, times: &[T], g: &[Field<T>], m: usize, gamma: T) -> T {
    let mut derivs = vec![g.to_vec()];
    for _ in 0..m {
        let last = derivs.last().expect("nonempty");
        derivs.push(TimeSeries::difference(times, last));
    }
    em_norm_from_derivatives(grid, times, &derivs, m, gamma)
}

pub fn trapezoid<T: Real>(times: &[T], vals: &[T]) -> T {
    let mut acc = T::zero();
    for i in 1..times.len() {
        acc += (times[i] - times[i - 1]) * (vals[i] + vals[i - 1]) * T::lit(0.5);
    }
    acc
}

// ---------------------------------------------------------------- mollifiers

/// Standard bump `exp(-1/(1-r²))` for `r < 1`.
fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MollifierPair {
    pub epsilon: f64,
    pub delta: f64,
    /// Vanishing order target for the tangential kernel.
    pub order: usize,
    /// `F2 χ` sampled on a radial table `|ξ| = i * dk`.
    #[serde(skip)]
    chi_table: Vec<f64>,
    #[serde(skip)]
    chi_dk: f64,
}

impl MollifierPair {
    pub fn new(epsilon: f64, delta: f64, order: usize) -> Result<Self> {
        if !(epsilon < delta) {
            return Err(Error::ScaleOrderError { epsilon, delta });
        }
        Ok(MollifierPair {
            epsilon,
            delta,
            order,
            chi_table: Vec::new(),
            chi_dk: 0.0,
        })
    }

    /// Laplacian power `n = ⌈(m+1)/2⌉` in `χ = Δ^n b`.
    pub fn laplacian_power(&self) -> usize {
        (self.order + 1).div_ceil(2)
    }

    /// Tabulate `F2 χ` up to `|ξ| <= kmax` for fast lookup.
    pub fn with_chi_table(mut self, kmax: f64, points: usize) -> Self {
        let dk = kmax / points as f64;
        self.chi_table = (0..=points + 1).map(|i| chi_hat(self.laplacian_power(), i as f64 * dk)).collect();
        self.chi_dk = dk;
        self
    }

    /// `F2 χ(|ξ|)`; exact quadrature, or table interpolation when available.
    pub fn chi_hat(&self, k: f64) -> f64 {
        if self.chi_dk > 0.0 {
            let x = k / self.chi_dk;
            let i = x.floor() as usize;
            if i + 1 < self.chi_table.len() {
                let w = x - i as f64;
                return self.chi_table[i] * (1.0 - w) + self.chi_table[i + 1] * w;
            }
        }
        chi_hat(self.laplacian_power(), k)
    }
}

/// `2π ∫_0^1 b(r) J0(k r) r dr` normalized so `∫ b = 1`.
pub fn bump_hat(k: f64) -> f64 {
    const NR: usize = 400;
    let mass = radial_integral(|_| 1.0, NR);
    radial_integral(|r| bessel_j0(k * r), NR) / mass
}

fn radial_integral(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    // b vanishes to all orders at r = 1, so the trapezoid rule is spectral
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for i in 1..n {
        let r = i as f64 * h;
        acc += bump(r * r) * f(r) * r;
    }
    2.0 * std::f64::consts::PI * acc * h
}

/// `J0(z) = (1/π) ∫_0^π cos(z sin θ) dθ`, periodic trapezoid.
pub fn bessel_j0(z: f64) -> f64 {
    let n = 64 + (z.abs() * 2.0) as usize;
    let h = std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let th = (i as f64 + 0.5) * h;
        acc += (z * th.sin()).cos();
    }
    acc / n as f64
}

/// `F2 χ(k) = (-k²)^n F2 b(k)` for `χ = Δ^n b`.
pub fn chi_hat(n: usize, k: f64) -> f64 {
    (-(k * k)).powi(n as i32) * bump_hat(k)
}

/// `χ = Δ^n b` in closed form (unit-mass `b`), for quadrature oracles.
pub fn chi_expr(n: usize) -> Expr {
    let mass = radial_integral(|_| 1.0, 400);
    let r2 = Expr::x(0).powi(2).add(&Expr::x(1).powi(2));
    // psi(1 - r²) = exp(-1/(1-r²)) inside the unit disc, 0 outside
    let mut e = Expr::one().sub(&r2).psi().div(&Expr::constant(mass));
    for _ in 0..n {
        e = e.diff_n(Var::X1, 2).add(&e.diff_n(Var::X2, 2));
    }
    e
}

/// `(M_ε T_δ v)|_{x3 > 0}`: shift by `δ` away from the wall, then average
/// against a discrete unit-mass bump of radius `ε`.
pub fn mollify_normal<T: Real>(grid: &Grid<T>, v: &Field<T>, pair: &MollifierPair) -> Result<Field<T>> {
    if !(pair.epsilon < pair.delta) {
        return Err(Error::ScaleOrderError {
            epsilon: pair.epsilon,
            delta: pair.delta,
        });
    }
    let h: Vec<f64> = grid.spacings().iter().map(|x| x.to_f64_lossy()).collect();
    let shift = (pair.delta / h[2]).round() as isize;
    if ((shift as f64) * h[2] - pair.delta).abs() > 1e-9 * pair.delta {
        return Err(Error::Invalid("delta must be a multiple of the normal spacing".into()));
    }
    let reach: Vec<isize> = h.iter().map(|hh| (pair.epsilon / hh).floor() as isize).collect();
    let mut stencil = Vec::new();
    let mut mass = 0.0;
    for dk in -reach[2]..=reach[2] {
        for dj in -reach[1]..=reach[1] {
            for di in -reach[0]..=reach[0] {
                let r2 = ((di as f64 * h[0]).powi(2) + (dj as f64 * h[1]).powi(2) + (dk as f64 * h[2]).powi(2))
                    / (pair.epsilon * pair.epsilon);
                let w = bump(r2);
                if w > 0.0 {
                    stencil.push((di, dj, dk, w));
                    mass += w;
                }
            }
        }
    }
    let stencil: Vec<(isize, isize, isize, T)> =
        stencil.into_iter().map(|(a, b, c, w)| (a, b, c, T::lit(w / mass))).collect();
    let (nx, ny, nz) = (grid.nx() as isize, grid.ny() as isize, grid.nz() as isize);
    Ok(Field::from_fn(grid, v.ncomp, |node, _, out| {
        let [i, j, k] = grid.ijk(node);
        out.iter_mut().for_each(|o| *o = T::zero());
        for &(di, dj, dk, w) in &stencil {
            let ii = (i as isize + di).rem_euclid(nx) as usize;
            let jj = (j as isize + dj).rem_euclid(ny) as usize;
            // constant continuation beyond the cap
            let kk = (k as isize + shift + dk).clamp(0, nz - 1) as usize;
            let src = grid.index(ii, jj, kk);
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * v.get(src, c);
            }
        }
    }))
}

/// `J_ε v`: tangential convolution with `χ_ε` as the multiplier `F2χ(εξ)`.
pub fn mollify_tangential<T: Real>(grid: &Grid<T>, v: &Field<T>, pair: &MollifierPair, eps: T) -> Field<T> {
    let np = grid.plane_len();
    let mut out = Field::zeros(grid, v.ncomp);
    let planes: Vec<Vec<T>> = (0..grid.nz() * v.ncomp)
        .into_par_iter()
        .map(|kc| {
            let (k, c) = (kc / v.ncomp, kc % v.ncomp);
            let plane: Vec<T> = (0..np).map(|n| v.get(k * np + n, c)).collect();
            apply_multiplier(grid, &plane, |kx, ky| {
                let r = (kx * kx + ky * ky).sqrt() * eps;
                T::lit(pair.chi_hat(r.to_f64_lossy()))
            })
        })
        .collect();
    for (kc, plane) in planes.iter().enumerate() {
        let (k, c) = (kc / v.ncomp, kc % v.ncomp);
        for (n, val) in plane.iter().enumerate() {
            out.set(k * np + n, c, *val);
        }
    }
    out
}
