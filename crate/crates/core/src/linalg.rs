//! Small dense linear algebra over [`Ring`] / [`Real`] scalars.
//!
//! nalgebra supplies storage and products; the decompositions are written
//! here because they must also run over exact rationals.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use num_traits::{Float, Signed};

use crate::scalar::{Real, Ring};

pub type Mat2<T> = SMatrix<T, 2, 2>;
pub type Mat3<T> = SMatrix<T, 3, 3>;
pub type Mat6<T> = SMatrix<T, 6, 6>;
pub type Vec2<T> = SVector<T, 2>;
pub type Vec3<T> = SVector<T, 3>;
pub type Vec6<T> = SVector<T, 6>;

/// Result of row-reducing a (possibly rank deficient) linear system.
#[derive(Clone, Debug)]
pub struct EchelonSolution<T: Ring> {
    /// Basic solution: free variables set to zero.
    pub x: DVector<T>,
    pub rank: usize,
    /// `max |A x - b|` after back substitution.
    pub residual: T,
}

fn pick_pivot<T: Ring>(a: &DMatrix<T>, row: usize, col: usize) -> Option<usize> {
    let tol = T::zero_tolerance();
    let mut best: Option<(usize, T)> = None;
    for r in row..a.nrows() {
        let v = Signed::abs(&a[(r, col)]);
        if v > tol && best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((r, v));
        }
    }
    best.map(|(r, _)| r)
}

/// Gauss-Jordan elimination of `a x = b` returning the basic solution.
///
/// Works exactly over rationals; over floats uses partial pivoting.
pub fn solve_echelon<T: Ring>(a: &DMatrix<T>, b: &DVector<T>) -> EchelonSolution<T> {
    let (rows, cols) = a.shape();
    let mut m = a.clone();
    let mut rhs = b.clone();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let Some(p) = pick_pivot(&m, row, col) else {
            continue;
        };
        m.swap_rows(p, row);
        rhs.swap_rows(p, row);
        let piv = m[(row, col)];
        for c in 0..cols {
            m[(row, c)] /= piv;
        }
        rhs[row] /= piv;
        for r in 0..rows {
            if r != row {
                let factor = m[(r, col)];
                if factor != T::zero() {
                    for c in 0..cols {
                        let v = m[(row, c)];
                        m[(r, c)] -= factor * v;
                    }
                    let v = rhs[row];
                    rhs[r] -= factor * v;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let mut x = DVector::from_element(cols, T::zero());
    for (r, &c) in pivots.iter().enumerate() {
        x[c] = rhs[r];
    }
    let residual = max_abs_vec(&(a * &x - b));
    EchelonSolution {
        x,
        rank: pivots.len(),
        residual,
    }
}

/// Rank by exact (or tolerance-based) row reduction.
pub fn rank<T: Ring>(a: &DMatrix<T>) -> usize {
    let b = DVector::from_element(a.nrows(), T::zero());
    solve_echelon(a, &b).rank
}

pub fn max_abs_vec<T: Ring>(v: &DVector<T>) -> T {
    v.iter()
        .map(Signed::abs)
        .fold(T::zero(), |acc, x| if x > acc { x } else { acc })
}

/// Entrywise max-abs norm for any matrix shape.
pub fn max_abs<T: Ring, const R: usize, const C: usize>(m: &SMatrix<T, R, C>) -> T {
    m.iter()
        .map(Signed::abs)
        .fold(T::zero(), |acc, x| if x > acc { x } else { acc })
}

/// Gauss-Jordan inverse with partial pivoting. `None` when singular.
pub fn inverse<T: Ring, const N: usize>(m: &SMatrix<T, N, N>) -> Option<SMatrix<T, N, N>> {
    let mut a = *m;
    let mut inv = SMatrix::<T, N, N>::identity();
    let tol = T::zero_tolerance();
    for col in 0..N {
        let mut best = col;
        let mut best_v = Signed::abs(&a[(col, col)]);
        for r in col + 1..N {
            let v = Signed::abs(&a[(r, col)]);
            if v > best_v {
                best = r;
                best_v = v;
            }
        }
        if best_v <= tol {
            return None;
        }
        a.swap_rows(best, col);
        inv.swap_rows(best, col);
        let piv = a[(col, col)];
        for c in 0..N {
            a[(col, c)] /= piv;
            inv[(col, c)] /= piv;
        }
        for r in 0..N {
            if r != col {
                let f = a[(r, col)];
                if f != T::zero() {
                    for c in 0..N {
                        let av = a[(col, c)];
                        let iv = inv[(col, c)];
                        a[(r, c)] -= f * av;
                        inv[(r, c)] -= f * iv;
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Cholesky factor `L` with `m = L Lᵀ`; `None` unless `m` is positive definite.
pub fn cholesky<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> Option<SMatrix<T, N, N>> {
    let mut l = SMatrix::<T, N, N>::zeros();
    for j in 0..N {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= T::zero() || !Float::is_finite(d) {
            return None;
        }
        let djj = Float::sqrt(d);
        l[(j, j)] = djj;
        for i in j + 1..N {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solve `L Lᵀ x = b` given a Cholesky factor.
pub fn cholesky_solve<T: Real, const N: usize>(
    l: &SMatrix<T, N, N>,
    b: &SVector<T, N>,
) -> SVector<T, N> {
    let mut y = *b;
    for i in 0..N {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..N).rev() {
        let mut s = y[i];
        for k in i + 1..N {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> [T; N] {
    let mut a = (*m + m.transpose()) * T::lit(0.5);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut scale = T::zero();
        for i in 0..N {
            scale += a[(i, i)] * a[(i, i)];
            for j in 0..N {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off <= eps * eps * (scale + off) || off == T::zero() {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (Float::abs(theta) + Float::sqrt(theta * theta + T::one()));
                let c = T::one() / Float::sqrt(t * t + T::one());
                let s = t * c;
                for k in 0..N {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev = [T::zero(); N];
    for (i, e) in ev.iter_mut().enumerate() {
        *e = a[(i, i)];
    }
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_eigenvalue<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> T {
    symmetric_eigenvalues(m)[0]
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_norm<T: Real, const N: usize>(m: &SMatrix<T, N, N>) -> T {
    let ev = symmetric_eigenvalues(m);
    Float::max(Float::abs(ev[0]), Float::abs(ev[N - 1]))
}

/// Max-abs asymmetry `‖m - mᵀ‖∞`.
pub fn asymmetry<T: Ring, const N: usize>(m: &SMatrix<T, N, N>) -> T {
    max_abs(&(m - m.transpose()))
}

pub fn block_diag3<T: Ring>(a: &Mat3<T>, b: &Mat3<T>) -> Mat6<T> {
    let mut out = Mat6::<T>::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(b);
    out
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}
