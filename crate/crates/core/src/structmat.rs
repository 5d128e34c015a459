//! Constant structure matrices of the Maxwell system.
//!
//! Everything is generated from the Levi-Civita symbol: `J_l` with
//! `J_{l;mn} = -ε_{lmn}`, the curl blocks `A_j^co = [[0, -J_j], [J_j, 0]]`,
//! the wall matrix `B^co = (e2, -e1)ᵀ`, and the factors `M^co`, `C^co`
//! obtained by row reduction of the linear systems `B = M A3` and
//! `A3 = ½(CᵀB + BᵀC)`.

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Mat6, Vec3};
use crate::scalar::Ring;

pub type Mat2x6<T> = SMatrix<T, 2, 6>;

/// Levi-Civita symbol on zero-based indices.
pub fn levi_civita(i: usize, j: usize, k: usize) -> i64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (2, 1, 0) | (1, 0, 2) | (0, 2, 1) => -1,
        _ => 0,
    }
}

/// `J_l` with entries `-ε_{lmn}` (zero-based `l`).
pub fn curl_block<T: Ring>(l: usize) -> Mat3<T> {
    Mat3::from_fn(|m, n| T::from_int(-levi_civita(l, m, n)))
}

/// `A_l^co = [[0, -J_l], [J_l, 0]]`.
pub fn curl_coefficient<T: Ring>(l: usize) -> Mat6<T> {
    let j = curl_block::<T>(l);
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-j));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&j);
    a
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureMatrixSet<T: Ring> {
    /// `J_1, J_2, J_3`.
    pub j: [Mat3<T>; 3],
    /// `A_1^co, A_2^co, A_3^co`.
    pub a_co: [Mat6<T>; 3],
    pub b_co: Mat2x6<T>,
    pub c_co: Mat2x6<T>,
    pub m_co: Mat2x6<T>,
    pub q: Mat6<T>,
}

impl<T: Ring> StructureMatrixSet<T> {
    pub fn a3(&self) -> &Mat6<T> {
        &self.a_co[2]
    }

    /// `Σ_j J_j ∂_j u` for a Jacobian `jac[(m, j)] = ∂_j u_m`.
    pub fn apply_curl(&self, jac: &Mat3<T>) -> Vec3<T> {
        let mut out = Vec3::zeros();
        for j in 0..3 {
            out += self.j[j] * jac.column(j);
        }
        out
    }

    /// `‖B - M A3‖∞`.
    pub fn factorization_residual(&self) -> T {
        linalg::max_abs(&(self.b_co - self.m_co * self.a3()))
    }

    /// `‖A3 - ½(CᵀB + BᵀC)‖∞`.
    pub fn symmetric_split_residual(&self) -> T {
        let two = T::from_int(2);
        let split = (self.c_co.transpose() * self.b_co + self.b_co.transpose() * self.c_co) / two;
        linalg::max_abs(&(self.a3() - split))
    }

    /// Basis of `ker A3` from row reduction (columns of the result).
    pub fn a3_kernel_basis(&self) -> Vec<DVector<T>> {
        nullspace(&DMatrix::from_iterator(6, 6, self.a3().iter().copied()))
    }
}

/// Basis of the null space via reduced row echelon form.
fn nullspace<T: Ring>(a: &DMatrix<T>) -> Vec<DVector<T>> {
    let (rows, cols) = a.shape();
    let mut m = a.clone();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let tol = T::zero_tolerance();
        let Some(p) = (row..rows).find(|&r| num_traits::Signed::abs(&m[(r, col)]) > tol) else {
            continue;
        };
        m.swap_rows(p, row);
        let piv = m[(row, col)];
        for c in 0..cols {
            m[(row, c)] /= piv;
        }
        for r in 0..rows {
            if r != row && m[(r, col)] != T::zero() {
                let f = m[(r, col)];
                for c in 0..cols {
                    let v = m[(row, c)];
                    m[(r, c)] -= f * v;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (0..cols)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = DVector::from_element(cols, T::zero());
            v[free] = T::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[(r, free)];
            }
            v
        })
        .collect()
}

/// Solve `M A3 = B` row by row.
fn solve_m_factor<T: Ring>(a3: &Mat6<T>, b: &Mat2x6<T>) -> Result<Mat2x6<T>> {
    // M A3 = B  <=>  A3ᵀ mᵣ = bᵣ for each row r.
    let at = DMatrix::from_iterator(6, 6, a3.transpose().iter().copied());
    let mut m = Mat2x6::zeros();
    for r in 0..2 {
        let rhs = DVector::from_iterator(6, b.row(r).iter().copied());
        let sol = linalg::solve_echelon(&at, &rhs);
        if sol.residual > T::zero_tolerance() {
            return Err(Error::InconsistentFactorization("B = M A3", sol.residual.to_f64_lossy()));
        }
        for c in 0..6 {
            m[(r, c)] = sol.x[c];
        }
    }
    Ok(m)
}

/// Solve `A3 = ½(CᵀB + BᵀC)` for the 12 entries of `C`.
fn solve_c_factor<T: Ring>(a3: &Mat6<T>, b: &Mat2x6<T>) -> Result<Mat2x6<T>> {
    let half = T::one() / T::from_int(2);
    let mut sys = DMatrix::from_element(36, 12, T::zero());
    let mut rhs = DVector::from_element(36, T::zero());
    for i in 0..6 {
        for j in 0..6 {
            let eq = i * 6 + j;
            rhs[eq] = a3[(i, j)];
            for r in 0..2 {
                // (CᵀB)_{ij} = Σ_r C_{ri} B_{rj},  (BᵀC)_{ij} = Σ_r B_{ri} C_{rj}
                sys[(eq, r * 6 + i)] += half * b[(r, j)];
                sys[(eq, r * 6 + j)] += half * b[(r, i)];
            }
        }
    }
    let sol = linalg::solve_echelon(&sys, &rhs);
    if sol.residual > T::zero_tolerance() {
        return Err(Error::InconsistentFactorization(
            "A3 = (CᵀB + BᵀC)/2",
            sol.residual.to_f64_lossy(),
        ));
    }
    Ok(Mat2x6::from_fn(|r, c| sol.x[r * 6 + c]))
}

pub fn build_structure_matrices<T: Ring>() -> Result<StructureMatrixSet<T>> {
    let j = [curl_block(0), curl_block(1), curl_block(2)];
    let a_co = [curl_coefficient(0), curl_coefficient(1), curl_coefficient(2)];
    let a3 = a_co[2];

    // wall case with normal along x3: B = (e2, -e1)ᵀ
    let mut b_co = Mat2x6::zeros();
    b_co[(0, 1)] = T::one();
    b_co[(1, 0)] = -T::one();

    let m_co = solve_m_factor(&a3, &b_co)?;
    let c_co = solve_c_factor(&a3, &b_co)?;

    // A3 is a signed permutation off its kernel, so A3 + P_ker inverts it there
    // and fixes e3, e6.
    let mut q = a3;
    q[(2, 2)] = T::one();
    q[(5, 5)] = T::one();

    Ok(StructureMatrixSet {
        j,
        a_co,
        b_co,
        c_co,
        m_co,
        q,
    })
}

/// Componentwise curl from a Jacobian `jac[(m, j)] = ∂_j u_m`.
pub fn curl_direct<T: Ring>(jac: &Mat3<T>) -> Vec3<T> {
    Vec3::new(
        jac[(2, 1)] - jac[(1, 2)],
        jac[(0, 2)] - jac[(2, 0)],
        jac[(1, 0)] - jac[(0, 1)],
    )
}
