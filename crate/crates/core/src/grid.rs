//! Half-space slab grid, node-major vector fields and finite differences.
//!
//! `x1`, `x2` are periodic with `N` cells of width `L/N`. `x3` has `Nz`
//! nodes from the wall `x3 = 0` to the cap `x3 = Lz` inclusive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Vec2, Vec3, Vec6};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub lengths: [T; 3],
    pub counts: [usize; 3],
}

impl<T: Real> Grid<T> {
    pub fn new(lengths: [T; 3], counts: [usize; 3]) -> Result<Self> {
        if counts[2] < 4 {
            return Err(Error::Grid(format!("Nz = {} < 4", counts[2])));
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::Grid("tangential counts must be positive".into()));
        }
        if lengths.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return Err(Error::Grid("lengths must be positive and finite".into()));
        }
        Ok(Grid { lengths, counts })
    }

    pub fn nx(&self) -> usize {
        self.counts[0]
    }
    pub fn ny(&self) -> usize {
        self.counts[1]
    }
    pub fn nz(&self) -> usize {
        self.counts[2]
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn spacing(&self, axis: usize) -> T {
        if axis == 2 {
            self.lengths[2] / T::from_usize_lossy(self.counts[2] - 1)
        } else {
            self.lengths[axis] / T::from_usize_lossy(self.counts[axis])
        }
    }

    pub fn spacings(&self) -> [T; 3] {
        [self.spacing(0), self.spacing(1), self.spacing(2)]
    }

    pub fn min_spacing(&self) -> T {
        let h = self.spacings();
        h[0].min(h[1]).min(h[2])
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.counts[1] + j) * self.counts[0] + i
    }

    #[inline]
    pub fn ijk(&self, node: usize) -> [usize; 3] {
        let nx = self.counts[0];
        let ny = self.counts[1];
        [node % nx, (node / nx) % ny, node / (nx * ny)]
    }

    pub fn coord(&self, axis: usize, i: usize) -> T {
        T::from_usize_lossy(i) * self.spacing(axis)
    }

    pub fn point(&self, node: usize) -> [T; 3] {
        let [i, j, k] = self.ijk(node);
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    /// Trapezoid weight of plane `k` in `x3`.
    pub fn z_weight(&self, k: usize) -> T {
        let h = self.spacing(2);
        if k == 0 || k + 1 == self.counts[2] {
            h * T::lit(0.5)
        } else {
            h
        }
    }

    /// Quadrature weight of one node of the wall plane.
    pub fn wall_weight(&self) -> T {
        self.spacing(0) * self.spacing(1)
    }

    pub fn weight(&self, node: usize) -> T {
        self.wall_weight() * self.z_weight(node / self.plane_len())
    }

    /// Grid with every cell count doubled (cap position kept).
    pub fn refined(&self) -> Self {
        Grid {
            lengths: self.lengths,
            counts: [
                self.counts[0] * 2,
                self.counts[1] * 2,
                (self.counts[2] - 1) * 2 + 1,
            ],
        }
    }

    /// Refine only `x1` and `x3` (slabs invariant in `x2`).
    pub fn refined_slab(&self) -> Self {
        Grid {
            lengths: self.lengths,
            counts: [self.counts[0] * 2, self.counts[1], (self.counts[2] - 1) * 2 + 1],
        }
    }
}

/// Node-major field with `ncomp` components per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    pub ncomp: usize,
    pub data: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zeros(grid: &Grid<T>, ncomp: usize) -> Self {
        Field {
            ncomp,
            data: vec![T::zero(); grid.len() * ncomp],
        }
    }

    /// Build by evaluating `f(point, out)` at every node (in parallel).
    pub fn from_fn<F>(grid: &Grid<T>, ncomp: usize, f: F) -> Self
    where
        F: Fn(usize, [T; 3], &mut [T]) + Sync,
    {
        let mut field = Self::zeros(grid, ncomp);
        field
            .data
            .par_chunks_mut(ncomp)
            .enumerate()
            .for_each(|(node, out)| f(node, grid.point(node), out));
        field
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / self.ncomp
    }

    #[inline]
    pub fn get(&self, node: usize, c: usize) -> T {
        self.data[node * self.ncomp + c]
    }

    #[inline]
    pub fn set(&mut self, node: usize, c: usize, v: T) {
        self.data[node * self.ncomp + c] = v;
    }

    #[inline]
    pub fn node(&self, node: usize) -> &[T] {
        &self.data[node * self.ncomp..(node + 1) * self.ncomp]
    }

    #[inline]
    pub fn node_mut(&mut self, node: usize) -> &mut [T] {
        let n = self.ncomp;
        &mut self.data[node * n..(node + 1) * n]
    }

    #[inline]
    pub fn vec6(&self, node: usize) -> Vec6<T> {
        Vec6::from_column_slice(self.node(node))
    }

    #[inline]
    pub fn vec3(&self, node: usize) -> Vec3<T> {
        Vec3::from_column_slice(self.node(node))
    }

    #[inline]
    pub fn vec2(&self, node: usize) -> Vec2<T> {
        Vec2::from_column_slice(self.node(node))
    }

    pub fn set_node(&mut self, node: usize, v: &[T]) {
        self.node_mut(node).copy_from_slice(v);
    }

    /// Extract components `range` into a new field.
    pub fn components(&self, range: std::ops::Range<usize>) -> Self {
        let n = range.len();
        let mut data = Vec::with_capacity(self.nodes() * n);
        for node in 0..self.nodes() {
            data.extend_from_slice(&self.node(node)[range.clone()]);
        }
        Field { ncomp: n, data }
    }

    pub fn scale(&self, a: T) -> Self {
        Field {
            ncomp: self.ncomp,
            data: self.data.iter().map(|v| *v * a).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: T, other: &Self) -> Self {
        assert_eq!(self.data.len(), other.data.len());
        Field {
            ncomp: self.ncomp,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| *x + a * *y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-T::one(), other)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `∫ |v|² dx` by trapezoid in `x3`, summed plane by plane in fixed order.
    pub fn l2_squared(&self, grid: &Grid<T>) -> T {
        let plane = grid.plane_len() * self.ncomp;
        let sums: Vec<T> = self
            .data
            .par_chunks(plane)
            .map(|chunk| chunk.iter().fold(T::zero(), |acc, v| acc + *v * *v))
            .collect();
        sums.iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, s)| acc + *s * grid.z_weight(k))
            * grid.wall_weight()
    }

    pub fn l2_norm(&self, grid: &Grid<T>) -> T {
        self.l2_squared(grid).sqrt()
    }

    /// Wall-plane values `k = 0`.
    pub fn wall_trace(&self, grid: &Grid<T>) -> Self {
        Field {
            ncomp: self.ncomp,
            data: self.data[..grid.plane_len() * self.ncomp].to_vec(),
        }
    }
}

/// Spatially uniform or nodal coefficient data.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeField<M> {
    Uniform(M),
    Nodal(Vec<M>),
}

impl<M> NodeField<M> {
    #[inline]
    pub fn at(&self, node: usize) -> &M {
        match self {
            NodeField::Uniform(m) => m,
            NodeField::Nodal(v) => &v[node],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, NodeField::Uniform(_))
    }

    pub fn map<N, F: Fn(&M) -> N + Sync + Send>(&self, f: F) -> NodeField<N>
    where
        M: Sync,
        N: Send,
    {
        match self {
            NodeField::Uniform(m) => NodeField::Uniform(f(m)),
            NodeField::Nodal(v) => NodeField::Nodal(v.par_iter().map(f).collect()),
        }
    }

    /// Iterate `(node, value)` over `n` nodes.
    pub fn iter(&self, n: usize) -> impl Iterator<Item = (usize, &M)> {
        (0..n).map(move |i| (i, self.at(i)))
    }
}

/// Second-order derivative of component `c` along `axis` at `node`.
///
/// Centered in the interior and periodic tangentially; one-sided
/// `(-3, 4, -1)/2h` at the wall and the cap.
#[inline]
pub fn diff_at<T: Real>(grid: &Grid<T>, f: &Field<T>, axis: usize, node: usize, c: usize) -> T {
    let [i, j, k] = grid.ijk(node);
    let h = grid.spacing(axis);
    let half = T::lit(0.5);
    match axis {
        0 => {
            let n = grid.nx();
            let ip = grid.index((i + 1) % n, j, k);
            let im = grid.index((i + n - 1) % n, j, k);
            (f.get(ip, c) - f.get(im, c)) * half / h
        }
        1 => {
            let n = grid.ny();
            let jp = grid.index(i, (j + 1) % n, k);
            let jm = grid.index(i, (j + n - 1) % n, k);
            (f.get(jp, c) - f.get(jm, c)) * half / h
        }
        _ => {
            let nz = grid.nz();
            let at = |kk: usize| f.get(grid.index(i, j, kk), c);
            let three = T::lit(3.0);
            let four = T::lit(4.0);
            if k == 0 {
                (-three * at(0) + four * at(1) - at(2)) * half / h
            } else if k + 1 == nz {
                (three * at(nz - 1) - four * at(nz - 2) + at(nz - 3)) * half / h
            } else {
                (at(k + 1) - at(k - 1)) * half / h
            }
        }
    }
}

/// Derivative field of every component along `axis`.
pub fn diff<T: Real>(grid: &Grid<T>, f: &Field<T>, axis: usize) -> Field<T> {
    let nc = f.ncomp;
    let mut out = Field::zeros(grid, nc);
    out.data
        .par_chunks_mut(nc)
        .enumerate()
        .for_each(|(node, o)| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = diff_at(grid, f, axis, node, c);
            }
        });
    out
}

/// Sample a closed-form vector at every node at time `t`.
pub fn sample<T: Real>(grid: &Grid<T>, exprs: &[crate::expr::Expr], t: T) -> Field<T> {
    Field::from_fn(grid, exprs.len(), |_, p, out| {
        let at = [t, p[0], p[1], p[2]];
        for (o, e) in out.iter_mut().zip(exprs) {
            *o = e.eval(&at);
        }
    })
}
