//! Periodic Q1 discretization of the Laplacian on the unit square or cube.
//!
//! Nodes are numbered lexicographically with the x index running fastest. On
//! the periodic grid every index wraps modulo `cells_per_axis`, so there are
//! exactly `cells_per_axis^dim` nodes and the assembled operator has the
//! constant vector as its kernel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub cells_per_axis: usize,
    pub spacing: f64,
}

impl GridSpec {
    /// Grid on the unit square/cube, `h = 1 / cells_per_axis`.
    pub fn unit(dim: usize, cells_per_axis: usize) -> Result<Self> {
        let spec = GridSpec {
            dim,
            cells_per_axis,
            spacing: 1.0 / cells_per_axis.max(1) as f64,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        if self.cells_per_axis < 4 {
            return Err(Error::InvalidGrid(format!(
                "cells_per_axis = {} < 4",
                self.cells_per_axis
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing = {}", self.spacing)));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.num_nodes()
    }
}

/// Lexicographic index (first coordinate fastest) of a point on a periodic
/// lattice with `n` points per axis. Coordinates are wrapped.
pub(crate) fn lex_index(coords: &[usize], n: usize) -> usize {
    coords.iter().rev().fold(0, |acc, &c| acc * n + c % n)
}

pub(crate) fn unravel(mut idx: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut out = [0; 3];
    for c in out.iter_mut().take(dim) {
        *c = idx % n;
        idx /= n;
    }
    out
}

/// Global node indices of the `2^dim` corners of a cell, in lexicographic
/// order within the cell.
pub(crate) fn cell_nodes(cell: usize, n: usize, dim: usize) -> Vec<usize> {
    let base = unravel(cell, n, dim);
    (0..1usize << dim)
        .map(|local| {
            let mut c = [0usize; 3];
            for a in 0..dim {
                c[a] = base[a] + ((local >> a) & 1);
            }
            lex_index(&c[..dim], n)
        })
        .collect()
}

/// Symmetric element stiffness matrix with lexicographic local node ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrix {
    pub dim: usize,
    pub entries: DMatrix<f64>,
}

impl ElementMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }
}

/// Exact Q1 Laplace element matrix on a cell of side `spacing`.
///
/// The bilinear/trilinear basis is a tensor product, so the matrix is the sum
/// over axes of the 1D stiffness along that axis times 1D masses along the
/// others.
pub fn element_stiffness(dim: usize, spacing: f64) -> Result<ElementMatrix> {
    if dim != 2 && dim != 3 {
        return Err(Error::UnsupportedDimension(dim));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidGrid(format!("spacing = {spacing}")));
    }
    let h = spacing;
    let stiff_1d = |i: usize, j: usize| if i == j { 1.0 / h } else { -1.0 / h };
    let mass_1d = |i: usize, j: usize| if i == j { h / 3.0 } else { h / 6.0 };

    let m = 1usize << dim;
    let entries = DMatrix::from_fn(m, m, |i, j| {
        (0..dim)
            .map(|a| {
                (0..dim)
                    .map(|b| {
                        let (bi, bj) = ((i >> b) & 1, (j >> b) & 1);
                        if a == b {
                            stiff_1d(bi, bj)
                        } else {
                            mass_1d(bi, bj)
                        }
                    })
                    .product::<f64>()
            })
            .sum()
    });
    Ok(ElementMatrix { dim, entries })
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            *yi = self.indices[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.nrows);
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                d[(i, self.indices[k])] += self.values[k];
            }
        }
        d
    }
}

/// Assembled periodic Laplacian. Its kernel is spanned by the constant vector.
#[derive(Debug, Clone)]
pub struct GlobalOperator {
    pub grid: GridSpec,
    pub matrix: CsrMatrix,
}

impl GlobalOperator {
    pub fn n(&self) -> usize {
        self.matrix.nrows
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec_into(x, y)
    }

    pub fn null_vector(&self) -> Vec<f64> {
        vec![1.0; self.n()]
    }
}

pub fn assemble_global(grid: &GridSpec) -> Result<GlobalOperator> {
    grid.validate()?;
    let ke = element_stiffness(grid.dim, grid.spacing)?;
    let m = ke.size();
    let n = grid.cells_per_axis;
    let mut triplets = Vec::with_capacity(grid.num_cells() * m * m);
    for cell in 0..grid.num_cells() {
        let nodes = cell_nodes(cell, n, grid.dim);
        for (a, &ga) in nodes.iter().enumerate() {
            for (b, &gb) in nodes.iter().enumerate() {
                triplets.push((ga, gb, ke.entries[(a, b)]));
            }
        }
    }
    Ok(GlobalOperator {
        grid: *grid,
        matrix: CsrMatrix::from_triplets(grid.num_nodes(), triplets),
    })
}

/// Seeded right-hand side, uniform on [-1, 1) per entry, projected to zero mean.
pub fn random_zero_mean_rhs(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("right-hand side length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project_zero_mean(&mut v);
    Ok(v)
}

pub fn project_zero_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gauss–Legendre quadrature of grad(phi_i) . grad(phi_j) over the unit
    /// reference cell, written against explicit shape functions.
    fn quadrature_element(dim: usize) -> DMatrix<f64> {
        let g = 0.5 / 3f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        let m = 1 << dim;
        let shape = |node: usize, x: &[f64]| -> Vec<f64> {
            // gradient of prod_a (bit ? x_a : 1 - x_a)
            (0..dim)
                .map(|d| {
                    (0..dim)
                        .map(|a| {
                            let bit = (node >> a) & 1;
                            if a == d {
                                if bit == 1 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            } else if bit == 1 {
                                x[a]
                            } else {
                                1.0 - x[a]
                            }
                        })
                        .product()
                })
                .collect()
        };
        let mut k = DMatrix::zeros(m, m);
        let nq = 1usize << dim;
        for q in 0..nq {
            let x: Vec<f64> = (0..dim).map(|a| pts[(q >> a) & 1]).collect();
            let w = 0.5f64.powi(dim as i32);
            for i in 0..m {
                let gi = shape(i, &x);
                for j in 0..m {
                    let gj = shape(j, &x);
                    k[(i, j)] += w * gi.iter().zip(&gj).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        k
    }

    #[test]
    fn element_rows_sum_to_zero() {
        for dim in [2, 3] {
            let ke = element_stiffness(dim, 0.37).unwrap();
            for i in 0..ke.size() {
                let s: f64 = ke.entries.row(i).iter().sum();
                assert!(s.abs() < 1e-14, "row {i} sums to {s}");
                for j in 0..ke.size() {
                    assert_eq!(ke.entries[(i, j)], ke.entries[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn element_2d_matches_quadrature() {
        let oracle = quadrature_element(2);
        // frozen from the quadrature oracle
        assert!((oracle[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
        assert!((oracle[(0, 1)] + 1.0 / 6.0).abs() < 1e-14);
        assert!((oracle[(0, 3)] + 1.0 / 3.0).abs() < 1e-14);
        for h in [1.0, 0.1, 3.0] {
            let ke = element_stiffness(2, h).unwrap();
            assert!((&ke.entries - &oracle).amax() < 1e-14);
            assert!((ke.entries[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
            assert!((ke.entries[(1, 0)] + 1.0 / 6.0).abs() < 1e-14);
            assert!((ke.entries[(2, 0)] + 1.0 / 6.0).abs() < 1e-14);
            assert!((ke.entries[(3, 0)] + 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn element_3d_scales_with_h() {
        let oracle = quadrature_element(3);
        let k1 = element_stiffness(3, 1.0).unwrap();
        let k2 = element_stiffness(3, 2.0).unwrap();
        assert!((&k1.entries - &oracle).amax() < 1e-14);
        assert!((&k2.entries - &k1.entries * 2.0).amax() < 1e-14);
    }

    #[test]
    fn unsupported_dimension() {
        assert_eq!(
            element_stiffness(4, 1.0).unwrap_err(),
            Error::UnsupportedDimension(4)
        );
        assert!(GridSpec::unit(1, 8).is_err());
        assert!(GridSpec::unit(2, 3).is_err());
    }

    #[test]
    fn global_size_and_kernel() {
        let grid = GridSpec::unit(2, 12).unwrap();
        let a = assemble_global(&grid).unwrap();
        assert_eq!(a.n(), 144);
        assert_eq!(a.matrix.nnz(), 144 * 9);
        let r = a.apply(&a.null_vector());
        assert!(r.iter().all(|x| x.abs() < 1e-14));

        let grid = GridSpec::unit(3, 4).unwrap();
        let a = assemble_global(&grid).unwrap();
        assert_eq!(a.matrix.nnz(), 64 * 27);
        let r = a.apply(&a.null_vector());
        assert!(r.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn smallest_nonzero_eigenvalue_matches_dense_oracle() {
        // dense assembly directly from the quadrature element matrix
        let n = 4;
        let ke = quadrature_element(2);
        let mut dense = DMatrix::<f64>::zeros(n * n, n * n);
        for cy in 0..n {
            for cx in 0..n {
                let nodes = [
                    cx + n * cy,
                    (cx + 1) % n + n * cy,
                    cx + n * ((cy + 1) % n),
                    (cx + 1) % n + n * ((cy + 1) % n),
                ];
                for a in 0..4 {
                    for b in 0..4 {
                        dense[(nodes[a], nodes[b])] += ke[(a, b)];
                    }
                }
            }
        }
        let a = assemble_global(&GridSpec::unit(2, n).unwrap()).unwrap();
        let ours = a.matrix.to_dense();
        assert!((&ours - &dense).amax() < 1e-14);

        let mut ev_o: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
        let mut ev: Vec<f64> = ours.symmetric_eigenvalues().iter().copied().collect();
        ev_o.sort_by(f64::total_cmp);
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-12);
        assert!(ev[1] > 1e-3);
        assert!((ev[1] - ev_o[1]).abs() < 1e-12);
    }

    #[test]
    fn rhs_is_zero_mean_and_deterministic() {
        let a = random_zero_mean_rhs(144, 42).unwrap();
        let b = random_zero_mean_rhs(144, 42).unwrap();
        let c = random_zero_mean_rhs(144, 43).unwrap();
        let mean = a.iter().sum::<f64>() / 144.0;
        assert!(mean.abs() < 1e-14);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(random_zero_mean_rhs(0, 1).is_err());
    }
}
