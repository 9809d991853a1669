//! Preconditioned conjugate gradients with Lanczos eigenvalue estimates.

use nalgebra::DMatrix;

use crate::bddc::BddcPreconditioner;
use crate::error::{Error, Result};
use crate::mesh_fe::{project_zero_mean, GlobalOperator};

/// A linear map on `R^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for GlobalOperator {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(GlobalOperator::apply(self, x))
    }
}

impl LinearOperator for BddcPreconditioner {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        BddcPreconditioner::apply(self, x)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                got: x.len(),
            });
        }
        Ok((self * nalgebra::DVector::from_column_slice(x)).data.into())
    }
}

/// Adapts a closure to [`LinearOperator`].
pub struct FnOperator<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(x))
    }
}

pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOptions {
    pub tol: f64,
    pub maxit: usize,
    /// Work on the zero-mean subspace (periodic problems).
    pub zero_mean: bool,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions {
            tol: 1e-8,
            maxit: 500,
            zero_mean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b - A x_k‖ / ‖b‖` for `k = 0..=iterations`.
    pub residual_history: Vec<f64>,
    pub lambda_min_est: f64,
    pub lambda_max_est: f64,
    pub cond_est: f64,
    pub converged: bool,
    pub seed: Option<u64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn pcg(
    a: &dyn LinearOperator,
    b: &dyn LinearOperator,
    rhs: &[f64],
    opts: &PcgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    pcg_with_monitor(a, b, rhs, opts, &mut |_, _| {})
}

/// [`pcg`] that calls `monitor(k, x_k)` after every iteration.
pub fn pcg_with_monitor(
    a: &dyn LinearOperator,
    b: &dyn LinearOperator,
    rhs: &[f64],
    opts: &PcgOptions,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    for got in [b.dim(), rhs.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    let project = |v: &mut Vec<f64>| {
        if opts.zero_mean {
            project_zero_mean(v)
        }
    };

    let mut rhs = rhs.to_vec();
    project(&mut rhs);
    let bnorm = norm(&rhs);
    let mut x = vec![0.0; n];
    let mut report = SolveReport {
        iterations: 0,
        residual_history: vec![1.0],
        lambda_min_est: f64::NAN,
        lambda_max_est: f64::NAN,
        cond_est: f64::NAN,
        converged: false,
        seed: None,
        alphas: Vec::new(),
        betas: Vec::new(),
    };
    if bnorm == 0.0 {
        report.residual_history = vec![0.0];
        report.converged = true;
        return Ok((x, report));
    }

    let mut r = rhs.clone();
    let mut p = vec![0.0; n];
    let mut rz_old = 0.0;
    for k in 1..=opts.maxit {
        let mut z = b.apply(&r)?;
        project(&mut z);
        let rz = dot(&r, &z);
        if !(rz > 0.0) {
            return Err(Error::Definiteness {
                name: "<r, Br>",
                value: rz,
            });
        }
        if k == 1 {
            p.copy_from_slice(&z);
        } else {
            let beta = rz / rz_old;
            report.betas.push(beta);
            p.iter_mut()
                .zip(&z)
                .for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        let q = a.apply(&p)?;
        let pap = dot(&p, &q);
        if !(pap > 0.0) {
            return Err(Error::Definiteness {
                name: "<p, Ap>",
                value: pap,
            });
        }
        let alpha = rz / pap;
        report.alphas.push(alpha);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
        project(&mut x);
        project(&mut r);
        rz_old = rz;

        let ax = a.apply(&x)?;
        let true_res: Vec<f64> = rhs.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rel = norm(&true_res) / bnorm;
        report.residual_history.push(rel);
        report.iterations = k;
        monitor(k, &x);
        if rel <= opts.tol {
            report.converged = true;
            break;
        }
    }
    let (lo, hi) = lanczos_extremes(&report.alphas, &report.betas)?;
    report.lambda_min_est = lo;
    report.lambda_max_est = hi;
    report.cond_est = hi / lo;
    Ok((x, report))
}

/// Lanczos tridiagonal matrix from the PCG coefficients.
pub fn lanczos_matrix(alphas: &[f64], betas: &[f64]) -> Result<DMatrix<f64>> {
    let k = alphas.len();
    if k == 0 {
        return Err(Error::Empty("PCG coefficients"));
    }
    if betas.len() + 1 < k {
        return Err(Error::DimensionMismatch {
            expected: k - 1,
            got: betas.len(),
        });
    }
    let mut t = DMatrix::zeros(k, k);
    for j in 0..k {
        t[(j, j)] = 1.0 / alphas[j];
        if j > 0 {
            t[(j, j)] += betas[j - 1] / alphas[j - 1];
            let off = betas[j - 1].sqrt() / alphas[j - 1];
            t[(j, j - 1)] = off;
            t[(j - 1, j)] = off;
        }
    }
    Ok(t)
}

/// Extreme eigenvalues of the Lanczos matrix.
pub fn lanczos_extremes(alphas: &[f64], betas: &[f64]) -> Result<(f64, f64)> {
    let t = lanczos_matrix(alphas, betas)?;
    let ev = t.symmetric_eigenvalues();
    Ok((ev.min(), ev.max()))
}
