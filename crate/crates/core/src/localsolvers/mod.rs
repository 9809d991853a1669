//! Per-substructure solvers. All substructures of a level are congruent, so
//! each object here is built once per level and shared.

mod ldlt;

pub use ldlt::{Inertia, Ldlt};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::hierarchy::LocalPattern;

/// Local stiffness `K_s` over the substructure's dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainStiffness {
    pub matrix: DMatrix<f64>,
}

impl SubdomainStiffness {
    /// Sums the element matrix over the elements of one substructure block.
    pub fn assemble(pattern: &LocalPattern, element: &DMatrix<f64>) -> Result<Self> {
        let mut k = DMatrix::zeros(pattern.n_local, pattern.n_local);
        for map in &pattern.elem_local {
            if map.len() != element.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: map.len(),
                    got: element.nrows(),
                });
            }
            for (a, &la) in map.iter().enumerate() {
                for (b, &lb) in map.iter().enumerate() {
                    k[(la, lb)] += element[(a, b)];
                }
            }
        }
        Ok(SubdomainStiffness { matrix: k })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn energy(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.matrix * w))
    }
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Factored interior block `K_II`; realizes the interior Dirichlet solves.
#[derive(Debug, Clone)]
pub struct InteriorSolver {
    interior: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    /// `K_I*` rows of the local stiffness, used for `P w`.
    k_interior_rows: DMatrix<f64>,
}

pub fn factor_interior(k: &SubdomainStiffness, interior: &[usize]) -> Result<InteriorSolver> {
    let all: Vec<usize> = (0..k.n()).collect();
    let kii = submatrix(&k.matrix, interior, interior);
    let chol = Cholesky::new(kii).ok_or_else(|| {
        Error::Factorization("interior block is not positive definite".to_string())
    })?;
    Ok(InteriorSolver {
        interior: interior.to_vec(),
        chol,
        k_interior_rows: submatrix(&k.matrix, interior, &all),
    })
}

impl InteriorSolver {
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    /// Solves `K_II x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// `K_II^{-1}` as a dense matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn interior_rows(&self) -> &DMatrix<f64> {
        &self.k_interior_rows
    }

    /// Interior values of `P w`: the interior function with
    /// `a(P w, z_I) = a(w, z_I)` for all interior `z_I`.
    pub fn project(&self, w: &DVector<f64>) -> DVector<f64> {
        self.solve(&(&self.k_interior_rows * w))
    }

    /// `(I - P) w` as a full local vector.
    pub fn harmonic_part(&self, w: &DVector<f64>) -> DVector<f64> {
        let v = self.project(w);
        let mut out = w.clone();
        for (i, &l) in self.interior.iter().enumerate() {
            out[l] -= v[i];
        }
        out
    }
}

/// Factorization of `[[K, Cᵀ], [C, 0]]`.
#[derive(Debug, Clone)]
pub struct ConstrainedNeumannSolver {
    n_local: usize,
    n_constraints: usize,
    factor: Ldlt,
}

impl ConstrainedNeumannSolver {
    /// Fails unless `C` has full row rank and `K` is positive definite on
    /// `ker C`, i.e. unless the bordered matrix has inertia `(n, m, 0)`.
    pub fn new(k: &SubdomainStiffness, c: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = (k.n(), c.nrows());
        if c.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.ncols(),
            });
        }
        let mut bordered = DMatrix::zeros(n + m, n + m);
        bordered.view_mut((0, 0), (n, n)).copy_from(&k.matrix);
        bordered.view_mut((n, 0), (m, n)).copy_from(c);
        bordered.view_mut((0, n), (n, m)).copy_from(&c.transpose());
        let factor = Ldlt::factor(&bordered).map_err(|e| {
            Error::NotPositiveDefinite(format!("singular saddle-point matrix ({e})"))
        })?;
        let inertia = factor.inertia();
        if inertia.positive != n || inertia.negative != m {
            return Err(Error::NotPositiveDefinite(format!(
                "saddle-point inertia ({}, {}, {}), expected ({n}, {m}, 0)",
                inertia.positive, inertia.negative, inertia.zero
            )));
        }
        Ok(ConstrainedNeumannSolver {
            n_local: n,
            n_constraints: m,
            factor,
        })
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    /// Returns `(w, λ)` with `K w + Cᵀ λ = g`, `C w = 0`.
    pub fn solve(&self, g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        self.solve_with_constraints(g, &DVector::zeros(self.n_constraints))
    }

    /// Returns `(w, λ)` with `K w + Cᵀ λ = g`, `C w = c`.
    pub fn solve_with_constraints(
        &self,
        g: &DVector<f64>,
        c: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (n, m) = (self.n_local, self.n_constraints);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(g);
        rhs.rows_mut(n, m).copy_from(c);
        let x = self.factor.solve(&rhs);
        (x.rows(0, n).into_owned(), x.rows(n, m).into_owned())
    }

    /// The map `g ↦ w` as a dense symmetric matrix.
    pub fn response_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n_local, self.n_constraints);
        let mut rhs = DMatrix::zeros(n + m, n);
        rhs.view_mut((0, 0), (n, n)).fill_with_identity();
        self.factor.solve_matrix(&rhs).rows(0, n).into_owned()
    }
}

pub fn solve_constrained_neumann(
    solver: &ConstrainedNeumannSolver,
    g: &DVector<f64>,
) -> Result<DVector<f64>> {
    if g.len() != solver.n_local() {
        return Err(Error::DimensionMismatch {
            expected: solver.n_local(),
            got: g.len(),
        });
    }
    Ok(solver.solve(g).0)
}

/// Energy-minimal local functions, one per coarse dof, and the next-level
/// element matrix `Ψᵀ K Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseBasis {
    pub psi: DMatrix<f64>,
    pub coarse_matrix: DMatrix<f64>,
}

impl CoarseBasis {
    pub fn from_solver(solver: &ConstrainedNeumannSolver, k: &SubdomainStiffness) -> Self {
        let (n, m) = (solver.n_local, solver.n_constraints);
        let mut rhs = DMatrix::zeros(n + m, m);
        rhs.view_mut((n, 0), (m, m)).fill_with_identity();
        let psi = solver.factor.solve_matrix(&rhs).rows(0, n).into_owned();
        let mut coarse_matrix = psi.transpose() * &k.matrix * &psi;
        // symmetrize away roundoff
        coarse_matrix = (&coarse_matrix + coarse_matrix.transpose()) * 0.5;
        CoarseBasis { psi, coarse_matrix }
    }

    pub fn n_coarse(&self) -> usize {
        self.psi.ncols()
    }
}

pub fn coarse_basis(k: &SubdomainStiffness, c: &DMatrix<f64>) -> Result<CoarseBasis> {
    let solver = ConstrainedNeumannSolver::new(k, c)?;
    Ok(CoarseBasis::from_solver(&solver, k))
}
