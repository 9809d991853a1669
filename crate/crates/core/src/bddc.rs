//! BDDC preconditioner: the original two-level algorithm and its recursive
//! multilevel version.
//!
//! Broken (substructure-wise) vectors are stored as `n_local x n_subs`
//! matrices, one column per substructure. Since every substructure of a
//! level shares one stiffness matrix, the local solves over all
//! substructures collapse into dense matrix products.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::hierarchy::{level_constraints, Hierarchy, Level};
use crate::localsolvers::{
    factor_interior, CoarseBasis, ConstrainedNeumannSolver, InteriorSolver, SubdomainStiffness,
};
use crate::mesh_fe::element_stiffness;

/// Multiplicity weights realizing `E` on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingOperator {
    /// Weight of each local dof, `1 / #substructures sharing it`.
    pub weights: Vec<f64>,
}

impl AveragingOperator {
    pub fn from_multiplicity(mult: &[usize]) -> Self {
        AveragingOperator {
            weights: mult.iter().map(|&m| 1.0 / m as f64).collect(),
        }
    }
}

/// Setup data of one substructuring level.
#[derive(Debug, Clone)]
pub struct BddcLevel {
    pub index: usize,
    pub n_dofs: usize,
    pub n_local: usize,
    pub n_subs: usize,
    pub n_coarse: usize,
    /// Column-major `n_local x n_subs` local-to-global dof map.
    dofs: Vec<usize>,
    /// Column-major `n_local_coarse x n_subs` coarse dof map.
    coarse_dofs: Vec<usize>,
    pub interior: Vec<usize>,
    pub stiffness: SubdomainStiffness,
    pub constraints: DMatrix<f64>,
    pub interior_solver: InteriorSolver,
    pub neumann: ConstrainedNeumannSolver,
    pub basis: CoarseBasis,
    pub averaging: AveragingOperator,
    interior_inverse: DMatrix<f64>,
    neumann_response: DMatrix<f64>,
    psi_t: DMatrix<f64>,
}

impl BddcLevel {
    fn new(level: &Level, element: &DMatrix<f64>) -> Result<Self> {
        let p = &level.pattern;
        let stiffness = SubdomainStiffness::assemble(p, element)?;
        let constraints = level_constraints(level).matrix;
        let interior_solver = factor_interior(&stiffness, &p.interior)?;
        let neumann = ConstrainedNeumannSolver::new(&stiffness, &constraints)?;
        let basis = CoarseBasis::from_solver(&neumann, &stiffness);
        let n_subs = level.num_substructures();
        let dofs = level
            .substructures
            .iter()
            .flat_map(|s| s.dofs.iter().copied())
            .collect();
        let coarse_dofs = level
            .substructures
            .iter()
            .flat_map(|s| s.coarse.iter().copied())
            .collect();
        Ok(BddcLevel {
            index: level.index,
            n_dofs: level.n_dofs,
            n_local: p.n_local,
            n_subs,
            n_coarse: level.n_coarse,
            dofs,
            coarse_dofs,
            interior: p.interior.clone(),
            interior_inverse: interior_solver.inverse(),
            neumann_response: neumann.response_matrix(),
            psi_t: basis.psi.transpose(),
            stiffness,
            constraints,
            interior_solver,
            neumann,
            basis,
            averaging: AveragingOperator::from_multiplicity(&p.multiplicity),
        })
    }

    pub fn local_dofs(&self, sub: usize) -> &[usize] {
        &self.dofs[sub * self.n_local..(sub + 1) * self.n_local]
    }

    pub fn local_coarse_dofs(&self, sub: usize) -> &[usize] {
        let m = self.basis.n_coarse();
        &self.coarse_dofs[sub * m..(sub + 1) * m]
    }

    /// `R_s u` for every substructure.
    pub fn restrict(&self, u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_iterator(self.n_local, self.n_subs, self.dofs.iter().map(|&g| u[g]))
    }

    /// `Eᵀ r`: weighted restriction of a residual to the broken space.
    pub fn restrict_weighted(&self, r: &[f64]) -> DMatrix<f64> {
        let w = &self.averaging.weights;
        DMatrix::from_iterator(
            self.n_local,
            self.n_subs,
            self.dofs
                .iter()
                .enumerate()
                .map(|(k, &g)| w[k % self.n_local] * r[g]),
        )
    }

    /// `E w`: multiplicity-weighted average of a broken vector.
    pub fn average(&self, broken: &DMatrix<f64>) -> Vec<f64> {
        let w = &self.averaging.weights;
        let mut u = vec![0.0; self.n_dofs];
        for (k, (&g, &x)) in self.dofs.iter().zip(broken.iter()).enumerate() {
            u[g] += w[k % self.n_local] * x;
        }
        u
    }

    /// Unweighted sum of local contributions, `Σ_s R_sᵀ y_s`.
    pub fn assemble(&self, broken: &DMatrix<f64>) -> Vec<f64> {
        let mut u = vec![0.0; self.n_dofs];
        for (&g, &x) in self.dofs.iter().zip(broken.iter()) {
            u[g] += x;
        }
        u
    }

    /// The level operator `A_i u = Σ_s R_sᵀ K_s R_s u`.
    pub fn apply_operator(&self, u: &[f64]) -> Vec<f64> {
        self.assemble(&(&self.stiffness.matrix * self.restrict(u)))
    }

    fn gather_interior(&self, r: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.interior.len(), self.n_subs, |i, s| {
            r[self.dofs[s * self.n_local + self.interior[i]]]
        })
    }

    fn scatter_interior(&self, x: &DMatrix<f64>, out: &mut [f64]) {
        for s in 0..self.n_subs {
            for (i, &l) in self.interior.iter().enumerate() {
                out[self.dofs[s * self.n_local + l]] = x[(i, s)];
            }
        }
    }

    /// Interior correction: the interior function `u_I` with
    /// `a(u_I, z_I) = <r, z_I>` for all interior `z_I`.
    pub fn interior_correction(&self, r: &[f64]) -> Vec<f64> {
        let x = &self.interior_inverse * self.gather_interior(r);
        let mut out = vec![0.0; self.n_dofs];
        self.scatter_interior(&x, &mut out);
        out
    }

    /// `P u`: energy-orthogonal projection of a continuous vector onto the
    /// interior functions.
    pub fn project_interior(&self, u: &[f64]) -> Vec<f64> {
        let rows = self.interior_solver.interior_rows();
        let x = &self.interior_inverse * (rows * self.restrict(u));
        let mut out = vec![0.0; self.n_dofs];
        self.scatter_interior(&x, &mut out);
        out
    }

    /// Substructure correction of a broken residual (ker C constrained).
    pub fn substructure_correction(&self, broken_r: &DMatrix<f64>) -> DMatrix<f64> {
        &self.neumann_response * broken_r
    }

    /// Coarse residual `r_{i+1}`: `Ψᵀ` applied per substructure and summed
    /// over the substructures sharing each coarse dof.
    pub fn coarse_residual(&self, broken_r: &DMatrix<f64>) -> Vec<f64> {
        let local = &self.psi_t * broken_r;
        let mut out = vec![0.0; self.n_coarse];
        for (&c, &x) in self.coarse_dofs.iter().zip(local.iter()) {
            out[c] += x;
        }
        out
    }

    /// `Ψ_s u_c` for every substructure.
    pub fn coarse_extension(&self, coarse: &[f64]) -> DMatrix<f64> {
        let m = self.basis.n_coarse();
        let gathered =
            DMatrix::from_iterator(m, self.n_subs, self.coarse_dofs.iter().map(|&c| coarse[c]));
        &self.basis.psi * gathered
    }

    /// Assembled next-level operator.
    pub fn assemble_coarse_matrix(&self) -> DMatrix<f64> {
        let s = &self.basis.coarse_matrix;
        let mut out = DMatrix::zeros(self.n_coarse, self.n_coarse);
        for sub in 0..self.n_subs {
            let map = self.local_coarse_dofs(sub);
            for (a, &ga) in map.iter().enumerate() {
                for (b, &gb) in map.iter().enumerate() {
                    out[(ga, gb)] += s[(a, b)];
                }
            }
        }
        out
    }

    fn forward(&self, r: &[f64]) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
        let u_i = self.interior_correction(r);
        let au = self.apply_operator(&u_i);
        let r_b: Vec<f64> = r.iter().zip(&au).map(|(a, b)| a - b).collect();
        let broken_r = self.restrict_weighted(&r_b);
        let w_delta = self.substructure_correction(&broken_r);
        let r_next = self.coarse_residual(&broken_r);
        (u_i, w_delta, r_next)
    }

    fn backward(&self, u_i: Vec<f64>, w_delta: DMatrix<f64>, coarse: &[f64]) -> Vec<f64> {
        let u_b = self.average(&(w_delta + self.coarse_extension(coarse)));
        let v_i = self.project_interior(&u_b);
        u_i.iter()
            .zip(&u_b)
            .zip(&v_i)
            .map(|((a, b), c)| a + b - c)
            .collect()
    }
}

/// Exact solver for the singular periodic coarsest problem: a Cholesky
/// factorization of `S + σ e eᵀ` (normalized constant `e`), with right-hand
/// side and solution projected to zero mean.
#[derive(Debug, Clone)]
pub struct CoarseSolver {
    n: usize,
    chol: Cholesky<f64, Dyn>,
}

impl CoarseSolver {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 {
            return Err(Error::Empty("coarse problem"));
        }
        let sigma = matrix.diagonal().mean().abs().max(f64::MIN_POSITIVE);
        let shifted = matrix.add_scalar(sigma / n as f64);
        let chol = Cholesky::new(shifted).ok_or_else(|| {
            Error::Factorization("coarse matrix is not positive definite modulo constants".into())
        })?;
        Ok(CoarseSolver { n, chol })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let mut rhs = DVector::from_column_slice(r);
        let mean = rhs.mean();
        rhs.add_scalar_mut(-mean);
        let mut x = self.chol.solve(&rhs);
        let mean = x.mean();
        x.add_scalar_mut(-mean);
        x.data.into()
    }
}

#[derive(Debug, Clone)]
pub struct BddcPreconditioner {
    pub levels: Vec<BddcLevel>,
    pub coarse: CoarseSolver,
    n: usize,
}

impl BddcPreconditioner {
    /// Factors every level of the hierarchy; the level `L` problem is solved
    /// exactly.
    pub fn setup(hierarchy: &Hierarchy) -> Result<Self> {
        Self::setup_truncated(hierarchy, hierarchy.num_levels())
    }

    /// Uses levels `1..exact_level-1` and solves the level `exact_level`
    /// problem exactly. `exact_level = 2` gives the two-level method on the
    /// finest decomposition.
    pub fn setup_truncated(hierarchy: &Hierarchy, exact_level: usize) -> Result<Self> {
        if exact_level < 2 || exact_level > hierarchy.num_levels() {
            return Err(Error::LevelOutOfRange {
                level: exact_level,
                max: hierarchy.num_levels(),
            });
        }
        let grid = &hierarchy.grid;
        let mut element = element_stiffness(grid.dim, grid.spacing)?.entries;
        let mut levels = Vec::with_capacity(exact_level - 1);
        for level in &hierarchy.levels[..exact_level - 1] {
            let bl = BddcLevel::new(level, &element)?;
            element = bl.basis.coarse_matrix.clone();
            levels.push(bl);
        }
        let coarse = CoarseSolver::new(&levels.last().unwrap().assemble_coarse_matrix())?;
        Ok(BddcPreconditioner {
            levels,
            coarse,
            n: hierarchy.n(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn check_len(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: r.len(),
            });
        }
        Ok(())
    }

    /// The original two-level algorithm; requires a single substructuring
    /// level below the exact coarse solve.
    pub fn apply_two_level(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r)?;
        if self.levels.len() != 1 {
            return Err(Error::InvalidHierarchy(format!(
                "two-level application needs L = 2, preconditioner has L = {}",
                self.num_levels()
            )));
        }
        let lvl = &self.levels[0];
        // interior pre-correction and updated residual
        let u_i = lvl.interior_correction(r);
        let au = lvl.apply_operator(&u_i);
        let r_b: Vec<f64> = r.iter().zip(&au).map(|(a, b)| a - b).collect();
        // substructure and coarse corrections
        let broken_r = lvl.restrict_weighted(&r_b);
        let w_delta = lvl.substructure_correction(&broken_r);
        let u_c = self.coarse.solve(&lvl.coarse_residual(&broken_r));
        let w_pi = lvl.coarse_extension(&u_c);
        let u_delta = lvl.average(&w_delta);
        let u_pi = lvl.average(&w_pi);
        let u_b: Vec<f64> = u_delta.iter().zip(&u_pi).map(|(a, b)| a + b).collect();
        // interior post-correction
        let v_i = lvl.project_interior(&u_b);
        Ok(u_b
            .iter()
            .zip(&v_i)
            .zip(&u_i)
            .map(|((b, v), i)| b - v + i)
            .collect())
    }

    /// Multilevel application: forward sweep down to the exact coarse solve,
    /// then averaging and interior post-correction back up.
    pub fn apply_multilevel(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r)?;
        let mut stack = Vec::with_capacity(self.levels.len());
        let mut residual = r.to_vec();
        for lvl in &self.levels {
            let (u_i, w_delta, r_next) = lvl.forward(&residual);
            stack.push((u_i, w_delta));
            residual = r_next;
        }
        let mut u = self.coarse.solve(&residual);
        for (lvl, (u_i, w_delta)) in self.levels.iter().zip(stack).rev() {
            u = lvl.backward(u_i, w_delta, &u);
        }
        Ok(u)
    }

    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.apply_multilevel(r)
    }
}

/// `E` on the given level of a preconditioner.
pub fn average(prec: &BddcPreconditioner, level: usize, broken: &DMatrix<f64>) -> Result<Vec<f64>> {
    let lvl = prec
        .levels
        .get(level.wrapping_sub(1))
        .ok_or(Error::LevelOutOfRange {
            level,
            max: prec.levels.len(),
        })?;
    if broken.nrows() != lvl.n_local || broken.ncols() != lvl.n_subs {
        return Err(Error::DimensionMismatch {
            expected: lvl.n_local * lvl.n_subs,
            got: broken.len(),
        });
    }
    Ok(lvl.average(broken))
}
