//! Dense verification tools for small instances: explicit operators, exact
//! spectra, BDDC on the interface (Schur complement) problem, and an audit of
//! the multispace structure of a BDDC level.
//!
//! Everything here forms dense matrices and is meant for a few thousand
//! unknowns at most.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bddc::{BddcLevel, BddcPreconditioner};
use crate::error::{Error, Result};
use crate::krylov::LinearOperator;

pub const DEFAULT_ORACLE_CAP: usize = 4096;

/// Relative asymmetry above which a preconditioner is rejected.
const SYMMETRY_TOL: f64 = 1e-6;

/// Column `j` is `op(e_j)`.
pub fn materialize(op: &dyn LinearOperator, n: usize, cap: usize) -> Result<DMatrix<f64>> {
    if n > cap {
        return Err(Error::OracleCap { n, cap });
    }
    if op.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: op.dim(),
        });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(m)
}

/// Orthonormal basis of the complement of `v`, from a Householder reflector.
pub fn complement_basis(v: &[f64]) -> Result<DMatrix<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Empty("null vector"));
    }
    let h = householder(v)?;
    Ok(h.columns(1, n - 1).into_owned())
}

/// Symmetric orthogonal `H` with `H e_1 = v / ‖v‖`.
fn householder(v: &[f64]) -> Result<DMatrix<f64>> {
    let n = v.len();
    let mut w = DVector::from_column_slice(v);
    let nv = w.norm();
    if nv == 0.0 {
        return Err(Error::Empty("null vector"));
    }
    w /= nv;
    // reflect e1 onto w; choose the sign that avoids cancellation
    let sign = if w[0] > 0.0 { -1.0 } else { 1.0 };
    w *= sign;
    w[0] -= 1.0;
    let nw = w.norm();
    let mut h = DMatrix::identity(n, n);
    if nw > 0.0 {
        w /= nw;
        h -= 2.0 * &w * w.transpose();
    }
    h.column_mut(0).scale_mut(sign);
    Ok(h)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        0.0
    } else {
        (m - m.transpose()).amax() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    /// `max|B - Bᵀ| / max|B|` on the deflated space.
    pub asymmetry: f64,
}

/// Exact eigenvalues of `B A` on the complement of `null` (all of `R^n`
/// when `null` is `None`), computed as the spectrum of `Lᵀ B L` with
/// `A = L Lᵀ` on that complement.
pub fn exact_condition(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    null: Option<&[f64]>,
) -> Result<Spectrum> {
    let n = a.nrows();
    if a.ncols() != n || b.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.nrows(),
        });
    }
    let (az, bz) = match null {
        Some(v) => {
            let z = complement_basis(v)?;
            (z.transpose() * a * &z, z.transpose() * b * &z)
        }
        None => (a.clone(), b.clone()),
    };
    let asymmetry = relative_asymmetry(&bz);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::Eigen(format!(
            "preconditioner asymmetry {asymmetry:e} would give complex eigenvalues"
        )));
    }
    let l = Cholesky::new(sym(&az))
        .ok_or_else(|| Error::NotPositiveDefinite("operator on the deflated space".into()))?
        .unpack();
    let m = sym(&(l.transpose() * sym(&bz) * &l));
    let mut eigenvalues: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let lambda_min = eigenvalues[0];
    let lambda_max = *eigenvalues.last().unwrap();
    Ok(Spectrum {
        kappa: lambda_max / lambda_min,
        eigenvalues,
        lambda_min,
        lambda_max,
        asymmetry,
    })
}

/// Explicit `A`, `B` and `BA` of a preconditioned periodic problem.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub ba: DMatrix<f64>,
    /// Orthonormal basis of the zero-mean vectors.
    pub zero_mean_basis: DMatrix<f64>,
}

impl DenseOracle {
    pub fn build(a: &dyn LinearOperator, b: &dyn LinearOperator, cap: usize) -> Result<Self> {
        let n = a.dim();
        let a = materialize(a, n, cap)?;
        let b = materialize(b, n, cap)?;
        let ba = &b * &a;
        Ok(DenseOracle {
            zero_mean_basis: complement_basis(&vec![1.0; n])?,
            a,
            b,
            ba,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn b_asymmetry(&self) -> f64 {
        relative_asymmetry(&self.b)
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        exact_condition(&self.a, &self.b, Some(&vec![1.0; self.n()]))
    }
}

/// Dense data of one level: global operator, broken space maps and local
/// blocks, rebuilt from the setup without using its solvers.
struct LevelData {
    n: usize,
    n_subs: usize,
    n_local: usize,
    k: DMatrix<f64>,
    c: DMatrix<f64>,
    dofs: Vec<Vec<usize>>,
    coarse: Vec<Vec<usize>>,
    n_coarse: usize,
    weights: Vec<f64>,
    interior: Vec<usize>,
    interface: Vec<usize>,
}

impl LevelData {
    fn new(lvl: &BddcLevel) -> Self {
        let weights = lvl.averaging.weights.clone();
        let interface = (0..lvl.n_local).filter(|&i| weights[i] < 1.0).collect();
        let interior = (0..lvl.n_local).filter(|&i| weights[i] >= 1.0).collect();
        LevelData {
            n: lvl.n_dofs,
            n_subs: lvl.n_subs,
            n_local: lvl.n_local,
            k: lvl.stiffness.matrix.clone(),
            c: lvl.constraints.clone(),
            dofs: (0..lvl.n_subs)
                .map(|s| lvl.local_dofs(s).to_vec())
                .collect(),
            coarse: (0..lvl.n_subs)
                .map(|s| lvl.local_coarse_dofs(s).to_vec())
                .collect(),
            n_coarse: lvl.n_coarse,
            weights,
            interior,
            interface,
        }
    }

    fn n_broken(&self) -> usize {
        self.n_subs * self.n_local
    }

    fn global_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for d in &self.dofs {
            for (i, &gi) in d.iter().enumerate() {
                for (j, &gj) in d.iter().enumerate() {
                    a[(gi, gj)] += self.k[(i, j)];
                }
            }
        }
        a
    }

    /// Broken vector from a global one (`n_broken x n`).
    fn restriction(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n_broken(), self.n);
        for (s, d) in self.dofs.iter().enumerate() {
            for (i, &g) in d.iter().enumerate() {
                r[(s * self.n_local + i, g)] = 1.0;
            }
        }
        r
    }

    /// Weighted average `E` (`n x n_broken`).
    fn averaging(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n, self.n_broken());
        for (s, d) in self.dofs.iter().enumerate() {
            for (i, &g) in d.iter().enumerate() {
                e[(g, s * self.n_local + i)] = self.weights[i];
            }
        }
        e
    }

    /// Block-diagonal product `diag(M, .., M) X`.
    fn block_mul(&self, m: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let nl = self.n_local;
        let mut y = DMatrix::zeros(self.n_subs * m.nrows(), x.ncols());
        for s in 0..self.n_subs {
            let blk = m * x.rows(s * nl, nl);
            y.rows_mut(s * m.nrows(), m.nrows()).copy_from(&blk);
        }
        y
    }

    /// `R X` for `R` from [`Self::restriction`], as a gather.
    fn gather(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n_broken(), x.ncols());
        for (s, d) in self.dofs.iter().enumerate() {
            for (i, &g) in d.iter().enumerate() {
                y.row_mut(s * self.n_local + i).copy_from(&x.row(g));
            }
        }
        y
    }

    /// Local discrete harmonic extension: keeps interface values and
    /// replaces interior values by `-K_II⁻¹ K_IΓ w_Γ`.
    fn harmonic_extension(&self) -> Result<DMatrix<f64>> {
        let (ii, gg) = (&self.interior, &self.interface);
        let kii = self.k.select_rows(ii).select_columns(ii);
        let kig = self.k.select_rows(ii).select_columns(gg);
        let chol = Cholesky::new(kii)
            .ok_or_else(|| Error::NotPositiveDefinite("interior block".into()))?;
        let ext = -chol.solve(&kig);
        let mut h = DMatrix::zeros(self.n_local, self.n_local);
        for (b, &g) in gg.iter().enumerate() {
            h[(g, g)] = 1.0;
            for (a, &i) in ii.iter().enumerate() {
                h[(i, g)] = ext[(a, b)];
            }
        }
        Ok(h)
    }

    /// Local energy-minimal coarse basis by the null-space method.
    fn coarse_basis(&self) -> Result<DMatrix<f64>> {
        let c = &self.c;
        let cct = Cholesky::new(c * c.transpose())
            .ok_or_else(|| Error::DegenerateConstraint("rows are dependent".into()))?;
        let cplus = c.transpose() * cct.inverse();
        let nul = null_space(c);
        let ktn = nul.transpose() * &self.k;
        let g = Cholesky::new(&ktn * &nul)
            .ok_or_else(|| Error::NotPositiveDefinite("constraint kernel".into()))?;
        Ok(&cplus - &nul * g.solve(&(&ktn * &cplus)))
    }
}

/// Orthonormal basis of `ker M`, from the eigenvectors of `MᵀM`.
fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym(&(m.transpose() * m)).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * scale)
        .collect();
    eig.eigenvectors.select_columns(&keep)
}

/// Moore–Penrose inverse of a symmetric positive semidefinite matrix.
fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym(m).symmetric_eigen();
    let tol = 1e-10 * eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > tol {
            let v = eig.eigenvectors.column(i);
            out += (&v * v.transpose()) / lam;
        }
    }
    out
}

fn level_of(prec: &BddcPreconditioner, level: usize) -> Result<&BddcLevel> {
    prec.levels
        .get(level.wrapping_sub(1))
        .ok_or(Error::LevelOutOfRange {
            level,
            max: prec.levels.len(),
        })
}

/// BDDC applied to the interface problem obtained by eliminating interior
/// unknowns, built densely from the level data.
#[derive(Debug, Clone)]
pub struct ReducedBddc {
    /// Global indices of the interface dofs.
    pub gamma: Vec<usize>,
    /// Schur complement of the level operator on the interface.
    pub schur: DMatrix<f64>,
    /// The preconditioner as a dense matrix on the interface.
    pub preconditioner: DMatrix<f64>,
}

impl ReducedBddc {
    pub fn build(prec: &BddcPreconditioner, level: usize, cap: usize) -> Result<Self> {
        let d = LevelData::new(level_of(prec, level)?);
        if d.n > cap {
            return Err(Error::OracleCap { n: d.n, cap });
        }
        let a = d.global_matrix();
        let mut on_gamma = vec![false; d.n];
        for dofs in &d.dofs {
            for &l in &d.interface {
                on_gamma[dofs[l]] = true;
            }
        }
        let gamma: Vec<usize> = (0..d.n).filter(|&g| on_gamma[g]).collect();
        let inner: Vec<usize> = (0..d.n).filter(|&g| !on_gamma[g]).collect();
        let mut gpos = vec![usize::MAX; d.n];
        for (k, &g) in gamma.iter().enumerate() {
            gpos[g] = k;
        }

        let agg = a.select_rows(&gamma).select_columns(&gamma);
        let agi = a.select_rows(&gamma).select_columns(&inner);
        let aii = Cholesky::new(a.select_rows(&inner).select_columns(&inner))
            .ok_or_else(|| Error::NotPositiveDefinite("global interior block".into()))?;
        let schur = sym(&(&agg - &agi * aii.solve(&agi.transpose())));

        // local Schur complement and constraints on the interface
        let (li, lg) = (&d.interior, &d.interface);
        let kgg = d.k.select_rows(lg).select_columns(lg);
        let kgi = d.k.select_rows(lg).select_columns(li);
        let kii = Cholesky::new(d.k.select_rows(li).select_columns(li))
            .ok_or_else(|| Error::NotPositiveDefinite("interior block".into()))?;
        let s_loc = sym(&(&kgg - &kgi * kii.solve(&kgi.transpose())));
        let c_g = d.c.select_columns(lg);
        let cct = Cholesky::new(&c_g * c_g.transpose())
            .ok_or_else(|| Error::DegenerateConstraint("interface rows are dependent".into()))?;
        let cplus = c_g.transpose() * cct.inverse();
        let nul = null_space(&c_g);

        // basis T of the partially assembled interface space
        let (ng, m, nn) = (lg.len(), c_g.nrows(), nul.ncols());
        let n_broken = d.n_subs * ng;
        let mut t = DMatrix::zeros(n_broken, d.n_coarse + d.n_subs * nn);
        for s in 0..d.n_subs {
            for r in 0..m {
                let j = d.coarse[s][r];
                t.view_mut((s * ng, j), (ng, 1)).copy_from(&cplus.column(r));
            }
            t.view_mut((s * ng, d.n_coarse + s * nn), (ng, nn))
                .copy_from(&nul);
        }
        let mut e = DMatrix::zeros(gamma.len(), n_broken);
        for (s, dofs) in d.dofs.iter().enumerate() {
            for (k, &l) in lg.iter().enumerate() {
                e[(gpos[dofs[l]], s * ng + k)] = d.weights[l];
            }
        }
        let mut st = DMatrix::zeros(n_broken, t.ncols());
        for s in 0..d.n_subs {
            let blk = &s_loc * t.rows(s * ng, ng);
            st.rows_mut(s * ng, ng).copy_from(&blk);
        }
        let s_tilde = t.transpose() * st;
        let et = &e * &t;
        let preconditioner = sym(&(&et * psd_pinv(&s_tilde) * et.transpose()));
        Ok(ReducedBddc {
            gamma,
            schur,
            preconditioner,
        })
    }

    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        LinearOperator::apply(&self.preconditioner, r)
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        exact_condition(
            &self.schur,
            &self.preconditioner,
            Some(&vec![1.0; self.gamma.len()]),
        )
    }
}

/// Drops eigenvalues within `tol` of one.
pub fn without_unit_eigenvalues(ev: &[f64], tol: f64) -> Vec<f64> {
    ev.iter()
        .copied()
        .filter(|x| (x - 1.0).abs() > tol)
        .collect()
}

/// Largest pairwise difference of two sorted multisets, or `None` when their
/// sizes differ.
pub fn multiset_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    (a.len() == b.len()).then(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    })
}

/// Measured quantities of the three-space decomposition
/// `U_I ⊕ (I-P) W̃_Δ ⊕ W̃_Π` of one level, with `Q_1 = I` and
/// `Q_2 = Q_3 = (I-P) E`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub level: usize,
    pub dims: [usize; 3],
    /// Largest energy cosine between the spaces.
    pub orthogonality_defect: f64,
    /// `‖Q(Qx) - Qx‖ / ‖Qx‖` over the spaces and random samples.
    pub projection_defect: f64,
    /// `‖u - Σ Q_k v_k‖_a / ‖u‖_a` with `v_k` the energy projections of `u`.
    pub unity_defect: f64,
    /// `‖u - Σ v_k‖_a / ‖u‖_a`, i.e. the spaces span the continuous functions.
    pub span_defect: f64,
    /// `Q` on continuous discrete harmonic functions versus identity.
    pub harmonic_identity_defect: f64,
    pub omega: [f64; 3],
    pub omega_max: f64,
    /// The same ratio over the sum of the second and third spaces, which
    /// share one operator.
    pub omega_combined: f64,
    /// Largest energy cosines between the images `Q_k V_k`.
    pub image_cosines: [[f64; 3]; 3],
    /// Spectral radius of `image_cosines`.
    pub image_cosine_radius: f64,
    /// Exact condition number of the preconditioner assembled from the
    /// three spaces.
    pub kappa_exact: f64,
    pub lambda_min: f64,
    /// Relative distance to the setup's own preconditioner, when the level
    /// is followed by an exact coarse solve.
    pub preconditioner_defect: Option<f64>,
}

impl AuditReport {
    pub fn max_defect(&self) -> f64 {
        [
            self.orthogonality_defect,
            self.projection_defect,
            self.unity_defect,
            self.span_defect,
            self.harmonic_identity_defect,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// `κ ≤ max_k ω_k`, the bound for energy-orthogonal spaces.
    pub fn omega_bound_holds(&self, slack: f64) -> bool {
        self.kappa_exact <= self.omega_max + slack
    }

    /// `κ ≤ ω ρ(ℰ)` with the cosine matrix of the images.
    pub fn image_bound_holds(&self, slack: f64) -> bool {
        self.kappa_exact <= self.omega_max * self.image_cosine_radius + slack
    }

    pub fn passes(&self, defect_tol: f64, omega_slack: f64) -> bool {
        self.max_defect() <= defect_tol
            && self.omega_bound_holds(omega_slack)
            && self.preconditioner_defect.map_or(true, |d| d <= defect_tol)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "level={}", self.level)?;
        writeln!(f, "dims={},{},{}", self.dims[0], self.dims[1], self.dims[2])?;
        writeln!(f, "orthogonality_defect={:e}", self.orthogonality_defect)?;
        writeln!(f, "projection_defect={:e}", self.projection_defect)?;
        writeln!(f, "unity_defect={:e}", self.unity_defect)?;
        writeln!(f, "span_defect={:e}", self.span_defect)?;
        writeln!(
            f,
            "harmonic_identity_defect={:e}",
            self.harmonic_identity_defect
        )?;
        for (k, w) in self.omega.iter().enumerate() {
            writeln!(f, "omega_{}={:.12}", k + 1, w)?;
        }
        writeln!(f, "omega_max={:.12}", self.omega_max)?;
        writeln!(f, "omega_combined={:.12}", self.omega_combined)?;
        for i in 0..3 {
            for j in (i + 1)..3 {
                writeln!(
                    f,
                    "image_cosine_{}{}={:e}",
                    i + 1,
                    j + 1,
                    self.image_cosines[i][j]
                )?;
            }
        }
        writeln!(f, "image_cosine_radius={:.12}", self.image_cosine_radius)?;
        writeln!(f, "kappa_exact={:.12}", self.kappa_exact)?;
        writeln!(f, "lambda_min={:.12}", self.lambda_min)?;
        if let Some(d) = self.preconditioner_defect {
            writeln!(f, "preconditioner_defect={d:e}")?;
        }
        writeln!(f, "omega_bound_holds={}", self.omega_bound_holds(1e-6))?;
        writeln!(f, "image_bound_holds={}", self.image_bound_holds(1e-6))?;
        writeln!(f, "pass={}", self.passes(1e-9, 1e-6))
    }
}

/// Parses `key=value` lines.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Energy-orthonormal basis of span `z`, `a(x, y) = xᵀ K_W y`.
fn a_orthonormalize(d: &LevelData, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let kz = d.block_mul(&d.k, z);
    let g = sym(&(z.transpose() * kz));
    let l = Cholesky::new(g)
        .ok_or_else(|| Error::NotPositiveDefinite("energy on an audited space".into()))?
        .unpack();
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("triangular inverse".into()))?;
    Ok(z * lt_inv)
}

/// Energy-orthonormal basis of the range of `m`, ignoring energy-free
/// directions.
fn energy_range_basis(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let eig = sym(&(m.transpose() * a * m)).symmetric_eigen();
    let tol = 1e-10 * eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > tol)
        .collect();
    let mut v = eig.eigenvectors.select_columns(&keep);
    for (c, &i) in keep.iter().enumerate() {
        v.column_mut(c).scale_mut(1.0 / eig.eigenvalues[i].sqrt());
    }
    m * v
}

fn a_norm(a: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(a * u)).max(0.0).sqrt()
}

/// Checks the assumptions of the multispace condition bound on one level of
/// a setup, treating the next level as solved exactly.
pub fn audit_multispace_assumptions(
    prec: &BddcPreconditioner,
    level: usize,
) -> Result<AuditReport> {
    let d = LevelData::new(level_of(prec, level)?);
    let nw = d.n_broken();
    if nw > DEFAULT_ORACLE_CAP.max(d.n) {
        return Err(Error::OracleCap {
            n: nw,
            cap: DEFAULT_ORACLE_CAP,
        });
    }
    let a = d.global_matrix();
    let r = d.restriction();
    let e = d.averaging();
    let h = d.harmonic_extension()?;
    // (I-P)E as a map from the broken space into U
    let q_u = &e * d.block_mul(&h, &d.gather(&e));

    // V1: interior functions
    let mut on_interface = vec![false; d.n];
    for dofs in &d.dofs {
        for &l in &d.interface {
            on_interface[dofs[l]] = true;
        }
    }
    let interior_global: Vec<usize> = (0..d.n).filter(|&g| !on_interface[g]).collect();
    let z1 = r.select_columns(&interior_global);

    // V2: harmonic extensions of interface values with zero coarse dofs
    let nul = null_space(&d.c.select_columns(&d.interface));
    let mut n_loc = DMatrix::zeros(d.n_local, nul.ncols());
    for (k, &l) in d.interface.iter().enumerate() {
        n_loc.row_mut(l).copy_from(&nul.row(k));
    }
    let n_ext = &h * n_loc;
    let m2 = n_ext.ncols();
    let mut z2 = DMatrix::zeros(nw, d.n_subs * m2);
    for s in 0..d.n_subs {
        z2.view_mut((s * d.n_local, s * m2), (d.n_local, m2))
            .copy_from(&n_ext);
    }

    // V3: energy-minimal coarse functions, without the constant
    let psi = d.coarse_basis()?;
    let mut z3 = DMatrix::zeros(nw, d.n_coarse);
    for s in 0..d.n_subs {
        for (row, &j) in d.coarse[s].iter().enumerate() {
            z3.view_mut((s * d.n_local, j), (d.n_local, 1))
                .copy_from(&psi.column(row));
        }
    }
    let z3 = z3 * complement_basis(&vec![1.0; d.n_coarse])?;

    let zs = [
        a_orthonormalize(&d, &z1)?,
        a_orthonormalize(&d, &z2)?,
        a_orthonormalize(&d, &z3)?,
    ];

    let mut orthogonality_defect: f64 = 0.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let kz = d.block_mul(&d.k, &zs[j]);
            orthogonality_defect = orthogonality_defect.max((zs[i].transpose() * kz).amax());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let samples = DMatrix::from_fn(nw, 16, |_, _| rng.gen_range(-1.0..1.0));
    let mut projection_defect: f64 = 0.0;
    for x in [&zs[1], &zs[2], &samples] {
        let qx = d.gather(&(&q_u * x));
        let qqx = d.gather(&(&q_u * &qx));
        let scale = qx.norm().max(f64::MIN_POSITIVE);
        projection_defect = projection_defect.max((qqx - &qx).norm() / scale);
    }

    // maps of the spaces into U: Q_1 = I reads the continuous function back
    let ms = [&e * &zs[0], &q_u * &zs[1], &q_u * &zs[2]];

    let mut unity_defect: f64 = 0.0;
    let mut span_defect: f64 = 0.0;
    let mut harmonic_identity_defect: f64 = 0.0;
    for _ in 0..8 {
        let mut u = DVector::from_fn(d.n, |_, _| rng.gen_range(-1.0..1.0));
        let mean = u.mean();
        u.add_scalar_mut(-mean);
        let norm_u = a_norm(&a, &u).max(f64::MIN_POSITIVE);
        let ru = &r * &u;
        let kru = d.block_mul(&d.k, &DMatrix::from_column_slice(nw, 1, ru.as_slice()));
        let mut sum_v = DVector::zeros(nw);
        let mut sum_qv = DVector::zeros(d.n);
        for (k, z) in zs.iter().enumerate() {
            let coef = z.transpose() * &kru;
            let v = z * &coef;
            sum_v += v.column(0);
            let qv = if k == 0 { &e * &v } else { &q_u * &v };
            sum_qv += qv.column(0);
        }
        // constants carry no energy; removing them avoids cancellation
        let mut diff_w = DMatrix::from_column_slice(nw, 1, (&ru - &sum_v).as_slice());
        let m = diff_w.mean();
        diff_w.add_scalar_mut(-m);
        let kd = d.block_mul(&d.k, &diff_w);
        span_defect = span_defect.max(diff_w.dot(&kd).max(0.0).sqrt() / norm_u);
        let mut diff_u = &u - &sum_qv;
        let m = diff_u.mean();
        diff_u.add_scalar_mut(-m);
        unity_defect = unity_defect.max(a_norm(&a, &diff_u) / norm_u);

        // Q reproduces continuous discrete harmonic functions
        let hu = d.block_mul(&h, &DMatrix::from_column_slice(nw, 1, ru.as_slice()));
        let uh = &e * &hu;
        let quh = &q_u * (&r * &uh);
        let scale = uh.norm().max(f64::MIN_POSITIVE);
        harmonic_identity_defect = harmonic_identity_defect.max((quh - &uh).norm() / scale);
    }

    let mut omega = [0.0; 3];
    for (k, m) in ms.iter().enumerate() {
        if m.ncols() > 0 {
            let g = sym(&(m.transpose() * &a * m));
            omega[k] = g.symmetric_eigenvalues().max();
        }
    }
    let omega_max = omega.iter().copied().fold(0.0, f64::max);
    let m23 = DMatrix::from_columns(
        &ms[1]
            .column_iter()
            .chain(ms[2].column_iter())
            .collect::<Vec<_>>(),
    );
    let omega_combined = if m23.ncols() > 0 {
        sym(&(m23.transpose() * &a * &m23))
            .symmetric_eigenvalues()
            .max()
    } else {
        0.0
    };

    let images: Vec<DMatrix<f64>> = ms.iter().map(|m| energy_range_basis(&a, m)).collect();
    let mut image_cosines = [[0.0; 3]; 3];
    for i in 0..3 {
        image_cosines[i][i] = 1.0;
        for j in (i + 1)..3 {
            let c = images[i].transpose() * &a * &images[j];
            let cos = if c.is_empty() {
                0.0
            } else {
                c.singular_values().max()
            };
            image_cosines[i][j] = cos;
            image_cosines[j][i] = cos;
        }
    }
    let image_cosine_radius = DMatrix::from_fn(3, 3, |i, j| image_cosines[i][j])
        .symmetric_eigenvalues()
        .amax();

    let mut b = DMatrix::zeros(d.n, d.n);
    for m in &ms {
        b += m * m.transpose();
    }
    let spec = exact_condition(&a, &b, Some(&vec![1.0; d.n]))?;

    let preconditioner_defect = if level == 1 && prec.levels.len() == 1 {
        let actual = materialize(prec, d.n, DEFAULT_ORACLE_CAP.max(d.n))?;
        let p0 = complement_basis(&vec![1.0; d.n])?;
        let lhs = p0.transpose() * &actual * &p0;
        let rhs = p0.transpose() * &b * &p0;
        Some((&lhs - &rhs).amax() / rhs.amax())
    } else {
        None
    };

    Ok(AuditReport {
        level,
        dims: [zs[0].ncols(), zs[1].ncols(), zs[2].ncols()],
        orthogonality_defect,
        projection_defect,
        unity_defect,
        span_defect,
        harmonic_identity_defect,
        omega,
        omega_max,
        omega_combined,
        image_cosines,
        image_cosine_radius,
        kappa_exact: spec.kappa,
        lambda_min: spec.lambda_min,
        preconditioner_defect,
    })
}
