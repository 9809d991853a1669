//! Balancing domain decomposition by constraints (BDDC) for the periodic Q1
//! Poisson problem, in two-level and recursive multilevel form.
//!
//! The usual flow: describe the substructure hierarchy with a
//! [`HierarchySpec`], build it with [`build_hierarchy`], factor the local
//! problems with [`BddcPreconditioner::setup`], then run [`pcg`] with the
//! preconditioner.

pub mod bddc;
pub mod error;
pub mod hierarchy;
pub mod krylov;
pub mod localsolvers;
pub mod mesh_fe;
pub mod oracle;

pub use bddc::{average, AveragingOperator, BddcLevel, BddcPreconditioner, CoarseSolver};
pub use error::{Error, Result};
pub use hierarchy::{
    build_hierarchy, classify_dofs, coarse_dof_constraints, CoarseConstraints, CoarseSpace,
    DofCategory, DofClassification, Hierarchy, HierarchySpec,
};
pub use krylov::{pcg, FnOperator, Identity, LinearOperator, PcgOptions, SolveReport};
pub use mesh_fe::{
    assemble_global, element_stiffness, random_zero_mean_rhs, CsrMatrix, ElementMatrix,
    GlobalOperator, GridSpec,
};
