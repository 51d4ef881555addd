//! Exact solution of linearly constrained integer quadratic programs by
//! quadratic convex reformulation.
//!
//! The pipeline has two phases. Phase 1 builds the SDP + RLT relaxation of
//! the instance and minimizes its partial Lagrangian dual (the McCormick
//! product inequalities are dualized) with a dynamic proximal bundle method.
//! The resulting multipliers `(alpha, lambda, beta)` define an equivalent
//! MIQP with a concave objective. Phase 2 solves that MIQP by
//! branch-and-bound over continuous convex QP relaxations.
//!
//! Every numerical component is implemented here at desk scale:
//!
//! - [`conic`]: dense primal-dual interior-point method for programs with
//!   one PSD block plus nonnegative slacks,
//! - [`relaxation`]: the SDP + RLT relaxation and its catalog of dualizable
//!   product inequalities,
//! - [`bundle`]: the dynamic bundle method (`compute_beta`),
//! - [`reform`]: the concave equivalent MIQP and its concavity repair,
//! - [`qp`]: convex QP interior-point solver used by the bundle master
//!   problem and by branch-and-bound,
//! - [`bb`]: the branch-and-bound search,
//! - [`pipeline`]: end-to-end runs and batch summaries.
//!
//! With the default `parallel` feature, batch runs and constraint separation
//! use rayon; without it the same code paths run sequentially.

pub mod bb;
pub mod bundle;
pub mod conic;
pub mod instances;
mod linalg;
pub mod par;
pub mod pipeline;
pub mod qp;
pub mod reform;
pub mod relaxation;

pub use bb::{branch_and_bound, BbOptions, BbReport, BbStatus};
pub use bundle::{compute_beta, BundleOptions, DualSolution};
pub use conic::{check_kkt, solve_conic, ConicProgram, ConicSolution, ConicStatus, Tolerances};
pub use instances::{IntegerPoint, QpInstance, Sense};
pub use pipeline::{run_batch, run_instance, run_pipeline, Aggregation, InstanceSpec, Mode, RunConfig, RunReport, RunStatus};
pub use reform::{build_reformulation, ensure_concavity, ReformulatedMiqp};
pub use relaxation::{build_base_relaxation, ConstraintKey, SdpRelaxation};
