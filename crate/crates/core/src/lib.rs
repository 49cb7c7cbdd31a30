//! Inverse rig solver for blendshape face models.
//!
//! Given a rig with pairwise, triple and quadruple corrective terms and a
//! sequence of target meshes, [`solver::solve`] finds box-constrained, sparse
//! and temporally smooth weight trajectories by coordinate descent over
//! controllers, solving one box QP over all frames per controller.
//!
//! The crate also provides two reference methods ([`baselines`]), a
//! cluster-partitioned parallel mode ([`cluster`]), evaluation metrics,
//! file formats and a synthetic data generator.

pub mod baselines;
pub mod cluster;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod qp;
pub mod rig;
pub mod roughness;
pub mod solver;
pub mod synth;

pub use baselines::{solve_linear_smooth, solve_quartic_per_frame, BaselineReport, LinearSmoothConfig};
pub use cluster::{
    extract_subrig, heuristic_cluster, solve_clustered, ClusterAssignment, ClusterOptions, ClusterScaling, ClusteredReport,
    Execution, SubRig,
};
pub use error::{Error, Result};
pub use matrix::{MeshSequence, WeightMatrix};
pub use metrics::{MeshError, MetricsReport, DEFAULT_CARDINALITY_EPS};
pub use qp::{solve_box_qp, BandedSymmetric, BoxQp, Hessian, QpOptions, QpSolution};
pub use rig::{Corrective, RigModel, SparseDelta, Tier};
pub use roughness::second_difference_matrix;
pub use solver::{assemble_subproblem, controller_order, objective_value, solve, SolveConfig, SolveReport, SubproblemMatrices};
pub use synth::{generate, SynthSpec, SyntheticData};
