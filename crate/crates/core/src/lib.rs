//! Multi-agent dynamics with higher-order interactions on weighted
//! hypergraphs, their hypergraphon limits and fibered Vlasov solvers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hypergraph;
pub mod hypergraphon;
pub mod kernels;
pub mod metrics;
pub mod particle;
pub mod rng;
pub mod vlasov;

pub use error::{Error, Result};
pub use hypergraph::{build_balanced, build_clique_lift, build_homogeneous, AdjacencyTensor, Hypergraph};
pub use hypergraphon::{
    discretize_l1, discretize_pointwise, step_from_hypergraph, AnalyticHypergraphon, Profile, StepHypergraphon,
    StepLevel, URHypergraphon,
};
pub use kernels::{InteractionKernel, KernelFamily};
pub use metrics::{d_bl, d_p_nu, DiscreteMeasure, FiberedAtoms};
pub use particle::{empirical_fibered, force_particles, integrate, ForcePlan, Method, ParticleState, Trajectory};
pub use vlasov::{
    mean_field_force, solve, solve_continuum, solve_coupled_pde, step_transport, vlasov_constants, FiberedDensity,
    FieldPlan, ForceOptions, Grid, LabelField, SolveOptions, VlasovConstants,
};
