//! Multi-agent covering-option discovery on Kronecker-factored graphs.
//!
//! The joint state-transition graph of n independently moving agents is
//! approximated as a product of their individual transition graphs. The
//! joint Fiedler vector is then estimated from the factor graphs'
//! normalized-Laplacian spectra and degree lists alone, subgoal joint states
//! are read off its extremes, and multi-agent options (one intra-option
//! policy per agent) are built toward them. Gridworld simulators and tabular
//! SMDP Q-learners close the loop for end-to-end evaluation.
//!
//! Module map:
//! - [`graph`]: transition graphs, degree vectors, (normalized) Laplacians.
//! - [`spectrum`]: exact Jacobi eigensolver, joint-index arithmetic, the
//!   Kronecker spectrum estimate and Fiedler candidates, sparse oracle.
//! - [`sampled_spectrum`]: eigenfunction training from transition samples.
//! - [`options`]: subgoal extraction, option generation, discovery loop.
//! - [`envs`]: n-agent grid simulators and random-walk collection.
//! - [`marl`]: hierarchical tabular Q-learning over option sets.
//! - [`report`]: stable text/CSV serialization of run artifacts.

pub mod error;
pub mod graph;
pub mod sampled_spectrum;
pub mod spectrum;

pub use error::{Error, Result};
pub use graph::{DegreeVector, LoopMode, SparseGraph, TransitionGraph, TransitionSample};
pub use spectrum::{
    eig_sym, exact_fiedler, exact_joint_fiedler, joint_fiedler_candidates, joint_index,
    kron_spectrum_estimate, sparse_fiedler, split_joint_index, FactorSpectra, FactorSpectrum,
    FiedlerCandidate, KronEigenpair, SpectrumResult,
};
