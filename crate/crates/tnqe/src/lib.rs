//! Classical emulation laboratory for a tensor-network quantum eigensolver (TNQE).
//!
//! The ansatz is a normalized linear combination of non-orthogonal matrix product
//! states, each expressed in its own rotated orbital basis. The combination is
//! optimized by a generalized two-site sweep: at every bond the two-site tensors are
//! expanded over one-hot bases, a matrix pencil (H', S') is assembled through an
//! exact statevector oracle (optionally perturbed by Gaussian shot noise), and a
//! thresholded generalized eigenvalue problem yields the parameter updates. Orbital
//! bases are co-optimized through FSWAP and Givens-rotation heuristics that minimize
//! the local truncation error.
//!
//! Modules:
//! - [`chem`]: FCIDUMP parsing/writing and orbital-basis transforms of the integrals
//! - [`oracle`]: sparse second-quantized Hamiltonian, FCI reference energies
//! - [`mps`]: matrix product states with charge-labelled bonds and canonical forms
//! - [`rotations`]: Givens decompositions, fermionic gate matrices, rotation registry
//! - [`subspace`]: one-hot expansions, pencil assembly, conditioning, GEE solvers
//! - [`sweep`]: the generalized two-site sweep with accept/revert logic
//! - [`driver`]: iterative subspace construction and run orchestration
//! - [`dequantize`]: perfect MPS sampling and the swap-network overlap estimator
//! - [`circuits`]: MPS-to-netlist compilation and a Hadamard-test simulator
//! - [`resources`]: closed-form quantum resource arithmetic and run tallies

pub mod chem;
pub mod circuits;
pub mod cli;
pub mod dequantize;
pub mod driver;
pub mod linalg;
pub mod mps;
pub mod oracle;
pub mod par;
pub mod resources;
pub mod rotations;
pub mod subspace;
pub mod sweep;

use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum TnqeError {
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate pencil: {0}")]
    DegeneratePencil(String),
    #[error("update rejected: {0}")]
    UpdateRejected(String),
    #[error("state error: {0}")]
    State(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TnqeError>;
