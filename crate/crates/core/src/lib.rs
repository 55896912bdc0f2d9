//! Inference on discrete factor graphs in energy form.
//!
//! Engines:
//! - [`oracle`]: exact enumeration (partition function, marginals, free energies)
//! - [`bethe`]: sum-product belief propagation and the Bethe free energy
//! - [`regions`]: region decompositions and regional belief propagation
//! - [`dd`]: domain decomposition, which only needs boundary marginals from a
//!   per-region black box ([`solvers`]: exact enumeration or Gibbs sampling)
//!
//! [`ldpc`] builds decoding problems for low-density parity-check codes and
//! runs bit-error-rate experiments with any of the engines.

pub mod bethe;
pub mod dd;
pub mod dist;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod graph;
pub mod ldpc;
pub mod logspace;
pub mod oracle;
pub mod regions;
pub mod result;
pub mod solvers;
pub mod table;

pub use dist::DenseDistribution;
pub use error::{Error, Result};
pub use graph::{total_energy, validate_graph, Assignment, EnergyTable, FactorGraph, GraphSpec, VariableSpec};
pub use result::{InferenceResult, Status};
