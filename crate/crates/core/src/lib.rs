//! Treatment variant aggregation (TVA) for fully cross-randomized factorial
//! experiments with ordered dosages.

pub mod dataset;
pub mod error;
pub mod lattice;
pub mod estimation;
pub mod pooling;
pub mod pipeline;
pub mod precondition;
pub mod selection;
pub mod serde_ext;
pub mod sim;
pub mod winners_curse;

pub use dataset::{Dataset, DatasetSchema};
pub use error::{ErrorClass, Result, TvaError};
pub use lattice::{FactorialDesign, Policy, PolicyLattice, Profile};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport};
