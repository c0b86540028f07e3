//! Soft-spin Ising models on profile-similarity graphs.
//!
//! The core is generic over the floating-point type; `f64` aliases are
//! provided for the common case.

pub mod analysis;
pub mod conformal;
pub mod energy;
pub mod graph;
pub mod indices;
pub mod ingest;
pub mod linalg;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod trace_io;

pub use analysis::AnalysisError;
pub use conformal::{BatchSpec, ConformalError};
pub use energy::EnergyError;
pub use graph::{build_graph, InteractionGraph};
pub use indices::{Direction, IndicesError};
pub use ingest::{Attribute, Dataset, IngestError, Profile, ScaleDomain};
pub use sampler::{Engine, SamplerError};
pub use scalar::Scalar;
pub use trace_io::TraceIoError;

pub type EnergyModelF64 = energy::EnergyModel<f64>;
pub type EnergyModelF32 = energy::EnergyModel<f32>;
pub type ChainTraceF64 = sampler::ChainTrace<f64>;
pub type ChainConfigF64 = sampler::ChainConfig<f64>;
pub type PcaSummaryF64 = indices::PcaSummary<f64>;
pub type ConformalResultF64 = conformal::ConformalResult<f64>;
pub type MatrixF64 = linalg::Matrix<f64>;
