//! Origin/destination/time migration tensors built from geo-tagged event
//! streams, factorized with a sparse non-negative Poisson CP model and ranked
//! by the temporal unevenness of each component.
//!
//! The pipeline runs in stages, each with a plain-text artifact that the next
//! stage can read back:
//!
//! ```text
//! events --(ingestion)--> filtered events --(residence)--> monthly residences
//!        --(detect)--> migrations --(tensor)--> count tensor
//!        --(solver)--> factor model --(analysis)--> ranked component reports
//! ```

pub mod analysis;
pub mod calendar;
pub mod config;
pub mod error;
pub mod ingestion;
pub mod pipeline;
pub mod residence;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use analysis::{gini, rank_components, ComponentReport, CountryShare, Gini};
pub use calendar::{Calendar, YearMonth};
pub use config::PipelineConfig;
pub use error::{Error, ErrorKind, Result};
pub use ingestion::{
    CentroidTable, CountryEvent, CountryRegistry, FilterPolicy, GeoEvent, GeoPoint, InputFormat, Location,
};
pub use residence::{MigrationEvent, ResidenceSeries, WindowMode};
pub use solver::{fit, FactorModel, FitConfig, FitResult, FitTrace, Mode};
pub use synth::SynthSpec;
pub use tensor::{Dims, Entry, MigrationTensor};
