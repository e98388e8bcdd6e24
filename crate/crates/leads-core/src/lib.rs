//! SQL-aware predictive modeling over tabular datastores.
//!
//! A general mixture-of-experts model is trained once per table; at query
//! time a SQL-aware gating network (recalibrated by α-entmax) slices out the
//! experts relevant to the WHERE clause, and the sliced model serves
//! predictions either in-process or through a socket-decoupled server.
//!
//! Module map:
//! - [`schema`]: CSV ingestion, attribute metadata, IV-maximizing binning
//! - [`query`]: the restricted WHERE grammar and query encoding
//! - [`tensor`]: dense kernels and reverse-mode differentiation
//! - [`entmax`]: the α-entmax family with exact sparsemax
//! - [`model`]: embeddings, experts, gating, slicing, model files
//! - [`train`]: losses, regularizers, query simulation, Adam loop
//! - [`store`]: table registry, selection executor, equality join
//! - [`serving`]: the `infer` pipeline, state cache, IIS/IDS benchmarking
//! - [`workload`]: workload generation, AUC metrics, synthetic data

pub mod entmax;
pub mod error;
pub mod model;
pub mod query;
pub mod schema;
pub mod serving;
pub mod store;
pub mod tensor;
pub mod train;
pub mod workload;

pub use error::{Error, Result};
pub use model::{GeneralModel, ModelConfig, SlicedModel};
pub use query::{PrimitiveQuery, QueryEncoding};
pub use schema::{AttrKind, AttributeSpec, BinningRule, Schema, Table};
pub use serving::{InferenceRequest, ServeOptions, StateCache, TimingBreakdown};
pub use store::{NumericMatch, RowBuffer, TableStore};
pub use tensor::{Graph, Tensor};
pub use train::{LossBreakdown, TrainConfig};
pub use workload::{SyntheticSpec, Workload};
