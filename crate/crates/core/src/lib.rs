//! Temporal knowledge-graph embeddings with relative time context.
//!
//! The crate covers the whole pipeline for event graphs mined from software
//! forges: turning raw event records into typed `(subject, relation, object,
//! day)` facts ([`ingest`]), shrinking large graphs ([`sampling`]), building
//! datasets and splits ([`kg`]), scoring facts with RotatE, DE-RotatE and the
//! relative-time RT-DE-RotatE model ([`model`]), training with
//! self-adversarial negative sampling ([`training`]) and ranking-based
//! evaluation ([`eval`]).

pub mod error;
pub mod eval;
pub mod ingest;
pub mod kg;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use kg::{DatasetSplit, EntityId, EntityType, Quadruple, RelationId, TemporalKg, Timestamp};
pub use model::{ModelConfig, ModelKind, ModelParams};
