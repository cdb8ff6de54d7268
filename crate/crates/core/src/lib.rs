//! Knowledge-graph conversational recommender.
//!
//! The crate covers the full pipeline: corpus loading and tokenisation,
//! an R-GCN over the knowledge graph, entity-level and contextual-level
//! user preference, their fusion into a recommendation distribution,
//! recommendation-biased response decoding, joint training and the
//! evaluation metrics.

pub mod backbone;
pub mod checkpoint;
pub mod context_encoder;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod graph_encoder;
pub mod kg;
pub mod model;
pub mod nn;
pub mod preference;
pub mod recommender;
pub mod report;
pub mod training;

pub use error::{CrsError, Result};
pub use kg::{EntityId, KnowledgeGraph};
pub use model::{CrsModel, ModelConfig, Recommendation, Variant};
pub use preference::{PreferenceHistory, RecommendationDistribution, Summarizer};
pub use recommender::{ColdStartPolicy, FusionBranch, FusionConfig, RankedItem};
pub use training::{LossBreakdown, TrainConfig, TrainState};
pub use generator::{DecodeConfig, Strategy};
