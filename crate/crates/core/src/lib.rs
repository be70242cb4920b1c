//! Root-cause triage for failed replay events.
//!
//! Events are classified with a distance-weighted KNN over a weighted mix of
//! categorical mismatches and TF-IDF cosine distance between error messages.
//! Each classification carries a probability (vote share) and a confidence
//! (distance to the nearest neighbor of the predicted class); results below
//! either threshold are flagged for operator review, and operator corrections
//! feed the next retraining.

pub mod artifact;
pub mod baseline;
pub mod classifier;
pub mod config;
pub mod distance;
pub mod downsample;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod projection;
pub mod store;
pub mod synthgen;
pub mod text;
pub mod types;
pub mod vectorizer;

pub use classifier::Model;
pub use config::{DownsampleConfig, EngineConfig};
pub use error::{Error, Result};
pub use par::Execution;
pub use types::{Classification, Event, FeatureWeights, Kind, Label, LabeledEvent, Neighbor, Thresholds};
