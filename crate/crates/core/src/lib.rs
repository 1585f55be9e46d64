//! Dialogue state tracking with slot-wise multi-encoders, per-slot memories of
//! copyable utterance positions and encoded ontology values, and
//! copy-augmented multi-decoders.

pub mod corpus;
pub mod embeddings;
pub mod encoder;
pub mod data_model;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod params;
pub mod state_space;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
