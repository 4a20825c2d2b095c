//! Crack segmentation network: a striped-attention transformer stream and a
//! convolutional stream run in parallel, four feature-interaction fusion
//! levels join them into a trunk, and a decoupling head splits the trunk
//! into a warped body map plus an edge residue before the classifiers.
//!
//! Everything is expressed over the tape in `crackseg-core`, so the whole
//! network is differentiable end to end and checkable against finite
//! differences (see [`gradsuite`]).

pub mod cofuse;
pub mod config;
pub mod decm;
pub mod global_stream;
pub mod gradsuite;
pub mod layers;
pub mod local_stream;
pub mod loss;
pub mod metrics;
pub mod model;

pub use config::{ConfigError, ModelConfig, Stripe};
pub use loss::{composite_loss, EdgeLossMode, LossNodes, LossWeights, OverlapForm};
pub use metrics::Confusion;
pub use model::{Forward, Model};
