//! Trajectory representation learning on road networks: a dual-branch
//! selective-SSM encoder, travel-purpose contrastive pretraining, and a
//! knowledge-distillation scheme that learns to compress trajectories.
//!
//! Layout:
//! - [`trajdata`]: domain objects, feature pipeline, rule-based
//!   preprocessing and compression baselines, synthetic data generation
//! - [`ssmcore`]: ZOH discretization, multi-input selective scan, the
//!   dual-branch encoder block, and a vanilla gated block
//! - [`purposeviews`]: textual embedding ingestion and the road/POI view
//!   encoders used during pretraining
//! - [`pretrain`]: both pretraining procedures and their losses
//! - [`tasks`]: downstream heads, metrics, and similarity-search labeling
//! - [`config`]: the flat `key = value` run configuration

pub mod config;
pub mod error;
pub mod pretrain;
pub mod purposeviews;
pub mod ssmcore;
pub mod tasks;
pub mod trajdata;

pub use error::TrajError;

pub type Result<T> = std::result::Result<T, TrajError>;
