//! Travel-purpose views: textual embedding ingestion, nearest-POI
//! assignment, neighbor-weighted aggregation, and the view encoders.

pub mod textembed;
pub mod views;

pub use textembed::{fetch_remote_embeddings, pseudo_embed, TextEmbeddingStore};
pub use views::{
    aggregate_views, aggregate_views_batch, build_view_context, encode_views, neighbor_attention, neighbor_weights,
    nearest_poi, world_descriptions, AggSpec, BoundViews, TransitionTable, ViewConfig,
    ViewContext, ViewWeights,
};
