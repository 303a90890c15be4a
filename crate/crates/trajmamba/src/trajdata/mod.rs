//! Domain objects, the per-point feature pipeline, rule-based
//! preprocessing, compression baselines, and synthetic data generation.

pub mod features;
pub mod filter;
pub mod geo;
pub mod io;
pub mod synth;
pub mod types;

pub use features::{
    compute_movement_features, embed_point_features, fourier_time_encode, segment_speeds,
    time_features, BoundEmbedder, FeatureBundle, FeatureEmbedderWeights,
};
pub use filter::{douglas_peucker, downsample, filter_explicit_redundancy, FilterConfig};
pub use geo::{bearing, cross_track_distance, dtw_distance, haversine, EARTH_RADIUS_M};
pub use io::{
    chronological_split, read_network, read_pois, read_trajectories, write_network, write_pois,
    write_trajectories,
};
pub use synth::{generate_synthetic_world, generate_trajectories, SynthConfig, TrajGenConfig};
pub use types::{Bounds, Poi, RoadEdge, RoadNetwork, RoadNode, TrajPoint, Trajectory};
