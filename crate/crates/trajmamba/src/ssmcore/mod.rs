//! State-space machinery: ZOH discretization, the multi-input selective
//! scan (sequential and chunked), the dual-branch encoder block, a vanilla
//! gated block, and the full trajectory encoder.

pub mod block;
pub mod encoder;
pub mod scan;

pub use block::{
    mamba2_block, param_from, run_ssm, traj_mamba_block, BoundHead, BoundMamba2,
    BoundTrajMambaBlock, Mamba2BlockWeights, SsmHeadParams, TrajMambaBlockWeights,
};
pub use encoder::{encode_bundle, encode_trajectory, BoundEncoder, EncoderConfig, EncoderWeights};
pub use scan::{causal_conv1d, selective_scan, zoh_discretize, ScanMode};
