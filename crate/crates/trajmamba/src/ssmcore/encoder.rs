//! The full trajectory encoder: feature embedding, L stacked dual-branch
//! blocks, concatenation, and mean pooling.

use super::block::{traj_mamba_block, BoundTrajMambaBlock, TrajMambaBlockWeights};
use super::scan::ScanMode;
use crate::error::TrajError;
use crate::trajdata::{
    embed_point_features, BoundEmbedder, Bounds, FeatureBundle, FeatureEmbedderWeights, Trajectory,
};
use crate::Result;
use gradcore::{ParamStore, Real, Tape, TensorRef};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Block count L.
    pub layers: usize,
    /// Embedding dimension E (even, divisible by heads).
    pub embed_dim: usize,
    /// SSM state dimension N.
    pub state_dim: usize,
    /// Head count H.
    pub heads: usize,
    pub conv_width: usize,
    pub chunk_size: usize,
    pub road_embed_dim: usize,
    pub fourier_freqs: usize,
    pub rmsnorm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 5,
            embed_dim: 256,
            state_dim: 32,
            heads: 4,
            conv_width: 4,
            chunk_size: 64,
            road_embed_dim: 32,
            fourier_freqs: 8,
            rmsnorm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    /// Small profile for quick experiments on a laptop-class CPU.
    pub fn desk() -> Self {
        EncoderConfig {
            layers: 2,
            embed_dim: 64,
            state_dim: 16,
            heads: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % 2 != 0 || self.embed_dim % self.heads != 0 {
            return Err(TrajError::Config(format!(
                "embed_dim {} must be even and divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.layers == 0 || self.state_dim == 0 || self.heads == 0 || self.conv_width == 0 {
            return Err(TrajError::Config(
                "layers, state_dim, heads, conv_width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All learnable parameters of the encoder: the feature embedder plus L
/// block weight sets.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub embedder: FeatureEmbedderWeights,
    pub blocks: Vec<TrajMambaBlockWeights>,
    pub config: EncoderConfig,
}

impl EncoderWeights {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: &EncoderConfig,
        road_count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let embedder = FeatureEmbedderWeights::init(
            store,
            &format!("{prefix}.embed"),
            cfg.embed_dim,
            road_count,
            cfg.road_embed_dim,
            cfg.fourier_freqs,
            rng,
        )?;
        let blocks = (0..cfg.layers)
            .map(|i| {
                TrajMambaBlockWeights::init(
                    store,
                    &format!("{prefix}.block{i}"),
                    cfg.embed_dim,
                    cfg.state_dim,
                    cfg.heads,
                    cfg.conv_width,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderWeights {
            embedder,
            blocks,
            config: *cfg,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundEncoder> {
        Ok(BoundEncoder {
            embedder: self.embedder.bind(tape, store)?,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.bind(tape, store))
                .collect::<Result<Vec<_>>>()?,
            config: self.config,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub embedder: BoundEmbedder,
    pub blocks: Vec<BoundTrajMambaBlock>,
    pub config: EncoderConfig,
}

/// Threads a feature bundle through the block stack, concatenates the two
/// final streams, and mean-pools over time into a `[1, E]` embedding.
/// An optional per-point mask column `[n, 1]` scales both latent streams
/// before the first block (the soft-compression hook).
pub fn encode_bundle<F: Real>(
    tape: &mut Tape<F>,
    enc: &BoundEncoder,
    bundle: &FeatureBundle,
    mask: Option<TensorRef>,
    mode: ScanMode,
) -> Result<TensorRef> {
    if bundle.len == 0 {
        return Err(TrajError::InvalidTrajectory(
            "cannot encode an empty trajectory".into(),
        ));
    }
    let (mut z_g, mut z_r) = (bundle.z_g, bundle.z_r);
    if let Some(m) = mask {
        z_g = tape.mul(z_g, m)?;
        z_r = tape.mul(z_r, m)?;
    }
    for block in &enc.blocks {
        let (g, r, _y_g) =
            traj_mamba_block(tape, z_g, z_r, bundle.s, block, mode, enc.config.rmsnorm_eps)?;
        z_g = g;
        z_r = r;
    }
    let cat = tape.concat_cols(&[z_g, z_r])?;
    Ok(tape.mean_axis0(cat)?)
}

/// Feature embedding plus encoding for a raw trajectory.
pub fn encode_trajectory<F: Real>(
    tape: &mut Tape<F>,
    enc: &BoundEncoder,
    traj: &Trajectory,
    bounds: &Bounds,
    mode: ScanMode,
) -> Result<TensorRef> {
    let bundle = embed_point_features(tape, &enc.embedder, traj, bounds)?;
    encode_bundle(tape, enc, &bundle, None, mode)
}
