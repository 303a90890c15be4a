//! The two pretraining procedures and their shared plumbing.

pub mod ckpt;
pub mod kd;
pub mod losses;
pub mod mask;
pub mod purpose;

pub use ckpt::{checkpoint_metadata, save_store_checkpoint};
pub use kd::{
    compress_trajectory, init_kd_model, kd_pretrain, mean_compressed_length,
    student_embed_compressed, student_embed_task, KdConfig, KdModel, KdSummary,
    StudentPipeline,
};
pub use losses::{
    infonce_pair_loss, l2_normalize_rows, mask_loss, mec_loss, LearnableTemperature,
};
pub use mask::{
    compute_mu, hard_compress, mask_features, stochastic_gate, BoundMaskGen, MaskGenConfig,
    MaskGeneratorWeights, MASK_FEATURES,
};
pub use purpose::{
    init_purpose_model, purpose_pretrain, purpose_retrieval_acc1, PurposeModel, PurposeSummary,
};

use crate::trajdata::{Bounds, Poi, RoadNetwork};
use std::io::Write;
use std::path::PathBuf;

/// The static geographic context every stage shares.
#[derive(Debug, Clone)]
pub struct World {
    pub network: RoadNetwork,
    pub pois: Vec<Poi>,
    pub bounds: Bounds,
}

impl World {
    pub fn new(network: RoadNetwork, pois: Vec<Poi>) -> Self {
        let bounds = network.bounds();
        World {
            network,
            pois,
            bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Where a training run writes its artifacts; `out_dir = None` keeps
/// everything in memory (tests).
#[derive(Debug, Clone, Default)]
pub struct RunIo {
    pub out_dir: Option<PathBuf>,
    pub config_echo: String,
    pub seed: u64,
    /// Stop after this many completed epochs without writing final
    /// artifacts — the interruption hook used by the resume tests.
    pub abort_after_epoch: Option<usize>,
}

impl RunIo {
    pub fn in_memory(seed: u64) -> Self {
        RunIo {
            out_dir: None,
            config_echo: String::new(),
            seed,
            abort_after_epoch: None,
        }
    }

    pub(crate) fn log_line(&self, file: &mut Option<std::fs::File>, value: &serde_json::Value) {
        if let Some(f) = file {
            let _ = writeln!(f, "{value}");
        }
    }

    pub(crate) fn open_log(&self, name: &str) -> Option<std::fs::File> {
        let dir = self.out_dir.as_ref()?;
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(name))
            .ok()
    }
}

/// Splitmix-style stream derivation so every epoch and purpose gets an
/// independent, reproducible seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
