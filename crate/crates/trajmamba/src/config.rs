//! Flat `key = value` run configuration covering every tunable, with
//! range validation, unknown-key rejection, and a canonical echo string
//! that artifacts embed.

use crate::error::TrajError;
use crate::pretrain::{KdConfig, MaskGenConfig, TrainConfig};
use crate::purposeviews::ViewConfig;
use crate::ssmcore::{EncoderConfig, ScanMode};
use crate::tasks::{HeadTrainConfig, StsConfig};
use crate::trajdata::{FilterConfig, SynthConfig, TrajGenConfig};
use crate::Result;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: u32,
    pub workers: usize,
    pub scan_mode: String,

    // synthetic world
    pub synth_rows: usize,
    pub synth_cols: usize,
    pub synth_spacing_m: f64,
    pub synth_poi_count: usize,
    pub synth_trajectories: usize,
    pub synth_od_share: f64,
    pub synth_duplicate_share: f64,
    pub synth_sts_pool: usize,
    pub synth_origin_lng: f64,
    pub synth_origin_lat: f64,

    // encoder
    pub encoder_layers: usize,
    pub encoder_embed_dim: usize,
    pub encoder_state_dim: usize,
    pub encoder_heads: usize,
    pub encoder_conv_width: usize,
    pub encoder_chunk_size: usize,
    pub encoder_road_embed_dim: usize,
    pub encoder_fourier_freqs: usize,

    // text embeddings / views
    pub text_dim: usize,
    pub text_source: String,
    pub text_file: String,
    pub views_alpha: f64,
    pub views_beta: f64,
    pub views_poi_radius_m: f64,
    pub views_poi_cap: usize,
    pub views_bn_momentum: f64,

    // purpose pretraining
    pub purpose_epochs: usize,
    pub purpose_batch_size: usize,
    pub purpose_learning_rate: f64,

    // knowledge distillation
    pub kd_epochs: usize,
    pub kd_batch_size: usize,
    pub kd_learning_rate: f64,
    pub kd_w_mec: f64,
    pub kd_w_mask: f64,
    pub kd_mec_order: usize,
    pub kd_mec_eps: f64,
    pub kd_mec_literal: bool,
    pub kd_delta: f64,
    pub kd_mask_dim: usize,
    pub kd_mask_heads: usize,
    pub kd_mask_state: usize,

    // preprocessing thresholds
    pub filter_stop_speed: f64,
    pub filter_steady_speed_range: f64,

    // downstream tasks
    pub tasks_head_hidden: usize,
    pub tasks_head_epochs: usize,
    pub tasks_head_patience: usize,
    pub tasks_head_lr: f64,
    pub tasks_head_batch: usize,
    pub tasks_truncate_points: usize,
    pub tasks_sts_queries: usize,
    pub tasks_sts_negatives: usize,
    pub tasks_sts_exclusion_m: f64,

    // paths
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            precision: 32,
            workers: 0,
            scan_mode: "sequential".into(),
            synth_rows: 8,
            synth_cols: 8,
            synth_spacing_m: 500.0,
            synth_poi_count: 50,
            synth_trajectories: 2000,
            synth_od_share: 0.3,
            synth_duplicate_share: 0.5,
            synth_sts_pool: 0,
            synth_origin_lng: 104.0,
            synth_origin_lat: 30.65,
            encoder_layers: 5,
            encoder_embed_dim: 256,
            encoder_state_dim: 32,
            encoder_heads: 4,
            encoder_conv_width: 4,
            encoder_chunk_size: 64,
            encoder_road_embed_dim: 32,
            encoder_fourier_freqs: 8,
            text_dim: 256,
            text_source: "pseudo".into(),
            text_file: String::new(),
            views_alpha: 1.0,
            views_beta: 0.5,
            views_poi_radius_m: 300.0,
            views_poi_cap: 10,
            views_bn_momentum: 0.1,
            purpose_epochs: 15,
            purpose_batch_size: 128,
            purpose_learning_rate: 1e-3,
            kd_epochs: 15,
            kd_batch_size: 128,
            kd_learning_rate: 1e-4,
            kd_w_mec: 0.5,
            kd_w_mask: 0.5,
            kd_mec_order: 4,
            kd_mec_eps: 2.0,
            kd_mec_literal: false,
            kd_delta: 0.5,
            kd_mask_dim: 16,
            kd_mask_heads: 2,
            kd_mask_state: 8,
            filter_stop_speed: 0.5,
            filter_steady_speed_range: 0.5,
            tasks_head_hidden: 0,
            tasks_head_epochs: 60,
            tasks_head_patience: 5,
            tasks_head_lr: 1e-3,
            tasks_head_batch: 128,
            tasks_truncate_points: 5,
            tasks_sts_queries: 1000,
            tasks_sts_negatives: 5000,
            tasks_sts_exclusion_m: 500.0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

macro_rules! config_keys {
    ($self:ident, $each:ident) => {
        $each!(seed, u64);
        $each!(precision, u32);
        $each!(workers, usize);
        $each!(scan_mode, String);
        $each!(synth_rows, usize);
        $each!(synth_cols, usize);
        $each!(synth_spacing_m, f64);
        $each!(synth_poi_count, usize);
        $each!(synth_trajectories, usize);
        $each!(synth_od_share, f64);
        $each!(synth_duplicate_share, f64);
        $each!(synth_sts_pool, usize);
        $each!(synth_origin_lng, f64);
        $each!(synth_origin_lat, f64);
        $each!(encoder_layers, usize);
        $each!(encoder_embed_dim, usize);
        $each!(encoder_state_dim, usize);
        $each!(encoder_heads, usize);
        $each!(encoder_conv_width, usize);
        $each!(encoder_chunk_size, usize);
        $each!(encoder_road_embed_dim, usize);
        $each!(encoder_fourier_freqs, usize);
        $each!(text_dim, usize);
        $each!(text_source, String);
        $each!(text_file, String);
        $each!(views_alpha, f64);
        $each!(views_beta, f64);
        $each!(views_poi_radius_m, f64);
        $each!(views_poi_cap, usize);
        $each!(views_bn_momentum, f64);
        $each!(purpose_epochs, usize);
        $each!(purpose_batch_size, usize);
        $each!(purpose_learning_rate, f64);
        $each!(kd_epochs, usize);
        $each!(kd_batch_size, usize);
        $each!(kd_learning_rate, f64);
        $each!(kd_w_mec, f64);
        $each!(kd_w_mask, f64);
        $each!(kd_mec_order, usize);
        $each!(kd_mec_eps, f64);
        $each!(kd_mec_literal, bool);
        $each!(kd_delta, f64);
        $each!(kd_mask_dim, usize);
        $each!(kd_mask_heads, usize);
        $each!(kd_mask_state, usize);
        $each!(filter_stop_speed, f64);
        $each!(filter_steady_speed_range, f64);
        $each!(tasks_head_hidden, usize);
        $each!(tasks_head_epochs, usize);
        $each!(tasks_head_patience, usize);
        $each!(tasks_head_lr, f64);
        $each!(tasks_head_batch, usize);
        $each!(tasks_truncate_points, usize);
        $each!(tasks_sts_queries, usize);
        $each!(tasks_sts_negatives, usize);
        $each!(tasks_sts_exclusion_m, f64);
        $each!(data_dir, PathBuf);
        $each!(out_dir, PathBuf);
    };
}

trait ConfigValue: Sized {
    fn parse_value(key: &str, raw: &str) -> Result<Self>;
    fn render(&self) -> String;
}

macro_rules! impl_config_value {
    ($t:ty) => {
        impl ConfigValue for $t {
            fn parse_value(key: &str, raw: &str) -> Result<Self> {
                raw.parse().map_err(|_| {
                    TrajError::Config(format!("invalid value `{raw}` for key `{key}`"))
                })
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    };
}

impl_config_value!(u64);
impl_config_value!(u32);
impl_config_value!(usize);
impl_config_value!(f64);
impl_config_value!(bool);

impl ConfigValue for String {
    fn parse_value(_key: &str, raw: &str) -> Result<Self> {
        Ok(raw.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(_key: &str, raw: &str) -> Result<Self> {
        Ok(PathBuf::from(raw))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl RunConfig {
    /// Parses flat `key = value` text. Lines starting with `#` and blank
    /// lines are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrajError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! try_set {
            ($field:ident, $t:ty) => {
                if key == stringify!($field) {
                    self.$field = <$t as ConfigValue>::parse_value(key, value)?;
                    return Ok(());
                }
            };
        }
        config_keys!(self, try_set);
        Err(TrajError::Config(format!("unknown config key `{key}`")))
    }

    /// Canonical `key = value` rendering of the full configuration, one
    /// key per line in a fixed order. Embedded in every artifact.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        macro_rules! render {
            ($field:ident, $t:ty) => {
                out.push_str(stringify!($field));
                out.push_str(" = ");
                out.push_str(&ConfigValue::render(&self.$field));
                out.push('\n');
            };
        }
        config_keys!(self, render);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(TrajError::Config(msg));
        if self.precision != 32 && self.precision != 64 {
            return err(format!("precision must be 32 or 64, got {}", self.precision));
        }
        if self.scan_mode != "sequential" && self.scan_mode != "chunked" {
            return err(format!(
                "scan_mode must be sequential|chunked, got `{}`",
                self.scan_mode
            ));
        }
        if self.synth_rows < 2 || self.synth_cols < 2 {
            return err("synth grid needs rows >= 2 and cols >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.synth_od_share)
            || !(0.0..=1.0).contains(&self.synth_duplicate_share)
        {
            return err("od_share and duplicate_share must lie in [0, 1]".into());
        }
        if self.encoder_embed_dim % 2 != 0
            || self.encoder_embed_dim % self.encoder_heads != 0
        {
            return err(format!(
                "encoder_embed_dim {} must be even and divisible by encoder_heads {}",
                self.encoder_embed_dim, self.encoder_heads
            ));
        }
        if self.encoder_layers == 0 || self.encoder_state_dim == 0 || self.encoder_conv_width == 0
        {
            return err("encoder layers/state_dim/conv_width must be positive".into());
        }
        if self.kd_mask_dim % self.kd_mask_heads != 0 {
            return err(format!(
                "kd_mask_dim {} must be divisible by kd_mask_heads {}",
                self.kd_mask_dim, self.kd_mask_heads
            ));
        }
        if self.kd_w_mec < 0.0 || self.kd_w_mask < 0.0 {
            return err("loss weights must be nonnegative".into());
        }
        if self.kd_mec_order == 0 {
            return err("kd_mec_order must be >= 1".into());
        }
        if self.kd_mec_eps <= 0.0 || self.kd_delta <= 0.0 {
            return err("kd_mec_eps and kd_delta must be positive".into());
        }
        if self.purpose_epochs == 0 || self.kd_epochs == 0 {
            return err("epoch counts must be >= 1".into());
        }
        if self.purpose_batch_size == 0 || self.kd_batch_size == 0 || self.tasks_head_batch == 0 {
            return err("batch sizes must be >= 1".into());
        }
        if self.purpose_learning_rate <= 0.0
            || self.kd_learning_rate <= 0.0
            || self.tasks_head_lr <= 0.0
        {
            return err("learning rates must be positive".into());
        }
        if !matches!(self.text_source.as_str(), "pseudo" | "file" | "remote") {
            return err(format!(
                "text_source must be pseudo|file|remote, got `{}`",
                self.text_source
            ));
        }
        if self.filter_stop_speed < 0.0 || self.filter_steady_speed_range < 0.0 {
            return err("filter thresholds must be nonnegative".into());
        }
        Ok(())
    }

    // ── Typed sub-configs ────────────────────────────────────────────

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.encoder_layers,
            embed_dim: self.encoder_embed_dim,
            state_dim: self.encoder_state_dim,
            heads: self.encoder_heads,
            conv_width: self.encoder_conv_width,
            chunk_size: self.encoder_chunk_size,
            road_embed_dim: self.encoder_road_embed_dim,
            fourier_freqs: self.encoder_fourier_freqs,
            rmsnorm_eps: 1e-5,
        }
    }

    pub fn scan(&self) -> Result<ScanMode> {
        ScanMode::parse(&self.scan_mode, self.encoder_chunk_size)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            rows: self.synth_rows,
            cols: self.synth_cols,
            spacing_m: self.synth_spacing_m,
            poi_count: self.synth_poi_count,
            origin_lng: self.synth_origin_lng,
            origin_lat: self.synth_origin_lat,
        }
    }

    pub fn trajgen(&self) -> TrajGenConfig {
        TrajGenConfig {
            count: self.synth_trajectories,
            od_share: self.synth_od_share,
            duplicate_share: self.synth_duplicate_share,
            ..Default::default()
        }
    }

    pub fn views(&self) -> ViewConfig {
        ViewConfig {
            alpha: self.views_alpha,
            beta: self.views_beta,
            poi_radius_m: self.views_poi_radius_m,
            poi_cap: self.views_poi_cap,
            bn_momentum: self.views_bn_momentum,
            rmsnorm_eps: 1e-5,
        }
    }

    pub fn purpose_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.purpose_batch_size,
            epochs: self.purpose_epochs,
            learning_rate: self.purpose_learning_rate,
            seed: self.seed,
        }
    }

    pub fn kd_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.kd_batch_size,
            epochs: self.kd_epochs,
            learning_rate: self.kd_learning_rate,
            seed: self.seed,
        }
    }

    pub fn kd(&self) -> KdConfig {
        KdConfig {
            w_mec: self.kd_w_mec,
            w_mask: self.kd_w_mask,
            mec_order: self.kd_mec_order,
            mec_eps: self.kd_mec_eps,
            mec_literal: self.kd_mec_literal,
            mask: MaskGenConfig {
                dim: self.kd_mask_dim,
                heads: self.kd_mask_heads,
                state: self.kd_mask_state,
                conv_width: self.encoder_conv_width,
                delta: self.kd_delta,
                rmsnorm_eps: 1e-5,
            },
            filter: self.filter(),
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            stop_speed: self.filter_stop_speed,
            steady_speed_range: self.filter_steady_speed_range,
        }
    }

    pub fn head_train(&self) -> HeadTrainConfig {
        HeadTrainConfig {
            hidden: self.tasks_head_hidden,
            epochs: self.tasks_head_epochs,
            patience: self.tasks_head_patience,
            learning_rate: self.tasks_head_lr,
            batch_size: self.tasks_head_batch,
            seed: self.seed,
        }
    }

    pub fn sts(&self) -> StsConfig {
        StsConfig {
            query_count: self.tasks_sts_queries,
            negatives: self.tasks_sts_negatives,
            od_exclusion_m: self.tasks_sts_exclusion_m,
            min_non_self_fraction: 0.2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_echo_roundtrips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let echo = cfg.echo();
        let back = RunConfig::parse(&echo).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.echo(), echo);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("nonexistent_key = 5\n").unwrap_err();
        assert!(err.to_string().contains("nonexistent_key"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(RunConfig::parse("precision = 16\n").is_err());
        assert!(RunConfig::parse("encoder_embed_dim = 65\n").is_err());
        assert!(RunConfig::parse("kd_delta = 0\n").is_err());
        assert!(RunConfig::parse("synth_od_share = 1.5\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse("# a comment\n\nseed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }
}
