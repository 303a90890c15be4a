//! Knowledge-distillation pretraining: a teacher-initialized student
//! encodes soft-masked preprocessed trajectories and is aligned with the
//! frozen teacher's full-trajectory embeddings.

use super::ckpt::{checkpoint_metadata, save_store_checkpoint, try_resume};
use super::losses::{l2_normalize_rows, mask_loss, mec_loss};
use super::mask::{
    compute_mu, hard_compress, mask_features, stochastic_gate, MaskGenConfig,
    MaskGeneratorWeights, MASK_FEATURES,
};
use super::{derive_seed, RunIo, TrainConfig, World};
use crate::ssmcore::{encode_bundle, EncoderConfig, EncoderWeights, ScanMode};
use crate::trajdata::{
    embed_point_features, filter_explicit_redundancy, FilterConfig, Trajectory,
};
use crate::Result;
use gradcore::{AdamConfig, AdamState, ParamStore, Real, Tape, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct KdConfig {
    pub w_mec: f64,
    pub w_mask: f64,
    /// Taylor order K of the entropy-coding loss.
    pub mec_order: usize,
    /// Decoding error bound epsilon.
    pub mec_eps: f64,
    /// Reproduce the single-power series variant (comparison hook).
    pub mec_literal: bool,
    pub mask: MaskGenConfig,
    pub filter: FilterConfig,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            w_mec: 0.5,
            w_mask: 0.5,
            mec_order: 4,
            mec_eps: 2.0,
            mec_literal: false,
            mask: MaskGenConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

/// Frozen teacher, trainable student copy, and the mask generator in one
/// store. Teacher entries live under `teacher.` and never receive
/// gradients.
pub struct KdModel<F: Real> {
    pub store: ParamStore<F>,
    pub teacher: EncoderWeights,
    pub student: EncoderWeights,
    pub maskgen: MaskGeneratorWeights,
}

/// Builds the KD model: the teacher weights are loaded verbatim, and the
/// student starts as an exact weight copy of the teacher.
pub fn init_kd_model<F: Real>(
    teacher_tensors: &[(String, Tensor<F>)],
    enc_cfg: &EncoderConfig,
    kd_cfg: &KdConfig,
    road_count: usize,
    seed: u64,
) -> Result<KdModel<F>> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, 0));
    let teacher = EncoderWeights::init(&mut store, "teacher.encoder", enc_cfg, road_count, &mut rng)?;
    let student = EncoderWeights::init(&mut store, "encoder", enc_cfg, road_count, &mut rng)?;
    let maskgen = MaskGeneratorWeights::init(&mut store, "maskgen", &kd_cfg.mask, &mut rng)?;

    let teacher_values: Vec<(String, &Tensor<F>)> = teacher_tensors
        .iter()
        .map(|(n, t)| (format!("teacher.{n}"), t))
        .collect();
    store.load_values(
        teacher_values.iter().map(|(n, t)| (n.as_str(), *t)),
        |name| name.starts_with("teacher."),
    )?;
    // the Fig. 2b initialization contract: student = teacher weight copy
    store.load_values(
        teacher_tensors.iter().map(|(n, t)| (n.as_str(), t)),
        |name| name.starts_with("encoder."),
    )?;
    store.set_trainable_prefix("teacher.", false);
    Ok(KdModel {
        store,
        teacher,
        student,
        maskgen,
    })
}

#[derive(Debug, Clone)]
pub struct KdSummary {
    pub completed_epochs: usize,
    pub final_loss: f64,
    pub steps: usize,
    pub finished: bool,
    /// Eval-mode mean compressed length over the training set, per epoch.
    pub compressed_lengths: Vec<f64>,
}

const EPOCH_CKPT: &str = "kd_epoch.tmck";
pub const STUDENT_CKPT: &str = "student.tmck";

#[allow(clippy::too_many_arguments)]
pub fn kd_pretrain<F: Real>(
    model: &mut KdModel<F>,
    world: &World,
    train: &[Trajectory],
    tcfg: &TrainConfig,
    kd: &KdConfig,
    mode: ScanMode,
    io: &RunIo,
) -> Result<KdSummary> {
    if train.is_empty() {
        return Err(crate::TrajError::Data("no training trajectories".into()));
    }
    // preprocessing is data-only; do it once
    let filtered: Vec<Trajectory> = train
        .iter()
        .map(|t| filter_explicit_redundancy(t, &kd.filter))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<Vec<[f64; MASK_FEATURES]>> = filtered
        .iter()
        .map(|t| mask_features(t, &world.bounds))
        .collect::<Result<Vec<_>>>()?;

    // the teacher is frozen, so its full-trajectory embeddings never
    // change; compute them once up front
    let embed_dim = model.teacher.config.embed_dim;
    let teacher_emb: Vec<Vec<F>> = train
        .iter()
        .map(|t| {
            let mut tape = Tape::inference();
            let enc = model.teacher.bind(&mut tape, &model.store)?;
            let bundle = embed_point_features(&mut tape, &enc.embedder, t, &world.bounds)?;
            let z = encode_bundle(&mut tape, &enc, &bundle, None, mode)?;
            Ok(tape.data(z).to_vec())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adam = AdamState::new(AdamConfig::with_lr(tcfg.learning_rate));
    let mut start_epoch = 0;
    let mut compressed_lengths = Vec::new();
    if let Some(dir) = &io.out_dir {
        if let Some(next) = try_resume(
            dir.join(EPOCH_CKPT),
            &io.config_echo,
            io.seed,
            &mut model.store,
            &mut adam,
        )? {
            start_epoch = next;
        }
    }

    let mut log = io.open_log("kd_log.jsonl");
    let n = train.len();
    let batch = tcfg.batch_size.max(1);
    let mut summary = KdSummary {
        completed_epochs: start_epoch,
        final_loss: f64::NAN,
        steps: start_epoch * n.div_ceil(batch),
        finished: false,
        compressed_lengths: Vec::new(),
    };

    for epoch in start_epoch..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, 5, epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, 6, epoch as u64));

        for (step_in_epoch, chunk) in order.chunks(batch).enumerate() {
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let student = model.student.bind(&mut tape, &model.store)?;
            let maskgen = model.maskgen.bind(&mut tape, &model.store)?;

            let mut t_flat = Vec::with_capacity(chunk.len() * embed_dim);
            let mut rows_s = Vec::with_capacity(chunk.len());
            let mut mus = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                t_flat.extend_from_slice(&teacher_emb[idx]);

                let pre = &filtered[idx];
                let mu = compute_mu(&mut tape, &maskgen, &feats[idx], mode)?;
                let m = stochastic_gate(&mut tape, mu, kd.mask.delta, true, Some(&mut noise_rng))?;
                let bundle_pre =
                    embed_point_features(&mut tape, &student.embedder, pre, &world.bounds)?;
                rows_s.push(encode_bundle(&mut tape, &student, &bundle_pre, Some(m), mode)?);
                mus.push(mu);
            }
            let z_t_raw = tape.leaf_vec(chunk.len(), embed_dim, t_flat)?;
            let z_s_raw = tape.concat_rows(&rows_s)?;
            let z_t = l2_normalize_rows(&mut tape, z_t_raw)?;
            let z_s = l2_normalize_rows(&mut tape, z_s_raw)?;
            let l_mec = mec_loss(&mut tape, z_t, z_s, kd.mec_order, kd.mec_eps, kd.mec_literal)?;
            let l_mask = mask_loss(&mut tape, &mus, kd.mask.delta)?;
            let mec_term = tape.scale(l_mec, kd.w_mec)?;
            let mask_term = tape.scale(l_mask, kd.w_mask)?;
            let loss = tape.add(mec_term, mask_term)?;

            let loss_v = tape.scalar_value(loss)?.as_f64();
            let mec_v = tape.scalar_value(l_mec)?.as_f64();
            let mask_v = tape.scalar_value(l_mask)?.as_f64();

            model.store.zero_grads();
            tape.backward_into(loss, &mut model.store)?;
            adam.step(&mut model.store)?;

            summary.steps += 1;
            summary.final_loss = loss_v;
            io.log_line(
                &mut log,
                &json!({
                    "epoch": epoch,
                    "step": step_in_epoch,
                    "loss": loss_v,
                    "loss_mec": mec_v,
                    "loss_mask": mask_v,
                    "wall_ms": t0.elapsed().as_millis() as u64,
                }),
            );
        }
        summary.completed_epochs = epoch + 1;

        let mean_len = mean_compressed_length(model, &filtered, &feats, mode)?;
        compressed_lengths.push(mean_len);
        io.log_line(
            &mut log,
            &json!({"epoch": epoch, "mean_compressed_length": mean_len}),
        );

        if let Some(dir) = &io.out_dir {
            let meta = checkpoint_metadata(
                &io.config_echo,
                io.seed,
                &[
                    ("epoch", json!(epoch)),
                    ("adam_step", json!(adam.step_count)),
                ],
            );
            save_store_checkpoint(
                &model.store,
                dir.join(EPOCH_CKPT),
                |name| !name.starts_with("teacher."),
                Some(&adam),
                meta,
            )?;
        }
        if io.abort_after_epoch == Some(epoch + 1) && epoch + 1 < tcfg.epochs {
            summary.compressed_lengths = compressed_lengths;
            return Ok(summary);
        }
    }

    if let Some(dir) = &io.out_dir {
        let meta = checkpoint_metadata(
            &io.config_echo,
            io.seed,
            &[("stage", json!("student")), ("epochs", json!(tcfg.epochs))],
        );
        save_store_checkpoint(
            &model.store,
            dir.join(STUDENT_CKPT),
            |name| name.starts_with("encoder.") || name.starts_with("maskgen."),
            None,
            meta,
        )?;
    }
    summary.finished = true;
    summary.compressed_lengths = compressed_lengths;
    Ok(summary)
}

/// Eval-mode mean hard-compressed length over preprocessed trajectories.
pub fn mean_compressed_length<F: Real>(
    model: &KdModel<F>,
    filtered: &[Trajectory],
    feats: &[Vec<[f64; MASK_FEATURES]>],
    mode: ScanMode,
) -> Result<f64> {
    let mut total = 0usize;
    for (pre, f) in filtered.iter().zip(feats) {
        let mut tape = Tape::inference();
        let maskgen = model.maskgen.bind(&mut tape, &model.store)?;
        let mu = compute_mu(&mut tape, &maskgen, f, mode)?;
        let compressed = hard_compress(pre, tape.data(mu));
        total += compressed.len();
    }
    Ok(total as f64 / filtered.len().max(1) as f64)
}

/// The full student inference pipeline for one trajectory: rule-based
/// filtering, eval-mode gating, hard compression, encoding. Returns the
/// embedding and the compressed length.
pub fn student_embed_compressed<F: Real>(
    store: &ParamStore<F>,
    student: &EncoderWeights,
    maskgen: &MaskGeneratorWeights,
    world: &World,
    traj: &Trajectory,
    filter: &FilterConfig,
    mode: ScanMode,
) -> Result<(Vec<F>, usize)> {
    let pre = filter_explicit_redundancy(traj, filter)?;
    let compressed = compress_trajectory(store, maskgen, world, &pre, mode)?;
    let mut tape = Tape::inference();
    let enc = student.bind(&mut tape, store)?;
    let bundle = embed_point_features(&mut tape, &enc.embedder, &compressed, &world.bounds)?;
    let z = encode_bundle(&mut tape, &enc, &bundle, None, mode)?;
    Ok((tape.data(z).to_vec(), compressed.len()))
}

/// Inference-side student model: encoder plus mask generator in one store.
pub struct StudentPipeline<F: Real> {
    pub store: ParamStore<F>,
    pub encoder: EncoderWeights,
    pub maskgen: MaskGeneratorWeights,
}

impl<F: Real> StudentPipeline<F> {
    /// Rebuilds the student structure and fills it from checkpoint
    /// tensors (strict name/shape handshake). `trainable` controls
    /// whether the encoder may be fine-tuned afterwards; the mask
    /// generator always stays frozen at inference.
    pub fn from_tensors(
        tensors: &[(String, Tensor<F>)],
        enc_cfg: &EncoderConfig,
        mask_cfg: &super::mask::MaskGenConfig,
        road_count: usize,
        trainable: bool,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let encoder = EncoderWeights::init(&mut store, "encoder", enc_cfg, road_count, &mut rng)?;
        let maskgen = MaskGeneratorWeights::init(&mut store, "maskgen", mask_cfg, &mut rng)?;
        store.load_values(
            tensors.iter().map(|(n, t)| (n.as_str(), t)),
            |name| name.starts_with("encoder.") || name.starts_with("maskgen."),
        )?;
        store.set_trainable_prefix("encoder.", trainable);
        store.set_trainable_prefix("maskgen.", false);
        Ok(StudentPipeline {
            store,
            encoder,
            maskgen,
        })
    }

    pub fn embed(
        &self,
        world: &World,
        traj: &Trajectory,
        filter: &FilterConfig,
        mode: ScanMode,
    ) -> Result<(Vec<F>, usize)> {
        student_embed_compressed(
            &self.store,
            &self.encoder,
            &self.maskgen,
            world,
            traj,
            filter,
            mode,
        )
    }
}

/// Convenience wrapper over [`student_embed_compressed`] for a KD model.
pub fn student_embed_task<F: Real>(
    model: &KdModel<F>,
    world: &World,
    traj: &Trajectory,
    filter: &FilterConfig,
    mode: ScanMode,
) -> Result<Vec<F>> {
    let (emb, _len) = student_embed_compressed(
        &model.store,
        &model.student,
        &model.maskgen,
        world,
        traj,
        filter,
        mode,
    )?;
    Ok(emb)
}

/// Eval-mode hard compression of an already-preprocessed trajectory.
pub fn compress_trajectory<F: Real>(
    store: &ParamStore<F>,
    maskgen: &MaskGeneratorWeights,
    world: &World,
    pre: &Trajectory,
    mode: ScanMode,
) -> Result<Trajectory> {
    let feats = mask_features(pre, &world.bounds)?;
    let mut tape = Tape::inference();
    let bound = maskgen.bind(&mut tape, store)?;
    let mu = compute_mu(&mut tape, &bound, &feats, mode)?;
    Ok(hard_compress(pre, tape.data(mu)))
}
