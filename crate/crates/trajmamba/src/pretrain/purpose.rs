//! Travel-purpose contrastive pretraining: align encoder embeddings with
//! the road and POI textual views over in-batch negatives.

use super::ckpt::{checkpoint_metadata, save_store_checkpoint, try_resume};
use super::losses::{infonce_pair_loss, LearnableTemperature};
use super::{derive_seed, RunIo, TrainConfig, World};
use crate::purposeviews::{
    aggregate_views, aggregate_views_batch, build_view_context, encode_views,
    TextEmbeddingStore, TransitionTable, ViewConfig, ViewContext, ViewWeights,
};
use crate::ssmcore::{encode_bundle, EncoderConfig, EncoderWeights, ScanMode};
use crate::trajdata::{embed_point_features, Trajectory};
use crate::Result;
use gradcore::{AdamConfig, AdamState, BnMode, ParamStore, Real, Tape};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::time::Instant;

/// Encoder + view encoders + temperature, sharing one parameter store.
pub struct PurposeModel<F: Real> {
    pub store: ParamStore<F>,
    pub encoder: EncoderWeights,
    pub views: ViewWeights,
    pub temperature: LearnableTemperature,
}

pub fn init_purpose_model<F: Real>(
    enc_cfg: &EncoderConfig,
    text_dim: usize,
    road_count: usize,
    poi_count: usize,
    seed: u64,
) -> Result<PurposeModel<F>> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    let encoder = EncoderWeights::init(&mut store, "encoder", enc_cfg, road_count, &mut rng)?;
    let views = ViewWeights::init(
        &mut store,
        "views",
        text_dim,
        enc_cfg.embed_dim,
        poi_count,
        enc_cfg.state_dim,
        enc_cfg.heads,
        enc_cfg.conv_width,
        &mut rng,
    )?;
    let temperature = LearnableTemperature::init(&mut store, "temp.log_t")?;
    Ok(PurposeModel {
        store,
        encoder,
        views,
        temperature,
    })
}

#[derive(Debug, Clone)]
pub struct PurposeSummary {
    pub completed_epochs: usize,
    pub final_loss: f64,
    pub steps: usize,
    /// True when training ran to the configured epoch count (not aborted).
    pub finished: bool,
}

const EPOCH_CKPT: &str = "purpose_epoch.tmck";
pub const TEACHER_CKPT: &str = "teacher.tmck";

/// Builds the per-trajectory view contexts (text coverage is validated
/// here) and runs the contrastive pretraining loop. After the final epoch
/// the encoder weights are written out as the frozen teacher.
#[allow(clippy::too_many_arguments)]
pub fn purpose_pretrain<F: Real>(
    model: &mut PurposeModel<F>,
    world: &World,
    text: &TextEmbeddingStore,
    train: &[Trajectory],
    tcfg: &TrainConfig,
    vcfg: &ViewConfig,
    mode: ScanMode,
    io: &RunIo,
) -> Result<PurposeSummary> {
    if train.is_empty() {
        return Err(crate::TrajError::Data("no training trajectories".into()));
    }
    let transitions = TransitionTable::build(train);
    let contexts: Vec<ViewContext> = train
        .iter()
        .map(|t| build_view_context(t, &world.network, &world.pois, text, &transitions, vcfg))
        .collect::<Result<Vec<_>>>()?;

    let mut adam = AdamState::new(AdamConfig::with_lr(tcfg.learning_rate));
    let mut start_epoch = 0;
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

    let mut log = io.open_log("purpose_log.jsonl");
    let n = train.len();
    let batch = tcfg.batch_size.max(1);
    let mut summary = PurposeSummary {
        completed_epochs: start_epoch,
        final_loss: f64::NAN,
        steps: start_epoch * n.div_ceil(batch),
        finished: false,
    };

    for epoch in start_epoch..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, 2, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        for (step_in_epoch, chunk) in order.chunks(batch).enumerate() {
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let enc = model.encoder.bind(&mut tape, &model.store)?;
            let views = model.views.bind(&mut tape, &model.store)?;
            let temp = model.temperature.bind(&mut tape, &model.store)?;

            let mut rows_t = Vec::with_capacity(chunk.len());
            let mut rows_road = Vec::with_capacity(chunk.len());
            let mut rows_poi = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let traj = &train[idx];
                let bundle = embed_point_features(&mut tape, &enc.embedder, traj, &world.bounds)?;
                rows_t.push(encode_bundle(&mut tape, &enc, &bundle, None, mode)?);
            }
            let batch_ctxs: Vec<&ViewContext> = chunk.iter().map(|&i| &contexts[i]).collect();
            let seqs = aggregate_views_batch(
                &mut tape,
                &model.store,
                &views,
                &batch_ctxs,
                vcfg,
                BnMode::Train { track: true },
                true,
            )?;
            for (rseq, pseq) in seqs {
                let (zr, zp) = encode_views(&mut tape, &views, rseq, pseq, mode, vcfg.rmsnorm_eps)?;
                rows_road.push(zr);
                rows_poi.push(zp);
            }
            let z_t = tape.concat_rows(&rows_t)?;
            let z_road = tape.concat_rows(&rows_road)?;
            let z_poi = tape.concat_rows(&rows_poi)?;
            let l_road = infonce_pair_loss(&mut tape, z_t, z_road, temp)?;
            let l_poi = infonce_pair_loss(&mut tape, z_t, z_poi, temp)?;
            let sum = tape.add(l_road, l_poi)?;
            let loss = tape.scale(sum, 0.5)?;

            let loss_v = tape.scalar_value(loss)?.as_f64();
            let road_v = tape.scalar_value(l_road)?.as_f64();
            let poi_v = tape.scalar_value(l_poi)?.as_f64();

            model.store.zero_grads();
            tape.backward_into(loss, &mut model.store)?;
            tape.flush_updates(&mut model.store);
            adam.step(&mut model.store)?;

            summary.steps += 1;
            summary.final_loss = loss_v;
            io.log_line(
                &mut log,
                &json!({
                    "epoch": epoch,
                    "step": step_in_epoch,
                    "loss": loss_v,
                    "loss_road": road_v,
                    "loss_poi": poi_v,
                    "wall_ms": t0.elapsed().as_millis() as u64,
                }),
            );
        }
        summary.completed_epochs = epoch + 1;

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
                |_| true,
                Some(&adam),
                meta,
            )?;
        }
        if io.abort_after_epoch == Some(epoch + 1) && epoch + 1 < tcfg.epochs {
            return Ok(summary);
        }
    }

    if let Some(dir) = &io.out_dir {
        let meta = checkpoint_metadata(
            &io.config_echo,
            io.seed,
            &[("stage", json!("teacher")), ("epochs", json!(tcfg.epochs))],
        );
        save_store_checkpoint(
            &model.store,
            dir.join(TEACHER_CKPT),
            |name| name.starts_with("encoder."),
            None,
            meta,
        )?;
    }
    summary.finished = true;
    Ok(summary)
}

/// In-batch retrieval check: fraction of trajectories whose encoder
/// embedding ranks its own road view first by cosine among the batch.
/// Runs in eval mode (batch-norm uses running statistics).
#[allow(clippy::too_many_arguments)]
pub fn purpose_retrieval_acc1<F: Real>(
    model: &PurposeModel<F>,
    world: &World,
    text: &TextEmbeddingStore,
    trajs: &[Trajectory],
    transitions: &TransitionTable,
    vcfg: &ViewConfig,
    mode: ScanMode,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0));
    order.shuffle(&mut rng);
    order.truncate(batch.min(trajs.len()));

    let mut tape = Tape::inference();
    let enc = model.encoder.bind(&mut tape, &model.store)?;
    let views = model.views.bind(&mut tape, &model.store)?;
    let mut zs: Vec<Vec<f64>> = Vec::new();
    let mut zr: Vec<Vec<f64>> = Vec::new();
    for &idx in &order {
        let traj = &trajs[idx];
        let ctx = build_view_context(traj, &world.network, &world.pois, text, transitions, vcfg)?;
        let bundle = embed_point_features(&mut tape, &enc.embedder, traj, &world.bounds)?;
        let z = encode_bundle(&mut tape, &enc, &bundle, None, mode)?;
        let (rseq, pseq) = aggregate_views(
            &mut tape,
            &model.store,
            &views,
            &ctx,
            vcfg,
            BnMode::Eval,
            true,
        )?;
        let (road, _poi) = encode_views(&mut tape, &views, rseq, pseq, mode, vcfg.rmsnorm_eps)?;
        zs.push(tape.data(z).iter().map(|v| v.as_f64()).collect());
        zr.push(tape.data(road).iter().map(|v| v.as_f64()).collect());
    }

    let cosine = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na > 0.0 && nb > 0.0 {
            dot / (na * nb)
        } else {
            -1.0
        }
    };
    let mut hits = 0;
    for (i, z) in zs.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (j, r) in zr.iter().enumerate() {
            let c = cosine(z, r);
            if c > best.0 {
                best = (c, j);
            }
        }
        if best.1 == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / zs.len().max(1) as f64)
}
