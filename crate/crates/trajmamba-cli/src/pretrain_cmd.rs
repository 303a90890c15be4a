//! The two pretraining subcommands, dispatching on numeric precision.

use crate::data::{build_text_store, load_dataset};
use crate::{CliError, CliResult};
use gradcore::checkpoint::Checkpoint;
use gradcore::Real;
use trajmamba::config::RunConfig;
use trajmamba::pretrain::{
    init_kd_model, init_purpose_model, kd_pretrain, purpose_pretrain, purpose_retrieval_acc1,
    RunIo,
};
use trajmamba::pretrain::purpose::TEACHER_CKPT;
use trajmamba::pretrain::kd::STUDENT_CKPT;
use trajmamba::purposeviews::TransitionTable;

#[derive(Debug, Clone)]
pub struct PurposeOutcome {
    pub final_loss: f64,
    pub steps: usize,
    pub finished: bool,
    pub retrieval_acc1: Option<f64>,
    pub teacher_path: std::path::PathBuf,
}

#[derive(Debug, Clone)]
pub struct KdOutcome {
    pub final_loss: f64,
    pub steps: usize,
    pub finished: bool,
    pub compressed_lengths: Vec<f64>,
    pub student_path: std::path::PathBuf,
}

fn run_io(cfg: &RunConfig, abort_after_epoch: Option<usize>) -> RunIo {
    RunIo {
        out_dir: Some(cfg.out_dir.clone()),
        config_echo: cfg.echo(),
        seed: cfg.seed,
        abort_after_epoch,
    }
}

/// Travel-purpose pretraining; writes the teacher checkpoint and a JSONL
/// step log under `out_dir`, resuming from the rolling epoch checkpoint
/// when one matches this configuration.
pub fn cmd_pretrain_purpose(
    cfg: &RunConfig,
    force: bool,
    abort_after_epoch: Option<usize>,
) -> CliResult<PurposeOutcome> {
    let out = cfg.out_dir.join(TEACHER_CKPT);
    if out.exists() && !force {
        return Err(CliError::data(format!(
            "teacher checkpoint {} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cfg.precision {
        64 => purpose_impl::<f64>(cfg, abort_after_epoch),
        _ => purpose_impl::<f32>(cfg, abort_after_epoch),
    }
}

fn purpose_impl<F: Real>(
    cfg: &RunConfig,
    abort_after_epoch: Option<usize>,
) -> CliResult<PurposeOutcome> {
    let dataset = load_dataset(cfg)?;
    let text = build_text_store(cfg, &dataset)?;
    let mut model = init_purpose_model::<F>(
        &cfg.encoder(),
        cfg.text_dim,
        dataset.world.network.edges.len(),
        dataset.world.pois.len(),
        cfg.seed,
    )?;
    let io = run_io(cfg, abort_after_epoch);
    let summary = purpose_pretrain(
        &mut model,
        &dataset.world,
        &text,
        &dataset.train,
        &cfg.purpose_train(),
        &cfg.views(),
        cfg.scan()?,
        &io,
    )?;

    let retrieval = if summary.finished {
        let transitions = TransitionTable::build(&dataset.train);
        Some(purpose_retrieval_acc1(
            &model,
            &dataset.world,
            &text,
            &dataset.train,
            &transitions,
            &cfg.views(),
            cfg.scan()?,
            cfg.purpose_batch_size,
            cfg.seed,
        )?)
    } else {
        None
    };
    Ok(PurposeOutcome {
        final_loss: summary.final_loss,
        steps: summary.steps,
        finished: summary.finished,
        retrieval_acc1: retrieval,
        teacher_path: cfg.out_dir.join(TEACHER_CKPT),
    })
}

/// Knowledge-distillation pretraining; requires the teacher checkpoint.
pub fn cmd_pretrain_kd(
    cfg: &RunConfig,
    force: bool,
    abort_after_epoch: Option<usize>,
) -> CliResult<KdOutcome> {
    let teacher = cfg.out_dir.join(TEACHER_CKPT);
    if !teacher.exists() {
        return Err(CliError::data(format!(
            "missing teacher checkpoint {}; run pretrain-purpose first",
            teacher.display()
        )));
    }
    let out = cfg.out_dir.join(STUDENT_CKPT);
    if out.exists() && !force {
        return Err(CliError::data(format!(
            "student checkpoint {} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    match cfg.precision {
        64 => kd_impl::<f64>(cfg, abort_after_epoch),
        _ => kd_impl::<f32>(cfg, abort_after_epoch),
    }
}

fn kd_impl<F: Real>(cfg: &RunConfig, abort_after_epoch: Option<usize>) -> CliResult<KdOutcome> {
    let dataset = load_dataset(cfg)?;
    let ck = Checkpoint::<F>::load(cfg.out_dir.join(TEACHER_CKPT)).map_err(trajmamba::TrajError::from)?;
    let mut model = init_kd_model::<F>(
        &ck.tensors,
        &cfg.encoder(),
        &cfg.kd(),
        dataset.world.network.edges.len(),
        cfg.seed,
    )?;
    let io = run_io(cfg, abort_after_epoch);
    let summary = kd_pretrain(
        &mut model,
        &dataset.world,
        &dataset.train,
        &cfg.kd_train(),
        &cfg.kd(),
        cfg.scan()?,
        &io,
    )?;
    Ok(KdOutcome {
        final_loss: summary.final_loss,
        steps: summary.steps,
        finished: summary.finished,
        compressed_lengths: summary.compressed_lengths,
        student_path: cfg.out_dir.join(STUDENT_CKPT),
    })
}
