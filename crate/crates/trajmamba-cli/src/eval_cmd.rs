//! Downstream evaluation: destination prediction, arrival-time
//! estimation, and similar trajectory search over the distilled student.

use crate::data::load_dataset;
use crate::{file_sha256, CliError, CliResult};
use gradcore::checkpoint::Checkpoint;
use gradcore::Real;
use serde_json::json;
use trajmamba::config::RunConfig;
use trajmamba::pretrain::kd::STUDENT_CKPT;
use trajmamba::pretrain::{compress_trajectory, StudentPipeline, World};
use trajmamba::tasks::{
    embed_trajectories, gps_metrics, rank_metrics, road_metrics, sts_build_labels, sts_search,
    time_metrics, train_head_finetune, train_head_frozen, truncate_for_prediction, HeadKind,
    HeadTargets, predict,
};
use trajmamba::trajdata::{filter_explicit_redundancy, Bounds, TrajPoint, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Dp,
    Ate,
    Sts,
}

impl EvalTask {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "dp" => Ok(EvalTask::Dp),
            "ate" => Ok(EvalTask::Ate),
            "sts" => Ok(EvalTask::Sts),
            other => Err(CliError::usage(format!(
                "unknown task `{other}` (expected dp|ate|sts)"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            EvalTask::Dp => "dp",
            EvalTask::Ate => "ate",
            EvalTask::Sts => "sts",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Finetune,
    Frozen,
}

impl EvalMode {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "ft" => Ok(EvalMode::Finetune),
            "frozen" => Ok(EvalMode::Frozen),
            other => Err(CliError::usage(format!(
                "unknown mode `{other}` (expected ft|frozen)"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            EvalMode::Finetune => "ft",
            EvalMode::Frozen => "frozen",
        }
    }
}

/// Runs one downstream task and writes the metric report JSON; returns the
/// report value. Similar trajectory search has no fine-tune variant (the
/// encoder stays fixed after pretraining).
pub fn cmd_eval(
    cfg: &RunConfig,
    task: EvalTask,
    mode: EvalMode,
    force: bool,
) -> CliResult<serde_json::Value> {
    if task == EvalTask::Sts && mode == EvalMode::Finetune {
        return Err(CliError::usage(
            "similar trajectory search has no fine-tune variant: encoder parameters are fixed after pretraining",
        ));
    }
    let report_path = cfg
        .out_dir
        .join(format!("eval_{}_{}.json", task.name(), mode.name()));
    if report_path.exists() && !force {
        return Err(CliError::data(format!(
            "report {} already exists; pass --force to overwrite",
            report_path.display()
        )));
    }
    let report = match cfg.precision {
        64 => eval_impl::<f64>(cfg, task, mode)?,
        _ => eval_impl::<f32>(cfg, task, mode)?,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(&report_path, format!("{report:#}\n"))?;
    Ok(report)
}

fn eval_impl<F: Real>(
    cfg: &RunConfig,
    task: EvalTask,
    mode: EvalMode,
) -> CliResult<serde_json::Value> {
    let student_path = cfg.out_dir.join(STUDENT_CKPT);
    if !student_path.exists() {
        return Err(CliError::data(format!(
            "missing student checkpoint {}; run pretrain-kd first",
            student_path.display()
        )));
    }
    let ck_hash = file_sha256(&student_path)?;
    let ck = Checkpoint::<F>::load(&student_path).map_err(trajmamba::TrajError::from)?;
    let dataset = load_dataset(cfg)?;
    let mut pipeline = StudentPipeline::from_tensors(
        &ck.tensors,
        &cfg.encoder(),
        &cfg.kd().mask,
        dataset.world.network.edges.len(),
        mode == EvalMode::Finetune,
    )?;

    let metrics = match task {
        EvalTask::Dp => eval_dp(cfg, &mut pipeline, &dataset, mode)?,
        EvalTask::Ate => eval_ate(cfg, &mut pipeline, &dataset, mode)?,
        EvalTask::Sts => eval_sts(cfg, &pipeline, &dataset)?,
    };

    Ok(json!({
        "task": task.name(),
        "mode": mode.name(),
        "seed": cfg.seed,
        "checkpoint_sha256": ck_hash,
        "metrics": metrics,
        "config_echo": cfg.echo(),
    }))
}

struct PredictionSet {
    trajs: Vec<Trajectory>,
    withheld: Vec<TrajPoint>,
    skipped: usize,
}

fn truncate_split(trajs: &[Trajectory], k: usize) -> PredictionSet {
    let mut out = PredictionSet {
        trajs: Vec::new(),
        withheld: Vec::new(),
        skipped: 0,
    };
    for t in trajs {
        match truncate_for_prediction(t, k) {
            Some((kept, withheld)) => {
                out.trajs.push(kept);
                out.withheld.push(withheld);
            }
            None => out.skipped += 1,
        }
    }
    out
}

struct TaskData<F: Real> {
    train_emb: Vec<Vec<F>>,
    valid_emb: Vec<Vec<F>>,
    test_emb: Vec<Vec<F>>,
    train_compressed: Vec<Trajectory>,
    valid_compressed: Vec<Trajectory>,
    sets: (PredictionSet, PredictionSet, PredictionSet),
}

/// Shared embedding/compression work for the prediction tasks.
fn prepare_task_data<F: Real>(
    cfg: &RunConfig,
    pipeline: &StudentPipeline<F>,
    dataset: &crate::data::Dataset,
    mode: EvalMode,
) -> CliResult<TaskData<F>> {
    let k = cfg.tasks_truncate_points;
    let train = truncate_split(&dataset.train, k);
    let valid = truncate_split(&dataset.valid, k);
    let test = truncate_split(&dataset.test, k);
    if train.skipped + valid.skipped + test.skipped > 0 {
        eprintln!(
            "warning: skipped {} trajectories shorter than {} points",
            train.skipped + valid.skipped + test.skipped,
            k + 2
        );
    }
    if train.trajs.is_empty() || valid.trajs.is_empty() || test.trajs.is_empty() {
        return Err(CliError::data(
            "a split has no trajectories long enough for prediction",
        ));
    }
    let scan = cfg.scan()?;
    let embed = |trajs: &[Trajectory]| -> CliResult<Vec<Vec<F>>> {
        Ok(embed_trajectories(
            pipeline,
            &dataset.world,
            trajs,
            &cfg.filter(),
            scan,
            cfg.workers,
        )?)
    };
    // fine-tuning embeds in-graph from precomputed compressed trajectories
    let compress = |trajs: &[Trajectory]| -> CliResult<Vec<Trajectory>> {
        trajs
            .iter()
            .map(|t| {
                let pre = filter_explicit_redundancy(t, &cfg.filter())?;
                Ok(compress_trajectory(
                    &pipeline.store,
                    &pipeline.maskgen,
                    &dataset.world,
                    &pre,
                    scan,
                )?)
            })
            .collect()
    };
    Ok(TaskData {
        train_emb: embed(&train.trajs)?,
        valid_emb: embed(&valid.trajs)?,
        test_emb: embed(&test.trajs)?,
        train_compressed: if mode == EvalMode::Finetune {
            compress(&train.trajs)?
        } else {
            Vec::new()
        },
        valid_compressed: if mode == EvalMode::Finetune {
            compress(&valid.trajs)?
        } else {
            Vec::new()
        },
        sets: (train, valid, test),
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_head<F: Real>(
    cfg: &RunConfig,
    pipeline: &mut StudentPipeline<F>,
    world: &World,
    data: &TaskData<F>,
    kind: HeadKind,
    train_targets: &HeadTargets,
    valid_targets: &HeadTargets,
    mode: EvalMode,
) -> CliResult<Vec<Vec<f64>>> {
    let scan = cfg.scan()?;
    match mode {
        EvalMode::Frozen => {
            let (store, head, _) = train_head_frozen(
                cfg.encoder_embed_dim,
                kind,
                &data.train_emb,
                train_targets,
                &data.valid_emb,
                valid_targets,
                &cfg.head_train(),
            )?;
            Ok(predict(&store, &head, &data.test_emb)?)
        }
        EvalMode::Finetune => {
            let (head, _) = train_head_finetune(
                pipeline,
                world,
                kind,
                &data.train_compressed,
                train_targets,
                &data.valid_compressed,
                valid_targets,
                &cfg.head_train(),
                scan,
            )?;
            // re-embed the test split with the fine-tuned encoder
            let test_emb = embed_trajectories(
                pipeline,
                world,
                &data.sets.2.trajs,
                &cfg.filter(),
                scan,
                cfg.workers,
            )?;
            Ok(predict(&pipeline.store, &head, &test_emb)?)
        }
    }
}

fn gps_targets(set: &PredictionSet, bounds: &Bounds) -> HeadTargets {
    HeadTargets::Gps(
        set.withheld
            .iter()
            .map(|p| [bounds.norm_lng(p.lng), bounds.norm_lat(p.lat)])
            .collect(),
    )
}

fn denorm(bounds: &Bounds, lng01: f64, lat01: f64) -> (f64, f64) {
    (
        bounds.min_lng + lng01 * (bounds.max_lng - bounds.min_lng),
        bounds.min_lat + lat01 * (bounds.max_lat - bounds.min_lat),
    )
}

fn eval_dp<F: Real>(
    cfg: &RunConfig,
    pipeline: &mut StudentPipeline<F>,
    dataset: &crate::data::Dataset,
    mode: EvalMode,
) -> CliResult<serde_json::Value> {
    let data = prepare_task_data(cfg, pipeline, dataset, mode)?;
    let bounds = dataset.world.bounds;
    let classes = dataset.world.network.edges.len();

    // GPS variant
    let gps_pred = fit_head(
        cfg,
        pipeline,
        &dataset.world,
        &data,
        HeadKind::GpsRegression,
        &gps_targets(&data.sets.0, &bounds),
        &gps_targets(&data.sets.1, &bounds),
        mode,
    )?;
    let pred_coords: Vec<(f64, f64)> = gps_pred.iter().map(|p| denorm(&bounds, p[0], p[1])).collect();
    let truth_coords: Vec<(f64, f64)> = data.sets.2.withheld.iter().map(|p| (p.lng, p.lat)).collect();
    let gps = gps_metrics(&pred_coords, &truth_coords);

    // road-segment variant (fresh pipeline state for fine-tune fairness is
    // not required; the heads are independent)
    let road_t = |set: &PredictionSet| {
        HeadTargets::Road(set.withheld.iter().map(|p| p.road as usize).collect())
    };
    let road_pred = fit_head(
        cfg,
        pipeline,
        &dataset.world,
        &data,
        HeadKind::RoadClassification { classes },
        &road_t(&data.sets.0),
        &road_t(&data.sets.1),
        mode,
    )?;
    let truth_roads: Vec<usize> = data.sets.2.withheld.iter().map(|p| p.road as usize).collect();
    let road = road_metrics(&road_pred, &truth_roads);

    // majority-class baseline from training labels, scored on test
    let mut counts = std::collections::BTreeMap::new();
    for p in &data.sets.0.withheld {
        *counts.entry(p.road).or_insert(0usize) += 1;
    }
    let majority = counts
        .iter()
        .max_by_key(|(_, c)| **c)
        .map(|(r, _)| *r)
        .unwrap_or(0);
    let baseline_acc1 =
        truth_roads.iter().filter(|&&r| r == majority as usize).count() as f64
            / truth_roads.len() as f64;

    Ok(json!({
        "gps": gps,
        "road": road,
        "road_majority_baseline_acc1": baseline_acc1,
        "test_examples": truth_roads.len(),
    }))
}

fn eval_ate<F: Real>(
    cfg: &RunConfig,
    pipeline: &mut StudentPipeline<F>,
    dataset: &crate::data::Dataset,
    mode: EvalMode,
) -> CliResult<serde_json::Value> {
    let data = prepare_task_data(cfg, pipeline, dataset, mode)?;
    // remaining travel time from the last observed point, in minutes
    let targets = |set: &PredictionSet| {
        HeadTargets::Time(
            set.trajs
                .iter()
                .zip(&set.withheld)
                .map(|(t, w)| (w.t - t.destination().t) as f64 / 60.0)
                .collect(),
        )
    };
    let pred = fit_head(
        cfg,
        pipeline,
        &dataset.world,
        &data,
        HeadKind::ArrivalTime,
        &targets(&data.sets.0),
        &targets(&data.sets.1),
        mode,
    )?;
    let pred_s: Vec<f64> = pred.iter().map(|p| p[0] * 60.0).collect();
    let truth_s: Vec<f64> = data
        .sets
        .2
        .trajs
        .iter()
        .zip(&data.sets.2.withheld)
        .map(|(t, w)| (w.t - t.destination().t) as f64)
        .collect();
    let time = time_metrics(&pred_s, &truth_s);
    Ok(json!({
        "time": time,
        "test_examples": truth_s.len(),
    }))
}

fn eval_sts<F: Real>(
    cfg: &RunConfig,
    pipeline: &StudentPipeline<F>,
    dataset: &crate::data::Dataset,
) -> CliResult<serde_json::Value> {
    // the database pool is the test split plus the optional extra pool
    let mut pool = dataset.test.clone();
    pool.extend(dataset.sts_pool.iter().cloned());
    let labels = sts_build_labels(&pool, &cfg.sts(), cfg.seed)?;

    let scan = cfg.scan()?;
    let pool_emb = embed_trajectories(
        pipeline,
        &dataset.world,
        &pool,
        &cfg.filter(),
        scan,
        cfg.workers,
    )?;
    let emb_by_id: std::collections::HashMap<u64, Vec<f64>> = pool
        .iter()
        .zip(&pool_emb)
        .map(|(t, e)| (t.id, e.iter().map(|v| v.as_f64()).collect()))
        .collect();

    let mut ranks = Vec::with_capacity(labels.len());
    let mut non_self = 0usize;
    for inst in &labels {
        let (q_emb, _) = pipeline.embed(&dataset.world, &inst.query, &cfg.filter(), scan)?;
        let q: Vec<f64> = q_emb.iter().map(|v| v.as_f64()).collect();
        let (t_emb, _) = pipeline.embed(&dataset.world, &inst.target, &cfg.filter(), scan)?;
        let t: Vec<f64> = t_emb.iter().map(|v| v.as_f64()).collect();

        const TARGET_MARKER: u64 = u64::MAX;
        let mut db: Vec<(u64, Vec<f64>)> = vec![(TARGET_MARKER, t)];
        for nid in &inst.negative_ids {
            db.push((*nid, emb_by_id[nid].clone()));
        }
        let ranked = sts_search(&q, &db);
        let rank = ranked
            .iter()
            .position(|&id| id == TARGET_MARKER)
            .expect("target in database")
            + 1;
        ranks.push(rank);
        non_self += (!inst.self_similar) as usize;
    }
    let rank = rank_metrics(&ranks);
    Ok(json!({
        "ranking": rank,
        "queries": ranks.len(),
        "negatives_per_query": cfg.tasks_sts_negatives,
        "non_self_similar_fraction": non_self as f64 / ranks.len().max(1) as f64,
    }))
}
