//! Downstream tasks: destination prediction, arrival-time estimation, and
//! similar trajectory search.

pub mod heads;
pub mod metrics;
pub mod sts;

pub use heads::{
    head_forward, head_loss, predict, train_head_finetune, train_head_frozen, BoundHeadNet,
    HeadKind, HeadTargets, HeadTrainConfig, HeadWeights,
};
pub use metrics::{
    gps_metrics, rank_metrics, road_metrics, time_metrics, top_k_indices, GpsMetrics,
    RankMetrics, RoadMetrics, TimeMetrics,
};
pub use sts::{sts_build_labels, sts_search, StsConfig, StsInstance};

use crate::pretrain::{StudentPipeline, World};
use crate::ssmcore::ScanMode;
use crate::trajdata::{FilterConfig, TrajPoint, Trajectory};
use crate::Result;
use gradcore::Real;
use rayon::prelude::*;

/// Omits the last `k` points ahead of destination/arrival prediction.
/// Returns None (skip with warning upstream) when fewer than `k + 2`
/// points remain.
pub fn truncate_for_prediction(traj: &Trajectory, k: usize) -> Option<(Trajectory, TrajPoint)> {
    if traj.points.len() < k + 2 {
        return None;
    }
    let withheld = *traj.points.last().expect("non-empty");
    let points = traj.points[..traj.points.len() - k].to_vec();
    Some((
        Trajectory {
            id: traj.id,
            points,
        },
        withheld,
    ))
}

/// Embeds trajectories through the student inference pipeline (filter,
/// hard mask, encode) in parallel, preserving order.
pub fn embed_trajectories<F: Real>(
    pipeline: &StudentPipeline<F>,
    world: &World,
    trajs: &[Trajectory],
    filter: &FilterConfig,
    mode: ScanMode,
    workers: usize,
) -> Result<Vec<Vec<F>>> {
    let run = |t: &Trajectory| -> Result<Vec<F>> {
        Ok(pipeline.embed(world, t, filter, mode)?.0)
    };
    if workers == 1 {
        trajs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(if workers == 0 { 0 } else { workers })
            .build()
            .map_err(|e| crate::TrajError::Config(format!("thread pool: {e}")))?;
        pool.install(|| trajs.par_iter().map(run).collect())
    }
}
