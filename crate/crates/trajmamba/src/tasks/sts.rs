//! Similar-trajectory-search label construction and cosine search.

use crate::error::TrajError;
use crate::trajdata::{dtw_distance, haversine, Trajectory};
use crate::Result;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct StsConfig {
    /// Number of query trajectories to label.
    pub query_count: usize,
    /// Database negatives per query.
    pub negatives: usize,
    /// Negatives must have both OD endpoints at least this far (meters)
    /// from the query's.
    pub od_exclusion_m: f64,
    /// Required fraction of instances whose target is a real candidate
    /// rather than the query's own odd/even split.
    pub min_non_self_fraction: f64,
}

impl Default for StsConfig {
    fn default() -> Self {
        StsConfig {
            query_count: 1000,
            negatives: 5000,
            od_exclusion_m: 500.0,
            min_non_self_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StsInstance {
    pub query: Trajectory,
    pub target: Trajectory,
    /// Trajectory ids of database negatives (drawn from the test pool).
    pub negative_ids: Vec<u64>,
    /// True when query/target are the odd/even halves of one trajectory.
    pub self_similar: bool,
}

fn gps_seq(t: &Trajectory) -> Vec<(f64, f64)> {
    t.points.iter().map(|p| (p.lng, p.lat)).collect()
}

fn road_set(t: &Trajectory) -> BTreeSet<u32> {
    t.points.iter().map(|p| p.road).collect()
}

/// Count of road segments present in exactly one of the two trajectories.
fn seg_difference(a: &Trajectory, b: &Trajectory) -> usize {
    road_set(a).symmetric_difference(&road_set(b)).count()
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// Labels similarity-search instances over the test pool.
///
/// Per query: candidates are the same-OD test trajectories (OD equality by
/// first/last road segment ids). Each candidate's difference from the
/// query combines DTW over GPS with the count of differing road segments,
/// both min-max normalized over the candidate set plus the query's own
/// odd/even benchmark pair. A candidate at or below the benchmark becomes
/// the target; otherwise the odd/even halves form a self-pair. Negatives
/// are test trajectories whose OD endpoints both lie at least
/// `od_exclusion_m` from the query's.
pub fn sts_build_labels(
    test: &[Trajectory],
    cfg: &StsConfig,
    seed: u64,
) -> Result<Vec<StsInstance>> {
    if test.is_empty() {
        return Err(TrajError::InsufficientPool {
            required: 1,
            available: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(cfg.query_count.min(test.len()));

    let mut instances = Vec::with_capacity(order.len());
    let mut non_self = 0usize;
    for &qi in &order {
        let q = &test[qi];
        let (q_orig, q_dest) = (q.origin().road, q.destination().road);

        let candidates: Vec<usize> = (0..test.len())
            .filter(|&i| i != qi)
            .filter(|&i| {
                test[i].origin().road == q_orig && test[i].destination().road == q_dest
            })
            .collect();

        let odd = q.subsequence(true, q.id);
        let even = q.subsequence(false, q.id);

        let (target, self_similar) = if candidates.is_empty() {
            (None, true)
        } else {
            let q_gps = gps_seq(q);
            let mut dtws: Vec<f64> = candidates
                .iter()
                .map(|&i| dtw_distance(&q_gps, &gps_seq(&test[i])))
                .collect();
            let mut segs: Vec<f64> = candidates
                .iter()
                .map(|&i| seg_difference(q, &test[i]) as f64)
                .collect();
            // benchmark enters the normalization pool so scores compare
            dtws.push(dtw_distance(&gps_seq(&odd), &gps_seq(&even)));
            segs.push(seg_difference(&odd, &even) as f64);
            let ndtw = min_max_normalize(&dtws);
            let nseg = min_max_normalize(&segs);
            let scores: Vec<f64> = ndtw.iter().zip(&nseg).map(|(a, b)| a + b).collect();
            let bench = scores[scores.len() - 1];
            let best = (0..candidates.len())
                .min_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
                .expect("non-empty candidates");
            // ties prefer the real candidate
            if scores[best] <= bench {
                (Some(candidates[best]), false)
            } else {
                (None, true)
            }
        };

        let (query, target_traj) = match target {
            Some(ti) => (q.clone(), test[ti].clone()),
            None => (odd, even),
        };
        if !self_similar {
            non_self += 1;
        }

        let target_id = target.map(|ti| test[ti].id);
        let mut eligible: Vec<u64> = test
            .iter()
            .filter(|t| t.id != q.id && Some(t.id) != target_id)
            .filter(|t| {
                let d_o = haversine(
                    (t.origin().lng, t.origin().lat),
                    (q.origin().lng, q.origin().lat),
                );
                let d_d = haversine(
                    (t.destination().lng, t.destination().lat),
                    (q.destination().lng, q.destination().lat),
                );
                d_o >= cfg.od_exclusion_m && d_d >= cfg.od_exclusion_m
            })
            .map(|t| t.id)
            .collect();
        if eligible.len() < cfg.negatives {
            return Err(TrajError::InsufficientPool {
                required: cfg.negatives,
                available: eligible.len(),
            });
        }
        eligible.shuffle(&mut rng);
        eligible.truncate(cfg.negatives);

        instances.push(StsInstance {
            query,
            target: target_traj,
            negative_ids: eligible,
            self_similar: target.is_none(),
        });
    }

    let frac = non_self as f64 / instances.len().max(1) as f64;
    if frac < cfg.min_non_self_fraction {
        return Err(TrajError::Data(format!(
            "only {:.1}% of similarity instances are non-self-similar (need >= {:.1}%); raise the generator's od_share/duplicate_share",
            100.0 * frac,
            100.0 * cfg.min_non_self_fraction
        )));
    }
    Ok(instances)
}

/// Ranks database ids by descending cosine similarity to the query
/// embedding, ties broken by ascending id.
pub fn sts_search(query: &[f64], database: &[(u64, Vec<f64>)]) -> Vec<u64> {
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, u64)> = database
        .iter()
        .map(|(id, emb)| {
            let dot: f64 = query.iter().zip(emb).map(|(a, b)| a * b).sum();
            let en = emb.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = if qn > 0.0 && en > 0.0 { dot / (qn * en) } else { -1.0 };
            (cos, *id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}
