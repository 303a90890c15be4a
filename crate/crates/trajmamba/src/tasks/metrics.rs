//! Evaluation metrics for the three downstream tasks.

use crate::trajdata::haversine;
use serde::Serialize;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GpsMetrics {
    pub rmse_m: f64,
    pub mae_m: f64,
}

/// Haversine-distance RMSE/MAE between predicted and true coordinates.
pub fn gps_metrics(pred: &[(f64, f64)], truth: &[(f64, f64)]) -> GpsMetrics {
    assert_eq!(pred.len(), truth.len());
    let dists: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| haversine(*p, *t))
        .collect();
    let n = dists.len().max(1) as f64;
    GpsMetrics {
        rmse_m: (dists.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
        mae_m: dists.iter().sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RoadMetrics {
    pub acc1: f64,
    pub acc5: f64,
    /// Unweighted mean of per-class recall over classes present in truth.
    pub macro_recall: f64,
}

pub fn road_metrics(logits: &[Vec<f64>], truth: &[usize]) -> RoadMetrics {
    assert_eq!(logits.len(), truth.len());
    let n = truth.len().max(1) as f64;
    let mut hit1 = 0usize;
    let mut hit5 = 0usize;
    let mut per_class: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (row, &t) in logits.iter().zip(truth) {
        let top5 = top_k_indices(row, 5);
        let correct1 = top5.first() == Some(&t);
        hit1 += correct1 as usize;
        hit5 += top5.contains(&t) as usize;
        let e = per_class.entry(t).or_insert((0, 0));
        e.1 += 1;
        e.0 += correct1 as usize;
    }
    let macro_recall = per_class
        .values()
        .map(|&(hits, total)| hits as f64 / total as f64)
        .sum::<f64>()
        / per_class.len().max(1) as f64;
    RoadMetrics {
        acc1: hit1 as f64 / n,
        acc5: hit5 as f64 / n,
        macro_recall,
    }
}

/// Indices of the k largest values, ties broken toward the lower index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TimeMetrics {
    pub rmse_s: f64,
    pub mae_s: f64,
    /// Percent; rows with zero truth are excluded.
    pub mape_pct: f64,
}

pub fn time_metrics(pred_s: &[f64], truth_s: &[f64]) -> TimeMetrics {
    assert_eq!(pred_s.len(), truth_s.len());
    let n = truth_s.len().max(1) as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut pe = 0.0;
    let mut pe_count = 0usize;
    for (&p, &t) in pred_s.iter().zip(truth_s) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
        if t != 0.0 {
            pe += (d / t).abs();
            pe_count += 1;
        }
    }
    TimeMetrics {
        rmse_s: (se / n).sqrt(),
        mae_s: ae / n,
        mape_pct: if pe_count > 0 {
            100.0 * pe / pe_count as f64
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RankMetrics {
    pub acc1: f64,
    pub acc5: f64,
    pub mean_rank: f64,
}

/// `ranks` are 1-based ranks of the true target per query.
pub fn rank_metrics(ranks: &[usize]) -> RankMetrics {
    let n = ranks.len().max(1) as f64;
    RankMetrics {
        acc1: ranks.iter().filter(|&&r| r == 1).count() as f64 / n,
        acc5: ranks.iter().filter(|&&r| r <= 5).count() as f64 / n,
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
    }
}
