//! Rule-based preprocessing (explicit-redundancy removal) and the two
//! geometric compression baselines.

use super::features::segment_speeds;
use super::geo::cross_track_distance;
use super::types::Trajectory;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    /// Segments slower than this (m/s) count as vehicle stops.
    pub stop_speed: f64,
    /// Same-road runs whose segment-speed spread stays below this (m/s)
    /// count as steady pace.
    pub steady_speed_range: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            stop_speed: 0.5,
            steady_speed_range: 0.5,
        }
    }
}

/// Drops intermediate points of vehicle stops and of steady-pace runs on a
/// single road segment, keeping the first and last point of each run.
/// Origin and destination always survive. Iterates to a fixpoint, so the
/// operation is idempotent.
pub fn filter_explicit_redundancy(traj: &Trajectory, cfg: &FilterConfig) -> Result<Trajectory> {
    let mut current = traj.clone();
    loop {
        let next = filter_pass(&current, cfg)?;
        if next.points.len() == current.points.len() {
            return Ok(next);
        }
        current = next;
    }
}

fn filter_pass(traj: &Trajectory, cfg: &FilterConfig) -> Result<Trajectory> {
    let n = traj.points.len();
    if n <= 2 {
        return Ok(traj.clone());
    }
    let speeds = segment_speeds(traj)?;
    let mut drop = vec![false; n];

    // stop runs: maximal chains of consecutive segments below stop_speed
    let mut i = 0;
    while i < speeds.len() {
        if speeds[i] < cfg.stop_speed {
            let mut j = i;
            while j + 1 < speeds.len() && speeds[j + 1] < cfg.stop_speed {
                j += 1;
            }
            // segments i..=j span points i..=j+1; drop the interior
            for p in drop.iter_mut().take(j + 1).skip(i + 1) {
                *p = true;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    // steady-pace runs: maximal same-road point runs with a small
    // segment-speed spread
    let mut i = 0;
    while i < n {
        let road = traj.points[i].road;
        let mut j = i;
        while j + 1 < n && traj.points[j + 1].road == road {
            j += 1;
        }
        if j > i + 1 {
            let seg = &speeds[i..j];
            let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < cfg.steady_speed_range {
                for p in drop.iter_mut().take(j).skip(i + 1) {
                    *p = true;
                }
            }
        }
        i = j + 1;
    }

    drop[0] = false;
    drop[n - 1] = false;
    let points = traj
        .points
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(p, _)| *p)
        .collect();
    Ok(Trajectory {
        id: traj.id,
        points,
    })
}

/// Classic recursive simplification with great-circle cross-track
/// deviation; endpoints always kept. `epsilon = 0` keeps every point.
pub fn douglas_peucker(traj: &Trajectory, epsilon: f64) -> Trajectory {
    let n = traj.points.len();
    if n <= 2 {
        return traj.clone();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    dp_recurse(traj, 0, n - 1, epsilon, &mut keep);
    let points = traj
        .points
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    Trajectory {
        id: traj.id,
        points,
    }
}

fn dp_recurse(traj: &Trajectory, lo: usize, hi: usize, epsilon: f64, keep: &mut [bool]) {
    if hi <= lo + 1 {
        return;
    }
    let a = (traj.points[lo].lng, traj.points[lo].lat);
    let b = (traj.points[hi].lng, traj.points[hi].lat);
    let mut best = 0.0;
    let mut best_i = lo;
    for i in lo + 1..hi {
        let d = cross_track_distance((traj.points[i].lng, traj.points[i].lat), a, b);
        if d > best {
            best = d;
            best_i = i;
        }
    }
    if best >= epsilon {
        keep[best_i] = true;
        dp_recurse(traj, lo, best_i, epsilon, keep);
        dp_recurse(traj, best_i, hi, epsilon, keep);
    }
}

/// Keeps the endpoints plus evenly spaced interior points, for a total of
/// `round(ratio * n)` points (at least 2).
pub fn downsample(traj: &Trajectory, ratio: f64) -> Result<Trajectory> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(crate::TrajError::Config(format!(
            "downsample ratio must be in (0, 1], got {ratio}"
        )));
    }
    let n = traj.points.len();
    let m = ((ratio * n as f64).round() as usize).clamp(2.min(n), n);
    if m >= n {
        return Ok(traj.clone());
    }
    let mut points = Vec::with_capacity(m);
    for k in 0..m {
        let idx = ((k as f64) * (n - 1) as f64 / (m - 1) as f64).round() as usize;
        points.push(traj.points[idx]);
    }
    points.dedup_by_key(|p| p.t);
    Ok(Trajectory {
        id: traj.id,
        points,
    })
}
