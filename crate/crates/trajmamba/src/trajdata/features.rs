//! Per-point feature extraction and the latent embedding pipeline that
//! produces the GPS / road input sequences and movement features.

use super::geo::{bearing, haversine};
use super::types::{Bounds, Trajectory};
use crate::error::TrajError;
use crate::Result;
use gradcore::{init, ParamId, ParamStore, Real, Tape, TensorRef};
use rand_chacha::ChaCha8Rng;

/// Per-trajectory latent inputs: GPS latents, road latents, and the
/// min-max-normalized movement features (speed, acceleration, angle).
#[derive(Debug, Clone, Copy)]
pub struct FeatureBundle {
    pub z_g: TensorRef,
    pub z_r: TensorRef,
    pub s: TensorRef,
    pub len: usize,
}

/// Speed, acceleration, and movement angle per point.
///
/// Conventions: speed and angle at point i are forward differences from
/// point i to i+1; acceleration at i is the forward difference of speeds
/// where both are defined and 0 at the last interior point. The angle is
/// bearing / 2pi. Each column is then min-max normalized over the
/// trajectory (a constant column becomes all zeros) and the last row is
/// set to zero.
pub fn compute_movement_features(traj: &Trajectory) -> Result<Vec<[f64; 3]>> {
    let n = traj.points.len();
    if n < 2 {
        return Err(TrajError::InvalidTrajectory(format!(
            "movement features need >= 2 points, got {n}"
        )));
    }
    let pts = &traj.points;
    let mut speed = vec![0.0; n - 1];
    let mut angle = vec![0.0; n - 1];
    for i in 0..n - 1 {
        let dt = (pts[i + 1].t - pts[i].t) as f64;
        if dt <= 0.0 {
            return Err(TrajError::InvalidTrajectory(format!(
                "non-positive time delta at point {i}"
            )));
        }
        let a = (pts[i].lng, pts[i].lat);
        let b = (pts[i + 1].lng, pts[i + 1].lat);
        speed[i] = haversine(a, b) / dt;
        angle[i] = bearing(a, b) / std::f64::consts::TAU;
    }
    let mut accel = vec![0.0; n - 1];
    for i in 0..n.saturating_sub(2) {
        if i + 1 < n - 1 {
            let dt = (pts[i + 1].t - pts[i].t) as f64;
            accel[i] = (speed[i + 1] - speed[i]) / dt;
        }
    }

    let minmax = |col: &mut [f64]| {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in col.iter_mut() {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    };
    minmax(&mut speed);
    minmax(&mut accel);
    minmax(&mut angle);

    let mut rows = Vec::with_capacity(n);
    for i in 0..n - 1 {
        rows.push([speed[i], accel[i], angle[i]]);
    }
    rows.push([0.0, 0.0, 0.0]);
    Ok(rows)
}

/// Raw (pre-normalization) speed of each segment i -> i+1, used by the
/// redundancy filter.
pub fn segment_speeds(traj: &Trajectory) -> Result<Vec<f64>> {
    let n = traj.points.len();
    if n < 2 {
        return Err(TrajError::InvalidTrajectory(
            "segment speeds need >= 2 points".into(),
        ));
    }
    let pts = &traj.points;
    let mut out = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let dt = (pts[i + 1].t - pts[i].t) as f64;
        if dt <= 0.0 {
            return Err(TrajError::InvalidTrajectory(format!(
                "non-positive time delta at point {i}"
            )));
        }
        out.push(haversine(
            (pts[i].lng, pts[i].lat),
            (pts[i + 1].lng, pts[i + 1].lat),
        ) / dt);
    }
    Ok(out)
}

/// The five per-point time features: (dt minutes from departure,
/// minute-of-day, day-in-week, hour-in-day, minute-in-hour).
pub fn time_features(traj: &Trajectory) -> Vec<[f64; 5]> {
    let t0 = traj.points[0].t;
    traj.points
        .iter()
        .map(|p| {
            let dt_min = (p.t - t0) as f64 / 60.0;
            let secs_of_day = p.t.rem_euclid(86_400);
            let tod_min = secs_of_day as f64 / 60.0;
            let dow = (p.t.div_euclid(86_400) + 4).rem_euclid(7) as f64;
            let hod = (secs_of_day / 3_600) as f64;
            let moh = ((secs_of_day % 3_600) / 60) as f64;
            [dt_min, tod_min, dow, hod, moh]
        })
        .collect()
}

/// Learnable Fourier features: `[sin(v f_1..K), cos(v f_1..K)]`.
pub fn fourier_time_encode<F: Real>(
    tape: &mut Tape<F>,
    values: TensorRef,
    freqs: TensorRef,
) -> Result<TensorRef> {
    let phase = tape.matmul(values, freqs)?;
    let s = tape.sin(phase)?;
    let c = tape.cos(phase)?;
    Ok(tape.concat_cols(&[s, c])?)
}

/// All learnable parameters of the point-feature embedder.
#[derive(Debug, Clone)]
pub struct FeatureEmbedderWeights {
    pub gps_w: ParamId,
    pub gps_b: ParamId,
    pub road_table: ParamId,
    pub road_w: ParamId,
    pub road_b: ParamId,
    pub freq_dt: ParamId,
    pub freq_tod: ParamId,
    pub freq_dow: ParamId,
    pub freq_hod: ParamId,
    pub freq_moh: ParamId,
    pub dur_w: ParamId,
    pub dur_b: ParamId,
    pub cyc_w: ParamId,
    pub cyc_b: ParamId,
    pub half_dim: usize,
    pub fourier_freqs: usize,
}

impl FeatureEmbedderWeights {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        embed_dim: usize,
        road_count: usize,
        road_embed_dim: usize,
        fourier_freqs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let half = embed_dim / 2;
        let k = fourier_freqs;
        // one period across each feature's natural range
        let freq_sigma = |range: f64| std::f64::consts::TAU / range;
        let reg = |store: &mut ParamStore<F>, name: String, t| -> Result<ParamId> {
            Ok(store.register(name, t, true)?)
        };
        Ok(FeatureEmbedderWeights {
            gps_w: reg(store, format!("{prefix}.gps.w"), init::linear_weight(2, half, rng))?,
            gps_b: reg(store, format!("{prefix}.gps.b"), init::linear_bias(2, half, rng))?,
            road_table: reg(
                store,
                format!("{prefix}.road.table"),
                init::normal(vec![road_count, road_embed_dim], 0.0, 1.0, rng),
            )?,
            road_w: reg(
                store,
                format!("{prefix}.road.w"),
                init::linear_weight(road_embed_dim, half, rng),
            )?,
            road_b: reg(
                store,
                format!("{prefix}.road.b"),
                init::linear_bias(road_embed_dim, half, rng),
            )?,
            freq_dt: reg(
                store,
                format!("{prefix}.fourier.dt"),
                init::normal(vec![1, k], 0.0, freq_sigma(60.0), rng),
            )?,
            freq_tod: reg(
                store,
                format!("{prefix}.fourier.tod"),
                init::normal(vec![1, k], 0.0, freq_sigma(1440.0), rng),
            )?,
            freq_dow: reg(
                store,
                format!("{prefix}.fourier.dow"),
                init::normal(vec![1, k], 0.0, freq_sigma(7.0), rng),
            )?,
            freq_hod: reg(
                store,
                format!("{prefix}.fourier.hod"),
                init::normal(vec![1, k], 0.0, freq_sigma(24.0), rng),
            )?,
            freq_moh: reg(
                store,
                format!("{prefix}.fourier.moh"),
                init::normal(vec![1, k], 0.0, freq_sigma(60.0), rng),
            )?,
            dur_w: reg(
                store,
                format!("{prefix}.dur.w"),
                init::linear_weight(4 * k, half, rng),
            )?,
            dur_b: reg(store, format!("{prefix}.dur.b"), init::linear_bias(4 * k, half, rng))?,
            cyc_w: reg(
                store,
                format!("{prefix}.cyc.w"),
                init::linear_weight(6 * k, half, rng),
            )?,
            cyc_b: reg(store, format!("{prefix}.cyc.b"), init::linear_bias(6 * k, half, rng))?,
            half_dim: half,
            fourier_freqs: k,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundEmbedder> {
        Ok(BoundEmbedder {
            gps_w: tape.param(store, self.gps_w)?,
            gps_b: tape.param(store, self.gps_b)?,
            road_table: tape.param(store, self.road_table)?,
            road_w: tape.param(store, self.road_w)?,
            road_b: tape.param(store, self.road_b)?,
            freq_dt: tape.param(store, self.freq_dt)?,
            freq_tod: tape.param(store, self.freq_tod)?,
            freq_dow: tape.param(store, self.freq_dow)?,
            freq_hod: tape.param(store, self.freq_hod)?,
            freq_moh: tape.param(store, self.freq_moh)?,
            dur_w: tape.param(store, self.dur_w)?,
            dur_b: tape.param(store, self.dur_b)?,
            cyc_w: tape.param(store, self.cyc_w)?,
            cyc_b: tape.param(store, self.cyc_b)?,
        })
    }
}

/// Tape-bound embedder parameters, reusable across trajectories in a batch.
#[derive(Debug, Clone, Copy)]
pub struct BoundEmbedder {
    gps_w: TensorRef,
    gps_b: TensorRef,
    road_table: TensorRef,
    road_w: TensorRef,
    road_b: TensorRef,
    freq_dt: TensorRef,
    freq_tod: TensorRef,
    freq_dow: TensorRef,
    freq_hod: TensorRef,
    freq_moh: TensorRef,
    dur_w: TensorRef,
    dur_b: TensorRef,
    cyc_w: TensorRef,
    cyc_b: TensorRef,
}

/// Builds the latent bundle for one trajectory:
/// `z_g = Linear(gps) + Linear(Cat(Fourier(duration features)))` and
/// `z_r = Linear(table[road]) + Linear(Cat(Fourier(cyclic features)))`.
pub fn embed_point_features<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundEmbedder,
    traj: &Trajectory,
    bounds: &Bounds,
) -> Result<FeatureBundle> {
    let n = traj.points.len();
    let (table_rows, _) = tape.dims(bound.road_table);
    for p in &traj.points {
        if (p.road as usize) >= table_rows {
            return Err(TrajError::UnknownRoad(p.road));
        }
    }

    let mut gps = Vec::with_capacity(n * 2);
    for p in &traj.points {
        gps.push(F::from_f64(bounds.norm_lng(p.lng)));
        gps.push(F::from_f64(bounds.norm_lat(p.lat)));
    }
    let gps = tape.leaf_vec(n, 2, gps)?;
    let gps_path = tape.linear(gps, bound.gps_w, Some(bound.gps_b))?;

    let tf = time_features(traj);
    let col = |tape: &mut Tape<F>, k: usize| -> Result<TensorRef> {
        let v: Vec<F> = tf.iter().map(|r| F::from_f64(r[k])).collect();
        Ok(tape.leaf_vec(n, 1, v)?)
    };

    let dt = col(tape, 0)?;
    let tod = col(tape, 1)?;
    let f_dt = fourier_time_encode(tape, dt, bound.freq_dt)?;
    let f_tod = fourier_time_encode(tape, tod, bound.freq_tod)?;
    let dur_cat = tape.concat_cols(&[f_dt, f_tod])?;
    let dur_path = tape.linear(dur_cat, bound.dur_w, Some(bound.dur_b))?;
    let z_g = tape.add(gps_path, dur_path)?;

    let road_idx: Vec<usize> = traj.points.iter().map(|p| p.road as usize).collect();
    let road_rows = tape.gather_rows(bound.road_table, &road_idx)?;
    let road_path = tape.linear(road_rows, bound.road_w, Some(bound.road_b))?;

    let dow = col(tape, 2)?;
    let hod = col(tape, 3)?;
    let moh = col(tape, 4)?;
    let f_dow = fourier_time_encode(tape, dow, bound.freq_dow)?;
    let f_hod = fourier_time_encode(tape, hod, bound.freq_hod)?;
    let f_moh = fourier_time_encode(tape, moh, bound.freq_moh)?;
    let cyc_cat = tape.concat_cols(&[f_dow, f_hod, f_moh])?;
    let cyc_path = tape.linear(cyc_cat, bound.cyc_w, Some(bound.cyc_b))?;
    let z_r = tape.add(road_path, cyc_path)?;

    let movement = compute_movement_features(traj)?;
    let mut s_data = Vec::with_capacity(n * 3);
    for row in &movement {
        for v in row {
            s_data.push(F::from_f64(*v));
        }
    }
    let s = tape.leaf_vec(n, 3, s_data)?;

    Ok(FeatureBundle { z_g, z_r, s, len: n })
}
