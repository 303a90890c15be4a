//! Road and POI views: nearest-POI assignment, transition statistics,
//! neighbor-weight attention, textual aggregation with residual update,
//! and the two view encoders.

use super::textembed::TextEmbeddingStore;

use crate::ssmcore::{mamba2_block, BoundMamba2, Mamba2BlockWeights, ScanMode};
use crate::trajdata::{haversine, Poi, RoadNetwork, Trajectory};
use crate::Result;
use gradcore::{init, BnMode, ParamId, ParamStore, Real, Tape, TensorRef};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Per trajectory: the POI closest to each point, ties broken by lowest id.
pub fn nearest_poi(traj: &Trajectory, pois: &[Poi]) -> Vec<u32> {
    assert!(!pois.is_empty(), "nearest_poi needs a non-empty POI set");
    traj.points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, u32::MAX);
            for poi in pois {
                let d = haversine((p.lng, p.lat), (poi.lng, poi.lat));
                if d < best.0 || (d == best.0 && poi.id < best.1) {
                    best = (d, poi.id);
                }
            }
            best.1
        })
        .collect()
}

/// Empirical transition probabilities between consecutive distinct road
/// segments, normalized per source edge.
#[derive(Debug, Clone, Default)]
pub struct TransitionTable {
    probs: BTreeMap<(u32, u32), f64>,
}

impl TransitionTable {
    pub fn build(trajs: &[Trajectory]) -> TransitionTable {
        let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        let mut totals: BTreeMap<u32, u64> = BTreeMap::new();
        for t in trajs {
            for w in t.points.windows(2) {
                if w[0].road != w[1].road {
                    *counts.entry((w[0].road, w[1].road)).or_default() += 1;
                    *totals.entry(w[0].road).or_default() += 1;
                }
            }
        }
        let probs = counts
            .into_iter()
            .map(|((a, b), c)| ((a, b), c as f64 / totals[&a] as f64))
            .collect();
        TransitionTable { probs }
    }

    /// phi_ij; zero for pairs never observed.
    pub fn get(&self, from: u32, to: u32) -> f64 {
        self.probs.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn row_sums(&self) -> BTreeMap<u32, f64> {
        let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(a, _), &p) in &self.probs {
            *sums.entry(a).or_default() += p;
        }
        sums
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ViewConfig {
    /// Scale on the transition-probability side term (road neighbors).
    pub alpha: f64,
    /// Scale on the distance side term (POI neighbors).
    pub beta: f64,
    /// POI neighbor radius in meters.
    pub poi_radius_m: f64,
    /// Keep only this many closest POIs when the radius catches more.
    pub poi_cap: usize,
    pub bn_momentum: f64,
    pub rmsnorm_eps: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            alpha: 1.0,
            beta: 0.5,
            poi_radius_m: 300.0,
            poi_cap: 10,
            bn_momentum: 0.1,
            rmsnorm_eps: 1e-5,
        }
    }
}

// ── Precomputed per-trajectory context ───────────────────────────────

/// Aggregation inputs for one center item: neighbor indices (into the
/// unique-text matrix) plus the data-derived side weights.
#[derive(Debug, Clone)]
pub struct AggSpec {
    pub center: usize,
    pub neighbors: Vec<usize>,
    /// Road: alpha * phi_ij per neighbor. POI: beta * L1-normalized
    /// f(dist) per neighbor, f(d) = exp(-d / max_k d_k) over the capped set.
    pub side: Vec<f64>,
}

/// Everything data-derived that `aggregate_views` needs for one
/// trajectory, so graphs rebuild cheaply every step.
#[derive(Debug, Clone)]
pub struct ViewContext {
    pub n: usize,
    pub road_texts: Vec<Vec<f32>>,
    pub point_road: Vec<usize>,
    pub road_aggs: Vec<AggSpec>,
    pub point_agg_road: Vec<usize>,
    pub poi_texts: Vec<Vec<f32>>,
    pub point_poi: Vec<usize>,
    pub poi_aggs: Vec<AggSpec>,
    pub point_agg_poi: Vec<usize>,
    pub poi_global_ids: Vec<usize>,
    pub w_dest: Vec<f64>,
}

pub fn build_view_context(
    traj: &Trajectory,
    network: &RoadNetwork,
    pois: &[Poi],
    store: &TextEmbeddingStore,
    transitions: &TransitionTable,
    cfg: &ViewConfig,
) -> Result<ViewContext> {
    let n = traj.points.len();

    // road side: unique traversed roads plus their graph neighbors
    let mut road_index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut road_ids: Vec<u32> = Vec::new();
    let intern_road = |id: u32, road_ids: &mut Vec<u32>, road_index: &mut BTreeMap<u32, usize>| {
        *road_index.entry(id).or_insert_with(|| {
            road_ids.push(id);
            road_ids.len() - 1
        })
    };
    let mut point_road = Vec::with_capacity(n);
    for p in &traj.points {
        network.edge(p.road)?;
        point_road.push(intern_road(p.road, &mut road_ids, &mut road_index));
    }
    let traversed: Vec<u32> = {
        let mut seen = std::collections::BTreeSet::new();
        traj.points
            .iter()
            .map(|p| p.road)
            .filter(|&r| seen.insert(r))
            .collect()
    };
    let mut road_aggs = Vec::with_capacity(traversed.len());
    let mut agg_index: BTreeMap<u32, usize> = BTreeMap::new();
    for &road in &traversed {
        let center = intern_road(road, &mut road_ids, &mut road_index);
        let mut neighbors = Vec::new();
        let mut side = Vec::new();
        for &nb in network.neighbors(road) {
            neighbors.push(intern_road(nb, &mut road_ids, &mut road_index));
            side.push(cfg.alpha * transitions.get(road, nb));
        }
        agg_index.insert(road, road_aggs.len());
        road_aggs.push(AggSpec {
            center,
            neighbors,
            side,
        });
    }
    let point_agg_road: Vec<usize> = traj.points.iter().map(|p| agg_index[&p.road]).collect();
    let road_texts = road_ids
        .iter()
        .map(|&id| Ok(store.get(&network.edge(id)?.desc)?.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    // POI side: nearest POI per point, neighbors within the radius
    let nearest = nearest_poi(traj, pois);
    let mut poi_index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut poi_ids: Vec<u32> = Vec::new();
    let intern_poi = |id: u32, poi_ids: &mut Vec<u32>, poi_index: &mut BTreeMap<u32, usize>| {
        *poi_index.entry(id).or_insert_with(|| {
            poi_ids.push(id);
            poi_ids.len() - 1
        })
    };
    let mut point_poi = Vec::with_capacity(n);
    for &pid in &nearest {
        point_poi.push(intern_poi(pid, &mut poi_ids, &mut poi_index));
    }
    let unique_nearest: Vec<u32> = {
        let mut seen = std::collections::BTreeSet::new();
        nearest.iter().copied().filter(|&p| seen.insert(p)).collect()
    };
    let mut poi_aggs = Vec::with_capacity(unique_nearest.len());
    let mut poi_agg_index: BTreeMap<u32, usize> = BTreeMap::new();
    for &pid in &unique_nearest {
        let center_poi = &pois[pid as usize];
        let mut in_radius: Vec<(f64, u32)> = pois
            .iter()
            .filter(|q| q.id != pid)
            .map(|q| {
                (
                    haversine((center_poi.lng, center_poi.lat), (q.lng, q.lat)),
                    q.id,
                )
            })
            .filter(|(d, _)| *d <= cfg.poi_radius_m)
            .collect();
        in_radius.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        in_radius.truncate(cfg.poi_cap);

        // cap first, then take the max over the capped set
        let max_d = in_radius.iter().map(|(d, _)| *d).fold(0.0f64, f64::max);
        let f: Vec<f64> = in_radius
            .iter()
            .map(|(d, _)| {
                if max_d > 0.0 {
                    (-d / max_d).exp()
                } else {
                    1.0
                }
            })
            .collect();
        let mass: f64 = f.iter().sum();
        let side: Vec<f64> = f
            .iter()
            .map(|v| if mass > 0.0 { cfg.beta * v / mass } else { 0.0 })
            .collect();
        let neighbors = in_radius
            .iter()
            .map(|(_, id)| intern_poi(*id, &mut poi_ids, &mut poi_index))
            .collect();
        poi_agg_index.insert(pid, poi_aggs.len());
        poi_aggs.push(AggSpec {
            center: intern_poi(pid, &mut poi_ids, &mut poi_index),
            neighbors,
            side,
        });
    }
    let point_agg_poi: Vec<usize> = nearest.iter().map(|p| poi_agg_index[p]).collect();
    let poi_texts = poi_ids
        .iter()
        .map(|&id| Ok(store.get(&pois[id as usize].desc)?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let poi_global_ids: Vec<usize> = nearest.iter().map(|&p| p as usize).collect();

    // global origin/destination weights: w_d = dt_i / dt_n, w_o = 1 - w_d
    let t0 = traj.points[0].t;
    let span = (traj.points[n - 1].t - t0) as f64;
    let w_dest = traj
        .points
        .iter()
        .map(|p| {
            if span > 0.0 {
                (p.t - t0) as f64 / span
            } else {
                0.0
            }
        })
        .collect();

    Ok(ViewContext {
        n,
        road_texts,
        point_road,
        road_aggs,
        point_agg_road,
        poi_texts,
        point_poi,
        poi_aggs,
        point_agg_poi,
        poi_global_ids,
        w_dest,
    })
}

// ── Weights ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ViewWeights {
    pub road_in_w: ParamId,
    pub road_in_b: ParamId,
    pub poi_in_w: ParamId,
    pub poi_in_b: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub w4: ParamId,
    pub att_w: ParamId,
    pub att_b: ParamId,
    pub att_v: ParamId,
    pub bn_road_gamma: ParamId,
    pub bn_road_beta: ParamId,
    pub bn_road_mean: ParamId,
    pub bn_road_var: ParamId,
    pub bn_poi_gamma: ParamId,
    pub bn_poi_beta: ParamId,
    pub bn_poi_mean: ParamId,
    pub bn_poi_var: ParamId,
    pub poi_id_table: ParamId,
    pub road_blocks: Vec<Mamba2BlockWeights>,
    pub poi_blocks: Vec<Mamba2BlockWeights>,
    pub embed_dim: usize,
}

impl ViewWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        text_dim: usize,
        embed_dim: usize,
        poi_count: usize,
        state: usize,
        heads: usize,
        conv_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let e = embed_dim;
        let mk_blocks = |store: &mut ParamStore<F>, tag: &str, rng: &mut ChaCha8Rng| {
            (0..2)
                .map(|i| {
                    Mamba2BlockWeights::init(
                        store,
                        &format!("{prefix}.{tag}{i}"),
                        e,
                        state,
                        heads,
                        conv_width,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(ViewWeights {
            road_in_w: store.register(
                format!("{prefix}.road_in.w"),
                init::linear_weight(text_dim, e, rng),
                true,
            )?,
            road_in_b: store.register(
                format!("{prefix}.road_in.b"),
                init::linear_bias(text_dim, e, rng),
                true,
            )?,
            poi_in_w: store.register(
                format!("{prefix}.poi_in.w"),
                init::linear_weight(text_dim, e, rng),
                true,
            )?,
            poi_in_b: store.register(
                format!("{prefix}.poi_in.b"),
                init::linear_bias(text_dim, e, rng),
                true,
            )?,
            w1: store.register(format!("{prefix}.w1"), init::linear_weight(e, e, rng), true)?,
            w2: store.register(format!("{prefix}.w2"), init::linear_weight(e, e, rng), true)?,
            w3: store.register(format!("{prefix}.w3"), init::linear_weight(e, e, rng), true)?,
            w4: store.register(format!("{prefix}.w4"), init::linear_weight(e, e, rng), true)?,
            att_w: store.register(
                format!("{prefix}.att.w"),
                init::linear_weight(2 * e, e, rng),
                true,
            )?,
            att_b: store.register(
                format!("{prefix}.att.b"),
                init::linear_bias(2 * e, e, rng),
                true,
            )?,
            att_v: store.register(
                format!("{prefix}.att.v"),
                init::normal(vec![e, 1], 0.0, 1.0 / (e as f64).sqrt(), rng),
                true,
            )?,
            bn_road_gamma: store.register(
                format!("{prefix}.bn_road.gamma"),
                init::full(vec![1, e], 1.0),
                true,
            )?,
            bn_road_beta: store.register(
                format!("{prefix}.bn_road.beta"),
                init::zeros(vec![1, e]),
                true,
            )?,
            bn_road_mean: store.register(
                format!("{prefix}.bn_road.running_mean"),
                init::zeros(vec![1, e]),
                false,
            )?,
            bn_road_var: store.register(
                format!("{prefix}.bn_road.running_var"),
                init::full(vec![1, e], 1.0),
                false,
            )?,
            bn_poi_gamma: store.register(
                format!("{prefix}.bn_poi.gamma"),
                init::full(vec![1, e], 1.0),
                true,
            )?,
            bn_poi_beta: store.register(
                format!("{prefix}.bn_poi.beta"),
                init::zeros(vec![1, e]),
                true,
            )?,
            bn_poi_mean: store.register(
                format!("{prefix}.bn_poi.running_mean"),
                init::zeros(vec![1, e]),
                false,
            )?,
            bn_poi_var: store.register(
                format!("{prefix}.bn_poi.running_var"),
                init::full(vec![1, e], 1.0),
                false,
            )?,
            poi_id_table: store.register(
                format!("{prefix}.poi_id_table"),
                init::normal(vec![poi_count, e], 0.0, 0.1, rng),
                true,
            )?,
            road_blocks: mk_blocks(store, "road_m2_", rng)?,
            poi_blocks: mk_blocks(store, "poi_m2_", rng)?,
            embed_dim: e,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundViews> {
        Ok(BoundViews {
            road_in_w: tape.param(store, self.road_in_w)?,
            road_in_b: tape.param(store, self.road_in_b)?,
            poi_in_w: tape.param(store, self.poi_in_w)?,
            poi_in_b: tape.param(store, self.poi_in_b)?,
            w1: tape.param(store, self.w1)?,
            w2: tape.param(store, self.w2)?,
            w3: tape.param(store, self.w3)?,
            w4: tape.param(store, self.w4)?,
            att_w: tape.param(store, self.att_w)?,
            att_b: tape.param(store, self.att_b)?,
            att_v: tape.param(store, self.att_v)?,
            bn_road_gamma: tape.param(store, self.bn_road_gamma)?,
            bn_road_beta: tape.param(store, self.bn_road_beta)?,
            bn_poi_gamma: tape.param(store, self.bn_poi_gamma)?,
            bn_poi_beta: tape.param(store, self.bn_poi_beta)?,
            poi_id_table: tape.param(store, self.poi_id_table)?,
            road_blocks: self
                .road_blocks
                .iter()
                .map(|b| b.bind(tape, store))
                .collect::<Result<Vec<_>>>()?,
            poi_blocks: self
                .poi_blocks
                .iter()
                .map(|b| b.bind(tape, store))
                .collect::<Result<Vec<_>>>()?,
            bn_road_mean: self.bn_road_mean,
            bn_road_var: self.bn_road_var,
            bn_poi_mean: self.bn_poi_mean,
            bn_poi_var: self.bn_poi_var,
        })
    }
}

pub struct BoundViews {
    pub road_in_w: TensorRef,
    pub road_in_b: TensorRef,
    pub poi_in_w: TensorRef,
    pub poi_in_b: TensorRef,
    pub w1: TensorRef,
    pub w2: TensorRef,
    pub w3: TensorRef,
    pub w4: TensorRef,
    pub att_w: TensorRef,
    pub att_b: TensorRef,
    pub att_v: TensorRef,
    pub bn_road_gamma: TensorRef,
    pub bn_road_beta: TensorRef,
    pub bn_poi_gamma: TensorRef,
    pub bn_poi_beta: TensorRef,
    pub poi_id_table: TensorRef,
    pub road_blocks: Vec<BoundMamba2>,
    pub poi_blocks: Vec<BoundMamba2>,
    pub bn_road_mean: ParamId,
    pub bn_road_var: ParamId,
    pub bn_poi_mean: ParamId,
    pub bn_poi_var: ParamId,
}

/// Attention part of the neighbor weights:
/// `exp(v^T tanh(Linear(cat(z_c, z_j))))`, L1-normalized over the
/// neighbor set. Returns None for an empty neighbor set.
pub fn neighbor_attention<F: Real>(
    tape: &mut Tape<F>,
    views: &BoundViews,
    center: TensorRef,
    neighbors: TensorRef,
) -> Result<Option<TensorRef>> {
    let (k, _e) = tape.dims(neighbors);
    if k == 0 {
        return Ok(None);
    }
    let centers = tape.gather_rows(center, &vec![0; k])?;
    let cat = tape.concat_cols(&[centers, neighbors])?;
    let hidden = tape.linear(cat, views.att_w, Some(views.att_b))?;
    let th = tape.tanh(hidden)?;
    let scores = tape.matmul(th, views.att_v)?;
    let es = tape.exp(scores)?;
    Ok(Some(tape.l1_normalize(es, 0)?))
}

/// Neighbor weights for one center: L1-normalized attention plus the
/// precomputed side term (transition probability or distance weighting).
pub fn neighbor_weights<F: Real>(
    tape: &mut Tape<F>,
    views: &BoundViews,
    center: TensorRef,
    neighbors: TensorRef,
    side: &[f64],
) -> Result<Option<TensorRef>> {
    let att = match neighbor_attention(tape, views, center, neighbors)? {
        Some(a) => a,
        None => return Ok(None),
    };
    let side_col = tape.leaf_vec(side.len(), 1, side.iter().map(|&v| F::from_f64(v)).collect())?;
    Ok(Some(tape.add(att, side_col)?))
}

struct AggSide<'a> {
    in_w: TensorRef,
    in_b: TensorRef,
    w_local: TensorRef,
    w_global: TensorRef,
    texts: &'a [Vec<f32>],
    point_item: &'a [usize],
    aggs: &'a [AggSpec],
    point_agg: &'a [usize],
}

/// Pre-normalization aggregation for one trajectory and one side:
/// returns the W-combined local+global term and the raw per-point text
/// embeddings (the residual path).
fn aggregate_pre<F: Real>(
    tape: &mut Tape<F>,
    views: &BoundViews,
    ctx: &ViewContext,
    side: &AggSide,
) -> Result<(TensorRef, TensorRef)> {
    let n = ctx.n;
    let u = side.texts.len();
    let text_dim = side.texts.first().map_or(0, |v| v.len());
    let mut flat = Vec::with_capacity(u * text_dim);
    for row in side.texts {
        flat.extend(row.iter().map(|&v| F::from_f64(v as f64)));
    }
    let text_mat = tape.leaf_vec(u, text_dim, flat)?;
    let z_u = tape.linear(text_mat, side.in_w, Some(side.in_b))?;

    // local neighbor aggregation per unique center
    let e = tape.dims(z_u).1;
    let mut agg_rows = Vec::with_capacity(side.aggs.len());
    for spec in side.aggs {
        if spec.neighbors.is_empty() {
            agg_rows.push(tape.leaf_vec(1, e, vec![F::zero(); e])?);
            continue;
        }
        let center = tape.gather_rows(z_u, &[spec.center])?;
        let nb = tape.gather_rows(z_u, &spec.neighbors)?;
        let w = neighbor_weights(tape, views, center, nb, &spec.side)?
            .expect("non-empty neighbor set");
        let wt = tape.transpose(w)?;
        agg_rows.push(tape.matmul(wt, nb)?);
    }
    let agg_mat = tape.concat_rows(&agg_rows)?;
    let local = tape.gather_rows(agg_mat, side.point_agg)?;
    let local_term = tape.matmul(local, side.w_local)?;

    // global origin/destination term weighted by elapsed-time fraction
    let w_d: Vec<F> = ctx.w_dest.iter().map(|&v| F::from_f64(v)).collect();
    let w_o: Vec<F> = ctx.w_dest.iter().map(|&v| F::from_f64(1.0 - v)).collect();
    let w_d = tape.leaf_vec(n, 1, w_d)?;
    let w_o = tape.leaf_vec(n, 1, w_o)?;
    let first = tape.gather_rows(z_u, &[side.point_item[0]])?;
    let last = tape.gather_rows(z_u, &[side.point_item[n - 1]])?;
    let g_o = tape.matmul(w_o, first)?;
    let g_d = tape.matmul(w_d, last)?;
    let global = tape.add(g_o, g_d)?;
    let global_term = tape.matmul(global, side.w_global)?;

    let pre = tape.add(local_term, global_term)?;
    let z_points = tape.gather_rows(z_u, side.point_item)?;
    Ok((pre, z_points))
}

#[allow(clippy::too_many_arguments)]
fn aggregate_sides_batch<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    views: &BoundViews,
    ctxs: &[&ViewContext],
    mk_side: impl Fn(&ViewContext) -> AggSide,
    bn: (TensorRef, TensorRef, ParamId, ParamId),
    cfg: &ViewConfig,
    bn_mode: BnMode,
    residual: bool,
) -> Result<Vec<TensorRef>> {
    let mut pres = Vec::with_capacity(ctxs.len());
    let mut residuals = Vec::with_capacity(ctxs.len());
    for ctx in ctxs {
        let side = mk_side(ctx);
        let (pre, z_points) = aggregate_pre(tape, views, ctx, &side)?;
        pres.push(pre);
        residuals.push(z_points);
    }
    // one normalization over every point of the batch, so running
    // statistics match what evaluation mode will see
    let stacked = tape.concat_rows(&pres)?;
    let normed = tape.batch_norm(
        stacked,
        bn.0,
        bn.1,
        store,
        bn.2,
        bn.3,
        cfg.bn_momentum,
        1e-5,
        bn_mode,
    )?;
    let act = tape.relu(normed)?;
    let mut out = Vec::with_capacity(ctxs.len());
    let mut row = 0;
    for (ctx, z_points) in ctxs.iter().zip(residuals) {
        let slice = tape.slice_rows(act, row, row + ctx.n)?;
        row += ctx.n;
        out.push(if residual {
            tape.add(z_points, slice)?
        } else {
            slice
        });
    }
    Ok(out)
}

/// Builds the updated textual sequences for every trajectory of a batch,
/// normalizing across the whole batch. The POI side also adds the per-POI
/// learnable index embedding. `residual = false` is the ablation hook that
/// drops the raw-text residual path.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_views_batch<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    views: &BoundViews,
    ctxs: &[&ViewContext],
    cfg: &ViewConfig,
    bn_mode: BnMode,
    residual: bool,
) -> Result<Vec<(TensorRef, TensorRef)>> {
    let road_seqs = aggregate_sides_batch(
        tape,
        store,
        views,
        ctxs,
        |ctx| AggSide {
            in_w: views.road_in_w,
            in_b: views.road_in_b,
            w_local: views.w1,
            w_global: views.w2,
            texts: &ctx.road_texts,
            point_item: &ctx.point_road,
            aggs: &ctx.road_aggs,
            point_agg: &ctx.point_agg_road,
        },
        (
            views.bn_road_gamma,
            views.bn_road_beta,
            views.bn_road_mean,
            views.bn_road_var,
        ),
        cfg,
        bn_mode,
        residual,
    )?;

    let poi_bases = aggregate_sides_batch(
        tape,
        store,
        views,
        ctxs,
        |ctx| AggSide {
            in_w: views.poi_in_w,
            in_b: views.poi_in_b,
            w_local: views.w3,
            w_global: views.w4,
            texts: &ctx.poi_texts,
            point_item: &ctx.point_poi,
            aggs: &ctx.poi_aggs,
            point_agg: &ctx.point_agg_poi,
        },
        (
            views.bn_poi_gamma,
            views.bn_poi_beta,
            views.bn_poi_mean,
            views.bn_poi_var,
        ),
        cfg,
        bn_mode,
        residual,
    )?;

    let mut out = Vec::with_capacity(ctxs.len());
    for ((ctx, road), poi_base) in ctxs.iter().zip(road_seqs).zip(poi_bases) {
        let id_rows = tape.gather_rows(views.poi_id_table, &ctx.poi_global_ids)?;
        let poi_seq = tape.add(poi_base, id_rows)?;
        out.push((road, poi_seq));
    }
    Ok(out)
}

/// Single-trajectory convenience over [`aggregate_views_batch`].
#[allow(clippy::too_many_arguments)]
pub fn aggregate_views<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    views: &BoundViews,
    ctx: &ViewContext,
    cfg: &ViewConfig,
    bn_mode: BnMode,
    residual: bool,
) -> Result<(TensorRef, TensorRef)> {
    let mut out = aggregate_views_batch(tape, store, views, &[ctx], cfg, bn_mode, residual)?;
    Ok(out.pop().expect("one context"))
}

/// Each sequence through its own 2-block stack, then mean pooling.
pub fn encode_views<F: Real>(
    tape: &mut Tape<F>,
    views: &BoundViews,
    road_seq: TensorRef,
    poi_seq: TensorRef,
    mode: ScanMode,
    rmsnorm_eps: f64,
) -> Result<(TensorRef, TensorRef)> {
    let mut road = road_seq;
    for b in &views.road_blocks {
        road = mamba2_block(tape, road, b, mode, rmsnorm_eps)?;
    }
    let mut poi = poi_seq;
    for b in &views.poi_blocks {
        poi = mamba2_block(tape, poi, b, mode, rmsnorm_eps)?;
    }
    let z_road = tape.mean_axis0(road)?;
    let z_poi = tape.mean_axis0(poi)?;
    Ok((z_road, z_poi))
}

/// Unique description set of a world (roads then POIs), for store priming.
pub fn world_descriptions(network: &RoadNetwork, pois: &[Poi]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for e in &network.edges {
        if seen.insert(e.desc.clone()) {
            out.push(e.desc.clone());
        }
    }
    for p in pois {
        if seen.insert(p.desc.clone()) {
            out.push(p.desc.clone());
        }
    }
    out
}
