//! Fully connected prediction heads and their training loops (frozen
//! embeddings or fine-tuned encoder).

use crate::pretrain::StudentPipeline;
use crate::ssmcore::{encode_bundle, ScanMode};
use crate::trajdata::{embed_point_features, Trajectory};
use crate::pretrain::World;
use crate::Result;
use gradcore::{init, AdamConfig, AdamState, ParamId, ParamStore, Real, Tape, Tensor, TensorRef};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Two outputs: normalized destination lng/lat, MSE loss.
    GpsRegression,
    /// Road-segment classification over `classes` logits, cross-entropy.
    RoadClassification { classes: usize },
    /// One output: remaining minutes, MSE loss.
    ArrivalTime,
}

impl HeadKind {
    pub fn out_dim(&self) -> usize {
        match self {
            HeadKind::GpsRegression => 2,
            HeadKind::RoadClassification { classes } => *classes,
            HeadKind::ArrivalTime => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub kind: HeadKind,
}

impl HeadWeights {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        embed_dim: usize,
        hidden: usize,
        kind: HeadKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let out = kind.out_dim();
        Ok(HeadWeights {
            w1: store.register(
                format!("{prefix}.w1"),
                init::linear_weight(embed_dim, hidden, rng),
                true,
            )?,
            b1: store.register(format!("{prefix}.b1"), init::linear_bias(embed_dim, hidden, rng), true)?,
            w2: store.register(
                format!("{prefix}.w2"),
                init::linear_weight(hidden, out, rng),
                true,
            )?,
            b2: store.register(format!("{prefix}.b2"), init::linear_bias(hidden, out, rng), true)?,
            kind,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundHeadNet> {
        Ok(BoundHeadNet {
            w1: tape.param(store, self.w1)?,
            b1: tape.param(store, self.b1)?,
            w2: tape.param(store, self.w2)?,
            b2: tape.param(store, self.b2)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHeadNet {
    w1: TensorRef,
    b1: TensorRef,
    w2: TensorRef,
    b2: TensorRef,
}

pub fn head_forward<F: Real>(
    tape: &mut Tape<F>,
    head: &BoundHeadNet,
    x: TensorRef,
) -> Result<TensorRef> {
    let h = tape.linear(x, head.w1, Some(head.b1))?;
    let a = tape.relu(h)?;
    Ok(tape.linear(a, head.w2, Some(head.b2))?)
}

/// Supervision targets, one row per example.
#[derive(Debug, Clone)]
pub enum HeadTargets {
    Gps(Vec<[f64; 2]>),
    Road(Vec<usize>),
    Time(Vec<f64>),
}

impl HeadTargets {
    pub fn len(&self) -> usize {
        match self {
            HeadTargets::Gps(v) => v.len(),
            HeadTargets::Road(v) => v.len(),
            HeadTargets::Time(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> HeadTargets {
        match self {
            HeadTargets::Gps(v) => HeadTargets::Gps(idx.iter().map(|&i| v[i]).collect()),
            HeadTargets::Road(v) => HeadTargets::Road(idx.iter().map(|&i| v[i]).collect()),
            HeadTargets::Time(v) => HeadTargets::Time(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// MSE for regression kinds, mean cross-entropy for classification.
pub fn head_loss<F: Real>(
    tape: &mut Tape<F>,
    pred: TensorRef,
    targets: &HeadTargets,
) -> Result<TensorRef> {
    match targets {
        HeadTargets::Gps(rows) => {
            let flat: Vec<F> = rows
                .iter()
                .flat_map(|r| r.iter().map(|&v| F::from_f64(v)))
                .collect();
            let t = tape.leaf_vec(rows.len(), 2, flat)?;
            let d = tape.sub(pred, t)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.mean_all(sq)?)
        }
        HeadTargets::Time(rows) => {
            let flat: Vec<F> = rows.iter().map(|&v| F::from_f64(v)).collect();
            let t = tape.leaf_vec(rows.len(), 1, flat)?;
            let d = tape.sub(pred, t)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.mean_all(sq)?)
        }
        HeadTargets::Road(labels) => {
            let (b, classes) = tape.dims(pred);
            let mut onehot = vec![F::zero(); b * classes];
            for (i, &c) in labels.iter().enumerate() {
                onehot[i * classes + c] = F::one();
            }
            let oh = tape.leaf_vec(b, classes, onehot)?;
            let m = tape.row_max_detached(pred)?;
            let shifted = tape.sub(pred, m)?;
            let ex = tape.exp(shifted)?;
            let se = tape.sum_axis1(ex)?;
            let lse_shift = tape.log(se)?;
            let lse = tape.add(lse_shift, m)?;
            let picked = tape.mul(pred, oh)?;
            let target_logit = tape.sum_axis1(picked)?;
            let per_row = tape.sub(lse, target_logit)?;
            Ok(tape.mean_all(per_row)?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            hidden: 0, // 0 = embed dim
            epochs: 60,
            patience: 5,
            learning_rate: 1e-3,
            batch_size: 128,
            seed: 7,
        }
    }
}

fn leaf_rows<F: Real>(tape: &mut Tape<F>, rows: &[Vec<F>], idx: &[usize]) -> Result<TensorRef> {
    let cols = rows[0].len();
    let mut flat = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        flat.extend_from_slice(&rows[i]);
    }
    Ok(tape.leaf_vec(idx.len(), cols, flat)?)
}

/// Trains a head on precomputed (frozen) embeddings with early stopping on
/// the validation loss; returns the head store and the best valid loss.
#[allow(clippy::too_many_arguments)]
pub fn train_head_frozen<F: Real>(
    embed_dim: usize,
    kind: HeadKind,
    train_emb: &[Vec<F>],
    train_targets: &HeadTargets,
    valid_emb: &[Vec<F>],
    valid_targets: &HeadTargets,
    cfg: &HeadTrainConfig,
) -> Result<(ParamStore<F>, HeadWeights, f64)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = if cfg.hidden == 0 { embed_dim } else { cfg.hidden };
    let head = HeadWeights::init(&mut store, "head", embed_dim, hidden, kind, &mut rng)?;

    let n = train_emb.len();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut best_valid = f64::INFINITY;
    let mut best_snapshot: Option<Vec<(String, Tensor<F>)>> = None;
    let mut bad_epochs = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64) << 17);
        order.shuffle(&mut srng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let bound = head.bind(&mut tape, &store)?;
            let x = leaf_rows(&mut tape, train_emb, chunk)?;
            let pred = head_forward(&mut tape, &bound, x)?;
            let targets = train_targets.subset(chunk);
            let loss = head_loss(&mut tape, pred, &targets)?;
            store.zero_grads();
            tape.backward_into(loss, &mut store)?;
            adam.step(&mut store)?;
        }

        // early stop on validation
        let all: Vec<usize> = (0..valid_emb.len()).collect();
        let mut tape = Tape::inference();
        let bound = head.bind(&mut tape, &store)?;
        let x = leaf_rows(&mut tape, valid_emb, &all)?;
        let pred = head_forward(&mut tape, &bound, x)?;
        let vloss_ref = head_loss(&mut tape, pred, valid_targets)?;
        let vloss = tape.scalar_value(vloss_ref)?.as_f64();
        if vloss < best_valid {
            best_valid = vloss;
            best_snapshot = Some(
                store
                    .iter()
                    .map(|e| (e.name.clone(), e.tensor.clone()))
                    .collect(),
            );
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                break;
            }
        }
    }

    if let Some(snap) = best_snapshot {
        store.load_values(snap.iter().map(|(n, t)| (n.as_str(), t)), |_| true)?;
    }
    Ok((store, head, best_valid))
}

/// Fine-tune mode: the head trains jointly with the student encoder on
/// compressed trajectories (the mask generator stays fixed, so compression
/// is precomputed). The pipeline's store gains the head parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_head_finetune<F: Real>(
    model: &mut StudentPipeline<F>,
    world: &World,
    kind: HeadKind,
    train_compressed: &[Trajectory],
    train_targets: &HeadTargets,
    valid_compressed: &[Trajectory],
    valid_targets: &HeadTargets,
    cfg: &HeadTrainConfig,
    mode: ScanMode,
) -> Result<(HeadWeights, f64)> {
    let embed_dim = model.encoder.config.embed_dim;
    let hidden = if cfg.hidden == 0 { embed_dim } else { cfg.hidden };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = HeadWeights::init(&mut model.store, "head", embed_dim, hidden, kind, &mut rng)?;
    // compression is frozen during fine-tuning
    model.store.set_trainable_prefix("maskgen.", false);

    let n = train_compressed.len();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut best_valid = f64::INFINITY;
    let mut best_snapshot: Option<Vec<(String, Tensor<F>)>> = None;
    let mut bad_epochs = 0usize;

    let embed_batch = |store: &ParamStore<F>,
                       student: &crate::ssmcore::EncoderWeights,
                       tape: &mut Tape<F>,
                       trajs: &[Trajectory],
                       idx: &[usize]|
     -> Result<TensorRef> {
        let enc = student.bind(tape, store)?;
        let mut rows = Vec::with_capacity(idx.len());
        for &i in idx {
            let bundle = embed_point_features(tape, &enc.embedder, &trajs[i], &world.bounds)?;
            rows.push(encode_bundle(tape, &enc, &bundle, None, mode)?);
        }
        Ok(tape.concat_rows(&rows)?)
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64) << 21);
        order.shuffle(&mut srng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let bound = head.bind(&mut tape, &model.store)?;
            let x = embed_batch(&model.store, &model.encoder, &mut tape, train_compressed, chunk)?;
            let pred = head_forward(&mut tape, &bound, x)?;
            let targets = train_targets.subset(chunk);
            let loss = head_loss(&mut tape, pred, &targets)?;
            model.store.zero_grads();
            tape.backward_into(loss, &mut model.store)?;
            adam.step(&mut model.store)?;
        }

        let all: Vec<usize> = (0..valid_compressed.len()).collect();
        let mut tape = Tape::inference();
        let bound = head.bind(&mut tape, &model.store)?;
        let x = embed_batch(&model.store, &model.encoder, &mut tape, valid_compressed, &all)?;
        let pred = head_forward(&mut tape, &bound, x)?;
        let vloss_ref = head_loss(&mut tape, pred, valid_targets)?;
        let vloss = tape.scalar_value(vloss_ref)?.as_f64();
        if vloss < best_valid {
            best_valid = vloss;
            best_snapshot = Some(
                model
                    .store
                    .iter()
                    .filter(|e| e.trainable)
                    .map(|e| (e.name.clone(), e.tensor.clone()))
                    .collect(),
            );
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                break;
            }
        }
    }

    if let Some(snap) = best_snapshot {
        model
            .store
            .load_values(snap.iter().map(|(n, t)| (n.as_str(), t)), |_| false)?;
    }
    Ok((head, best_valid))
}

/// Head predictions for a matrix of embeddings.
pub fn predict<F: Real>(
    store: &ParamStore<F>,
    head: &HeadWeights,
    embeddings: &[Vec<F>],
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::inference();
    let bound = head.bind(&mut tape, store)?;
    let all: Vec<usize> = (0..embeddings.len()).collect();
    let x = leaf_rows(&mut tape, embeddings, &all)?;
    let pred = head_forward(&mut tape, &bound, x)?;
    let (r, c) = tape.dims(pred);
    let data = tape.data(pred);
    Ok((0..r)
        .map(|i| data[i * c..(i + 1) * c].iter().map(|v| v.as_f64()).collect())
        .collect())
}
