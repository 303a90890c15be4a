//! Learnable mask generator: per-point keep scores from a lightweight
//! gated block, a clamped Gaussian stochastic gate, and soft/hard mask
//! application.

use crate::error::TrajError;
use crate::ssmcore::{mamba2_block, BoundMamba2, Mamba2BlockWeights, ScanMode};
use crate::trajdata::{compute_movement_features, Bounds, Trajectory};
use crate::Result;
use gradcore::{init, ParamId, ParamStore, Real, Tape, TensorRef};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy)]
pub struct MaskGenConfig {
    /// Latent width d_m of the generator.
    pub dim: usize,
    pub heads: usize,
    pub state: usize,
    pub conv_width: usize,
    /// Gate noise std, fixed through training.
    pub delta: f64,
    pub rmsnorm_eps: f64,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        MaskGenConfig {
            dim: 16,
            heads: 2,
            state: 8,
            conv_width: 4,
            delta: 0.5,
            rmsnorm_eps: 1e-5,
        }
    }
}

/// Number of raw per-point input features the generator reads.
pub const MASK_FEATURES: usize = 6;

#[derive(Debug, Clone)]
pub struct MaskGeneratorWeights {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub block: Mamba2BlockWeights,
    pub mu_hat: ParamId,
    pub config: MaskGenConfig,
}

impl MaskGeneratorWeights {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: &MaskGenConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.dim % cfg.heads != 0 {
            return Err(TrajError::Config(format!(
                "mask generator dim {} not divisible by heads {}",
                cfg.dim, cfg.heads
            )));
        }
        if cfg.delta <= 0.0 {
            return Err(TrajError::Config("gate noise delta must be positive".into()));
        }
        Ok(MaskGeneratorWeights {
            proj_w: store.register(
                format!("{prefix}.proj.w"),
                init::linear_weight(MASK_FEATURES, cfg.dim, rng),
                true,
            )?,
            proj_b: store.register(
                format!("{prefix}.proj.b"),
                init::linear_bias(MASK_FEATURES, cfg.dim, rng),
                true,
            )?,
            block: Mamba2BlockWeights::init(
                store,
                &format!("{prefix}.block"),
                cfg.dim,
                cfg.state,
                cfg.heads,
                cfg.conv_width,
                rng,
            )?,
            mu_hat: store.register(
                format!("{prefix}.mu_hat"),
                init::uniform(vec![1, cfg.dim], 0.3, 0.7, rng),
                true,
            )?,
            config: *cfg,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundMaskGen> {
        Ok(BoundMaskGen {
            proj_w: tape.param(store, self.proj_w)?,
            proj_b: tape.param(store, self.proj_b)?,
            block: self.block.bind(tape, store)?,
            mu_hat: tape.param(store, self.mu_hat)?,
            config: self.config,
        })
    }
}

pub struct BoundMaskGen {
    pub proj_w: TensorRef,
    pub proj_b: TensorRef,
    pub block: BoundMamba2,
    pub mu_hat: TensorRef,
    pub config: MaskGenConfig,
}

/// Raw per-point generator inputs: bounds-normalized lng/lat, elapsed-time
/// fraction, and the normalized speed/acceleration/angle triple.
pub fn mask_features(traj: &Trajectory, bounds: &Bounds) -> Result<Vec<[f64; MASK_FEATURES]>> {
    let n = traj.points.len();
    let movement = compute_movement_features(traj)?;
    let t0 = traj.points[0].t;
    let span = (traj.points[n - 1].t - t0) as f64;
    Ok(traj
        .points
        .iter()
        .zip(&movement)
        .map(|(p, m)| {
            let dt = if span > 0.0 {
                (p.t - t0) as f64 / span
            } else {
                0.0
            };
            [
                bounds.norm_lng(p.lng),
                bounds.norm_lat(p.lat),
                dt,
                m[0],
                m[1],
                m[2],
            ]
        })
        .collect())
}

/// Per-point keep scores: project raw features, run the lightweight
/// block, temperature-scale its output channels by `mu_hat` inside a
/// sigmoid, gate by `mu_hat`, and mean-pool over the feature axis.
pub fn compute_mu<F: Real>(
    tape: &mut Tape<F>,
    gen: &BoundMaskGen,
    features: &[[f64; MASK_FEATURES]],
    mode: ScanMode,
) -> Result<TensorRef> {
    let n = features.len();
    if n < 2 {
        return Err(TrajError::InvalidTrajectory(
            "mask generator needs at least 2 points".into(),
        ));
    }
    let mut flat = Vec::with_capacity(n * MASK_FEATURES);
    for row in features {
        flat.extend(row.iter().map(|&v| F::from_f64(v)));
    }
    let x = tape.leaf_vec(n, MASK_FEATURES, flat)?;
    let proj = tape.linear(x, gen.proj_w, Some(gen.proj_b))?;
    let latent = mamba2_block(tape, proj, &gen.block, mode, gen.config.rmsnorm_eps)?;
    let logits = tape.mul(latent, gen.mu_hat)?;
    let gates = tape.sigmoid(logits)?;
    let scaled = tape.mul(gates, gen.mu_hat)?;
    Ok(tape.mean_axis1(scaled)?)
}

/// Clamped Gaussian gate `m = clamp(mu + eps, 0, 1)`; noise only during
/// training and removed at evaluation.
pub fn stochastic_gate<F: Real>(
    tape: &mut Tape<F>,
    mu: TensorRef,
    delta: f64,
    training: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<TensorRef> {
    if delta <= 0.0 {
        return Err(TrajError::Config("gate noise delta must be positive".into()));
    }
    if training {
        let rng = rng.ok_or_else(|| {
            TrajError::Config("training-mode gate needs a noise source".into())
        })?;
        let (n, _) = tape.dims(mu);
        let dist = Normal::new(0.0, delta).expect("positive delta");
        let noise: Vec<F> = (0..n).map(|_| F::from_f64(dist.sample(rng))).collect();
        let noise = tape.leaf_vec(n, 1, noise)?;
        let shifted = tape.add(mu, noise)?;
        Ok(tape.clamp(shifted, 0.0, 1.0)?)
    } else {
        Ok(tape.clamp(mu, 0.0, 1.0)?)
    }
}

/// Hard compression: drops points whose eval-mode gate is zero
/// (`mu <= 0`), always keeping origin and destination.
pub fn hard_compress<F: Real>(traj: &Trajectory, mu: &[F]) -> Trajectory {
    let n = traj.points.len();
    assert_eq!(mu.len(), n, "mask length mismatch");
    let points = traj
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i == 0 || *i == n - 1 || mu[*i] > F::zero())
        .map(|(_, p)| *p)
        .collect();
    Trajectory {
        id: traj.id,
        points,
    }
}
