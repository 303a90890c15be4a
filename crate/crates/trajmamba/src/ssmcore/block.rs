//! Dual-branch encoder block and the vanilla gated block used by the view
//! encoders and the mask generator.

use super::scan::{causal_conv1d, selective_scan, zoh_discretize, ScanMode};
use crate::Result;
use gradcore::{init, ParamId, ParamStore, Real, Tape, TensorRef};
use rand_chacha::ChaCha8Rng;

/// Selection-mechanism parameters for one SSM: scalar-per-head A in
/// log-magnitude form, the timescale bias, and the three bias-free
/// projections that derive B, C, delta from the source sequence.
#[derive(Debug, Clone)]
pub struct SsmHeadParams {
    pub a_log: ParamId,
    pub delta_bias: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    pub delta_proj: ParamId,
    pub heads: usize,
    pub state: usize,
}

impl SsmHeadParams {
    /// `bc_gain` scales the B/C projection init: without the usual skip
    /// term, the scan output magnitude at init is roughly
    /// `gain^2 * sigma_B * sigma_C * sqrt(N) / A`, and the gain keeps the
    /// stacked blocks from attenuating the signal to zero.
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        source_dim: usize,
        state: usize,
        heads: usize,
        bc_gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = bc_gain / (source_dim as f64).sqrt();
        Ok(SsmHeadParams {
            a_log: store.register(format!("{prefix}.a_log"), init::a_log_init(heads, rng), true)?,
            delta_bias: store.register(
                format!("{prefix}.delta_bias"),
                init::delta_bias_init(heads, 0.01, 0.5, rng),
                true,
            )?,
            b_proj: store.register(
                format!("{prefix}.b_proj"),
                init::uniform(vec![source_dim, state], -bound, bound, rng),
                true,
            )?,
            c_proj: store.register(
                format!("{prefix}.c_proj"),
                init::uniform(vec![source_dim, state], -bound, bound, rng),
                true,
            )?,
            delta_proj: store.register(
                format!("{prefix}.delta_proj"),
                init::linear_weight(source_dim, heads, rng),
                true,
            )?,
            heads,
            state,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundHead> {
        let a_log = tape.param(store, self.a_log)?;
        let a_exp = tape.exp(a_log)?;
        let a_neg = tape.neg(a_exp)?;
        Ok(BoundHead {
            a_neg,
            delta_bias: tape.param(store, self.delta_bias)?,
            b_proj: tape.param(store, self.b_proj)?,
            c_proj: tape.param(store, self.c_proj)?,
            delta_proj: tape.param(store, self.delta_proj)?,
            heads: self.heads,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHead {
    pub a_neg: TensorRef,
    pub delta_bias: TensorRef,
    pub b_proj: TensorRef,
    pub c_proj: TensorRef,
    pub delta_proj: TensorRef,
    pub heads: usize,
}

/// Input-dependent selection parameters:
/// `B = Linear(src)`, `C = Linear(src)`,
/// `delta = softplus(Linear(src) + delta_bias)`.
pub fn param_from<F: Real>(
    tape: &mut Tape<F>,
    source: TensorRef,
    head: &BoundHead,
) -> Result<(TensorRef, TensorRef, TensorRef)> {
    let b = tape.matmul(source, head.b_proj)?;
    let c = tape.matmul(source, head.c_proj)?;
    let pre = tape.linear(source, head.delta_proj, Some(head.delta_bias))?;
    let sp = tape.softplus(pre)?;
    // softplus underflows to exactly zero in f32 for very negative inputs;
    // the additive floor keeps delta > 0 without changing the gradient
    let delta = tape.add_scalar(sp, 1e-8)?;
    Ok((b, c, delta))
}

/// Runs one SSM: selection from `source`, ZOH discretization, scan over `x`.
pub fn run_ssm<F: Real>(
    tape: &mut Tape<F>,
    x: TensorRef,
    source: TensorRef,
    head: &BoundHead,
    mode: ScanMode,
) -> Result<TensorRef> {
    let (b, c, delta) = param_from(tape, source, head)?;
    let (abar, bcoef) = zoh_discretize(tape, head.a_neg, delta)?;
    selective_scan(tape, x, abar, bcoef, b, c, head.heads, mode)
}

// Init gains calibrated so per-block output RMS stays O(1) across a deep
// stack at initialization: the blocks have no residual path, so plain
// fan-in inits would attenuate the signal to zero within a few layers.
// The scan output scale goes like sigma_B * sigma_C * sqrt(N) / A, hence
// the 1/sqrt(sqrt(N)) shape of the O(1)-input gains.
const GPS_BC_GAIN: f64 = 4.0;

fn road_bc_gain(state: usize) -> f64 {
    4.0 / (state as f64).sqrt()
}
/// Linear layers feeding SiLU: unit fan-in gain times 2 for the SiLU halving.
const SILU_LINEAR_GAIN: f64 = 2.0;
const OUT_LINEAR_GAIN: f64 = 1.5;

/// Uniform init with std `gain / sqrt(fan_in)`.
fn gain_linear<F: Real>(
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> gradcore::Tensor<F> {
    let bound = 3f64.sqrt() * gain / (fan_in as f64).sqrt();
    init::uniform(vec![fan_in, fan_out], -bound, bound, rng)
}

// ── Dual-branch block ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrajMambaBlockWeights {
    pub gps_in: ParamId,
    pub gps_conv: ParamId,
    pub gps_head: SsmHeadParams,
    pub road_in: ParamId,
    pub road_head: SsmHeadParams,
    pub gate_norm_scale: ParamId,
    pub gps_out: ParamId,
    pub road_out: ParamId,
}

impl TrajMambaBlockWeights {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        embed_dim: usize,
        state: usize,
        heads: usize,
        conv_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let half = embed_dim / 2;
        Ok(TrajMambaBlockWeights {
            gps_in: store.register(
                format!("{prefix}.gps_in"),
                gain_linear(half, embed_dim, SILU_LINEAR_GAIN, rng),
                true,
            )?,
            gps_conv: store.register(
                format!("{prefix}.gps_conv"),
                gain_linear(conv_width, embed_dim, SILU_LINEAR_GAIN, rng),
                true,
            )?,
            gps_head: SsmHeadParams::init(
                store,
                &format!("{prefix}.gps_ssm"),
                3,
                state,
                heads,
                GPS_BC_GAIN,
                rng,
            )?,
            road_in: store.register(
                format!("{prefix}.road_in"),
                gain_linear(half, embed_dim, SILU_LINEAR_GAIN, rng),
                true,
            )?,
            road_head: SsmHeadParams::init(
                store,
                &format!("{prefix}.road_ssm"),
                embed_dim,
                state,
                heads,
                road_bc_gain(state),
                rng,
            )?,
            gate_norm_scale: store.register(
                format!("{prefix}.gate_norm"),
                init::full(vec![1, embed_dim], 1.0),
                true,
            )?,
            gps_out: store.register(
                format!("{prefix}.gps_out"),
                gain_linear(embed_dim, half, OUT_LINEAR_GAIN, rng),
                true,
            )?,
            road_out: store.register(
                format!("{prefix}.road_out"),
                gain_linear(embed_dim, half, OUT_LINEAR_GAIN, rng),
                true,
            )?,
        })
    }

    pub fn bind<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
    ) -> Result<BoundTrajMambaBlock> {
        Ok(BoundTrajMambaBlock {
            gps_in: tape.param(store, self.gps_in)?,
            gps_conv: tape.param(store, self.gps_conv)?,
            gps_head: self.gps_head.bind(tape, store)?,
            road_in: tape.param(store, self.road_in)?,
            road_head: self.road_head.bind(tape, store)?,
            gate_norm_scale: tape.param(store, self.gate_norm_scale)?,
            gps_out: tape.param(store, self.gps_out)?,
            road_out: tape.param(store, self.road_out)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundTrajMambaBlock {
    pub gps_in: TensorRef,
    pub gps_conv: TensorRef,
    pub gps_head: BoundHead,
    pub road_in: TensorRef,
    pub road_head: BoundHead,
    pub gate_norm_scale: TensorRef,
    pub gps_out: TensorRef,
    pub road_out: TensorRef,
}

/// One dual-branch block:
/// GPS branch is conv+SiLU then an SSM whose selection reads the movement
/// features; road branch is SiLU-linear then an SSM whose selection reads
/// the GPS branch output; the branches couple through a gating product on
/// the GPS side only.
pub fn traj_mamba_block<F: Real>(
    tape: &mut Tape<F>,
    z_g: TensorRef,
    z_r: TensorRef,
    s: TensorRef,
    w: &BoundTrajMambaBlock,
    mode: ScanMode,
    rmsnorm_eps: f64,
) -> Result<(TensorRef, TensorRef, TensorRef)> {
    let g_lin = tape.matmul(z_g, w.gps_in)?;
    let x_g = causal_conv1d(tape, g_lin, w.gps_conv)?;
    let y_g = run_ssm(tape, x_g, s, &w.gps_head, mode)?;

    let r_lin = tape.matmul(z_r, w.road_in)?;
    let x_r = tape.silu(r_lin)?;
    let y_r = run_ssm(tape, x_r, y_g, &w.road_head, mode)?;

    let gate = tape.mul(y_g, x_r)?;
    let normed = tape.rms_norm_rows(gate, rmsnorm_eps)?;
    let scaled = tape.mul(normed, w.gate_norm_scale)?;
    let z_g_out = tape.matmul(scaled, w.gps_out)?;
    let z_r_out = tape.matmul(y_r, w.road_out)?;
    Ok((z_g_out, z_r_out, y_g))
}

// ── Vanilla gated block ──────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Mamba2BlockWeights {
    pub in_proj: ParamId,
    pub conv: ParamId,
    pub head: SsmHeadParams,
    pub norm_scale: ParamId,
    pub out_proj: ParamId,
    pub dim: usize,
}

impl Mamba2BlockWeights {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        dim: usize,
        state: usize,
        heads: usize,
        conv_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Mamba2BlockWeights {
            in_proj: store.register(
                format!("{prefix}.in_proj"),
                gain_linear(dim, 2 * dim, SILU_LINEAR_GAIN, rng),
                true,
            )?,
            conv: store.register(
                format!("{prefix}.conv"),
                gain_linear(conv_width, dim, SILU_LINEAR_GAIN, rng),
                true,
            )?,
            head: SsmHeadParams::init(
                store,
                &format!("{prefix}.ssm"),
                dim,
                state,
                heads,
                road_bc_gain(state),
                rng,
            )?,
            norm_scale: store.register(
                format!("{prefix}.norm"),
                init::full(vec![1, dim], 1.0),
                true,
            )?,
            out_proj: store.register(
                format!("{prefix}.out_proj"),
                gain_linear(dim, dim, OUT_LINEAR_GAIN, rng),
                true,
            )?,
            dim,
        })
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<BoundMamba2> {
        Ok(BoundMamba2 {
            in_proj: tape.param(store, self.in_proj)?,
            conv: tape.param(store, self.conv)?,
            head: self.head.bind(tape, store)?,
            norm_scale: tape.param(store, self.norm_scale)?,
            out_proj: tape.param(store, self.out_proj)?,
            dim: self.dim,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMamba2 {
    pub in_proj: TensorRef,
    pub conv: TensorRef,
    pub head: BoundHead,
    pub norm_scale: TensorRef,
    pub out_proj: TensorRef,
    pub dim: usize,
}

/// Vanilla single-input selective block: in-projection split into value and
/// gate, causal conv + SiLU, scan parameterized by the conv output, gated
/// RMS norm, out-projection, residual.
pub fn mamba2_block<F: Real>(
    tape: &mut Tape<F>,
    x: TensorRef,
    w: &BoundMamba2,
    mode: ScanMode,
    rmsnorm_eps: f64,
) -> Result<TensorRef> {
    let d = w.dim;
    let proj = tape.matmul(x, w.in_proj)?;
    let xi = tape.slice_cols(proj, 0, d)?;
    let z = tape.slice_cols(proj, d, 2 * d)?;
    let xc = causal_conv1d(tape, xi, w.conv)?;
    let y = run_ssm(tape, xc, xc, &w.head, mode)?;
    let zs = tape.silu(z)?;
    let gated = tape.mul(y, zs)?;
    let normed = tape.rms_norm_rows(gated, rmsnorm_eps)?;
    let scaled = tape.mul(normed, w.norm_scale)?;
    let out = tape.matmul(scaled, w.out_proj)?;
    Ok(tape.add(out, x)?)
}
