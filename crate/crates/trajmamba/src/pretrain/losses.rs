//! Contrastive, entropy-coding, and mask-length losses.

use crate::error::TrajError;
use crate::Result;
use gradcore::{ParamId, ParamStore, Real, Tape, Tensor, TensorRef};

/// Log-parameterized multiplicative temperature for the contrastive loss.
#[derive(Debug, Clone, Copy)]
pub struct LearnableTemperature {
    pub log_t: ParamId,
}

impl LearnableTemperature {
    pub fn init<F: Real>(store: &mut ParamStore<F>, name: &str) -> Result<Self> {
        let init = (1.0f64 / 0.07).ln();
        Ok(LearnableTemperature {
            log_t: store.register(name, Tensor::scalar(F::from_f64(init)), true)?,
        })
    }

    /// Effective multiplier `exp(log_t)`, capped at 100.
    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> Result<TensorRef> {
        let lt = tape.param(store, self.log_t)?;
        let t = tape.exp(lt)?;
        Ok(tape.clamp(t, 0.0, 100.0)?)
    }
}

/// Row-wise L2 normalization; errors on a zero-norm row.
pub fn l2_normalize_rows<F: Real>(tape: &mut Tape<F>, x: TensorRef) -> Result<TensorRef> {
    let sq = tape.mul(x, x)?;
    let ssum = tape.sum_axis1(sq)?;
    if tape.data(ssum).iter().any(|v| *v <= F::zero()) {
        return Err(TrajError::Data(
            "l2_normalize: zero-norm row".into(),
        ));
    }
    let norm = tape.sqrt(ssum)?;
    Ok(tape.div(x, norm)?)
}

/// InfoNCE over matched rows: anchors and positives are L2-normalized,
/// logits are temperature-scaled cosine similarities, and the loss is the
/// mean cross-entropy against the diagonal pairing.
pub fn infonce_pair_loss<F: Real>(
    tape: &mut Tape<F>,
    anchors: TensorRef,
    positives: TensorRef,
    temperature: TensorRef,
) -> Result<TensorRef> {
    let (b, e) = tape.dims(anchors);
    let (b2, e2) = tape.dims(positives);
    if b != b2 || e != e2 || b == 0 {
        return Err(TrajError::Data(format!(
            "infonce shape mismatch: [{b},{e}] vs [{b2},{e2}]"
        )));
    }
    let a = l2_normalize_rows(tape, anchors)?;
    let p = l2_normalize_rows(tape, positives)?;
    let pt = tape.transpose(p)?;
    let sims = tape.matmul(a, pt)?;
    let logits = tape.mul(sims, temperature)?;

    // stable log-sum-exp with a detached row max (gradient stays exact)
    let m = tape.row_max_detached(logits)?;
    let shifted = tape.sub(logits, m)?;
    let ex = tape.exp(shifted)?;
    let se = tape.sum_axis1(ex)?;
    let lse_shift = tape.log(se)?;
    let lse = tape.add(lse_shift, m)?;

    let eye = tape.identity(b)?;
    let diag_mat = tape.mul(logits, eye)?;
    let diag = tape.sum_axis1(diag_mat)?;

    let per_row = tape.sub(lse, diag)?;
    Ok(tape.mean_all(per_row)?)
}

/// Entropy-coding alignment of two row-normalized embedding batches
/// `[B, E]`: with `mu = (B+E)/2`, `lam = E / (B eps^2)`, and
/// `M = lam Z_t^T Z_s`, the loss is
/// `-mu * trace( sum_{k=1..K} ((-1)^{k+1} / k) M^k )`.
///
/// `literal = true` reproduces the degenerate single-power form in which
/// every series term reuses M itself (comparison hook, not the default).
pub fn mec_loss<F: Real>(
    tape: &mut Tape<F>,
    z_teacher: TensorRef,
    z_student: TensorRef,
    order: usize,
    eps: f64,
    literal: bool,
) -> Result<TensorRef> {
    let (b, e) = tape.dims(z_teacher);
    let (b2, e2) = tape.dims(z_student);
    if b != b2 || e != e2 {
        return Err(TrajError::Data(format!(
            "mec_loss shape mismatch: [{b},{e}] vs [{b2},{e2}]"
        )));
    }
    if order == 0 {
        return Err(TrajError::Config("mec order K must be >= 1".into()));
    }
    let mu = (b + e) as f64 / 2.0;
    let lam = e as f64 / (b as f64 * eps * eps);

    let zt_t = tape.transpose(z_teacher)?;
    let gram = tape.matmul(zt_t, z_student)?;
    let m = tape.scale(gram, lam)?;
    let eye = tape.identity(e)?;

    let mut series: Option<TensorRef> = None;
    let mut power = m;
    for k in 1..=order {
        let coeff = if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
        let diag = tape.mul(power, eye)?;
        let tr = tape.sum_all(diag)?;
        let term = tape.scale(tr, coeff)?;
        series = Some(match series {
            Some(s) => tape.add(s, term)?,
            None => term,
        });
        if k < order && !literal {
            power = tape.matmul(power, m)?;
        }
    }
    Ok(tape.scale(series.expect("order >= 1"), -mu)?)
}

/// Expected keep-probability of the Gaussian gate, averaged over all
/// points of the batch: `mean(1/2 + 1/2 erf(mu / (sqrt(2) delta)))`.
pub fn mask_loss<F: Real>(tape: &mut Tape<F>, mus: &[TensorRef], delta: f64) -> Result<TensorRef> {
    if mus.is_empty() {
        return Err(TrajError::Data("mask_loss needs at least one mu vector".into()));
    }
    if delta <= 0.0 {
        return Err(TrajError::Config(format!(
            "gate noise delta must be positive, got {delta}"
        )));
    }
    let all = tape.concat_rows(mus)?;
    let scaled = tape.scale(all, 1.0 / (std::f64::consts::SQRT_2 * delta))?;
    let er = tape.erf(scaled)?;
    let half = tape.scale(er, 0.5)?;
    let keep = tape.add_scalar(half, 0.5)?;
    Ok(tape.mean_all(keep)?)
}
