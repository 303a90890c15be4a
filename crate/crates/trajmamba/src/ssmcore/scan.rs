//! ZOH discretization and the multi-input selective scan.
//!
//! The scan is a single tape node with a hand-written adjoint: the forward
//! recurrence per head h and channel p (P = E/H channels per head) is
//!
//!   s[h,p,:] = abar[t,h] * s[h,p,:] + bcoef[t,h] * B[t,:] * x[t,hp]
//!   y[t,hp]  = sum_j s[h,p,j] * C[t,j]
//!
//! with s0 = 0. Chunked mode produces the same output via blockwise prefix
//! combination: each chunk is scanned locally from a zero state and the
//! carried state enters through the chunk's running `abar` prefix product.

use crate::error::TrajError;
use crate::Result;
use gradcore::{CustomOp, Real, Tape, TensorRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Sequential,
    Chunked(usize),
}

impl ScanMode {
    pub fn parse(s: &str, chunk: usize) -> Result<ScanMode> {
        match s {
            "sequential" => Ok(ScanMode::Sequential),
            "chunked" => Ok(ScanMode::Chunked(chunk)),
            other => Err(TrajError::Config(format!(
                "unknown scan mode `{other}` (expected sequential|chunked)"
            ))),
        }
    }
}

/// Zero-order-hold discretization for scalar-per-head A:
/// `abar = exp(delta * A)` and the input coefficient
/// `(delta A)^-1 (exp(delta A) - 1) * delta = (abar - 1) / A`.
///
/// `a_neg` is `[1, H]` with strictly negative entries; `delta` is `[n, H]`
/// and strictly positive.
pub fn zoh_discretize<F: Real>(
    tape: &mut Tape<F>,
    a_neg: TensorRef,
    delta: TensorRef,
) -> Result<(TensorRef, TensorRef)> {
    if tape.data(a_neg).iter().any(|v| *v >= F::zero()) {
        return Err(TrajError::Data(
            "zoh_discretize: A must be strictly negative".into(),
        ));
    }
    if tape.data(delta).iter().any(|v| *v <= F::zero()) {
        return Err(TrajError::Data(
            "zoh_discretize: delta must be strictly positive".into(),
        ));
    }
    let da = tape.mul(delta, a_neg)?;
    let abar = tape.exp(da)?;
    let shifted = tape.add_scalar(abar, -1.0)?;
    let bcoef = tape.div(shifted, a_neg)?;
    Ok((abar, bcoef))
}

#[derive(Debug)]
struct SelectiveScanOp<F: Real> {
    seq: usize,
    dim: usize,
    heads: usize,
    state: usize,
    /// Post-step states `s_t`, `[seq][dim * state]`, saved when gradients
    /// are required.
    states: Option<Vec<F>>,
}

/// Scan forward; writes y and optionally every post-step state.
fn scan_sequential<F: Real>(
    x: &[F],
    abar: &[F],
    bcoef: &[F],
    b: &[F],
    c: &[F],
    n: usize,
    dim: usize,
    heads: usize,
    state_dim: usize,
    mut states_out: Option<&mut Vec<F>>,
) -> Vec<F> {
    let p = dim / heads;
    let mut y = vec![F::zero(); n * dim];
    let mut s = vec![F::zero(); dim * state_dim];
    for t in 0..n {
        let brow = &b[t * state_dim..(t + 1) * state_dim];
        let crow = &c[t * state_dim..(t + 1) * state_dim];
        for h in 0..heads {
            let ab = abar[t * heads + h];
            let bc = bcoef[t * heads + h];
            for pp in 0..p {
                let hp = h * p + pp;
                let xv = x[t * dim + hp];
                let srow = &mut s[hp * state_dim..(hp + 1) * state_dim];
                let mut acc = F::zero();
                for j in 0..state_dim {
                    srow[j] = ab * srow[j] + bc * brow[j] * xv;
                    acc = acc + srow[j] * crow[j];
                }
                y[t * dim + hp] = acc;
            }
        }
        if let Some(states) = states_out.as_deref_mut() {
            states.extend_from_slice(&s);
        }
    }
    y
}

/// Blockwise prefix combination: local scan per chunk from a zero state,
/// carry folded in through the running abar prefix product.
#[allow(clippy::too_many_arguments)]
fn scan_chunked<F: Real>(
    x: &[F],
    abar: &[F],
    bcoef: &[F],
    b: &[F],
    c: &[F],
    n: usize,
    dim: usize,
    heads: usize,
    state_dim: usize,
    chunk: usize,
    mut states_out: Option<&mut Vec<F>>,
) -> Vec<F> {
    let p = dim / heads;
    let chunk = chunk.max(1);
    let mut y = vec![F::zero(); n * dim];
    let mut carry = vec![F::zero(); dim * state_dim];
    let mut local = vec![F::zero(); dim * state_dim];
    let mut aprod = vec![F::one(); heads];

    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        local.iter_mut().for_each(|v| *v = F::zero());
        aprod.iter_mut().for_each(|v| *v = F::one());
        for t in start..end {
            let brow = &b[t * state_dim..(t + 1) * state_dim];
            let crow = &c[t * state_dim..(t + 1) * state_dim];
            for h in 0..heads {
                let ab = abar[t * heads + h];
                let bc = bcoef[t * heads + h];
                aprod[h] = aprod[h] * ab;
                let ap = aprod[h];
                for pp in 0..p {
                    let hp = h * p + pp;
                    let xv = x[t * dim + hp];
                    let lrow = &mut local[hp * state_dim..(hp + 1) * state_dim];
                    let krow = &carry[hp * state_dim..(hp + 1) * state_dim];
                    let mut acc = F::zero();
                    for j in 0..state_dim {
                        lrow[j] = ab * lrow[j] + bc * brow[j] * xv;
                        acc = acc + (lrow[j] + ap * krow[j]) * crow[j];
                    }
                    y[t * dim + hp] = acc;
                }
            }
            if let Some(states) = states_out.as_deref_mut() {
                for h in 0..heads {
                    let ap = aprod[h];
                    for pp in 0..p {
                        let hp = h * p + pp;
                        for j in 0..state_dim {
                            states.push(
                                local[hp * state_dim + j] + ap * carry[hp * state_dim + j],
                            );
                        }
                    }
                }
            }
        }
        for h in 0..heads {
            let ap = aprod[h];
            for pp in 0..p {
                let hp = h * p + pp;
                for j in 0..state_dim {
                    let k = hp * state_dim + j;
                    carry[k] = local[k] + ap * carry[k];
                }
            }
        }
        start = end;
    }
    y
}

impl<F: Real> CustomOp<F> for SelectiveScanOp<F> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(
        &self,
        grad_out: &[F],
        inputs: &[(&[F], usize, usize)],
        needs: &[bool],
    ) -> Vec<Option<Vec<F>>> {
        let states = self
            .states
            .as_ref()
            .expect("selective_scan backward without saved states");
        let (n, dim, heads, sd) = (self.seq, self.dim, self.heads, self.state);
        let p = dim / heads;
        let x = inputs[0].0;
        let abar = inputs[1].0;
        let bcoef = inputs[2].0;
        let b = inputs[3].0;
        let c = inputs[4].0;

        let mut dx = needs[0].then(|| vec![F::zero(); n * dim]);
        let mut dabar = needs[1].then(|| vec![F::zero(); n * heads]);
        let mut dbcoef = needs[2].then(|| vec![F::zero(); n * heads]);
        let mut db = needs[3].then(|| vec![F::zero(); n * sd]);
        let mut dc = needs[4].then(|| vec![F::zero(); n * sd]);

        let zero_state = vec![F::zero(); dim * sd];
        let mut ds = vec![F::zero(); dim * sd];
        for t in (0..n).rev() {
            let s_t = &states[t * dim * sd..(t + 1) * dim * sd];
            let s_prev: &[F] = if t > 0 {
                &states[(t - 1) * dim * sd..t * dim * sd]
            } else {
                &zero_state
            };
            let brow = &b[t * sd..(t + 1) * sd];
            let crow = &c[t * sd..(t + 1) * sd];
            for h in 0..heads {
                let ab = abar[t * heads + h];
                let bc = bcoef[t * heads + h];
                let mut dab_acc = F::zero();
                let mut dbc_acc = F::zero();
                for pp in 0..p {
                    let hp = h * p + pp;
                    let g = grad_out[t * dim + hp];
                    let xv = x[t * dim + hp];
                    let srow_t = &s_t[hp * sd..(hp + 1) * sd];
                    let srow_prev = &s_prev[hp * sd..(hp + 1) * sd];
                    let dsrow = &mut ds[hp * sd..(hp + 1) * sd];
                    let mut dx_acc = F::zero();
                    for j in 0..sd {
                        // y_t[hp] = sum_j s_t[hp,j] * c[t,j]
                        let d = dsrow[j] + g * crow[j];
                        if let Some(dc) = dc.as_mut() {
                            dc[t * sd + j] = dc[t * sd + j] + g * srow_t[j];
                        }
                        dab_acc = dab_acc + d * srow_prev[j];
                        dbc_acc = dbc_acc + d * brow[j] * xv;
                        if let Some(db) = db.as_mut() {
                            db[t * sd + j] = db[t * sd + j] + d * bc * xv;
                        }
                        dx_acc = dx_acc + d * bc * brow[j];
                        dsrow[j] = d * ab;
                    }
                    if let Some(dx) = dx.as_mut() {
                        dx[t * dim + hp] = dx[t * dim + hp] + dx_acc;
                    }
                }
                if let Some(dabar) = dabar.as_mut() {
                    dabar[t * heads + h] = dabar[t * heads + h] + dab_acc;
                }
                if let Some(dbcoef) = dbcoef.as_mut() {
                    dbcoef[t * heads + h] = dbcoef[t * heads + h] + dbc_acc;
                }
            }
        }
        vec![dx, dabar, dbcoef, db, dc]
    }
}

/// Multi-input selective scan over a discretized system.
///
/// Shapes: `x [n, E]`, `abar`/`bcoef` `[n, H]`, `b`/`c` `[n, N]`; E must be
/// divisible by H. Returns `y [n, E]`.
pub fn selective_scan<F: Real>(
    tape: &mut Tape<F>,
    x: TensorRef,
    abar: TensorRef,
    bcoef: TensorRef,
    b: TensorRef,
    c: TensorRef,
    heads: usize,
    mode: ScanMode,
) -> Result<TensorRef> {
    let (n, dim) = tape.dims(x);
    let (na, h2) = tape.dims(abar);
    let (nb, sd) = tape.dims(b);
    let (nc, sd2) = tape.dims(c);
    let (nk, h3) = tape.dims(bcoef);
    if h2 != heads || h3 != heads || na != n || nk != n || nb != n || nc != n || sd != sd2 {
        return Err(TrajError::Data(format!(
            "selective_scan shape mismatch: x [{n},{dim}], abar [{na},{h2}], bcoef [{nk},{h3}], b [{nb},{sd}], c [{nc},{sd2}]"
        )));
    }
    if dim % heads != 0 {
        return Err(TrajError::Data(format!(
            "selective_scan: dim {dim} not divisible by heads {heads}"
        )));
    }
    let save = tape.grad_enabled();
    let mut states = save.then(|| Vec::with_capacity(n * dim * sd));
    let y = match mode {
        ScanMode::Sequential => scan_sequential(
            tape.data(x),
            tape.data(abar),
            tape.data(bcoef),
            tape.data(b),
            tape.data(c),
            n,
            dim,
            heads,
            sd,
            states.as_mut(),
        ),
        ScanMode::Chunked(chunk) => scan_chunked(
            tape.data(x),
            tape.data(abar),
            tape.data(bcoef),
            tape.data(b),
            tape.data(c),
            n,
            dim,
            heads,
            sd,
            chunk,
            states.as_mut(),
        ),
    };
    let op = SelectiveScanOp {
        seq: n,
        dim,
        heads,
        state: sd,
        states,
    };
    Ok(tape.custom(&[x, abar, bcoef, b, c], n, dim, y, Box::new(op))?)
}

/// Per-channel causal convolution (left zero padding) followed by SiLU.
/// `kernel` is `[w, E]`: tap j multiplies `x[t - (w-1) + j]`.
pub fn causal_conv1d<F: Real>(
    tape: &mut Tape<F>,
    x: TensorRef,
    kernel: TensorRef,
) -> Result<TensorRef> {
    let (n, dim) = tape.dims(x);
    let (w, kd) = tape.dims(kernel);
    if kd != dim || w == 0 {
        return Err(TrajError::Data(format!(
            "causal_conv1d: kernel [{w},{kd}] does not match input [{n},{dim}]"
        )));
    }
    let mut acc: Option<TensorRef> = None;
    for j in 0..w {
        let shift = w - 1 - j;
        let shifted = if shift == 0 {
            x
        } else if shift >= n {
            tape.leaf_vec(n, dim, vec![F::zero(); n * dim])?
        } else {
            let zeros = tape.leaf_vec(shift, dim, vec![F::zero(); shift * dim])?;
            let head = tape.slice_rows(x, 0, n - shift)?;
            tape.concat_rows(&[zeros, head])?
        };
        let tap = tape.slice_rows(kernel, j, j + 1)?;
        let term = tape.mul(shifted, tap)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(tape.silu(acc.expect("w >= 1"))?)
}
