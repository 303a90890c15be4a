//! Arena tape: eager forward evaluation with one recorded node per
//! operation, replayed in reverse for gradients.
//!
//! All tape tensors are logically rank-2 (rows x cols); vectors are rows.
//! Broadcasting in binary operations is limited to the forms the model code
//! needs: equal shapes, scalar on one side, a `[1, c]` row against `[r, c]`,
//! or a `[r, 1]` column against `[r, c]`.

use crate::error::GradError;
use crate::real::Real;
use crate::store::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Result;

/// Handle to a node on the tape. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);


/// Batch-normalization mode. `track` controls whether running statistics
/// updates are queued (they are applied by `flush_updates`, never during
/// the forward pass itself).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train { track: bool },
    Eval,
}

/// Extension point for operations with hand-written backward rules that are
/// not part of the built-in primitive set (the selective scan lives behind
/// this trait).
pub trait CustomOp<F: Real>: std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// Returns one gradient buffer per input (None where `needs` is false).
    /// Each returned buffer must have the input's element count.
    fn backward(
        &self,
        grad_out: &[F],
        inputs: &[(&[F], usize, usize)],
        needs: &[bool],
    ) -> Vec<Option<Vec<F>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
    LhsRow,
    RhsRow,
    LhsCol,
    RhsCol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<F: Real> {
    Leaf,
    Param,
    Bin(BinKind, TensorRef, TensorRef, Bcast),
    Scale(TensorRef, F),
    AddScalar(TensorRef, F),
    Exp(TensorRef),
    Log(TensorRef),
    Sqrt(TensorRef),
    Abs(TensorRef),
    Sin(TensorRef),
    Cos(TensorRef),
    Powf(TensorRef, F),
    Clamp(TensorRef, F, F),
    Sigmoid(TensorRef),
    Tanh(TensorRef),
    Relu(TensorRef),
    Silu(TensorRef),
    Softplus(TensorRef),
    Erf(TensorRef),
    Matmul(TensorRef, TensorRef),
    Transpose(TensorRef),
    ConcatRows(Vec<TensorRef>),
    ConcatCols(Vec<TensorRef>),
    SliceRows(TensorRef, usize, usize),
    SliceCols(TensorRef, usize, usize),
    Reshape(TensorRef),
    SumAxis0(TensorRef),
    SumAxis1(TensorRef),
    MeanAxis0(TensorRef),
    MeanAxis1(TensorRef),
    SumAll(TensorRef),
    MeanAll(TensorRef),
    SoftmaxRows(TensorRef),
    RmsNormRows(TensorRef, F),
    CumprodAxis0(TensorRef),
    GatherRows(TensorRef, Vec<usize>),
    Custom(Vec<TensorRef>, Box<dyn CustomOp<F>>),
}

struct Node<F: Real> {
    rows: usize,
    cols: usize,
    val: Vec<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Computation graph for one step. Build, call [`Tape::backward`], drop.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    bindings: Vec<(ParamId, TensorRef)>,
    pending_updates: Vec<(ParamId, Vec<F>)>,
    grads: Vec<Option<Vec<F>>>,
    grad_enabled: bool,
    check_finite: bool,
    consumed: bool,
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// Inference tape: no gradient bookkeeping, custom ops may skip saving
    /// intermediate state.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: Vec::new(),
            pending_updates: Vec::new(),
            grads: Vec::new(),
            grad_enabled,
            check_finite: false,
            consumed: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Debug flag: error out as soon as any operation produces NaN/Inf.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    // ── Value access ─────────────────────────────────────────────────

    pub fn data(&self, r: TensorRef) -> &[F] {
        &self.nodes[r.0].val
    }

    pub fn dims(&self, r: TensorRef) -> (usize, usize) {
        let n = &self.nodes[r.0];
        (n.rows, n.cols)
    }

    pub fn to_tensor(&self, r: TensorRef) -> Tensor<F> {
        let n = &self.nodes[r.0];
        Tensor::new(vec![n.rows, n.cols], n.val.clone()).expect("node shape consistent")
    }

    pub fn scalar_value(&self, r: TensorRef) -> Result<F> {
        let n = &self.nodes[r.0];
        if n.val.len() != 1 {
            return Err(GradError::NonScalarLoss {
                shape: vec![n.rows, n.cols],
            });
        }
        Ok(n.val[0])
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        val: Vec<F>,
        op: Op<F>,
        needs_grad: bool,
    ) -> Result<TensorRef> {
        debug_assert_eq!(rows * cols, val.len());
        if self.check_finite && !val.iter().all(|v| v.is_finite()) {
            return Err(GradError::NonFinite { op: op_name(&op) });
        }
        let needs = needs_grad && self.grad_enabled;
        self.nodes.push(Node {
            rows,
            cols,
            val,
            op,
            needs_grad: needs,
        });
        Ok(TensorRef(self.nodes.len() - 1))
    }

    fn needs(&self, r: TensorRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, t: &Tensor<F>) -> Result<TensorRef> {
        let (r, c) = t.dims2();
        self.push(r, c, t.data.clone(), Op::Leaf, false)
    }

    pub fn leaf_vec(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Result<TensorRef> {
        if rows * cols != data.len() {
            return Err(GradError::InvalidShape {
                op: "leaf",
                shape: vec![rows, cols],
                reason: format!("product != data length {}", data.len()),
            });
        }
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: F) -> Result<TensorRef> {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    pub fn identity(&mut self, n: usize) -> Result<TensorRef> {
        let mut data = vec![F::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = F::one();
        }
        self.push(n, n, data, Op::Leaf, false)
    }

    /// Binds a store parameter into the graph. Gradients accumulate back
    /// into the store entry on `backward_into`.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Result<TensorRef> {
        let entry = store.get(id);
        let (r, c) = entry.tensor.dims2();
        let needs = entry.trainable;
        let rf = self.push(r, c, entry.tensor.data.clone(), Op::Param, needs)?;
        self.bindings.push((id, rf));
        Ok(rf)
    }

    // ── Binary elementwise with broadcasting ─────────────────────────

    fn binary(&mut self, kind: BinKind, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        let name = bin_name(kind);
        let (bc, rows, cols) = resolve_bcast(name, ra, ca, rb, cb)?;
        let av = &self.nodes[a.0].val;
        let bv = &self.nodes[b.0].val;
        let mut out = Vec::with_capacity(rows * cols);
        let f = |x: F, y: F| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        for r in 0..rows {
            for c in 0..cols {
                let (ia, ib) = bcast_idx(bc, r, c, cols);
                out.push(f(av[ia], bv[ib]));
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(rows, cols, out, Op::Bin(kind, a, b, bc), needs)
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(BinKind::Div, a, b)
    }

    // ── Scalar-constant ops ──────────────────────────────────────────

    pub fn scale(&mut self, x: TensorRef, c: f64) -> Result<TensorRef> {
        let cf = F::from_f64(c);
        let (r, co) = self.dims(x);
        let val = self.nodes[x.0].val.iter().map(|&v| v * cf).collect();
        let needs = self.needs(x);
        self.push(r, co, val, Op::Scale(x, cf), needs)
    }

    pub fn neg(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: TensorRef, c: f64) -> Result<TensorRef> {
        let cf = F::from_f64(c);
        let (r, co) = self.dims(x);
        let val = self.nodes[x.0].val.iter().map(|&v| v + cf).collect();
        let needs = self.needs(x);
        self.push(r, co, val, Op::AddScalar(x, cf), needs)
    }

    // ── Unary elementwise ────────────────────────────────────────────

    fn unary(
        &mut self,
        x: TensorRef,
        f: impl Fn(F) -> F,
        op: impl Fn(TensorRef) -> Op<F>,
    ) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let val = self.nodes[x.0].val.iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        self.push(r, c, val, op(x), needs)
    }

    pub fn exp(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.exp(), Op::Exp)
    }

    pub fn log(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.ln(), Op::Log)
    }

    pub fn sqrt(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.sqrt(), Op::Sqrt)
    }

    pub fn abs(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.abs(), Op::Abs)
    }

    pub fn sin(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.sin(), Op::Sin)
    }

    pub fn cos(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.cos(), Op::Cos)
    }

    pub fn powf(&mut self, x: TensorRef, p: f64) -> Result<TensorRef> {
        let pf = F::from_f64(p);
        self.unary(x, |v| v.powf(pf), |r| Op::Powf(r, pf))
    }

    pub fn clamp(&mut self, x: TensorRef, lo: f64, hi: f64) -> Result<TensorRef> {
        let (l, h) = (F::from_f64(lo), F::from_f64(hi));
        self.unary(
            x,
            |v| {
                if v < l {
                    l
                } else if v > h {
                    h
                } else {
                    v
                }
            },
            |r| Op::Clamp(r, l, h),
        )
    }

    pub fn sigmoid(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, sigmoid_stable, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.tanh(), Op::Tanh)
    }

    pub fn relu(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| if v > F::zero() { v } else { F::zero() }, Op::Relu)
    }

    pub fn silu(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v * sigmoid_stable(v), Op::Silu)
    }

    pub fn softplus(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, softplus_stable, Op::Softplus)
    }

    pub fn erf(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.erf(), Op::Erf)
    }

    // ── Linear algebra / shape ───────────────────────────────────────

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![F::zero(); m * n];
        matmul_raw(&self.nodes[a.0].val, &self.nodes[b.0].val, m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(m, n, out, Op::Matmul(a, b), needs)
    }

    /// matmul plus optional broadcast row bias.
    pub fn linear(&mut self, x: TensorRef, w: TensorRef, b: Option<TensorRef>) -> Result<TensorRef> {
        let y = self.matmul(x, w)?;
        match b {
            Some(bias) => self.add(y, bias),
            None => Ok(y),
        }
    }

    pub fn transpose(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let needs = self.needs(x);
        self.push(c, r, out, Op::Transpose(x), needs)
    }

    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(GradError::Domain {
                op: "concat_rows",
                reason: "no parts".into(),
            });
        }
        let cols = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut needs = false;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(GradError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, cols],
                    rhs: vec![r, c],
                });
            }
            rows += r;
            out.extend_from_slice(&self.nodes[p.0].val);
            needs |= self.needs(p);
        }
        self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), needs)
    }

    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(GradError::Domain {
                op: "concat_cols",
                reason: "no parts".into(),
            });
        }
        let rows = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut cols = 0;
        let mut needs = false;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(GradError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows, cols],
                    rhs: vec![r, c],
                });
            }
            widths.push(c);
            cols += c;
            needs |= self.needs(p);
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (i, &p) in parts.iter().enumerate() {
                let c = widths[i];
                let pv = &self.nodes[p.0].val;
                out.extend_from_slice(&pv[r * c..(r + 1) * c]);
            }
        }
        self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn slice_rows(&mut self, x: TensorRef, start: usize, end: usize) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        if start > end || end > r {
            return Err(GradError::InvalidShape {
                op: "slice_rows",
                shape: vec![r, c],
                reason: format!("row range {}..{}", start, end),
            });
        }
        let out = self.nodes[x.0].val[start * c..end * c].to_vec();
        let needs = self.needs(x);
        self.push(end - start, c, out, Op::SliceRows(x, start, end), needs)
    }

    pub fn slice_cols(&mut self, x: TensorRef, start: usize, end: usize) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        if start > end || end > c {
            return Err(GradError::InvalidShape {
                op: "slice_cols",
                shape: vec![r, c],
                reason: format!("col range {}..{}", start, end),
            });
        }
        let xv = &self.nodes[x.0].val;
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        let needs = self.needs(x);
        self.push(r, w, out, Op::SliceCols(x, start, end), needs)
    }

    pub fn reshape(&mut self, x: TensorRef, rows: usize, cols: usize) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        if r * c != rows * cols {
            return Err(GradError::InvalidShape {
                op: "reshape",
                shape: vec![r, c],
                reason: format!("cannot reshape to [{}, {}]", rows, cols),
            });
        }
        let out = self.nodes[x.0].val.clone();
        let needs = self.needs(x);
        self.push(rows, cols, out, Op::Reshape(x), needs)
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum_axis0(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + xv[i * c + j];
            }
        }
        let needs = self.needs(x);
        self.push(1, c, out, Op::SumAxis0(x), needs)
    }

    pub fn sum_axis1(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let mut s = F::zero();
            for j in 0..c {
                s = s + xv[i * c + j];
            }
            out.push(s);
        }
        let needs = self.needs(x);
        self.push(r, 1, out, Op::SumAxis1(x), needs)
    }

    pub fn mean_axis0(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let inv = F::from_usize(r).recip();
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + xv[i * c + j];
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let needs = self.needs(x);
        self.push(1, c, out, Op::MeanAxis0(x), needs)
    }

    pub fn mean_axis1(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let inv = F::from_usize(c).recip();
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let mut s = F::zero();
            for j in 0..c {
                s = s + xv[i * c + j];
            }
            out.push(s * inv);
        }
        let needs = self.needs(x);
        self.push(r, 1, out, Op::MeanAxis1(x), needs)
    }

    pub fn sum_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let s = self.nodes[x.0].val.iter().fold(F::zero(), |a, &b| a + b);
        let needs = self.needs(x);
        self.push(1, 1, vec![s], Op::SumAll(x), needs)
    }

    pub fn mean_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let n = self.nodes[x.0].val.len();
        let s = self.nodes[x.0].val.iter().fold(F::zero(), |a, &b| a + b);
        let needs = self.needs(x);
        self.push(
            1,
            1,
            vec![s * F::from_usize(n).recip()],
            Op::MeanAll(x),
            needs,
        )
    }

    // ── Normalizations ───────────────────────────────────────────────

    /// Row softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            let start = out.len();
            for &v in row {
                let e = (v - m).exp();
                denom = denom + e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v = *v / denom;
            }
        }
        let needs = self.needs(x);
        self.push(r, c, out, Op::SoftmaxRows(x), needs)
    }

    /// Per-row RMS normalization: `x / sqrt(mean(x^2) + eps)`.
    pub fn rms_norm_rows(&mut self, x: TensorRef, eps: f64) -> Result<TensorRef> {
        let e = F::from_f64(eps);
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let ms = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b)
                * F::from_usize(c).recip();
            let inv = (ms + e).sqrt().recip();
            out.extend(row.iter().map(|&v| v * inv));
        }
        let needs = self.needs(x);
        self.push(r, c, out, Op::RmsNormRows(x, e), needs)
    }

    /// L1 normalization along an axis (0 = down columns, 1 = across rows).
    /// Errors if any normalization slice sums to zero absolute mass.
    pub fn l1_normalize(&mut self, x: TensorRef, axis: usize) -> Result<TensorRef> {
        let a = self.abs(x)?;
        let s = match axis {
            0 => self.sum_axis0(a)?,
            1 => self.sum_axis1(a)?,
            _ => {
                return Err(GradError::Domain {
                    op: "l1_normalize",
                    reason: format!("axis {} out of range", axis),
                })
            }
        };
        if self.nodes[s.0].val.iter().any(|v| *v == F::zero()) {
            return Err(GradError::Domain {
                op: "l1_normalize",
                reason: "zero L1 mass in a slice".into(),
            });
        }
        self.div(x, s)
    }

    /// Cumulative product down the sequence (row) axis.
    pub fn cumprod_axis0(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = vec![F::zero(); r * c];
        for j in 0..c {
            let mut acc = F::one();
            for i in 0..r {
                acc = acc * xv[i * c + j];
                out[i * c + j] = acc;
            }
        }
        let needs = self.needs(x);
        self.push(r, c, out, Op::CumprodAxis0(x), needs)
    }

    /// Index-fetching embedding lookup: selects `idx` rows from `table`.
    pub fn gather_rows(&mut self, table: TensorRef, idx: &[usize]) -> Result<TensorRef> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(GradError::Domain {
                op: "gather_rows",
                reason: format!("row index {} out of range {}", bad, r),
            });
        }
        let tv = &self.nodes[table.0].val;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let needs = self.needs(table);
        self.push(idx.len(), c, out, Op::GatherRows(table, idx.to_vec()), needs)
    }

    /// Per-row max, returned as a constant leaf `[r, 1]`. Detaching the max
    /// leaves log-sum-exp gradients exact because softmax rows sum to one.
    pub fn row_max_detached(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims(x);
        let xv = &self.nodes[x.0].val;
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            out.push(
                xv[i * c..(i + 1) * c]
                    .iter()
                    .cloned()
                    .fold(F::neg_infinity(), F::max),
            );
        }
        self.push(r, 1, out, Op::Leaf, false)
    }

    /// Registers an externally computed operation with its own backward.
    pub fn custom(
        &mut self,
        inputs: &[TensorRef],
        rows: usize,
        cols: usize,
        val: Vec<F>,
        op: Box<dyn CustomOp<F>>,
    ) -> Result<TensorRef> {
        let needs = inputs.iter().any(|&i| self.needs(i));
        self.push(rows, cols, val, Op::Custom(inputs.to_vec(), op), needs)
    }

    // ── Batch normalization ──────────────────────────────────────────

    /// Batch normalization over the row axis with learnable `gamma`/`beta`
    /// (both `[1, c]`). Running statistics live in the store as
    /// non-trainable entries; training-mode updates are queued and applied
    /// by [`Tape::flush_updates`], eval mode reads them as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        store: &ParamStore<F>,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
        eps: f64,
        mode: BnMode,
    ) -> Result<TensorRef> {
        let (r, _c) = self.dims(x);
        match mode {
            BnMode::Train { track } => {
                let mean = self.mean_axis0(x)?;
                let centered = self.sub(x, mean)?;
                let sq = self.mul(centered, centered)?;
                let var = self.mean_axis0(sq)?;
                let denom_sq = self.add_scalar(var, eps)?;
                let denom = self.sqrt(denom_sq)?;
                let normed = self.div(centered, denom)?;
                let scaled = self.mul(normed, gamma)?;
                let y = self.add(scaled, beta)?;
                if track {
                    let m = F::from_f64(momentum);
                    let keep = F::one() - m;
                    let bm = self.nodes[mean.0].val.clone();
                    let bv = self.nodes[var.0].val.clone();
                    // PyTorch convention: normalize with biased variance,
                    // track the unbiased one.
                    let unbias = if r > 1 {
                        F::from_usize(r) * F::from_usize(r - 1).recip()
                    } else {
                        F::one()
                    };
                    let rm = &store.get(running_mean).tensor.data;
                    let rv = &store.get(running_var).tensor.data;
                    let new_rm: Vec<F> =
                        rm.iter().zip(&bm).map(|(&o, &b)| keep * o + m * b).collect();
                    let new_rv: Vec<F> = rv
                        .iter()
                        .zip(&bv)
                        .map(|(&o, &b)| keep * o + m * b * unbias)
                        .collect();
                    self.pending_updates.push((running_mean, new_rm));
                    self.pending_updates.push((running_var, new_rv));
                }
                Ok(y)
            }
            BnMode::Eval => {
                let rm = store.get(running_mean).tensor.clone();
                let rv = store.get(running_var).tensor.clone();
                let rm_ref = self.leaf(&rm)?;
                let rv_ref = self.leaf(&rv)?;
                let centered = self.sub(x, rm_ref)?;
                let denom_sq = self.add_scalar(rv_ref, eps)?;
                let denom = self.sqrt(denom_sq)?;
                let normed = self.div(centered, denom)?;
                let scaled = self.mul(normed, gamma)?;
                self.add(scaled, beta)
            }
        }
    }

    /// Applies queued buffer updates (batch-norm running statistics).
    pub fn flush_updates(&mut self, store: &mut ParamStore<F>) {
        for (id, data) in self.pending_updates.drain(..) {
            store.get_mut(id).tensor.data = data;
        }
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of bound parameters are
    /// retrievable via [`Tape::grad_of`] or written back with
    /// [`Tape::backward_into`]. A tape can only run backward once.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.consumed {
            return Err(GradError::GraphConsumed);
        }
        let ln = &self.nodes[loss.0];
        if ln.val.len() != 1 {
            return Err(GradError::NonScalarLoss {
                shape: vec![ln.rows, ln.cols],
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad || matches!(self.nodes[loss.0].op, Op::Param) {
            grads[loss.0] = Some(vec![F::one()]);
        } else {
            // Loss independent of every parameter: nothing to propagate.
            self.grads = grads;
            return Ok(());
        }

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Runs backward and accumulates parameter gradients into the store.
    /// Parameters bound to the tape but disconnected from the loss receive
    /// zero gradients.
    pub fn backward_into(&mut self, loss: TensorRef, store: &mut ParamStore<F>) -> Result<()> {
        self.backward(loss)?;
        let bindings = std::mem::take(&mut self.bindings);
        for &(id, rf) in &bindings {
            if !store.get(id).trainable {
                continue;
            }
            let numel = self.nodes[rf.0].val.len();
            let entry = store.get_mut(id);
            let grad = entry
                .tensor
                .grad
                .get_or_insert_with(|| vec![F::zero(); numel]);
            if let Some(g) = &self.grads[rf.0] {
                for (dst, src) in grad.iter_mut().zip(g) {
                    *dst = *dst + *src;
                }
            }
        }
        self.bindings = bindings;
        Ok(())
    }

    /// Gradient of a node after `backward`, if it participated.
    pub fn grad_of(&self, r: TensorRef) -> Option<&[F]> {
        self.grads.get(r.0).and_then(|g| g.as_deref())
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut Vec<Option<Vec<F>>>) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Bin(kind, a, b, bc) => {
                let (rows, cols) = (node.rows, node.cols);
                let av = &self.nodes[a.0].val;
                let bv = &self.nodes[b.0].val;
                let na = self.needs(*a);
                let nb = self.needs(*b);
                let mut ga = take_grad(grads, a.0, av.len(), na);
                let mut gb = if a.0 == b.0 {
                    None
                } else {
                    take_grad(grads, b.0, bv.len(), nb)
                };
                for r in 0..rows {
                    for c in 0..cols {
                        let oi = r * cols + c;
                        let (ia, ib) = bcast_idx(*bc, r, c, cols);
                        let gv = g[oi];
                        let (da, db) = match kind {
                            BinKind::Add => (F::one(), F::one()),
                            BinKind::Sub => (F::one(), -F::one()),
                            BinKind::Mul => (bv[ib], av[ia]),
                            BinKind::Div => {
                                let inv = bv[ib].recip();
                                (inv, -av[ia] * inv * inv)
                            }
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] = ga[ia] + gv * da;
                            if a.0 == b.0 {
                                ga[ib] = ga[ib] + gv * db;
                            }
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] = gb[ib] + gv * db;
                        }
                    }
                }
                put_grad(grads, a.0, ga);
                put_grad(grads, b.0, gb);
            }
            Op::Scale(x, c) => {
                self.accum_mapped(grads, *x, g, |gv, _xv, _yv| gv * *c);
            }
            Op::AddScalar(x, _) => {
                self.accum_mapped(grads, *x, g, |gv, _xv, _yv| gv);
            }
            Op::Exp(x) => {
                let out = &node.val;
                self.accum_indexed(grads, *x, |k| g[k] * out[k]);
            }
            Op::Log(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| g[k] / xv[k]);
            }
            Op::Sqrt(x) => {
                let out = &node.val;
                let half = F::from_f64(0.5);
                self.accum_indexed(grads, *x, |k| g[k] * half / out[k]);
            }
            Op::Abs(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| {
                    if xv[k] >= F::zero() {
                        g[k]
                    } else {
                        -g[k]
                    }
                });
            }
            Op::Sin(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| g[k] * xv[k].cos());
            }
            Op::Cos(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| -g[k] * xv[k].sin());
            }
            Op::Powf(x, p) => {
                let xv = &self.nodes[x.0].val;
                let pm1 = *p - F::one();
                self.accum_indexed(grads, *x, |k| g[k] * *p * xv[k].powf(pm1));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| {
                    if xv[k] >= *lo && xv[k] <= *hi {
                        g[k]
                    } else {
                        F::zero()
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out = &node.val;
                self.accum_indexed(grads, *x, |k| g[k] * out[k] * (F::one() - out[k]));
            }
            Op::Tanh(x) => {
                let out = &node.val;
                self.accum_indexed(grads, *x, |k| g[k] * (F::one() - out[k] * out[k]));
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| {
                    if xv[k] > F::zero() {
                        g[k]
                    } else {
                        F::zero()
                    }
                });
            }
            Op::Silu(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| {
                    let s = sigmoid_stable(xv[k]);
                    g[k] * s * (F::one() + xv[k] * (F::one() - s))
                });
            }
            Op::Softplus(x) => {
                let xv = &self.nodes[x.0].val;
                self.accum_indexed(grads, *x, |k| g[k] * sigmoid_stable(xv[k]));
            }
            Op::Erf(x) => {
                let xv = &self.nodes[x.0].val;
                let c = F::from_f64(2.0 / std::f64::consts::PI.sqrt());
                self.accum_indexed(grads, *x, |k| g[k] * c * (-xv[k] * xv[k]).exp());
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let av = &self.nodes[a.0].val;
                let bv = &self.nodes[b.0].val;
                let na = self.needs(*a);
                let nb = self.needs(*b);
                let mut ga = take_grad(grads, a.0, av.len(), na);
                let mut gb = if a.0 == b.0 {
                    None
                } else {
                    take_grad(grads, b.0, bv.len(), nb)
                };
                if let Some(ga) = ga.as_mut() {
                    // dA = g @ B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = F::zero();
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bv[p * n..(p + 1) * n];
                            for j in 0..n {
                                s = s + grow[j] * brow[j];
                            }
                            ga[i * k + p] = ga[i * k + p] + s;
                        }
                    }
                    if a.0 == b.0 {
                        accumulate_db(av, g, ga, m, k, n);
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    accumulate_db(av, g, gb, m, k, n);
                }
                put_grad(grads, a.0, ga);
                put_grad(grads, b.0, gb);
            }
            Op::Transpose(x) => {
                let (r, c) = (node.rows, node.cols); // transposed dims
                if self.needs(*x) {
                    let mut gx = take_grad(grads, x.0, r * c, true);
                    if let Some(gx) = gx.as_mut() {
                        for i in 0..r {
                            for j in 0..c {
                                gx[j * r + i] = gx[j * r + i] + g[i * c + j];
                            }
                        }
                    }
                    put_grad(grads, x.0, gx);
                }
            }
            Op::ConcatRows(parts) => {
                let cols = node.cols;
                let mut row = 0;
                for &p in parts {
                    let (pr, _) = self.dims(p);
                    if self.needs(p) {
                        let mut gp = take_grad(grads, p.0, pr * cols, true);
                        if let Some(gp) = gp.as_mut() {
                            for (dst, src) in
                                gp.iter_mut().zip(&g[row * cols..(row + pr) * cols])
                            {
                                *dst = *dst + *src;
                            }
                        }
                        put_grad(grads, p.0, gp);
                    }
                    row += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.rows;
                let cols = node.cols;
                let mut col = 0;
                for &p in parts {
                    let (_, pc) = self.dims(p);
                    if self.needs(p) {
                        let mut gp = take_grad(grads, p.0, rows * pc, true);
                        if let Some(gp) = gp.as_mut() {
                            for r in 0..rows {
                                for j in 0..pc {
                                    gp[r * pc + j] = gp[r * pc + j] + g[r * cols + col + j];
                                }
                            }
                        }
                        put_grad(grads, p.0, gp);
                    }
                    col += pc;
                }
            }
            Op::SliceRows(x, start, _end) => {
                let (_, c) = self.dims(*x);
                if self.needs(*x) {
                    let numel = self.nodes[x.0].val.len();
                    let mut gx = take_grad(grads, x.0, numel, true);
                    if let Some(gx) = gx.as_mut() {
                        for (k, &gv) in g.iter().enumerate() {
                            gx[start * c + k] = gx[start * c + k] + gv;
                        }
                    }
                    put_grad(grads, x.0, gx);
                }
            }
            Op::SliceCols(x, start, _end) => {
                let (r, c) = self.dims(*x);
                let w = node.cols;
                if self.needs(*x) {
                    let mut gx = take_grad(grads, x.0, r * c, true);
                    if let Some(gx) = gx.as_mut() {
                        for i in 0..r {
                            for j in 0..w {
                                gx[i * c + start + j] = gx[i * c + start + j] + g[i * w + j];
                            }
                        }
                    }
                    put_grad(grads, x.0, gx);
                }
            }
            Op::Reshape(x) => {
                self.accum_indexed(grads, *x, |k| g[k]);
            }
            Op::SumAxis0(x) => {
                let (r, c) = self.dims(*x);
                self.accum_shaped(grads, *x, r, c, |_i, j| g[j]);
            }
            Op::SumAxis1(x) => {
                let (r, c) = self.dims(*x);
                self.accum_shaped(grads, *x, r, c, |i, _j| g[i]);
            }
            Op::MeanAxis0(x) => {
                let (r, c) = self.dims(*x);
                let inv = F::from_usize(r).recip();
                self.accum_shaped(grads, *x, r, c, |_i, j| g[j] * inv);
            }
            Op::MeanAxis1(x) => {
                let (r, c) = self.dims(*x);
                let inv = F::from_usize(c).recip();
                self.accum_shaped(grads, *x, r, c, |i, _j| g[i] * inv);
            }
            Op::SumAll(x) => {
                let gv = g[0];
                self.accum_indexed(grads, *x, |_k| gv);
            }
            Op::MeanAll(x) => {
                let n = self.nodes[x.0].val.len();
                let gv = g[0] * F::from_usize(n).recip();
                self.accum_indexed(grads, *x, |_k| gv);
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = self.dims(*x);
                let y = &node.val;
                if self.needs(*x) {
                    let mut gx = take_grad(grads, x.0, r * c, true);
                    if let Some(gx) = gx.as_mut() {
                        for i in 0..r {
                            let yrow = &y[i * c..(i + 1) * c];
                            let grow = &g[i * c..(i + 1) * c];
                            let dot = yrow
                                .iter()
                                .zip(grow)
                                .map(|(&yv, &gv)| yv * gv)
                                .fold(F::zero(), |a, b| a + b);
                            for j in 0..c {
                                gx[i * c + j] =
                                    gx[i * c + j] + yrow[j] * (grow[j] - dot);
                            }
                        }
                    }
                    put_grad(grads, x.0, gx);
                }
            }
            Op::RmsNormRows(x, eps) => {
                let (r, c) = self.dims(*x);
                let xv = &self.nodes[x.0].val;
                if self.needs(*x) {
                    let mut gx = take_grad(grads, x.0, r * c, true);
                    if let Some(gx) = gx.as_mut() {
                        let cn = F::from_usize(c);
                        for i in 0..r {
                            let row = &xv[i * c..(i + 1) * c];
                            let grow = &g[i * c..(i + 1) * c];
                            let ms = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b)
                                / cn;
                            let inv = (ms + *eps).sqrt().recip();
                            let inv3 = inv * inv * inv;
                            let dot = row
                                .iter()
                                .zip(grow)
                                .map(|(&xv_, &gv)| xv_ * gv)
                                .fold(F::zero(), |a, b| a + b);
                            for j in 0..c {
                                gx[i * c + j] = gx[i * c + j] + grow[j] * inv
                                    - row[j] * dot * inv3 / cn;
                            }
                        }
                    }
                    put_grad(grads, x.0, gx);
                }
            }
            Op::CumprodAxis0(x) => {
                let (r, c) = self.dims(*x);
                let xv = &self.nodes[x.0].val;
                if self.needs(*x) {
                    let mut gx = take_grad(grads, x.0, r * c, true);
                    if let Some(gx) = gx.as_mut() {
                        // dx[t] = sum_{i>=t} g[i] * prod_{k<=i, k!=t} x[k],
                        // computed with prefix products and a running
                        // partial product; exact even with zeros.
                        for j in 0..c {
                            let mut prefix = vec![F::one(); r];
                            for i in 1..r {
                                prefix[i] = prefix[i - 1] * xv[(i - 1) * c + j];
                            }
                            for t in 0..r {
                                let mut acc = F::zero();
                                let mut tail = F::one();
                                for i in t..r {
                                    if i > t {
                                        tail = tail * xv[i * c + j];
                                    }
                                    acc = acc + g[i * c + j] * prefix[t] * tail;
                                }
                                gx[t * c + j] = gx[t * c + j] + acc;
                            }
                        }
                    }
                    put_grad(grads, x.0, gx);
                }
            }
            Op::GatherRows(table, idx) => {
                let (tr, tc) = self.dims(*table);
                if self.needs(*table) {
                    let mut gt = take_grad(grads, table.0, tr * tc, true);
                    if let Some(gt) = gt.as_mut() {
                        for (k, &row) in idx.iter().enumerate() {
                            for j in 0..tc {
                                gt[row * tc + j] = gt[row * tc + j] + g[k * tc + j];
                            }
                        }
                    }
                    put_grad(grads, table.0, gt);
                }
            }
            Op::Custom(inputs, op) => {
                let views: Vec<(&[F], usize, usize)> = inputs
                    .iter()
                    .map(|&p| {
                        let n = &self.nodes[p.0];
                        (n.val.as_slice(), n.rows, n.cols)
                    })
                    .collect();
                let needs: Vec<bool> = inputs.iter().map(|&p| self.needs(p)).collect();
                let input_grads = op.backward(g, &views, &needs);
                for (slot, (&p, gin)) in inputs.iter().zip(input_grads).enumerate() {
                    if let Some(gin) = gin {
                        let numel = self.nodes[p.0].val.len();
                        assert_eq!(
                            gin.len(),
                            numel,
                            "custom op `{}` input {} grad length",
                            op.name(),
                            slot
                        );
                        let mut gp = take_grad(grads, p.0, numel, true);
                        if let Some(gp) = gp.as_mut() {
                            for (dst, src) in gp.iter_mut().zip(&gin) {
                                *dst = *dst + *src;
                            }
                        }
                        put_grad(grads, p.0, gp);
                    }
                }
            }
        }
        Ok(())
    }

    fn accum_indexed(
        &self,
        grads: &mut Vec<Option<Vec<F>>>,
        x: TensorRef,
        f: impl Fn(usize) -> F,
    ) {
        if !self.needs(x) {
            return;
        }
        let numel = self.nodes[x.0].val.len();
        let mut gx = take_grad(grads, x.0, numel, true);
        if let Some(gx) = gx.as_mut() {
            for (k, dst) in gx.iter_mut().enumerate() {
                *dst = *dst + f(k);
            }
        }
        put_grad(grads, x.0, gx);
    }

    fn accum_mapped(
        &self,
        grads: &mut Vec<Option<Vec<F>>>,
        x: TensorRef,
        g: &[F],
        f: impl Fn(F, F, F) -> F,
    ) {
        let xv = &self.nodes[x.0].val;
        self.accum_indexed(grads, x, |k| f(g[k], xv[k], F::zero()));
    }

    fn accum_shaped(
        &self,
        grads: &mut Vec<Option<Vec<F>>>,
        x: TensorRef,
        rows: usize,
        cols: usize,
        f: impl Fn(usize, usize) -> F,
    ) {
        if !self.needs(x) {
            return;
        }
        let mut gx = take_grad(grads, x.0, rows * cols, true);
        if let Some(gx) = gx.as_mut() {
            for i in 0..rows {
                for j in 0..cols {
                    gx[i * cols + j] = gx[i * cols + j] + f(i, j);
                }
            }
        }
        put_grad(grads, x.0, gx);
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

// ── Helpers ──────────────────────────────────────────────────────────

fn take_grad<F: Real>(
    grads: &mut [Option<Vec<F>>],
    i: usize,
    numel: usize,
    needs: bool,
) -> Option<Vec<F>> {
    if !needs {
        return None;
    }
    Some(
        grads[i]
            .take()
            .unwrap_or_else(|| vec![F::zero(); numel]),
    )
}

fn put_grad<F: Real>(grads: &mut [Option<Vec<F>>], i: usize, g: Option<Vec<F>>) {
    if let Some(g) = g {
        grads[i] = Some(g);
    }
}

/// dB = A^T @ g, accumulated with the same ikj ordering as the forward.
fn accumulate_db<F: Real>(av: &[F], g: &[F], gb: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &av[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            let brow = &mut gb[p * n..(p + 1) * n];
            for j in 0..n {
                brow[j] = brow[j] + ap * grow[j];
            }
        }
    }
}

pub(crate) fn matmul_raw<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + ap * brow[j];
            }
        }
    }
}

fn sigmoid_stable<F: Real>(x: F) -> F {
    if x >= F::zero() {
        (F::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus_stable<F: Real>(x: F) -> F {
    let z = if x > F::zero() { x } else { F::zero() };
    z + (-x.abs()).exp().ln_1p()
}

fn resolve_bcast(
    op: &'static str,
    ra: usize,
    ca: usize,
    rb: usize,
    cb: usize,
) -> Result<(Bcast, usize, usize)> {
    if ra == rb && ca == cb {
        return Ok((Bcast::Same, ra, ca));
    }
    if ra == 1 && ca == 1 {
        return Ok((Bcast::LhsScalar, rb, cb));
    }
    if rb == 1 && cb == 1 {
        return Ok((Bcast::RhsScalar, ra, ca));
    }
    if ra == 1 && ca == cb {
        return Ok((Bcast::LhsRow, rb, cb));
    }
    if rb == 1 && cb == ca {
        return Ok((Bcast::RhsRow, ra, ca));
    }
    if ca == 1 && ra == rb {
        return Ok((Bcast::LhsCol, rb, cb));
    }
    if cb == 1 && rb == ra {
        return Ok((Bcast::RhsCol, ra, ca));
    }
    Err(GradError::ShapeMismatch {
        op,
        lhs: vec![ra, ca],
        rhs: vec![rb, cb],
    })
}

#[inline]
fn bcast_idx(bc: Bcast, r: usize, c: usize, cols: usize) -> (usize, usize) {
    let full = r * cols + c;
    match bc {
        Bcast::Same => (full, full),
        Bcast::LhsScalar => (0, full),
        Bcast::RhsScalar => (full, 0),
        Bcast::LhsRow => (c, full),
        Bcast::RhsRow => (full, c),
        Bcast::LhsCol => (r, full),
        Bcast::RhsCol => (full, r),
    }
}

fn bin_name(kind: BinKind) -> &'static str {
    match kind {
        BinKind::Add => "add",
        BinKind::Sub => "sub",
        BinKind::Mul => "mul",
        BinKind::Div => "div",
    }
}

fn op_name<F: Real>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param => "param",
        Op::Bin(k, ..) => bin_name(*k),
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Exp(_) => "exp",
        Op::Log(_) => "log",
        Op::Sqrt(_) => "sqrt",
        Op::Abs(_) => "abs",
        Op::Sin(_) => "sin",
        Op::Cos(_) => "cos",
        Op::Powf(..) => "powf",
        Op::Clamp(..) => "clamp",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Silu(_) => "silu",
        Op::Softplus(_) => "softplus",
        Op::Erf(_) => "erf",
        Op::Matmul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::Reshape(_) => "reshape",
        Op::SumAxis0(_) => "sum_axis0",
        Op::SumAxis1(_) => "sum_axis1",
        Op::MeanAxis0(_) => "mean_axis0",
        Op::MeanAxis1(_) => "mean_axis1",
        Op::SumAll(_) => "sum_all",
        Op::MeanAll(_) => "mean_all",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::RmsNormRows(..) => "rms_norm_rows",
        Op::CumprodAxis0(_) => "cumprod_axis0",
        Op::GatherRows(..) => "gather_rows",
        Op::Custom(_, op) => op.name(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape64() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn silu_at_zero_is_zero() {
        let mut t = tape64();
        let x = t.scalar(0.0).unwrap();
        let y = t.silu(x).unwrap();
        assert_eq!(t.scalar_value(y).unwrap(), 0.0);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut t = tape64();
        let x = t.scalar(0.0).unwrap();
        let y = t.softplus(x).unwrap();
        assert!((t.scalar_value(y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn erf_at_zero_is_zero() {
        let mut t = tape64();
        let x = t.scalar(0.0).unwrap();
        let y = t.erf(x).unwrap();
        assert_eq!(t.scalar_value(y).unwrap(), 0.0);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        use crate::store::ParamStore;
        let mut store = ParamStore::<f64>::new();
        let w = store
            .register("w", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), true)
            .unwrap();
        let mut t = tape64();
        let wr = t.param(&store, w).unwrap();
        let sq = t.mul(wr, wr).unwrap();
        let loss = t.sum_all(sq).unwrap();
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(w).tensor.grad.as_deref().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        use crate::store::ParamStore;
        let mut store = ParamStore::<f64>::new();
        let w = store
            .register("w", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), true)
            .unwrap();
        let mut t = tape64();
        let _wr = t.param(&store, w).unwrap();
        let c = t.scalar(3.0).unwrap();
        let loss = t.sum_all(c).unwrap();
        t.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(w).tensor.grad.as_deref().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = tape64();
        let x = t.leaf_vec(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            t.backward(x),
            Err(GradError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn second_backward_rejected() {
        let mut t = tape64();
        let x = t.scalar(1.0).unwrap();
        t.backward(x).unwrap();
        assert!(matches!(t.backward(x), Err(GradError::GraphConsumed)));
    }

    #[test]
    fn finite_check_catches_nan() {
        let mut t = tape64();
        t.set_check_finite(true);
        let x = t.scalar(-1.0).unwrap();
        assert!(matches!(t.log(x), Err(GradError::NonFinite { op: "log" })));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = tape64();
        let x = t
            .leaf_vec(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0])
            .unwrap();
        let y = t.softmax_rows(x).unwrap();
        let d = t.data(y);
        for i in 0..2 {
            let s: f64 = d[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let mut t = tape64();
        let a = t.leaf_vec(2, 3, vec![0.0; 6]).unwrap();
        let b = t.leaf_vec(2, 3, vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]"), "{msg}");
    }
}
