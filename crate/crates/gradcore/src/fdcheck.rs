//! Central finite-difference verification of analytic gradients.
//!
//! Always runs in f64: the engine's f32 mode cannot meet the tolerances
//! this oracle is asked to certify.

use crate::store::ParamStore;
use crate::tape::{Tape, TensorRef};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

#[derive(Debug, Clone)]
pub struct FdEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked_elems: usize,
    pub non_finite: bool,
}

/// Per-parameter comparison report; `failures(tol)` empty means pass.
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    pub fn failures(&self, tolerance: f64) -> Vec<&FdEntry> {
        self.entries
            .iter()
            .filter(|e| e.non_finite || e.max_rel_err > tolerance)
            .collect()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.failures(tolerance).is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    // the 1e-5 floor is the oracle's noise limit: below it, central
    // differences cannot certify relative accuracy, so tiny gradients are
    // effectively held to an absolute tolerance instead
    let denom = a.abs().max(n.abs()).max(1e-5);
    (a - n).abs() / denom
}

/// Compares the tape's analytic gradients of a deterministic scalar
/// function against central differences, for every trainable parameter the
/// function binds. Large parameters are subsampled (`max_elems_per_param`
/// seeded elements); `step` is scaled by `1 + |w|` per element.
pub fn finite_difference_check<E, Func>(
    store: &mut ParamStore<f64>,
    mut f: Func,
    step: f64,
    max_elems_per_param: usize,
    seed: u64,
) -> std::result::Result<FdReport, E>
where
    E: From<crate::GradError>,
    Func: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> std::result::Result<TensorRef, E>,
{
    // Analytic pass.
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.scalar_value(loss).map_err(E::from)?;
    tape.backward_into(loss, store).map_err(E::from)?;

    let analytic: Vec<(String, Vec<f64>, crate::ParamId)> = store
        .ids()
        .filter(|&id| store.get(id).trainable && store.get(id).tensor.grad.is_some())
        .map(|id| {
            let e = store.get(id);
            (
                e.name.clone(),
                e.tensor.grad.clone().unwrap_or_default(),
                id,
            )
        })
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();

    for (name, grad, id) in analytic {
        let numel = store.get(id).tensor.data.len();
        let indices: Vec<usize> = if numel <= max_elems_per_param {
            (0..numel).collect()
        } else {
            (0..max_elems_per_param)
                .map(|_| rng.random_range(0..numel))
                .collect()
        };

        let mut entry = FdEntry {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            checked_elems: indices.len(),
            non_finite: false,
        };

        for &i in &indices {
            let w0 = store.get(id).tensor.data[i];
            // power-of-two step: w ± h round-trips exactly, so linear
            // functions differentiate with zero error
            let h = 2f64.powi((step * (1.0 + w0.abs())).log2().round() as i32);

            store.get_mut(id).tensor.data[i] = w0 + h;
            let up = eval_scalar(&mut f, store)?;
            store.get_mut(id).tensor.data[i] = w0 - h;
            let down = eval_scalar(&mut f, store)?;
            store.get_mut(id).tensor.data[i] = w0;

            let numeric = (up - down) / (2.0 * h);
            let a = grad[i];
            if !a.is_finite() || !numeric.is_finite() {
                entry.non_finite = true;
                entry.worst_index = i;
                entry.analytic_at_worst = a;
                entry.numeric_at_worst = numeric;
                break;
            }
            let e = rel_err(a, numeric);
            if e > entry.max_rel_err {
                entry.max_rel_err = e;
                entry.worst_index = i;
                entry.analytic_at_worst = a;
                entry.numeric_at_worst = numeric;
            }
        }
        report.entries.push(entry);
    }
    store.zero_grads();
    Ok(report)
}

fn eval_scalar<E, Func>(f: &mut Func, store: &ParamStore<f64>) -> std::result::Result<f64, E>
where
    E: From<crate::GradError>,
    Func: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> std::result::Result<TensorRef, E>,
{
    let mut tape = Tape::inference();
    let loss = f(&mut tape, store)?;
    tape.scalar_value(loss).map_err(E::from)
}
