//! Seeded weight initializers. All sampling happens in f64 and is converted,
//! so f32 and f64 runs draw identical underlying values.

use crate::real::Real;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn zeros<F: Real>(shape: Vec<usize>) -> Tensor<F> {
    Tensor::zeros(shape)
}

pub fn full<F: Real>(shape: Vec<usize>, v: f64) -> Tensor<F> {
    let numel: usize = shape.iter().product();
    Tensor {
        shape,
        data: vec![F::from_f64(v); numel],
        requires_grad: false,
        grad: None,
    }
}

pub fn uniform<F: Real>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| F::from_f64(rng.random_range(lo..hi)))
        .collect();
    Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
    }
}

pub fn normal<F: Real>(shape: Vec<usize>, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let dist = Normal::new(mean, std).expect("valid normal");
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| F::from_f64(dist.sample(rng)))
        .collect();
    Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
    }
}

/// Kaiming-uniform fan-in init for a `[fan_in, fan_out]` linear map.
pub fn linear_weight<F: Real>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    uniform(vec![fan_in, fan_out], -bound, bound, rng)
}

pub fn linear_bias<F: Real>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    uniform(vec![1, fan_out], -bound, bound, rng)
}

/// `a_log` init: A = -exp(a_log) with exp(a_log) uniform in [1, 16).
pub fn a_log_init<F: Real>(heads: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let data = (0..heads)
        .map(|_| F::from_f64(rng.random_range(1.0f64..16.0).ln()))
        .collect();
    Tensor {
        shape: vec![1, heads],
        data,
        requires_grad: false,
        grad: None,
    }
}

/// Timescale bias init: softplus(b) lands in [dt_min, dt_max), log-uniform.
pub fn delta_bias_init<F: Real>(
    heads: usize,
    dt_min: f64,
    dt_max: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<F> {
    let data = (0..heads)
        .map(|_| {
            let dt = (rng.random_range(dt_min.ln()..dt_max.ln())).exp();
            // inverse softplus: b = ln(e^dt - 1)
            F::from_f64((dt.exp_m1()).ln())
        })
        .collect();
    Tensor {
        shape: vec![1, heads],
        data,
        requires_grad: false,
        grad: None,
    }
}
