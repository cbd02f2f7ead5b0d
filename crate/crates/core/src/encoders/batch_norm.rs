//! Per-feature normalization of encoder outputs. Training mode pools every
//! support point of every document in the mini-batch; inference uses the
//! running statistics.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{visit_vector, Parameters};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormAffine {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNormAffine {
    pub fn identity(dim: usize) -> Self {
        BatchNormAffine {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        BatchNormAffine {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }
}

impl Parameters for BatchNormAffine {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        visit_vector(f, "gamma", &self.gamma);
        visit_vector(f, "beta", &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("gamma", self.gamma.as_slice_mut().unwrap());
        f("beta", self.beta.as_slice_mut().unwrap());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: Array1::zeros(dim),
            var: Array1::ones(dim),
        }
    }

    pub fn update(&mut self, batch_mean: &Array1<f64>, batch_var: &Array1<f64>) {
        self.mean = &self.mean * BN_MOMENTUM + batch_mean * (1.0 - BN_MOMENTUM);
        self.var = &self.var * BN_MOMENTUM + batch_var * (1.0 - BN_MOMENTUM);
    }
}

/// What the backward pass needs from a training-mode forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Vec<Array2<f64>>,
    inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    /// Biased (population) variance of the batch.
    pub var: Array1<f64>,
}

pub fn batch_norm_train(
    inputs: &[Array2<f64>],
    affine: &BatchNormAffine,
) -> (Vec<Array2<f64>>, BatchNormCache) {
    let dim = affine.gamma.len();
    let count: usize = inputs.iter().map(|z| z.nrows()).sum();
    let mut mean = Array1::<f64>::zeros(dim);
    for z in inputs {
        mean += &z.sum_axis(Axis(0));
    }
    mean /= count as f64;
    let mut var = Array1::<f64>::zeros(dim);
    for z in inputs {
        var += &(z - &mean).mapv(|v| v * v).sum_axis(Axis(0));
    }
    var /= count as f64;
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let normalized: Vec<Array2<f64>> = inputs.iter().map(|z| (z - &mean) * &inv_std).collect();
    let outputs = normalized
        .iter()
        .map(|xh| xh * &affine.gamma + &affine.beta)
        .collect();
    (
        outputs,
        BatchNormCache {
            normalized,
            inv_std,
            mean,
            var,
        },
    )
}

pub fn batch_norm_infer(
    z: &Array2<f64>,
    affine: &BatchNormAffine,
    stats: &RunningStats,
) -> Array2<f64> {
    let inv_std = stats.var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    (z - &stats.mean) * &inv_std * &affine.gamma + &affine.beta
}

/// Gradients for the inputs and the affine parameters. The batch statistics
/// are differentiated through, as in training mode.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    affine: &BatchNormAffine,
    upstream: &[Array2<f64>],
) -> (Vec<Array2<f64>>, BatchNormAffine) {
    let dim = affine.gamma.len();
    let count: usize = cache.normalized.iter().map(|x| x.nrows()).sum();
    let mut grads = BatchNormAffine::zeros(dim);
    let mut sum_dxh = Array1::<f64>::zeros(dim);
    let mut sum_dxh_xh = Array1::<f64>::zeros(dim);
    let dxhs: Vec<Array2<f64>> = upstream.iter().map(|dy| dy * &affine.gamma).collect();
    for ((dy, xh), dxh) in upstream.iter().zip(&cache.normalized).zip(&dxhs) {
        grads.beta += &dy.sum_axis(Axis(0));
        grads.gamma += &(dy * xh).sum_axis(Axis(0));
        sum_dxh += &dxh.sum_axis(Axis(0));
        sum_dxh_xh += &(dxh * xh).sum_axis(Axis(0));
    }
    let n = count as f64;
    let mean_dxh = sum_dxh / n;
    let mean_dxh_xh = sum_dxh_xh / n;
    let dz = dxhs
        .iter()
        .zip(&cache.normalized)
        .map(|(dxh, xh)| (dxh - &mean_dxh - &(xh * &mean_dxh_xh)) * &cache.inv_std)
        .collect();
    (dz, grads)
}
