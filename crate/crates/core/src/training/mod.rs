//! Margin triplet loss on Wasserstein distances between encoded documents,
//! minimized with Adam.

pub mod adam;
pub mod triplets;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddedDoc;
use crate::encoders::batch_norm::{batch_norm_backward, batch_norm_train};
use crate::encoders::{Encoder, EncoderConfig, EncoderParams, NetCache, Parameters};
use crate::error::{Error, Result};
use crate::ot::{pairwise_cost, sinkhorn_with_cost, support_grads, SinkhornConfig};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use triplets::{negative_class_probabilities, sample_triplets, Triplet, TripletSample};

pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    /// Triplets per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub triplets_per_anchor: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub resample_each_epoch: bool,
    /// Global gradient-norm cap, off when `None`.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: DEFAULT_MARGIN,
            learning_rate: 0.01,
            batch_size: 408,
            epochs: 5,
            triplets_per_anchor: 8,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            resample_each_epoch: false,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.margin >= 0.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.triplets_per_anchor > 0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.clip_grad_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid training configuration: {self:?}"
            )))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// `max(w_ap - w_an + margin, 0)`
pub fn triplet_loss(w_ap: f64, w_an: f64, margin: f64) -> f64 {
    (w_ap - w_an + margin).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Fraction of triplets with a strictly positive loss, per epoch.
    pub epoch_active_fraction: Vec<f64>,
    pub num_triplets: usize,
    pub skipped_anchors: Vec<String>,
    pub optimizer_steps: u64,
    /// Sinkhorn solves that hit the iteration cap.
    pub unconverged_solves: usize,
    pub seed: u64,
}

/// Loss and gradients for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    pub active: usize,
    pub grads: EncoderParams,
    /// Batch mean and variance when normalization is on.
    pub batch_stats: Option<(ndarray::Array1<f64>, ndarray::Array1<f64>)>,
    pub unconverged: usize,
}

struct TripletTerm {
    loss: f64,
    unconverged: usize,
    grads: Option<[Array2<f64>; 4]>,
}

/// Mean hinge loss over `batch` and its exact gradient given fixed
/// transport plans. Normalization uses the statistics of this batch.
pub fn triplet_batch(
    encoder: &Encoder,
    docs: &[EmbeddedDoc],
    batch: &[Triplet],
    sinkhorn: &SinkhornConfig,
    margin: f64,
) -> Result<BatchOutcome> {
    if batch.is_empty() {
        return Err(Error::Internal("empty mini-batch".into()));
    }
    let exact = encoder.config.squashed_cell;
    let mut slots: BTreeMap<usize, usize> = BTreeMap::new();
    for t in batch {
        for idx in [t.anchor, t.positive, t.negative] {
            let next = slots.len();
            slots.entry(idx).or_insert(next);
        }
    }
    let order: Vec<usize> = {
        let mut v = vec![0; slots.len()];
        for (&doc, &slot) in &slots {
            v[slot] = doc;
        }
        v
    };

    let forwards: Vec<(Array2<f64>, NetCache)> = order
        .par_iter()
        .map(|&d| {
            encoder
                .params
                .net
                .forward_cached(docs[d].matrix.view(), exact)
        })
        .collect::<Result<_>>()?;
    let (raw, caches): (Vec<_>, Vec<_>) = forwards.into_iter().unzip();

    let (points, bn_cache) = match &encoder.params.batch_norm {
        Some(affine) => {
            let (out, cache) = batch_norm_train(&raw, affine);
            (out, Some(cache))
        }
        None => (raw, None),
    };

    let scale = 1.0 / batch.len() as f64;
    let terms: Vec<TripletTerm> = batch
        .par_iter()
        .map(|t| -> Result<TripletTerm> {
            let a = &points[slots[&t.anchor]];
            let p = &points[slots[&t.positive]];
            let n = &points[slots[&t.negative]];
            let ua = uniform(a.nrows());
            let c_ap = pairwise_cost(a.view(), p.view())?;
            let c_an = pairwise_cost(a.view(), n.view())?;
            let r_ap = sinkhorn_with_cost(&c_ap, &ua, &uniform(p.nrows()), sinkhorn)?;
            let r_an = sinkhorn_with_cost(&c_an, &ua, &uniform(n.nrows()), sinkhorn)?;
            let loss = triplet_loss(r_ap.cost, r_an.cost, margin);
            let unconverged = usize::from(!r_ap.converged) + usize::from(!r_an.converged);
            let grads = if loss > 0.0 {
                let (ga1, gp) = support_grads(&r_ap.plan, a.view(), p.view());
                let (ga2, gn) = support_grads(&r_an.plan, a.view(), n.view());
                Some([ga1 * scale, gp * scale, ga2 * -scale, gn * -scale])
            } else {
                None
            };
            Ok(TripletTerm {
                loss,
                unconverged,
                grads,
            })
        })
        .collect::<Result<_>>()?;

    let mut upstream: Vec<Array2<f64>> = points.iter().map(|p| Array2::zeros(p.dim())).collect();
    let mut loss = 0.0;
    let mut active = 0;
    let mut unconverged = 0;
    for (t, term) in batch.iter().zip(&terms) {
        loss += term.loss;
        unconverged += term.unconverged;
        if let Some([ga1, gp, ga2, gn]) = &term.grads {
            active += 1;
            upstream[slots[&t.anchor]] += ga1;
            upstream[slots[&t.positive]] += gp;
            upstream[slots[&t.anchor]] += ga2;
            upstream[slots[&t.negative]] += gn;
        }
    }
    loss *= scale;

    let mut grads = encoder.params.zeros_like();
    let (dz, batch_stats) = match (&encoder.params.batch_norm, &bn_cache) {
        (Some(affine), Some(cache)) => {
            let (dz, bn_grads) = batch_norm_backward(cache, affine, &upstream);
            grads.batch_norm = Some(bn_grads);
            (dz, Some((cache.mean.clone(), cache.var.clone())))
        }
        _ => (upstream, None),
    };

    let net_grads: Vec<_> = order
        .par_iter()
        .enumerate()
        .map(|(slot, _)| encoder.params.net.backward(&caches[slot], dz[slot].view()))
        .collect::<Result<_>>()?;
    for (g, _) in &net_grads {
        grads.net.add_assign(g);
    }

    Ok(BatchOutcome {
        loss,
        active,
        grads,
        batch_stats,
        unconverged,
    })
}

fn uniform(n: usize) -> ndarray::Array1<f64> {
    ndarray::Array1::from_elem(n, 1.0 / n as f64)
}

/// Train a freshly initialized encoder.
pub fn train(
    docs: &[EmbeddedDoc],
    num_levels: u8,
    encoder_config: &EncoderConfig,
    sinkhorn: &SinkhornConfig,
    cfg: &TrainConfig,
) -> Result<(Encoder, TrainReport, AdamState)> {
    let encoder = Encoder::new(encoder_config.clone())?;
    train_encoder(encoder, docs, num_levels, sinkhorn, cfg)
}

/// Continue training `encoder` on `docs`. Deterministic given `cfg.seed`.
pub fn train_encoder(
    mut encoder: Encoder,
    docs: &[EmbeddedDoc],
    num_levels: u8,
    sinkhorn: &SinkhornConfig,
    cfg: &TrainConfig,
) -> Result<(Encoder, TrainReport, AdamState)> {
    cfg.validate()?;
    sinkhorn.validate()?;
    let scores: Vec<u8> = docs.iter().map(|d| d.score).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sample = sample_triplets(&scores, num_levels, cfg.triplets_per_anchor, &mut rng)?;
    let skipped_anchors = sample
        .skipped_anchors
        .iter()
        .map(|&i| docs[i].id.clone())
        .collect();
    let num_triplets = sample.triplets.len();

    let adam_cfg = cfg.adam();
    let mut state = AdamState::new(encoder.params.num_params());
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        epoch_active_fraction: Vec::with_capacity(cfg.epochs),
        num_triplets,
        skipped_anchors,
        optimizer_steps: 0,
        unconverged_solves: 0,
        seed: cfg.seed,
    };

    let mut batch_index = 0usize;
    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.resample_each_epoch {
            sample = sample_triplets(&scores, num_levels, cfg.triplets_per_anchor, &mut rng)?;
        }
        let mut order = sample.triplets.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut active = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut out = triplet_batch(&encoder, docs, batch, sinkhorn, cfg.margin)?;
            if !out.loss.is_finite() || !out.grads.all_finite() {
                return Err(Error::Training(format!(
                    "loss diverged in mini-batch {batch_index} (epoch {epoch})"
                )));
            }
            loss_sum += out.loss * batch.len() as f64;
            active += out.active;
            report.unconverged_solves += out.unconverged;
            if let (Some(stats), Some((mean, var))) = (&mut encoder.running, &out.batch_stats) {
                stats.update(mean, var);
            }
            if let Some(max_norm) = cfg.clip_grad_norm {
                let norm = out.grads.squared_norm().sqrt();
                if norm > max_norm {
                    out.grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut encoder.params, &out.grads, &mut state, &adam_cfg);
            report.optimizer_steps += 1;
            batch_index += 1;
        }
        let n = order.len() as f64;
        report.epoch_losses.push(loss_sum / n);
        report.epoch_active_fraction.push(active as f64 / n);
        log::info!(
            "epoch {}: mean loss {:.6}, active {:.3}",
            epoch + 1,
            loss_sum / n,
            active as f64 / n
        );
    }
    if report.unconverged_solves > 0 {
        log::warn!(
            "{} Sinkhorn solves stopped at the iteration cap",
            report.unconverged_solves
        );
    }
    Ok((encoder, report, state))
}
