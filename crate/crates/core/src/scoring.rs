//! Score prediction: Wasserstein K-nearest-neighbours over trained
//! representations, and the mean-pooled recurrent baselines.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddedDoc;
use crate::encoders::{Encoder, EncoderConfig, EncoderKind, Parameters};
use crate::error::{Error, Result};
use crate::ot::{make_distribution, sinkhorn, DocDistribution, SinkhornConfig};
use crate::training::{adam_step, AdamConfig, AdamState};

pub const DEFAULT_K: usize = 7;
pub const RIDGE_FALLBACK: f64 = 1e-6;

/// Nearest integer, halves away from zero, clamped to `[1, num_levels]`.
pub fn round_score(raw: f64, num_levels: u8) -> u8 {
    raw.round().clamp(1.0, num_levels as f64) as u8
}

/// The prediction rule applied to neighbour scores.
pub fn score_from_neighbors(scores: &[u8], num_levels: u8) -> (u8, f64) {
    let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64;
    (round_score(mean, num_levels), mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: u8,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub predicted_score: u8,
    pub raw_mean: f64,
    /// Ascending by distance, ties by id.
    pub neighbors: Vec<Neighbor>,
}

struct Reference {
    id: String,
    score: u8,
    dist: DocDistribution,
}

pub struct KnnModel {
    encoder: Encoder,
    references: Vec<Reference>,
    k: usize,
    num_levels: u8,
    sinkhorn: SinkhornConfig,
}

/// Encode every training document once with the trained encoder.
pub fn build_knn(
    train: &[EmbeddedDoc],
    encoder: Encoder,
    k: usize,
    num_levels: u8,
    sinkhorn: SinkhornConfig,
) -> Result<KnnModel> {
    if k == 0 || k > train.len() {
        return Err(Error::Config(format!(
            "K = {k} must be in [1, {}] (training set size)",
            train.len()
        )));
    }
    sinkhorn.validate()?;
    let references = train
        .par_iter()
        .map(|d| {
            let out = encoder.encode(d)?;
            Ok(Reference {
                id: d.id.clone(),
                score: d.score,
                dist: make_distribution(&out)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnnModel {
        encoder,
        references,
        k,
        num_levels,
        sinkhorn,
    })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn predict(&self, doc: &EmbeddedDoc) -> Result<Prediction> {
        let query = make_distribution(&self.encoder.encode(doc)?)?;
        let distances = self
            .references
            .par_iter()
            .map(|r| Ok(sinkhorn(&query, &r.dist, &self.sinkhorn)?.cost))
            .collect::<Result<Vec<f64>>>()?;
        let mut ranked: Vec<Neighbor> = self
            .references
            .iter()
            .zip(distances)
            .map(|(r, distance)| Neighbor {
                id: r.id.clone(),
                score: r.score,
                distance,
            })
            .collect();
        ranked.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| a.id.cmp(&b.id))
        });
        ranked.truncate(self.k);
        let scores: Vec<u8> = ranked.iter().map(|n| n.score).collect();
        let (predicted_score, raw_mean) = score_from_neighbors(&scores, self.num_levels);
        Ok(Prediction {
            doc_id: doc.id.clone(),
            predicted_score,
            raw_mean,
            neighbors: ranked,
        })
    }

    pub fn predict_all(&self, docs: &[EmbeddedDoc]) -> Result<Vec<Prediction>> {
        docs.iter().map(|d| self.predict(d)).collect()
    }
}

/// How the baseline maps pooled vectors to scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineHead {
    /// Least squares on vectors from the (randomly initialized) encoder.
    Ols,
    /// Encoder and linear head trained jointly on squared error with Adam.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub head: BaselineHead,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            head: BaselineHead::Ols,
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePrediction {
    pub doc_id: String,
    pub predicted_score: u8,
    pub raw: f64,
}

/// Mean of the support points.
pub fn mean_pool(encoder: &Encoder, doc: &EmbeddedDoc) -> Result<Array1<f64>> {
    let z = encoder
        .params
        .net
        .forward(doc.matrix.view(), encoder.config.squashed_cell)?;
    Ok(z.mean_axis(Axis(0)).expect("documents are nonempty"))
}

/// Linear model `w . x + b` fitted by least squares. Falls back to a small
/// ridge penalty when the normal equations are singular.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub ridge_used: bool,
}

impl LinearRegressor {
    pub fn fit(features: &[Array1<f64>], targets: &[f64]) -> Result<Self> {
        let n = features.len();
        if n == 0 || n != targets.len() {
            return Err(Error::Validation(
                "regression needs matching, nonempty inputs".into(),
            ));
        }
        let d = features[0].len();
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j < d { features[i][j] } else { 1.0 });
        let y = DVector::from_column_slice(targets);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let (solution, ridge_used) = match xtx.clone().cholesky() {
            Some(ch) if well_conditioned(&ch) => (ch.solve(&xty), false),
            _ => {
                log::warn!("normal equations are singular; using ridge lambda = {RIDGE_FALLBACK}");
                let ridge = xtx + DMatrix::identity(d + 1, d + 1) * RIDGE_FALLBACK;
                let sol = ridge
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&xty))
                    .or_else(|| ridge.lu().solve(&xty))
                    .ok_or_else(|| Error::Numerical("ridge system could not be solved".into()))?;
                (sol, true)
            }
        };
        Ok(LinearRegressor {
            weights: Array1::from_iter(solution.iter().take(d).copied()),
            bias: solution[d],
            ridge_used,
        })
    }

    pub fn predict(&self, x: &Array1<f64>) -> f64 {
        self.weights.dot(x) + self.bias
    }
}

fn well_conditioned(ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let diag = ch.l_dirty().diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // squared ratio approximates the condition number of X^T X
    max > 0.0 && (min / max).powi(2) > 1e-14
}

/// Mean-pooled LSTM/biLSTM baseline: encode, average hidden states, regress.
pub fn baseline_mean_pool_predict(
    train: &[EmbeddedDoc],
    test: &[EmbeddedDoc],
    encoder_config: &EncoderConfig,
    num_levels: u8,
    cfg: &BaselineConfig,
) -> Result<Vec<BaselinePrediction>> {
    if encoder_config.kind == EncoderKind::Cnn {
        return Err(Error::Config(
            "mean-pool baselines use an LSTM or biLSTM encoder".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Validation(
            "baseline needs training documents".into(),
        ));
    }
    let enc_cfg = EncoderConfig {
        batch_norm: false,
        ..encoder_config.clone()
    };
    let mut encoder = Encoder::new(enc_cfg)?;
    let targets: Vec<f64> = train.iter().map(|d| d.score as f64).collect();

    let head = match cfg.head {
        BaselineHead::Ols => {
            let feats = pooled(&encoder, train)?;
            LinearRegressor::fit(&feats, &targets)?
        }
        BaselineHead::Trained => train_regression_head(&mut encoder, train, &targets, cfg)?,
    };
    let feats = pooled(&encoder, test)?;
    Ok(test
        .iter()
        .zip(feats)
        .map(|(d, x)| {
            let raw = head.predict(&x);
            BaselinePrediction {
                doc_id: d.id.clone(),
                predicted_score: round_score(raw.clamp(1.0, num_levels as f64), num_levels),
                raw,
            }
        })
        .collect())
}

fn pooled(encoder: &Encoder, docs: &[EmbeddedDoc]) -> Result<Vec<Array1<f64>>> {
    docs.par_iter().map(|d| mean_pool(encoder, d)).collect()
}

/// Joint training of encoder and linear head on mean squared error.
fn train_regression_head(
    encoder: &mut Encoder,
    train: &[EmbeddedDoc],
    targets: &[f64],
    cfg: &BaselineConfig,
) -> Result<LinearRegressor> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let d_out = encoder.config.output_dim();
    let mut head = LinearRegressor {
        weights: Array1::zeros(d_out),
        bias: targets.iter().sum::<f64>() / targets.len() as f64,
        ridge_used: false,
    };
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_state = AdamState::new(encoder.params.num_params());
    let mut head_state = AdamState::new(d_out + 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let exact = encoder.config.squashed_cell;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (z, cache) = encoder
                        .params
                        .net
                        .forward_cached(train[i].matrix.view(), exact)?;
                    let pooled = z.mean_axis(Axis(0)).expect("nonempty");
                    let err = head.predict(&pooled) - targets[i];
                    let dpred = 2.0 * err * scale;
                    let n = z.nrows() as f64;
                    let row = &head.weights * (dpred / n);
                    let dz = ndarray::Array2::from_shape_fn(z.dim(), |(_, j)| row[j]);
                    let (g, _) = encoder.params.net.backward(&cache, dz.view())?;
                    Ok((g, pooled * dpred, dpred))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut g_net = encoder.params.zeros_like();
            let mut g_head = HeadParams::zeros(d_out);
            for (g, gw, gb) in &results {
                g_net.net.add_assign(g);
                g_head.0 += gw;
                g_head.1[0] += gb;
            }
            adam_step(&mut encoder.params, &g_net, &mut enc_state, &adam_cfg);
            let mut hp = HeadParams(head.weights.clone(), Array1::from_elem(1, head.bias));
            adam_step(&mut hp, &g_head, &mut head_state, &adam_cfg);
            head.weights = hp.0;
            head.bias = hp.1[0];
        }
    }
    Ok(head)
}

struct HeadParams(Array1<f64>, Array1<f64>);

impl HeadParams {
    fn zeros(d: usize) -> Self {
        HeadParams(Array1::zeros(d), Array1::zeros(1))
    }
}

impl Parameters for HeadParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        f("w", &[self.0.len()], self.0.as_slice().unwrap());
        f("b", &[1], self.1.as_slice().unwrap());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w", self.0.as_slice_mut().unwrap());
        f("b", self.1.as_slice_mut().unwrap());
    }
}
