//! Python bindings for `corel`.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use corel::corpus::{self, build_corpus, Document, PreprocessConfig, Provenance};
use corel::embeddings::{load_embeddings, EmbeddingTable, DEFAULT_OOV_SEED};
use corel::eval::{self, KappaInput, PipelineScorer, SplitPlan};
use corel::ot::{sinkhorn as solve, DocDistribution, Epsilon, SinkhornConfig};
use corel::pipeline::{fit_corel, fit_predict, FittedModel, Method, PipelineConfig};
use corel::synth::{self, SynthConfig};
use corel::Error;

create_exception!(
    corel_py,
    UndefinedKappaError,
    PyValueError,
    "Kappa is undefined for these marginals."
);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::UndefinedKappa(_) => UndefinedKappaError::new_err(msg),
        Error::Validation(_) | Error::Config(_) => PyValueError::new_err(msg),
        Error::Load(_) | Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn preprocess_config(
    lowercase: bool,
    strip_punctuation: bool,
    remove_stopwords: bool,
    stem: bool,
) -> PreprocessConfig {
    PreprocessConfig {
        lowercase,
        strip_punctuation,
        remove_stopwords,
        stem,
        ..PreprocessConfig::default()
    }
}

/// Normalize and tokenize text.
#[pyfunction]
#[pyo3(signature = (text, lowercase=true, strip_punctuation=true, remove_stopwords=true, stem=true))]
fn preprocess(
    text: &str,
    lowercase: bool,
    strip_punctuation: bool,
    remove_stopwords: bool,
    stem: bool,
) -> Vec<String> {
    corpus::preprocess(
        text,
        &preprocess_config(lowercase, strip_punctuation, remove_stopwords, stem),
    )
}

/// Porter stem of a lowercase word.
#[pyfunction]
fn stem(word: &str) -> String {
    corpus::porter::stem(word)
}

/// Quadratic weighted kappa of `(gold, predicted)` pairs.
#[pyfunction]
fn qwk(pairs: Vec<(u8, u8)>, num_levels: u8) -> PyResult<f64> {
    let input = KappaInput::new(pairs, num_levels).map_err(to_py)?;
    eval::qwk(&input).map_err(to_py)
}

/// Linear weighted kappa of `(gold, predicted)` pairs.
#[pyfunction]
fn linear_kappa(pairs: Vec<(u8, u8)>, num_levels: u8) -> PyResult<f64> {
    let input = KappaInput::new(pairs, num_levels).map_err(to_py)?;
    eval::linear_kappa(&input).map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Entropic optimal transport between two uniform point clouds with cost
/// `0.5 * |a_i - b_j|^2`. `epsilon_mode` is "mean", "max" or "absolute".
#[pyfunction]
#[pyo3(signature = (a, b, epsilon=0.1, epsilon_mode="mean", max_iters=500, tolerance=1e-6))]
fn sinkhorn<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    epsilon: f64,
    epsilon_mode: &str,
    max_iters: usize,
    tolerance: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let epsilon = match epsilon_mode {
        "mean" => Epsilon::MeanScaled(epsilon),
        "max" => Epsilon::MaxScaled(epsilon),
        "absolute" => Epsilon::Absolute(epsilon),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown epsilon_mode {other:?}"
            )))
        }
    };
    let mu = DocDistribution::uniform("a", matrix(a)?).map_err(to_py)?;
    let nu = DocDistribution::uniform("b", matrix(b)?).map_err(to_py)?;
    let cfg = SinkhornConfig {
        epsilon,
        max_iters,
        tolerance,
    };
    let r = solve(&mu, &nu, &cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("cost", r.cost)?;
    out.set_item("epsilon", r.epsilon)?;
    out.set_item("iterations", r.iterations_used)?;
    out.set_item("converged", r.converged)?;
    out.set_item("marginal_violation", r.marginal_violation)?;
    out.set_item(
        "plan",
        r.plan
            .outer_iter()
            .map(|row| row.to_vec())
            .collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// `max(w_ap - w_an + margin, 0)`
#[pyfunction]
#[pyo3(signature = (w_ap, w_an, margin=1.0))]
fn triplet_loss(w_ap: f64, w_an: f64, margin: f64) -> f64 {
    corel::training::triplet_loss(w_ap, w_an, margin)
}

/// Synthetic scored documents as `(id, score, text)` tuples.
#[pyfunction]
#[pyo3(signature = (size=150, levels=4, seed=0, label_noise=0.05))]
fn synth_corpus(
    size: usize,
    levels: u8,
    seed: u64,
    label_noise: f64,
) -> PyResult<Vec<(String, u8, String)>> {
    let docs = synth::generate_corpus(&SynthConfig {
        size,
        levels,
        seed,
        label_noise,
    })
    .map_err(to_py)?;
    Ok(docs.into_iter().map(|d| (d.id, d.score, d.text)).collect())
}

/// Word vectors for the synthetic generator vocabulary, keyed by preprocessed token.
#[pyfunction]
#[pyo3(signature = (dim=50, seed=0))]
fn synth_embeddings(dim: usize, seed: u64) -> std::collections::BTreeMap<String, Vec<f64>> {
    synth::synthetic_embeddings(dim, seed, &PreprocessConfig::default())
}

/// Load a CSV or JSONL corpus as `(id, score, tokens)` tuples.
#[pyfunction]
#[pyo3(signature = (path, num_levels=None))]
fn load_corpus(path: PathBuf, num_levels: Option<u8>) -> PyResult<Vec<(String, u8, Vec<String>)>> {
    let format = corpus::CorpusFormat::from_path(&path).map_err(to_py)?;
    let c = corpus::load_corpus(&path, format, &PreprocessConfig::default(), num_levels)
        .map_err(to_py)?;
    Ok(c.documents
        .into_iter()
        .map(|d| (d.id, d.score, d.tokens))
        .collect())
}

fn documents(
    records: Vec<(String, i64, String)>,
    num_levels: Option<u8>,
) -> PyResult<corpus::Corpus> {
    let cfg = PreprocessConfig::default();
    let provenance = Provenance {
        source: PathBuf::from("<python>"),
        preprocess_fingerprint: cfg.fingerprint(),
    };
    build_corpus(records, &cfg, num_levels, provenance).map_err(to_py)
}

enum Fitted {
    Corel(Box<FittedModel>),
    Baseline(Vec<Document>),
}

/// A scoring method with its word vectors and hyperparameters.
#[pyclass(module = "corel_py")]
struct Scorer {
    method: Method,
    table: EmbeddingTable,
    config: PipelineConfig,
    num_levels: Option<u8>,
    fitted: Option<Fitted>,
}

#[pymethods]
impl Scorer {
    /// `embeddings` is either a path to a GloVe-format file or a dict of token -> vector.
    #[new]
    #[pyo3(signature = (embeddings, dim, method="corel-cnn", hidden=50, epochs=5, k=7, triplets_per_anchor=8, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        embeddings: &Bound<'_, PyAny>,
        dim: usize,
        method: &str,
        hidden: usize,
        epochs: usize,
        k: usize,
        triplets_per_anchor: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let method: Method = method.parse().map_err(to_py)?;
        let table = if let Ok(path) = embeddings.extract::<PathBuf>() {
            load_embeddings(&path, dim, DEFAULT_OOV_SEED).map_err(to_py)?
        } else {
            let map: std::collections::BTreeMap<String, Vec<f64>> = embeddings.extract()?;
            let mut t = EmbeddingTable::new(dim, DEFAULT_OOV_SEED).map_err(to_py)?;
            for (tok, v) in &map {
                t.insert(tok, v).map_err(to_py)?;
            }
            t
        };
        let mut config = PipelineConfig::default();
        config.encoder.d_h = hidden;
        config.encoder.d_c = hidden;
        config.train.epochs = epochs;
        config.train.triplets_per_anchor = triplets_per_anchor;
        config.k = k;
        Ok(Scorer {
            method,
            table,
            config: config.reseeded(seed),
            num_levels: None,
            fitted: None,
        })
    }

    #[getter]
    fn method(&self) -> String {
        self.method.to_string()
    }

    /// Train on `(id, score, text)` records.
    #[pyo3(signature = (records, num_levels=None))]
    fn fit(
        &mut self,
        py: Python<'_>,
        records: Vec<(String, i64, String)>,
        num_levels: Option<u8>,
    ) -> PyResult<()> {
        let corpus = documents(records, num_levels)?;
        self.num_levels = Some(corpus.num_levels);
        self.fitted = Some(if self.method.is_baseline() {
            Fitted::Baseline(corpus.documents)
        } else {
            let (table, config, kind) = (&self.table, &self.config, self.method.encoder_kind());
            let model = py
                .detach(|| fit_corel(table, &corpus.documents, corpus.num_levels, kind, config))
                .map_err(to_py)?;
            Fitted::Corel(Box::new(model))
        });
        Ok(())
    }

    /// Predicted scores for `(id, score, text)` records (scores are ignored
    /// beyond validation; use any level in range when unknown).
    fn predict(&self, py: Python<'_>, records: Vec<(String, i64, String)>) -> PyResult<Vec<u32>> {
        let (Some(fitted), Some(m)) = (&self.fitted, self.num_levels) else {
            return Err(PyRuntimeError::new_err("call fit() first"));
        };
        let test = documents(records, Some(m))?;
        py.detach(|| match fitted {
            Fitted::Corel(model) => model
                .predict(&self.table, &test.documents)
                .map(|p| p.into_iter().map(|p| p.predicted_score).collect()),
            Fitted::Baseline(train) => fit_predict(
                self.method,
                &self.table,
                train,
                &test.documents,
                m,
                &self.config,
            ),
        })
        .map(|scores| scores.into_iter().map(u32::from).collect())
        .map_err(to_py)
    }

    /// Repeated-split evaluation; returns a dict with per-repeat and mean QWK.
    #[pyo3(signature = (records, repeats=10, train_fraction=0.7, seed=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        records: Vec<(String, i64, String)>,
        repeats: usize,
        train_fraction: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let corpus = documents(records, None)?;
        let plan = SplitPlan {
            repeats,
            train_fraction,
            stratified: true,
            seed,
        };
        let scorer = PipelineScorer {
            method: self.method,
            table: &self.table,
            config: &self.config,
        };
        let report = py
            .detach(|| eval::run_protocol(&corpus, &scorer, &plan, &self.config))
            .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("method", &report.method)?;
        out.set_item(
            "qwk",
            report.repeats.iter().map(|r| r.qwk).collect::<Vec<_>>(),
        )?;
        out.set_item("qwk_mean", report.qwk.map(|s| s.mean))?;
        out.set_item("qwk_std", report.qwk.map(|s| s.std))?;
        out.set_item("pooled_qwk", report.pooled_qwk)?;
        out.set_item("run_id", &report.run_id)?;
        Ok(out)
    }
}

#[pymodule]
fn corel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add(
        "UndefinedKappaError",
        m.py().get_type::<UndefinedKappaError>(),
    )?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(stem, m)?)?;
    m.add_function(wrap_pyfunction!(qwk, m)?)?;
    m.add_function(wrap_pyfunction!(linear_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(synth_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_class::<Scorer>()?;
    Ok(())
}
