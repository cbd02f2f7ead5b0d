//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{EpsilonMode, RunConfig, CONFIG_ENV};
use crate::corpus::{load_corpus, Corpus, CorpusFormat, CorpusStats};
use crate::embeddings::{compute_sif, embed_all, load_embeddings, EmbeddingTable};
use crate::encoders::{Checkpoint, Encoder, OptimizerRecord};
use crate::error::{Error, Result};
use crate::eval::{
    consistency_report, linear_kappa, qwk, run_protocol, KappaInput, LoggedPrediction,
    PipelineScorer,
};
use crate::pipeline::{fit_corel, Method};
use crate::scoring::build_knn;
use crate::synth::{
    generate_corpus, synthetic_embeddings, write_corpus_csv, write_embeddings, SynthConfig,
};
use crate::training::TrainReport;

#[derive(Debug, Parser)]
#[command(
    name = "corel",
    version,
    about = "Ordinal text scoring with contrastive encoders and Wasserstein KNN"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder and write checkpoint.json, report.json and config.echo.
    Train {
        /// Scored CSV or JSONL corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory, `output_dir` from the config when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a test corpus by nearest neighbours in a training corpus.
    Predict {
        /// checkpoint.json written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// The corpus the checkpoint was trained on; supplies the neighbours.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Output CSV, stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeated-split evaluation; writes protocol_report.json and consistency.csv.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a synthetic scored corpus and, optionally, matching word vectors.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 150)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        levels: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        label_noise: f64,
        /// Also write GloVe-format vectors for the generator vocabulary.
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        dim: usize,
    },
    /// Quadratic and linear weighted kappa from a CSV of `gold,predicted` pairs.
    Kappa {
        #[arg(long)]
        pairs: PathBuf,
        /// Number of score levels M.
        #[arg(long)]
        levels: u8,
    },
}

/// Flags that take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// GloVe-format word vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Word vector dimension (d_w).
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// corel-cnn, corel-lstm, corel-bilstm, baseline-lstm or baseline-bilstm.
    #[arg(long)]
    pub method: Option<Method>,
    /// LSTM hidden size.
    #[arg(long)]
    pub d_h: Option<usize>,
    /// CNN output channels.
    #[arg(long)]
    pub d_c: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Triplets per minibatch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub triplets_per_anchor: Option<usize>,
    /// How `--epsilon` is read: a raw value or a multiple of the mean or max pair cost.
    #[arg(long)]
    pub epsilon_mode: Option<EpsilonModeArg>,
    /// Sinkhorn regularization.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Neighbours averaged per prediction.
    #[arg(long)]
    pub k: Option<usize>,
    /// Random train/test splits to evaluate.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Plain random splits instead of stratified ones.
    #[arg(long)]
    pub unstratified: bool,
    /// Test appearances needed before a document counts as consistent.
    #[arg(long)]
    pub min_occurrences: Option<usize>,
    /// Score levels M; inferred from the corpus when omitted.
    #[arg(long)]
    pub num_levels: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum EpsilonModeArg {
    Absolute,
    MeanScaled,
    MaxScaled,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(
            embedding_dim,
            method,
            d_h,
            d_c,
            epochs,
            learning_rate,
            batch_size,
            triplets_per_anchor,
            epsilon,
            k,
            repeats,
            train_fraction,
            min_occurrences,
            seed
        );
        if let Some(p) = &self.embeddings {
            c.embeddings_path = Some(p.clone());
        }
        if let Some(m) = self.epsilon_mode {
            c.epsilon_mode = match m {
                EpsilonModeArg::Absolute => EpsilonMode::Absolute,
                EpsilonModeArg::MeanScaled => EpsilonMode::MeanScaled,
                EpsilonModeArg::MaxScaled => EpsilonMode::MaxScaled,
            };
        }
        if self.unstratified {
            c.stratified = false;
        }
        if self.num_levels.is_some() {
            c.num_levels = self.num_levels;
        }
    }
}

fn resolve_config(cli: &Cli, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // only the first call in a process takes effect
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::debug!("thread pool already initialized");
        }
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn load_table(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let path = cfg.embeddings_path.as_ref().ok_or_else(|| {
        Error::Config("no embeddings file given (embeddings_path / --embeddings)".into())
    })?;
    load_embeddings(path, cfg.embedding_dim, cfg.oov_seed)
}

fn load(cfg: &RunConfig, path: &Path, num_levels: Option<u8>) -> Result<Corpus> {
    let format = CorpusFormat::from_path(path)?;
    load_corpus(path, format, &cfg.preprocess_config()?, num_levels)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Serialize)]
struct TrainOutput<'a> {
    method: Method,
    num_documents: usize,
    num_levels: u8,
    corpus: &'a CorpusStats,
    training: &'a TrainReport,
    timestamp: String,
}

fn cmd_train(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<()> {
    if cfg.method.is_baseline() {
        return Err(Error::Config(format!(
            "{} has no trainable checkpoint; use `evaluate`",
            cfg.method
        )));
    }
    let corpus = load(cfg, corpus_path, cfg.num_levels)?;
    let table = load_table(cfg)?;
    let model = fit_corel(
        &table,
        &corpus.documents,
        corpus.num_levels,
        cfg.method.encoder_kind(),
        &cfg.pipeline_config(),
    )?;
    // everything succeeded; only now touch the output directory
    create_dir(out)?;
    let mut ckpt = model.knn.encoder().to_checkpoint();
    ckpt.optimizer = Some(OptimizerRecord {
        step: model.optimizer.step,
        m: model.optimizer.m.clone(),
        v: model.optimizer.v.clone(),
    });
    ckpt.save(&out.join("checkpoint.json"))?;
    write_json(
        &out.join("report.json"),
        &TrainOutput {
            method: cfg.method,
            num_documents: corpus.len(),
            num_levels: corpus.num_levels,
            corpus: &corpus.stats,
            training: &model.report,
            timestamp: timestamp(),
        },
    )?;
    fs::write(out.join("config.echo"), cfg.to_toml())
        .map_err(|e| Error::io(out.join("config.echo"), e))?;
    Ok(())
}

fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    train: &Path,
    test: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let encoder = Encoder::from_checkpoint(&ckpt)?;
    let cfg = RunConfig {
        embedding_dim: encoder.config.d_w,
        ..cfg.clone()
    };
    let train_corpus = load(&cfg, train, cfg.num_levels)?;
    let test_corpus = load(&cfg, test, Some(train_corpus.num_levels))?;
    let table = load_table(&cfg)?;
    let sif = compute_sif(&train_corpus.documents, cfg.sif_a)?;
    let train_emb = embed_all(&train_corpus.documents, &table, &sif)?;
    let pipeline = cfg.pipeline_config();
    let knn = build_knn(
        &train_emb,
        encoder,
        cfg.k,
        train_corpus.num_levels,
        pipeline.sinkhorn,
    )?;
    let test_emb = embed_all(&test_corpus.documents, &table, &sif)?;
    let predictions = knn.predict_all(&test_emb)?;

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let err = |e: csv::Error| Error::Internal(format!("writing predictions: {e}"));
        w.write_record([
            "id",
            "gold",
            "predicted",
            "raw_mean",
            "neighbor_ids",
            "neighbor_distances",
        ])
        .map_err(err)?;
        for (p, doc) in predictions.iter().zip(&test_corpus.documents) {
            let ids: Vec<&str> = p.neighbors.iter().map(|n| n.id.as_str()).collect();
            let dists: Vec<String> = p
                .neighbors
                .iter()
                .map(|n| format!("{:.6e}", n.distance))
                .collect();
            w.write_record([
                p.doc_id.clone(),
                doc.score.to_string(),
                p.predicted_score.to_string(),
                format!("{:.6}", p.raw_mean),
                ids.join(";"),
                dists.join(";"),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    }
    match out {
        Some(path) => fs::write(path, &buf).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_evaluate(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<()> {
    let corpus = load(cfg, corpus_path, cfg.num_levels)?;
    let table = load_table(cfg)?;
    let pipeline = cfg.pipeline_config();
    let scorer = PipelineScorer {
        method: cfg.method,
        table: &table,
        config: &pipeline,
    };
    let mut report = run_protocol(&corpus, &scorer, &cfg.split_plan(), cfg)?;
    report.timestamp = Some(timestamp());

    let docs: Vec<(String, u8)> = corpus
        .documents
        .iter()
        .map(|d| (d.id.clone(), d.score))
        .collect();
    let log = report
        .prediction_log()
        .into_iter()
        .map(|(repeat, p)| LoggedPrediction {
            repeat,
            id: p.id.as_str(),
            predicted: p.predicted,
        });
    let consistency = consistency_report(&docs, log, cfg.min_occurrences);

    create_dir(out)?;
    write_json(&out.join("protocol_report.json"), &report)?;
    let path = out.join("consistency.csv");
    consistency.write_csv(fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
    if let Some(s) = report.qwk {
        eprintln!(
            "{}: QWK {:.4} +/- {:.4} over {} repeats (pooled {:.4})",
            report.method,
            s.mean,
            s.std,
            report.completed_repeats,
            report.pooled_qwk.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_kappa(pairs: &Path, levels: u8) -> Result<()> {
    let file = fs::File::open(pairs).map_err(|e| Error::io(pairs, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut data = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec =
            rec.map_err(|e| Error::Load(format!("{}: record {}: {e}", pairs.display(), i + 1)))?;
        let field = |j: usize| -> Result<u8> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    Error::Load(format!(
                        "{}: record {} needs two integer scores",
                        pairs.display(),
                        i + 1
                    ))
                })
        };
        data.push((field(0)?, field(1)?));
    }
    let input = KappaInput::new(data, levels)?;
    let out = serde_json::json!({
        "n": input.pairs().len(),
        "qwk": qwk(&input)?,
        "linear_kappa": linear_kappa(&input)?,
    });
    println!("{out}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            corpus,
            out,
            overrides,
        } => {
            let cfg = resolve_config(&cli, overrides)?;
            configure_threads(cfg.threads);
            cmd_train(&cfg, corpus, out.as_deref().unwrap_or(&cfg.output_dir))
        }
        Command::Predict {
            checkpoint,
            train,
            test,
            out,
            overrides,
        } => {
            let cfg = resolve_config(&cli, overrides)?;
            configure_threads(cfg.threads);
            cmd_predict(&cfg, checkpoint, train, test, out.as_deref())
        }
        Command::Evaluate {
            corpus,
            out,
            overrides,
        } => {
            let cfg = resolve_config(&cli, overrides)?;
            configure_threads(cfg.threads);
            cmd_evaluate(&cfg, corpus, out.as_deref().unwrap_or(&cfg.output_dir))
        }
        Command::Synth {
            out,
            size,
            levels,
            seed,
            label_noise,
            embeddings_out,
            dim,
        } => {
            let docs = generate_corpus(&SynthConfig {
                size: *size,
                levels: *levels,
                seed: *seed,
                label_noise: *label_noise,
            })?;
            write_corpus_csv(&docs, out)?;
            if let Some(path) = embeddings_out {
                let cfg = match &cli.config {
                    Some(p) => RunConfig::load(p)?,
                    None => RunConfig::default(),
                };
                write_embeddings(
                    &synthetic_embeddings(*dim, *seed, &cfg.preprocess_config()?),
                    path,
                )?;
            }
            Ok(())
        }
        Command::Kappa { pairs, levels } => cmd_kappa(pairs, *levels),
    }
}

/// Parse `args`, run, and map errors to a one-line message and exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                Error::Config(String::new()).exit_code()
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
