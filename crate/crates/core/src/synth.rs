//! Seeded synthetic scored corpora and matching word vectors.
//!
//! Each document is written at a latent level; higher levels use more
//! sentences, more (and more varied) connectives, more hedging and a richer
//! technical vocabulary. A small fraction of recorded scores is moved one
//! level away from the latent level to mimic rater disagreement.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{preprocess, PreprocessConfig};
use crate::error::{Error, Result};

const TOPICS: &[&str] = &[
    "plant",
    "water",
    "light",
    "growth",
    "temperature",
    "sample",
    "experiment",
    "result",
    "seed",
    "soil",
    "leaf",
    "solution",
    "reaction",
    "enzyme",
    "beaker",
    "heat",
    "mass",
    "volume",
    "group",
    "trial",
];
const SIMPLE: &[&str] = &[
    "saw", "got", "went", "made", "did", "thing", "stuff", "big", "small", "good", "bad", "lot",
    "nice", "looked", "happened", "changed", "grew", "tall", "green", "fast",
];
const ADVANCED: &[&str] = &[
    "hypothesis",
    "variable",
    "evidence",
    "correlation",
    "error",
    "mechanism",
    "inference",
    "significant",
    "trend",
    "measurement",
    "controlled",
    "dependent",
    "independent",
    "replicate",
    "variance",
    "systematic",
    "quantitative",
    "rate",
    "concentration",
    "interpretation",
    "limitation",
    "theory",
    "prediction",
    "validity",
];
const SIMPLE_VERBS: &[&str] = &["showed", "gave", "became", "kept", "seemed"];
const ADVANCED_VERBS: &[&str] = &[
    "indicates",
    "demonstrates",
    "supports",
    "explains",
    "contradicts",
    "implies",
];
const CONNECTIVES: &[&str] = &[
    "therefore",
    "because",
    "however",
    "consequently",
    "moreover",
    "whereas",
    "thus",
    "hence",
    "although",
    "furthermore",
];
const HEDGES: &[&str] = &[
    "likely",
    "possibly",
    "perhaps",
    "probably",
    "suggests",
    "appears",
    "approximately",
    "uncertain",
];

/// Word groups sharing an embedding cluster.
const GROUPS: &[&[&str]] = &[
    TOPICS,
    SIMPLE,
    ADVANCED,
    SIMPLE_VERBS,
    ADVANCED_VERBS,
    CONNECTIVES,
    HEDGES,
];

/// Connective vocabulary, exposed for measuring generated text.
pub fn connectives() -> &'static [&'static str] {
    CONNECTIVES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub levels: u8,
    pub seed: u64,
    /// Probability that the recorded score is one level off.
    pub label_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 150,
            levels: 4,
            seed: 0,
            label_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDoc {
    pub id: String,
    pub score: u8,
    pub text: String,
}

fn pick<'a, R: Rng>(pool: &[&'a str], rng: &mut R) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn sentence<R: Rng>(t: f64, rng: &mut R) -> String {
    let conn_pool = &CONNECTIVES[..2 + (t * (CONNECTIVES.len() - 2) as f64).round() as usize];
    let hedge_pool = &HEDGES[..2 + (t * (HEDGES.len() - 2) as f64).round() as usize];
    let adv_pool = &ADVANCED[..6 + (t * (ADVANCED.len() - 6) as f64).round() as usize];
    let p_adv = 0.1 + 0.7 * t;

    let mut words: Vec<&str> = Vec::new();
    if rng.gen_bool(0.1 + 0.7 * t) {
        words.push(pick(conn_pool, rng));
    }
    words.push("the");
    words.push(pick(TOPICS, rng));
    if rng.gen_bool(0.05 + 0.6 * t) {
        words.push(pick(hedge_pool, rng));
    }
    words.push(if rng.gen_bool(p_adv) {
        pick(ADVANCED_VERBS, rng)
    } else {
        pick(SIMPLE_VERBS, rng)
    });
    words.push("a");
    for _ in 0..rng.gen_range(1..=2) {
        words.push(if rng.gen_bool(p_adv) {
            pick(adv_pool, rng)
        } else {
            pick(SIMPLE, rng)
        });
    }
    if rng.gen_bool(0.5) {
        words.push("of");
        words.push(pick(TOPICS, rng));
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

fn document<R: Rng>(level: u8, levels: u8, rng: &mut R) -> String {
    let t = (level - 1) as f64 / (levels - 1) as f64;
    let sentences = 3 + (4.0 * t).round() as usize + rng.gen_range(0..=1);
    (0..sentences)
        .map(|_| sentence(t, rng))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Balanced latent levels (sizes differ by at most one), shuffled order.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<SynthDoc>> {
    if cfg.levels < 2 {
        return Err(Error::Config(
            "synthetic corpus needs at least two levels".into(),
        ));
    }
    if cfg.size < cfg.levels as usize {
        return Err(Error::Config(format!(
            "size {} is smaller than the number of levels {}",
            cfg.size, cfg.levels
        )));
    }
    if !(0.0..=1.0).contains(&cfg.label_noise) {
        return Err(Error::Config("label_noise must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut latent: Vec<u8> = (0..cfg.size)
        .map(|i| 1 + (i % cfg.levels as usize) as u8)
        .collect();
    latent.shuffle(&mut rng);
    Ok(latent
        .into_iter()
        .enumerate()
        .map(|(i, level)| {
            let text = document(level, cfg.levels, &mut rng);
            let mut score = level;
            if rng.gen_bool(cfg.label_noise) {
                score = match level {
                    1 => 2,
                    l if l == cfg.levels => l - 1,
                    l if rng.gen_bool(0.5) => l - 1,
                    l => l + 1,
                };
            }
            SynthDoc {
                id: format!("S{i:04}"),
                score,
                text,
            }
        })
        .collect())
}

pub fn write_corpus_csv(docs: &[SynthDoc], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Internal(format!("writing {}: {e}", path.display()));
    w.write_record(["id", "score", "text"]).map_err(err)?;
    for d in docs {
        w.write_record([d.id.as_str(), &d.score.to_string(), d.text.as_str()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Vectors for every generator word, keyed by its preprocessed form. Words in
/// the same group cluster around a shared centroid.
pub fn synthetic_embeddings(
    dim: usize,
    seed: u64,
    preprocess_cfg: &PreprocessConfig,
) -> BTreeMap<String, Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for group in GROUPS {
        let centroid: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for word in *group {
            let noise: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.4..0.4)).collect();
            for key in preprocess(word, preprocess_cfg) {
                out.entry(key).or_insert_with(|| {
                    centroid
                        .iter()
                        .zip(&noise)
                        .map(|(c, n)| 0.6 * c + n)
                        .collect()
                });
            }
        }
    }
    out
}

/// GloVe text format: token followed by space-separated values.
pub fn write_embeddings(vectors: &BTreeMap<String, Vec<f64>>, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (token, v) in vectors {
        let values: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(file, "{token} {}", values.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}
