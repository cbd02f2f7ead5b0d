//! Scored-document corpora: loading from CSV/JSONL and text normalization.

pub mod porter;

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

/// Stopword list shipped with the crate (one token per line).
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// One scored text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub remove_stopwords: bool,
    pub stem: bool,
    pub stopwords: BTreeSet<String>,
    pub max_tokens: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            lowercase: true,
            strip_punctuation: true,
            remove_stopwords: true,
            stem: true,
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
            max_tokens: None,
        }
    }
}

impl PreprocessConfig {
    /// Everything off: tokens are the whitespace-split input.
    pub fn raw() -> Self {
        PreprocessConfig {
            lowercase: false,
            strip_punctuation: false,
            remove_stopwords: false,
            stem: false,
            stopwords: BTreeSet::new(),
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.remove_stopwords && self.stopwords.is_empty() {
            return Err(Error::Config(
                "stopword removal enabled with an empty stopword list".into(),
            ));
        }
        if self.max_tokens == Some(0) {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Short content hash used for corpus provenance.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// A [`PreprocessConfig`] with its stopword list normalized by the same
/// character-level steps as the text, so entries like `don't` still match.
pub struct Preprocessor<'a> {
    config: &'a PreprocessConfig,
    stopwords: HashSet<String>,
}

impl<'a> Preprocessor<'a> {
    pub fn new(config: &'a PreprocessConfig) -> Self {
        let stopwords = if config.remove_stopwords {
            config
                .stopwords
                .iter()
                .map(|w| normalize_chars(w, config))
                .filter(|w| !w.is_empty())
                .collect()
        } else {
            HashSet::new()
        };
        Preprocessor { config, stopwords }
    }

    /// lowercase -> strip punctuation -> whitespace split -> stopword filter -> stem.
    pub fn run(&self, text: &str) -> Vec<String> {
        let mut tokens = self.tokens_before_stopwords(text);
        if self.config.remove_stopwords {
            tokens.retain(|t| !self.stopwords.contains(t));
        }
        if self.config.stem {
            for t in tokens.iter_mut() {
                *t = porter::stem(t);
            }
        }
        if let Some(cap) = self.config.max_tokens {
            tokens.truncate(cap);
        }
        tokens
    }

    fn tokens_before_stopwords(&self, text: &str) -> Vec<String> {
        normalize_chars(text, self.config)
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }
}

fn normalize_chars(text: &str, config: &PreprocessConfig) -> String {
    let lowered;
    let text = if config.lowercase {
        lowered = text.to_lowercase();
        lowered.as_str()
    } else {
        text
    };
    if config.strip_punctuation {
        text.chars().filter(|&c| !is_punctuation(c)).collect()
    } else {
        text.to_string()
    }
}

/// Deterministic text normalization; may return an empty list.
pub fn preprocess(text: &str, config: &PreprocessConfig) -> Vec<String> {
    Preprocessor::new(config).run(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(CorpusFormat::Csv),
            Some("jsonl") | Some("ndjson") => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Load(format!(
                "cannot infer corpus format from extension {:?} of {}",
                other,
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl LengthStats {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Option<Self> {
        let mut n = 0usize;
        let mut total = 0usize;
        let mut min = usize::MAX;
        let mut max = 0;
        for len in lengths {
            n += 1;
            total += len;
            min = min.min(len);
            max = max.max(len);
        }
        (n > 0).then(|| LengthStats {
            min,
            max,
            mean: total as f64 / n as f64,
        })
    }
}

/// Summary in the shape of a dataset-statistics table. Lengths are reported
/// both before and after stopword removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub tokens_before_stopwords: Option<LengthStats>,
    pub tokens: Option<LengthStats>,
    /// Documents per score level, index 0 is level 1.
    pub level_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub preprocess_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub num_levels: u8,
    pub provenance: Provenance,
    pub stats: CorpusStats,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    score: i64,
    text: String,
}

fn read_records(path: &Path, format: CorpusFormat) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    match format {
        CorpusFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().from_reader(file);
            for (i, rec) in reader.deserialize::<RawRecord>().enumerate() {
                let rec = rec.map_err(|e| {
                    Error::Load(format!(
                        "{}: malformed record {}: {e}",
                        path.display(),
                        i + 1
                    ))
                })?;
                out.push(rec);
            }
        }
        CorpusFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: RawRecord = serde_json::from_str(&line).map_err(|e| {
                    Error::Load(format!(
                        "{}: malformed record on line {}: {e}",
                        path.display(),
                        i + 1
                    ))
                })?;
                out.push(rec);
            }
        }
    }
    Ok(out)
}

/// Load a scored corpus and normalize every document.
///
/// When `num_levels` is `None` it is taken as the largest score present.
/// An empty file is only accepted when `num_levels` is given.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    config: &PreprocessConfig,
    num_levels: Option<u8>,
) -> Result<Corpus> {
    config.validate()?;
    let records = read_records(path, format)?;
    let provenance = Provenance {
        source: path.to_path_buf(),
        preprocess_fingerprint: config.fingerprint(),
    };
    build_corpus(
        records.into_iter().map(|r| (r.id, r.score, r.text)),
        config,
        num_levels,
        provenance,
    )
}

/// Build a corpus from in-memory `(id, score, text)` records.
pub fn build_corpus(
    records: impl IntoIterator<Item = (String, i64, String)>,
    config: &PreprocessConfig,
    num_levels: Option<u8>,
    provenance: Provenance,
) -> Result<Corpus> {
    let records: Vec<_> = records.into_iter().collect();
    let m = match num_levels {
        Some(m) => m as i64,
        None => records.iter().map(|r| r.1).max().ok_or_else(|| {
            Error::Validation("corpus is empty and no number of levels was given".into())
        })?,
    };
    if m < 2 || m > u8::MAX as i64 {
        return Err(Error::Validation(format!(
            "number of score levels must be in [2, 255], got {m}"
        )));
    }
    let m = m as u8;

    let pre = Preprocessor::new(config);
    let mut seen = HashSet::new();
    let mut documents = Vec::with_capacity(records.len());
    let mut before_lengths = Vec::with_capacity(records.len());
    for (id, score, text) in records {
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("duplicate document id {id:?}")));
        }
        if score < 1 || score > m as i64 {
            return Err(Error::Validation(format!(
                "document {id:?} has score {score} outside [1, {m}]"
            )));
        }
        let tokens = pre.run(&text);
        if tokens.is_empty() {
            return Err(Error::Validation(format!(
                "document {id:?} is empty after preprocessing"
            )));
        }
        before_lengths.push(pre.tokens_before_stopwords(&text).len());
        documents.push(Document {
            id,
            text,
            tokens,
            score: score as u8,
        });
    }

    let stats = corpus_stats(&documents, &before_lengths, m);
    Ok(Corpus {
        documents,
        num_levels: m,
        provenance,
        stats,
    })
}

fn corpus_stats(documents: &[Document], before_lengths: &[usize], m: u8) -> CorpusStats {
    let mut level_counts = vec![0; m as usize];
    for d in documents {
        level_counts[d.score as usize - 1] += 1;
    }
    CorpusStats {
        count: documents.len(),
        tokens_before_stopwords: LengthStats::from_lengths(before_lengths.iter().copied()),
        tokens: LengthStats::from_lengths(documents.iter().map(|d| d.tokens.len())),
        level_counts,
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn all_on() -> PreprocessConfig {
        PreprocessConfig::default()
    }

    #[test]
    fn preprocess_examples() {
        assert!(preprocess("", &all_on()).is_empty());
        assert_eq!(
            preprocess("Running, RUNS ran!", &all_on()),
            ["run", "run", "ran"]
        );
        assert!(preprocess("a the of", &all_on()).is_empty());
        assert_eq!(
            preprocess("The cell divides.", &all_on()),
            ["cell", "divid"]
        );
    }

    #[test]
    fn punctuation_is_unicode_aware() {
        let cfg = PreprocessConfig {
            stem: false,
            remove_stopwords: false,
            ..all_on()
        };
        assert_eq!(
            preprocess("«Bonjour» — well‐known; “quoted”", &cfg),
            ["bonjour", "wellknown", "quoted"]
        );
        // symbols are not punctuation
        assert_eq!(preprocess("a+b $5", &cfg), ["a+b", "$5"]);
    }

    #[test]
    fn apostrophe_stopwords_match_after_stripping() {
        assert!(preprocess("don't shouldn't", &all_on()).is_empty());
    }

    #[test]
    fn max_tokens_caps() {
        let cfg = PreprocessConfig {
            max_tokens: Some(2),
            ..PreprocessConfig::raw()
        };
        assert_eq!(preprocess("a b c d", &cfg), ["a", "b"]);
    }

    #[test]
    fn empty_stopword_list_rejected() {
        let cfg = PreprocessConfig {
            stopwords: BTreeSet::new(),
            ..all_on()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn bundled_stopword_list_size() {
        let words = parse_stopwords(DEFAULT_STOPWORDS);
        assert!(words.len() >= 150 && words.len() <= 200, "{}", words.len());
    }

    fn write_tmp(ext: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_single_record() {
        let f = write_tmp(
            ".csv",
            "id,score,text\na,2,\"The cell divides.\"\nb,1,\"Cells run\"\n",
        );
        let c = load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents[0].tokens, ["cell", "divid"]);
        assert_eq!(c.num_levels, 4);
        assert_eq!(c.stats.level_counts, [1, 1, 0, 0]);
        assert_eq!(c.stats.tokens_before_stopwords.unwrap().max, 3);
    }

    #[test]
    fn load_jsonl_and_infer_levels() {
        let f = write_tmp(
            ".jsonl",
            "{\"id\":\"x\",\"score\":3,\"text\":\"alpha beta\"}\n\n{\"id\":\"y\",\"score\":1,\"text\":\"gamma\"}\n",
        );
        let c = load_corpus(f.path(), CorpusFormat::Jsonl, &all_on(), None).unwrap();
        assert_eq!(c.num_levels, 3);
        assert_eq!(c.stats.tokens.unwrap().min, 1);
    }

    #[test]
    fn score_out_of_range_is_validation_error() {
        let f = write_tmp(".csv", "id,score,text\na,5,\"some words here\"\n");
        let err = load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let f = write_tmp(".csv", "id,score,text\na,0,\"some words here\"\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn empty_document_names_id() {
        let f = write_tmp(".csv", "id,score,text\nlonely,1,\"the of and\"\n");
        let err = load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4)).unwrap_err();
        assert!(err.to_string().contains("lonely"));
    }

    #[test]
    fn malformed_record_is_load_error() {
        let f = write_tmp(".csv", "id,score,text\na,notanumber,\"x\"\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4)),
            Err(Error::Load(_))
        ));
        let f = write_tmp(".jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n");
        let err = load_corpus(f.path(), CorpusFormat::Jsonl, &all_on(), Some(4)).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp(".csv", "id,score,text\na,1,\"cell\"\na,2,\"membrane\"\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn empty_corpus_needs_levels() {
        let f = write_tmp(".csv", "id,score,text\n");
        assert!(load_corpus(f.path(), CorpusFormat::Csv, &all_on(), Some(4))
            .unwrap()
            .is_empty());
        assert!(load_corpus(f.path(), CorpusFormat::Csv, &all_on(), None).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus(
            Path::new("/nonexistent/x.csv"),
            CorpusFormat::Csv,
            &all_on(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn idempotent_without_stemming(text in "[A-Za-z ,.!?'\\-]{0,80}") {
                let cfg = PreprocessConfig { stem: false, ..PreprocessConfig::default() };
                let once = preprocess(&text, &cfg);
                let twice = preprocess(&once.join(" "), &cfg);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn deterministic(text in "\\PC{0,60}") {
                let cfg = PreprocessConfig::default();
                prop_assert_eq!(preprocess(&text, &cfg), preprocess(&text, &cfg));
            }
        }
    }
}
