//! Seeded dataset generation: filename, latent dialect, table, rendered
//! bytes, query and gold answer.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::csv::{parse_csv, render_csv, Table};
use super::format::{
    Attribute, Delimiter, FilenameFeatures, FormatPrior, FormatTriple, OracleFormatModel,
    QuoteChar, FEATURE_TOKENS,
};
use super::query::{answers_match, evaluate_query, QueryOp, QuerySpec};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::pandora::sample_categorical;
use crate::rng::{derive_seed, stream_rng, StreamRng};

/// Relative code-attempt costs evaluated by default.
pub const DEFAULT_RHO_SET: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const WEIGHTS_FILE: &str = "weights.json";

/// Words padding filenames. None starts with a feature token's text, so
/// joining them with `_` never creates a feature by accident.
pub const DISTRACTOR_WORDS: [&str; 24] = [
    "must",
    "race",
    "data",
    "sales",
    "report",
    "users",
    "final",
    "daily",
    "export",
    "table",
    "metrics",
    "summary",
    "orders",
    "survey",
    "stock",
    "weather",
    "budget",
    "scores",
    "log",
    "archive",
    "inventory",
    "clinic",
    "fleet",
    "ledger",
];

const PREAMBLES: [&str; 5] = [
    "# exported 2024-01-01",
    "# generated by nightly job",
    "# source: warehouse dump",
    "# exported 2023-11-30",
    "# do not edit",
];

const ID_COLUMNS: [(&str, char); 4] = [
    ("user_id", 'u'),
    ("record_id", 'r'),
    ("item_id", 'i'),
    ("order_id", 'o'),
];
const TEXT_COLUMNS: [&str; 5] = ["city", "comment", "title", "note", "product"];
const NUMERIC_COLUMNS: [&str; 9] = [
    "score", "salary", "age", "price", "amount", "rating", "weight", "visits", "duration",
];
const TEXT_WORDS: [&str; 16] = [
    "red", "blue", "green", "north", "south", "alpha", "beta", "delta", "river", "stone", "maple",
    "cedar", "quick", "slow", "bright", "dark",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub feature_prob: f64,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub null_rate: (f64, f64),
    pub d_u: (f64, f64),
    pub rho_set: Vec<f64>,
    /// Train and validation fractions; the remainder is test.
    pub split: (f64, f64),
    pub max_tries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 2000,
            feature_prob: 0.5,
            rows: (20, 100),
            cols: (3, 6),
            null_rate: (0.05, 0.20),
            d_u: (0.5, 1.0),
            rho_set: DEFAULT_RHO_SET.to_vec(),
            split: (0.7, 0.15),
            max_tries: 100,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("{task_id}: no distinct instance after {tries} tries")]
    ResampleLimit { task_id: String, tries: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |m: &str| Err(GenerateError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.feature_prob) {
            return bad("feature_prob outside [0,1]");
        }
        if self.rows.0 < 1 || self.rows.0 > self.rows.1 {
            return bad("row range must be non-empty and start at 1 or more");
        }
        if self.cols.0 < 3 || self.cols.0 > self.cols.1 || self.cols.1 > 2 + NUMERIC_COLUMNS.len() {
            return bad("column range must lie within 3..=11");
        }
        if !(0.0 <= self.null_rate.0
            && self.null_rate.0 <= self.null_rate.1
            && self.null_rate.1 < 1.0)
        {
            return bad("null rate range must lie in [0,1)");
        }
        if !(0.0 < self.d_u.0 && self.d_u.0 <= self.d_u.1 && self.d_u.1 <= 1.0) {
            return bad("d_u range must lie in (0,1]");
        }
        if self.rho_set.is_empty() || self.rho_set.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("rho_set must be non-empty and positive");
        }
        if !(self.split.0 >= 0.0 && self.split.1 >= 0.0 && self.split.0 + self.split.1 <= 1.0) {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        if self.max_tries == 0 {
            return bad("max_tries must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReadingInstance {
    pub task_id: String,
    pub filename: String,
    /// Path of the CSV file relative to the dataset directory.
    pub csv_path: String,
    #[serde(skip)]
    pub csv_bytes: Vec<u8>,
    pub query: QuerySpec,
    pub gold_answer: String,
    pub true_format: FormatTriple,
    pub d_u: f64,
    pub rho: f64,
    pub d_c: f64,
    pub split: Split,
    pub seed: u64,
}

impl FileReadingInstance {
    pub fn features(&self) -> FilenameFeatures {
        FilenameFeatures::from_filename(&self.filename)
    }

    /// Copy of the instance evaluated at another code-attempt cost.
    pub fn with_rho(&self, rho: f64) -> Self {
        FileReadingInstance {
            task_id: format!("{}/rho={rho}", self.task_id),
            rho,
            d_c: self.d_u.powf(rho),
            ..self.clone()
        }
    }

    pub fn task_description(&self) -> String {
        self.query.describe()
    }
}

pub fn task_id(i: usize) -> String {
    format!("fr-{i:05}")
}

fn split_for(i: usize, cfg: &GeneratorConfig) -> Split {
    let n_train = (cfg.n as f64 * cfg.split.0).round() as usize;
    let n_val = (cfg.n as f64 * cfg.split.1).round() as usize;
    if i < n_train {
        Split::Train
    } else if i < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

pub fn sample_features(rng: &mut StreamRng, p: f64) -> FilenameFeatures {
    FilenameFeatures::from_flags(std::array::from_fn(|_| rng.random_bool(p)))
}

pub fn make_filename(rng: &mut StreamRng, features: FilenameFeatures) -> String {
    let n_words = rng.random_range(1..=2);
    let mut name = DISTRACTOR_WORDS
        .choose_multiple(rng, n_words)
        .copied()
        .collect::<Vec<_>>()
        .join("_");
    for (token, on) in FEATURE_TOKENS.iter().zip(features.flags()) {
        if on {
            name.push_str(token);
        }
    }
    name.push_str(if features.has_tsv { ".tsv" } else { ".csv" });
    name
}

pub fn sample_format(rng: &mut StreamRng, prior: &FormatPrior) -> FormatTriple {
    let mut draw = |a: Attribute| sample_categorical(prior.marginal(a), rng.random());
    let d = draw(Attribute::Delimiter);
    let q = draw(Attribute::Quote);
    let s = draw(Attribute::Skiprows);
    FormatTriple::new(Delimiter::ALL[d], QuoteChar::ALL[q], s as u8)
}

/// A generated table with the query it supports.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTable {
    pub table: Table,
    pub query: QuerySpec,
    pub preamble: String,
}

/// Builds a table whose text column embeds the true delimiter in at least
/// one row and which contains no quote characters, so a wrong quote or
/// delimiter always breaks the column structure.
pub fn generate_table(
    rng: &mut StreamRng,
    cfg: &GeneratorConfig,
    format: FormatTriple,
) -> GeneratedTable {
    let n_rows = rng.random_range(cfg.rows.0..=cfg.rows.1);
    let n_cols = rng.random_range(cfg.cols.0..=cfg.cols.1);
    let (id_name, id_prefix) = *ID_COLUMNS.choose(rng).expect("non-empty");
    let text_name = *TEXT_COLUMNS.choose(rng).expect("non-empty");
    let numeric: Vec<&str> = NUMERIC_COLUMNS
        .choose_multiple(rng, n_cols - 2)
        .copied()
        .collect();

    let delim = format.delimiter.ch();
    let sep = if delim == '\t' {
        "\t".to_string()
    } else {
        format!("{delim} ")
    };
    let mut text: Vec<String> = (0..n_rows)
        .map(|_| {
            let w1 = TEXT_WORDS.choose(rng).expect("non-empty");
            if rng.random_bool(0.3) {
                let w2 = TEXT_WORDS.choose(rng).expect("non-empty");
                format!("{w1}{sep}{w2}")
            } else {
                w1.to_string()
            }
        })
        .collect();
    if !text.iter().any(|t| t.contains(delim)) {
        let r = rng.random_range(0..n_rows);
        text[r] = format!("{}{sep}{}", TEXT_WORDS[0], TEXT_WORDS[1]);
    }

    let mut columns: Vec<Vec<String>> = Vec::new();
    for _ in &numeric {
        let decimal = rng.random_bool(0.5);
        let lo = f64::from(rng.random_range(0..50));
        let hi = lo + f64::from(rng.random_range(10..1000));
        columns.push(
            (0..n_rows)
                .map(|_| {
                    let v = rng.random_range(lo..=hi);
                    if decimal {
                        format!("{v:.2}")
                    } else {
                        format!("{}", v.round() as i64)
                    }
                })
                .collect(),
        );
    }

    let target = rng.random_range(0..numeric.len());
    let null_rate = rng.random_range(cfg.null_rate.0..=cfg.null_rate.1);
    for cell in columns[target].iter_mut() {
        if rng.random_bool(null_rate) {
            *cell = "None".into();
        }
    }
    if columns[target].iter().all(|c| c == "None") {
        columns[target][0] = "1".into();
    }

    let op = *QueryOp::ALL.choose(rng).expect("non-empty");
    let query = QuerySpec {
        op,
        target_column: numeric[target].to_string(),
        by_column: (op == QueryOp::ArgmaxBy).then(|| id_name.to_string()),
    };

    let mut header = vec![id_name.to_string(), text_name.to_string()];
    header.extend(numeric.iter().map(|s| s.to_string()));
    let rows = (0..n_rows)
        .map(|r| {
            let mut row = vec![format!("{id_prefix}{:04}", r + 1), text[r].clone()];
            row.extend(columns.iter().map(|c| c[r].clone()));
            row
        })
        .collect();
    let preamble = PREAMBLES.choose(rng).expect("non-empty").to_string();
    GeneratedTable {
        table: Table { header, rows },
        query,
        preamble,
    }
}

/// Checks that only the true dialect reproduces `gold`. Returns the wrong
/// triples that do reproduce it.
pub fn distinctness_violations(
    bytes: &[u8],
    query: &QuerySpec,
    gold: &str,
    truth: FormatTriple,
) -> Vec<FormatTriple> {
    FormatTriple::all()
        .filter(|z| *z != truth)
        .filter(|z| {
            parse_csv(bytes, *z)
                .ok()
                .and_then(|t| evaluate_query(&t, query).ok())
                .is_some_and(|a| answers_match(&a, gold))
        })
        .collect()
}

pub fn generate_instance(
    index: usize,
    seed: u64,
    cfg: &GeneratorConfig,
    model: &OracleFormatModel,
) -> Result<FileReadingInstance, GenerateError> {
    let id = task_id(index);
    let mut rng = stream_rng(seed, &id);
    let features = sample_features(&mut rng, cfg.feature_prob);
    let filename = make_filename(&mut rng, features);
    let prior = model.prior(features);
    let format = sample_format(&mut rng, &prior);
    let d_u = (rng.random_range(cfg.d_u.0..=cfg.d_u.1) * 100.0).round() / 100.0;
    let d_u = d_u.clamp(cfg.d_u.0, cfg.d_u.1);
    let rho = *cfg.rho_set.choose(&mut rng).expect("validated non-empty");

    for _ in 0..cfg.max_tries {
        let generated = generate_table(&mut rng, cfg, format);
        let bytes = render_csv(&generated.table, format, &generated.preamble);
        let parsed = match parse_csv(&bytes, format) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let Ok(gold) = evaluate_query(&parsed, &generated.query) else {
            continue;
        };
        if !distinctness_violations(&bytes, &generated.query, &gold, format).is_empty() {
            continue;
        }
        return Ok(FileReadingInstance {
            csv_path: format!("files/{id}/{filename}"),
            task_id: id.clone(),
            filename,
            csv_bytes: bytes,
            query: generated.query,
            gold_answer: gold,
            true_format: format,
            d_u,
            rho,
            d_c: d_u.powf(rho),
            split: split_for(index, cfg),
            seed: derive_seed(seed, &id),
        });
    }
    Err(GenerateError::ResampleLimit {
        task_id: id,
        tries: cfg.max_tries,
    })
}

pub fn generate_dataset(
    cfg: &GeneratorConfig,
    model: &OracleFormatModel,
    seed: u64,
) -> Result<Vec<FileReadingInstance>, GenerateError> {
    cfg.validate()?;
    model
        .validate()
        .map_err(|e| GenerateError::Config(e.to_string()))?;
    (0..cfg.n)
        .into_par_iter()
        .map(|i| generate_instance(i, seed, cfg, model))
        .collect()
}

/// Writes the manifest, the weight file and every CSV file under `dir`.
pub fn write_dataset(
    dir: &Path,
    instances: &[FileReadingInstance],
    model: &OracleFormatModel,
) -> Result<(), GenerateError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GenerateError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for inst in instances {
        let path = dir.join(&inst.csv_path);
        let parent = path.parent().expect("csv path has a parent");
        fs::create_dir_all(parent).map_err(io(parent))?;
        fs::write(&path, &inst.csv_bytes).map_err(io(&path))?;
    }
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, model.to_json() + "\n").map_err(io(&weights))?;
    let manifest = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest).map_err(io(&manifest))?;
    write_jsonl(std::io::BufWriter::new(file), instances).map_err(io(&manifest))?;
    Ok(())
}

/// Loads a dataset written by [`write_dataset`], including CSV bytes.
pub fn load_dataset(dir: &Path) -> Result<Vec<FileReadingInstance>, GenerateError> {
    let manifest = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&manifest).map_err(|source| GenerateError::Io {
        path: manifest.clone(),
        source,
    })?;
    let mut instances: Vec<FileReadingInstance> = read_jsonl(std::io::BufReader::new(file))
        .map_err(|e| GenerateError::Manifest(e.to_string()))?;
    for inst in &mut instances {
        let path = dir.join(&inst.csv_path);
        inst.csv_bytes = fs::read(&path).map_err(|source| GenerateError::Io { path, source })?;
    }
    Ok(instances)
}

pub fn load_weights(dir: &Path) -> Result<OracleFormatModel, GenerateError> {
    let path = dir.join(WEIGHTS_FILE);
    let text = fs::read_to_string(&path).map_err(|source| GenerateError::Io { path, source })?;
    OracleFormatModel::from_json(&text).map_err(|e| GenerateError::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distractors_never_create_features() {
        for w in DISTRACTOR_WORDS {
            for t in FEATURE_TOKENS {
                assert!(!w.starts_with(&t[1..]), "{w} vs {t}");
                assert!(!w.contains(t));
            }
        }
    }

    #[test]
    fn filenames_encode_features() {
        let mut rng = stream_rng(1, "names");
        for i in 0..16 {
            let f = FilenameFeatures::from_index(i);
            let name = make_filename(&mut rng, f);
            assert_eq!(FilenameFeatures::from_filename(&name), f, "{name}");
            assert_eq!(name.ends_with(".tsv"), f.has_tsv);
        }
    }

    #[test]
    fn small_dataset_is_valid_and_deterministic() {
        let cfg = GeneratorConfig {
            n: 40,
            ..Default::default()
        };
        let model = OracleFormatModel::default();
        let a = generate_dataset(&cfg, &model, 7).unwrap();
        let b = generate_dataset(&cfg, &model, 7).unwrap();
        assert_eq!(a, b);
        for inst in &a {
            let t = parse_csv(&inst.csv_bytes, inst.true_format).unwrap();
            assert_eq!(evaluate_query(&t, &inst.query).unwrap(), inst.gold_answer);
            assert!(distinctness_violations(
                &inst.csv_bytes,
                &inst.query,
                &inst.gold_answer,
                inst.true_format
            )
            .is_empty());
            assert!((20..=100).contains(&t.rows.len()));
            assert!((3..=6).contains(&t.header.len()));
            assert!((0.5..=1.0).contains(&inst.d_u));
            assert!(DEFAULT_RHO_SET.contains(&inst.rho));
        }
        let splits: Vec<Split> = a.iter().map(|i| i.split).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 28);
        assert_eq!(splits.iter().filter(|s| **s == Split::Val).count(), 6);
    }

    #[test]
    fn rho_copies() {
        let cfg = GeneratorConfig {
            n: 1,
            ..Default::default()
        };
        let inst = generate_instance(0, 3, &cfg, &OracleFormatModel::default()).unwrap();
        let c = inst.with_rho(4.0);
        assert_eq!(c.task_id, "fr-00000/rho=4");
        assert!((c.d_c - inst.d_u.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = GeneratorConfig {
            rho_set: vec![],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GeneratorConfig {
            cols: (2, 4),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
