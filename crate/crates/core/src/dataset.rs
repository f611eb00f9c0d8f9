//! Line-delimited JSON datasets, prediction files and the 10:1:1 split.

use crate::data::{validate_item, DataError, EnrichedItem, EnrichedRecord, ExamItem, GradedResult, ItemRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use std::collections::HashSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("dataset too small to split: {0} items, need at least 12")]
    TooSmall(usize),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Anything carrying a dataset-unique id.
pub trait Identified {
    fn id(&self) -> &str;
}

impl Identified for ExamItem {
    fn id(&self) -> &str {
        &self.id
    }
}

impl Identified for EnrichedItem {
    fn id(&self) -> &str {
        &self.item.id
    }
}

fn parse_lines<R, T, F>(text: &str, mut convert: F) -> Result<Vec<T>, DatasetError>
where
    R: DeserializeOwned,
    T: Identified,
    F: FnMut(R) -> Result<T, DataError>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: R = serde_json::from_str(line).map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        let item = convert(record).map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        if !seen.insert(item.id().to_string()) {
            return Err(DatasetError::DuplicateId(item.id().to_string()));
        }
        out.push(item);
    }
    Ok(out)
}

pub fn parse_dataset(text: &str) -> Result<Vec<ExamItem>, DatasetError> {
    parse_lines::<ItemRecord, _, _>(text, validate_item)
}

/// Reads a graded dataset, one JSON object per line, preserving file order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ExamItem>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text)
}

pub fn parse_enriched(text: &str) -> Result<Vec<EnrichedItem>, DatasetError> {
    parse_lines::<EnrichedRecord, _, _>(text, EnrichedRecord::into_enriched)
}

pub fn load_enriched(path: impl AsRef<Path>) -> Result<Vec<EnrichedItem>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_enriched(&text)
}

fn write_lines<'a, T, I>(path: &Path, rows: I) -> Result<(), DatasetError>
where
    T: serde::Serialize + 'a,
    I: IntoIterator<Item = T>,
{
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(&row).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_dataset(items: &[ExamItem], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_lines(path.as_ref(), items.iter().map(ItemRecord::from))
}

pub fn write_enriched(items: &[EnrichedItem], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_lines(path.as_ref(), items.iter().map(EnrichedRecord::from))
}

/// One prediction per line with keys in the order
/// `id, predicted_score, model_version, branch_mask`; scores use six decimals.
pub fn format_prediction(r: &GradedResult) -> String {
    format!(
        "{{\"id\":{},\"predicted_score\":{:.6},\"model_version\":{},\"branch_mask\":{}}}",
        serde_json::to_string(&r.id).expect("string serializes"),
        r.predicted_score,
        serde_json::to_string(&r.model_version).expect("string serializes"),
        serde_json::to_string(&r.branch_mask).expect("mask serializes"),
    )
}

pub fn write_predictions(results: &[GradedResult], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in results {
        text.push_str(&format_prediction(r));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<GradedResult>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Sizes `(train, validation, test)` for `n` items: validation and test get
/// `floor(n/12)` each, train gets the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let small = n / 12;
    (n - 2 * small, small, small)
}

/// Seeded Fisher-Yates shuffle followed by a 10:1:1 cut.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<DatasetSplit<T>, DatasetError> {
    let n = items.len();
    if n < 12 {
        return Err(DatasetError::TooSmall(n));
    }
    let mut items = items;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(n);
    let mut rest = items.split_off(n_train);
    let test = rest.split_off(n_val);
    Ok(DatasetSplit { train: items, validation: rest, test, seed })
}
