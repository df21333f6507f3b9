//! Dataset ingestion, target binarization, stratified splitting,
//! standardization and the synthetic toy generator.

use crate::nn::BinaryBatch;
use crate::rng::Prng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty after filtering")]
    Empty,
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("class {class:?} is too small to appear in every split")]
    Stratification { class: String },
    #[error(transparent)]
    Batch(#[from] crate::nn::NnError),
}

/// Column type tag in a dataset schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Declarative description of a delimited text dataset: column order and
/// types, the name of the target column, and the field separator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub path: String,
    pub target: String,
    pub columns: Vec<SchemaColumn>,
    #[serde(default = "default_separator")]
    pub separator: char,
    #[serde(default)]
    pub has_header: bool,
}

fn default_separator() -> char {
    ','
}

impl DatasetSchema {
    pub fn from_path(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DataError::Schema(e.to_string()))
    }

    fn validate(&self) -> Result<usize, DataError> {
        if self.columns.is_empty() {
            return Err(DataError::Schema("schema declares no columns".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate column {:?}", c.name)));
            }
        }
        self.columns
            .iter()
            .position(|c| c.name == self.target)
            .ok_or_else(|| DataError::Schema(format!("target column {:?} not in schema", self.target)))
    }
}

/// Parsed dataset: numeric feature matrix (categoricals one-hot encoded)
/// plus the raw categorical target labels.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: String,
    pub feature_names: Vec<String>,
    /// Row-major, `n_rows x feature_names.len()`.
    pub features: Vec<f64>,
    pub target: Vec<String>,
    /// Rows discarded because a cell was missing.
    pub n_dropped: usize,
}

impl RawDataset {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Missing-value markers; rows containing one are dropped with a logged count.
fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// Loads a delimited text file per `schema`. Categorical features are one-hot
/// encoded into {0,1} columns (levels in lexicographic order); rows with
/// missing values are dropped and counted.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawDataset, DataError> {
    let target_idx = schema.validate()?;
    let text = std::fs::read_to_string(path)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut n_dropped = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 && schema.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line
            .split(schema.separator)
            .map(|c| c.trim().to_string())
            .collect();
        if cells.len() != schema.columns.len() {
            return Err(DataError::Parse {
                line: line_no + 1,
                message: format!(
                    "expected {} fields, found {}",
                    schema.columns.len(),
                    cells.len()
                ),
            });
        }
        if cells.iter().any(|c| is_missing(c)) {
            n_dropped += 1;
            continue;
        }
        // Numeric cells must parse; this is a malformed row, not a missing one.
        for (cell, col) in cells.iter().zip(schema.columns.iter()) {
            if col.kind == ColumnKind::Numeric && col.name != schema.target {
                cell.parse::<f64>().map_err(|_| DataError::Parse {
                    line: line_no + 1,
                    message: format!("column {:?}: cannot parse {cell:?} as numeric", col.name),
                })?;
            }
        }
        rows.push(cells);
    }
    if n_dropped > 0 {
        log::info!(
            "{}: dropped {n_dropped} rows with missing values",
            schema.name
        );
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    // Collect categorical levels (sorted) for the one-hot encoding.
    let mut levels: Vec<Option<Vec<String>>> = vec![None; schema.columns.len()];
    for (j, col) in schema.columns.iter().enumerate() {
        if j == target_idx || col.kind == ColumnKind::Numeric {
            continue;
        }
        let mut set = std::collections::BTreeSet::new();
        for row in &rows {
            set.insert(row[j].clone());
        }
        levels[j] = Some(set.into_iter().collect());
    }

    let mut feature_names = Vec::new();
    for (j, col) in schema.columns.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        match &levels[j] {
            None => feature_names.push(col.name.clone()),
            Some(ls) => {
                for l in ls {
                    let mut name = String::new();
                    let _ = write!(name, "{}={}", col.name, l);
                    feature_names.push(name);
                }
            }
        }
    }

    let n_features = feature_names.len();
    let mut features = Vec::with_capacity(rows.len() * n_features);
    let mut target = Vec::with_capacity(rows.len());
    for row in &rows {
        for (j, col) in schema.columns.iter().enumerate() {
            if j == target_idx {
                continue;
            }
            match &levels[j] {
                None => features.push(row[j].parse::<f64>().expect("validated above")),
                Some(ls) => {
                    for l in ls {
                        features.push(if &row[j] == l { 1.0 } else { 0.0 });
                    }
                }
            }
            let _ = col;
        }
        target.push(row[target_idx].clone());
    }

    Ok(RawDataset {
        name: schema.name.clone(),
        feature_names,
        features,
        target,
        n_dropped,
    })
}

/// Maps the most frequent class to 1 and the rest to 0. Frequency ties pick
/// the lexicographically smallest class name.
pub fn binarize_majority(targets: &[String]) -> Vec<u8> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in targets {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    // BTreeMap iterates names in ascending order, so on equal counts the
    // smallest name wins.
    let mut majority = "";
    let mut best = 0usize;
    for (name, count) in &counts {
        if *count > best {
            majority = name;
            best = *count;
        }
    }
    targets.iter().map(|t| u8::from(t == majority)).collect()
}

/// Split proportions over the whole dataset; they must sum to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.60,
            validation: 0.10,
            calibration: 0.10,
            test: 0.20,
        }
    }
}

impl SplitFractions {
    fn as_array(&self) -> [f64; 4] {
        [self.train, self.validation, self.calibration, self.test]
    }

    fn validate(&self) -> Result<(), DataError> {
        let fr = self.as_array();
        if fr.iter().any(|&f| f <= 0.0) {
            return Err(DataError::Fractions("all fractions must be positive".into()));
        }
        if ((fr.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(DataError::Fractions("fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Per-feature training-set statistics used to standardize every split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean/standard deviation per column of `train`.
    pub fn fit(train: &BinaryBatch) -> Standardizer {
        let p = train.n_features();
        let n = train.len() as f64;
        let mut mean = vec![0.0; p];
        for i in 0..train.len() {
            for (m, x) in mean.iter_mut().zip(train.row(i)) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; p];
        for i in 0..train.len() {
            for j in 0..p {
                let d = train.row(i)[j] - mean[j];
                var[j] += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Standardizer { mean, std }
    }

    /// `(x - mean) / std`; constant columns (std = 0) are centered only.
    pub fn transform(&self, batch: &BinaryBatch) -> BinaryBatch {
        let p = batch.n_features();
        let mut out = Vec::with_capacity(batch.features().len());
        for i in 0..batch.len() {
            for j in 0..p {
                let c = batch.row(i)[j] - self.mean[j];
                out.push(if self.std[j] > 0.0 { c / self.std[j] } else { c });
            }
        }
        BinaryBatch::new(out, p, batch.labels().to_vec()).expect("shape preserved")
    }

    /// Undoes [`Standardizer::transform`] for one row.
    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| if self.std[j] > 0.0 { v * self.std[j] + self.mean[j] } else { v + self.mean[j] })
            .collect()
    }
}

/// The four-way data partition plus the training-set standardization
/// parameters once [`standardize`] has run.
#[derive(Debug, Clone)]
pub struct SplitSet {
    train: BinaryBatch,
    validation: BinaryBatch,
    calibration: BinaryBatch,
    test: BinaryBatch,
    standardizer: Option<Standardizer>,
}

impl SplitSet {
    pub fn train(&self) -> &BinaryBatch {
        &self.train
    }

    pub fn validation(&self) -> &BinaryBatch {
        &self.validation
    }

    pub fn calibration(&self) -> &BinaryBatch {
        &self.calibration
    }

    pub fn test(&self) -> &BinaryBatch {
        &self.test
    }

    /// Present once the splits have been standardized.
    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn total_rows(&self) -> usize {
        self.train.len() + self.validation.len() + self.calibration.len() + self.test.len()
    }
}

/// Largest-remainder allocation of `n` items to the four splits.
/// Remainder ties resolve in split order (train, validation, calibration,
/// test), which keeps the allocation deterministic.
fn largest_remainder(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let mut alloc = [0usize; 4];
    let mut remainders = [0.0f64; 4];
    let mut assigned = 0usize;
    for i in 0..4 {
        let quota = n as f64 * fractions[i];
        alloc[i] = quota.floor() as usize;
        remainders[i] = quota - quota.floor();
        assigned += alloc[i];
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).unwrap());
    for i in 0..(n - assigned) {
        alloc[order[i]] += 1;
    }
    alloc
}

/// Stratified split: within each class, rows are shuffled with the seeded
/// generator and allocated by largest-remainder rounding of the fractions.
pub fn stratified_split(
    features: &[f64],
    n_features: usize,
    labels: &[u8],
    fractions: &SplitFractions,
    seed: u64,
) -> Result<SplitSet, DataError> {
    fractions.validate()?;
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let fr = fractions.as_array();
    let mut rng = Prng::stream(seed, "stratified-split");

    // Index lists per class, in label order 0 then 1.
    let mut split_indices: [Vec<usize>; 4] = Default::default();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        rng.shuffle(&mut idx);
        let alloc = largest_remainder(idx.len(), &fr);
        if alloc.iter().any(|&a| a == 0) {
            return Err(DataError::Stratification {
                class: class.to_string(),
            });
        }
        let mut start = 0;
        for (s, &take) in alloc.iter().enumerate() {
            split_indices[s].extend_from_slice(&idx[start..start + take]);
            start += take;
        }
    }

    let build = |idx: &Vec<usize>| -> Result<BinaryBatch, DataError> {
        let mut f = Vec::with_capacity(idx.len() * n_features);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            f.extend_from_slice(&features[i * n_features..(i + 1) * n_features]);
            y.push(labels[i]);
        }
        Ok(BinaryBatch::new(f, n_features, y)?)
    };

    Ok(SplitSet {
        train: build(&split_indices[0])?,
        validation: build(&split_indices[1])?,
        calibration: build(&split_indices[2])?,
        test: build(&split_indices[3])?,
        standardizer: None,
    })
}

/// Standardizes every split with the mean and standard deviation of the
/// training split only.
pub fn standardize(splits: SplitSet) -> SplitSet {
    let scaler = Standardizer::fit(&splits.train);
    SplitSet {
        train: scaler.transform(&splits.train),
        validation: scaler.transform(&splits.validation),
        calibration: scaler.transform(&splits.calibration),
        test: scaler.transform(&splits.test),
        standardizer: Some(scaler),
    }
}

/// The four-branch Yeo-Johnson power transform.
pub fn yeo_johnson(x: f64, lam: f64) -> f64 {
    if x >= 0.0 {
        if lam != 0.0 {
            ((x + 1.0).powf(lam) - 1.0) / lam
        } else {
            (x + 1.0).ln()
        }
    } else if lam != 2.0 {
        -((1.0 - x).powf(2.0 - lam) - 1.0) / (2.0 - lam)
    } else {
        -(1.0 - x).ln()
    }
}

/// Synthetic two-covariate dataset: `x1, x2, e` are i.i.d. standard normal
/// and `y = 1` when `x1 < t(x2) + e` with `t` the Yeo-Johnson transform at
/// parameter -1.
pub fn generate_toy(n: usize, seed: u64) -> RawDataset {
    let mut rng = Prng::stream(seed, "toy-dgp");
    let mut features = Vec::with_capacity(n * 2);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = rng.normal();
        let x2 = rng.normal();
        let e = rng.normal();
        features.push(x1);
        features.push(x2);
        let y = x1 < yeo_johnson(x2, -1.0) + e;
        target.push(if y { "1".to_string() } else { "0".to_string() });
    }
    RawDataset {
        name: "Toy".to_string(),
        feature_names: vec!["x1".to_string(), "x2".to_string()],
        features,
        target,
        n_dropped: 0,
    }
}
