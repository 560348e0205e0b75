//! Tabular ingestion: schema, CSV loading, one-hot encoding, z-scoring,
//! deterministic splits and immutable-feature masks.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::seed;

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    #[serde(default)]
    pub immutable: bool,
}

impl ColumnSpec {
    pub fn continuous(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            immutable: false,
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            immutable: false,
        }
    }

    pub fn immutable(mut self) -> Self {
        self.immutable = true;
        self
    }

    /// Number of encoded columns this source column expands into.
    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Continuous => 1,
            ColumnKind::Categorical { levels } => levels.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
    pub positive_label: String,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("at least one feature column required".into()));
        }
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", col.name)));
            }
            if let ColumnKind::Categorical { levels } = &col.kind {
                if levels.is_empty() {
                    return Err(Error::Schema(format!("column '{}' has no levels", col.name)));
                }
                let mut seen = HashSet::new();
                for l in levels {
                    if !seen.insert(l.as_str()) {
                        return Err(Error::Schema(format!(
                            "column '{}' repeats level '{}'",
                            col.name, l
                        )));
                    }
                }
            }
        }
        if names.contains(self.label_column.as_str()) {
            return Err(Error::Schema(format!(
                "label column '{}' is also a feature column",
                self.label_column
            )));
        }
        Ok(())
    }

    pub fn encoded_dim(&self) -> usize {
        self.columns.iter().map(ColumnSpec::width).sum()
    }

    /// Contiguous encoded ranges, one per source column, in schema order.
    pub fn encoded_index(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.columns
            .iter()
            .map(|c| {
                let r = start..start + c.width();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn continuous_idx(&self) -> Vec<usize> {
        self.columns
            .iter()
            .zip(self.encoded_index())
            .filter(|(c, _)| matches!(c.kind, ColumnKind::Continuous))
            .map(|(_, r)| r.start)
            .collect()
    }

    pub fn onehot_groups(&self) -> Vec<Range<usize>> {
        self.columns
            .iter()
            .zip(self.encoded_index())
            .filter(|(c, _)| matches!(c.kind, ColumnKind::Categorical { .. }))
            .map(|(_, r)| r)
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// On-disk schema file: the feature schema plus split sizes and shuffle seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    #[serde(flatten)]
    pub schema: FeatureSchema,
    pub splits: SplitSizes,
    #[serde(default)]
    pub seed: u64,
}

impl SchemaFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SchemaFile = serde_json::from_str(&text)?;
        file.schema.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Continuous(f64),
    /// Index into the column's declared levels.
    Categorical(usize),
}

pub type RawRow = Vec<Cell>;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub rows: Vec<RawRow>,
    pub labels: Vec<u8>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_dataset(csv_path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<RawTable> {
    let path = csv_path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, schema)
}

pub fn read_table<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    for h in &header {
        let known = h == &schema.label_column || schema.columns.iter().any(|c| &c.name == h);
        if !known {
            return Err(Error::Cell {
                row: 0,
                column: h.clone(),
                message: "unknown column".into(),
            });
        }
    }
    let position = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Cell {
            row: 0,
            column: name.to_string(),
            message: "declared column missing from header".into(),
        })
    };
    let col_pos = schema
        .columns
        .iter()
        .map(|c| position(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let label_pos = position(&schema.label_column)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut label_values: HashSet<String> = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(schema.columns.len());
        for (col, &pos) in schema.columns.iter().zip(&col_pos) {
            let text = record.get(pos).unwrap_or("").trim();
            let cell = match &col.kind {
                ColumnKind::Continuous => {
                    let v: f64 = text.parse().map_err(|_| Error::Cell {
                        row: row_no,
                        column: col.name.clone(),
                        message: format!("non-numeric value '{text}'"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Cell {
                            row: row_no,
                            column: col.name.clone(),
                            message: format!("non-finite value '{text}'"),
                        });
                    }
                    Cell::Continuous(v)
                }
                ColumnKind::Categorical { levels } => {
                    let idx = levels.iter().position(|l| l == text).ok_or_else(|| Error::Cell {
                        row: row_no,
                        column: col.name.clone(),
                        message: format!("undeclared level '{text}'"),
                    })?;
                    Cell::Categorical(idx)
                }
            };
            row.push(cell);
        }
        let label = record.get(label_pos).unwrap_or("").trim();
        label_values.insert(label.to_string());
        if label_values.len() > 2 {
            return Err(Error::Cell {
                row: row_no,
                column: schema.label_column.clone(),
                message: format!("more than two distinct labels (saw '{label}')"),
            });
        }
        labels.push(u8::from(label == schema.positive_label));
        rows.push(row);
    }
    Ok(RawTable { rows, labels })
}

/// Per-continuous-column z-scoring parameters, in source units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(columns: &[Vec<f64>]) -> Self {
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for col in columns {
            let n = col.len().max(1) as f64;
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Scaler { mean, std }
    }

    pub fn transform(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }

    pub fn inverse(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }
}

/// Encoding state shared by every split: schema, train-fitted scaler and
/// encoded column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub schema: FeatureSchema,
    pub scaler: Scaler,
    pub encoded_index: Vec<Range<usize>>,
}

impl Preprocessor {
    pub fn new(schema: FeatureSchema, scaler: Scaler) -> Self {
        let encoded_index = schema.encoded_index();
        Preprocessor {
            schema,
            scaler,
            encoded_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.schema.encoded_dim()
    }

    pub fn transform(&self, row: &[Cell]) -> Result<Array1<f64>> {
        check_dim(self.schema.columns.len(), row.len())?;
        let mut out = Array1::zeros(self.dim());
        let mut cont = 0;
        for ((col, range), cell) in self.schema.columns.iter().zip(&self.encoded_index).zip(row) {
            match (&col.kind, cell) {
                (ColumnKind::Continuous, Cell::Continuous(v)) => {
                    out[range.start] = self.scaler.transform(cont, *v);
                    cont += 1;
                }
                (ColumnKind::Categorical { levels }, Cell::Categorical(k)) if *k < levels.len() => {
                    out[range.start + k] = 1.0;
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "cell {cell:?} does not fit column '{}'",
                        col.name
                    )))
                }
            }
        }
        Ok(out)
    }

    /// De-standardizes continuous columns and decodes each one-hot group by
    /// argmax (ties go to the lowest level index).
    pub fn inverse_transform(&self, x: ArrayView1<f64>) -> Result<RawRow> {
        check_dim(self.dim(), x.len())?;
        let mut cont = 0;
        let row = self
            .schema
            .columns
            .iter()
            .zip(&self.encoded_index)
            .map(|(col, range)| match col.kind {
                ColumnKind::Continuous => {
                    let v = self.scaler.inverse(cont, x[range.start]);
                    cont += 1;
                    Cell::Continuous(v)
                }
                ColumnKind::Categorical { .. } => {
                    Cell::Categorical(argmax(&x.slice(ndarray::s![range.clone()]).to_vec()))
                }
            })
            .collect();
        Ok(row)
    }

    /// Renders a decoded row as text cells in schema order.
    pub fn render(&self, row: &[Cell]) -> Vec<String> {
        self.schema
            .columns
            .iter()
            .zip(row)
            .map(|(col, cell)| match (&col.kind, cell) {
                (_, Cell::Continuous(v)) => format!("{v}"),
                (ColumnKind::Categorical { levels }, Cell::Categorical(k)) => levels[*k].clone(),
                (ColumnKind::Continuous, Cell::Categorical(k)) => k.to_string(),
            })
            .collect()
    }
}

/// First index of the maximum; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub prep: Preprocessor,
}

impl Dataset {
    /// Wraps already-numeric data with an all-continuous identity schema
    /// (zero mean, unit scale).
    pub fn from_arrays(x: Array2<f64>, y: Vec<u8>) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        let d = x.ncols();
        let schema = FeatureSchema {
            columns: (0..d).map(|j| ColumnSpec::continuous(&format!("f{j}"))).collect(),
            label_column: "label".into(),
            positive_label: "1".into(),
        };
        schema.validate()?;
        let scaler = Scaler {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        };
        Ok(Dataset {
            x,
            y,
            prep: Preprocessor::new(schema, scaler),
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.prep.schema
    }

    /// Rows whose label equals `label`, as a new dataset.
    pub fn filter_label(&self, label: u8) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == label).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(ndarray::Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            prep: self.prep.clone(),
        }
    }
}

pub fn fit_transform(
    raw: &RawTable,
    schema: &FeatureSchema,
    sizes: SplitSizes,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    schema.validate()?;
    if sizes.train == 0 {
        return Err(Error::Insufficient("empty train split".into()));
    }
    let total = sizes.train + sizes.val + sizes.test;
    if total > raw.len() {
        return Err(Error::Insufficient(format!(
            "split sizes sum to {total} but only {} rows available",
            raw.len()
        )));
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    let train_idx = &order[..sizes.train];
    let val_idx = &order[sizes.train..sizes.train + sizes.val];
    let test_idx = &order[sizes.train + sizes.val..total];

    let n_cont = schema
        .columns
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Continuous))
        .count();
    let mut columns = vec![Vec::with_capacity(train_idx.len()); n_cont];
    for &i in train_idx {
        let mut k = 0;
        for cell in &raw.rows[i] {
            if let Cell::Continuous(v) = cell {
                columns[k].push(*v);
                k += 1;
            }
        }
    }
    let scaler = Scaler::fit(&columns);
    let cont_names = schema
        .columns
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Continuous))
        .map(|c| c.name.as_str());
    for (name, &s) in cont_names.zip(&scaler.std) {
        if s <= STD_FLOOR {
            log::warn!("column '{name}' has zero variance on the train split; std floored");
        }
    }
    let prep = Preprocessor::new(schema.clone(), scaler);

    let build = |idx: &[usize]| -> Result<Dataset> {
        let mut x = Array2::zeros((idx.len(), prep.dim()));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&prep.transform(&raw.rows[i])?);
        }
        Ok(Dataset {
            x,
            y: idx.iter().map(|&i| raw.labels[i]).collect(),
            prep: prep.clone(),
        })
    };
    Ok((build(train_idx)?, build(val_idx)?, build(test_idx)?))
}

/// Binary mutability mask over encoded columns (1 = mutable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask(#[serde(with = "crate::serde_arr")] pub Array1<f64>);

impl Mask {
    pub fn all_mutable(dim: usize) -> Self {
        Mask(Array1::ones(dim))
    }

    pub fn frozen(dim: usize) -> Self {
        Mask(Array1::zeros(dim))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_mutable(&self, j: usize) -> bool {
        self.0[j] != 0.0
    }

    pub fn n_frozen(&self) -> usize {
        self.0.iter().filter(|&&m| m == 0.0).count()
    }

    /// Elementwise product with `v`; frozen coordinates become exactly 0.
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        let mut out = v.clone();
        for (o, &m) in out.iter_mut().zip(&self.0) {
            if m == 0.0 {
                *o = 0.0;
            }
        }
        out
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            write!(f, "{}", if *m == 0.0 { '0' } else { '1' })?;
        }
        Ok(())
    }
}

pub fn build_mask(schema: &FeatureSchema) -> Mask {
    let mut m = Array1::ones(schema.encoded_dim());
    for (col, range) in schema.columns.iter().zip(schema.encoded_index()) {
        if col.immutable {
            for j in range {
                m[j] = 0.0;
            }
        }
    }
    Mask(m)
}
