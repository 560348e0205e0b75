//! Labeled synthetic datasets with known ground truth, written as CSV plus a
//! schema file so they flow through the same ingestion path as real data.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataio::{Cell, ColumnKind, ColumnSpec, FeatureSchema, RawTable, SchemaFile, SplitSizes};
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Two isotropic unit-variance classes centered at `(±2, 0)`.
    TwoGaussians,
    TwoMoons,
    /// Five continuous loan features plus a two-level term, driven by two
    /// anisotropic Gaussian latent classes; class 0 is 1.8 times wider.
    LcdLike,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-gaussians" => Ok(SynthKind::TwoGaussians),
            "two-moons" => Ok(SynthKind::TwoMoons),
            "lcd-like" => Ok(SynthKind::LcdLike),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic kind '{other}' (expected two-gaussians, two-moons or lcd-like)"
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::TwoGaussians => "two-gaussians",
            SynthKind::TwoMoons => "two-moons",
            SynthKind::LcdLike => "lcd-like",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub schema_file: SchemaFile,
    pub table: RawTable,
}

pub const LCD_COLUMNS: [&str; 6] = [
    "debt_to_income",
    "loan_amount",
    "interest_rate",
    "annual_income",
    "fico_score",
    "term",
];

fn schema_for(kind: SynthKind) -> FeatureSchema {
    let columns = match kind {
        SynthKind::TwoGaussians | SynthKind::TwoMoons => {
            vec![ColumnSpec::continuous("x1"), ColumnSpec::continuous("x2")]
        }
        SynthKind::LcdLike => {
            let mut cols: Vec<ColumnSpec> =
                LCD_COLUMNS[..5].iter().map(|n| ColumnSpec::continuous(n)).collect();
            cols.push(ColumnSpec::categorical("term", &["36", "60"]));
            cols
        }
    };
    FeatureSchema {
        columns,
        label_column: "label".into(),
        positive_label: "1".into(),
    }
}

/// Train/val/test sizes: 10% each for val and test, the rest for training.
pub fn default_splits(n: usize) -> SplitSizes {
    let val = n / 10;
    SplitSizes {
        train: n - 2 * val,
        val,
        test: val,
    }
}

pub fn make_synthetic(kind: SynthKind, n: usize, seed: u64) -> Result<Synthetic> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!("synthetic n must be >= 100, got {n}")));
    }
    let mut r = rng(seed);
    // exact balance, shuffled
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut r);

    let rows: Vec<Vec<Cell>> = match kind {
        SynthKind::TwoGaussians => labels
            .iter()
            .map(|&y| {
                let cx = if y == 1 { 2.0 } else { -2.0 };
                vec![Cell::Continuous(cx + gauss(&mut r)), Cell::Continuous(gauss(&mut r))]
            })
            .collect(),
        SynthKind::TwoMoons => labels
            .iter()
            .map(|&y| {
                let t = std::f64::consts::PI * r.random::<f64>();
                let (x1, x2) = if y == 1 {
                    (1.0 - t.cos(), 0.5 - t.sin())
                } else {
                    (t.cos(), t.sin())
                };
                vec![
                    Cell::Continuous(x1 + 0.1 * gauss(&mut r)),
                    Cell::Continuous(x2 + 0.1 * gauss(&mut r)),
                ]
            })
            .collect(),
        SynthKind::LcdLike => labels
            .iter()
            .map(|&y| {
                // anisotropic latent classes, long axis along (1, 1)/√2; the
                // rejected class is the more heterogeneous one
                let (m1, m2, spread) = if y == 1 { (1.5, 0.5, 1.0) } else { (-1.5, -0.5, 1.8) };
                let a = spread * 1.2 * gauss(&mut r);
                let b = spread * 0.4 * gauss(&mut r);
                let u = m1 + (a - b) / 2f64.sqrt();
                let v = m2 + (a + b) / 2f64.sqrt();
                let dti = (18.0 - 4.0 * u + 2.0 * v + 3.0 * gauss(&mut r)).max(0.0);
                let amount = (15000.0 + 2500.0 * v - 1500.0 * u + 3000.0 * gauss(&mut r)).max(1000.0);
                let rate = (13.0 - 2.5 * u - 0.5 * v + 1.5 * gauss(&mut r)).max(5.0);
                let income = (70000.0 + 12000.0 * u + 8000.0 * v + 10000.0 * gauss(&mut r)).max(10000.0);
                let fico = (690.0 + 25.0 * u + 10.0 * v + 15.0 * gauss(&mut r)).clamp(600.0, 850.0);
                let p60 = 1.0 / (1.0 + (1.0 + 1.2 * u - 0.5 * v).exp());
                let term = usize::from(r.random::<f64>() < p60);
                vec![
                    Cell::Continuous(round_to(dti, 2)),
                    Cell::Continuous(round_to(amount, 0)),
                    Cell::Continuous(round_to(rate, 2)),
                    Cell::Continuous(round_to(income, 0)),
                    Cell::Continuous(round_to(fico, 0)),
                    Cell::Categorical(term),
                ]
            })
            .collect(),
    };

    Ok(Synthetic {
        schema_file: SchemaFile {
            schema: schema_for(kind),
            splits: default_splits(n),
            seed,
        },
        table: RawTable { rows, labels },
    })
}

fn gauss<R: Rng>(r: &mut R) -> f64 {
    r.sample(StandardNormal)
}

fn round_to(v: f64, digits: i32) -> f64 {
    let k = 10f64.powi(digits);
    (v * k).round() / k
}

impl Synthetic {
    /// Writes `data.csv` and `schema.json` under `out_dir`, returning their paths.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = out_dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("data.csv");
        let schema_path = dir.join("schema.json");
        let schema = &self.schema_file.schema;
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(&schema.label_column);
        w.write_record(&header)?;
        for (row, &y) in self.table.rows.iter().zip(&self.table.labels) {
            let mut rec: Vec<String> = row
                .iter()
                .zip(&schema.columns)
                .map(|(cell, col)| match (cell, &col.kind) {
                    (Cell::Continuous(v), _) => format!("{v}"),
                    (Cell::Categorical(k), ColumnKind::Categorical { levels }) => levels[*k].clone(),
                    (Cell::Categorical(k), ColumnKind::Continuous) => k.to_string(),
                })
                .collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        self.schema_file.save(&schema_path)?;
        Ok((csv_path, schema_path))
    }
}
