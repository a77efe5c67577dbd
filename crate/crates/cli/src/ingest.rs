//! CSV ingestion into one- or two-way grouped samples.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use mcv_core::GroupSample;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("parse error at line {line}, column '{column}': '{value}' is not a number")]
    NonNumericValue {
        line: u64,
        column: String,
        value: String,
    },
    #[error("cell {0} has no observations")]
    EmptyCell(String),
    #[error("level '{level}' of factor '{factor}' at line {line} is not among the given levels")]
    UnknownLevel {
        factor: String,
        level: String,
        line: u64,
    },
    #[error("{0}")]
    Spec(String),
}

/// What to read and how to group it.
#[derive(Debug, Clone)]
pub struct IngestSpec {
    pub path: PathBuf,
    pub value_columns: Vec<String>,
    /// One column for a one-way layout, two for a two-way layout.
    pub factor_columns: Vec<String>,
    pub header: bool,
    pub delimiter: u8,
    /// Explicit level order per factor; first appearance otherwise.
    pub levels: HashMap<String, Vec<String>>,
}

impl IngestSpec {
    pub fn new(path: impl AsRef<Path>, values: &[&str], factors: &[&str]) -> Self {
        Self {
            path: path.as_ref().to_path_buf(),
            value_columns: values.iter().map(|s| s.to_string()).collect(),
            factor_columns: factors.iter().map(|s| s.to_string()).collect(),
            header: true,
            delimiter: b',',
            levels: HashMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    /// One level per factor, factor 1 first.
    pub levels: Vec<String>,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub factors: Vec<String>,
    /// Level order per factor.
    pub levels: Vec<Vec<String>>,
    pub cells: Vec<Cell>,
    pub groups: Vec<GroupSample>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.groups.first().map(GroupSample::dim).unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.n).sum()
    }
}

/// Column position by name, or by 1-based number when there is no header.
fn locate(header: &Option<csv::StringRecord>, name: &str) -> Result<usize, IngestError> {
    match header {
        Some(h) => h
            .iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string())),
        None => name
            .parse::<usize>()
            .ok()
            .filter(|&i| i >= 1)
            .map(|i| i - 1)
            .ok_or_else(|| {
                IngestError::Spec(format!(
                    "without a header, columns are given by 1-based number, got '{name}'"
                ))
            }),
    }
}

pub fn load_dataset(spec: &IngestSpec) -> Result<Dataset, IngestError> {
    if spec.value_columns.is_empty() {
        return Err(IngestError::Spec(
            "at least one value column is required".into(),
        ));
    }
    if !(1..=2).contains(&spec.factor_columns.len()) {
        return Err(IngestError::Spec(format!(
            "one or two factor columns are supported, got {}",
            spec.factor_columns.len()
        )));
    }
    let file = std::fs::File::open(&spec.path).map_err(|source| IngestError::Io {
        path: spec.path.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(spec.header)
        .delimiter(spec.delimiter)
        .flexible(false)
        .from_reader(file);
    let csv_err = |e: csv::Error| IngestError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let header = if spec.header {
        Some(reader.headers().map_err(csv_err)?.clone())
    } else {
        None
    };
    let value_idx: Vec<usize> = spec
        .value_columns
        .iter()
        .map(|c| locate(&header, c))
        .collect::<Result<_, _>>()?;
    let factor_idx: Vec<usize> = spec
        .factor_columns
        .iter()
        .map(|c| locate(&header, c))
        .collect::<Result<_, _>>()?;

    let fixed: Vec<Option<&Vec<String>>> = spec
        .factor_columns
        .iter()
        .map(|f| spec.levels.get(f))
        .collect();
    for name in spec.levels.keys() {
        if !spec.factor_columns.contains(name) {
            return Err(IngestError::Spec(format!(
                "levels given for unknown factor '{name}'"
            )));
        }
    }
    let mut levels: Vec<Vec<String>> = fixed
        .iter()
        .map(|l| l.cloned().unwrap_or_default())
        .collect();

    // (level indices, values) per row
    let d = value_idx.len();
    let mut rows: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut key = Vec::with_capacity(factor_idx.len());
        for (f, &col) in factor_idx.iter().enumerate() {
            let level = record.get(col).unwrap_or("").trim().to_string();
            let pos = match levels[f].iter().position(|l| *l == level) {
                Some(p) => p,
                None if fixed[f].is_some() => {
                    return Err(IngestError::UnknownLevel {
                        factor: spec.factor_columns[f].clone(),
                        level,
                        line,
                    })
                }
                None => {
                    levels[f].push(level);
                    levels[f].len() - 1
                }
            };
            key.push(pos);
        }
        let mut values = Vec::with_capacity(d);
        for (v, &col) in value_idx.iter().enumerate() {
            let raw = record.get(col).unwrap_or("").trim();
            let x: f64 = raw
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| IngestError::NonNumericValue {
                    line,
                    column: spec.value_columns[v].clone(),
                    value: raw.to_string(),
                })?;
            values.push(x);
        }
        rows.push((key, values));
    }

    // cells: factor 1 outer, factor 2 inner
    let inner = if levels.len() == 2 {
        levels[1].len()
    } else {
        1
    };
    let k = levels.iter().map(Vec::len).product::<usize>();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (key, values) in &rows {
        let flat = if key.len() == 2 {
            key[0] * inner + key[1]
        } else {
            key[0]
        };
        data[flat].extend_from_slice(values);
    }
    let mut cells = Vec::with_capacity(k);
    let mut groups = Vec::with_capacity(k);
    for (index, values) in data.into_iter().enumerate() {
        let cell_levels: Vec<String> = if levels.len() == 2 {
            vec![
                levels[0][index / inner].clone(),
                levels[1][index % inner].clone(),
            ]
        } else {
            vec![levels[0][index].clone()]
        };
        if values.is_empty() {
            return Err(IngestError::EmptyCell(cell_levels.join(":")));
        }
        let n = values.len() / d;
        groups.push(
            GroupSample::new(index, d, values).map_err(|e| IngestError::Spec(e.to_string()))?,
        );
        cells.push(Cell {
            index,
            levels: cell_levels,
            n,
        });
    }
    Ok(Dataset {
        factors: spec.factor_columns.clone(),
        levels,
        cells,
        groups,
    })
}

/// Reads a hypothesis matrix: one row per line, entries separated by
/// commas or whitespace; `#` starts a comment.
pub fn read_contrast(path: &Path) -> Result<Vec<Vec<f64>>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| IngestError::NonNumericValue {
                    line: i as u64 + 1,
                    column: "contrast".into(),
                    value: s.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::Spec(format!(
            "{} holds no matrix rows",
            path.display()
        )));
    }
    Ok(rows)
}
