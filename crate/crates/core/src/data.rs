//! Dataset ingestion, column typing, feature encoding and train/test splitting.
//!
//! A [`Dataset`] is an immutable set of equally long, uniquely named
//! [`Column`]s. Categorical columns store level indices (as `f64`) into their
//! level table; continuous columns store finite reals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Distinct-value cutoff below which a numeric column is treated as categorical.
pub const DEFAULT_CUTOFF: usize = 10;

const MISSING_TOKENS: [&str; 4] = ["", "NA", "NaN", "nan"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    kind: ColumnKind,
    values: Vec<f64>,
}

impl Column {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(Some(i), Some(&name), "non-finite continuous value"));
        }
        Ok(Column {
            name,
            kind: ColumnKind::Continuous,
            values,
        })
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>, codes: &[usize]) -> Result<Self> {
        let name = name.into();
        if let Some(i) = codes.iter().position(|&c| c >= levels.len()) {
            return Err(Error::parse(
                Some(i),
                Some(&name),
                format!("level index {} out of range for {} levels", codes[i], levels.len()),
            ));
        }
        let distinct: BTreeSet<&String> = levels.iter().collect();
        if distinct.len() != levels.len() {
            return Err(Error::parse(None, Some(&name), "duplicate level names"));
        }
        Ok(Column {
            name,
            kind: ColumnKind::Categorical { levels },
            values: codes.iter().map(|&c| c as f64).collect(),
        })
    }

    /// Builds a categorical column from raw labels; levels are ordered
    /// numerically when every label parses as a number, lexically otherwise.
    pub fn from_labels<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let levels = level_order(labels.iter().map(AsRef::as_ref));
        let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes: Vec<usize> = labels.iter().map(|l| index[l.as_ref()]).collect();
        Column::categorical(name, levels.clone(), &codes).expect("levels built from labels")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ColumnKind {
        &self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    /// Number of levels for categorical columns.
    pub fn n_levels(&self) -> Option<usize> {
        match &self.kind {
            ColumnKind::Categorical { levels } => Some(levels.len()),
            ColumnKind::Continuous => None,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { levels } => Some(levels),
            ColumnKind::Continuous => None,
        }
    }

    /// Level indices; meaningful only for categorical columns.
    pub fn codes(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }

    pub fn take(&self, rows: &[usize]) -> Column {
        Column {
            name: self.name.clone(),
            kind: self.kind.clone(),
            values: rows.iter().map(|&r| self.values[r]).collect(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn render(&self, row: usize) -> String {
        match &self.kind {
            ColumnKind::Continuous => format!("{}", self.values[row]),
            ColumnKind::Categorical { levels } => levels[self.values[row] as usize].clone(),
        }
    }
}

fn level_order<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let distinct: BTreeSet<&str> = labels.collect();
    let numeric: Option<Vec<(f64, &str)>> = distinct
        .iter()
        .map(|s| parse_number(s).map(|v| (v, *s)))
        .collect();
    match numeric {
        Some(mut pairs) => {
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            pairs.into_iter().map(|(_, s)| s.to_owned()).collect()
        }
        None => distinct.into_iter().map(str::to_owned).collect(),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut names = BTreeSet::new();
        for c in &columns {
            if c.len() != n_rows {
                return Err(Error::Shape(format!(
                    "column '{}' has {} rows, expected {n_rows}",
                    c.name,
                    c.len()
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::parse(None, Some(&c.name), "duplicate column name"));
            }
        }
        Ok(Dataset { columns, n_rows })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(Column::name).collect()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    }

    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Column>> {
        names.iter().map(|n| self.column(n.as_ref()).cloned()).collect()
    }

    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Kind overrides that reproduce this dataset's column kinds on reload.
    pub fn schema(&self) -> Schema {
        self.columns
            .iter()
            .map(|c| {
                let kind = if c.is_categorical() {
                    KindOverride::Categorical
                } else {
                    KindOverride::Continuous
                };
                (c.name.clone(), kind)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(Column::name)).map_err(csv_err)?;
        for row in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.render(row))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Per-column kind override, as found in a JSON schema file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindOverride {
    Continuous,
    Categorical,
}

pub type Schema = BTreeMap<String, KindOverride>;

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(None, None, format!("schema: {e}")))
}

/// Categorical iff the column is non-numeric, or numeric with at most
/// `cutoff` distinct values.
pub fn infer_column_kind<S: AsRef<str>>(values: &[S], cutoff: usize) -> ColumnKind {
    let all_numeric = values.iter().all(|v| parse_number(v.as_ref()).is_some());
    let categorical = if all_numeric {
        let distinct: BTreeSet<u64> = values
            .iter()
            .map(|v| normalize_zero(parse_number(v.as_ref()).unwrap()).to_bits())
            .collect();
        distinct.len() <= cutoff
    } else {
        true
    };
    if categorical {
        ColumnKind::Categorical {
            levels: level_order(values.iter().map(AsRef::as_ref)),
        }
    } else {
        ColumnKind::Continuous
    }
}

fn normalize_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::parse(
            row,
            None,
            format!("ragged row: {len} fields, expected {expected_len}"),
        ),
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
        _ => Error::parse(row, None, e.to_string()),
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>, cutoff: usize) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema, cutoff)
}

/// Reads an RFC-4180 CSV with a header row. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn read_csv<R: Read>(reader: R, schema: Option<&Schema>, cutoff: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput);
    }
    if let Some(schema) = schema {
        if let Some(unknown) = schema.keys().find(|k| !header.contains(k)) {
            return Err(Error::UnknownColumn(unknown.clone()));
        }
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if MISSING_TOKENS.contains(&cell) {
                return Err(Error::parse(Some(line), Some(&header[j]), "missing value"));
            }
            raw[j].push(cell.to_owned());
        }
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(Error::EmptyInput);
    }

    let columns = header
        .iter()
        .zip(raw)
        .map(|(name, cells)| {
            let kind = schema.and_then(|s| s.get(name)).copied();
            build_column(name, &cells, kind, cutoff, &lines)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(columns)
}

fn build_column(
    name: &str,
    cells: &[String],
    kind: Option<KindOverride>,
    cutoff: usize,
    lines: &[usize],
) -> Result<Column> {
    let kind = match kind {
        Some(KindOverride::Categorical) => ColumnKind::Categorical {
            levels: level_order(cells.iter().map(String::as_str)),
        },
        Some(KindOverride::Continuous) => ColumnKind::Continuous,
        None => infer_column_kind(cells, cutoff),
    };
    match kind {
        ColumnKind::Continuous => {
            let values = cells
                .iter()
                .zip(lines)
                .map(|(c, &line)| {
                    parse_number(c).ok_or_else(|| {
                        Error::parse(Some(line), Some(name), format!("cannot parse '{c}' as a number"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Column::continuous(name, values)
        }
        ColumnKind::Categorical { levels } => {
            let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let codes: Vec<usize> = cells.iter().map(|c| index[c.as_str()]).collect();
            Column::categorical(name, levels, &codes)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Encoding {
    Standardize { mean: f64, scale: f64 },
    OneHot { levels: usize },
}

/// Origin of one encoded feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSource {
    pub column: String,
    pub level: Option<String>,
}

/// Column-to-feature mapping with standardization statistics frozen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    encodings: Vec<Encoding>,
    sources: Vec<FeatureSource>,
}

impl FeatureEncoder {
    /// Learns the mapping; continuous statistics use the population variance.
    pub fn fit(block: &[&Column]) -> Result<Self> {
        if block.is_empty() {
            return Err(Error::EmptyBlock("feature block"));
        }
        let mut encodings = Vec::with_capacity(block.len());
        let mut sources = Vec::new();
        for col in block {
            match col.kind() {
                ColumnKind::Continuous => {
                    let n = col.len().max(1) as f64;
                    let mean = col.values.iter().sum::<f64>() / n;
                    let var = col.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    let scale = if sd > 1e-12 * mean.abs().max(1.0) { 1.0 / sd } else { 0.0 };
                    encodings.push(Encoding::Standardize { mean, scale });
                    sources.push(FeatureSource {
                        column: col.name.clone(),
                        level: None,
                    });
                }
                ColumnKind::Categorical { levels } => {
                    encodings.push(Encoding::OneHot { levels: levels.len() });
                    sources.extend(levels.iter().map(|l| FeatureSource {
                        column: col.name.clone(),
                        level: Some(l.clone()),
                    }));
                }
            }
        }
        Ok(FeatureEncoder { encodings, sources })
    }

    pub fn width(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[FeatureSource] {
        &self.sources
    }

    pub fn transform(&self, block: &[&Column]) -> Result<DMatrix<f64>> {
        if block.len() != self.encodings.len() {
            return Err(Error::Shape(format!(
                "encoder fitted on {} columns, got {}",
                self.encodings.len(),
                block.len()
            )));
        }
        let n = block.first().map_or(0, |c| c.len());
        let mut out = DMatrix::zeros(n, self.width());
        let mut j = 0;
        for (col, enc) in block.iter().zip(&self.encodings) {
            if col.len() != n {
                return Err(Error::Shape(format!("column '{}' length mismatch", col.name)));
            }
            match (enc, col.kind()) {
                (Encoding::Standardize { mean, scale }, ColumnKind::Continuous) => {
                    for (i, v) in col.values.iter().enumerate() {
                        out[(i, j)] = (v - mean) * scale;
                    }
                    j += 1;
                }
                (Encoding::OneHot { levels }, ColumnKind::Categorical { levels: l }) if l.len() == *levels => {
                    for (i, &v) in col.values.iter().enumerate() {
                        out[(i, j + v as usize)] = 1.0;
                    }
                    j += levels;
                }
                _ => {
                    return Err(Error::Shape(format!(
                        "column '{}' kind differs from the fitted encoding",
                        col.name
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// Fits an encoder on `block` and encodes it.
pub fn encode_features(block: &[&Column]) -> Result<(DMatrix<f64>, FeatureEncoder)> {
    let enc = FeatureEncoder::fit(block)?;
    let m = enc.transform(block)?;
    Ok((m, enc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Disjoint train/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n_rows: usize, config: &SplitConfig) -> Result<SplitIndices> {
    let f = config.test_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("test_fraction {f} not in (0,1)")));
    }
    if (n_rows as f64) * f.min(1.0 - f) < 2.0 {
        return Err(Error::InsufficientData(format!(
            "{n_rows} rows cannot give at least 2 train and 2 test rows at test fraction {f}"
        )));
    }
    let n_test = ((n_rows as f64 * f).round() as usize).clamp(2, n_rows - 2);
    let mut perm: Vec<usize> = (0..n_rows).collect();
    perm.shuffle(&mut seed::rng(config.seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(dataset: &Dataset, config: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(dataset.n_rows(), config)?;
    Ok((dataset.take_rows(&idx.train), dataset.take_rows(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn read(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), None, DEFAULT_CUTOFF)
    }

    #[test]
    fn numeric_csv_reads_back() {
        let ds = read_csv("a,b\n1.5,2\n2.5,3\n3.5,4\n".as_bytes(), None, 2).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert!(ds.columns().iter().all(|c| !c.is_categorical()));
        assert_eq!(ds.column("a").unwrap().values(), &[1.5, 2.5, 3.5]);
    }

    #[test]
    fn string_column_is_categorical() {
        let ds = read("g\na\nb\na\n").unwrap();
        let g = ds.column("g").unwrap();
        assert_eq!(g.n_levels(), Some(2));
        assert_eq!(g.codes(), vec![0, 1, 0]);
    }

    #[test]
    fn short_row_names_the_row() {
        let err = read("a,b\n1,2\n3\n4,5\n").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, Some(3)),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn missing_and_bad_cells_are_located() {
        match read("a,b\n1,2\n,3\n").unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, Some(3));
                assert_eq!(column.as_deref(), Some("a"));
            }
            e => panic!("unexpected {e:?}"),
        }
        let mut schema = Schema::new();
        schema.insert("a".into(), KindOverride::Continuous);
        let err = read_csv("a\n1\nx\n".as_bytes(), Some(&schema), 10).unwrap_err();
        assert!(matches!(err, Error::Parse { row: Some(3), .. }), "{err:?}");
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(read(""), Err(Error::EmptyInput)));
        assert!(matches!(read("a,b\n"), Err(Error::EmptyInput)));
    }

    #[test]
    fn kind_inference_respects_cutoff() {
        let three: Vec<String> = (0..30).map(|i| (i % 3).to_string()).collect();
        assert!(matches!(infer_column_kind(&three, 10), ColumnKind::Categorical { levels } if levels.len() == 3));
        let reals: Vec<String> = (0..500).map(|i| format!("{}", i as f64 * 0.37)).collect();
        assert_eq!(infer_column_kind(&reals, 10), ColumnKind::Continuous);
        let eleven: Vec<String> = (0..11).map(|i| i.to_string()).collect();
        assert_eq!(infer_column_kind(&eleven, 10), ColumnKind::Continuous);
        let ten: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert!(matches!(infer_column_kind(&ten, 10), ColumnKind::Categorical { .. }));
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        let c = Column::from_labels("c", &["10", "9", "10"]);
        assert_eq!(c.levels().unwrap(), &["9".to_string(), "10".to_string()]);
        assert_eq!(c.codes(), vec![1, 0, 1]);
    }

    #[test]
    fn encoding_standardizes_and_one_hots() {
        let cat = Column::from_labels("c", &["a", "b", "c", "a"]);
        let (m, enc) = encode_features(&[&cat]).unwrap();
        assert_eq!(m.ncols(), 3);
        assert_eq!(enc.sources()[1].level.as_deref(), Some("b"));
        assert_eq!(m.row(3).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);

        let x = Column::continuous("x", vec![1.0, 2.0, 3.0]).unwrap();
        let (m, _) = encode_features(&[&x]).unwrap();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in m.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }

        let k = Column::continuous("k", vec![5.0; 3]).unwrap();
        let (m, _) = encode_features(&[&k]).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encoder_reuses_training_statistics() {
        let train = Column::continuous("x", vec![0.0, 2.0]).unwrap();
        let test = Column::continuous("x", vec![4.0]).unwrap();
        let enc = FeatureEncoder::fit(&[&train]).unwrap();
        assert_abs_diff_eq!(enc.transform(&[&test]).unwrap()[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn split_partitions_deterministically() {
        let cfg = SplitConfig { test_fraction: 0.5, seed: 11 };
        let s = split_indices(100, &cfg).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (50, 50));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_indices(100, &cfg).unwrap());
        assert_ne!(s, split_indices(100, &SplitConfig { seed: 12, ..cfg }).unwrap());
        assert!(matches!(split_indices(3, &cfg), Err(Error::InsufficientData(_))));
        assert!(matches!(split_indices(10, &SplitConfig { test_fraction: 1.0, seed: 0 }), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let a = Column::continuous("a", vec![1.0]).unwrap();
        assert!(Dataset::new(vec![a.clone(), a]).is_err());
    }
}
