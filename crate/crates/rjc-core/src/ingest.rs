//! Feature-matrix and label-file ingestion, plus the log/median/sd
//! standardization used for expression-style data.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk layout of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    ItemsInRows,
    ItemsInColumns,
}

/// Standardization policy for [`gene_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    /// Apply the log transform only when every entry is strictly positive.
    Auto,
    /// Apply unconditionally; non-positive entries are an error.
    Force,
    /// Identity.
    Off,
}

/// N×P matrix of item feature vectors. Rows are items.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    item_ids: Vec<String>,
    feature_ids: Vec<String>,
}

impl FeatureMatrix {
    /// Wraps a matrix after checking the type invariants: all entries
    /// finite, at least two items, at least one feature.
    pub fn new(values: DMatrix<f64>, item_ids: Vec<String>, feature_ids: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 {
            return Err(Error::Dimension(format!("need at least 2 items, got {n}")));
        }
        if p < 1 {
            return Err(Error::Dimension("need at least 1 feature".into()));
        }
        if item_ids.len() != n || feature_ids.len() != p {
            return Err(Error::Dimension(format!(
                "identifier lengths ({}, {}) do not match matrix shape {n}x{p}",
                item_ids.len(),
                feature_ids.len()
            )));
        }
        for i in 0..n {
            for j in 0..p {
                if !values[(i, j)].is_finite() {
                    return Err(Error::Domain(format!(
                        "non-finite value {} at item {i}, feature {j}",
                        values[(i, j)]
                    )));
                }
            }
        }
        Ok(Self { values, item_ids, feature_ids })
    }

    /// Convenience constructor with generated identifiers.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let item_ids = (0..values.nrows()).map(|i| format!("item_{}", i + 1)).collect();
        let feature_ids = (0..values.ncols()).map(|j| format!("f{}", j + 1)).collect();
        Self::new(values, item_ids, feature_ids)
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    /// Writes the raw values as CSV, one item per row, with enough digits
    /// to round-trip every finite double bit-exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                if j > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{:.16e}", self.values[(i, j)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Hard assignment of N items to clusters `0..n_clusters`.
///
/// Canonical form: cluster ids appear in first-occurrence order and every id
/// in `0..n_clusters` is used at least once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Builds a canonical partition from arbitrary label tokens, relabeling
    /// to `0..C` in first-occurrence order.
    pub fn from_labels<T: Eq + std::hash::Hash>(raw: &[T]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Format("empty label sequence".into()));
        }
        let mut map: HashMap<&T, usize> = HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for token in raw {
            let next = map.len();
            let id = *map.entry(token).or_insert(next);
            labels.push(id);
        }
        let n_clusters = map.len();
        Ok(Self { labels, n_clusters })
    }

    /// Wraps labels already in canonical form; errors when a cluster id is
    /// out of range or unused.
    pub fn from_canonical(labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if labels.is_empty() || n_clusters == 0 {
            return Err(Error::Format("empty partition".into()));
        }
        let mut seen = vec![false; n_clusters];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_clusters {
                return Err(Error::Index(format!("label {l} at item {i} out of range 0..{n_clusters}")));
            }
            seen[l] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Format("partition is not canonical: unused cluster id".into()));
        }
        Ok(Self { labels, n_clusters })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Items per cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_clusters];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn detect_delimiter(line: &str) -> char {
    let candidates = [',', '\t', ';'];
    let mut best = ',';
    let mut best_count = 0usize;
    for &d in &candidates {
        let count = line.matches(d).count();
        if count > best_count {
            best = d;
            best_count = count;
        }
    }
    best
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Splits file content into trimmed non-empty-at-the-tail lines. Interior
/// blank lines are preserved so they surface as format errors.
fn content_lines(content: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = content.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    lines
}

fn parse_cell(tok: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
        row,
        col,
        msg: format!("cell {tok:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, col, msg: format!("cell {tok:?} is not finite") });
    }
    Ok(v)
}

/// Loads a delimited numeric matrix. The delimiter is auto-detected among
/// comma, tab, and semicolon from the first line.
///
/// A header row is assumed when any cell of the first line fails numeric
/// parsing; an identifier column when the first cell of *every* data row
/// fails numeric parsing. Any other non-numeric cell is a parse error that
/// names its 1-based on-disk row and column.
pub fn load_matrix(path: &Path, orientation: Orientation) -> Result<FeatureMatrix> {
    let content = read_to_string(path)?;
    let lines = content_lines(&content);
    if lines.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    let delim = detect_delimiter(lines[0]);
    let rows: Vec<Vec<&str>> = lines.iter().map(|l| l.split(delim).collect()).collect();

    let header_row = rows[0].iter().any(|tok| tok.trim().parse::<f64>().is_err());
    let data_start = usize::from(header_row);
    if rows.len() <= data_start {
        return Err(Error::Format("no data rows".into()));
    }
    let data_rows = &rows[data_start..];

    let width = data_rows[0].len();
    for (i, r) in data_rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::Format(format!(
                "ragged input: row {} has {} cells, expected {width}",
                data_start + i + 1,
                r.len()
            )));
        }
    }

    let id_col = width > 1 && data_rows.iter().all(|r| r[0].trim().parse::<f64>().is_err());
    let col_start = usize::from(id_col);
    if width <= col_start {
        return Err(Error::Format("no numeric columns".into()));
    }

    let nrows = data_rows.len();
    let ncols = width - col_start;
    let mut values = DMatrix::<f64>::zeros(nrows, ncols);
    for (i, r) in data_rows.iter().enumerate() {
        for (j, tok) in r[col_start..].iter().enumerate() {
            values[(i, j)] = parse_cell(tok, data_start + i + 1, col_start + j + 1)?;
        }
    }

    let row_ids: Vec<String> = if id_col {
        data_rows.iter().map(|r| r[0].trim().to_string()).collect()
    } else {
        (0..nrows).map(|i| format!("row_{}", i + 1)).collect()
    };
    let col_ids: Vec<String> = if header_row {
        rows[0][col_start..].iter().map(|t| t.trim().to_string()).collect()
    } else {
        (0..ncols).map(|j| format!("col_{}", j + 1)).collect()
    };
    // Header may or may not carry a cell above the id column.
    let col_ids = if header_row && col_ids.len() == ncols + 1 {
        col_ids[1..].to_vec()
    } else if col_ids.len() != ncols {
        (0..ncols).map(|j| format!("col_{}", j + 1)).collect()
    } else {
        col_ids
    };

    match orientation {
        Orientation::ItemsInRows => FeatureMatrix::new(values, row_ids, col_ids),
        Orientation::ItemsInColumns => FeatureMatrix::new(values.transpose(), col_ids, row_ids),
    }
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        // Mean of the two middle order statistics.
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per-feature standardization: log, center by the feature's median, scale
/// by the sample standard deviation (n−1 denominator) of the logs.
///
/// `Auto` applies the transform only when every entry is strictly positive;
/// data that already contains zeros or negatives passes through unchanged.
pub fn gene_transform(x: &FeatureMatrix, mode: TransformMode) -> Result<FeatureMatrix> {
    if matches!(mode, TransformMode::Off) {
        return Ok(x.clone());
    }
    let all_positive = x.values().iter().all(|&v| v > 0.0);
    match mode {
        TransformMode::Auto if !all_positive => return Ok(x.clone()),
        TransformMode::Force if !all_positive => {
            let (i, j) = x
                .values()
                .iter()
                .enumerate()
                .find(|(_, &v)| v <= 0.0)
                .map(|(idx, _)| (idx % x.n_items(), idx / x.n_items()))
                .expect("non-positive entry exists");
            return Err(Error::Domain(format!(
                "log transform requires strictly positive values; item {i}, feature {} is {}",
                x.feature_ids()[j],
                x.values()[(i, j)]
            )));
        }
        _ => {}
    }

    let n = x.n_items();
    let mut out = x.values().clone();
    for j in 0..x.n_features() {
        let mut logged: Vec<f64> = (0..n).map(|i| out[(i, j)].ln()).collect();
        let mut sorted = logged.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = median_of_sorted(&sorted);
        let mean = logged.iter().sum::<f64>() / n as f64;
        let var = logged.iter().map(|&y| (y - mean) * (y - mean)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if sd == 0.0 {
            return Err(Error::DegenerateFeature {
                feature: x.feature_ids()[j].clone(),
                msg: "constant after log transform (zero standard deviation)".into(),
            });
        }
        for (i, y) in logged.iter_mut().enumerate() {
            out[(i, j)] = (*y - med) / sd;
        }
    }
    FeatureMatrix::new(out, x.item_ids().to_vec(), x.feature_ids().to_vec())
}

/// Loads a gold-standard partition: one label per line, or a single
/// delimited line. Labels are arbitrary tokens, relabeled canonically in
/// first-occurrence order.
pub fn load_labels(path: &Path) -> Result<Partition> {
    let content = read_to_string(path)?;
    let lines = content_lines(&content);
    let tokens: Vec<String> = if lines.len() == 1 && lines[0].contains([',', '\t', ';']) {
        let delim = detect_delimiter(lines[0]);
        lines[0].split(delim).map(|t| t.trim().to_string()).collect()
    } else {
        lines.iter().map(|l| l.trim().to_string()).collect()
    };
    let tokens: Vec<String> = tokens.into_iter().filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(Error::Format(format!("{} contains no labels", path.display())));
    }
    Partition::from_labels(&tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn write_temp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.csv");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn load_matrix_items_in_rows() {
        let (_g, path) = write_temp("1,0\n0,1\n1,1\n");
        let m = load_matrix(&path, Orientation::ItemsInRows).unwrap();
        assert_eq!(m.n_items(), 3);
        assert_eq!(m.n_features(), 2);
        assert_eq!(m.values()[(0, 0)], 1.0);
        assert_eq!(m.values()[(2, 1)], 1.0);
    }

    #[test]
    fn load_matrix_items_in_columns_transposes() {
        let (_g, path) = write_temp("1,0\n0,1\n1,1\n");
        let m = load_matrix(&path, Orientation::ItemsInColumns).unwrap();
        assert_eq!(m.n_items(), 2);
        assert_eq!(m.n_features(), 3);
        assert_eq!(m.values()[(0, 2)], 1.0);
        assert_eq!(m.values()[(1, 2)], 1.0);
    }

    #[test]
    fn load_matrix_names_bad_cell() {
        let (_g, path) = write_temp("1,0\n0,abc\n1,1\n");
        let err = load_matrix(&path, Orientation::ItemsInRows).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_matrix_ragged_rows_rejected() {
        let (_g, path) = write_temp("1,2\n3\n");
        assert!(matches!(load_matrix(&path, Orientation::ItemsInRows), Err(Error::Format(_))));
    }

    #[test]
    fn load_matrix_header_and_id_column() {
        let (_g, path) = write_temp("id,f1,f2\ns1,1.5,2\ns2,3,4\n");
        let m = load_matrix(&path, Orientation::ItemsInRows).unwrap();
        assert_eq!(m.n_items(), 2);
        assert_eq!(m.item_ids(), ["s1", "s2"]);
        assert_eq!(m.feature_ids(), ["f1", "f2"]);
        assert_eq!(m.values()[(0, 0)], 1.5);
    }

    #[test]
    fn load_matrix_tab_and_semicolon() {
        let (_g, path) = write_temp("1\t2\n3\t4\n");
        assert_eq!(load_matrix(&path, Orientation::ItemsInRows).unwrap().n_features(), 2);
        let (_g2, path2) = write_temp("1;2\n3;4\n");
        assert_eq!(load_matrix(&path2, Orientation::ItemsInRows).unwrap().n_features(), 2);
    }

    #[test]
    fn load_matrix_too_few_items() {
        let (_g, path) = write_temp("1,2,3\n");
        assert!(matches!(load_matrix(&path, Orientation::ItemsInRows), Err(Error::Dimension(_))));
    }

    #[test]
    fn gene_transform_exact_column() {
        use std::f64::consts::E;
        let values = DMatrix::from_row_slice(3, 1, &[1.0, E, E * E]);
        let x = FeatureMatrix::from_values(values).unwrap();
        let y = gene_transform(&x, TransformMode::Force).unwrap();
        assert_relative_eq!(y.values()[(0, 0)], -1.0, max_relative = 1e-12);
        assert_relative_eq!(y.values()[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(y.values()[(2, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn gene_transform_auto_skips_negatives() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 2.0, 3.0]);
        let x = FeatureMatrix::from_values(values).unwrap();
        let y = gene_transform(&x, TransformMode::Auto).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn gene_transform_off_is_identity() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = FeatureMatrix::from_values(values).unwrap();
        assert_eq!(gene_transform(&x, TransformMode::Off).unwrap(), x);
    }

    #[test]
    fn gene_transform_force_rejects_nonpositive() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 3.0]);
        let x = FeatureMatrix::from_values(values).unwrap();
        assert!(matches!(gene_transform(&x, TransformMode::Force), Err(Error::Domain(_))));
    }

    #[test]
    fn gene_transform_rejects_constant_feature() {
        let values = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 2.0, 5.0, 2.0, 9.0]);
        let x = FeatureMatrix::from_values(values).unwrap();
        match gene_transform(&x, TransformMode::Force) {
            Err(Error::DegenerateFeature { feature, .. }) => assert_eq!(feature, "f1"),
            other => panic!("expected degenerate feature, got {other:?}"),
        }
    }

    #[test]
    fn load_labels_canonicalizes() {
        let (_g, path) = write_temp("B\nA\nB\nA\n");
        let p = load_labels(&path).unwrap();
        assert_eq!(p.labels(), &[0, 1, 0, 1]);
        assert_eq!(p.n_clusters(), 2);
    }

    #[test]
    fn load_labels_single_line_csv() {
        let (_g, path) = write_temp("x,x,x\n");
        let p = load_labels(&path).unwrap();
        assert_eq!(p.labels(), &[0, 0, 0]);
        assert_eq!(p.n_clusters(), 1);
    }

    #[test]
    fn load_labels_empty_file_is_error() {
        let (_g, path) = write_temp("");
        assert!(matches!(load_labels(&path), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let values = DMatrix::from_row_slice(3, 2, &[
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1.2345678901234567e-200,
            -9.87654321e154,
            2.0f64.powi(-52),
        ]);
        let x = FeatureMatrix::from_values(values).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        let (_g, path) = write_temp(std::str::from_utf8(&buf).unwrap());
        let y = load_matrix(&path, Orientation::ItemsInRows).unwrap();
        assert_eq!(x.values(), y.values());
    }

    proptest! {
        #[test]
        fn transform_centers_and_scales(rows in 3usize..9, cols in 1usize..4, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.05..50.0f64));
            let x = FeatureMatrix::from_values(values).unwrap();
            let y = gene_transform(&x, TransformMode::Force).unwrap();
            for j in 0..cols {
                let mut col: Vec<f64> = (0..rows).map(|i| y.values()[(i, j)]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med = median_of_sorted(&col);
                prop_assert!(med.abs() <= 1e-12, "median {med}");
                let mean = col.iter().sum::<f64>() / rows as f64;
                let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (rows as f64 - 1.0);
                prop_assert!((var.sqrt() - 1.0).abs() <= 1e-12, "sd {}", var.sqrt());
            }
        }

        #[test]
        fn round_trip_random_matrices(rows in 2usize..6, cols in 1usize..5, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = DMatrix::from_fn(rows, cols, |_, _| {
                let m: f64 = rng.random_range(-1.0..1.0);
                let e: i32 = rng.random_range(-80..80);
                m * 10f64.powi(e)
            });
            let x = FeatureMatrix::from_values(values).unwrap();
            let mut buf = Vec::new();
            x.write_csv(&mut buf).unwrap();
            let (_g, path) = write_temp(std::str::from_utf8(&buf).unwrap());
            let y = load_matrix(&path, Orientation::ItemsInRows).unwrap();
            prop_assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn partition_from_canonical_validates() {
        assert!(Partition::from_canonical(vec![0, 1, 2], 3).is_ok());
        assert!(Partition::from_canonical(vec![0, 2], 3).is_err());
        assert!(Partition::from_canonical(vec![0, 3], 3).is_err());
    }
}
