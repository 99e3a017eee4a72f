//! Partition agreement: entropy, mutual information, and adjusted mutual
//! information with the hypergeometric chance correction.

use crate::error::{Error, Result};
use crate::ingest::Partition;

/// Contingency table of two partitions over the same items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<usize>>,
    row_sums: Vec<usize>,
    col_sums: Vec<usize>,
    total: usize,
}

impl ContingencyTable {
    pub fn from_partitions(a: &Partition, b: &Partition) -> Result<Self> {
        if a.n_items() != b.n_items() {
            return Err(Error::Dimension(format!(
                "partitions cover {} and {} items",
                a.n_items(),
                b.n_items()
            )));
        }
        let mut counts = vec![vec![0usize; b.n_clusters()]; a.n_clusters()];
        for (&la, &lb) in a.labels().iter().zip(b.labels()) {
            counts[la][lb] += 1;
        }
        Self::from_counts(counts)
    }

    /// Builds a table from raw counts, recomputing margins.
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        if counts.is_empty() || counts[0].is_empty() {
            return Err(Error::Dimension("empty contingency table".into()));
        }
        let cols = counts[0].len();
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged contingency table".into()));
        }
        let row_sums: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<usize> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = row_sums.iter().sum();
        if total == 0 {
            return Err(Error::Dimension("contingency table has no items".into()));
        }
        Ok(Self { counts, row_sums, col_sums, total })
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[usize] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[usize] {
        &self.col_sums
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Shannon entropy of the cluster-size distribution, natural log.
pub fn entropy(p: &Partition) -> f64 {
    let n = p.n_items() as f64;
    p.counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.ln()
        })
        .sum()
}

/// Mutual information of the table, natural log; empty cells contribute 0.
pub fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.total as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += (nij / n) * ((n * nij) / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
        }
    }
    mi
}

/// Cumulative log-factorial table: `lf[k] = ln k!`.
fn log_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0f64; n + 1];
    for k in 1..=n {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    lf
}

/// Expected mutual information under random tables with the observed
/// margins (hypergeometric model). Factorial ratios go through log space.
pub fn expected_mi(t: &ContingencyTable) -> f64 {
    let n = t.total;
    let nf = n as f64;
    let lf = log_factorials(n);
    let mut emi = 0.0;
    for &a in &t.row_sums {
        for &b in &t.col_sums {
            if a == 0 || b == 0 {
                continue;
            }
            // n_ij = 0 terms contribute nothing to MI, so the sum starts at
            // max(1, a + b - N).
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let nij_f = nij as f64;
                let term = (nij_f / nf) * ((nf * nij_f) / (a as f64 * b as f64)).ln();
                let log_weight = lf[a] + lf[b] + lf[n - a] + lf[n - b]
                    - lf[n]
                    - lf[nij]
                    - lf[a - nij]
                    - lf[b - nij]
                    - lf[n - a - b + nij];
                emi += term * log_weight.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information:
/// `(MI − E[MI]) / (sqrt(H(A) H(B)) − E[MI])`.
///
/// Equal partitions score exactly 1. When the denominator vanishes for
/// unequal partitions the score is 0.
pub fn ami(a: &Partition, b: &Partition) -> Result<f64> {
    if a.n_items() != b.n_items() {
        return Err(Error::Dimension(format!(
            "partitions cover {} and {} items",
            a.n_items(),
            b.n_items()
        )));
    }
    // Partitions are stored canonically, so equality of labels is equality
    // of the underlying set partitions.
    if a == b {
        return Ok(1.0);
    }
    let t = ContingencyTable::from_partitions(a, b)?;
    let mi = mutual_information(&t);
    let emi = expected_mi(&t);
    let denom = (entropy(a) * entropy(b)).sqrt() - emi;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}
