//! Construction of the similarity matrix `R = X Xᵀ / P` and the juxtaposed
//! matrix `J`.
//!
//! `J` is `R` with the diagonal moved out of the way: column `N+1` holds the
//! self-similarities `R_kk`, and each diagonal slot `J_kk` is replaced by the
//! mean of the row's off-diagonal entries. Rows of `J` belonging to the same
//! cluster then share expectations entry-wise, which is what the mixture
//! model downstream relies on.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::FeatureMatrix;
use crate::par;

/// N×N symmetric similarity matrix together with the feature count used in
/// the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    n_features: usize,
}

impl GramMatrix {
    /// Wraps an existing matrix, checking symmetry (1e-12 relative) and
    /// nonnegative diagonal.
    pub fn from_values(values: DMatrix<f64>, n_features: usize) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::Dimension(format!("matrix is {}x{}, expected square", n, values.ncols())));
        }
        let scale = values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())).max(1e-300);
        for i in 0..n {
            if values[(i, i)] < 0.0 {
                return Err(Error::Domain(format!("negative diagonal entry at {i}")));
            }
            for j in (i + 1)..n {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Contract(format!("asymmetry at ({i}, {j}) exceeds tolerance")));
                }
            }
        }
        Ok(Self { values, n_features })
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Row-major CSV export with round-trip precision.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_matrix_csv(&self.values, w)
    }
}

/// N×(N+1) juxtaposed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct JuxtaposedMatrix {
    values: DMatrix<f64>,
}

impl JuxtaposedMatrix {
    /// Wraps a prebuilt N×(N+1) matrix. Checks shape, finiteness, and that
    /// every substituted diagonal equals its row's off-diagonal mean
    /// (1e-9 relative); rows are otherwise unconstrained.
    pub fn from_raw(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if n < 2 || values.ncols() != n + 1 {
            return Err(Error::Dimension(format!(
                "juxtaposed matrix must be Nx(N+1) with N >= 2, got {}x{}",
                n,
                values.ncols()
            )));
        }
        for k in 0..n {
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for l in 0..n {
                if l != k {
                    sum += values[(k, l)];
                    scale = scale.max(values[(k, l)].abs());
                }
            }
            let mean = sum / (n as f64 - 1.0);
            if !values[(k, k)].is_finite() || (values[(k, k)] - mean).abs() > 1e-9 * scale {
                return Err(Error::Contract(format!(
                    "row {k}: substituted diagonal {} is not the off-diagonal mean {mean}",
                    values[(k, k)]
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    /// Dimension of each row vector, N+1.
    pub fn row_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        (0..self.values.ncols()).map(|j| self.values[(k, j)]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_matrix_csv(&self.values, w)
    }
}

fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut w: W) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                write!(w, ",")?;
            }
            write!(w, "{:.16e}", m[(i, j)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Builds `R = X Xᵀ / P`, computing the upper triangle and mirroring so the
/// result is exactly symmetric. Dot products accumulate in f64 and are
/// normalized by P once at the end.
pub fn build_gram(x: &FeatureMatrix) -> GramMatrix {
    let n = x.n_items();
    let p = x.n_features();
    // Transposed copy: item vectors become contiguous columns.
    let xt = x.values().transpose();
    let p_f = p as f64;

    let rows: Vec<Vec<f64>> = par::map_indexed(n, |k| {
        let ck = xt.column(k);
        (k..n)
            .map(|l| {
                let mut acc = 0.0f64;
                let cl = xt.column(l);
                for i in 0..p {
                    acc += ck[i] * cl[i];
                }
                acc / p_f
            })
            .collect()
    });

    let mut values = DMatrix::<f64>::zeros(n, n);
    for (k, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let l = k + off;
            values[(k, l)] = v;
            values[(l, k)] = v;
        }
    }
    GramMatrix { values, n_features: p }
}

/// Sequential twin of [`build_gram`]; exists for benchmark comparison and
/// produces bit-identical output.
pub fn build_gram_seq(x: &FeatureMatrix) -> GramMatrix {
    let n = x.n_items();
    let p = x.n_features();
    let xt = x.values().transpose();
    let p_f = p as f64;
    let rows: Vec<Vec<f64>> = par::map_indexed_seq(n, |k| {
        let ck = xt.column(k);
        (k..n)
            .map(|l| {
                let mut acc = 0.0f64;
                let cl = xt.column(l);
                for i in 0..p {
                    acc += ck[i] * cl[i];
                }
                acc / p_f
            })
            .collect()
    });
    let mut values = DMatrix::<f64>::zeros(n, n);
    for (k, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let l = k + off;
            values[(k, l)] = v;
            values[(l, k)] = v;
        }
    }
    GramMatrix { values, n_features: p }
}

/// Builds `J` from `R`: `J_kl = R_kl` for `k != l`, `J_{k,N+1} = R_kk`, and
/// `J_kk` is the mean of row k's off-diagonal entries.
pub fn build_juxtaposed(r: &GramMatrix) -> Result<JuxtaposedMatrix> {
    let n = r.n_items();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "juxtaposition needs N >= 2 (the substituted diagonal averages N-1 entries), got {n}"
        )));
    }
    let rv = r.values();
    let mut values = DMatrix::<f64>::zeros(n, n + 1);
    for k in 0..n {
        let mut sum = 0.0f64;
        for l in 0..n {
            if l != k {
                values[(k, l)] = rv[(k, l)];
                sum += rv[(k, l)];
            }
        }
        values[(k, k)] = sum / (n as f64 - 1.0);
        values[(k, n)] = rv[(k, k)];
    }
    Ok(JuxtaposedMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FeatureMatrix;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fm(rows: usize, cols: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_values(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn gram_orthogonal_rows() {
        let r = build_gram(&fm(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(r.values(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
    }

    #[test]
    fn gram_identical_rows() {
        let r = build_gram(&fm(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(r.values(), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn gram_matches_naive_loop() {
        let x = fm(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = build_gram(&x);
        let expected = DMatrix::from_row_slice(3, 3, &[2.5, 5.5, 8.5, 5.5, 12.5, 19.5, 8.5, 19.5, 30.5]);
        assert_eq!(r.values(), &expected);
        // Independent elementwise check.
        for k in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for p in 0..2 {
                    s += x.values()[(k, p)] * x.values()[(l, p)];
                }
                assert_relative_eq!(r.values()[(k, l)], s / 2.0, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn juxtaposed_three_by_three_layout() {
        let r = GramMatrix::from_values(
            DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]),
            1,
        )
        .unwrap();
        let j = build_juxtaposed(&r).unwrap();
        let expected = DMatrix::from_row_slice(3, 4, &[
            2.5, 2.0, 3.0, 1.0, //
            2.0, 3.5, 5.0, 4.0, //
            3.0, 5.0, 4.0, 6.0,
        ]);
        assert_eq!(j.values(), &expected);
    }

    #[test]
    fn juxtaposed_two_items() {
        let (a, b, d) = (7.5, -2.0, 0.25);
        let r = GramMatrix::from_values(DMatrix::from_row_slice(2, 2, &[a, b, b, d]), 3).unwrap();
        let j = build_juxtaposed(&r).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[b, b, a, b, b, d]);
        assert_eq!(j.values(), &expected);
    }

    #[test]
    fn self_similarity_column_is_row_mean_square() {
        let x = fm(3, 4, &[0.5, -1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, -2.0, 0.5, 0.25, 3.0]);
        let j = build_juxtaposed(&build_gram(&x)).unwrap();
        for k in 0..3 {
            let msq: f64 = (0..4).map(|p| x.values()[(k, p)].powi(2)).sum::<f64>() / 4.0;
            assert_eq!(j.values()[(k, 3)], msq);
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let values = DMatrix::from_fn(37, 61, |_, _| rng.random_range(-2.0..2.0f64));
        let x = FeatureMatrix::from_values(values).unwrap();
        assert_eq!(build_gram(&x).values(), build_gram_seq(&x).values());
    }

    #[test]
    fn from_raw_rejects_bad_diagonal() {
        let mut values = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
        assert!(JuxtaposedMatrix::from_raw(values.clone()).is_err());
        values[(0, 0)] = 1.0;
        assert!(JuxtaposedMatrix::from_raw(values).is_ok());
    }

    proptest! {
        #[test]
        fn substituted_diagonal_is_off_diagonal_mean(n in 2usize..8, p in 1usize..6, seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0f64));
            let x = FeatureMatrix::from_values(values).unwrap();
            let j = build_juxtaposed(&build_gram(&x)).unwrap();
            for k in 0..n {
                let mean: f64 = (0..n).filter(|&l| l != k).map(|l| j.values()[(k, l)]).sum::<f64>()
                    / (n as f64 - 1.0);
                prop_assert!((j.values()[(k, k)] - mean).abs() <= 1e-12);
            }
        }

        #[test]
        fn gram_invariant_under_feature_permutation(n in 2usize..6, p in 2usize..8, seed in 0u64..500) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0f64));
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(&mut rng);
            let permuted = DMatrix::from_fn(n, p, |i, j| values[(i, perm[j])]);
            let a = build_gram(&FeatureMatrix::from_values(values).unwrap());
            let b = build_gram(&FeatureMatrix::from_values(permuted).unwrap());
            let scale = a.values().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
            for (x, y) in a.values().iter().zip(b.values().iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }
}
