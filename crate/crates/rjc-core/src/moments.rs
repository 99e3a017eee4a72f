//! Mixture parameterization with shared covariance structure.
//!
//! A C-component mixture over the rows of `J` needs only O(C³) covariance
//! parameters: the covariance between any two entries of a row depends only
//! on the clusters of the row's item and of the two column items. This
//! module holds those parameters, assembles the per-row mean vector and
//! covariance matrix implied by a label configuration, repairs the (by
//! construction singular) covariance by eigenvalue flooring, and evaluates
//! the Gaussian log-density.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative eigenvalue floor used to repair singular covariances.
pub const DEFAULT_REL_FLOOR: f64 = 1e-8;

/// Shared parameters of the structured mixture.
///
/// Indices are clusters `0..C`. `mu_pair`, `var_pair` are symmetric;
/// `cov_triple[a][b][d]` is symmetric in `(b, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    #[serde(rename = "C")]
    pub c: usize,
    /// Mixing weights, a point on the C-simplex.
    pub w: Vec<f64>,
    /// Mean of the self-similarity entry `J_{k,N+1}` per cluster.
    pub mu_diag: Vec<f64>,
    /// Mean of `J_km` for items in clusters (a, b).
    pub mu_pair: Vec<Vec<f64>>,
    /// Variance of `J_{k,N+1}` per cluster.
    pub var_diag: Vec<f64>,
    /// Variance of `J_km` for items in clusters (a, b).
    pub var_pair: Vec<Vec<f64>>,
    /// Covariance of `J_km`, `J_kn` for clusters (a, b, d) of (k, m, n).
    pub cov_triple: Vec<Vec<Vec<f64>>>,
}

impl MixtureParams {
    /// Zero-initialized parameter set for `c` clusters.
    pub fn zeros(c: usize) -> Self {
        Self {
            c,
            w: vec![0.0; c],
            mu_diag: vec![0.0; c],
            mu_pair: vec![vec![0.0; c]; c],
            var_diag: vec![0.0; c],
            var_pair: vec![vec![0.0; c]; c],
            cov_triple: vec![vec![vec![0.0; c]; c]; c],
        }
    }

    /// Checks the structural invariants: simplex weights, symmetric pair
    /// blocks, `cov_triple` symmetric in its last two indices, nonnegative
    /// variances.
    pub fn validate(&self) -> Result<()> {
        let c = self.c;
        if c == 0 {
            return Err(Error::Domain("C must be at least 1".into()));
        }
        let shapes_ok = self.w.len() == c
            && self.mu_diag.len() == c
            && self.var_diag.len() == c
            && self.mu_pair.len() == c
            && self.var_pair.len() == c
            && self.cov_triple.len() == c
            && self.mu_pair.iter().all(|r| r.len() == c)
            && self.var_pair.iter().all(|r| r.len() == c)
            && self.cov_triple.iter().all(|m| m.len() == c && m.iter().all(|r| r.len() == c));
        if !shapes_ok {
            return Err(Error::Dimension("parameter array shapes do not match C".into()));
        }
        let wsum: f64 = self.w.iter().sum();
        if self.w.iter().any(|&w| w < 0.0) || (wsum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("weights must be a simplex, sum = {wsum}")));
        }
        for a in 0..c {
            if self.var_diag[a] < 0.0 {
                return Err(Error::Contract(format!("var_diag[{a}] negative")));
            }
            for b in 0..c {
                if self.var_pair[a][b] < 0.0 {
                    return Err(Error::Contract(format!("var_pair[{a}][{b}] negative")));
                }
                if (self.mu_pair[a][b] - self.mu_pair[b][a]).abs() > 1e-12
                    || (self.var_pair[a][b] - self.var_pair[b][a]).abs() > 1e-12
                {
                    return Err(Error::Contract(format!("pair parameters asymmetric at ({a}, {b})")));
                }
                for d in 0..c {
                    if (self.cov_triple[a][b][d] - self.cov_triple[a][d][b]).abs() > 1e-12 {
                        return Err(Error::Contract(format!(
                            "cov_triple[{a}] asymmetric at ({b}, {d})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean vector and covariance matrix for one row of `J` under a hypothesized
/// cluster for its item.
#[derive(Debug, Clone)]
pub struct RowModel {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Assembles the model for row `k` of `J` under the hypothesis that item `k`
/// belongs to cluster `a`, with all other items fixed at `labels` (raw
/// cluster ids, each below `params.c`; item `k`'s own label is ignored).
///
/// Coordinates `0..N` are the row's item entries (position `k` being the
/// substituted diagonal), coordinate `N` the self-similarity column. The
/// substituted diagonal's mean, variance, and covariances are the exact
/// linear combinations implied by `J_kk` being the average of the row's
/// other item entries. Cross-covariances with the self-similarity column
/// are zero: the parameter set estimates none.
pub fn assemble_row_model(params: &MixtureParams, labels: &[usize], k: usize, a: usize) -> Result<RowModel> {
    let n = labels.len();
    let c = params.c;
    if a >= c {
        return Err(Error::Index(format!("cluster {a} out of range 0..{c}")));
    }
    if k >= n {
        return Err(Error::Index(format!("item {k} out of range 0..{n}")));
    }
    if let Some((m, &l)) = labels.iter().enumerate().find(|&(m, &l)| m != k && l >= c) {
        return Err(Error::Index(format!("label {l} of item {m} out of range 0..{c}")));
    }
    let lab = labels;
    let dim = n + 1;
    let nm1 = (n - 1) as f64;

    // Counts of the other items' labels.
    let mut cnt = vec![0.0f64; c];
    for (m, &l) in lab.iter().enumerate() {
        if m != k {
            cnt[l] += 1.0;
        }
    }

    let mut mean = DVector::<f64>::zeros(dim);
    let mut cov = DMatrix::<f64>::zeros(dim, dim);

    for m in 0..n {
        if m == k {
            continue;
        }
        mean[m] = params.mu_pair[a][lab[m]];
        cov[(m, m)] = params.var_pair[a][lab[m]];
        for l in (m + 1)..n {
            if l == k {
                continue;
            }
            let v = params.cov_triple[a][lab[m]][lab[l]];
            cov[(m, l)] = v;
            cov[(l, m)] = v;
        }
    }
    mean[n] = params.mu_diag[a];
    cov[(n, n)] = params.var_diag[a];

    // Substituted diagonal: average of the other item entries.
    mean[k] = (0..c).map(|b| cnt[b] * params.mu_pair[a][b]).sum::<f64>() / nm1;

    // s_ct[d] = sum over other items l of cov_triple[a][d][label_l].
    let s_ct: Vec<f64> = (0..c)
        .map(|d| (0..c).map(|b| cnt[b] * params.cov_triple[a][d][b]).sum::<f64>())
        .collect();

    for m in 0..n {
        if m == k {
            continue;
        }
        let d = lab[m];
        let v = (params.var_pair[a][d] + s_ct[d] - params.cov_triple[a][d][d]) / nm1;
        cov[(k, m)] = v;
        cov[(m, k)] = v;
    }

    let sum_vp: f64 = (0..c).map(|b| cnt[b] * params.var_pair[a][b]).sum();
    let sum_ct_pairs: f64 = (0..c)
        .map(|b| {
            (0..c)
                .map(|d| cnt[b] * cnt[d] * params.cov_triple[a][b][d])
                .sum::<f64>()
        })
        .sum::<f64>()
        - (0..c).map(|b| cnt[b] * params.cov_triple[a][b][b]).sum::<f64>();
    cov[(k, k)] = (sum_vp + sum_ct_pairs) / (nm1 * nm1);

    Ok(RowModel { mean, cov })
}

/// Repairs a symmetric matrix into a positive definite one by clamping small
/// or negative eigenvalues to `rel_floor` times the largest eigenvalue.
/// Returns the input unchanged when no eigenvalue is below the floor.
pub fn floor_covariance(cov: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::Dimension(format!("covariance is {}x{}, expected square", n, cov.ncols())));
    }
    let scale = cov.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    for i in 0..n {
        for j in (i + 1)..n {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Contract(format!(
                    "covariance asymmetric at ({i}, {j}): {} vs {}",
                    cov[(i, j)],
                    cov[(j, i)]
                )));
            }
        }
    }

    let eig = SymmetricEigen::new(cov.clone());
    let lambda_max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let eps = rel_floor * lambda_max.max(1e-300);
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return Ok(cov.clone());
    }
    let clamped = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(eps)));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    // Eliminate rounding asymmetry from the reconstruction.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Log of the multivariate normal density of `row` under `model`, via a
/// Cholesky factorization; the inverse is never formed explicitly.
pub fn log_density(row: &[f64], model: &RowModel) -> Result<f64> {
    let dim = model.mean.len();
    if row.len() != dim || model.cov.nrows() != dim {
        return Err(Error::Dimension(format!(
            "row length {} does not match model dimension {dim}",
            row.len()
        )));
    }
    let chol = Cholesky::new(model.cov.clone())
        .ok_or_else(|| Error::Numerical("covariance factorization failed after flooring".into()))?;
    let diff = DVector::from_iterator(dim, row.iter().zip(model.mean.iter()).map(|(&x, &m)| x - m));
    log_density_prefactored(&diff, &chol)
}

/// Shared kernel: log-density from a precomputed Cholesky factor and a
/// centered row.
pub(crate) fn log_density_prefactored(diff: &DVector<f64>, chol: &Cholesky<f64, nalgebra::Dyn>) -> Result<f64> {
    let dim = diff.len();
    let l = chol.l_dirty();
    let mut log_det = 0.0f64;
    for i in 0..dim {
        log_det += l[(i, i)].ln();
    }
    log_det *= 2.0;
    let z = l.solve_lower_triangular(diff).ok_or_else(|| {
        Error::Numerical("triangular solve failed in density evaluation".into())
    })?;
    let quad: f64 = z.iter().map(|&v| v * v).sum();
    Ok(-0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
}

/// Number of free parameters estimated by the M-step for a C-component
/// model: weights (C−1), `mu_diag` (C), `mu_pair` (C(C+1)/2), `var_diag`
/// (C), `var_pair` (C(C+1)/2), `cov_triple` (C·C(C+1)/2).
pub fn param_count(c: usize) -> Result<usize> {
    if c < 1 {
        return Err(Error::Domain("parameter count requires C >= 1".into()));
    }
    let pairs = c * (c + 1) / 2;
    Ok((c - 1) + c + pairs + c + pairs + c * pairs)
}

/// Covariance parameters only: `var_diag`, `var_pair`, `cov_triple`.
pub fn covariance_param_count(c: usize) -> Result<usize> {
    if c < 1 {
        return Err(Error::Domain("parameter count requires C >= 1".into()));
    }
    let pairs = c * (c + 1) / 2;
    Ok(c + pairs + c * pairs)
}
