//! Synthetic finite-mixture data with closed-form moments.
//!
//! Every item's features are independent draws centered on its cluster's
//! mean vector. Gaussian noise gives closed forms for the first four
//! moments; a variance-matched uniform variant exercises robustness of the
//! moment structure to the noise distribution. The analytic moments double
//! as an oracle for the mixture parameterization, and the Monte-Carlo
//! estimator cross-checks both against generated data.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::build_juxtaposed;
use crate::ingest::{FeatureMatrix, Partition};
use crate::moments::MixtureParams;
use crate::par;

/// Noise distribution around the cluster mean. `Uniform` is parameterized
/// by the same standard deviation (half-width `sd * sqrt(3)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Uniform,
}

/// Noise scale: one value for everything, or one per (cluster, feature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSd {
    Scalar(f64),
    PerClusterFeature(Vec<Vec<f64>>),
}

/// Specification of a synthetic mixture dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub c: usize,
    pub n_per_cluster: Vec<usize>,
    pub p: usize,
    /// C×P cluster mean matrix.
    pub theta: Vec<Vec<f64>>,
    pub noise_sd: NoiseSd,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl MixtureSpec {
    /// Spec with cluster means drawn i.i.d. `Normal(0, theta_sd²)` from the
    /// seed, so means are distinct with probability one.
    pub fn with_random_theta(
        c: usize,
        n_per_cluster: Vec<usize>,
        p: usize,
        theta_sd: f64,
        noise_sd: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Dedicated stream for the means keeps them independent of the data
        // noise streams used by `generate_replicate`.
        rng.set_stream(u64::MAX);
        let theta = (0..c)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * theta_sd
                    })
                    .collect()
            })
            .collect();
        Self {
            c,
            n_per_cluster,
            p,
            theta,
            noise_sd: NoiseSd::Scalar(noise_sd),
            noise_kind: NoiseKind::Gaussian,
            seed,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_per_cluster.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.n_per_cluster.len() != self.c {
            return Err(Error::Dimension(format!(
                "n_per_cluster length {} does not match C = {}",
                self.n_per_cluster.len(),
                self.c
            )));
        }
        if self.n_per_cluster.iter().any(|&n| n == 0) {
            return Err(Error::Domain("every cluster needs at least one item".into()));
        }
        if self.n_items() < 2 {
            return Err(Error::Dimension("need at least 2 items in total".into()));
        }
        if self.p == 0 {
            return Err(Error::Dimension("need at least 1 feature".into()));
        }
        if self.theta.len() != self.c || self.theta.iter().any(|r| r.len() != self.p) {
            return Err(Error::Dimension("theta must be C x P".into()));
        }
        match &self.noise_sd {
            NoiseSd::Scalar(s) if *s < 0.0 => {
                return Err(Error::Domain("noise sd must be nonnegative".into()))
            }
            NoiseSd::PerClusterFeature(m) => {
                if m.len() != self.c || m.iter().any(|r| r.len() != self.p) {
                    return Err(Error::Dimension("per-cluster noise sd must be C x P".into()));
                }
                if m.iter().flatten().any(|&s| s < 0.0) {
                    return Err(Error::Domain("noise sd must be nonnegative".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn sd(&self, cluster: usize, feature: usize) -> f64 {
        match &self.noise_sd {
            NoiseSd::Scalar(s) => *s,
            NoiseSd::PerClusterFeature(m) => m[cluster][feature],
        }
    }

    /// True cluster labels in generation order (items of a cluster are
    /// contiguous).
    pub fn partition(&self) -> Partition {
        let mut labels = Vec::with_capacity(self.n_items());
        for (c, &count) in self.n_per_cluster.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, count));
        }
        Partition::from_canonical(labels, self.c).expect("spec clusters are non-empty")
    }
}

/// Draws one dataset from the spec's base stream.
pub fn generate(spec: &MixtureSpec) -> Result<(FeatureMatrix, Partition)> {
    generate_replicate(spec, 0)
}

/// Draws replicate `rep` from an independent, reproducible stream of the
/// seeded generator.
pub fn generate_replicate(spec: &MixtureSpec, rep: u64) -> Result<(FeatureMatrix, Partition)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(rep);
    let n = spec.n_items();
    let partition = spec.partition();
    let labels = partition.labels().to_vec();
    let mut values = DMatrix::<f64>::zeros(n, spec.p);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..spec.p {
            let sd = spec.sd(c, j);
            let noise = match spec.noise_kind {
                NoiseKind::Gaussian => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * sd
                }
                NoiseKind::Uniform => {
                    let h = sd * 3.0f64.sqrt();
                    rng.random_range(-1.0..1.0) * h
                }
            };
            values[(i, j)] = spec.theta[c][j] + noise;
        }
    }
    let x = FeatureMatrix::from_values(values)?;
    Ok((x, partition))
}

/// Per-feature raw moments E(x), E(x²), E(x³), E(x⁴) for one cluster.
fn raw_moments(spec: &MixtureSpec, cluster: usize, feature: usize) -> (f64, f64, f64, f64) {
    let t = spec.theta[cluster][feature];
    let s = spec.sd(cluster, feature);
    let s2 = s * s;
    match spec.noise_kind {
        NoiseKind::Gaussian => (
            t,
            t * t + s2,
            t * t * t + 3.0 * t * s2,
            t.powi(4) + 6.0 * t * t * s2 + 3.0 * s2 * s2,
        ),
        NoiseKind::Uniform => {
            // Centered uniform with variance s²: E u² = s², E u³ = 0,
            // E u⁴ = 9 s⁴ / 5.
            (
                t,
                t * t + s2,
                t * t * t + 3.0 * t * s2,
                t.powi(4) + 6.0 * t * t * s2 + 9.0 * s2 * s2 / 5.0,
            )
        }
    }
}

/// Exact mixture parameters implied by the spec: means, variances, and
/// covariances of the `J` entries, plus weights proportional to cluster
/// sizes.
pub fn analytic_moments(spec: &MixtureSpec) -> Result<MixtureParams> {
    spec.validate()?;
    let c = spec.c;
    let p = spec.p as f64;
    let n_total = spec.n_items() as f64;
    let mut params = MixtureParams::zeros(c);
    for a in 0..c {
        params.w[a] = spec.n_per_cluster[a] as f64 / n_total;
    }
    for a in 0..c {
        let mut mu_self = 0.0;
        let mut var_self = 0.0;
        for j in 0..spec.p {
            let (_, m2, _, m4) = raw_moments(spec, a, j);
            mu_self += m2;
            var_self += m4 - m2 * m2;
        }
        params.mu_diag[a] = mu_self / p;
        params.var_diag[a] = var_self / (p * p);

        for b in 0..c {
            let mut mu = 0.0;
            let mut var = 0.0;
            for j in 0..spec.p {
                let (ta, sa, _, _) = raw_moments(spec, a, j);
                let (tb, sb, _, _) = raw_moments(spec, b, j);
                mu += ta * tb;
                var += sa * sb - ta * ta * tb * tb;
            }
            params.mu_pair[a][b] = mu / p;
            params.var_pair[a][b] = var / (p * p);
            for d in 0..c {
                let mut cov = 0.0;
                for j in 0..spec.p {
                    let (ta, sa, _, _) = raw_moments(spec, a, j);
                    let (tb, _, _, _) = raw_moments(spec, b, j);
                    let (td, _, _, _) = raw_moments(spec, d, j);
                    cov += (sa - ta * ta) * tb * td;
                }
                params.cov_triple[a][b][d] = cov / (p * p);
            }
        }
    }
    Ok(params)
}

/// One moment of the `J` matrix to estimate by Monte Carlo. Item indices
/// are 0-based; the self-similarity column is addressed implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentQuery {
    /// E J_{k,N+1}
    MeanSelfSim { k: usize },
    /// E J_{km}, k != m
    MeanPair { k: usize, m: usize },
    /// E J_{kk}
    MeanSubstDiag { k: usize },
    /// Var J_{k,N+1}
    VarSelfSim { k: usize },
    /// Var J_{km}
    VarPair { k: usize, m: usize },
    /// Cov(J_{km}, J_{kn}), m, n != k, m != n
    CovPair { k: usize, m: usize, n: usize },
    /// Var J_{kk}
    VarSubstDiag { k: usize },
    /// Cov(J_{kk}, J_{km})
    CovSubstDiag { k: usize, m: usize },
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub se: f64,
}

impl MomentEstimate {
    /// |value − reference| in units of the standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.value - reference) / self.se
    }
}

fn query_values(q: &MomentQuery, j: &DMatrix<f64>) -> (f64, f64) {
    let n = j.nrows();
    match *q {
        MomentQuery::MeanSelfSim { k } | MomentQuery::VarSelfSim { k } => (j[(k, n)], 0.0),
        MomentQuery::MeanPair { k, m } | MomentQuery::VarPair { k, m } => (j[(k, m)], 0.0),
        MomentQuery::MeanSubstDiag { k } | MomentQuery::VarSubstDiag { k } => (j[(k, k)], 0.0),
        MomentQuery::CovPair { k, m, n: second } => (j[(k, m)], j[(k, second)]),
        MomentQuery::CovSubstDiag { k, m } => (j[(k, k)], j[(k, m)]),
    }
}

fn mean_and_se(series: &[f64]) -> MomentEstimate {
    let r = series.len() as f64;
    let mean = series.iter().sum::<f64>() / r;
    let var = series.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    MomentEstimate { value: mean, se: (var / r).sqrt() }
}

fn var_and_se(series: &[f64]) -> MomentEstimate {
    let r = series.len() as f64;
    let mean = series.iter().sum::<f64>() / r;
    let var = series.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    let m4 = series.iter().map(|&v| (v - mean).powi(4)).sum::<f64>() / r;
    let se = ((m4 - var * var).max(0.0) / r).sqrt();
    MomentEstimate { value: var, se }
}

fn cov_and_se(u: &[f64], v: &[f64]) -> MomentEstimate {
    let r = u.len() as f64;
    let mu = u.iter().sum::<f64>() / r;
    let mv = v.iter().sum::<f64>() / r;
    let prods: Vec<f64> = u.iter().zip(v).map(|(&a, &b)| (a - mu) * (b - mv)).collect();
    let cov = prods.iter().sum::<f64>() / (r - 1.0);
    let pm = prods.iter().sum::<f64>() / r;
    let pvar = prods.iter().map(|&w| (w - pm) * (w - pm)).sum::<f64>() / r;
    MomentEstimate { value: cov, se: (pvar / r).sqrt() }
}

/// Estimates the queried `J` moments over independent replicate datasets.
/// Replicates draw from separate streams of the spec's seed, so results are
/// reproducible and independent of evaluation order.
pub fn empirical_moments(
    spec: &MixtureSpec,
    replicates: usize,
    queries: &[MomentQuery],
) -> Result<Vec<MomentEstimate>> {
    spec.validate()?;
    if replicates < 100 {
        return Err(Error::Domain(format!("need at least 100 replicates, got {replicates}")));
    }
    let n = spec.n_items();
    for q in queries {
        let ok = match *q {
            MomentQuery::MeanSelfSim { k }
            | MomentQuery::MeanSubstDiag { k }
            | MomentQuery::VarSelfSim { k }
            | MomentQuery::VarSubstDiag { k } => k < n,
            MomentQuery::MeanPair { k, m } | MomentQuery::VarPair { k, m } | MomentQuery::CovSubstDiag { k, m } => {
                k < n && m < n && k != m
            }
            MomentQuery::CovPair { k, m, n: n2 } => k < n && m < n && n2 < n && k != m && k != n2 && m != n2,
        };
        if !ok {
            return Err(Error::Index(format!("query {q:?} invalid for N = {n}")));
        }
    }

    let per_rep: Vec<Result<Vec<(f64, f64)>>> = par::map_indexed(replicates, |rep| {
        let (x, _) = generate_replicate(spec, rep as u64)?;
        let j = build_juxtaposed(&crate::gram::build_gram(&x))?;
        Ok(queries.iter().map(|q| query_values(q, j.values())).collect())
    });

    let mut primary = vec![Vec::with_capacity(replicates); queries.len()];
    let mut secondary = vec![Vec::with_capacity(replicates); queries.len()];
    for rep in per_rep {
        let vals = rep?;
        for (qi, (u, v)) in vals.into_iter().enumerate() {
            primary[qi].push(u);
            secondary[qi].push(v);
        }
    }

    Ok(queries
        .iter()
        .enumerate()
        .map(|(qi, q)| match q {
            MomentQuery::MeanSelfSim { .. } | MomentQuery::MeanPair { .. } | MomentQuery::MeanSubstDiag { .. } => {
                mean_and_se(&primary[qi])
            }
            MomentQuery::VarSelfSim { .. } | MomentQuery::VarPair { .. } | MomentQuery::VarSubstDiag { .. } => {
                var_and_se(&primary[qi])
            }
            MomentQuery::CovPair { .. } | MomentQuery::CovSubstDiag { .. } => {
                cov_and_se(&primary[qi], &secondary[qi])
            }
        })
        .collect())
}
