//! Initial configurations per candidate cluster count: Ward agglomeration
//! on the rows of `J`, refined by a diagonal-covariance Gaussian mixture EM.
//! Both stages are deterministic.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gram::JuxtaposedMatrix;
use crate::ingest::Partition;

/// Outcome of the initialization stage for one candidate C.
#[derive(Debug, Clone)]
pub struct InitResult {
    pub partition: Partition,
    pub loglik: f64,
    /// Set when any cluster's final hard-assignment count is <= 1; model
    /// selection treats this as the signal to stop growing C.
    pub singleton_detected: bool,
    /// Log-likelihood after each EM iteration.
    pub loglik_trace: Vec<f64>,
    /// Final posterior membership probabilities, one row per item.
    pub resp: DMatrix<f64>,
}

/// Agglomerates the rows of `J` under Ward's minimum-variance criterion
/// (Lance–Williams update on squared Euclidean distances) and cuts the
/// dendrogram at `c` clusters. Ties pick the lexicographically smallest
/// active pair, so the result is deterministic.
pub fn ward_agglomerate(j: &JuxtaposedMatrix, c: usize) -> Result<Partition> {
    let n = j.n_items();
    if c == 0 || c > n {
        return Err(Error::Domain(format!("cannot cut {n} items into {c} clusters")));
    }
    let jv = j.values();
    let dim = j.row_dim();

    // Squared Euclidean distances between rows.
    let mut dist = vec![vec![0.0f64; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let mut d = 0.0;
            for t in 0..dim {
                let diff = jv[(a, t)] - jv[(b, t)];
                d += diff * diff;
            }
            dist[a][b] = d;
            dist[b][a] = d;
        }
    }

    let mut active: Vec<bool> = vec![true; n];
    let mut size: Vec<usize> = vec![1; n];
    let mut parent: Vec<usize> = (0..n).collect();

    for _ in 0..(n - c) {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for a in 0..n {
            if !active[a] {
                continue;
            }
            for b in (a + 1)..n {
                if active[b] && dist[a][b] < best_d {
                    best_d = dist[a][b];
                    best = (a, b);
                }
            }
        }
        let (a, b) = best;
        let merged = dist[a][b];
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for x in 0..n {
            if !active[x] || x == a || x == b {
                continue;
            }
            let sx = size[x] as f64;
            let d = ((sx + sa) * dist[x][a] + (sx + sb) * dist[x][b] - sx * merged) / (sx + sa + sb);
            dist[x][a] = d;
            dist[a][x] = d;
        }
        size[a] += size[b];
        active[b] = false;
        parent[b] = a;
    }

    let mut root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let roots: Vec<usize> = (0..n).map(&mut root).collect();
    Partition::from_labels(&roots)
}

const VAR_FLOOR_REL: f64 = 1e-12;

struct DiagModel {
    w: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

fn diag_m_step(data: &DMatrix<f64>, resp: &DMatrix<f64>, floor: &[f64]) -> DiagModel {
    let (n, d) = data.shape();
    let c = resp.ncols();
    let mut w = vec![0.0f64; c];
    let mut mean = vec![vec![0.0f64; d]; c];
    let mut var = vec![vec![0.0f64; d]; c];
    for a in 0..c {
        let mut wsum = 0.0;
        for k in 0..n {
            wsum += resp[(k, a)];
        }
        let denom = wsum.max(1e-300);
        for t in 0..d {
            let mut m = 0.0;
            for k in 0..n {
                m += resp[(k, a)] * data[(k, t)];
            }
            mean[a][t] = m / denom;
        }
        for t in 0..d {
            let mut v = 0.0;
            for k in 0..n {
                let diff = data[(k, t)] - mean[a][t];
                v += resp[(k, a)] * diff * diff;
            }
            var[a][t] = (v / denom).max(floor[t]);
        }
        w[a] = wsum / n as f64;
    }
    DiagModel { w, mean, var }
}

fn diag_e_step(data: &DMatrix<f64>, model: &DiagModel) -> (DMatrix<f64>, f64) {
    let (n, d) = data.shape();
    let c = model.w.len();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut resp = DMatrix::<f64>::zeros(n, c);
    let mut loglik = 0.0;
    let mut logs = vec![0.0f64; c];
    for k in 0..n {
        for (a, slot) in logs.iter_mut().enumerate() {
            let mut ld = model.w[a].max(1e-300).ln();
            for t in 0..d {
                let diff = data[(k, t)] - model.mean[a][t];
                ld += -0.5 * (ln2pi + model.var[a][t].ln() + diff * diff / model.var[a][t]);
            }
            *slot = ld;
        }
        let max = logs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = logs.iter().map(|&l| (l - max).exp()).sum();
        for a in 0..c {
            resp[(k, a)] = (logs[a] - max).exp() / sum;
        }
        loglik += max + sum.ln();
    }
    (resp, loglik)
}

fn map_counts(resp: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let (n, c) = resp.shape();
    let mut labels = vec![0usize; n];
    let mut counts = vec![0usize; c];
    for k in 0..n {
        let mut best = 0usize;
        for a in 1..c {
            if resp[(k, a)] > resp[(k, best)] {
                best = a;
            }
        }
        labels[k] = best;
        counts[best] += 1;
    }
    (labels, counts)
}

/// Fits a C-component Gaussian mixture with per-cluster per-coordinate
/// variances to the rows of `J`, starting from a hard partition. Variances
/// are floored at `1e-12` times each coordinate's overall variance rather
/// than erroring on collapse.
pub fn diagonal_em(j: &JuxtaposedMatrix, init: &Partition, max_iter: usize, tol: f64) -> Result<InitResult> {
    let n = j.n_items();
    if init.n_items() != n {
        return Err(Error::Dimension(format!(
            "initial partition covers {} items, J has {n}",
            init.n_items()
        )));
    }
    let c = init.n_clusters();
    let data = j.values();
    let d = j.row_dim();

    // Per-coordinate variance floors from the pooled spread.
    let mut floor = vec![0.0f64; d];
    for (t, slot) in floor.iter_mut().enumerate() {
        let mean: f64 = (0..n).map(|k| data[(k, t)]).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|k| (data[(k, t)] - mean).powi(2)).sum::<f64>() / n as f64;
        *slot = (var * VAR_FLOOR_REL).max(1e-300);
    }

    // Hard responsibilities from the initial partition.
    let mut resp = DMatrix::<f64>::zeros(n, c);
    for (k, &l) in init.labels().iter().enumerate() {
        resp[(k, l)] = 1.0;
    }

    let mut model = diag_m_step(data, &resp, &floor);
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut loglik = prev;
    for _ in 0..max_iter {
        let (r, ll) = diag_e_step(data, &model);
        resp = r;
        loglik = ll;
        trace.push(ll);
        if prev.is_finite() && (ll - prev).abs() <= tol * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
        model = diag_m_step(data, &resp, &floor);
    }

    let (labels, counts) = map_counts(&resp);
    let singleton_detected = counts.iter().any(|&cnt| cnt <= 1);
    let partition = Partition::from_labels(&labels)?;
    Ok(InitResult { partition, loglik, singleton_detected, loglik_trace: trace, resp })
}
