//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature enabled these fan out over rayon; without it
//! they run sequentially. Both paths yield results in index order and all
//! callers reduce sequentially over the collected vector, so outputs are
//! bit-identical across feature sets and thread counts.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_indexed`], available under every feature set.
/// Benchmarks use it to compare against the parallel path in one binary.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| (i as f64).sqrt().sin() * 1e3 + i as f64;
        let a = map_indexed(257, f);
        let b = map_indexed_seq(257, f);
        assert_eq!(a, b);
    }
}
