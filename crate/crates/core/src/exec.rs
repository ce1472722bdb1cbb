//! Worker-pool helpers.

/// Maps `f` over `items` on `workers` threads, preserving input order.
/// Runs inline when `workers <= 1` or the `parallel` feature is disabled.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..100).collect();
        let seq = par_map(1, &items, |x| x * x);
        let par = par_map(4, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(par[9], 81);
    }
}
