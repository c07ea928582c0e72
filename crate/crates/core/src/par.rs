//! Data-parallel helpers. With the `parallel` feature these run on a rayon
//! pool sized by the caller; without it they degrade to plain loops. Both
//! paths return results in input order, so callers see identical output.

#[cfg(feature = "parallel")]
fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool builds")
}

/// Number of worker threads to use when the caller passes 0.
pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn effective(threads: usize) -> usize {
    if threads == 0 {
        default_parallelism()
    } else {
        threads
    }
}

/// `items.iter().map(f)` on `threads` workers (0 = all cores), order kept.
pub fn map_ordered<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let threads = effective(threads);
    #[cfg(feature = "parallel")]
    if threads > 1 && items.len() > 1 {
        use rayon::prelude::*;
        return pool(threads).install(|| items.par_iter().map(&f).collect());
    }
    let _ = threads;
    items.iter().map(f).collect()
}

/// Folds `items` into per-worker accumulators and merges them. `merge` must
/// be associative and commutative with `init()` as identity.
pub fn fold_merge<T, A, I, F, M>(items: &[T], threads: usize, init: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    let threads = effective(threads);
    #[cfg(feature = "parallel")]
    if threads > 1 && items.len() > 1 {
        use rayon::prelude::*;
        return pool(threads).install(|| items.par_iter().fold(&init, &fold).reduce(&init, &merge));
    }
    let _ = (threads, &merge);
    items.iter().fold(init(), fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map_ordered(&xs, 1, |x| x * x);
        let par = map_ordered(&xs, 4, |x| x * x);
        assert_eq!(seq, par);
    }

    #[test]
    fn fold_merge_matches_sum() {
        let xs: Vec<u64> = (1..=500).collect();
        let total = fold_merge(&xs, 3, || 0u64, |a, x| a + x, |a, b| a + b);
        assert_eq!(total, 500 * 501 / 2);
    }
}
