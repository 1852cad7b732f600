//! Data-parallel helpers.
//!
//! With the `parallel` feature the `par_*` functions dispatch to rayon;
//! without it they fall back to the sequential versions. Results are always
//! returned in input order, so reductions done by the caller over the
//! returned vector are deterministic regardless of thread count.

/// Sequential map, kept callable in every build so benches can compare it
/// against [`par_map`].
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    seq_map(items, f)
}

/// Number of worker threads `par_map` may use.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// How batch-level work is scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Execution::Parallel => par_map(items, f),
            Execution::Sequential => seq_map(items, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = par_map(&xs, |x| x * x + 1);
        let b = seq_map(&xs, |x| x * x + 1);
        assert_eq!(a, b);
        assert!(num_threads() >= 1);
    }
}
