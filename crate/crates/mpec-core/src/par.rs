//! Conditionally parallel mapping with order-preserving collection.
//!
//! Work items are mapped independently and collected in input order, so the
//! caller's subsequent (sequential) reduction sees the same operand order no
//! matter how many threads ran the map. With the `parallel` feature disabled
//! the map is always sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when `parallel` is true and the feature
/// is compiled in. Output order always matches input order.
pub fn maybe_par_map<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Indexed variant: `f` receives `(index, item)`.
pub fn maybe_par_map_indexed<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items
                .par_iter()
                .enumerate()
                .map(|(i, t)| f(i, t))
                .collect();
        }
    }
    let _ = parallel;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Map over a range of indices.
pub fn maybe_par_map_range<U, F>(n: usize, parallel: bool, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..n).into_par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..257).collect();
        let seq = maybe_par_map(&items, false, |x| x * x + 1);
        let par = maybe_par_map(&items, true, |x| x * x + 1);
        assert_eq!(seq, par);
    }

    #[test]
    fn range_map_preserves_order() {
        let out = maybe_par_map_range(100, true, |i| i as i64 - 50);
        assert_eq!(out[0], -50);
        assert_eq!(out[99], 49);
    }
}
