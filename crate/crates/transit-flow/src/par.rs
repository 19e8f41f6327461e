//! Order-preserving map that is parallel under the `parallel` feature and
//! sequential otherwise.
//!
//! Both paths return results in input order, and every parallelized call site
//! keeps any floating-point *reduction* sequential (reduce over the collected
//! `Vec`, never with `rayon::reduce`), so the two builds are bitwise
//! identical. That property is load-bearing: seeded runs must reproduce
//! exactly regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map `f` over the index range `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over the index range `0..n`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let doubled = map_indexed(&items, |x| x * 2);
        assert_eq!(doubled, (0..1000).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn map_range_preserves_order() {
        let squares = map_range(100, |i| i * i);
        assert_eq!(squares, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
