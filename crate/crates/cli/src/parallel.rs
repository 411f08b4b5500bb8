//! Per-sequence parallelism with results kept in input order.

use rayon::prelude::*;

use crate::error::{CliError, Result};

pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_and_errors_propagate() {
        let v: Vec<usize> = (0..50).collect();
        for w in [1, 4] {
            assert_eq!(par_map(w, &v, |&x| Ok(x * 2)).unwrap(), v.iter().map(|x| x * 2).collect::<Vec<_>>());
            assert!(par_map(w, &v, |&x| if x == 7 { Err(CliError::Check("x".into())) } else { Ok(x) }).is_err());
        }
    }
}
