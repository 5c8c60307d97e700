//! Per-node work distribution.
//!
//! Every parallel loop in the crate is a map over independent chunks of an
//! output buffer. Reductions never cross worker boundaries, so results are
//! bit-identical for any worker count and for the sequential fallback.

/// How per-level node loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    #[default]
    Parallel,
}

/// Below this many chunks a parallel request runs sequentially anyway.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_CHUNKS: usize = 512;

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Calls `f(index, chunk)` for each `width`-sized chunk of `out`.
    pub fn for_each_chunk<F>(self, out: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        {
            if self.is_parallel() && out.len() / width >= MIN_PARALLEL_CHUNKS {
                use rayon::prelude::*;
                out.par_chunks_mut(width).enumerate().for_each(|(i, chunk)| f(i, chunk));
                return;
            }
        }
        out.chunks_mut(width).enumerate().for_each(|(i, chunk)| f(i, chunk));
    }

    /// Fallible variant of [`Execution::for_each_chunk`]. The error reported
    /// is the one with the smallest chunk index, whatever the schedule.
    pub fn try_for_each_chunk<F, E>(self, out: &mut [f64], width: usize, f: F) -> Result<(), E>
    where
        F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
        E: Send,
    {
        if width == 0 {
            return Ok(());
        }
        #[cfg(feature = "parallel")]
        {
            if self.is_parallel() && out.len() / width >= MIN_PARALLEL_CHUNKS {
                use rayon::prelude::*;
                let errors: Vec<(usize, E)> = out
                    .par_chunks_mut(width)
                    .enumerate()
                    .filter_map(|(i, chunk)| f(i, chunk).err().map(|e| (i, e)))
                    .collect();
                return match errors.into_iter().min_by_key(|(i, _)| *i) {
                    Some((_, e)) => Err(e),
                    None => Ok(()),
                };
            }
        }
        for (i, chunk) in out.chunks_mut(width).enumerate() {
            f(i, chunk)?;
        }
        Ok(())
    }

    /// Maps `0..n` to a vector, preserving index order.
    pub fn map_indices<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            if self.is_parallel() && n > 1 {
                use rayon::prelude::*;
                return (0..n).into_par_iter().map(f).collect();
            }
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_match_sequential() {
        let n = 4096;
        let mut a = vec![0.0; n * 3];
        let mut b = vec![0.0; n * 3];
        let f = |i: usize, c: &mut [f64]| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = ((i * 3 + j) as f64).sqrt().sin();
            }
        };
        Execution::Sequential.for_each_chunk(&mut a, 3, f);
        Execution::Parallel.for_each_chunk(&mut b, 3, f);
        assert_eq!(a, b);
    }

    #[test]
    fn first_error_wins() {
        let mut out = vec![0.0; 2048];
        let r: Result<(), usize> =
            Execution::Parallel.try_for_each_chunk(&mut out, 1, |i, _| if i % 700 == 699 { Err(i) } else { Ok(()) });
        assert_eq!(r, Err(699));
    }
}
