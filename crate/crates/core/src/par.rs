//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run the same closures in a plain loop. Work is only ever split across
//! independent output elements, so every reduction keeps its sequential
//! order and results are bit-identical in both builds and for any thread
//! count.

/// Minimum number of scalar multiply-adds before a loop is worth splitting.
pub const PAR_THRESHOLD: usize = 1 << 14;

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if work >= PAR_THRESHOLD && data.len() > chunk_len {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = work;
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Evaluates `f` on `0..n` and collects the results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `f` with at most `threads` workers; `0` means strictly single-threaded.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        let n = threads.max(1);
        match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Number of workers the current context would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_visit_in_order() {
        let mut v = vec![0usize; 1 << 16];
        for_each_chunk_mut(&mut v, 16, usize::MAX, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert!(v.chunks(16).enumerate().all(|(i, c)| c.iter().all(|&x| x == i)));
    }

    #[test]
    fn single_thread_scope() {
        let n = with_threads(0, current_threads);
        assert_eq!(n, 1);
        let out = with_threads(0, || map_indices(5, |i| i * i));
        assert_eq!(out, vec![0, 1, 4, 9, 16]);
    }
}
