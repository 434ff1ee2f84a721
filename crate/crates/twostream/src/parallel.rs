//! Order-preserving fan-out over scoped threads.

use std::thread;

/// `items.iter().map(f)` computed on up to `threads` workers. Each worker
/// takes one contiguous chunk, so results come back in input order and
/// do not depend on the thread count.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Like [`par_map`] for fallible work; returns the first error in input
/// order.
pub fn try_par_map<T, R, E, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    par_map(items, threads, f).into_iter().collect()
}

/// Worker count used when `--threads` is not given.
pub fn default_threads() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}
