//! Deterministic data parallelism over independent items.
//!
//! Work is split into contiguous chunks across scoped threads; results land
//! in per-index slots, so any later reduction runs in item order and the
//! outcome is bit-identical for every worker count.

/// Number of workers to use when the caller does not specify one.
pub fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Apply `f` to every index in 0..n, using up to `threads` workers
/// (0 selects [`default_threads`]).
///
/// Returns outputs in index order. `f(i)` must depend only on `i`.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = if threads == 0 { default_threads() } else { threads };
    let threads = threads.min(n.max(1));
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }

    let mut slots: Vec<Option<T>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);
    let chunk = n.div_ceil(threads);

    std::thread::scope(|scope| {
        let f = &f;
        let mut rest = slots.as_mut_slice();
        let mut start = 0;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let base = start;
            start += take;
            scope.spawn(move || {
                for (off, slot) in head.iter_mut().enumerate() {
                    *slot = Some(f(base + off));
                }
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.expect("worker filled every slot"))
        .collect()
}
