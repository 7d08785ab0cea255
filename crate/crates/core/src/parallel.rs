//! Bounded worker-pool map preserving input order.
//!
//! Results land at their input index, so output order (and any downstream
//! reduction) is independent of thread scheduling; determinism rests on each
//! item deriving its own rng stream.

/// Apply `f` to `0..n` using up to `workers` threads; results in index order.
pub fn parallel_map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<T>>> =
        out.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                **slots[i].lock().expect("slot poisoned") = Some(value);
            });
        }
    });
    drop(slots);
    out.into_iter().map(|v| v.expect("worker filled slot")).collect()
}

/// Default worker count: available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let out = parallel_map_indexed(100, 8, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn single_worker_matches() {
        let seq = parallel_map_indexed(10, 1, |i| i + 1);
        let par = parallel_map_indexed(10, 4, |i| i + 1);
        assert_eq!(seq, par);
    }

    #[test]
    fn empty_input() {
        let out: Vec<usize> = parallel_map_indexed(0, 4, |i| i);
        assert!(out.is_empty());
    }
}
