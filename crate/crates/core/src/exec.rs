//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel map in the crate goes through [`map_indexed`]. Results are
//! always collected in index order, so output does not depend on the mode or
//! on the number of worker threads.

use std::sync::atomic::{AtomicU8, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Execution strategy for the indexed maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

/// Selects the process-wide execution mode. Without the `parallel` feature
/// `Mode::Parallel` behaves like `Mode::Sequential`.
pub fn set_mode(mode: Mode) {
    MODE.store(mode as u8, Ordering::Relaxed);
}

pub fn mode() -> Mode {
    match MODE.load(Ordering::Relaxed) {
        0 => Mode::Sequential,
        _ => Mode::Parallel,
    }
}

/// Sizes the global worker pool. Must run before the first parallel map;
/// a no-op without the `parallel` feature.
pub fn set_threads(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Err(crate::Error::Domain("thread count must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| crate::Error::Domain(e.to_string()))?;
    Ok(())
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == Mode::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Independent RNG stream keyed by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and a label, used to give nested
/// tasks (round, task) their own streams.
pub fn child_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn modes_agree() {
        set_mode(Mode::Sequential);
        let a = map_indexed(100, |i| stream_rng(7, i as u64).random::<u64>());
        set_mode(Mode::Parallel);
        let b = map_indexed(100, |i| stream_rng(7, i as u64).random::<u64>());
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let a: u64 = stream_rng(1, 0).random();
        let b: u64 = stream_rng(1, 1).random();
        assert_ne!(a, b);
    }
}
