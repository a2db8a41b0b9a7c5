//! Deterministic parallel trial loop.
//!
//! Trials are split into fixed chunks. Each chunk is folded sequentially
//! and the chunk results are merged left to right, so the floating-point
//! result does not depend on the thread count.

use std::ops::Range;

use rayon::prelude::*;

pub const CHUNK: u64 = 16;
const CHUNKS_PER_BATCH: u64 = 64;

/// Folds `trials` trials into one accumulator.
///
/// `init` makes an empty accumulator, `step` adds trial `i`, `merge`
/// combines two adjacent partial results.
pub fn fold_trials<A, E, I, S, M>(trials: u64, init: I, step: S, merge: M) -> Result<A, E>
where
    A: Send,
    E: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, u64) -> Result<(), E> + Sync,
    M: Fn(&mut A, A) + Sync,
{
    let mut total = init();
    fold_into(&mut total, 0..trials, &init, &step, &merge)?;
    Ok(total)
}

/// Folds trials `range` into `total` with the same chunking as
/// [`fold_trials`], so consecutive calls over adjacent ranges give the
/// same bits as one call over their union. `range.start` must be a
/// multiple of [`CHUNK`].
pub fn fold_into<A, E, I, S, M>(total: &mut A, range: Range<u64>, init: &I, step: &S, merge: &M) -> Result<(), E>
where
    A: Send,
    E: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, u64) -> Result<(), E> + Sync,
    M: Fn(&mut A, A) + Sync,
{
    assert_eq!(range.start % CHUNK, 0, "ranges must start on a chunk boundary");
    let first = range.start / CHUNK;
    let chunks = range.end.div_ceil(CHUNK);
    let mut start = first;
    while start < chunks {
        let end = (start + CHUNKS_PER_BATCH).min(chunks);
        let parts: Vec<Result<A, E>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                for i in c * CHUNK..((c + 1) * CHUNK).min(range.end) {
                    step(&mut acc, i)?;
                }
                Ok(acc)
            })
            .collect();
        for part in parts {
            merge(total, part?);
        }
        start = end;
    }
    Ok(())
}
