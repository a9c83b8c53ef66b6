//! Fixed-size worker pool with a bounded work queue.
//!
//! Items are dispatched in input order to `workers` lanes through a bounded
//! channel; results are written back into their input slot, so the output
//! order never depends on scheduling.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use crossbeam_channel::bounded;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError<E> {
    #[error("cancelled")]
    Cancelled,
    /// The failing item with the lowest input index.
    #[error("item {index}: {error}")]
    Item { index: usize, error: E },
}

/// Never-set cancellation flag for callers without interrupt handling.
pub static NEVER_CANCEL: AtomicBool = AtomicBool::new(false);

/// Runs `f` over `items` on `workers` threads and returns results in input
/// order. On failure the error of the lowest-indexed failing item is
/// reported; once `cancel` is raised no further items are dispatched.
pub fn map_ordered<T, R, E, F>(
    items: Vec<T>,
    workers: usize,
    cancel: &AtomicBool,
    f: F,
) -> Result<Vec<R>, PipelineError<E>>
where
    T: Send,
    R: Send,
    E: Send,
    F: Fn(usize, T) -> Result<R, E> + Sync,
{
    let workers = workers.max(1);
    let n = items.len();
    let (job_tx, job_rx) = bounded::<(usize, T)>(workers * 2);
    let (res_tx, res_rx) = bounded::<(usize, Result<R, E>)>(workers * 2);
    let failed = AtomicBool::new(false);

    let mut slots: Vec<Option<Result<R, E>>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);

    let slots = thread::scope(|scope| {
        for _ in 0..workers {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let f = &f;
            let failed = &failed;
            scope.spawn(move || {
                for (index, item) in job_rx {
                    if cancel.load(Ordering::Relaxed) {
                        break;
                    }
                    let result = f(index, item);
                    if result.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    if res_tx.send((index, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(job_rx);
        drop(res_tx);

        let collector = scope.spawn(move || {
            for (index, result) in res_rx {
                slots[index] = Some(result);
            }
            slots
        });

        for job in items.into_iter().enumerate() {
            if cancel.load(Ordering::Relaxed) || failed.load(Ordering::Relaxed) {
                break;
            }
            if job_tx.send(job).is_err() {
                break;
            }
        }
        drop(job_tx);
        collector.join().expect("collector thread panicked")
    });

    if cancel.load(Ordering::Relaxed) {
        return Err(PipelineError::Cancelled);
    }
    let mut out = Vec::with_capacity(n);
    for (index, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(r)) => out.push(r),
            Some(Err(error)) => return Err(PipelineError::Item { index, error }),
            // Dispatch is in input order, so an undispatched slot always
            // follows a failed one.
            None => unreachable!("slot {index} skipped without an earlier failure"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        for workers in [1, 3, 16] {
            let out = map_ordered((0..200u64).collect(), workers, &NEVER_CANCEL, |_, x| {
                if x % 7 == 0 {
                    thread::sleep(std::time::Duration::from_micros(50));
                }
                Ok::<_, ()>(x * x)
            })
            .unwrap();
            assert_eq!(out, (0..200u64).map(|x| x * x).collect::<Vec<_>>());
        }
    }

    #[test]
    fn reports_lowest_failing_index() {
        let err = map_ordered((0..50).collect(), 4, &NEVER_CANCEL, |i, x: i32| {
            if i == 10 || i == 30 {
                Err(format!("bad {x}"))
            } else {
                Ok(x)
            }
        })
        .unwrap_err();
        assert_eq!(
            err,
            PipelineError::Item {
                index: 10,
                error: "bad 10".into()
            }
        );
    }

    #[test]
    fn cancellation_stops_work() {
        let cancel = AtomicBool::new(false);
        let err = map_ordered((0..1000).collect(), 2, &cancel, |i, x: i32| {
            if i == 5 {
                cancel.store(true, Ordering::Relaxed);
            }
            Ok::<_, ()>(x)
        })
        .unwrap_err();
        assert_eq!(err, PipelineError::Cancelled);
    }

    #[test]
    fn empty_input() {
        let out: Vec<i32> = map_ordered(Vec::<i32>::new(), 4, &NEVER_CANCEL, |_, x| Ok::<_, ()>(x)).unwrap();
        assert!(out.is_empty());
    }
}
