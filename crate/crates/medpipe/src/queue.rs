//! Bounded multi-worker patch queue.
//!
//! Workers claim job positions in order and may finish out of order; a
//! reorder buffer hands results to the consumer strictly by position, so the
//! consumed sequence is the same for any worker count. A worker holding
//! position `p` waits while `p >= consumed + max_len`, which bounds the
//! buffer to `max_len` items and never blocks the worker owning the next
//! position the consumer is waiting for.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::thread;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub produced: usize,
    pub max_buffered: usize,
}

struct State<T, E> {
    next_job: usize,
    consumed: usize,
    ready: BTreeMap<usize, T>,
    max_buffered: usize,
    failed: Option<E>,
    stop: bool,
}

/// Run `produce` over `jobs` on `workers` threads and feed the results to
/// `consume` in job order. The first error from either side stops the run.
pub fn run_epoch<J, T, E>(
    jobs: &[J],
    workers: usize,
    max_len: usize,
    produce: impl Fn(&J) -> Result<T, E> + Sync,
    mut consume: impl FnMut(T) -> Result<(), E>,
) -> Result<QueueStats, E>
where
    J: Sync,
    T: Send,
    E: Send,
{
    let max_len = max_len.max(1);
    let state = Mutex::new(State {
        next_job: 0,
        consumed: 0,
        ready: BTreeMap::new(),
        max_buffered: 0,
        failed: None,
        stop: false,
    });
    let changed = Condvar::new();

    let outcome = thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let pos = {
                    let mut s = state.lock().unwrap();
                    if s.stop || s.next_job >= jobs.len() {
                        return;
                    }
                    s.next_job += 1;
                    s.next_job - 1
                };
                let result = produce(&jobs[pos]);
                let mut s = state.lock().unwrap();
                while !s.stop && pos >= s.consumed + max_len {
                    s = changed.wait(s).unwrap();
                }
                if s.stop {
                    return;
                }
                match result {
                    Ok(item) => {
                        s.ready.insert(pos, item);
                        s.max_buffered = s.max_buffered.max(s.ready.len());
                    }
                    Err(e) => {
                        s.failed.get_or_insert(e);
                        s.stop = true;
                    }
                }
                changed.notify_all();
            });
        }

        for pos in 0..jobs.len() {
            let item = {
                let mut s = state.lock().unwrap();
                loop {
                    if let Some(item) = s.ready.remove(&pos) {
                        s.consumed = pos + 1;
                        changed.notify_all();
                        break item;
                    }
                    if let Some(e) = s.failed.take() {
                        return Err(e);
                    }
                    s = changed.wait(s).unwrap();
                }
            };
            if let Err(e) = consume(item) {
                let mut s = state.lock().unwrap();
                s.stop = true;
                changed.notify_all();
                return Err(e);
            }
        }
        Ok(())
    });
    let s = state.into_inner().unwrap();
    outcome.map(|()| QueueStats { produced: s.consumed, max_buffered: s.max_buffered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn order_and_bound_hold_for_any_worker_count() {
        let jobs: Vec<u64> = (0..40).collect();
        for workers in [1, 2, 4] {
            for max_len in [1, 3, 16] {
                let mut seen = Vec::new();
                let stats = run_epoch(
                    &jobs,
                    workers,
                    max_len,
                    |&j| {
                        // Uneven work so completions arrive out of order.
                        thread::sleep(Duration::from_micros((j * 37 % 11) * 50));
                        Ok::<_, ()>(j * 2)
                    },
                    |v| {
                        seen.push(v);
                        Ok(())
                    },
                )
                .unwrap();
                assert_eq!(seen, jobs.iter().map(|j| j * 2).collect::<Vec<_>>());
                assert_eq!(stats.produced, 40);
                assert!(stats.max_buffered <= max_len, "{stats:?} with bound {max_len}");
            }
        }
    }

    #[test]
    fn producer_error_stops_the_run() {
        let jobs: Vec<u32> = (0..10).collect();
        let mut count = 0;
        let r = run_epoch(&jobs, 2, 4, |&j| if j == 5 { Err("bad") } else { Ok(j) }, |_| {
            count += 1;
            Ok(())
        });
        assert_eq!(r, Err("bad"));
        assert!(count <= 5);
    }

    #[test]
    fn consumer_error_stops_the_run() {
        let jobs: Vec<u32> = (0..100).collect();
        let r = run_epoch(&jobs, 3, 2, |&j| Ok(j), |v| if v == 7 { Err(v) } else { Ok(()) });
        assert_eq!(r, Err(7));
    }
}
