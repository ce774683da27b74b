//! Bounded producer/consumer execution.
//!
//! Several producer threads prepare work items (patch extraction and
//! augmentation, ROI scoring) while a single consumer, running on the calling
//! thread, folds them in. Producers may only claim item `i` while
//! `i < consumed + queue`, which bounds the number of produced but unconsumed
//! items by the queue capacity and, in deterministic mode, lets the consumer
//! reorder arrivals into sequence order without ever deadlocking.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub producers: usize,
    pub queue: usize,
    /// Consume in sequence order. Required for bit-reproducible stateful consumers.
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            producers: 1,
            queue: 4,
            deterministic: true,
        }
    }
}

impl PipelineConfig {
    pub fn new(producers: usize, queue: usize, deterministic: bool) -> Result<Self> {
        if producers == 0 || queue == 0 {
            return Err(Error::Config(format!(
                "producers ({producers}) and queue ({queue}) must be positive"
            )));
        }
        Ok(PipelineConfig {
            producers,
            queue,
            deterministic,
        })
    }

    pub fn sequential() -> Self {
        PipelineConfig {
            producers: 1,
            queue: 1,
            deterministic: true,
        }
    }
}

/// Independent RNG seed for work item `index` of a run seeded with `run_seed`.
pub fn item_seed(run_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a golden-ratio stride
    let mut z = run_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub items: usize,
    pub producers: usize,
    pub queue: usize,
    pub wall: Duration,
    /// Time the consumer spent waiting for the next item.
    pub consumer_wait: Duration,
    pub consumer_busy: Duration,
    /// Summed over producers.
    pub producer_busy: Duration,
    /// Highest observed count of produced but unconsumed items.
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub items: usize,
    pub producers: usize,
    pub queue: usize,
    pub wall_seconds: f64,
    pub items_per_sec: f64,
    pub consumer_idle_fraction: f64,
    pub producer_utilization: f64,
    pub max_in_flight: usize,
}

impl RunStats {
    pub fn throughput_report(&self) -> ThroughputReport {
        let wall = self.wall.as_secs_f64();
        let ratio = |num: f64, den: f64| if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
        let consumer_total = (self.consumer_wait + self.consumer_busy).as_secs_f64();
        ThroughputReport {
            items: self.items,
            producers: self.producers,
            queue: self.queue,
            wall_seconds: wall,
            items_per_sec: if wall > 0.0 { self.items as f64 / wall } else { 0.0 },
            consumer_idle_fraction: ratio(self.consumer_wait.as_secs_f64(), consumer_total),
            producer_utilization: ratio(
                self.producer_busy.as_secs_f64(),
                wall * self.producers as f64,
            ),
            max_in_flight: self.max_in_flight,
        }
    }
}

struct Gate {
    next_claim: usize,
    consumed: usize,
    /// Items above this index are not started.
    cancel_at: usize,
}

/// Runs `consume(produce(item))` over `items` with `config.producers`
/// producer threads and returns the consumer's results in consumption order.
///
/// With `deterministic` set the consumer sees items in sequence order, so the
/// result equals the sequential loop bit for bit. A failing item cancels the
/// remaining work; the reported error is the lowest failing sequence index.
pub fn run_pipeline<I, P, R, FP, FC>(
    items: &[I],
    produce: FP,
    mut consume: FC,
    config: &PipelineConfig,
) -> Result<(Vec<R>, RunStats)>
where
    I: Sync,
    P: Send,
    FP: Fn(usize, &I) -> Result<P> + Sync,
    FC: FnMut(usize, P) -> Result<R>,
{
    if config.producers == 0 || config.queue == 0 {
        return Err(Error::Config("producers and queue must be positive".into()));
    }
    let n = items.len();
    let start = Instant::now();
    let gate = Mutex::new(Gate {
        next_claim: 0,
        consumed: 0,
        cancel_at: usize::MAX,
    });
    let cv = Condvar::new();
    let produced = AtomicUsize::new(0);
    let consumed_count = AtomicUsize::new(0);
    let max_in_flight = AtomicUsize::new(0);
    let (tx, rx) = crossbeam::channel::bounded::<(usize, Result<P>)>(config.queue);

    let mut results = Vec::with_capacity(n);
    let mut errors: Vec<(usize, Error)> = Vec::new();
    let mut consumer_wait = Duration::ZERO;
    let mut consumer_busy = Duration::ZERO;

    let producer_busy = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.producers)
            .map(|_| {
                let tx = tx.clone();
                let (gate, cv, produce) = (&gate, &cv, &produce);
                let (produced, consumed_count, max_in_flight) =
                    (&produced, &consumed_count, &max_in_flight);
                s.spawn(move || {
                    let mut busy = Duration::ZERO;
                    loop {
                        let idx = {
                            let mut g = gate.lock().unwrap();
                            loop {
                                if g.next_claim >= n || g.next_claim > g.cancel_at {
                                    return busy;
                                }
                                if g.next_claim < g.consumed + config.queue {
                                    break;
                                }
                                g = cv.wait(g).unwrap();
                            }
                            g.next_claim += 1;
                            g.next_claim - 1
                        };
                        let t0 = Instant::now();
                        let r = produce(idx, &items[idx]);
                        busy += t0.elapsed();
                        if r.is_err() {
                            let mut g = gate.lock().unwrap();
                            g.cancel_at = g.cancel_at.min(idx);
                            cv.notify_all();
                        }
                        let p = produced.fetch_add(1, Ordering::SeqCst) + 1;
                        let c = consumed_count.load(Ordering::SeqCst);
                        max_in_flight.fetch_max(p.saturating_sub(c), Ordering::SeqCst);
                        if tx.send((idx, r)).is_err() {
                            return busy;
                        }
                    }
                })
            })
            .collect();
        drop(tx);

        let mut pending: BTreeMap<usize, Result<P>> = BTreeMap::new();
        let mut next = 0usize;
        let mut stopped = false;
        loop {
            let t0 = Instant::now();
            let msg = rx.recv();
            consumer_wait += t0.elapsed();
            let Ok((idx, r)) = msg else { break };
            if stopped {
                if let Err(e) = r {
                    errors.push((idx, e));
                }
                continue;
            }
            let mut ready = Vec::new();
            if config.deterministic {
                pending.insert(idx, r);
                while let Some(r) = pending.remove(&next) {
                    ready.push((next, r));
                    next += 1;
                }
            } else {
                ready.push((idx, r));
            }
            for (idx, r) in ready {
                if stopped {
                    if let Err(e) = r {
                        errors.push((idx, e));
                    }
                    continue;
                }
                let t1 = Instant::now();
                let outcome = r.and_then(|p| consume(idx, p));
                consumer_busy += t1.elapsed();
                match outcome {
                    Ok(v) => results.push(v),
                    Err(e) => {
                        errors.push((idx, e));
                        stopped = true;
                        let mut g = gate.lock().unwrap();
                        g.cancel_at = g.cancel_at.min(idx);
                    }
                }
                consumed_count.fetch_add(1, Ordering::SeqCst);
                let mut g = gate.lock().unwrap();
                g.consumed += 1;
                cv.notify_all();
            }
        }
        for (idx, r) in std::mem::take(&mut pending) {
            if let Err(e) = r {
                errors.push((idx, e));
            }
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("producer panicked"))
            .sum::<Duration>()
    });

    if let Some(pos) = (0..errors.len()).min_by_key(|&i| errors[i].0) {
        let (index, source) = errors.swap_remove(pos);
        return Err(Error::Pipeline {
            index,
            source: Box::new(source),
        });
    }
    let stats = RunStats {
        items: results.len(),
        producers: config.producers,
        queue: config.queue,
        wall: start.elapsed(),
        consumer_wait,
        consumer_busy,
        producer_busy,
        max_in_flight: max_in_flight.load(Ordering::SeqCst),
    };
    Ok((results, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cfg(p: usize, q: usize, det: bool) -> PipelineConfig {
        PipelineConfig::new(p, q, det).unwrap()
    }

    #[test]
    fn sequential_semantics() {
        let items: Vec<u64> = (0..50).collect();
        let mut acc = 0u64;
        let (out, stats) = run_pipeline(
            &items,
            |_, &v| Ok(v * v),
            |_, v| {
                acc = acc.wrapping_mul(31).wrapping_add(v);
                Ok(acc)
            },
            &cfg(1, 1, true),
        )
        .unwrap();
        let mut acc2 = 0u64;
        let expect: Vec<u64> = items
            .iter()
            .map(|v| {
                acc2 = acc2.wrapping_mul(31).wrapping_add(v * v);
                acc2
            })
            .collect();
        assert_eq!(out, expect);
        assert!(stats.max_in_flight <= 1);
    }

    #[test]
    fn deterministic_across_producer_counts() {
        let items: Vec<usize> = (0..300).collect();
        let run = |p: usize| {
            let mut state = 0.0f64;
            run_pipeline(
                &items,
                |i, _| {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(item_seed(7, i as u64));
                    if i % 7 == 0 {
                        std::thread::yield_now();
                    }
                    Ok(rng.gen::<f64>())
                },
                |_, v| {
                    state = state * 0.5 + v;
                    Ok(state)
                },
                &cfg(p, 3, true),
            )
            .unwrap()
        };
        let (a, _) = run(1);
        for p in [2, 8] {
            let (b, stats) = run(p);
            assert_eq!(a, b);
            assert!(stats.max_in_flight <= 3);
        }
    }

    #[test]
    fn unordered_mode_consumes_each_item_once() {
        let items: Vec<usize> = (0..200).collect();
        let (mut out, stats) =
            run_pipeline(&items, |i, _| Ok(i), |_, v| Ok(v), &cfg(4, 5, false)).unwrap();
        out.sort_unstable();
        assert_eq!(out, items);
        assert!(stats.max_in_flight <= 5);
    }

    #[test]
    fn reports_lowest_failing_item() {
        let items: Vec<usize> = (0..100).collect();
        for p in [1, 3] {
            let err = run_pipeline(
                &items,
                |i, _| {
                    if i == 7 || i == 40 {
                        Err(Error::Config(format!("boom {i}")))
                    } else {
                        Ok(i)
                    }
                },
                |_, v| Ok(v),
                &cfg(p, 4, true),
            )
            .unwrap_err();
            match err {
                Error::Pipeline { index, .. } => assert_eq!(index, 7),
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn consumer_error_stops_run() {
        let items: Vec<usize> = (0..100).collect();
        let err = run_pipeline(
            &items,
            |i, _| Ok(i),
            |i, v| if i == 12 { Err(Error::Config("stop".into())) } else { Ok(v) },
            &cfg(2, 2, true),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pipeline { index: 12, .. }));
    }

    #[test]
    fn empty_input() {
        let items: Vec<u8> = vec![];
        let (out, stats) = run_pipeline(&items, |_, &v| Ok(v), |_, v| Ok(v), &cfg(3, 2, true)).unwrap();
        assert!(out.is_empty());
        assert_eq!(stats.items, 0);
    }

    #[test]
    fn zero_cost_producers_leave_consumer_busy() {
        let items: Vec<usize> = (0..40).collect();
        let (_, stats) = run_pipeline(
            &items,
            |i, _| Ok(i),
            |_, v| {
                std::thread::sleep(Duration::from_millis(2));
                Ok(v)
            },
            &cfg(2, 4, true),
        )
        .unwrap();
        let report = stats.throughput_report();
        assert!(report.consumer_idle_fraction < 0.1, "{report:?}");
    }

    #[test]
    fn item_seeds_differ() {
        assert_ne!(item_seed(1, 0), item_seed(1, 1));
        assert_ne!(item_seed(1, 0), item_seed(2, 0));
        assert_eq!(item_seed(5, 9), item_seed(5, 9));
    }
}
