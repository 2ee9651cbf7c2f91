//! Seeded Monte Carlo plumbing: per-trial RNG streams, deterministic parallel
//! aggregation, Wilson intervals for rates and normal intervals for means.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

pub const DEFAULT_CONFIDENCE: f64 = 0.999;

/// Trials per work unit. Chunk boundaries depend only on the trial count, so
/// the merge order (and every floating-point sum) is the same for any worker count.
const CHUNK: u64 = 4096;

/// Stream `index` of the root `seed`; a pure function of both.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Two-sided standard normal quantile for `confidence`.
pub fn z_score(confidence: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

pub fn wilson_interval(successes: u64, count: u64, confidence: f64) -> (f64, f64) {
    assert!(count >= 1 && successes <= count, "need 0 <= successes <= count, count >= 1");
    let n = count as f64;
    let p = successes as f64 / n;
    let z = z_score(confidence);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == count { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub successes: u64,
    pub count: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateEstimate {
    pub fn new(successes: u64, count: u64, confidence: f64) -> Self {
        if count == 0 {
            return Self { successes, count, point: f64::NAN, ci_low: 0.0, ci_high: 1.0 };
        }
        let (ci_low, ci_high) = wilson_interval(successes, count, confidence);
        Self { successes, count, point: successes as f64 / count as f64, ci_low, ci_high }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }

    /// `|point - value| <= k` half-widths.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.point - value).abs() <= k * self.half_width()
    }
}

/// Running sum and sum of squares of a bounded per-trial quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: u64,
}

impl MeanAccumulator {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
    }

    pub fn estimate(&self, confidence: f64) -> MeanEstimate {
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = if self.count > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        let half = z_score(confidence) * (var / n).sqrt();
        MeanEstimate { mean, half_width: half, count: self.count }
    }
}

/// Normal-approximation interval for a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub count: u64,
}

impl MeanEstimate {
    pub fn ci(&self) -> (f64, f64) {
        (self.mean - self.half_width, self.mean + self.half_width)
    }
}

/// Runs `trials` independent trials and folds them into an accumulator.
///
/// Trial `t` gets `stream_rng(seed, t)`. Trials are grouped in fixed chunks,
/// each folded into a fresh `init()` accumulator, and chunk results are merged
/// in chunk order, so the output does not depend on `workers` (0 means the
/// rayon default).
pub fn run_trials<A, I, F, M>(trials: u64, seed: u64, workers: usize, init: I, trial: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &mut ChaCha8Rng, u64) + Sync,
    M: Fn(&mut A, A),
{
    let chunks = trials.div_ceil(CHUNK);
    let work = || {
        (0..chunks)
            .into_par_iter()
            .map(|k| {
                let mut acc = init();
                let start = k * CHUNK;
                for t in start..(start + CHUNK).min(trials) {
                    let mut rng = stream_rng(seed, t);
                    trial(&mut acc, &mut rng, t);
                }
                acc
            })
            .collect::<Vec<A>>()
    };
    let parts = if workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool")
            .install(work)
    };
    let mut total = init();
    for part in parts {
        merge(&mut total, part);
    }
    total
}

/// Per-slot success counts, the common accumulator for conditional rates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateCounts {
    pub successes: Vec<u64>,
    pub counts: Vec<u64>,
}

impl RateCounts {
    pub fn new(slots: usize) -> Self {
        Self { successes: vec![0; slots], counts: vec![0; slots] }
    }

    pub fn record(&mut self, slot: usize, success: bool) {
        self.counts[slot] += 1;
        self.successes[slot] += success as u64;
    }

    pub fn merge(&mut self, other: RateCounts) {
        for (a, b) in self.successes.iter_mut().zip(other.successes) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn estimates(&self, confidence: f64) -> Vec<RateEstimate> {
        self.successes
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| RateEstimate::new(s, c, confidence))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{Binomial, Discrete};

    fn coin(trials: u64, seed: u64, workers: usize) -> RateCounts {
        run_trials(
            trials,
            seed,
            workers,
            || RateCounts::new(1),
            |acc, rng, _| acc.record(0, rng.random::<bool>()),
            RateCounts::merge,
        )
    }

    #[test]
    fn fair_coin() {
        let counts = coin(1_000_000, 7, 0);
        let est = &counts.estimates(DEFAULT_CONFIDENCE)[0];
        assert_eq!(est.count, 1_000_000);
        assert!((0.498..=0.502).contains(&est.point));
        assert!(est.agrees_with(0.5, 3.0));
    }

    #[test]
    fn worker_count_does_not_matter() {
        let a = coin(50_000, 3, 1);
        let b = coin(50_000, 3, 8);
        assert_eq!(a, b);
        let m = |w| {
            run_trials(
                20_000,
                11,
                w,
                MeanAccumulator::default,
                |acc, rng, _| acc.push(rng.random::<f64>()),
                |a, b| a.merge(&b),
            )
        };
        assert_eq!(m(1), m(5));
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(1, 0).random();
        let b: u64 = stream_rng(1, 1).random();
        let c: u64 = stream_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(500_000, 1_000_000, 0.999);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((hi - lo - 0.00329).abs() < 2e-5, "width {}", hi - lo);
        assert_eq!(wilson_interval(0, 1, 0.95).0, 0.0);
        assert_eq!(wilson_interval(9, 9, 0.95).1, 1.0);
        let zero = RateEstimate::new(0, 10, 0.95);
        assert_eq!((zero.point, zero.ci_low), (0.0, 0.0));
    }

    /// Exact coverage of the interval under Binomial(n, p).
    fn coverage(n: u64, p: f64, confidence: f64) -> f64 {
        let law = Binomial::new(p, n).unwrap();
        (0..=n)
            .filter(|&k| {
                let (lo, hi) = wilson_interval(k, n, confidence);
                lo <= p && p <= hi
            })
            .map(|k| law.pmf(k))
            .sum()
    }

    #[test]
    fn wilson_coverage_calibration() {
        for confidence in [0.95, 0.999] {
            let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
            let avg: f64 = grid.iter().map(|&p| coverage(200, p, confidence)).sum::<f64>() / grid.len() as f64;
            assert!(avg >= confidence - 0.005, "confidence {confidence}: average coverage {avg}");
        }
    }

    proptest! {
        #[test]
        fn wilson_contains_point_and_shrinks(s in 0u64..1000, extra in 0u64..1000) {
            let n = s + extra + 1;
            let est = RateEstimate::new(s, n, 0.99);
            prop_assert!(est.ci_low <= est.point && est.point <= est.ci_high);
            let big = RateEstimate::new(s * 4, n * 4, 0.99);
            prop_assert!(big.ci_high - big.ci_low <= est.ci_high - est.ci_low + 1e-15);
        }
    }
}
