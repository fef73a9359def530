//! Adaptive binary-tree continual counter.
//!
//! Item `k` (1-based) is folded into the p-sum at level `i = trailing_zeros(k)`,
//! which then covers items `k - 2^i + 1 ..= k`; lower levels are cleared. The
//! released prefix sum is the sum of the noisy p-sums at the set bits of `k`,
//! so only `floor(log2 K) + 1` p-sums are ever live.

use rand::RngCore;
use thiserror::Error;

use crate::noise::{NoiseSource, NoiseTag};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CounterError {
    #[error("item {got} appended out of order (expected {expected})")]
    OutOfOrder { expected: usize, got: usize },
    #[error("item {got} exceeds the counter capacity {capacity}")]
    OutOfRange { capacity: usize, got: usize },
}

#[derive(Clone, Debug)]
pub struct TreeCounter<T> {
    capacity: usize,
    psums: Vec<T>,
    noisy_psums: Vec<T>,
    span_start: Vec<usize>,
    appended: usize,
    released: T,
}

impl<T: Real> TreeCounter<T> {
    pub fn new(capacity: usize) -> Self {
        let levels = Self::levels_for(capacity);
        Self {
            capacity,
            psums: vec![T::zero(); levels],
            noisy_psums: vec![T::zero(); levels],
            span_start: vec![0; levels],
            appended: 0,
            released: T::zero(),
        }
    }

    /// `floor(log2 K) + 1` (at least one level).
    pub fn levels_for(capacity: usize) -> usize {
        (usize::BITS - capacity.max(1).leading_zeros()) as usize
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Items appended so far.
    pub fn len(&self) -> usize {
        self.appended
    }

    pub fn is_empty(&self) -> bool {
        self.appended == 0
    }

    /// Latest release `S^(k)`; zero before the first item.
    pub fn released(&self) -> T {
        self.released
    }

    /// Appends item `k` and returns the released prefix sum. `scale` is the
    /// Laplace scale for the p-sum refreshed at this step.
    pub fn append(
        &mut self,
        k: usize,
        value: T,
        scale: T,
        noise: &mut dyn NoiseSource<T>,
        tag: NoiseTag,
        rng: &mut dyn RngCore,
    ) -> Result<T, CounterError> {
        if k != self.appended + 1 {
            return Err(CounterError::OutOfOrder { expected: self.appended + 1, got: k });
        }
        if k > self.capacity {
            return Err(CounterError::OutOfRange { capacity: self.capacity, got: k });
        }
        let level = k.trailing_zeros() as usize;
        let mut folded = value;
        for j in 0..level {
            folded = folded + self.psums[j];
            self.psums[j] = T::zero();
            self.noisy_psums[j] = T::zero();
        }
        self.psums[level] = folded;
        self.span_start[level] = k + 1 - (1 << level);
        self.noisy_psums[level] = folded + noise.draw(scale, tag, rng);
        self.appended = k;
        self.released = self
            .set_levels(k)
            .map(|j| self.noisy_psums[j])
            .fold(T::zero(), |acc, x| acc + x);
        Ok(self.released)
    }

    /// Appends the next item.
    pub fn push(
        &mut self,
        value: T,
        scale: T,
        noise: &mut dyn NoiseSource<T>,
        tag: NoiseTag,
        rng: &mut dyn RngCore,
    ) -> Result<T, CounterError> {
        self.append(self.appended + 1, value, scale, noise, tag, rng)
    }

    fn set_levels(&self, k: usize) -> impl Iterator<Item = usize> {
        (0..self.psums.len()).filter(move |j| k >> j & 1 == 1)
    }

    /// Item ranges `(first, last)` of the p-sums summed into the current
    /// release, highest level first.
    pub fn released_spans(&self) -> Vec<(usize, usize)> {
        let mut spans: Vec<_> = self
            .set_levels(self.appended)
            .map(|j| (self.span_start[j], self.span_start[j] + (1 << j) - 1))
            .collect();
        spans.reverse();
        spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{CounterId, RecordingNoise, ZeroNoise};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TAG: NoiseTag = NoiseTag { episode: 0, counter: CounterId::Stream { id: 0 } };

    #[test]
    fn zero_noise_gives_prefix_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = TreeCounter::new(8);
        let mut out = vec![];
        for x in [1.0, 2.0, 3.0, 4.0, 5.0] {
            out.push(c.push(x, 1.0, &mut ZeroNoise, TAG, &mut rng).unwrap());
        }
        assert_eq!(out, vec![1.0, 3.0, 6.0, 10.0, 15.0]);
    }

    #[test]
    fn six_uses_two_psums() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = TreeCounter::new(16);
        for _ in 0..6 {
            c.push(1.0, 1.0, &mut ZeroNoise, TAG, &mut rng).unwrap();
        }
        assert_eq!(c.released_spans(), vec![(1, 4), (5, 6)]);
    }

    #[test]
    fn release_counts_one_noisy_psum_per_set_bit() {
        // noise equal to the scale marks every refreshed p-sum with a 1
        struct Marker;
        impl NoiseSource<f64> for Marker {
            fn draw(&mut self, scale: f64, _tag: NoiseTag, _rng: &mut dyn RngCore) -> f64 {
                scale
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = TreeCounter::new(64);
        for k in 1..=64usize {
            // noise = 1 for every refreshed p-sum, data zero: release = popcount(k)
            let r = c.append(k, 0.0, 1.0, &mut Marker, TAG, &mut rng).unwrap();
            assert_eq!(r, k.count_ones() as f64, "k = {k}");
        }
    }

    #[test]
    fn rejects_out_of_order_and_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = TreeCounter::new(2);
        assert_eq!(
            c.append(2, 1.0, 1.0, &mut ZeroNoise, TAG, &mut rng),
            Err(CounterError::OutOfOrder { expected: 1, got: 2 })
        );
        c.push(1.0, 1.0, &mut ZeroNoise, TAG, &mut rng).unwrap();
        c.push(1.0, 1.0, &mut ZeroNoise, TAG, &mut rng).unwrap();
        assert_eq!(
            c.push(1.0, 1.0, &mut ZeroNoise, TAG, &mut rng),
            Err(CounterError::OutOfRange { capacity: 2, got: 3 })
        );
    }

    #[test]
    fn each_step_draws_exactly_once_at_its_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut src = RecordingNoise::new(ZeroNoise);
        let log = src.log();
        let mut c = TreeCounter::new(10);
        for k in 1..=10 {
            let tag = NoiseTag { episode: k, counter: CounterId::Stream { id: 3 } };
            c.append(k, 1.0, k as f64 * 0.5, &mut src, tag, &mut rng).unwrap();
        }
        let rec = log.records();
        assert_eq!(rec.len(), 10);
        for (i, r) in rec.iter().enumerate() {
            assert_eq!(r.episode, i + 1);
            assert_eq!(r.scale, (i + 1) as f64 * 0.5);
        }
    }

    #[test]
    fn level_count() {
        assert_eq!(TreeCounter::<f64>::levels_for(1), 1);
        assert_eq!(TreeCounter::<f64>::levels_for(16), 5);
        assert_eq!(TreeCounter::<f64>::levels_for(17), 5);
        assert_eq!(TreeCounter::<f64>::levels_for(256), 9);
    }
}
