//! Laplace noise and the pluggable noise sources used by the counters.

use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use rand::distributions::Open01;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Quantile function of `Lap(0, scale)` at `u in (0, 1)`.
#[inline]
pub fn laplace_inverse_cdf<T: Real>(u: T, scale: T) -> T {
    let centered = u - T::lit(0.5);
    -scale * centered.signum() * (T::one() - T::lit(2.0) * centered.abs()).ln()
}

/// One draw from `Lap(0, scale)`.
pub fn sample_laplace<T: Real, R: Rng + ?Sized>(scale: T, rng: &mut R) -> T {
    debug_assert!(scale > T::zero(), "Laplace scale must be positive");
    laplace_inverse_cdf(T::lit(rng.sample::<f64, _>(Open01)), scale)
}

/// Which counter a noise draw belongs to. Step indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CounterId {
    Visit { h: usize, s: usize, a: usize },
    Reward { h: usize, s: usize, a: usize },
    Transition { h: usize, s: usize, a: usize, next: usize },
    /// A counter used on its own, outside a bank.
    Stream { id: usize },
}

/// Context attached to every draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseTag {
    /// 1-based episode index.
    pub episode: usize,
    pub counter: CounterId,
}

/// Supplier of additive privacy noise.
pub trait NoiseSource<T>: Send {
    fn draw(&mut self, scale: T, tag: NoiseTag, rng: &mut dyn RngCore) -> T;
}

impl<T, N: NoiseSource<T> + ?Sized> NoiseSource<T> for Box<N> {
    fn draw(&mut self, scale: T, tag: NoiseTag, rng: &mut dyn RngCore) -> T {
        (**self).draw(scale, tag, rng)
    }
}

/// Independent Laplace noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct LaplaceNoise;

impl<T: Real> NoiseSource<T> for LaplaceNoise {
    fn draw(&mut self, scale: T, _tag: NoiseTag, rng: &mut dyn RngCore) -> T {
        sample_laplace(scale, rng)
    }
}

/// Always zero; reduces every mechanism to exact counting.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl<T: Real> NoiseSource<T> for ZeroNoise {
    fn draw(&mut self, _scale: T, _tag: NoiseTag, _rng: &mut dyn RngCore) -> T {
        T::zero()
    }
}

/// One logged draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub episode: usize,
    pub counter: CounterId,
    pub scale: f64,
}

/// Shared view of the records captured by a [`RecordingNoise`].
#[derive(Clone, Debug, Default)]
pub struct NoiseLog(Arc<Mutex<Vec<NoiseRecord>>>);

impl NoiseLog {
    pub fn records(&self) -> Vec<NoiseRecord> {
        self.0.lock().expect("noise log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("noise log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One JSON object per line: `{"episode":..,"counter":{..},"scale":..}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.0.lock().expect("noise log poisoned").iter() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Wraps another source and logs `(episode, counter, scale)` for every draw.
pub struct RecordingNoise<N> {
    inner: N,
    log: NoiseLog,
}

impl<N> RecordingNoise<N> {
    pub fn new(inner: N) -> Self {
        Self { inner, log: NoiseLog::default() }
    }

    pub fn log(&self) -> NoiseLog {
        self.log.clone()
    }
}

impl<T: Real, N: NoiseSource<T>> NoiseSource<T> for RecordingNoise<N> {
    fn draw(&mut self, scale: T, tag: NoiseTag, rng: &mut dyn RngCore) -> T {
        self.log.0.lock().expect("noise log poisoned").push(NoiseRecord {
            episode: tag.episode,
            counter: tag.counter,
            scale: scale.to_f64_lossy(),
        });
        self.inner.draw(scale, tag, rng)
    }
}
