//! Heavy-tailed reward laws and the truncation thresholds `B_n`.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::privatizer::PrivacyModel;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum HeavyError {
    #[error("moment order v must lie in (0, 1], got {0}")]
    MomentOrder(f64),
    #[error("moment bound u must be positive, got {0}")]
    MomentBound(f64),
    #[error("mean bound tau must be positive, got {0}")]
    MeanBound(f64),
    #[error("declared mean {mean} exceeds tau = {tau}")]
    MeanExceedsTau { mean: f64, tau: f64 },
    #[error("invalid reward law: {0}")]
    Law(String),
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("delta must lie in (0, 1], got {0}")]
    Delta(f64),
    #[error("schedule dimensions must be positive")]
    Dimensions,
}

/// Declared tail parameters: `E|X|^{1+v} <= u` and `|E X| <= tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailParams<T> {
    pub v: T,
    pub u: T,
    pub tau: T,
}

impl<T: Real> HeavyTailParams<T> {
    pub fn new(v: T, u: T, tau: T) -> Result<Self, HeavyError> {
        let p = Self { v, u, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HeavyError> {
        if !(self.v > T::zero() && self.v <= T::one()) {
            return Err(HeavyError::MomentOrder(self.v.to_f64_lossy()));
        }
        if !(self.u > T::zero()) {
            return Err(HeavyError::MomentBound(self.u.to_f64_lossy()));
        }
        if !(self.tau > T::zero()) {
            return Err(HeavyError::MeanBound(self.tau.to_f64_lossy()));
        }
        Ok(())
    }
}

/// Reward law families used by the environments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardLaw<T> {
    /// Stable law with index `alpha`, skewness `beta`, location `mu` and scale `sigma`
    /// (the location is the mean whenever `alpha > 1`).
    AlphaStable { alpha: T, beta: T, mu: T, sigma: T },
    /// `high` with probability `p`, otherwise 0.
    PointMassMixture { p: T, high: T },
    Constant { value: T },
}

/// A reward law together with the tail parameters it is declared to satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardDist<T> {
    pub law: RewardLaw<T>,
    pub params: HeavyTailParams<T>,
}

impl<T: Real> RewardDist<T> {
    pub fn constant(value: T, params: HeavyTailParams<T>) -> Self {
        Self { law: RewardLaw::Constant { value }, params }
    }

    pub fn point_mass(p: T, high: T, params: HeavyTailParams<T>) -> Self {
        Self { law: RewardLaw::PointMassMixture { p, high }, params }
    }

    pub fn alpha_stable(alpha: T, beta: T, mu: T, sigma: T, params: HeavyTailParams<T>) -> Self {
        Self { law: RewardLaw::AlphaStable { alpha, beta, mu, sigma }, params }
    }

    pub fn params(&self) -> HeavyTailParams<T> {
        self.params
    }

    pub fn mean(&self) -> T {
        match self.law {
            RewardLaw::AlphaStable { mu, .. } => mu,
            RewardLaw::PointMassMixture { p, high } => p * high,
            RewardLaw::Constant { value } => value,
        }
    }

    pub fn validate(&self) -> Result<(), HeavyError> {
        self.params.validate()?;
        match self.law {
            RewardLaw::AlphaStable { alpha, beta, sigma, .. } => {
                if !(alpha > T::zero() && alpha <= T::lit(2.0)) {
                    return Err(HeavyError::Law(format!("stable index {alpha} outside (0, 2]")));
                }
                if !(beta.abs() <= T::one()) {
                    return Err(HeavyError::Law(format!("skewness {beta} outside [-1, 1]")));
                }
                if !(sigma > T::zero()) {
                    return Err(HeavyError::Law(format!("scale {sigma} must be positive")));
                }
            }
            RewardLaw::PointMassMixture { p, high } => {
                if !(p >= T::zero() && p <= T::one()) {
                    return Err(HeavyError::Law(format!("mixture weight {p} outside [0, 1]")));
                }
                if !high.is_finite() {
                    return Err(HeavyError::Law("mixture atom must be finite".into()));
                }
            }
            RewardLaw::Constant { value } => {
                if !value.is_finite() {
                    return Err(HeavyError::Law("constant reward must be finite".into()));
                }
            }
        }
        let mean = self.mean();
        if mean.abs() > self.params.tau * (T::one() + T::row_tolerance()) {
            return Err(HeavyError::MeanExceedsTau { mean: mean.to_f64_lossy(), tau: self.params.tau.to_f64_lossy() });
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self.law {
            RewardLaw::Constant { value } => value,
            RewardLaw::PointMassMixture { p, high } => {
                let u: T = crate::mdp::uniform(rng);
                if u < p {
                    high
                } else {
                    T::zero()
                }
            }
            RewardLaw::AlphaStable { alpha, beta, mu, sigma } => {
                let angle = T::PI() * (T::lit(rng.sample::<f64, _>(Open01)) - T::lit(0.5));
                let exp = -T::lit(rng.sample::<f64, _>(Open01)).ln();
                stable_from_draws(alpha, beta, mu, sigma, angle, exp)
            }
        }
    }
}

/// Chambers-Mallows-Stuck transform of a uniform angle on `(-pi/2, pi/2)` and a
/// unit exponential into a stable variate.
pub fn stable_from_draws<T: Real>(alpha: T, beta: T, mu: T, sigma: T, angle: T, exp: T) -> T {
    let half_pi = T::FRAC_PI_2();
    if (alpha - T::one()).abs() <= T::epsilon() {
        let shifted = half_pi + beta * angle;
        let x = (shifted * angle.tan() - beta * ((half_pi * exp * angle.cos()) / shifted).ln()) / half_pi;
        return sigma * x + beta * sigma * sigma.ln() / half_pi + mu;
    }
    let zeta = beta * (half_pi * alpha).tan();
    let b = zeta.atan() / alpha;
    let s = (T::one() + zeta * zeta).powf(T::one() / (T::lit(2.0) * alpha));
    let x = s * (alpha * (angle + b)).sin() / angle.cos().powf(T::one() / alpha)
        * ((angle - alpha * (angle + b)).cos() / exp).powf((T::one() - alpha) / alpha);
    mu + sigma * x
}

/// `r * 1{|r| <= B}`: the entry a reward contributes to the counting stream.
#[inline]
pub fn truncate_for_stream<T: Real>(r: T, threshold: T) -> T {
    if r.abs() <= threshold {
        r
    } else {
        T::zero()
    }
}

/// Monte Carlo estimate of `E|X|^{1+v}`.
pub fn estimate_raw_moment<T: Real, R: Rng + ?Sized>(dist: &RewardDist<T>, v: T, samples: usize, rng: &mut R) -> T {
    assert!(samples >= 1, "need at least one sample");
    let order = T::one() + v;
    let mut acc = 0.0f64;
    for _ in 0..samples {
        acc += dist.sample(rng).abs().powf(order).to_f64_lossy();
    }
    T::lit(acc / samples as f64)
}

/// `max(ln K, 1)`: the `log K` factor in thresholds, envelopes and tree noise.
/// Floored at one so a single-episode run still gets finite thresholds and
/// non-zero noise.
#[inline]
pub fn episode_log<T: Real>(episodes: usize) -> T {
    T::count(episodes).ln().max(T::one())
}

/// Visit-indexed truncation thresholds for one privacy regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationSchedule<T> {
    regime: PrivacyModel,
    params: HeavyTailParams<T>,
    epsilon: T,
    delta: T,
    states: usize,
    actions: usize,
    horizon: usize,
    episodes: usize,
    /// Denominator of the regime's closed form.
    scale: T,
}

impl<T: Real> TruncationSchedule<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        regime: PrivacyModel,
        params: HeavyTailParams<T>,
        epsilon: T,
        delta: T,
        states: usize,
        actions: usize,
        horizon: usize,
        episodes: usize,
    ) -> Result<Self, HeavyError> {
        params.validate()?;
        if !(delta > T::zero() && delta <= T::one()) {
            return Err(HeavyError::Delta(delta.to_f64_lossy()));
        }
        if regime != PrivacyModel::None && !(epsilon > T::zero()) {
            return Err(HeavyError::Epsilon(epsilon.to_f64_lossy()));
        }
        if states == 0 || actions == 0 || horizon == 0 || episodes == 0 {
            return Err(HeavyError::Dimensions);
        }
        let sat = T::count(states * actions * horizon * episodes);
        let h = T::count(horizon);
        let scale = match regime {
            PrivacyModel::None => (T::lit(2.0) * sat / delta).ln(),
            PrivacyModel::Jdp => {
                h * episode_log::<T>(episodes).powf(T::lit(1.5)) * (T::lit(3.0) * sat / delta).ln()
            }
            PrivacyModel::Ldp => h * (T::lit(6.0) * sat / delta).ln(),
        };
        Ok(Self { regime, params, epsilon, delta, states, actions, horizon, episodes, scale })
    }

    pub fn regime(&self) -> PrivacyModel {
        self.regime
    }

    pub fn params(&self) -> HeavyTailParams<T> {
        self.params
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// `(states, actions, horizon)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.states, self.actions, self.horizon)
    }

    /// The denominator the closed form divides by (`ln(2SAT/delta)`,
    /// `H log^1.5 K ln(3SAT/delta)` or `H ln(6SAT/delta)`).
    pub fn denominator(&self) -> T {
        self.scale
    }

    /// `B_n`; zero at `n = 0` and non-decreasing in `n`.
    pub fn threshold(&self, n: usize) -> T {
        self.threshold_at(T::count(n))
    }

    /// The closed form evaluated at a real-valued count.
    pub fn threshold_at(&self, n: T) -> T {
        let HeavyTailParams { v, u, .. } = self.params;
        let base = match self.regime {
            PrivacyModel::None => u * n / self.scale,
            PrivacyModel::Jdp => self.epsilon * u * n / self.scale,
            PrivacyModel::Ldp => u * self.epsilon * n.sqrt() / self.scale,
        };
        base.powf(T::one() / (T::one() + v))
    }
}

/// High-probability deviation bound for the non-private truncated empirical
/// mean over `n` samples, with sample `i` truncated at `B_i`:
///
/// `sqrt(2 u B_n^{1-v} L / n) + B_n L / (3n) + (1/n) sum_{i<=n} u / B_i^v`,
/// `L = ln(2SAT/delta)`.
#[derive(Clone, Debug)]
pub struct TruncatedMeanBound<T> {
    schedule: TruncationSchedule<T>,
    log_term: T,
    /// `prefix[n] = sum_{i=1}^{n} u / B_i^v`.
    prefix: Vec<T>,
}

impl<T: Real> TruncatedMeanBound<T> {
    /// `schedule` must be the non-private one; the prefix table covers up to
    /// `capacity` samples and is extended on demand beyond that.
    pub fn new(schedule: TruncationSchedule<T>, capacity: usize) -> Self {
        assert_eq!(schedule.regime(), PrivacyModel::None, "the bound uses the non-private thresholds");
        let mut bound = Self { log_term: schedule.denominator(), schedule, prefix: vec![T::zero()] };
        bound.extend_to(capacity);
        bound
    }

    fn extend_to(&mut self, n: usize) {
        let HeavyTailParams { v, u, .. } = self.schedule.params();
        while self.prefix.len() <= n {
            let i = self.prefix.len();
            let last = *self.prefix.last().expect("prefix starts non-empty");
            self.prefix.push(last + u / self.schedule.threshold(i).powf(v));
        }
    }

    fn prefix_at(&self, n: usize) -> T {
        match self.prefix.get(n) {
            Some(p) => *p,
            None => {
                let HeavyTailParams { v, u, .. } = self.schedule.params();
                let mut acc = *self.prefix.last().expect("non-empty");
                for i in self.prefix.len()..=n {
                    acc = acc + u / self.schedule.threshold(i).powf(v);
                }
                acc
            }
        }
    }

    /// Bound at sample size `n >= 1`.
    pub fn at(&self, n: usize) -> T {
        self.at_real(T::count(n.max(1)))
    }

    /// Bound at a real-valued effective count `m` (floored at 1). The
    /// truncation-bias average runs over `floor(m)` samples, so the result is
    /// non-increasing in `m`.
    pub fn at_real(&self, m: T) -> T {
        let HeavyTailParams { v, u, .. } = self.schedule.params();
        let m = m.max(T::one());
        let n = m.floor().to_usize().unwrap_or(usize::MAX).max(1);
        let bias = self.prefix_at(n) / T::count(n);
        let b = self.schedule.threshold_at(m);
        (T::lit(2.0) * u * b.powf(T::one() - v) * self.log_term / m).sqrt()
            + b * self.log_term / (T::lit(3.0) * m)
            + bias
    }

    pub fn schedule(&self) -> &TruncationSchedule<T> {
        &self.schedule
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> HeavyTailParams<f64> {
        HeavyTailParams::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn param_validation() {
        assert!(HeavyTailParams::new(0.0, 1.0, 1.0).is_err());
        assert!(HeavyTailParams::new(1.5, 1.0, 1.0).is_err());
        assert!(HeavyTailParams::new(0.5, 0.0, 1.0).is_err());
        assert!(HeavyTailParams::new(0.5, 1.0, -1.0).is_err());
        assert!(HeavyTailParams::new(0.5, 1.0, 1.0).is_ok());
    }

    #[test]
    fn law_validation() {
        let p = params();
        assert!(RewardDist::point_mass(1.2, 0.5, p).validate().is_err());
        assert!(RewardDist::alpha_stable(2.5, 0.0, 0.0, 1.0, p).validate().is_err());
        assert!(RewardDist::alpha_stable(2.0, 1.5, 0.0, 1.0, p).validate().is_err());
        assert!(RewardDist::alpha_stable(2.0, 0.0, 0.0, 0.0, p).validate().is_err());
        assert!(RewardDist::constant(1.5, p).validate().is_err());
        assert!(RewardDist::alpha_stable(1.5, 0.3, 0.5, 2.0, p).validate().is_ok());
    }

    #[test]
    fn constant_and_degenerate_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = RewardDist::constant(0.005, params());
        let m = RewardDist::point_mass(0.0, 10.0, HeavyTailParams::new(1.0, 1.0, 10.0).unwrap());
        for _ in 0..1000 {
            assert_eq!(c.sample(&mut rng), 0.005);
            assert_eq!(m.sample(&mut rng), 0.0);
        }
    }

    #[test]
    fn gaussian_stable_has_mean_mu() {
        // alpha = 2 is N(mu, 2 sigma^2)
        let d = RewardDist::alpha_stable(2.0, 0.0, 1.0, 1.0, HeavyTailParams::new(1.0, 3.0, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        let tol = 3.0 * 2f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < tol, "mean {mean}");
    }

    #[test]
    fn stable_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let angle = std::f64::consts::PI * (rng.sample::<f64, _>(Open01) - 0.5);
            let exp = -rng.sample::<f64, _>(Open01).ln();
            let z = stable_from_draws(2.0, 0.0, 0.0, 1.0, angle, exp);
            let y = stable_from_draws(2.0, 0.0, 0.7, 2.5, angle, exp);
            assert_eq!(y, 0.7 + 2.5 * z);
        }
    }

    #[test]
    fn cauchy_branch_is_symmetric_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = RewardDist::alpha_stable(1.0, 0.0, 0.0, 1.0, params());
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        assert!(samples.iter().all(|x| x.is_finite()));
        // Cauchy median is 0 and P(|X| <= 1) = 1/2
        let inside = samples.iter().filter(|x| x.abs() <= 1.0).count() as f64 / n as f64;
        assert!((inside - 0.5).abs() < 0.01, "{inside}");
    }

    #[test]
    fn truncation_indicator() {
        assert_eq!(truncate_for_stream(5.0, 3.0), 0.0);
        assert_eq!(truncate_for_stream(2.0, 3.0), 2.0);
        assert_eq!(truncate_for_stream(-3.0, 3.0), -3.0);
        assert_eq!(truncate_for_stream(0.1, 0.0), 0.0);
    }

    #[test]
    fn thresholds_vanish_at_zero() {
        for regime in [PrivacyModel::None, PrivacyModel::Jdp, PrivacyModel::Ldp] {
            let s = TruncationSchedule::new(regime, params(), 1.0, 0.1, 3, 2, 4, 100).unwrap();
            assert_eq!(s.threshold(0), 0.0);
        }
    }

    #[test]
    fn jdp_threshold_closed_form() {
        // choose delta so that H log^1.5 K ln(3SAT/delta) == 4 with H = 1, K = e^1 floor... use K = 1
        // (log factor floored at 1) and ln(3SAT/delta) = 4.
        let sat = 1.0;
        let delta = 3.0 * sat / 4f64.exp();
        let s = TruncationSchedule::new(PrivacyModel::Jdp, params(), 1.0, delta, 1, 1, 1, 1).unwrap();
        assert!((s.denominator() - 4.0).abs() < 1e-12);
        assert!((s.threshold(16) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ldp_threshold_closed_form() {
        let delta = 6.0 / 2f64.exp();
        let s = TruncationSchedule::new(PrivacyModel::Ldp, params(), 1.0, delta, 1, 1, 1, 1).unwrap();
        assert!((s.denominator() - 2.0).abs() < 1e-12);
        assert!((s.threshold(16) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn schedule_rejects_bad_budgets() {
        assert_eq!(
            TruncationSchedule::new(PrivacyModel::Jdp, params(), 0.0, 0.1, 1, 1, 1, 1).unwrap_err(),
            HeavyError::Epsilon(0.0)
        );
        assert_eq!(
            TruncationSchedule::new(PrivacyModel::Ldp, params(), 1.0, 1.5, 1, 1, 1, 1).unwrap_err(),
            HeavyError::Delta(1.5)
        );
        assert!(TruncationSchedule::new(PrivacyModel::None, params(), 0.0, 0.1, 1, 1, 1, 1).is_ok());
        assert!(TruncationSchedule::new(PrivacyModel::None, params(), 1.0, 0.0, 1, 1, 1, 1).is_err());
    }

    #[test]
    fn two_point_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = RewardDist::point_mass(0.5, 2.0, HeavyTailParams::new(1.0, 2.0, 1.0).unwrap());
        let n = 100_000;
        let est: f64 = estimate_raw_moment(&d, 1.0, n, &mut rng);
        // |X|^2 is 4 w.p. 1/2: sd 2
        assert!((est - 2.0).abs() < 3.0 * 2.0 / (n as f64).sqrt());
        let zero = RewardDist::constant(0.0, params());
        assert_eq!(estimate_raw_moment(&zero, 0.3, 10, &mut rng), 0.0);
    }

    #[test]
    fn truncated_mean_bound_matches_direct_sum() {
        let s = TruncationSchedule::<f64>::new(PrivacyModel::None, HeavyTailParams::new(0.5, 2.0, 1.0).unwrap(), 1.0, 0.1, 2, 2, 2, 50)
            .unwrap();
        let small = TruncatedMeanBound::new(s, 4);
        let big = TruncatedMeanBound::new(s, 200);
        for n in [1, 3, 7, 50, 120] {
            let direct: f64 = (1..=n).map(|i| 2.0 / s.threshold(i).powf(0.5)).sum::<f64>() / n as f64;
            let l = s.denominator();
            let b = s.threshold(n);
            let expect = (2.0 * 2.0 * b.powf(0.5) * l / n as f64).sqrt() + b * l / (3.0 * n as f64) + direct;
            assert!((small.at(n) - expect).abs() < 1e-10);
            assert!((big.at(n) - expect).abs() < 1e-10);
            assert!((big.at_real(n as f64) - expect).abs() < 1e-10);
        }
        assert_eq!(big.at(0), big.at(1));
    }
}
