//! Private counters for visits, truncated rewards and transitions, their error
//! envelopes, and the private empirical estimates built from them.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heavy::{episode_log, truncate_for_stream, HeavyError, HeavyTailParams, TruncationSchedule};
use crate::mdp::{Dims, Trajectory};
use crate::noise::{CounterId, LaplaceNoise, NoiseSource, NoiseTag};
use crate::scalar::Real;
use crate::tree::{CounterError, TreeCounter};

/// Which privacy guarantee the counters provide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyModel {
    #[default]
    None,
    /// Joint DP: the server adds tree-mechanism noise.
    Jdp,
    /// Local DP: every episode's statistics are perturbed before release.
    Ldp,
}

impl PrivacyModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrivacyModel::None => "none",
            PrivacyModel::Jdp => "jdp",
            PrivacyModel::Ldp => "ldp",
        }
    }
}

impl fmt::Display for PrivacyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrivacyModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PrivacyModel::None),
            "jdp" => Ok(PrivacyModel::Jdp),
            "ldp" => Ok(PrivacyModel::Ldp),
            other => Err(format!("unknown privacy model `{other}` (expected none, jdp or ldp)")),
        }
    }
}

/// Budget, confidence and problem size shared by the counters and the bonuses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyConfig<T> {
    pub model: PrivacyModel,
    pub epsilon: T,
    pub delta: T,
    pub dims: Dims,
    pub episodes: usize,
    pub heavy: HeavyTailParams<T>,
}

impl<T: Real> PrivacyConfig<T> {
    pub fn new(
        model: PrivacyModel,
        epsilon: T,
        delta: T,
        dims: Dims,
        episodes: usize,
        heavy: HeavyTailParams<T>,
    ) -> Result<Self, HeavyError> {
        let cfg = Self { model, epsilon, delta, dims, episodes, heavy };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HeavyError> {
        self.schedule().map(|_| ())
    }

    /// `T = K H`.
    pub fn steps(&self) -> usize {
        self.dims.steps(self.episodes)
    }

    /// `S A T` as a float.
    pub fn sat(&self) -> T {
        T::count(self.dims.states * self.dims.actions) * T::count(self.steps())
    }

    /// Truncation thresholds for this model.
    pub fn schedule(&self) -> Result<TruncationSchedule<T>, HeavyError> {
        TruncationSchedule::new(
            self.model,
            self.heavy,
            self.epsilon,
            self.delta,
            self.dims.states,
            self.dims.actions,
            self.dims.horizon,
            self.episodes,
        )
    }

    /// The same problem with another privacy model.
    pub fn with_model(&self, model: PrivacyModel) -> Self {
        Self { model, ..*self }
    }
}

/// High-probability bounds `|N~ - N| <= E1`, `|R~ - R| <= E2(k)` and
/// `|N~(s') - N(s')| <= E3`.
#[derive(Clone, Copy, Debug)]
pub struct Envelopes<T> {
    model: PrivacyModel,
    e1: T,
    e3: T,
    /// `E2(k) / B_k` for JDP, `E2(k) / (B_k sqrt k)` for LDP.
    e2_factor: T,
    schedule: TruncationSchedule<T>,
    scale: T,
}

impl<T: Real> Envelopes<T> {
    pub fn model(&self) -> PrivacyModel {
        self.model
    }

    pub fn e1(&self) -> T {
        self.e1 * self.scale
    }

    pub fn e3(&self) -> T {
        self.e3 * self.scale
    }

    /// Reward envelope after `k` episodes.
    pub fn e2(&self, k: usize) -> T {
        let b = self.schedule.threshold(k);
        let raw = match self.model {
            PrivacyModel::None => T::zero(),
            PrivacyModel::Jdp => self.e2_factor * b,
            PrivacyModel::Ldp => self.e2_factor * b * T::count(k).sqrt(),
        };
        raw * self.scale
    }

    /// Multiplies all three envelopes by `c`.
    pub fn scaled(self, c: T) -> Self {
        Self { scale: self.scale * c, ..self }
    }

    pub fn scale(&self) -> T {
        self.scale
    }
}

/// Evaluates the envelopes of `config` with thresholds from `schedule`.
pub fn error_envelopes<T: Real>(config: &PrivacyConfig<T>, schedule: &TruncationSchedule<T>) -> Envelopes<T> {
    let h = T::count(config.dims.horizon);
    let s = T::count(config.dims.states);
    let sat = config.sat();
    let eps = config.epsilon;
    let delta = config.delta;
    let k = T::count(config.episodes);
    let (e1, e2_factor, e3) = match config.model {
        PrivacyModel::None => (T::zero(), T::zero(), T::zero()),
        PrivacyModel::Jdp => {
            let lk = episode_log::<T>(config.episodes).powf(T::lit(1.5));
            let l1 = (T::lit(3.0) * sat / delta).ln();
            let l3 = (T::lit(3.0) * s * sat / delta).ln();
            (
                T::lit(3.0) * h * lk * l1 / eps,
                T::lit(6.0) * h * lk * l1 / eps,
                T::lit(3.0) * h * lk * l3 / eps,
            )
        }
        PrivacyModel::Ldp => {
            let l1 = (T::lit(6.0) * sat / delta).ln();
            let l3 = (T::lit(6.0) * s * sat / delta).ln();
            (
                T::lit(6.0) * h / eps * (k * l1).sqrt(),
                T::lit(12.0) * h / eps * l1.sqrt(),
                T::lit(6.0) * h / eps * (k * l3).sqrt(),
            )
        }
    };
    Envelopes { model: config.model, e1, e3, e2_factor, schedule: *schedule, scale: T::one() }
}

#[derive(Debug, Error, PartialEq)]
pub enum BankError {
    #[error("episode {got} fed out of order (expected {expected})")]
    Episode { expected: usize, got: usize },
    #[error("episode {got} exceeds the planned {episodes} episodes")]
    TooManyEpisodes { episodes: usize, got: usize },
    #[error("trajectory does not match the bank dimensions: {0}")]
    Shape(String),
    #[error(transparent)]
    Counter(#[from] CounterError),
}

enum Mechanism<T> {
    Exact,
    Tree { visits: Vec<TreeCounter<T>>, rewards: Vec<TreeCounter<T>>, transitions: Vec<TreeCounter<T>> },
    Local,
}

/// Released counts `N~`, `R~`, `N~(s')` for every cell, plus the exact counts
/// they privatize (kept for tests and diagnostics only).
pub struct CounterBank<T: Real> {
    config: PrivacyConfig<T>,
    schedule: TruncationSchedule<T>,
    noise: Box<dyn NoiseSource<T>>,
    mechanism: Mechanism<T>,
    visits: Vec<T>,
    rewards: Vec<T>,
    transitions: Vec<T>,
    shadow_visits: Vec<u64>,
    shadow_rewards: Vec<T>,
    shadow_transitions: Vec<u64>,
    episodes_seen: usize,
}

impl<T: Real> fmt::Debug for CounterBank<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CounterBank")
            .field("model", &self.config.model)
            .field("dims", &self.config.dims)
            .field("episodes_seen", &self.episodes_seen)
            .finish_non_exhaustive()
    }
}

impl<T: Real> CounterBank<T> {
    /// A bank drawing Laplace noise.
    pub fn new(config: PrivacyConfig<T>) -> Result<Self, HeavyError> {
        Self::with_noise(config, Box::new(LaplaceNoise))
    }

    pub fn with_noise(config: PrivacyConfig<T>, noise: Box<dyn NoiseSource<T>>) -> Result<Self, HeavyError> {
        let schedule = config.schedule()?;
        let d = config.dims;
        let n_sa = d.cells();
        let n_sas = n_sa * d.states;
        let k = config.episodes;
        let mechanism = match config.model {
            PrivacyModel::None => Mechanism::Exact,
            PrivacyModel::Jdp => Mechanism::Tree {
                visits: (0..n_sa).map(|_| TreeCounter::new(k)).collect(),
                rewards: (0..n_sa).map(|_| TreeCounter::new(k)).collect(),
                transitions: (0..n_sas).map(|_| TreeCounter::new(k)).collect(),
            },
            PrivacyModel::Ldp => Mechanism::Local,
        };
        Ok(Self {
            config,
            schedule,
            noise,
            mechanism,
            visits: vec![T::zero(); n_sa],
            rewards: vec![T::zero(); n_sa],
            transitions: vec![T::zero(); n_sas],
            shadow_visits: vec![0; n_sa],
            shadow_rewards: vec![T::zero(); n_sa],
            shadow_transitions: vec![0; n_sas],
            episodes_seen: 0,
        })
    }

    pub fn config(&self) -> &PrivacyConfig<T> {
        &self.config
    }

    pub fn schedule(&self) -> &TruncationSchedule<T> {
        &self.schedule
    }

    pub fn dims(&self) -> Dims {
        self.config.dims
    }

    pub fn episodes_seen(&self) -> usize {
        self.episodes_seen
    }

    /// Scale of the Laplace noise on a visit or transition entry.
    pub fn count_noise_scale(&self) -> T {
        let h = T::count(self.config.dims.horizon);
        match self.config.model {
            PrivacyModel::None => T::zero(),
            PrivacyModel::Jdp => T::lit(3.0) * h * episode_log::<T>(self.config.episodes) / self.config.epsilon,
            PrivacyModel::Ldp => T::lit(3.0) * h / self.config.epsilon,
        }
    }

    /// Scale of the Laplace noise on a reward entry in episode `k`.
    pub fn reward_noise_scale(&self, k: usize) -> T {
        let h = T::count(self.config.dims.horizon);
        let b = self.schedule.threshold(k);
        match self.config.model {
            PrivacyModel::None => T::zero(),
            PrivacyModel::Jdp => T::lit(6.0) * b * h * episode_log::<T>(self.config.episodes) / self.config.epsilon,
            PrivacyModel::Ldp => T::lit(6.0) * h * b / self.config.epsilon,
        }
    }

    /// Feeds episode `k` (1-based, in order) and refreshes every released count.
    pub fn update(&mut self, trajectory: &Trajectory<T>, k: usize, rng: &mut dyn RngCore) -> Result<(), BankError> {
        if k != self.episodes_seen + 1 {
            return Err(BankError::Episode { expected: self.episodes_seen + 1, got: k });
        }
        if k > self.config.episodes {
            return Err(BankError::TooManyEpisodes { episodes: self.config.episodes, got: k });
        }
        let d = self.config.dims;
        let mut visit_entry = vec![T::zero(); d.cells()];
        let mut reward_entry = vec![T::zero(); d.cells()];
        let mut transition_entry = vec![T::zero(); d.cells() * d.states];
        for step in &trajectory.steps {
            if step.h >= d.horizon || step.state >= d.states || step.action >= d.actions || step.next_state >= d.states {
                return Err(BankError::Shape(format!(
                    "step (h={}, s={}, a={}, next={}) outside S={}, A={}, H={}",
                    step.h, step.state, step.action, step.next_state, d.states, d.actions, d.horizon
                )));
            }
            let i = d.hsa(step.h, step.state, step.action);
            let before = self.shadow_visits[i] as usize;
            let entry = truncate_for_stream(step.reward, self.schedule.threshold(before));
            visit_entry[i] = visit_entry[i] + T::one();
            reward_entry[i] = reward_entry[i] + entry;
            transition_entry[d.hsas(step.h, step.state, step.action, step.next_state)] =
                transition_entry[d.hsas(step.h, step.state, step.action, step.next_state)] + T::one();
            self.shadow_visits[i] += 1;
            self.shadow_rewards[i] = self.shadow_rewards[i] + entry;
            self.shadow_transitions[d.hsas(step.h, step.state, step.action, step.next_state)] += 1;
        }
        match self.config.model {
            PrivacyModel::None => {
                for (i, &n) in self.shadow_visits.iter().enumerate() {
                    self.visits[i] = T::lit(n as f64);
                }
                self.rewards.clone_from(&self.shadow_rewards);
                for (i, &n) in self.shadow_transitions.iter().enumerate() {
                    self.transitions[i] = T::lit(n as f64);
                }
            }
            PrivacyModel::Jdp => self.central_update(k, &visit_entry, &reward_entry, &transition_entry, rng)?,
            PrivacyModel::Ldp => self.local_update(k, &visit_entry, &reward_entry, &transition_entry, rng),
        }
        self.episodes_seen = k;
        Ok(())
    }

    fn central_update(
        &mut self,
        k: usize,
        visit_entry: &[T],
        reward_entry: &[T],
        transition_entry: &[T],
        rng: &mut dyn RngCore,
    ) -> Result<(), BankError> {
        let count_scale = self.count_noise_scale();
        let reward_scale = self.reward_noise_scale(k);
        let d = self.config.dims;
        let Mechanism::Tree { visits, rewards, transitions } = &mut self.mechanism else {
            unreachable!("central update on a non-tree bank");
        };
        let noise = self.noise.as_mut();
        for h in 0..d.horizon {
            for s in 0..d.states {
                for a in 0..d.actions {
                    let i = d.hsa(h, s, a);
                    let tag = NoiseTag { episode: k, counter: CounterId::Visit { h, s, a } };
                    self.visits[i] = visits[i].append(k, visit_entry[i], count_scale, noise, tag, rng)?;
                    let tag = NoiseTag { episode: k, counter: CounterId::Reward { h, s, a } };
                    self.rewards[i] = rewards[i].append(k, reward_entry[i], reward_scale, noise, tag, rng)?;
                    for next in 0..d.states {
                        let j = d.hsas(h, s, a, next);
                        let tag = NoiseTag { episode: k, counter: CounterId::Transition { h, s, a, next } };
                        self.transitions[j] =
                            transitions[j].append(k, transition_entry[j], count_scale, noise, tag, rng)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn local_update(
        &mut self,
        k: usize,
        visit_entry: &[T],
        reward_entry: &[T],
        transition_entry: &[T],
        rng: &mut dyn RngCore,
    ) {
        let count_scale = self.count_noise_scale();
        let reward_scale = self.reward_noise_scale(k);
        let d = self.config.dims;
        let noise = self.noise.as_mut();
        for h in 0..d.horizon {
            for s in 0..d.states {
                for a in 0..d.actions {
                    let i = d.hsa(h, s, a);
                    let tag = NoiseTag { episode: k, counter: CounterId::Visit { h, s, a } };
                    self.visits[i] = self.visits[i] + visit_entry[i] + noise.draw(count_scale, tag, rng);
                    let tag = NoiseTag { episode: k, counter: CounterId::Reward { h, s, a } };
                    self.rewards[i] = self.rewards[i] + reward_entry[i] + noise.draw(reward_scale, tag, rng);
                    for next in 0..d.states {
                        let j = d.hsas(h, s, a, next);
                        let tag = NoiseTag { episode: k, counter: CounterId::Transition { h, s, a, next } };
                        self.transitions[j] = self.transitions[j] + transition_entry[j] + noise.draw(count_scale, tag, rng);
                    }
                }
            }
        }
    }

    /// Released visit count `N~_h(s, a)`.
    pub fn visits(&self, h: usize, s: usize, a: usize) -> T {
        self.visits[self.config.dims.hsa(h, s, a)]
    }

    /// Released truncated reward sum `R~_h(s, a)`.
    pub fn rewards(&self, h: usize, s: usize, a: usize) -> T {
        self.rewards[self.config.dims.hsa(h, s, a)]
    }

    /// Released transition count `N~_h(s, a, s')`.
    pub fn transitions(&self, h: usize, s: usize, a: usize, next: usize) -> T {
        self.transitions[self.config.dims.hsas(h, s, a, next)]
    }

    pub fn released_visits(&self) -> &[T] {
        &self.visits
    }

    pub fn released_rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn released_transitions(&self) -> &[T] {
        &self.transitions
    }

    /// Exact visit count.
    pub fn shadow_visits(&self, h: usize, s: usize, a: usize) -> u64 {
        self.shadow_visits[self.config.dims.hsa(h, s, a)]
    }

    /// Exact sum of truncated rewards.
    pub fn shadow_rewards(&self, h: usize, s: usize, a: usize) -> T {
        self.shadow_rewards[self.config.dims.hsa(h, s, a)]
    }

    pub fn shadow_transitions(&self, h: usize, s: usize, a: usize, next: usize) -> u64 {
        self.shadow_transitions[self.config.dims.hsas(h, s, a, next)]
    }
}

/// Private empirical rewards and kernels, unclipped.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivateEstimates<T> {
    dims: Dims,
    rewards: Vec<T>,
    transitions: Vec<T>,
}

impl<T: Real> PrivateEstimates<T> {
    pub fn new(dims: Dims, rewards: Vec<T>, transitions: Vec<T>) -> Self {
        assert_eq!(rewards.len(), dims.cells());
        assert_eq!(transitions.len(), dims.cells() * dims.states);
        Self { dims, rewards, transitions }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> T {
        self.rewards[self.dims.hsa(h, s, a)]
    }

    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[T] {
        let start = self.dims.hsas(h, s, a, 0);
        &self.transitions[start..start + self.dims.states]
    }
}

/// `ratio(x, n, e1) = x / max(1, n + e1)`.
#[inline]
pub fn private_ratio<T: Real>(x: T, n: T, e1: T) -> T {
    x / (n + e1).max(T::one())
}

/// `r~ = R~ / max(1, N~ + E1)` and `P~(s') = N~(s') / max(1, N~ + E1)`.
pub fn private_estimates<T: Real>(bank: &CounterBank<T>, e1: T) -> PrivateEstimates<T> {
    let d = bank.dims();
    let mut rewards = Vec::with_capacity(d.cells());
    let mut transitions = Vec::with_capacity(d.cells() * d.states);
    for i in 0..d.cells() {
        let n = bank.visits[i];
        rewards.push(private_ratio(bank.rewards[i], n, e1));
        for next in 0..d.states {
            transitions.push(private_ratio(bank.transitions[i * d.states + next], n, e1));
        }
    }
    PrivateEstimates::new(d, rewards, transitions)
}
