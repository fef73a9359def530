//! Optimistic value-iteration and policy-optimization agents over private counts.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heavy::{episode_log, HeavyError, HeavyTailParams, TruncatedMeanBound};
use crate::mdp::{argmax_first, rollout, Dims, MdpSpec, Policy, Trajectory, ValueTables};
use crate::noise::{LaplaceNoise, NoiseSource};
use crate::privatizer::{
    error_envelopes, private_estimates, BankError, CounterBank, Envelopes, PrivacyConfig, PrivacyModel,
    PrivateEstimates,
};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Optimistic value iteration with a greedy policy.
    #[default]
    Vi,
    /// Optimistic policy evaluation plus exponential-weights policy updates.
    Po,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Vi => "vi",
            AgentKind::Po => "po",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vi" => Ok(AgentKind::Vi),
            "po" => Ok(AgentKind::Po),
            other => Err(format!("unknown agent `{other}` (expected vi or po)")),
        }
    }
}

/// Direction of the exponential-weights step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateSign {
    /// `pi * exp(+eta Q)`.
    #[default]
    Ascent,
    /// `pi * exp(-eta Q)`.
    Descent,
}

/// Everything the bonus formulas need.
#[derive(Clone, Debug)]
pub struct BonusParams<T> {
    pub model: PrivacyModel,
    pub agent: AgentKind,
    pub dims: Dims,
    pub episodes: usize,
    pub epsilon: T,
    pub delta: T,
    pub heavy: HeavyTailParams<T>,
    pub e1: T,
    pub e3: T,
    /// Envelope scaling, also applied to the privacy term of the reward bonus.
    pub envelope_scale: T,
    /// Multiplies every bonus component.
    pub scale: T,
    nonprivate: Option<TruncatedMeanBound<T>>,
}

impl<T: Real> BonusParams<T> {
    pub fn new(
        config: &PrivacyConfig<T>,
        agent: AgentKind,
        envelopes: &Envelopes<T>,
        scale: T,
    ) -> Result<Self, HeavyError> {
        let nonprivate = match config.model {
            PrivacyModel::None => Some(TruncatedMeanBound::new(config.schedule()?, config.episodes)),
            _ => None,
        };
        Ok(Self {
            model: config.model,
            agent,
            dims: config.dims,
            episodes: config.episodes,
            epsilon: config.epsilon,
            delta: config.delta,
            heavy: config.heavy,
            e1: envelopes.e1(),
            e3: envelopes.e3(),
            envelope_scale: envelopes.scale(),
            scale,
            nonprivate,
        })
    }

    fn sat(&self) -> T {
        T::count(self.dims.states * self.dims.actions) * T::count(self.dims.steps(self.episodes))
    }

    /// `max(n + E1, 1)`.
    pub fn effective_count(&self, n: T) -> T {
        (n + self.e1).max(T::one())
    }

    /// Reward bonus at private count `n`.
    pub fn reward_bonus(&self, n: T) -> T {
        let m = self.effective_count(n);
        let HeavyTailParams { v, u, tau } = self.heavy;
        let h = T::count(self.dims.horizon);
        let sat = self.sat();
        let lead = T::lit(2.0) * tau * self.e1 / m;
        let root = u.powf(T::one() / (T::one() + v));
        let expo = v / (T::one() + v);
        let raw = match self.model {
            PrivacyModel::None => match &self.nonprivate {
                Some(bound) => bound.at_real(m),
                None => T::zero(),
            },
            PrivacyModel::Jdp => {
                let lk = episode_log::<T>(self.episodes).powf(T::lit(1.5));
                let l = (T::lit(3.0) * sat / self.delta).ln();
                lead + T::lit(10.0) * root * (self.envelope_scale * h * lk * l / (self.epsilon * m)).powf(expo)
            }
            PrivacyModel::Ldp => {
                let l = (T::lit(6.0) * sat / self.delta).ln();
                lead + T::lit(16.0) * root * (self.envelope_scale * h * l / (self.epsilon * m.sqrt())).powf(expo)
            }
        };
        raw * self.scale
    }

    /// Value-transition bonus used by value iteration.
    pub fn value_bonus(&self, n: T) -> T {
        let m = self.effective_count(n);
        let tau_h = self.heavy.tau * T::count(self.dims.horizon);
        let s = T::count(self.dims.states);
        let l = (T::lit(4.0) * self.sat() / self.delta).ln();
        let raw = tau_h * (T::lit(2.0) * l / m).sqrt() + tau_h * (T::lit(2.0) * self.e1 + s * self.e3) / m;
        raw * self.scale
    }

    /// L1 transition bonus used by policy optimization.
    pub fn transition_bonus(&self, n: T) -> T {
        let m = self.effective_count(n);
        let s = T::count(self.dims.states);
        let at = T::count(self.dims.actions) * T::count(self.dims.steps(self.episodes));
        let l = (T::lit(6.0) * at / self.delta).ln();
        let raw = (T::lit(4.0) * s * l).sqrt() / m.sqrt() + (s * self.e3 + T::lit(2.0) * self.e1) / m;
        raw * self.scale
    }

    /// The total bonus added to `Q~` for this agent kind.
    pub fn total(&self, n: T) -> T {
        match self.agent {
            AgentKind::Vi => {
                let (r, pv) = bonus_vi(self, n);
                r + pv
            }
            AgentKind::Po => {
                let (r, p) = bonus_po(self, n);
                r + self.heavy.tau * T::count(self.dims.horizon) * p
            }
        }
    }
}

/// `(beta_r, beta_pv)` at private count `n`.
pub fn bonus_vi<T: Real>(params: &BonusParams<T>, n: T) -> (T, T) {
    (params.reward_bonus(n), params.value_bonus(n))
}

/// `(beta_r, beta_p)` at private count `n`.
pub fn bonus_po<T: Real>(params: &BonusParams<T>, n: T) -> (T, T) {
    (params.reward_bonus(n), params.transition_bonus(n))
}

/// `beta_r + tau H beta_p`.
pub fn po_composite<T: Real>(params: &BonusParams<T>, n: T) -> T {
    let (r, p) = bonus_po(params, n);
    r + params.heavy.tau * T::count(params.dims.horizon) * p
}

fn clipped_backup<T: Real>(
    est: &PrivateEstimates<T>,
    bonus: &[T],
    next: &[T],
    h: usize,
    s: usize,
    a: usize,
    cap: T,
) -> T {
    let d = est.dims();
    let mut q = est.reward(h, s, a) + bonus[d.hsa(h, s, a)];
    for (p, v) in est.transition_row(h, s, a).iter().zip(next) {
        q = q + *p * *v;
    }
    q.max(-cap).min(cap)
}

/// Optimistic backward pass; `bonus` is indexed by (h, s, a). Returns the
/// tables and the greedy policy (ties to the lowest action).
pub fn vi_plan<T: Real>(est: &PrivateEstimates<T>, bonus: &[T], tau: T) -> (ValueTables<T>, Policy<T>) {
    let d = est.dims();
    assert_eq!(bonus.len(), d.cells());
    let mut out = ValueTables::zeros(d);
    for h in (0..d.horizon).rev() {
        let cap = T::count(d.horizon - h) * tau;
        let next = out.v_row(h + 1).to_vec();
        for s in 0..d.states {
            for a in 0..d.actions {
                let q = clipped_backup(est, bonus, &next, h, s, a, cap);
                out.set_q(h, s, a, q);
            }
            let best = *out.q(h, s, argmax_first(out.q_row(h, s)));
            out.set_v(h, s, best);
        }
    }
    let policy = Policy::greedy(&out);
    (out, policy)
}

/// Clipped optimistic evaluation of `policy`.
pub fn po_evaluate<T: Real>(est: &PrivateEstimates<T>, bonus: &[T], tau: T, policy: &Policy<T>) -> ValueTables<T> {
    let d = est.dims();
    assert_eq!(bonus.len(), d.cells());
    assert_eq!(policy.dims(), d);
    let mut out = ValueTables::zeros(d);
    for h in (0..d.horizon).rev() {
        let cap = T::count(d.horizon - h) * tau;
        let next = out.v_row(h + 1).to_vec();
        for s in 0..d.states {
            let mut v = T::zero();
            for a in 0..d.actions {
                let q = clipped_backup(est, bonus, &next, h, s, a, cap);
                out.set_q(h, s, a, q);
                v = v + policy.row(h, s)[a] * q;
            }
            out.set_v(h, s, v);
        }
    }
    out
}

/// Exponential-weights step `pi'(a|s) ~ pi(a|s) exp(+- eta Q(s, a))`.
pub fn po_improve<T: Real>(policy: &Policy<T>, values: &ValueTables<T>, eta: T, sign: UpdateSign) -> Policy<T> {
    let d = policy.dims();
    let dir = match sign {
        UpdateSign::Ascent => eta,
        UpdateSign::Descent => -eta,
    };
    let mut out = policy.clone();
    let mut logits = vec![T::zero(); d.actions];
    for h in 0..d.horizon {
        for s in 0..d.states {
            let q = values.q_row(h, s);
            for (l, x) in logits.iter_mut().zip(q) {
                *l = dir * *x;
            }
            let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let row = out.row_mut(h, s);
            let mut total = T::zero();
            for (p, l) in row.iter_mut().zip(&logits) {
                *p = *p * (*l - top).exp();
                total = total + *p;
            }
            for p in row.iter_mut() {
                *p = *p / total;
            }
        }
    }
    out
}

/// `sqrt(2 ln A / (tau^2 H^2 K))`.
pub fn default_learning_rate<T: Real>(actions: usize, tau: T, horizon: usize, episodes: usize) -> T {
    let denom = tau * tau * T::count(horizon * horizon) * T::count(episodes);
    (T::lit(2.0) * T::count(actions).ln() / denom).sqrt()
}

/// Knobs that do not come from the problem itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentOptions<T> {
    pub kind: AgentKind,
    pub bonus_scale: T,
    /// Multiplies `E1`, `E2`, `E3` as used by the estimates and bonuses; the
    /// injected noise is unaffected.
    pub envelope_scale: T,
    /// Policy-optimization step size; `None` picks the default.
    pub eta: Option<T>,
    pub sign: UpdateSign,
}

impl<T: Real> AgentOptions<T> {
    pub fn new(kind: AgentKind) -> Self {
        Self { kind, bonus_scale: T::one(), envelope_scale: T::one(), eta: None, sign: UpdateSign::Ascent }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Heavy(#[from] HeavyError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("{0}")]
    Invalid(String),
}

/// Policy, private tables, counters and bonus state of one run.
#[derive(Debug)]
pub struct AgentState<T: Real> {
    options: AgentOptions<T>,
    tau: T,
    eta: T,
    envelopes: Envelopes<T>,
    bonus: BonusParams<T>,
    bank: CounterBank<T>,
    policy: Policy<T>,
    played: Policy<T>,
    values: ValueTables<T>,
    episode: usize,
}

impl<T: Real> AgentState<T> {
    /// Agent drawing Laplace noise.
    pub fn new(config: PrivacyConfig<T>, options: AgentOptions<T>) -> Result<Self, AgentError> {
        Self::with_noise(config, options, Box::new(LaplaceNoise))
    }

    pub fn with_noise(
        config: PrivacyConfig<T>,
        options: AgentOptions<T>,
        noise: Box<dyn NoiseSource<T>>,
    ) -> Result<Self, AgentError> {
        if !(options.bonus_scale >= T::zero()) {
            return Err(AgentError::Invalid(format!("bonus_scale must be non-negative, got {}", options.bonus_scale)));
        }
        if !(options.envelope_scale >= T::zero()) {
            return Err(AgentError::Invalid(format!(
                "envelope_scale must be non-negative, got {}",
                options.envelope_scale
            )));
        }
        let tau = config.heavy.tau;
        let eta = match options.eta {
            Some(eta) if !(eta >= T::zero()) => {
                return Err(AgentError::Invalid(format!("eta must be non-negative, got {eta}")));
            }
            Some(eta) => eta,
            None => default_learning_rate(config.dims.actions, tau, config.dims.horizon, config.episodes),
        };
        let schedule = config.schedule()?;
        let envelopes = error_envelopes(&config, &schedule).scaled(options.envelope_scale);
        let bonus = BonusParams::new(&config, options.kind, &envelopes, options.bonus_scale)?;
        let bank = CounterBank::with_noise(config, noise)?;
        let policy = Policy::uniform(config.dims);
        Ok(Self {
            options,
            tau,
            eta,
            envelopes,
            bonus,
            bank,
            played: policy.clone(),
            policy,
            values: ValueTables::zeros(config.dims),
            episode: 0,
        })
    }

    pub fn options(&self) -> &AgentOptions<T> {
        &self.options
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn envelopes(&self) -> &Envelopes<T> {
        &self.envelopes
    }

    pub fn bonus_params(&self) -> &BonusParams<T> {
        &self.bonus
    }

    pub fn bank(&self) -> &CounterBank<T> {
        &self.bank
    }

    /// Policy for the next episode.
    pub fn policy(&self) -> &Policy<T> {
        &self.policy
    }

    /// Policy executed in the latest episode.
    pub fn played_policy(&self) -> &Policy<T> {
        &self.played
    }

    /// `Q~`, `V~` computed for the latest episode.
    pub fn values(&self) -> &ValueTables<T> {
        &self.values
    }

    /// Episodes completed.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Per-cell bonuses from the current private counts.
    pub fn bonuses(&self) -> Vec<T> {
        self.bank.released_visits().iter().map(|&n| self.bonus.total(n)).collect()
    }

    /// Current private estimates.
    pub fn estimates(&self) -> PrivateEstimates<T> {
        private_estimates(&self.bank, self.envelopes.e1())
    }

    /// Plans (or evaluates), plays one episode of `env`, feeds it to the
    /// counters and, for policy optimization, takes the policy step.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, env: &MdpSpec<T>, rng: &mut R) -> Result<Trajectory<T>, AgentError> {
        if env.dims() != self.bank.dims() {
            return Err(AgentError::Invalid(format!(
                "environment dimensions {:?} differ from the agent's {:?}",
                env.dims(),
                self.bank.dims()
            )));
        }
        let k = self.episode + 1;
        let est = self.estimates();
        let bonus = self.bonuses();
        match self.options.kind {
            AgentKind::Vi => {
                let (values, policy) = vi_plan(&est, &bonus, self.tau);
                self.values = values;
                self.policy = policy;
            }
            AgentKind::Po => {
                self.values = po_evaluate(&est, &bonus, self.tau, &self.policy);
            }
        }
        self.played.clone_from(&self.policy);
        let trajectory = rollout(env, &self.played, rng);
        let mut core = RngAdapter(rng);
        self.bank.update(&trajectory, k, &mut core)?;
        if self.options.kind == AgentKind::Po {
            self.policy = po_improve(&self.policy, &self.values, self.eta, self.options.sign);
        }
        self.episode = k;
        Ok(trajectory)
    }
}

/// Lets a possibly unsized `Rng` stand in where `&mut dyn RngCore` is expected.
struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heavy::RewardDist;
    use crate::mdp::{exact_optimal_values, policy_value};
    use crate::noise::ZeroNoise;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit_estimates(means: &[f64]) -> PrivateEstimates<f64> {
        let d = Dims::new(1, means.len(), 1).unwrap();
        PrivateEstimates::new(d, means.to_vec(), vec![1.0; means.len()])
    }

    #[test]
    fn zero_inputs_plan_to_zero() {
        let est = bandit_estimates(&[0.0, 0.0, 0.0]);
        let (v, pi) = vi_plan(&est, &[0.0; 3], 1.0);
        assert_eq!(v.q_row(0, 0), &[0.0, 0.0, 0.0]);
        assert_eq!(pi.row(0, 0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn bandit_backup_and_greedy() {
        let est = bandit_estimates(&[0.2, 0.7]);
        let (v, pi) = vi_plan(&est, &[0.1, 0.0], 1.0);
        assert!((v.q(0, 0, 0) - 0.3).abs() < 1e-15);
        assert_eq!(*v.q(0, 0, 1), 0.7);
        assert_eq!(pi.row(0, 0), &[0.0, 1.0]);
    }

    #[test]
    fn clipping_caps_at_remaining_horizon() {
        let d = Dims::new(1, 1, 3).unwrap();
        let est = PrivateEstimates::new(d, vec![0.9; 3], vec![1.0; 3]);
        let (v, _) = vi_plan(&est, &[5.0; 3], 0.5);
        assert_eq!(*v.q(0, 0, 0), 1.5);
        assert_eq!(*v.q(1, 0, 0), 1.0);
        assert_eq!(*v.q(2, 0, 0), 0.5);
        let (v, _) = vi_plan(&est, &[-50.0; 3], 0.5);
        assert_eq!(*v.q(2, 0, 0), -0.5);
    }

    #[test]
    fn evaluation_weights_by_policy() {
        let est = bandit_estimates(&[0.0, 1.0]);
        let d = est.dims();
        let v = po_evaluate(&est, &[0.0, 0.0], 1.0, &Policy::uniform(d));
        assert_eq!(*v.v(0, 0), 0.5);
        let v = po_evaluate(&est, &[0.0, 0.0], 1.0, &Policy::deterministic(d, &[1]));
        assert_eq!(*v.v(0, 0), 1.0);
    }

    #[test]
    fn exact_evaluation_matches_policy_value() {
        let d = Dims::new(2, 2, 3).unwrap();
        let p = HeavyTailParams::new(1.0, 1.0, 1.0).unwrap();
        let trans = vec![
            0.3, 0.7, 1.0, 0.0, 0.5, 0.5, 0.1, 0.9, //
            0.2, 0.8, 0.6, 0.4, 0.0, 1.0, 0.9, 0.1, //
            0.5, 0.5, 0.5, 0.5, 0.25, 0.75, 1.0, 0.0,
        ];
        let means = [0.1, 0.4, -0.2, 0.9, 0.3, 0.3, 0.0, 0.8, 0.5, -0.5, 0.2, 0.6];
        let rewards = means.iter().map(|&m| RewardDist::constant(m, p)).collect();
        let mdp = MdpSpec::new(d, trans.clone(), rewards, vec![0.4, 0.6]).unwrap();
        let est = PrivateEstimates::new(d, means.to_vec(), trans);
        let pi = Policy::new(d, vec![0.2, 0.8, 0.5, 0.5, 1.0, 0.0, 0.3, 0.7, 0.6, 0.4, 0.0, 1.0], 1e-12).unwrap();
        let ours = po_evaluate(&est, &[0.0; 12], 10.0, &pi);
        let exact = policy_value::<f64>(mdp.model(), &pi);
        for (a, b) in ours.v_all().iter().zip(exact.v_all()) {
            assert!((a - b).abs() < 1e-10);
        }
        // and value iteration with the same inputs is the exact optimum
        let (vi, _) = vi_plan(&est, &[0.0; 12], 10.0);
        let star = exact_optimal_values::<f64>(mdp.model());
        for (a, b) in vi.v_all().iter().zip(star.v_all()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn one_row_values(q: &[f64]) -> ValueTables<f64> {
        let d = Dims::new(1, q.len(), 1).unwrap();
        let mut v = ValueTables::zeros(d);
        for (a, x) in q.iter().enumerate() {
            v.set_q(0, 0, a, *x);
        }
        v
    }

    #[test]
    fn exponential_weights_hand_value() {
        let pi = Policy::uniform(Dims::new(1, 2, 1).unwrap());
        let out = po_improve(&pi, &one_row_values(&[1.0, 0.0]), 2f64.ln(), UpdateSign::Ascent);
        assert!((out.row(0, 0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out.row(0, 0)[1] - 1.0 / 3.0).abs() < 1e-15);
        let out = po_improve(&pi, &one_row_values(&[1.0, 0.0]), 2f64.ln(), UpdateSign::Descent);
        assert!((out.row(0, 0)[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_weights_trivial_cases() {
        let pi = Policy::new(Dims::new(1, 3, 1).unwrap(), vec![0.2, 0.5, 0.3], 1e-12).unwrap();
        let same = po_improve(&pi, &one_row_values(&[4.0, 4.0, 4.0]), 0.7, UpdateSign::Ascent);
        let still = po_improve(&pi, &one_row_values(&[1.0, -3.0, 9.0]), 0.0, UpdateSign::Ascent);
        for (a, b) in same.row(0, 0).iter().zip(pi.row(0, 0)) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(still.row(0, 0), pi.row(0, 0));
    }

    proptest! {
        #[test]
        fn improved_rows_stay_on_simplex(q in prop::collection::vec(-1e3f64..1e3, 4), eta in 0.0f64..10.0) {
            let pi = Policy::uniform(Dims::new(1, 4, 1).unwrap());
            let out = po_improve(&pi, &one_row_values(&q), eta, UpdateSign::Ascent);
            let row = out.row(0, 0);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn constant_shift_keeps_decisions(q in prop::collection::vec(-50.0f64..50.0, 3), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            prop_assert_eq!(argmax_first(&q), argmax_first(&shifted));
            let pi = Policy::new(Dims::new(1, 3, 1).unwrap(), vec![0.5, 0.25, 0.25], 1e-12).unwrap();
            let a = po_improve(&pi, &one_row_values(&q), 0.3, UpdateSign::Ascent);
            let b = po_improve(&pi, &one_row_values(&shifted), 0.3, UpdateSign::Ascent);
            for (x, y) in a.row(0, 0).iter().zip(b.row(0, 0)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    fn params(model: PrivacyModel) -> BonusParams<f64> {
        let c = PrivacyConfig::new(
            model,
            1.0,
            0.1,
            Dims::new(3, 2, 4).unwrap(),
            100,
            HeavyTailParams::new(0.5, 2.0, 1.0).unwrap(),
        )
        .unwrap();
        let e = error_envelopes(&c, &c.schedule().unwrap());
        BonusParams::new(&c, AgentKind::Vi, &e, 1.0).unwrap()
    }

    #[test]
    fn bonuses_are_positive_and_non_increasing() {
        for model in [PrivacyModel::None, PrivacyModel::Jdp, PrivacyModel::Ldp] {
            let p = params(model);
            let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
            for i in 0..400 {
                let n = i as f64 * 0.5;
                let (r, pv) = bonus_vi(&p, n);
                let (_, bp) = bonus_po(&p, n);
                assert!(r >= 0.0 && pv >= 0.0 && bp >= 0.0);
                assert!(r <= last.0 + 1e-12 && pv <= last.1 + 1e-12 && bp <= last.2 + 1e-12, "{model:?} at {n}");
                last = (r, pv, bp);
            }
        }
    }

    #[test]
    fn bonuses_vanish_without_envelopes() {
        let mut p = params(PrivacyModel::Jdp);
        p.e1 = 0.0;
        p.e3 = 0.0;
        let (r, pv) = bonus_vi(&p, 1e20);
        let (_, bp) = bonus_po(&p, 1e20);
        assert!(r < 1e-3 && pv < 1e-3 && bp < 1e-3);
    }

    #[test]
    fn bonus_scale_multiplies_every_component() {
        let mut p = params(PrivacyModel::Ldp);
        let base = (bonus_vi(&p, 7.0), bonus_po(&p, 7.0));
        p.scale = 3.0;
        let scaled = (bonus_vi(&p, 7.0), bonus_po(&p, 7.0));
        assert!((scaled.0 .0 - 3.0 * base.0 .0).abs() < 1e-9);
        assert!((scaled.0 .1 - 3.0 * base.0 .1).abs() < 1e-9);
        assert!((scaled.1 .1 - 3.0 * base.1 .1).abs() < 1e-9);
    }

    fn chain() -> MdpSpec<f64> {
        let d = Dims::new(2, 2, 2).unwrap();
        let p = HeavyTailParams::new(1.0, 1.0, 1.0).unwrap();
        let trans = vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.1, 0.9, 0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.1, 0.9];
        let rewards = (0..8).map(|i| RewardDist::point_mass(0.1 * (i % 4) as f64, 1.0, p)).collect();
        MdpSpec::new(d, trans, rewards, vec![1.0, 0.0]).unwrap()
    }

    fn config(model: PrivacyModel, k: usize) -> PrivacyConfig<f64> {
        PrivacyConfig::new(model, 1.0, 0.1, Dims::new(2, 2, 2).unwrap(), k, HeavyTailParams::new(1.0, 1.0, 1.0).unwrap())
            .unwrap()
    }

    #[test]
    fn first_episode_is_fully_optimistic() {
        for kind in [AgentKind::Vi, AgentKind::Po] {
            let mut agent = AgentState::new(config(PrivacyModel::Jdp, 20), AgentOptions::new(kind)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            agent.run_episode(&chain(), &mut rng).unwrap();
            for h in 0..2 {
                for s in 0..2 {
                    for a in 0..2 {
                        assert_eq!(*agent.values().q(h, s, a), (2 - h) as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn runs_are_reproducible_and_keep_invariants() {
        for kind in [AgentKind::Vi, AgentKind::Po] {
            for model in [PrivacyModel::None, PrivacyModel::Jdp, PrivacyModel::Ldp] {
                let run = || {
                    let mut agent = AgentState::new(config(model, 60), AgentOptions::new(kind)).unwrap();
                    let mut rng = ChaCha8Rng::seed_from_u64(42);
                    let mut out = vec![];
                    for _ in 0..60 {
                        out.push(agent.run_episode(&chain(), &mut rng).unwrap());
                        let v = agent.values();
                        for h in 0..2 {
                            for s in 0..2 {
                                for a in 0..2 {
                                    assert!(v.q(h, s, a).abs() <= (2 - h) as f64);
                                }
                                let row = agent.policy().row(h, s);
                                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                                if kind == AgentKind::Vi {
                                    assert!(row.iter().all(|p| *p == 0.0 || *p == 1.0));
                                }
                            }
                        }
                    }
                    assert_eq!(agent.episode(), 60);
                    out
                };
                assert_eq!(run(), run());
            }
        }
    }

    #[test]
    fn po_steps_after_playing() {
        let mut agent = AgentState::with_noise(
            config(PrivacyModel::None, 5),
            AgentOptions { eta: Some(1.0), ..AgentOptions::new(AgentKind::Po) },
            Box::new(ZeroNoise),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        agent.run_episode(&chain(), &mut rng).unwrap();
        // the first episode is played uniformly; the step uses that episode's Q~
        assert_eq!(agent.played_policy(), &Policy::uniform(Dims::new(2, 2, 2).unwrap()));
        let expected = po_improve(agent.played_policy(), agent.values(), 1.0, UpdateSign::Ascent);
        assert_eq!(agent.policy(), &expected);
    }

    #[test]
    fn default_eta() {
        let eta: f64 = default_learning_rate(2, 1.0, 20, 20_000);
        assert!((eta - (2.0 * 2f64.ln() / (400.0 * 20_000.0)).sqrt()).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_options() {
        let bad = AgentOptions { bonus_scale: -1.0, ..AgentOptions::new(AgentKind::Vi) };
        assert!(AgentState::new(config(PrivacyModel::None, 5), bad).is_err());
        let mut agent = AgentState::new(config(PrivacyModel::None, 5), AgentOptions::new(AgentKind::Vi)).unwrap();
        let other = MdpSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            vec![1.0],
            vec![RewardDist::constant(0.0, HeavyTailParams::new(1.0, 1.0, 1.0).unwrap())],
            vec![1.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(agent.run_episode(&other, &mut rng).is_err());
    }
}
