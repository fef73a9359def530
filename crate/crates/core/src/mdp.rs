//! Finite-horizon tabular MDPs: representation, exact dynamic programming,
//! policy evaluation, rollouts and regret accounting.
//!
//! Step indices are 0-based throughout (`h in 0..H`); value tables carry an
//! extra terminal row `h = H` that is identically zero.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heavy::RewardDist;
use crate::scalar::{partial_max, Real, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("dimensions must be positive (S={states}, A={actions}, H={horizon})")]
    EmptyDimension { states: usize, actions: usize, horizon: usize },
    #[error("{what}: expected {expected} entries, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("transition row (h={h}, s={s}, a={a}) is not a probability vector: {detail}")]
    TransitionRow { h: usize, s: usize, a: usize, detail: String },
    #[error("initial distribution is not a probability vector: {0}")]
    InitialDist(String),
    #[error("policy row (h={h}, s={s}) is not on the simplex: {detail}")]
    PolicyRow { h: usize, s: usize, detail: String },
    #[error("reward at (h={h}, s={s}, a={a}): {detail}")]
    Reward { h: usize, s: usize, a: usize, detail: String },
    #[error("malformed MDP document: {0}")]
    Document(String),
}

/// State/action/horizon sizes plus flat-index helpers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self, MdpError> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(MdpError::EmptyDimension { states, actions, horizon });
        }
        Ok(Self { states, actions, horizon })
    }

    #[inline]
    pub fn hs(&self, h: usize, s: usize) -> usize {
        h * self.states + s
    }

    #[inline]
    pub fn hsa(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn hsas(&self, h: usize, s: usize, a: usize, next: usize) -> usize {
        self.hsa(h, s, a) * self.states + next
    }

    /// Number of (h, s, a) cells.
    #[inline]
    pub fn cells(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    /// Total number of steps `T = K * H` over `episodes` episodes.
    #[inline]
    pub fn steps(&self, episodes: usize) -> usize {
        episodes * self.horizon
    }
}

fn abs_diff<S: Scalar>(a: S, b: S) -> S {
    if a > b {
        a - b
    } else {
        b - a
    }
}

fn check_distribution<S: Scalar>(row: &[S], tol: &S) -> Result<(), String> {
    let zero = S::zero();
    let mut sum = S::zero();
    for (i, p) in row.iter().enumerate() {
        // also rejects NaN
        if !(p.clone() >= zero) {
            return Err(format!("entry {i} is {p:?}"));
        }
        sum = sum + p.clone();
    }
    if abs_diff(sum.clone(), S::one()) > *tol {
        return Err(format!("sums to {sum:?}"));
    }
    Ok(())
}

/// The exact part of an MDP: transition kernels, mean rewards and the initial
/// state distribution. Dynamic programming consumes only this.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel<S> {
    dims: Dims,
    transitions: Vec<S>,
    mean_rewards: Vec<S>,
    initial: Vec<S>,
}

impl<S: Scalar> TabularModel<S> {
    /// `transitions` is indexed by [`Dims::hsas`], `mean_rewards` by [`Dims::hsa`].
    /// Rows must sum to one within `tol`.
    pub fn new(
        dims: Dims,
        transitions: Vec<S>,
        mean_rewards: Vec<S>,
        initial: Vec<S>,
        tol: S,
    ) -> Result<Self, MdpError> {
        let cells = dims.cells();
        if transitions.len() != cells * dims.states {
            return Err(MdpError::Shape {
                what: "transitions",
                expected: cells * dims.states,
                got: transitions.len(),
            });
        }
        if mean_rewards.len() != cells {
            return Err(MdpError::Shape { what: "mean rewards", expected: cells, got: mean_rewards.len() });
        }
        if initial.len() != dims.states {
            return Err(MdpError::Shape { what: "initial distribution", expected: dims.states, got: initial.len() });
        }
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    let start = dims.hsas(h, s, a, 0);
                    check_distribution(&transitions[start..start + dims.states], &tol)
                        .map_err(|detail| MdpError::TransitionRow { h, s, a, detail })?;
                }
            }
        }
        check_distribution(&initial, &tol).map_err(MdpError::InitialDist)?;
        Ok(Self { dims, transitions, mean_rewards, initial })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `P_h(. | s, a)`.
    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[S] {
        let start = self.dims.hsas(h, s, a, 0);
        &self.transitions[start..start + self.dims.states]
    }

    #[inline]
    pub fn mean_reward(&self, h: usize, s: usize, a: usize) -> &S {
        &self.mean_rewards[self.dims.hsa(h, s, a)]
    }

    pub fn initial(&self) -> &[S] {
        &self.initial
    }

    pub fn transitions(&self) -> &[S] {
        &self.transitions
    }

    pub fn mean_rewards(&self) -> &[S] {
        &self.mean_rewards
    }

    /// `r_h(s,a) + sum_s' P_h(s'|s,a) V_{h+1}(s')`.
    fn backup(&self, next: &[S], h: usize, s: usize, a: usize) -> S {
        let mut acc = self.mean_reward(h, s, a).clone();
        for (p, v) in self.transition_row(h, s, a).iter().zip(next) {
            acc = acc + p.clone() * v.clone();
        }
        acc
    }
}

/// `V` indexed by (h, s) with a zero terminal row, and `Q` indexed by (h, s, a).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables<S> {
    dims: Dims,
    v: Vec<S>,
    q: Vec<S>,
}

impl<S: Scalar> ValueTables<S> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            v: vec![S::zero(); (dims.horizon + 1) * dims.states],
            q: vec![S::zero(); dims.cells()],
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> &S {
        &self.v[self.dims.hs(h, s)]
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> &S {
        &self.q[self.dims.hsa(h, s, a)]
    }

    /// `V_h` over all states; `h == H` is the zero terminal row.
    #[inline]
    pub fn v_row(&self, h: usize) -> &[S] {
        let start = self.dims.hs(h, 0);
        &self.v[start..start + self.dims.states]
    }

    #[inline]
    pub fn q_row(&self, h: usize, s: usize) -> &[S] {
        let start = self.dims.hsa(h, s, 0);
        &self.q[start..start + self.dims.actions]
    }

    #[inline]
    pub fn set_v(&mut self, h: usize, s: usize, value: S) {
        let i = self.dims.hs(h, s);
        self.v[i] = value;
    }

    #[inline]
    pub fn set_q(&mut self, h: usize, s: usize, a: usize, value: S) {
        let i = self.dims.hsa(h, s, a);
        self.q[i] = value;
    }

    pub fn v_all(&self) -> &[S] {
        &self.v
    }

    pub fn q_all(&self) -> &[S] {
        &self.q
    }
}

/// Step-indexed stochastic policy `pi_h(a|s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy<S> {
    dims: Dims,
    probs: Vec<S>,
}

impl<S: Scalar> Policy<S> {
    /// Validates every (h, s) row against the simplex within `tol`.
    pub fn new(dims: Dims, probs: Vec<S>, tol: S) -> Result<Self, MdpError> {
        if probs.len() != dims.cells() {
            return Err(MdpError::Shape { what: "policy", expected: dims.cells(), got: probs.len() });
        }
        let policy = Self { dims, probs };
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                check_distribution(policy.row(h, s), &tol).map_err(|detail| MdpError::PolicyRow { h, s, detail })?;
            }
        }
        Ok(policy)
    }

    pub fn uniform(dims: Dims) -> Self {
        let mut count = S::zero();
        for _ in 0..dims.actions {
            count = count + S::one();
        }
        let p = S::one() / count;
        Self { dims, probs: vec![p; dims.cells()] }
    }

    /// One-hot policy; `actions` is indexed by (h, s).
    pub fn deterministic(dims: Dims, actions: &[usize]) -> Self {
        assert_eq!(actions.len(), dims.horizon * dims.states, "one action per (h, s)");
        let mut probs = vec![S::zero(); dims.cells()];
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                let a = actions[dims.hs(h, s)];
                assert!(a < dims.actions, "action {a} out of range");
                probs[dims.hsa(h, s, a)] = S::one();
            }
        }
        Self { dims, probs }
    }

    /// Greedy with respect to `Q`, ties to the lowest action index.
    pub fn greedy(values: &ValueTables<S>) -> Self {
        let dims = values.dims();
        let mut actions = Vec::with_capacity(dims.horizon * dims.states);
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                actions.push(argmax_first(values.q_row(h, s)));
            }
        }
        Self::deterministic(dims, &actions)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[S] {
        let start = self.dims.hsa(h, s, 0);
        &self.probs[start..start + self.dims.actions]
    }

    #[inline]
    pub fn row_mut(&mut self, h: usize, s: usize) -> &mut [S] {
        let start = self.dims.hsa(h, s, 0);
        &mut self.probs[start..start + self.dims.actions]
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }
}

/// Index of the first maximal entry.
pub fn argmax_first<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in row.iter().enumerate().skip(1) {
        if *x > row[best] {
            best = i;
        }
    }
    best
}

/// Backward induction on the Bellman optimality equation with exact means.
pub fn exact_optimal_values<S: Scalar>(model: &TabularModel<S>) -> ValueTables<S> {
    let dims = model.dims();
    let mut out = ValueTables::zeros(dims);
    for h in (0..dims.horizon).rev() {
        let next = out.v_row(h + 1).to_vec();
        for s in 0..dims.states {
            let mut best: Option<S> = None;
            for a in 0..dims.actions {
                let q = model.backup(&next, h, s, a);
                best = Some(match best {
                    None => q.clone(),
                    Some(b) => partial_max(b, q.clone()),
                });
                out.set_q(h, s, a, q);
            }
            out.set_v(h, s, best.expect("at least one action"));
        }
    }
    out
}

/// Bellman expectation recursion for a fixed policy.
pub fn policy_value<S: Scalar>(model: &TabularModel<S>, policy: &Policy<S>) -> ValueTables<S> {
    let dims = model.dims();
    assert_eq!(dims, policy.dims(), "policy and model dimensions differ");
    let mut out = ValueTables::zeros(dims);
    for h in (0..dims.horizon).rev() {
        let next = out.v_row(h + 1).to_vec();
        for s in 0..dims.states {
            let mut v = S::zero();
            for (a, p) in policy.row(h, s).iter().enumerate() {
                let q = model.backup(&next, h, s, a);
                v = v + p.clone() * q.clone();
                out.set_q(h, s, a, q);
            }
            out.set_v(h, s, v);
        }
    }
    out
}

/// `sum_s rho(s) V_0(s)`.
pub fn initial_value<S: Scalar>(model: &TabularModel<S>, values: &ValueTables<S>) -> S {
    model
        .initial()
        .iter()
        .zip(values.v_row(0))
        .fold(S::zero(), |acc, (p, v)| acc + p.clone() * v.clone())
}

/// `sum_s rho(s) (V*_0(s) - V^pi_0(s))`; `optimal` must come from
/// [`exact_optimal_values`] on the same model.
pub fn per_episode_regret<S: Scalar>(model: &TabularModel<S>, policy: &Policy<S>, optimal: &ValueTables<S>) -> S {
    let value = policy_value(model, policy);
    initial_value(model, optimal) - initial_value(model, &value)
}

/// Full MDP: the exact model plus the reward laws the agent samples from.
#[derive(Clone, Debug)]
pub struct MdpSpec<T> {
    model: TabularModel<T>,
    rewards: Vec<RewardDist<T>>,
}

impl<T: Real> MdpSpec<T> {
    /// Builds the spec; mean rewards are taken from the distributions.
    pub fn new(
        dims: Dims,
        transitions: Vec<T>,
        rewards: Vec<RewardDist<T>>,
        initial: Vec<T>,
    ) -> Result<Self, MdpError> {
        if rewards.len() != dims.cells() {
            return Err(MdpError::Shape { what: "reward distributions", expected: dims.cells(), got: rewards.len() });
        }
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    rewards[dims.hsa(h, s, a)]
                        .validate()
                        .map_err(|e| MdpError::Reward { h, s, a, detail: e.to_string() })?;
                }
            }
        }
        let means = rewards.iter().map(RewardDist::mean).collect();
        let model = TabularModel::new(dims, transitions, means, initial, T::row_tolerance())?;
        Ok(Self { model, rewards })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.model.dims()
    }

    #[inline]
    pub fn model(&self) -> &TabularModel<T> {
        &self.model
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> &RewardDist<T> {
        &self.rewards[self.dims().hsa(h, s, a)]
    }

    pub fn rewards(&self) -> &[RewardDist<T>] {
        &self.rewards
    }

    /// Largest declared mean bound `tau` over all cells.
    pub fn tau(&self) -> T {
        self.rewards.iter().map(|r| r.params().tau).fold(T::zero(), T::max)
    }
}

/// Draws an index from `probs` by inverse CDF; `u` is uniform on [0, 1).
pub fn sample_index<T: Real>(probs: &[T], u: T) -> usize {
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > T::zero() {
            last_positive = i;
            acc = acc + *p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[inline]
pub(crate) fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.gen::<f64>())
}

/// One transition of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step<T> {
    pub h: usize,
    pub state: usize,
    pub action: usize,
    pub reward: T,
    pub next_state: usize,
}

/// A length-H episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
}

impl<T> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Samples `s_0 ~ rho`, then `a_h ~ pi_h(.|s_h)`, `r_h ~ r_h(s_h, a_h)` and
/// `s_{h+1} ~ P_h(.|s_h, a_h)` for every step.
pub fn rollout<T: Real, R: Rng + ?Sized>(mdp: &MdpSpec<T>, policy: &Policy<T>, rng: &mut R) -> Trajectory<T> {
    let dims = mdp.dims();
    let model = mdp.model();
    let mut state = sample_index(model.initial(), uniform(rng));
    let mut steps = Vec::with_capacity(dims.horizon);
    for h in 0..dims.horizon {
        let action = sample_index(policy.row(h, state), uniform(rng));
        let reward = mdp.reward(h, state, action).sample(rng);
        let next_state = sample_index(model.transition_row(h, state, action), uniform(rng));
        steps.push(Step { h, state, action, reward, next_state });
        state = next_state;
    }
    Trajectory { steps }
}

/// Per-episode regret trajectory of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub per_episode_regret: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub seed: u64,
    pub config_digest: String,
}

impl RegretRecord {
    pub fn new(per_episode_regret: Vec<f64>, seed: u64, config_digest: String) -> Self {
        let cumulative = per_episode_regret
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect();
        Self { per_episode_regret, cumulative, seed, config_digest }
    }

    pub fn episodes(&self) -> usize {
        self.per_episode_regret.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Structured text form of an `MdpSpec<f64>`; nested arrays are indexed
/// `[h][s][a]` (rewards) and `[h][s][a][s']` (transitions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<RewardDist<f64>>>>,
    pub initial: Vec<f64>,
}

impl MdpSpec<f64> {
    pub fn to_document(&self) -> MdpDocument {
        let d = self.dims();
        let transitions = (0..d.horizon)
            .map(|h| {
                (0..d.states)
                    .map(|s| (0..d.actions).map(|a| self.model.transition_row(h, s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let rewards = (0..d.horizon)
            .map(|h| (0..d.states).map(|s| (0..d.actions).map(|a| self.reward(h, s, a).clone()).collect()).collect())
            .collect();
        MdpDocument {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            transitions,
            rewards,
            initial: self.model.initial().to_vec(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self, MdpError> {
        let dims = Dims::new(doc.states, doc.actions, doc.horizon)?;
        let bad = |what: &str| MdpError::Document(format!("{what} has the wrong nesting for S={}, A={}, H={}", dims.states, dims.actions, dims.horizon));
        if doc.transitions.len() != dims.horizon || doc.rewards.len() != dims.horizon {
            return Err(bad("per-step arrays"));
        }
        let mut transitions = Vec::with_capacity(dims.cells() * dims.states);
        let mut rewards = Vec::with_capacity(dims.cells());
        for h in 0..dims.horizon {
            if doc.transitions[h].len() != dims.states || doc.rewards[h].len() != dims.states {
                return Err(bad("per-state arrays"));
            }
            for s in 0..dims.states {
                if doc.transitions[h][s].len() != dims.actions || doc.rewards[h][s].len() != dims.actions {
                    return Err(bad("per-action arrays"));
                }
                for a in 0..dims.actions {
                    let row = &doc.transitions[h][s][a];
                    if row.len() != dims.states {
                        return Err(bad("transition rows"));
                    }
                    transitions.extend_from_slice(row);
                    rewards.push(doc.rewards[h][s][a].clone());
                }
            }
        }
        Self::new(dims, transitions, rewards, doc.initial.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: MdpDocument = serde_json::from_str(text).map_err(|e| MdpError::Document(e.to_string()))?;
        Self::from_document(&doc)
    }
}
