//! RiverSwim with stable-law rewards and the lower-bound instances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heavy::{HeavyError, HeavyTailParams, RewardDist};
use crate::mdp::{Dims, MdpError, MdpSpec};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid instance parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Heavy(#[from] HeavyError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn param<T>(msg: impl Into<String>) -> Result<T, EnvError> {
    Err(EnvError::Param(msg.into()))
}

fn probability<T: Real>(name: &str, p: T) -> Result<(), EnvError> {
    if !(p >= T::zero() && p <= T::one()) {
        return param(format!("{name} = {p} is not a probability"));
    }
    Ok(())
}

/// Transition probabilities of the `right` action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiverSwimParams<T> {
    pub states: usize,
    pub horizon: usize,
    /// Interior states.
    pub advance: T,
    pub stay: T,
    pub retreat: T,
    /// Leftmost state; it stays otherwise.
    pub left_advance: T,
    /// Rightmost state; it retreats otherwise.
    pub right_stay: T,
    pub left_reward: T,
    pub right_reward: T,
}

impl<T: Real> Default for RiverSwimParams<T> {
    fn default() -> Self {
        Self {
            states: 6,
            horizon: 20,
            advance: T::lit(0.3),
            stay: T::lit(0.6),
            retreat: T::lit(0.1),
            left_advance: T::lit(0.3),
            right_stay: T::lit(0.6),
            left_reward: T::lit(0.005),
            right_reward: T::one(),
        }
    }
}

/// Action index of `left` in RiverSwim.
pub const LEFT: usize = 0;
/// Action index of `right` in RiverSwim.
pub const RIGHT: usize = 1;

/// RiverSwim: `left` moves one state left for sure, `right` fights the current.
/// Every cell pays a symmetric stable reward with index `alpha` and scale
/// `sigma`, centred at 0.005 for `left` in the leftmost state, 1 for `right`
/// in the rightmost one and 0 elsewhere. Episodes start in the leftmost state.
pub fn build_riverswim<T: Real>(
    params: &RiverSwimParams<T>,
    heavy: HeavyTailParams<T>,
    alpha: T,
    sigma: T,
) -> Result<MdpSpec<T>, EnvError> {
    let s_count = params.states;
    if s_count < 2 {
        return param(format!("RiverSwim needs at least 2 states, got {s_count}"));
    }
    for (name, p) in [
        ("advance", params.advance),
        ("stay", params.stay),
        ("retreat", params.retreat),
        ("left_advance", params.left_advance),
        ("right_stay", params.right_stay),
    ] {
        probability(name, p)?;
    }
    let interior = params.advance + params.stay + params.retreat;
    if (interior - T::one()).abs() > T::row_tolerance() {
        return param(format!("advance + stay + retreat must be 1, got {interior}"));
    }
    let dims = Dims::new(s_count, 2, params.horizon)?;
    let last = s_count - 1;
    let mut step = vec![T::zero(); s_count * 2 * s_count];
    let mut rewards_step = Vec::with_capacity(s_count * 2);
    for s in 0..s_count {
        let left = &mut step[(s * 2 + LEFT) * s_count..(s * 2 + LEFT + 1) * s_count];
        left[s.saturating_sub(1)] = T::one();
        let right = &mut step[(s * 2 + RIGHT) * s_count..(s * 2 + RIGHT + 1) * s_count];
        if s == 0 {
            right[1] = params.left_advance;
            right[0] = T::one() - params.left_advance;
        } else if s == last {
            right[last] = params.right_stay;
            right[last - 1] = T::one() - params.right_stay;
        } else {
            right[s + 1] = params.advance;
            right[s] = params.stay;
            right[s - 1] = params.retreat;
        }
        for a in [LEFT, RIGHT] {
            let mean = match (s, a) {
                (0, LEFT) => params.left_reward,
                (x, RIGHT) if x == last => params.right_reward,
                _ => T::zero(),
            };
            let dist = RewardDist::alpha_stable(alpha, T::zero(), mean, sigma, heavy);
            dist.validate()?;
            rewards_step.push(dist);
        }
    }
    let transitions = step.iter().copied().cycle().take(step.len() * params.horizon).collect();
    let rewards = rewards_step.iter().copied().cycle().take(rewards_step.len() * params.horizon).collect();
    let mut initial = vec![T::zero(); s_count];
    initial[0] = T::one();
    Ok(MdpSpec::new(dims, transitions, rewards, initial)?)
}

/// Declared tail parameters for RiverSwim rewards with `alpha = 2`: the second
/// moment is `2 sigma^2 + mean^2 <= 2 sigma^2 + 1`.
pub fn riverswim_gaussian_params<T: Real>(sigma: T) -> HeavyTailParams<T> {
    HeavyTailParams { v: T::one(), u: T::lit(2.0) * sigma * sigma + T::one(), tau: T::one() }
}

/// Builds a time-homogeneous MDP from one step's kernel and rewards.
fn homogeneous<T: Real>(
    states: usize,
    actions: usize,
    horizon: usize,
    step: Vec<T>,
    rewards: Vec<RewardDist<T>>,
    initial: Vec<T>,
) -> Result<MdpSpec<T>, EnvError> {
    let dims = Dims::new(states, actions, horizon)?;
    let transitions = step.iter().copied().cycle().take(step.len() * horizon).collect();
    let rewards = rewards.iter().copied().cycle().take(rewards.len() * horizon).collect();
    Ok(MdpSpec::new(dims, transitions, rewards, initial)?)
}

/// Two-step instance with `n` initial states, `m` actions and the absorbing
/// outcome states `+` (index `n`) and `-` (index `n + 1`). In state `s`, action 0
/// reaches `+` with probability `0.5 g`, action `optimal[s]` (if not 0) with
/// `0.7 g`, any other action with `0.3 g`, where `g = gamma^{1+v}`. Reaching
/// `+` pays `1/gamma`; that payment is attached to the deciding cell.
pub fn build_jdp_hard<T: Real>(n: usize, m: usize, v: T, gamma: T, optimal: &[usize]) -> Result<MdpSpec<T>, EnvError> {
    if n == 0 || m == 0 {
        return param(format!("need n >= 1 and m >= 1, got n = {n}, m = {m}"));
    }
    if optimal.len() != n {
        return param(format!("expected {n} optimal actions, got {}", optimal.len()));
    }
    if let Some(bad) = optimal.iter().find(|&&a| a >= m) {
        return param(format!("optimal action {bad} out of range for m = {m}"));
    }
    if !(gamma > T::zero()) {
        return param(format!("gamma must be positive, got {gamma}"));
    }
    let heavy = HeavyTailParams::new(v, T::one(), T::one())?;
    let g = gamma.powf(T::one() + v);
    let states = n + 2;
    let (plus, minus) = (n, n + 1);
    let mut step = vec![T::zero(); states * m * states];
    let mut rewards = Vec::with_capacity(states * m);
    for s in 0..states {
        for a in 0..m {
            let row = &mut step[(s * m + a) * states..(s * m + a + 1) * states];
            if s < n {
                let weight = if a == 0 {
                    T::lit(0.5)
                } else if a == optimal[s] {
                    T::lit(0.7)
                } else {
                    T::lit(0.3)
                };
                let p = weight * g;
                probability("P(+|s, a)", p)?;
                row[plus] = p;
                row[minus] = T::one() - p;
                let dist = RewardDist::point_mass(p, T::one() / gamma, heavy);
                dist.validate()?;
                rewards.push(dist);
            } else {
                row[s] = T::one();
                rewards.push(RewardDist::constant(T::zero(), heavy));
            }
        }
    }
    let mut initial = vec![T::zero(); states];
    for p in initial.iter_mut().take(n) {
        *p = T::one() / T::count(n);
    }
    homogeneous(states, m, 2, step, rewards, initial)
}

/// Node layout of the tree instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeShape {
    /// Depth of the leaves (the root has depth 0).
    pub depth: usize,
    /// Tree nodes, numbered breadth-first from the root.
    pub nodes: usize,
    pub leaves: usize,
    pub first_leaf: usize,
}

impl TreeShape {
    /// Largest perfect `actions`-ary tree with at most `states - 2` nodes.
    pub fn fit(states: usize, actions: usize) -> Result<Self, EnvError> {
        if states < 3 || actions < 2 {
            return param(format!("tree instance needs S >= 3 and A >= 2, got S = {states}, A = {actions}"));
        }
        let budget = states - 2;
        let (mut depth, mut nodes, mut width) = (0, 1, 1);
        loop {
            let next = nodes + width * actions;
            if next > budget {
                break;
            }
            depth += 1;
            width *= actions;
            nodes = next;
        }
        Ok(Self { depth, nodes, leaves: width, first_leaf: nodes - width })
    }

    /// Horizon: `depth` moves down the tree, the leaf decision, one terminal step.
    pub fn horizon(&self) -> usize {
        self.depth + 2
    }

    pub fn plus(&self) -> usize {
        self.nodes
    }

    pub fn minus(&self) -> usize {
        self.nodes + 1
    }
}

/// Tree instance: deterministic moves down a perfect tree, then at every leaf
/// each action reaches `+` (paying `1/gamma`) with probability `gamma^{1+v}/2`,
/// except the pair `optimal = (leaf, action)`, which doubles it. `None` gives
/// the symmetric instance. States not needed by the tree are unreachable
/// self-loops.
pub fn build_ldp_hard<T: Real>(
    states: usize,
    actions: usize,
    v: T,
    gamma: T,
    optimal: Option<(usize, usize)>,
) -> Result<MdpSpec<T>, EnvError> {
    let shape = TreeShape::fit(states, actions)?;
    if !(gamma > T::zero()) {
        return param(format!("gamma must be positive, got {gamma}"));
    }
    let g = gamma.powf(T::one() + v);
    if g > T::lit(0.75) {
        return param(format!("gamma^(1+v) = {g} exceeds 3/4"));
    }
    if let Some((leaf, a)) = optimal {
        if leaf >= shape.leaves || a >= actions {
            return param(format!("optimal pair ({leaf}, {a}) outside {} leaves x {actions} actions", shape.leaves));
        }
    }
    let heavy = HeavyTailParams::new(v, T::one(), T::one())?;
    let mut step = vec![T::zero(); states * actions * states];
    let mut rewards = Vec::with_capacity(states * actions);
    for s in 0..states {
        for a in 0..actions {
            let row = &mut step[(s * actions + a) * states..(s * actions + a + 1) * states];
            if s < shape.first_leaf {
                row[s * actions + 1 + a] = T::one();
                rewards.push(RewardDist::constant(T::zero(), heavy));
            } else if s < shape.nodes {
                let p = if optimal == Some((s - shape.first_leaf, a)) { g } else { g / T::lit(2.0) };
                row[shape.plus()] = p;
                row[shape.minus()] = T::one() - p;
                let dist = RewardDist::point_mass(p, T::one() / gamma, heavy);
                dist.validate()?;
                rewards.push(dist);
            } else {
                row[s] = T::one();
                rewards.push(RewardDist::constant(T::zero(), heavy));
            }
        }
    }
    let mut initial = vec![T::zero(); states];
    initial[0] = T::one();
    homogeneous(states, actions, shape.horizon(), step, rewards, initial)
}

/// Two-point arm laws on `{0, 1/gamma}` with `gamma = (5 delta)^{1/v}`: arm 0
/// has mean `5 delta / 2`, the others `3 delta / 2`; `raised = Some(i)` lifts
/// arm `i` to `7 delta / 2`.
pub fn build_mab_hard<T: Real>(
    arms: usize,
    v: T,
    gap: T,
    raised: Option<usize>,
) -> Result<Vec<RewardDist<T>>, EnvError> {
    if arms < 2 {
        return param(format!("need at least 2 arms, got {arms}"));
    }
    if !(gap > T::zero() && gap < T::lit(0.2)) {
        return param(format!("gap must lie in (0, 1/5), got {gap}"));
    }
    if let Some(i) = raised {
        if i == 0 || i >= arms {
            return param(format!("raised arm must be in 1..{arms}, got {i}"));
        }
    }
    let heavy = HeavyTailParams::new(v, T::one(), T::one())?;
    let gamma = (T::lit(5.0) * gap).powf(T::one() / v);
    let half = gamma.powf(T::one() + v) / T::lit(2.0);
    let shift = gap * gamma;
    (0..arms)
        .map(|a| {
            let p = if a == 0 {
                half
            } else if Some(a) == raised {
                half + shift
            } else {
                half - shift
            };
            let d = RewardDist::point_mass(p.max(T::zero()).min(T::one()), T::one() / gamma, heavy);
            d.validate()?;
            Ok(d)
        })
        .collect()
}

/// One-state, one-step MDP whose actions are the given arms.
pub fn mab_as_mdp<T: Real>(arms: &[RewardDist<T>]) -> Result<MdpSpec<T>, EnvError> {
    let dims = Dims::new(1, arms.len(), 1)?;
    Ok(MdpSpec::new(dims, vec![T::one(); arms.len()], arms.to_vec(), vec![T::one()])?)
}
