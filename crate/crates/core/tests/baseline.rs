//! The non-private agent against a plain UCBVI written from scratch, on
//! RiverSwim with deterministic rewards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use privheavy::agents::{AgentKind, AgentOptions, AgentState};
use privheavy::environments::{build_riverswim, riverswim_gaussian_params, RiverSwimParams};
use privheavy::heavy::{HeavyTailParams, RewardDist};
use privheavy::mdp::{exact_optimal_values, per_episode_regret, Dims, MdpSpec, Policy};
use privheavy::noise::ZeroNoise;
use privheavy::privatizer::{PrivacyConfig, PrivacyModel};

const K: usize = 5000;
const H: usize = 20;
const SEEDS: u64 = 10;
const DELTA: f64 = 0.1;
const SCALE: f64 = 0.1;

/// RiverSwim dynamics with every reward fixed at its mean.
fn bounded_riverswim(heavy: HeavyTailParams<f64>) -> MdpSpec<f64> {
    let p = RiverSwimParams { horizon: H, ..Default::default() };
    let noisy = build_riverswim(&p, riverswim_gaussian_params(1.0), 2.0, 1.0).unwrap();
    let m = noisy.model();
    let rewards = m.mean_rewards().iter().map(|&r| RewardDist::constant(r, heavy)).collect();
    MdpSpec::new(m.dims(), m.transitions().to_vec(), rewards, m.initial().to_vec()).unwrap()
}

/// Hoeffding-bonus UCBVI with empirical estimates; unvisited pairs sit at the cap.
struct Ucbvi {
    d: Dims,
    n: Vec<f64>,
    r: Vec<f64>,
    next: Vec<f64>,
    log: f64,
}

impl Ucbvi {
    fn new(d: Dims) -> Self {
        let sat = (d.states * d.actions * d.horizon * K) as f64;
        Self {
            d,
            n: vec![0.0; d.cells()],
            r: vec![0.0; d.cells()],
            next: vec![0.0; d.cells() * d.states],
            log: (4.0 * sat / DELTA).ln(),
        }
    }

    fn plan(&self) -> Vec<usize> {
        let d = self.d;
        let mut v = vec![0.0; d.states];
        let mut actions = vec![0; d.horizon * d.states];
        for h in (0..d.horizon).rev() {
            let cap = (d.horizon - h) as f64;
            let mut next_v = vec![0.0; d.states];
            for s in 0..d.states {
                let mut best = f64::NEG_INFINITY;
                for a in 0..d.actions {
                    let i = d.hsa(h, s, a);
                    let n = self.n[i];
                    let q = if n == 0.0 {
                        cap
                    } else {
                        let pv: f64 = (0..d.states).map(|t| self.next[i * d.states + t] / n * v[t]).sum();
                        let bonus = SCALE * d.horizon as f64 * (2.0 * self.log / n).sqrt();
                        (self.r[i] / n + pv + bonus).min(cap)
                    };
                    if q > best {
                        best = q;
                        actions[h * d.states + s] = a;
                    }
                }
                next_v[s] = best;
            }
            v = next_v;
        }
        actions
    }

    fn episode(&mut self, env: &MdpSpec<f64>, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let d = self.d;
        let actions = self.plan();
        let m = env.model();
        let mut s = 0;
        for h in 0..d.horizon {
            let a = actions[h * d.states + s];
            let i = d.hsa(h, s, a);
            let u: f64 = rng.gen();
            let row = m.transition_row(h, s, a);
            let mut t = 0;
            let mut acc = row[0];
            while u >= acc && t + 1 < d.states {
                t += 1;
                acc += row[t];
            }
            self.n[i] += 1.0;
            self.r[i] += m.mean_reward(h, s, a);
            self.next[i * d.states + t] += 1.0;
            s = t;
        }
        actions
    }
}

fn reference_regret(env: &MdpSpec<f64>, seed: u64) -> f64 {
    let d = env.dims();
    let star = exact_optimal_values(env.model());
    let mut agent = Ucbvi::new(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..K)
        .map(|_| {
            let actions = agent.episode(env, &mut rng);
            per_episode_regret(env.model(), &Policy::deterministic(d, &actions), &star)
        })
        .sum()
}

fn agent_regret(env: &MdpSpec<f64>, heavy: HeavyTailParams<f64>, seed: u64) -> f64 {
    let d = env.dims();
    let star = exact_optimal_values(env.model());
    let config = PrivacyConfig::new(PrivacyModel::None, 1.0, DELTA, d, K, heavy).unwrap();
    let mut options = AgentOptions::new(AgentKind::Vi);
    options.bonus_scale = SCALE;
    let mut agent = AgentState::with_noise(config, options, Box::new(ZeroNoise)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..K)
        .map(|_| {
            agent.run_episode(env, &mut rng).unwrap();
            per_episode_regret(env.model(), agent.played_policy(), &star)
        })
        .sum()
}

#[test]
fn non_private_agent_tracks_plain_ucbvi() {
    // smallest u (to the integer) that puts every threshold above the reward range
    let heavy = HeavyTailParams::new(1.0, 18.0, 1.0).unwrap();
    let env = bounded_riverswim(heavy);
    let config = PrivacyConfig::new(PrivacyModel::None, 1.0, DELTA, env.dims(), K, heavy).unwrap();
    assert!(config.schedule().unwrap().threshold(1) >= 1.0);
    let ours: f64 = (0..SEEDS).map(|s| agent_regret(&env, heavy, s)).sum::<f64>() / SEEDS as f64;
    let reference: f64 = (0..SEEDS).map(|s| reference_regret(&env, 100 + s)).sum::<f64>() / SEEDS as f64;
    let ratio = ours / reference;
    assert!((0.5..=2.0).contains(&ratio), "agent {ours:.1}, reference {reference:.1}, ratio {ratio:.3}");
}
