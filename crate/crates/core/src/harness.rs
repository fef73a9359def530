//! Experiment configuration, seeded multi-run execution, regret aggregation
//! and CSV output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentKind, AgentOptions, AgentState, UpdateSign};
use crate::environments::{
    build_jdp_hard, build_ldp_hard, build_mab_hard, build_riverswim, mab_as_mdp, riverswim_gaussian_params,
    RiverSwimParams, TreeShape,
};
use crate::heavy::HeavyTailParams;
use crate::mdp::{exact_optimal_values, per_episode_regret, Dims, MdpSpec, RegretRecord};
use crate::noise::{LaplaceNoise, NoiseLog, NoiseSource, RecordingNoise, ZeroNoise};
use crate::privatizer::{PrivacyConfig, PrivacyModel};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("run failed: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config { field: field.into(), message: message.into() }
    }

    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            _ => 1,
        }
    }
}

fn default_alpha() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    0.5
}

fn default_seeds() -> usize {
    1
}

fn four() -> usize {
    4
}

/// RiverSwim knobs; transition defaults come from [`RiverSwimParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiverSwimEnv {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub states: Option<usize>,
    #[serde(default)]
    pub advance: Option<f64>,
    #[serde(default)]
    pub stay: Option<f64>,
    #[serde(default)]
    pub retreat: Option<f64>,
    #[serde(default)]
    pub left_advance: Option<f64>,
    #[serde(default)]
    pub right_stay: Option<f64>,
}

impl Default for RiverSwimEnv {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            sigma: 1.0,
            states: None,
            advance: None,
            stay: None,
            retreat: None,
            left_advance: None,
            right_stay: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JdpHardEnv {
    #[serde(default = "four")]
    pub n: usize,
    #[serde(default = "four")]
    pub m: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Optimal action per initial state; defaults to `s mod m`.
    #[serde(default)]
    pub optimal: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpHardEnv {
    #[serde(default = "default_tree_states")]
    pub states: usize,
    #[serde(default = "default_tree_actions")]
    pub actions: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Defaults to the last leaf.
    #[serde(default)]
    pub optimal_leaf: Option<usize>,
    /// Defaults to the last action.
    #[serde(default)]
    pub optimal_action: Option<usize>,
    /// Symmetric instance without an optimal pair.
    #[serde(default)]
    pub null: bool,
}

fn default_tree_states() -> usize {
    15
}

fn default_tree_actions() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MabHardEnv {
    #[serde(default = "default_arms")]
    pub arms: usize,
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default)]
    pub raised: Option<usize>,
}

fn default_arms() -> usize {
    5
}

fn default_gap() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEnv {
    /// JSON MDP document.
    pub path: PathBuf,
}

/// Which environment to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvSpec {
    Riverswim(RiverSwimEnv),
    JdpHard(JdpHardEnv),
    LdpHard(LdpHardEnv),
    MabHard(MabHardEnv),
    File(FileEnv),
}

impl EnvSpec {
    pub fn label(&self) -> &'static str {
        match self {
            EnvSpec::Riverswim(_) => "riverswim",
            EnvSpec::JdpHard(_) => "jdp-hard",
            EnvSpec::LdpHard(_) => "ldp-hard",
            EnvSpec::MabHard(_) => "mab-hard",
            EnvSpec::File(_) => "file",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default)]
    pub kind: AgentKind,
    #[serde(default)]
    pub privacy: PrivacyModel,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "one")]
    pub bonus_scale: f64,
    #[serde(default = "one")]
    pub envelope_scale: f64,
    #[serde(default)]
    pub sign: UpdateSign,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            kind: AgentKind::Vi,
            privacy: PrivacyModel::None,
            epsilon: 1.0,
            delta: 0.1,
            eta: None,
            bonus_scale: 1.0,
            envelope_scale: 1.0,
            sign: UpdateSign::Ascent,
        }
    }
}

/// Declared tail parameters; unset fields take the environment's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeavySpec {
    #[serde(default)]
    pub v: Option<f64>,
    #[serde(default)]
    pub u: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
}

/// One experiment: an environment, an agent and the run grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub agent: AgentSpec,
    #[serde(default)]
    pub heavy: HeavySpec,
    pub episodes: usize,
    /// RiverSwim and file environments only; the hard instances fix their own.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Test mode: every privatizer counts exactly.
    #[serde(default)]
    pub zero_noise: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, agent: AgentSpec, episodes: usize) -> Self {
        Self {
            env,
            agent,
            heavy: HeavySpec::default(),
            episodes,
            horizon: None,
            seeds: 1,
            base_seed: 0,
            zero_noise: false,
            out: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::config("config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field that does not need the environment.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::config("episodes", "must be at least 1"));
        }
        if self.seeds == 0 {
            return Err(HarnessError::config("seeds", "must be at least 1"));
        }
        if self.horizon == Some(0) {
            return Err(HarnessError::config("horizon", "must be at least 1"));
        }
        let a = &self.agent;
        if a.privacy != PrivacyModel::None && !(a.epsilon > 0.0 && a.epsilon.is_finite()) {
            return Err(HarnessError::config("epsilon", format!("must be positive and finite, got {}", a.epsilon)));
        }
        if !(a.delta > 0.0 && a.delta <= 1.0) {
            return Err(HarnessError::config("delta", format!("must lie in (0, 1], got {}", a.delta)));
        }
        if let Some(eta) = a.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(HarnessError::config("eta", format!("must be non-negative, got {eta}")));
            }
        }
        if !(a.bonus_scale >= 0.0 && a.bonus_scale.is_finite()) {
            return Err(HarnessError::config("bonus_scale", format!("must be non-negative, got {}", a.bonus_scale)));
        }
        if !(a.envelope_scale >= 0.0 && a.envelope_scale.is_finite()) {
            return Err(HarnessError::config(
                "envelope_scale",
                format!("must be non-negative, got {}", a.envelope_scale),
            ));
        }
        if let Some(v) = self.heavy.v {
            if !(v > 0.0 && v <= 1.0) {
                return Err(HarnessError::config("v", format!("must lie in (0, 1], got {v}")));
            }
        }
        if let Some(u) = self.heavy.u {
            if !(u > 0.0 && u.is_finite()) {
                return Err(HarnessError::config("u", format!("must be positive, got {u}")));
            }
        }
        if let Some(tau) = self.heavy.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(HarnessError::config("tau", format!("must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    /// Builds the environment and the tail parameters the agent assumes.
    pub fn build_env(&self) -> Result<(MdpSpec<f64>, HeavyTailParams<f64>), HarnessError> {
        self.validate()?;
        let env_err = |e: crate::environments::EnvError| HarnessError::config("env", e.to_string());
        let v = self.heavy.v.unwrap_or(1.0);
        let fixed_horizon = |h: usize| -> Result<(), HarnessError> {
            match self.horizon {
                Some(x) if x != h => Err(HarnessError::config(
                    "horizon",
                    format!("{} has horizon {h}, got {x}", self.env.label()),
                )),
                _ => Ok(()),
            }
        };
        let (mdp, defaults) = match &self.env {
            EnvSpec::Riverswim(r) => {
                if !(r.sigma > 0.0) {
                    return Err(HarnessError::config("sigma", format!("must be positive, got {}", r.sigma)));
                }
                let mut p = RiverSwimParams::<f64>::default();
                p.horizon = self.horizon.unwrap_or(p.horizon);
                p.states = r.states.unwrap_or(p.states);
                p.advance = r.advance.unwrap_or(p.advance);
                p.stay = r.stay.unwrap_or(p.stay);
                p.retreat = r.retreat.unwrap_or(p.retreat);
                p.left_advance = r.left_advance.unwrap_or(p.left_advance);
                p.right_stay = r.right_stay.unwrap_or(p.right_stay);
                let base = riverswim_gaussian_params(r.sigma);
                let declared = self.merge_heavy(base);
                (build_riverswim(&p, declared, r.alpha, r.sigma).map_err(env_err)?, declared)
            }
            EnvSpec::JdpHard(j) => {
                fixed_horizon(2)?;
                let optimal = j.optimal.clone().unwrap_or_else(|| (0..j.n).map(|s| s % j.m.max(1)).collect());
                let mdp = build_jdp_hard(j.n, j.m, v, j.gamma, &optimal).map_err(env_err)?;
                (mdp, HeavyTailParams { v, u: 1.0, tau: 1.0 })
            }
            EnvSpec::LdpHard(l) => {
                let shape = TreeShape::fit(l.states, l.actions).map_err(env_err)?;
                fixed_horizon(shape.horizon())?;
                let optimal = if l.null {
                    None
                } else {
                    Some((
                        l.optimal_leaf.unwrap_or(shape.leaves - 1),
                        l.optimal_action.unwrap_or(l.actions.saturating_sub(1)),
                    ))
                };
                let mdp = build_ldp_hard(l.states, l.actions, v, l.gamma, optimal).map_err(env_err)?;
                (mdp, HeavyTailParams { v, u: 1.0, tau: 1.0 })
            }
            EnvSpec::MabHard(m) => {
                fixed_horizon(1)?;
                let arms = build_mab_hard(m.arms, v, m.gap, m.raised).map_err(env_err)?;
                (mab_as_mdp(&arms).map_err(env_err)?, HeavyTailParams { v, u: 1.0, tau: 1.0 })
            }
            EnvSpec::File(f) => {
                let text = fs::read_to_string(&f.path).map_err(|e| HarnessError::Io { path: f.path.clone(), source: e })?;
                let mdp = MdpSpec::from_json(&text).map_err(|e| HarnessError::config("env.path", e.to_string()))?;
                fixed_horizon(mdp.dims().horizon)?;
                let first = mdp.rewards()[0].params();
                let tau = mdp.tau();
                (mdp, HeavyTailParams { v: first.v, u: first.u, tau })
            }
        };
        let heavy = match self.env {
            EnvSpec::Riverswim(_) => defaults,
            _ => self.merge_heavy(defaults),
        };
        heavy.validate().map_err(|e| HarnessError::config("heavy", e.to_string()))?;
        Ok((mdp, heavy))
    }

    fn merge_heavy(&self, base: HeavyTailParams<f64>) -> HeavyTailParams<f64> {
        HeavyTailParams {
            v: self.heavy.v.unwrap_or(base.v),
            u: self.heavy.u.unwrap_or(base.u),
            tau: self.heavy.tau.unwrap_or(base.tau),
        }
    }

    /// `epsilon` as recorded in outputs: `None` when there is no privacy.
    pub fn effective_epsilon(&self) -> Option<f64> {
        match self.agent.privacy {
            PrivacyModel::None => None,
            _ => Some(self.agent.epsilon),
        }
    }

    /// Stable hex digest of everything that determines a single run.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds = 1;
        canonical.out = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        format!("{:016x}", fnv1a(text.as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the random stream for run `index`; depends only on the pair.
pub fn stream_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base_seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Mean and population standard deviation of the cumulative regret across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateResult {
    pub algorithm: AgentKind,
    pub privacy: PrivacyModel,
    pub epsilon: Option<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub records: Vec<RegretRecord>,
}

impl AggregateResult {
    pub fn from_records(
        algorithm: AgentKind,
        privacy: PrivacyModel,
        epsilon: Option<f64>,
        records: Vec<RegretRecord>,
    ) -> Self {
        let k = records.first().map_or(0, |r| r.episodes());
        assert!(records.iter().all(|r| r.episodes() == k), "records differ in length");
        let n = records.len() as f64;
        let mut mean = vec![0.0; k];
        let mut std = vec![0.0; k];
        for e in 0..k {
            let m = records.iter().map(|r| r.cumulative[e]).sum::<f64>() / n;
            let var = records.iter().map(|r| (r.cumulative[e] - m).powi(2)).sum::<f64>() / n;
            mean[e] = m;
            std[e] = var.sqrt();
        }
        Self { algorithm, privacy, epsilon, mean, std, records }
    }

    pub fn episodes(&self) -> usize {
        self.mean.len()
    }

    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_std(&self) -> f64 {
        self.std.last().copied().unwrap_or(0.0)
    }
}

/// Runs one seeded agent and returns its regret record; `noise` overrides the
/// configured noise source.
pub fn run_single(
    config: &ExperimentConfig,
    env: &MdpSpec<f64>,
    heavy: HeavyTailParams<f64>,
    index: usize,
    noise: Option<Box<dyn NoiseSource<f64>>>,
) -> Result<RegretRecord, HarnessError> {
    let dims: Dims = env.dims();
    let a = &config.agent;
    let privacy = PrivacyConfig::new(a.privacy, a.epsilon, a.delta, dims, config.episodes, heavy)
        .map_err(|e| HarnessError::config("agent", e.to_string()))?;
    let options = AgentOptions {
        kind: a.kind,
        bonus_scale: a.bonus_scale,
        envelope_scale: a.envelope_scale,
        eta: a.eta,
        sign: a.sign,
    };
    let noise: Box<dyn NoiseSource<f64>> = match noise {
        Some(n) => n,
        None if config.zero_noise => Box::new(ZeroNoise),
        None => Box::new(LaplaceNoise),
    };
    let mut agent = AgentState::with_noise(privacy, options, noise).map_err(|e| match e {
        AgentError::Invalid(m) => HarnessError::config("agent", m),
        other => HarnessError::Runtime(other.to_string()),
    })?;
    let optimal = exact_optimal_values(env.model());
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.base_seed, index as u64));
    let mut regret = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        agent.run_episode(env, &mut rng).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        regret.push(per_episode_regret(env.model(), agent.played_policy(), &optimal));
    }
    Ok(RegretRecord::new(regret, config.base_seed + index as u64, config.digest()))
}

/// Runs every seed (in parallel) and aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateResult, HarnessError> {
    let (env, heavy) = config.build_env()?;
    let records = (0..config.seeds)
        .into_par_iter()
        .map(|i| run_single(config, &env, heavy, i, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AggregateResult::from_records(config.agent.kind, config.agent.privacy, config.effective_epsilon(), records))
}

/// Like [`run_experiment`] with one seed, logging every noise draw.
pub fn run_with_noise_log(config: &ExperimentConfig) -> Result<(AggregateResult, NoiseLog), HarnessError> {
    let (env, heavy) = config.build_env()?;
    let inner: Box<dyn NoiseSource<f64>> = if config.zero_noise { Box::new(ZeroNoise) } else { Box::new(LaplaceNoise) };
    let source = RecordingNoise::new(inner);
    let log = source.log();
    let record = run_single(config, &env, heavy, 0, Some(Box::new(source)))?;
    let result =
        AggregateResult::from_records(config.agent.kind, config.agent.privacy, config.effective_epsilon(), vec![record]);
    Ok((result, log))
}

/// Decimal rendering with 10 significant digits.
pub fn format_sig10(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(0) as usize;
    let text = format!("{x:.decimals$}");
    // a carry (9.99.. -> 10.0..) adds one digit; redo with one fewer decimal
    let digits = text.chars().filter(char::is_ascii_digit).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 10 && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    text
}

pub const CSV_HEADER: &str = "seed,episode,cumulative_regret,algorithm,privacy,epsilon";

/// Writes one row per (seed, episode) to `out`.
pub fn write_csv_to<W: Write>(result: &AggregateResult, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    let epsilon = result.epsilon.map_or_else(|| "inf".to_string(), format_sig10);
    for r in &result.records {
        let seed = r.seed.to_string();
        for (e, c) in r.cumulative.iter().enumerate() {
            w.write_record([
                seed.as_str(),
                &(e + 1).to_string(),
                &format_sig10(*c),
                result.algorithm.as_str(),
                result.privacy.as_str(),
                &epsilon,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(result: &AggregateResult, path: &Path) -> Result<(), HarnessError> {
    let io_err = |e: io::Error| HarnessError::Io { path: path.to_path_buf(), source: e };
    let file = fs::File::create(path).map_err(io_err)?;
    write_csv_to(result, io::BufWriter::new(file)).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => io_err(e),
        other => HarnessError::Runtime(format!("{other:?}")),
    })
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub episode: usize,
    pub cumulative_regret: f64,
    pub algorithm: String,
    pub privacy: String,
    pub epsilon: String,
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}
