//! Command-line front end: flags and an optional TOML file are merged into an
//! [`ExperimentConfig`], which is run and written as CSV.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 when a run
//! or the output write fails.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use toml::{Table, Value};

use crate::harness::{run_experiment, run_with_noise_log, write_csv, ExperimentConfig, HarnessError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EnvName {
    Riverswim,
    JdpHard,
    LdpHard,
    MabHard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AgentName {
    Vi,
    Po,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrivacyName {
    None,
    Jdp,
    Ldp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SignName {
    Ascent,
    Descent,
}

/// Regret experiments for private heavy-tailed tabular RL.
#[derive(Debug, Parser)]
#[command(name = "privheavy", version, about)]
pub struct Cli {
    #[arg(long, value_enum)]
    pub env: Option<EnvName>,
    #[arg(long, value_enum)]
    pub agent: Option<AgentName>,
    #[arg(long, value_enum)]
    pub privacy: Option<PrivacyName>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Moment order: `E|X|^(1+v) <= u`.
    #[arg(long, allow_negative_numbers = true)]
    pub v: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub u: Option<f64>,
    /// Bound on every mean reward.
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// CSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config; its entries override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Test mode: privatizers add no noise.
    #[arg(long)]
    pub zero_noise: bool,
    /// Policy-optimization step size.
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub bonus_scale: Option<f64>,
    /// Multiplies the count error envelopes and the privacy term of the reward bonus.
    #[arg(long, allow_negative_numbers = true)]
    pub envelope_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub sign: Option<SignName>,
    /// Stable index of the RiverSwim rewards.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Stable scale of the RiverSwim rewards.
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// Writes every noise draw of the first seed as JSON lines.
    #[arg(long)]
    pub noise_log: Option<PathBuf>,
}

fn enum_name<E: ValueEnum>(e: E) -> Value {
    Value::String(e.to_possible_value().expect("no skipped variants").get_name().to_string())
}

fn put<V: Into<Value>>(table: &mut Table, key: &str, value: Option<V>) {
    if let Some(v) = value {
        table.insert(key.to_string(), v.into());
    }
}

impl Cli {
    /// The flags that were given, as a config table.
    pub fn to_table(&self) -> Result<Table, HarnessError> {
        let mut top = Table::new();
        let mut env = Table::new();
        put(&mut env, "name", self.env.map(enum_name));
        put(&mut env, "alpha", self.alpha);
        put(&mut env, "sigma", self.sigma);
        if !env.is_empty() {
            top.insert("env".into(), Value::Table(env));
        }
        let mut agent = Table::new();
        put(&mut agent, "kind", self.agent.map(enum_name));
        put(&mut agent, "privacy", self.privacy.map(enum_name));
        put(&mut agent, "epsilon", self.epsilon);
        put(&mut agent, "delta", self.delta);
        put(&mut agent, "eta", self.eta);
        put(&mut agent, "bonus_scale", self.bonus_scale);
        put(&mut agent, "envelope_scale", self.envelope_scale);
        put(&mut agent, "sign", self.sign.map(enum_name));
        if !agent.is_empty() {
            top.insert("agent".into(), Value::Table(agent));
        }
        let mut heavy = Table::new();
        put(&mut heavy, "v", self.v);
        put(&mut heavy, "u", self.u);
        put(&mut heavy, "tau", self.tau);
        if !heavy.is_empty() {
            top.insert("heavy".into(), Value::Table(heavy));
        }
        let int = |field: &str, x: Option<u64>| -> Result<Option<i64>, HarnessError> {
            x.map(|x| i64::try_from(x).map_err(|_| HarnessError::config(field, "too large")))
                .transpose()
        };
        put(&mut top, "episodes", int("episodes", self.episodes.map(|x| x as u64))?);
        put(&mut top, "horizon", int("horizon", self.horizon.map(|x| x as u64))?);
        put(&mut top, "seeds", int("seeds", self.seeds.map(|x| x as u64))?);
        put(&mut top, "base_seed", int("base_seed", self.base_seed)?);
        put(&mut top, "out", self.out.as_ref().map(|p| p.to_string_lossy().into_owned()));
        if self.zero_noise {
            top.insert("zero_noise".into(), Value::Boolean(true));
        }
        Ok(top)
    }

    /// Flags merged under the config file, with RiverSwim as the default environment.
    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut table = self.to_table()?;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| HarnessError::config("config", format!("{}: {e}", path.display())))?;
            let file: Table =
                toml::from_str(&text).map_err(|e| HarnessError::config("config", format!("{}: {e}", path.display())))?;
            merge(&mut table, file);
        }
        let env = table.entry("env").or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(env) = env {
            env.entry("name").or_insert_with(|| Value::String("riverswim".into()));
        }
        let config: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::config("config", e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Deep merge: entries of `over` replace those of `base`, tables merge.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<String, HarnessError> {
    let config = cli.resolve()?;
    let out = config.out.clone().ok_or_else(|| HarnessError::config("out", "an output path is required"))?;
    let result = match &cli.noise_log {
        Some(log_path) => {
            let (result, log) = run_with_noise_log(&config)?;
            let file = fs::File::create(log_path)
                .map_err(|e| HarnessError::Io { path: log_path.clone(), source: e })?;
            log.write_jsonl(std::io::BufWriter::new(file))
                .map_err(|e| HarnessError::Io { path: log_path.clone(), source: e })?;
            result
        }
        None => run_experiment(&config)?,
    };
    write_csv(&result, &out)?;
    let eps = result.epsilon.map_or_else(|| "inf".to_string(), |e| e.to_string());
    Ok(format!(
        "{} {} {} eps={eps}: final cumulative regret {:.4} +- {:.4} over {} seeds, K={} -> {}",
        config.env.label(),
        result.algorithm,
        result.privacy,
        result.final_mean(),
        result.final_std(),
        result.records.len(),
        result.episodes(),
        out.display()
    ))
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
