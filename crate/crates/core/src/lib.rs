//! Private tabular episodic reinforcement learning with heavy-tailed rewards.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); exact
//! dynamic programming in [`mdp`] also runs on any ordered field, which the
//! tests use with rationals. The aliases below fix the scalar to `f64`.

pub mod agents;
pub mod cli;
pub mod environments;
pub mod harness;
pub mod heavy;
pub mod mdp;
pub mod noise;
pub mod privatizer;
pub mod scalar;
pub mod tree;

pub use agents::{AgentKind, AgentOptions, AgentState, BonusParams, UpdateSign};
pub use heavy::{HeavyTailParams, RewardDist, RewardLaw, TruncationSchedule};
pub use mdp::{Dims, MdpSpec, Policy, RegretRecord, Trajectory, ValueTables};
pub use privatizer::{CounterBank, Envelopes, PrivacyConfig, PrivacyModel};
pub use scalar::{Real, Scalar};

pub type Mdp = MdpSpec<f64>;
pub type Agent = AgentState<f64>;
pub type Bank = CounterBank<f64>;
pub type Config = PrivacyConfig<f64>;
pub type Heavy = HeavyTailParams<f64>;
pub type Tables = ValueTables<f64>;
pub type Mdp32 = MdpSpec<f32>;
pub type Agent32 = AgentState<f32>;
