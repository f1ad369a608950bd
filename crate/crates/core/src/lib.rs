//! Asymmetric creator/solver self-play for preference optimization.
//!
//! A creator scores prompts by an advantage-based informativeness proxy,
//! samples an informative subset, and evolves it into new prompts. A solver
//! samples responses from a log-linear softmax policy, builds preference
//! pairs from oracle rewards, and descends a contrastive preference loss.
//! Every prompt has a finite response set, so optimal policies, partition
//! functions, and regret are computed exactly in [`regret_lab`].

pub mod creator;
pub mod error;
pub mod losses;
pub mod orchestrator;
pub mod policy;
pub mod preference;
pub mod regret_lab;
pub mod rng;
pub mod solver;
pub mod task_space;

pub use creator::{CreatorConfig, InformativenessRecord, MetricKind, SelectionMode, Strategy};
pub use error::{EvaError, Result};
pub use losses::{LossConfig, LossKind};
pub use orchestrator::{IterationLog, RunConfig, RunMode, Schedule};
pub use policy::{PolicyParams, ReferencePolicy, SoftmaxPolicy};
pub use preference::PreferencePair;
pub use solver::SolverConfig;
pub use task_space::{
    FamilyParams, Prompt, PromptId, Response, ResponseSet, RewardOracle, TaskSpace,
};
