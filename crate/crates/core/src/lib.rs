//! Online recommendation under expected topic coverage: the objective, the
//! stream model, the streaming policies, an exhaustive offline optimum for
//! tiny instances, and the experiment harness.

pub mod coverage;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod seeding;
pub mod stream;

pub use coverage::{CoverageError, CoverageState, Item, ItemCopy, SharedItem, TopicId};
pub use harness::{ExperimentConfig, HarnessError, RunReport, SweepRow};
pub use oracle::{brute_force_opt, ratio_check, OracleError};
pub use policy::{OutputSet, Policy, PolicyError, PolicySpec, RunContext};
pub use stream::{Fixture, StreamConfig, StreamError, StreamEvent};
