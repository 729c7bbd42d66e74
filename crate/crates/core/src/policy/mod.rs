//! Online policies. Each one consumes [`StreamEvent`]s and, at every visit,
//! returns an irrevocable [`OutputSet`] of at most `k` item copies.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{CoverageState, Item, ItemCopy};
use crate::stream::StreamEvent;

mod lmgreedy;
mod preemption;
mod sieve;
mod storm;
mod stormpp;

pub use lmgreedy::LmGreedy;
pub use preemption::Preemption;
pub use sieve::{SievePlusPlus, SieveSegment};
pub use storm::{CandidateSlot, SkipSampling, Storm};
pub use stormpp::{guess_set, StormPlusPlus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error("unknown policy `{0}` (expected lmgreedy, storm, stormpp, sievepp or preemption)")]
    UnknownPolicy(String),
}

pub(crate) fn invalid(name: &'static str, value: impl fmt::Display, reason: &'static str) -> PolicyError {
    PolicyError::InvalidParameter {
        name,
        value: value.to_string(),
        reason,
    }
}

/// The item copies shown at one visit. Outputs are value snapshots and are
/// never mutated once returned.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSet {
    /// 1-based visit number.
    pub visit_index: usize,
    pub items: Vec<ItemCopy>,
    /// Gain of `items` over everything the policy had shown before.
    pub gain_at_emission: f64,
}

impl OutputSet {
    pub fn empty(visit_index: usize) -> Self {
        Self {
            visit_index,
            items: Vec::new(),
            gain_at_emission: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_refs(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().map(|c| c.item.as_ref())
    }
}

pub trait Policy {
    /// Processes one event; returns `Some` exactly when `event.visit` is set.
    fn step(&mut self, event: &StreamEvent) -> Option<OutputSet>;

    /// Objective evaluations made so far.
    fn oracle_calls(&self) -> u64;

    /// Item copies currently held in memory.
    fn stored_copies(&self) -> usize;

    /// True once a visit could not be served because the policy ran out of
    /// candidate sets.
    fn exhausted(&self) -> bool {
        false
    }
}

/// Counts objective evaluations. Every gain query a policy makes goes
/// through here.
#[derive(Debug, Clone, Default)]
pub struct OracleCounter {
    calls: u64,
}

impl OracleCounter {
    pub fn gain(&mut self, state: &CoverageState, item: &Item) -> f64 {
        self.calls += 1;
        state.marginal_gain(item)
    }

    pub fn gain_set<'a>(&mut self, state: &CoverageState, items: impl IntoIterator<Item = &'a Item>) -> f64 {
        self.calls += 1;
        state.marginal_gain_set(items)
    }

    /// Charges `n` evaluations of memoised insertion values. They are values
    /// of the objective and count as oracle calls in the `O(N·k·T′)` cost
    /// model even though they are read from a cache.
    pub fn charge(&mut self, n: usize) {
        self.calls += n as u64;
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

/// How Storm's number of candidate sets is chosen relative to the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HorizonRepr", into = "HorizonRepr")]
pub enum Horizon {
    /// The exact visit count `T`.
    Visits,
    /// The visit upper bound `T′`.
    Bound,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HorizonRepr {
    Fixed(usize),
    Named(String),
}

impl TryFrom<HorizonRepr> for Horizon {
    type Error = String;

    fn try_from(r: HorizonRepr) -> Result<Self, String> {
        match r {
            HorizonRepr::Fixed(n) => Ok(Self::Fixed(n)),
            HorizonRepr::Named(s) => match s.as_str() {
                "T" => Ok(Self::Visits),
                "Tprime" | "T'" => Ok(Self::Bound),
                other => Err(format!("horizon must be \"T\", \"Tprime\" or an integer, got `{other}`")),
            },
        }
    }
}

impl From<Horizon> for HorizonRepr {
    fn from(h: Horizon) -> Self {
        match h {
            Horizon::Visits => Self::Named("T".into()),
            Horizon::Bound => Self::Named("Tprime".into()),
            Horizon::Fixed(n) => Self::Fixed(n),
        }
    }
}

impl Horizon {
    pub fn resolve(self, visits: usize, bound: usize) -> usize {
        match self {
            Self::Visits => visits,
            Self::Bound => bound,
            Self::Fixed(n) => n,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Visits => f.write_str("T"),
            Self::Bound => f.write_str("T'"),
            Self::Fixed(n) => write!(f, "{n}"),
        }
    }
}

fn default_horizon() -> Horizon {
    Horizon::Bound
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_c() -> f64 {
    1.0
}

/// A policy together with its parameters, as named in configs and on the
/// command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    Lmgreedy {
        /// Stochastic-greedy sample size; exact greedy when absent.
        #[serde(default)]
        sample: Option<usize>,
    },
    Storm {
        #[serde(default = "default_horizon")]
        horizon: Horizon,
        /// Skip probability for each (item, candidate set) pair.
        #[serde(default)]
        skip: Option<f64>,
    },
    Stormpp {
        delta: usize,
        #[serde(default)]
        skip: Option<f64>,
    },
    Sievepp {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Preemption {
        #[serde(default = "default_c")]
        c: f64,
    },
}

/// Run-level values a policy needs beyond its own parameters.
#[derive(Debug, Clone, Copy)]
pub struct RunContext {
    pub k: usize,
    pub visits: usize,
    pub visit_bound: usize,
    pub seed: u64,
}

impl PolicySpec {
    pub const NAMES: [&'static str; 5] = ["lmgreedy", "storm", "stormpp", "sievepp", "preemption"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lmgreedy { .. } => "lmgreedy",
            Self::Storm { .. } => "storm",
            Self::Stormpp { .. } => "stormpp",
            Self::Sievepp { .. } => "sievepp",
            Self::Preemption { .. } => "preemption",
        }
    }

    /// Default parameters for a policy name.
    pub fn from_name(name: &str) -> Result<Self, PolicyError> {
        match name {
            "lmgreedy" => Ok(Self::Lmgreedy { sample: None }),
            "storm" => Ok(Self::Storm { horizon: Horizon::Bound, skip: None }),
            "stormpp" => Ok(Self::Stormpp { delta: 1, skip: None }),
            "sievepp" => Ok(Self::Sievepp { epsilon: default_epsilon() }),
            "preemption" => Ok(Self::Preemption { c: default_c() }),
            other => Err(PolicyError::UnknownPolicy(other.to_string())),
        }
    }

    /// Report label, e.g. `storm(T')` or `stormpp(delta=25)`.
    pub fn label(&self) -> String {
        let skip = |s: &Option<f64>| s.map(|p| format!(",skip={p}")).unwrap_or_default();
        match self {
            Self::Lmgreedy { sample: None } => "lmgreedy".into(),
            Self::Lmgreedy { sample: Some(s) } => format!("lmgreedy(sample={s})"),
            Self::Storm { horizon, skip: s } => format!("storm({horizon}{})", skip(s)),
            Self::Stormpp { delta, skip: s } => format!("stormpp(delta={delta}{})", skip(s)),
            Self::Sievepp { epsilon } => format!("sievepp(eps={epsilon})"),
            Self::Preemption { c } => format!("preemption(c={c})"),
        }
    }

    pub fn build(&self, ctx: RunContext) -> Result<Box<dyn Policy>, PolicyError> {
        let skip = |p: &Option<f64>| match *p {
            None => Ok(SkipSampling::Off),
            Some(p) if (0.0..1.0).contains(&p) => Ok(SkipSampling::On { prob: p, seed: ctx.seed }),
            Some(p) => Err(invalid("skip", p, "must lie in [0, 1)")),
        };
        Ok(match self {
            Self::Lmgreedy { sample } => Box::new(LmGreedy::new(ctx.k, *sample, ctx.seed)?),
            Self::Storm { horizon, skip: s } => Box::new(Storm::new(
                horizon.resolve(ctx.visits, ctx.visit_bound),
                ctx.k,
                skip(s)?,
            )?),
            Self::Stormpp { delta, skip: s } => {
                Box::new(StormPlusPlus::new(ctx.visit_bound, ctx.k, *delta, skip(s)?)?)
            }
            Self::Sievepp { epsilon } => Box::new(SievePlusPlus::new(ctx.k, *epsilon)?),
            Self::Preemption { c } => Box::new(Preemption::new(ctx.k, *c)?),
        })
    }
}
