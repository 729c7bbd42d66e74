//! Stream events, item/probability file ingestion, and seeded generation of
//! synthetic streams and visit schedules.
//!
//! File formats (UTF-8, one record per line, blank lines ignored):
//!
//! ```text
//! items:    id<TAB>topic,topic,...[<TAB>prob]
//! probs:    id<TAB>prob
//! schedule: 0 or 1 per line, one line per event
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{CoverageError, Item, SharedItem, TopicId};
use crate::seeding;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("no probability for item(s): {}", .0.join(", "))]
    MissingProbabilities(Vec<String>),
    #[error("invalid probability range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("visit count {visits} must be between 1 and the stream length {n}")]
    InvalidVisits { visits: usize, n: usize },
    #[error("invalid stream configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown fixture `{0}` (expected thm1-adversarial, storm-tight or appendix-c3)")]
    UnknownFixture(String),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

/// One time step: an arriving item and whether the user visits right after
/// it has been processed.
#[derive(Debug, Clone)]
pub struct StreamEvent {
    pub item: SharedItem,
    pub visit: bool,
}

impl StreamEvent {
    pub fn new(item: Item, visit: bool) -> Self {
        Self {
            item: Arc::new(item),
            visit,
        }
    }
}

/// Pairs items with a visit schedule. Both must have the same length.
pub fn build_events(items: Vec<Item>, schedule: &[bool]) -> Vec<StreamEvent> {
    assert_eq!(items.len(), schedule.len(), "schedule length mismatch");
    items
        .into_iter()
        .zip(schedule)
        .map(|(item, &visit)| StreamEvent::new(item, visit))
        .collect()
}

/// An item as read from a file, before click probabilities are known.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub id: String,
    pub topics: Vec<TopicId>,
    pub click_prob: Option<f64>,
}

/// Parsed item file: records plus the interned topic names, indexed by
/// [`TopicId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemTable {
    pub records: Vec<ItemRecord>,
    pub topic_names: Vec<String>,
}

impl ItemTable {
    pub fn topic_name(&self, topic: TopicId) -> Option<&str> {
        self.topic_names.get(topic.0 as usize).map(String::as_str)
    }
}

fn read(path: &Path) -> Result<String, StreamError> {
    fs::read_to_string(path).map_err(|source| StreamError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), StreamError> {
    fs::write(path, contents).map_err(|source| StreamError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_prob(raw: &str, line: usize) -> Result<f64, StreamError> {
    let p: f64 = raw.trim().parse().map_err(|_| StreamError::Parse {
        line,
        message: format!("malformed probability `{raw}`"),
    })?;
    if !(0.0..=1.0).contains(&p) {
        return Err(StreamError::Parse {
            line,
            message: format!("probability {p} outside [0, 1]"),
        });
    }
    Ok(p)
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_items(text: &str) -> Result<ItemTable, StreamError> {
    let mut table = ItemTable::default();
    let mut interned: HashMap<String, TopicId> = HashMap::new();
    let mut seen = HashSet::new();
    for (line, raw) in lines(text) {
        let mut fields = raw.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(StreamError::Parse {
                line,
                message: "missing item id".into(),
            });
        }
        let topics_field = fields.next().ok_or_else(|| StreamError::Parse {
            line,
            message: "missing topic column".into(),
        })?;
        let click_prob = fields.next().map(|p| parse_prob(p, line)).transpose()?;
        if fields.next().is_some() {
            return Err(StreamError::Parse {
                line,
                message: "too many columns".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(StreamError::DuplicateId(id.to_string()));
        }
        let mut topics = Vec::new();
        for name in topics_field.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let next = TopicId(interned.len() as u32);
            let topic = *interned.entry(name.to_string()).or_insert_with(|| {
                table.topic_names.push(name.to_string());
                next
            });
            topics.push(topic);
        }
        topics.sort_unstable();
        topics.dedup();
        table.records.push(ItemRecord {
            id: id.to_string(),
            topics,
            click_prob,
        });
    }
    Ok(table)
}

pub fn load_items(path: &Path) -> Result<ItemTable, StreamError> {
    parse_items(&read(path)?)
}

pub fn parse_probs(text: &str) -> Result<HashMap<String, f64>, StreamError> {
    let mut probs = HashMap::new();
    for (line, raw) in lines(text) {
        let (id, p) = raw.split_once('\t').ok_or_else(|| StreamError::Parse {
            line,
            message: "expected `id<TAB>prob`".into(),
        })?;
        let p = parse_prob(p, line)?;
        if probs.insert(id.trim().to_string(), p).is_some() {
            return Err(StreamError::DuplicateId(id.trim().to_string()));
        }
    }
    Ok(probs)
}

pub fn load_probs(path: &Path) -> Result<HashMap<String, f64>, StreamError> {
    parse_probs(&read(path)?)
}

/// Where click probabilities come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbSource {
    /// The optional third column of the item file; every record needs one.
    Embedded,
    Table(HashMap<String, f64>),
    Uniform { lo: f64, hi: f64, seed: u64 },
}

fn check_range(lo: f64, hi: f64) -> Result<(), StreamError> {
    if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi {
        Ok(())
    } else {
        Err(StreamError::InvalidRange { lo, hi })
    }
}

pub fn assign_probs(records: &[ItemRecord], source: &ProbSource) -> Result<Vec<Item>, StreamError> {
    let probs: Vec<f64> = match source {
        ProbSource::Embedded => {
            let missing: Vec<String> = records
                .iter()
                .filter(|r| r.click_prob.is_none())
                .map(|r| r.id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(StreamError::MissingProbabilities(missing));
            }
            records.iter().filter_map(|r| r.click_prob).collect()
        }
        ProbSource::Table(table) => {
            let missing: Vec<String> = records
                .iter()
                .filter(|r| !table.contains_key(&r.id))
                .map(|r| r.id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(StreamError::MissingProbabilities(missing));
            }
            records.iter().map(|r| table[&r.id]).collect()
        }
        &ProbSource::Uniform { lo, hi, seed } => {
            check_range(lo, hi)?;
            let mut rng = seeding::rng(seed, 0);
            records.iter().map(|_| rng.gen_range(lo..=hi)).collect()
        }
    };
    records
        .iter()
        .zip(probs)
        .map(|(r, p)| Ok(Item::new(r.id.clone(), r.topics.iter().copied(), p)?))
        .collect()
}

/// Chooses `visits` distinct positions out of `n` uniformly at random.
pub fn make_visit_schedule(n: usize, visits: usize, seed: u64) -> Result<Vec<bool>, StreamError> {
    if visits == 0 || visits > n {
        return Err(StreamError::InvalidVisits { visits, n });
    }
    let mut rng = seeding::rng(seed, 0);
    let mut schedule = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, visits) {
        schedule[i] = true;
    }
    Ok(schedule)
}

/// Uniformly random permutation, deterministic per seed.
pub fn shuffle_stream<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(&mut seeding::rng(seed, 0));
    out
}

/// Parameters of the synthetic topic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTopics {
    /// Size of the topic universe.
    pub topics: u32,
    /// Topics per item are drawn uniformly from this inclusive range.
    pub per_item_min: u32,
    pub per_item_max: u32,
}

impl SyntheticTopics {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.topics == 0 || self.per_item_min > self.per_item_max || self.per_item_max > self.topics {
            return Err(StreamError::InvalidConfig(format!(
                "synthetic topics: need 1 <= topics and per_item_min <= per_item_max <= topics, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Generates `n` records named `i0, i1, ...` with uniformly chosen topic
    /// sets and no probabilities.
    pub fn generate(&self, n: usize, seed: u64) -> Result<ItemTable, StreamError> {
        self.validate()?;
        let mut rng = seeding::rng(seed, 0);
        let records = (0..n)
            .map(|i| {
                let count = rng.gen_range(self.per_item_min..=self.per_item_max) as usize;
                let mut topics: Vec<TopicId> =
                    rand::seq::index::sample(&mut rng, self.topics as usize, count)
                        .into_iter()
                        .map(|t| TopicId(t as u32))
                        .collect();
                topics.sort_unstable();
                ItemRecord {
                    id: format!("i{i}"),
                    topics,
                    click_prob: None,
                }
            })
            .collect();
        Ok(ItemTable {
            records,
            topic_names: (0..self.topics).map(|t| t.to_string()).collect(),
        })
    }
}

/// Where a configured stream takes its items from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopicSource {
    Synthetic(SyntheticTopics),
    Files {
        items: PathBuf,
        /// Probability file. When absent, probabilities come from the item
        /// file's third column if every record has one, else from the
        /// configured uniform range.
        #[serde(default)]
        probs: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    /// Stream length. For file sources the stream uses the first `n_items`
    /// records after shuffling; 0 means all of them.
    pub n_items: usize,
    /// Actual number of visits `T`.
    pub visits: usize,
    /// Slack added to `T` to get the visit upper bound `T′ = T + ΔT`.
    #[serde(default)]
    pub delta_t: usize,
    /// Per-visit budget.
    pub k: usize,
    #[serde(default)]
    pub prob_lo: f64,
    #[serde(default = "default_prob_hi")]
    pub prob_hi: f64,
    pub source: TopicSource,
}

fn default_prob_hi() -> f64 {
    0.2
}

impl StreamConfig {
    pub fn visit_bound(&self) -> usize {
        self.visits + self.delta_t
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.k == 0 {
            return Err(StreamError::InvalidConfig("k must be positive".into()));
        }
        if self.visits == 0 {
            return Err(StreamError::InvalidConfig("visits must be positive".into()));
        }
        check_range(self.prob_lo, self.prob_hi)?;
        match &self.source {
            TopicSource::Synthetic(s) => {
                s.validate()?;
                if self.n_items == 0 {
                    return Err(StreamError::InvalidConfig("n_items must be positive".into()));
                }
            }
            TopicSource::Files { .. } => {}
        }
        if self.n_items > 0 && self.visits > self.n_items {
            return Err(StreamError::InvalidVisits {
                visits: self.visits,
                n: self.n_items,
            });
        }
        Ok(())
    }

    /// Loads file-backed items once so repeated builds can skip the I/O.
    pub fn load_source(&self) -> Result<Option<Vec<ItemRecord>>, StreamError> {
        match &self.source {
            TopicSource::Synthetic(_) => Ok(None),
            TopicSource::Files { items, probs } => {
                let mut table = load_items(items)?;
                if let Some(path) = probs {
                    let probs = load_probs(path)?;
                    let items = assign_probs(&table.records, &ProbSource::Table(probs))?;
                    for (r, it) in table.records.iter_mut().zip(items) {
                        r.click_prob = Some(it.click_prob());
                    }
                }
                Ok(Some(table.records))
            }
        }
    }

    /// Builds one stream: items, click probabilities, shuffle and visit
    /// schedule, each from its own child of `seed`.
    pub fn build(&self, seed: u64, preloaded: Option<&[ItemRecord]>) -> Result<Vec<StreamEvent>, StreamError> {
        self.validate()?;
        let records = match (&self.source, preloaded) {
            (TopicSource::Synthetic(s), _) => s.generate(self.n_items, seeding::split(seed, 0))?.records,
            (TopicSource::Files { .. }, Some(records)) => records.to_vec(),
            (TopicSource::Files { .. }, None) => self.load_source()?.unwrap_or_default(),
        };
        let uniform = ProbSource::Uniform {
            lo: self.prob_lo,
            hi: self.prob_hi,
            seed: seeding::split(seed, 1),
        };
        let embedded = !records.is_empty() && records.iter().all(|r| r.click_prob.is_some());
        let source = if embedded { ProbSource::Embedded } else { uniform };
        let items = assign_probs(&records, &source)?;
        let mut items = shuffle_stream(&items, seeding::split(seed, 2));
        if self.n_items > 0 {
            if items.len() < self.n_items {
                return Err(StreamError::InvalidConfig(format!(
                    "requested {} items but the source has {}",
                    self.n_items,
                    items.len()
                )));
            }
            items.truncate(self.n_items);
        }
        let schedule = make_visit_schedule(items.len(), self.visits, seeding::split(seed, 3))?;
        Ok(build_events(items, &schedule))
    }
}

pub fn write_items(path: &Path, items: &[Item]) -> Result<(), StreamError> {
    let mut out = String::new();
    for item in items {
        let topics: Vec<String> = item.topics().iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", item.id(), topics.join(","), item.click_prob()));
    }
    write(path, &out)
}

pub fn write_schedule(path: &Path, schedule: &[bool]) -> Result<(), StreamError> {
    let out: String = schedule.iter().map(|&v| if v { "1\n" } else { "0\n" }).collect();
    write(path, &out)
}

pub fn load_schedule(path: &Path) -> Result<Vec<bool>, StreamError> {
    lines(&read(path)?)
        .map(|(line, raw)| match raw.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(StreamError::Parse {
                line,
                message: format!("expected 0 or 1, found `{other}`"),
            }),
        })
        .collect()
}

/// Hard-coded streams used as regression fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    /// `k = 1` adversary: two disjoint 2-topic items, a visit, then a third
    /// item chosen by the adversary and a second visit.
    Thm1Adversarial,
    /// `T′` singleton items followed by one visited item covering all of
    /// them.
    StormTight(usize),
    /// `({1},1,·), ({2},1,·), ({3,4},0.9,visit), ({5,6},1,visit)`.
    AppendixC3,
}

impl Fixture {
    pub const NAMES: [&'static str; 3] = ["thm1-adversarial", "storm-tight", "appendix-c3"];

    /// Resolves a fixture name. `storm-tight` takes `T′` either inline
    /// (`storm-tight(5)`) or from `tprime`.
    pub fn parse(name: &str, tprime: Option<usize>) -> Result<Self, StreamError> {
        let unknown = || StreamError::UnknownFixture(name.to_string());
        match name {
            "thm1-adversarial" => Ok(Self::Thm1Adversarial),
            "appendix-c3" => Ok(Self::AppendixC3),
            "storm-tight" => match tprime {
                Some(t) if t >= 1 => Ok(Self::StormTight(t)),
                _ => Err(StreamError::InvalidConfig("storm-tight needs T′ >= 1".into())),
            },
            _ => {
                let inner = name
                    .strip_prefix("storm-tight(")
                    .and_then(|s| s.strip_suffix(')'))
                    .ok_or_else(unknown)?;
                let t: usize = inner.parse().map_err(|_| unknown())?;
                Self::parse("storm-tight", Some(t))
            }
        }
    }

    pub fn events(self) -> Vec<StreamEvent> {
        let ev = |id: &str, topics: &[u32], p: f64, visit: bool| {
            let item = Item::new(id, topics.iter().map(|&t| TopicId(t)), p).expect("fixture probability");
            StreamEvent::new(item, visit)
        };
        match self {
            Self::Thm1Adversarial => {
                let mut events = vec![ev("v1", &[1, 2], 1.0, false), ev("v2", &[3, 4], 1.0, true)];
                // Completion against the lowest-index first pick, V1.
                events.push(adversarial_completion(&events[0].item));
                events
            }
            Self::StormTight(tprime) => {
                let tprime = tprime as u32;
                let mut events: Vec<StreamEvent> = (1..=tprime)
                    .map(|t| ev(&format!("v{t}"), &[t], 1.0, false))
                    .collect();
                let all: Vec<u32> = (1..=tprime).collect();
                events.push(ev(&format!("v{}", tprime + 1), &all, 1.0, true));
                events
            }
            Self::AppendixC3 => vec![
                ev("v1", &[1], 1.0, false),
                ev("v2", &[2], 1.0, false),
                ev("v3", &[3, 4], 0.9, true),
                ev("v4", &[5, 6], 1.0, true),
            ],
        }
    }
}

impl fmt::Display for Fixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Thm1Adversarial => f.write_str("thm1-adversarial"),
            Self::StormTight(t) => write!(f, "storm-tight({t})"),
            Self::AppendixC3 => f.write_str("appendix-c3"),
        }
    }
}

impl FromStr for Fixture {
    type Err = StreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, None)
    }
}

/// The adversary's third event for [`Fixture::Thm1Adversarial`]: a visited
/// item repeating the topics of whatever was shown first.
pub fn adversarial_completion(first_shown: &Item) -> StreamEvent {
    let item = Item::new("v3", first_shown.topics().iter().copied(), 1.0).expect("certain click");
    StreamEvent::new(item, true)
}

pub fn fixture_stream(name: &str, tprime: Option<usize>) -> Result<Vec<StreamEvent>, StreamError> {
    Ok(Fixture::parse(name, tprime)?.events())
}
