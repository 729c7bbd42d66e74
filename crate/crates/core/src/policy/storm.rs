//! Storm: `T′` bounded candidate sets maintained with a swap rule, one of
//! which is frozen and shown at each visit.
//!
//! Every arriving item is offered to each active candidate set in index
//! order. A set with free room takes a fresh copy. A full set evicts its
//! slot with the smallest insertion value ν when the newcomer's gain
//! against the union of all candidate sets is at least twice that ν. At a
//! visit the active set with the largest gain over everything shown so far
//! is emitted and deactivated. Deactivated sets stay in the union.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{invalid, OracleCounter, OutputSet, Policy, PolicyError};
use crate::coverage::{CoverageState, ItemCopy};
use crate::seeding;
use crate::stream::StreamEvent;

/// Random thinning of (item, set) considerations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkipSampling {
    Off,
    /// Ignore each consideration with probability `prob`.
    On { prob: f64, seed: u64 },
}

impl SkipSampling {
    pub const DEFAULT_PROB: f64 = 2.0 / 3.0;
}

/// An item copy held in a candidate set.
#[derive(Debug, Clone)]
pub struct CandidateSlot {
    pub copy: ItemCopy,
    /// Gain against the candidate union at insertion time. Never updated.
    pub nu: f64,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct Storm {
    k: usize,
    sets: Vec<Vec<CandidateSlot>>,
    active: Vec<bool>,
    active_count: usize,
    union_state: CoverageState,
    output_state: CoverageState,
    visits: usize,
    next_seq: u64,
    skip: Option<(f64, ChaCha8Rng)>,
    oracle: OracleCounter,
    exhausted: bool,
}

impl Storm {
    pub fn new(tprime: usize, k: usize, skip: SkipSampling) -> Result<Self, PolicyError> {
        if tprime == 0 {
            return Err(invalid("tprime", tprime, "must be positive"));
        }
        if k == 0 {
            return Err(invalid("k", k, "must be positive"));
        }
        let skip = match skip {
            SkipSampling::Off => None,
            SkipSampling::On { prob, seed } => {
                if !(0.0..1.0).contains(&prob) {
                    return Err(invalid("skip", prob, "must lie in [0, 1)"));
                }
                Some((prob, seeding::rng(seed, 0)))
            }
        };
        Ok(Self {
            k,
            sets: vec![Vec::with_capacity(k); tprime],
            active: vec![true; tprime],
            active_count: tprime,
            union_state: CoverageState::new(),
            output_state: CoverageState::new(),
            visits: 0,
            next_seq: 0,
            skip,
            oracle: OracleCounter::default(),
            exhausted: false,
        })
    }

    pub fn tprime(&self) -> usize {
        self.sets.len()
    }

    pub fn candidate_sets(&self) -> &[Vec<CandidateSlot>] {
        &self.sets
    }

    /// Indices (0-based) of candidate sets not yet shown.
    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j)
    }

    pub fn union_state(&self) -> &CoverageState {
        &self.union_state
    }

    pub fn output_state(&self) -> &CoverageState {
        &self.output_state
    }

    fn skipped(&mut self) -> bool {
        match &mut self.skip {
            Some((prob, rng)) => rng.gen::<f64>() < *prob,
            None => false,
        }
    }

    fn offer(&mut self, event: &StreamEvent) {
        let item = &event.item;
        for j in 0..self.sets.len() {
            if !self.active[j] || self.skipped() {
                continue;
            }
            let seq = self.next_seq;
            if self.sets[j].len() < self.k {
                let nu = self.oracle.gain(&self.union_state, item);
                self.sets[j].push(CandidateSlot {
                    copy: ItemCopy::new(item.clone(), seq),
                    nu,
                    seq,
                });
                self.union_state.apply_item(item);
                self.next_seq += 1;
                continue;
            }

            self.oracle.charge(self.sets[j].len());
            let (victim, min_nu) = self.sets[j]
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.nu.total_cmp(&b.nu).then(a.seq.cmp(&b.seq)))
                .map(|(i, s)| (i, s.nu))
                .expect("full set is non-empty");
            let gain = self.oracle.gain(&self.union_state, item);
            if gain >= 2.0 * min_nu {
                let evicted = std::mem::replace(
                    &mut self.sets[j][victim],
                    CandidateSlot {
                        copy: ItemCopy::new(item.clone(), seq),
                        nu: gain,
                        seq,
                    },
                );
                self.union_state
                    .remove_item(&evicted.copy.item)
                    .expect("evicted copy is part of the union");
                self.union_state.apply_item(item);
                self.next_seq += 1;
            }
        }
    }

    fn serve(&mut self) -> OutputSet {
        self.visits += 1;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.sets.len() {
            if !self.active[j] {
                continue;
            }
            let gain = self
                .oracle
                .gain_set(&self.output_state, self.sets[j].iter().map(|s| s.copy.item.as_ref()));
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((j, gain));
            }
        }
        let Some((j, gain)) = best else {
            self.exhausted = true;
            return OutputSet::empty(self.visits);
        };
        self.active[j] = false;
        self.active_count -= 1;
        let items: Vec<ItemCopy> = self.sets[j].iter().map(|s| s.copy.clone()).collect();
        for c in &items {
            self.output_state.apply_item(&c.item);
        }
        OutputSet {
            visit_index: self.visits,
            items,
            gain_at_emission: gain,
        }
    }
}

impl Policy for Storm {
    fn step(&mut self, event: &StreamEvent) -> Option<OutputSet> {
        self.offer(event);
        event.visit.then(|| self.serve())
    }

    fn oracle_calls(&self) -> u64 {
        self.oracle.calls()
    }

    fn stored_copies(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    fn exhausted(&self) -> bool {
        self.exhausted
    }
}
