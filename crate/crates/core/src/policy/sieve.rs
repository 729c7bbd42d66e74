//! Sieve-Streaming++ run independently on each stretch of the stream between
//! two visits, maximizing `g(X) = f(X | shown so far)`.
//!
//! A segment tracks the best singleton value `m` and the best set value
//! `LB`. It keeps one set per threshold `τ = (1+ε)^h` with
//! `max(LB, m) / (2k(1+ε)) ≤ τ ≤ m` and adds an item to a non-full set when
//! its gain over that set is at least `τ`. The visit shows the best set.

use std::collections::BTreeMap;

use super::{invalid, OracleCounter, OutputSet, Policy, PolicyError};
use crate::coverage::{CoverageState, ItemCopy};
use crate::stream::StreamEvent;

#[derive(Debug, Clone)]
struct ThresholdSet {
    items: Vec<ItemCopy>,
    /// Shown items plus `items`.
    state: CoverageState,
}

/// Threshold sieve for one inter-visit segment.
#[derive(Debug, Clone)]
pub struct SieveSegment {
    k: usize,
    log_base: f64,
    base: CoverageState,
    best_singleton: f64,
    best_value: f64,
    sets: BTreeMap<i64, ThresholdSet>,
}

impl SieveSegment {
    /// `base` is everything shown before the segment.
    pub fn new(k: usize, epsilon: f64, base: CoverageState) -> Self {
        Self {
            k,
            log_base: (1.0 + epsilon).ln(),
            base,
            best_singleton: 0.0,
            best_value: 0.0,
            sets: BTreeMap::new(),
        }
    }

    pub fn thresholds(&self) -> impl Iterator<Item = f64> + '_ {
        self.sets.keys().map(|&h| (h as f64 * self.log_base).exp())
    }

    pub fn stored_copies(&self) -> usize {
        self.sets.values().map(|s| s.items.len()).sum()
    }

    pub fn offer(&mut self, copy: ItemCopy, oracle: &mut OracleCounter) {
        let singleton = oracle.gain(&self.base, &copy.item);
        self.best_singleton = self.best_singleton.max(singleton);
        let m = self.best_singleton;
        if m <= 0.0 {
            return;
        }
        let lower = self.best_value.max(m) / (2.0 * self.k as f64 * self.log_base.exp());
        let h_lo = (lower.ln() / self.log_base).ceil() as i64;
        let h_hi = (m.ln() / self.log_base).floor() as i64;
        self.sets = self.sets.split_off(&h_lo);
        for h in h_lo..=h_hi {
            let base = &self.base;
            let set = self.sets.entry(h).or_insert_with(|| ThresholdSet {
                items: Vec::new(),
                state: base.clone(),
            });
            if set.items.len() >= self.k {
                continue;
            }
            let tau = (h as f64 * self.log_base).exp();
            let gain = oracle.gain(&set.state, &copy.item);
            if gain >= tau {
                set.state.apply_item(&copy.item);
                set.items.push(copy.clone());
                self.best_value = self.best_value.max(set.state.value() - self.base.value());
            }
        }
    }

    /// Highest-valued threshold set (lowest threshold on ties) and its gain
    /// over the base. Empty when nothing was accepted.
    pub fn best(&self) -> (Vec<ItemCopy>, f64) {
        let base = self.base.value();
        let mut best: Option<(&ThresholdSet, f64)> = None;
        for set in self.sets.values() {
            let v = set.state.value() - base;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((set, v));
            }
        }
        best.map_or((Vec::new(), 0.0), |(s, v)| (s.items.clone(), v))
    }
}

#[derive(Debug, Clone)]
pub struct SievePlusPlus {
    k: usize,
    epsilon: f64,
    output_state: CoverageState,
    segment: SieveSegment,
    visits: usize,
    next_tag: u64,
    oracle: OracleCounter,
}

impl SievePlusPlus {
    pub fn new(k: usize, epsilon: f64) -> Result<Self, PolicyError> {
        if k == 0 {
            return Err(invalid("k", k, "must be positive"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", epsilon, "must be positive"));
        }
        Ok(Self {
            k,
            epsilon,
            output_state: CoverageState::new(),
            segment: SieveSegment::new(k, epsilon, CoverageState::new()),
            visits: 0,
            next_tag: 0,
            oracle: OracleCounter::default(),
        })
    }

    pub fn output_state(&self) -> &CoverageState {
        &self.output_state
    }
}

impl Policy for SievePlusPlus {
    fn step(&mut self, event: &StreamEvent) -> Option<OutputSet> {
        let copy = ItemCopy::new(event.item.clone(), self.next_tag);
        self.next_tag += 1;
        self.segment.offer(copy, &mut self.oracle);
        if !event.visit {
            return None;
        }
        self.visits += 1;
        let (items, gain) = self.segment.best();
        for c in &items {
            self.output_state.apply_item(&c.item);
        }
        self.segment = SieveSegment::new(self.k, self.epsilon, self.output_state.clone());
        Some(OutputSet {
            visit_index: self.visits,
            items,
            gain_at_emission: gain,
        })
    }

    fn oracle_calls(&self) -> u64 {
        self.oracle.calls()
    }

    fn stored_copies(&self) -> usize {
        self.segment.stored_copies()
    }
}
