//! Storm++: one Storm instance per guess `g ∈ {δ, 2δ, …, ⌈T′/δ⌉δ}` of the
//! visit count, aggregated greedily at each visit.

use super::storm::{SkipSampling, Storm};
use super::{invalid, OracleCounter, OutputSet, Policy, PolicyError};
use crate::coverage::CoverageState;
use crate::seeding;
use crate::stream::StreamEvent;

/// `{δ, 2δ, …, ⌈T′/δ⌉δ}` in ascending order.
pub fn guess_set(tprime: usize, delta: usize) -> Vec<usize> {
    (1..=tprime.div_ceil(delta)).map(|i| i * delta).collect()
}

#[derive(Debug, Clone)]
pub struct StormPlusPlus {
    guesses: Vec<usize>,
    inner: Vec<Storm>,
    output_state: CoverageState,
    visits: usize,
    oracle: OracleCounter,
}

impl StormPlusPlus {
    pub fn new(tprime: usize, k: usize, delta: usize, skip: SkipSampling) -> Result<Self, PolicyError> {
        if delta == 0 {
            return Err(invalid("delta", delta, "must be positive"));
        }
        if tprime == 0 {
            return Err(invalid("tprime", tprime, "must be positive"));
        }
        let guesses = guess_set(tprime, delta);
        let inner = guesses
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let skip = match skip {
                    SkipSampling::Off => SkipSampling::Off,
                    SkipSampling::On { prob, seed } => SkipSampling::On {
                        prob,
                        seed: seeding::split(seed, i as u64),
                    },
                };
                Storm::new(g, k, skip)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            guesses,
            inner,
            output_state: CoverageState::new(),
            visits: 0,
            oracle: OracleCounter::default(),
        })
    }

    pub fn guesses(&self) -> &[usize] {
        &self.guesses
    }

    pub fn inner(&self) -> &[Storm] {
        &self.inner
    }

    pub fn output_state(&self) -> &CoverageState {
        &self.output_state
    }
}

impl Policy for StormPlusPlus {
    fn step(&mut self, event: &StreamEvent) -> Option<OutputSet> {
        let outputs: Vec<Option<OutputSet>> = self.inner.iter_mut().map(|s| s.step(event)).collect();
        if !event.visit {
            return None;
        }
        self.visits += 1;
        let mut best: Option<(OutputSet, f64)> = None;
        for out in outputs.into_iter().flatten() {
            let gain = self.oracle.gain_set(&self.output_state, out.item_refs());
            if best.as_ref().is_none_or(|(_, g)| gain > *g) {
                best = Some((out, gain));
            }
        }
        let (mut out, gain) = best.unwrap_or_else(|| (OutputSet::empty(self.visits), 0.0));
        for item in out.item_refs() {
            self.output_state.apply_item(item);
        }
        out.visit_index = self.visits;
        out.gain_at_emission = gain;
        Some(out)
    }

    fn oracle_calls(&self) -> u64 {
        self.oracle.calls() + self.inner.iter().map(Policy::oracle_calls).sum::<u64>()
    }

    fn stored_copies(&self) -> usize {
        self.inner.iter().map(Policy::stored_copies).sum()
    }

    fn exhausted(&self) -> bool {
        self.inner.iter().all(Policy::exhausted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Fixture;

    #[test]
    fn guess_sets() {
        assert_eq!(guess_set(3, 3), [3]);
        assert_eq!(guess_set(7, 3), [3, 6, 9]);
        assert_eq!(guess_set(5, 1), [1, 2, 3, 4, 5]);
        assert_eq!(guess_set(20, 10), [10, 20]);
        assert!(StormPlusPlus::new(3, 1, 0, SkipSampling::Off).is_err());
    }

    #[test]
    fn single_guess_matches_storm() {
        let events = Fixture::AppendixC3.events();
        let mut pp = StormPlusPlus::new(3, 1, 3, SkipSampling::Off).unwrap();
        let mut storm = Storm::new(3, 1, SkipSampling::Off).unwrap();
        for e in &events {
            assert_eq!(pp.step(e), storm.step(e));
        }
        assert!((pp.output_state().value() - 3.8).abs() < 1e-9);
        assert_eq!(pp.stored_copies(), storm.stored_copies());
    }

    #[test]
    fn memory_is_sum_over_guesses() {
        let events = Fixture::StormTight(9).events();
        let mut pp = StormPlusPlus::new(7, 1, 3, SkipSampling::Off).unwrap();
        let mut peak = 0;
        for e in &events {
            pp.step(e);
            peak = peak.max(pp.stored_copies());
        }
        assert!(peak <= 3 + 6 + 9);
    }
}
