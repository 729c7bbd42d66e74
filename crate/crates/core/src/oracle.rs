//! Exhaustive offline optimum for tiny instances.
//!
//! Shown copies are feasible iff each visit shows at most `k` items that had
//! arrived by that visit (a partition matroid with one part per visit).
//! Copies at different visits are distinct contributors, so every visit's
//! choice is enumerated independently.

use thiserror::Error;

use crate::coverage::CoverageState;
use crate::stream::StreamEvent;

/// Largest number of assignments [`brute_force_opt`] will enumerate.
pub const SEARCH_LIMIT: u128 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("search space of {combinations} assignments exceeds the limit of {limit}")]
    TooLarge { combinations: u128, limit: u128 },
    #[error("the stream has no visits")]
    NoVisits,
    #[error("optimum must be positive for a ratio check, got {0}")]
    NonPositiveOpt(f64),
}

/// Event indices shown at each visit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FeasibleAssignment {
    pub per_visit: Vec<Vec<usize>>,
}

impl FeasibleAssignment {
    /// Checks the per-visit budget and that every index had arrived by its
    /// visit.
    pub fn is_feasible(&self, events: &[StreamEvent], k: usize) -> bool {
        let visits = visit_positions(events);
        self.per_visit.len() == visits.len()
            && self
                .per_visit
                .iter()
                .zip(&visits)
                .all(|(set, &r)| set.len() <= k && set.iter().all(|&i| i <= r))
    }

    pub fn value(&self, events: &[StreamEvent]) -> f64 {
        CoverageState::recompute_from_scratch(self.per_visit.iter().flatten().map(|&i| events[i].item.as_ref()))
            .value()
    }
}

fn visit_positions(events: &[StreamEvent]) -> Vec<usize> {
    events.iter().enumerate().filter(|(_, e)| e.visit).map(|(i, _)| i).collect()
}

fn binomial(n: u128, r: u128) -> u128 {
    (0..r).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of assignments enumerated: `Π_t Σ_{s ≤ k} C(r_t, s)`.
pub fn search_space(events: &[StreamEvent], k: usize) -> u128 {
    visit_positions(events)
        .iter()
        .map(|&r| {
            let avail = r as u128 + 1;
            (0..=k.min(r + 1) as u128).map(|s| binomial(avail, s)).sum::<u128>()
        })
        .try_fold(1u128, |acc, n| acc.checked_mul(n))
        .unwrap_or(u128::MAX)
}

/// All subsets of `0..n` with at most `k` elements, in lexicographic order of
/// their sorted index lists (`[] < [0] < [0,1] < [1] < ...`).
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        if cur.len() == k {
            return;
        }
        for i in start..n {
            cur.push(i);
            extend(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    extend(0, n, k, &mut Vec::new(), &mut out);
    out
}

struct Search<'a> {
    events: &'a [StreamEvent],
    choices: Vec<Vec<Vec<usize>>>,
    state: CoverageState,
    current: Vec<usize>,
    best_value: f64,
    best: Vec<usize>,
}

impl Search<'_> {
    fn descend(&mut self, visit: usize) {
        if visit == self.choices.len() {
            // Strictly better only, so the first maximizer in lexicographic
            // order is kept.
            if self.state.value() > self.best_value + 1e-12 {
                self.best_value = self.state.value();
                self.best = self.current.clone();
            }
            return;
        }
        for c in 0..self.choices[visit].len() {
            for &i in &self.choices[visit][c] {
                self.state.apply_item(&self.events[i].item);
            }
            self.current.push(c);
            self.descend(visit + 1);
            self.current.pop();
            for &i in &self.choices[visit][c] {
                self.state
                    .remove_item(&self.events[i].item)
                    .expect("applied during this branch");
            }
        }
    }
}

/// Offline optimum and the lexicographically smallest maximizer.
pub fn brute_force_opt(events: &[StreamEvent], k: usize) -> Result<(f64, FeasibleAssignment), OracleError> {
    let visits = visit_positions(events);
    if visits.is_empty() {
        return Err(OracleError::NoVisits);
    }
    let combinations = search_space(events, k);
    if combinations > SEARCH_LIMIT {
        return Err(OracleError::TooLarge {
            combinations,
            limit: SEARCH_LIMIT,
        });
    }
    let choices: Vec<Vec<Vec<usize>>> = visits.iter().map(|&r| subsets(r + 1, k)).collect();
    let mut search = Search {
        events,
        choices,
        state: CoverageState::new(),
        current: Vec::new(),
        best_value: f64::NEG_INFINITY,
        best: Vec::new(),
    };
    search.descend(0);
    let per_visit = search
        .best
        .iter()
        .enumerate()
        .map(|(v, &c)| search.choices[v][c].clone())
        .collect();
    // Recompute rather than trust the incremental value.
    let assignment = FeasibleAssignment { per_visit };
    Ok((assignment.value(events), assignment))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCheck {
    pub passed: bool,
    /// `policy − bound·opt`; non-negative up to the 1e−9 slack when passing.
    pub margin: f64,
}

/// Passes iff `policy_value ≥ bound·opt_value − 1e−9`.
pub fn ratio_check(policy_value: f64, opt_value: f64, bound: f64) -> Result<RatioCheck, OracleError> {
    if opt_value <= 0.0 || opt_value.is_nan() {
        return Err(OracleError::NonPositiveOpt(opt_value));
    }
    let margin = policy_value - bound * opt_value;
    Ok(RatioCheck {
        passed: margin >= -1e-9,
        margin,
    })
}
