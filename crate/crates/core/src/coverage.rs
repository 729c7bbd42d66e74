//! Expected topic coverage.
//!
//! A topic `j` stays uncovered only if the user clicks none of the shown
//! copies that carry it, so with independent clicks
//!
//! ```text
//! f(S) = Σ_j (1 − Π_{i ∈ S, j ∈ topics(i)} (1 − p_i))
//! ```
//!
//! [`CoverageState`] keeps the per-topic survival product in a removable
//! form: certain clicks (`p = 1`) are counted instead of multiplied, and all
//! other factors are summed in log space, so an item can be taken back out
//! by subtraction. That is what lets Storm evict candidates from its union.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Dense topic identifier. Topics are discovered from the stream, so there
/// is no fixed universe size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicId(pub u32);

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverageError {
    #[error("click probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("contract violation: removing item `{item}` would underflow topic {topic}")]
    Underflow { item: String, topic: TopicId },
}

/// One stream element: an identifier, the topics it covers and the
/// probability that the user clicks it when shown.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    id: String,
    topics: Vec<TopicId>,
    click_prob: f64,
}

impl Item {
    /// Builds an item, sorting and deduplicating `topics`.
    pub fn new(
        id: impl Into<String>,
        topics: impl IntoIterator<Item = TopicId>,
        click_prob: f64,
    ) -> Result<Self, CoverageError> {
        if !(0.0..=1.0).contains(&click_prob) {
            return Err(CoverageError::InvalidProbability(click_prob));
        }
        let mut topics: Vec<TopicId> = topics.into_iter().collect();
        topics.sort_unstable();
        topics.dedup();
        Ok(Self {
            id: id.into(),
            topics,
            click_prob,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn topics(&self) -> &[TopicId] {
        &self.topics
    }

    pub fn click_prob(&self) -> f64 {
        self.click_prob
    }

    fn is_certain(&self) -> bool {
        self.click_prob >= 1.0
    }
}

pub type SharedItem = Arc<Item>;

/// A placement of an item. Every presentation of an item counts as an
/// independent Bernoulli trial, so two copies of the same item are distinct
/// contributors to the objective.
#[derive(Debug, Clone)]
pub struct ItemCopy {
    pub item: SharedItem,
    pub copy_tag: u64,
}

impl ItemCopy {
    pub fn new(item: SharedItem, copy_tag: u64) -> Self {
        Self { item, copy_tag }
    }
}

impl PartialEq for ItemCopy {
    fn eq(&self, other: &Self) -> bool {
        self.copy_tag == other.copy_tag && self.item.id == other.item.id
    }
}

impl Eq for ItemCopy {}

/// Removable survival product for a single topic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurvivalCell {
    /// Contributors with click probability exactly 1.
    pub zero_count: u32,
    /// Σ ln(1 − p) over contributors with p < 1.
    pub log_survival: f64,
    pub contributor_count: u32,
}

impl SurvivalCell {
    /// Probability that no contributor is clicked.
    pub fn survival(&self) -> f64 {
        if self.zero_count > 0 {
            0.0
        } else {
            self.log_survival.exp()
        }
    }

    fn log_terms(&self) -> u32 {
        self.contributor_count - self.zero_count
    }
}

/// Incrementally maintained expected coverage of a multiset of item copies.
#[derive(Debug, Clone, Default)]
pub struct CoverageState {
    cells: Vec<SurvivalCell>,
    value: f64,
    applied: usize,
}

impl CoverageState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds `apply_item` over `items`. Serves as the from-scratch reference
    /// for incremental states.
    pub fn recompute_from_scratch<'a>(items: impl IntoIterator<Item = &'a Item>) -> Self {
        let mut state = Self::new();
        for item in items {
            state.apply_item(item);
        }
        state
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Number of item copies currently applied.
    pub fn len(&self) -> usize {
        self.applied
    }

    pub fn is_empty(&self) -> bool {
        self.applied == 0
    }

    pub fn cell(&self, topic: TopicId) -> Option<&SurvivalCell> {
        self.cells
            .get(topic.0 as usize)
            .filter(|c| c.contributor_count > 0)
    }

    /// Iterates the topics with at least one contributor.
    pub fn cells(&self) -> impl Iterator<Item = (TopicId, &SurvivalCell)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contributor_count > 0)
            .map(|(i, c)| (TopicId(i as u32), c))
    }

    fn survival(&self, topic: TopicId) -> f64 {
        self.cells
            .get(topic.0 as usize)
            .map_or(1.0, SurvivalCell::survival)
    }

    /// `f(state ∪ {item}) − f(state)`.
    pub fn marginal_gain(&self, item: &Item) -> f64 {
        let p = item.click_prob;
        if p == 0.0 {
            return 0.0;
        }
        item.topics.iter().map(|&t| p * self.survival(t)).sum()
    }

    /// `f(state ∪ items) − f(state)` without touching the state.
    pub fn marginal_gain_set<'a>(&self, items: impl IntoIterator<Item = &'a Item>) -> f64 {
        // (topic, survival factor) pairs, grouped by topic after sorting.
        let mut factors: Vec<(TopicId, f64)> = Vec::new();
        for item in items {
            let q = 1.0 - item.click_prob;
            factors.extend(item.topics.iter().map(|&t| (t, q)));
        }
        factors.sort_unstable_by_key(|&(t, _)| t);

        let mut gain = 0.0;
        let mut i = 0;
        while i < factors.len() {
            let topic = factors[i].0;
            let mut product = 1.0;
            while i < factors.len() && factors[i].0 == topic {
                product *= factors[i].1;
                i += 1;
            }
            gain += self.survival(topic) * (1.0 - product);
        }
        gain
    }

    pub fn apply_item(&mut self, item: &Item) {
        if let Some(max) = item.topics.last() {
            let needed = max.0 as usize + 1;
            if self.cells.len() < needed {
                self.cells.resize(needed, SurvivalCell::default());
            }
        }
        let p = item.click_prob;
        let certain = item.is_certain();
        let log_q = (1.0 - p).ln();
        for &t in &item.topics {
            let cell = &mut self.cells[t.0 as usize];
            let before = cell.survival();
            if certain {
                cell.zero_count += 1;
            } else {
                cell.log_survival += log_q;
            }
            cell.contributor_count += 1;
            self.value += p * before;
        }
        self.applied += 1;
    }

    /// Inverse of [`CoverageState::apply_item`]. The state is left untouched
    /// when the item cannot have been applied.
    pub fn remove_item(&mut self, item: &Item) -> Result<(), CoverageError> {
        let certain = item.is_certain();
        for &t in &item.topics {
            let ok = self.cells.get(t.0 as usize).is_some_and(|c| {
                if certain {
                    c.zero_count > 0
                } else {
                    c.log_terms() > 0
                }
            });
            if !ok {
                return Err(CoverageError::Underflow {
                    item: item.id.clone(),
                    topic: t,
                });
            }
        }
        if self.applied == 0 {
            // Only reachable for items without topics.
            return Err(CoverageError::Underflow {
                item: item.id.clone(),
                topic: TopicId(u32::MAX),
            });
        }

        let log_q = (1.0 - item.click_prob).ln();
        for &t in &item.topics {
            let cell = &mut self.cells[t.0 as usize];
            let before = cell.survival();
            if certain {
                cell.zero_count -= 1;
            } else {
                cell.log_survival -= log_q;
            }
            cell.contributor_count -= 1;
            if cell.log_terms() == 0 {
                cell.log_survival = 0.0;
            }
            self.value += before - cell.survival();
        }
        self.applied -= 1;
        if self.applied == 0 {
            self.value = 0.0;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: &str, topics: &[u32], p: f64) -> Item {
        Item::new(id, topics.iter().map(|&t| TopicId(t)), p).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12_f64.max(1e-9 * a.abs().max(b.abs()))
    }

    /// Direct evaluation of the product formula, independent of the cells.
    fn brute_value(items: &[Item]) -> f64 {
        let mut topics: Vec<TopicId> = items.iter().flat_map(|i| i.topics.clone()).collect();
        topics.sort();
        topics.dedup();
        topics
            .iter()
            .map(|t| {
                let survive: f64 = items
                    .iter()
                    .filter(|i| i.topics.contains(t))
                    .map(|i| 1.0 - i.click_prob)
                    .product();
                1.0 - survive
            })
            .sum()
    }

    #[test]
    fn value_examples() {
        assert_eq!(CoverageState::new().value(), 0.0);
        let s = CoverageState::recompute_from_scratch([&item("a", &[1, 2], 1.0)]);
        assert_eq!(s.value(), 2.0);
        let s = CoverageState::recompute_from_scratch([
            &item("c", &[3, 4], 0.9),
            &item("d", &[5, 6], 1.0),
        ]);
        assert!(close(s.value(), 3.8));
    }

    #[test]
    fn gain_examples() {
        let mut s = CoverageState::new();
        let one = item("a", &[1], 1.0);
        assert_eq!(s.marginal_gain(&one), 1.0);
        s.apply_item(&one);
        assert_eq!(s.marginal_gain(&one), 0.0);
        assert!(close(s.marginal_gain(&item("c", &[3, 4], 0.9)), 1.8));
    }

    #[test]
    fn gain_set_examples() {
        let mut s = CoverageState::new();
        assert_eq!(s.marginal_gain_set(std::iter::empty()), 0.0);
        s.apply_item(&item("c", &[3, 4], 0.9));
        assert!(close(s.marginal_gain_set([&item("d", &[5, 6], 1.0)]), 2.0));

        let half = item("h", &[1], 0.5);
        let empty = CoverageState::new();
        assert!(close(empty.marginal_gain_set([&half, &half]), 0.75));
    }

    #[test]
    fn apply_and_remove_examples() {
        let mut s = CoverageState::new();
        let one = item("a", &[1], 1.0);
        s.apply_item(&one);
        assert_eq!(s.value(), 1.0);
        s.remove_item(&one).unwrap();
        assert_eq!(s.value(), 0.0);

        let half = item("h", &[1], 0.5);
        s.apply_item(&half);
        s.apply_item(&half);
        assert!(close(s.value(), 0.75));
        s.remove_item(&half).unwrap();
        assert!(close(s.value(), 0.5));
    }

    #[test]
    fn removing_unapplied_item_is_a_contract_violation() {
        let mut s = CoverageState::new();
        s.apply_item(&item("a", &[1], 0.5));
        let err = s.remove_item(&item("b", &[1, 7], 0.5)).unwrap_err();
        assert_eq!(
            err,
            CoverageError::Underflow {
                item: "b".into(),
                topic: TopicId(7)
            }
        );
        // A p = 1 removal needs a certain contributor, not a log term.
        assert!(s.remove_item(&item("c", &[1], 1.0)).is_err());
        assert!(close(s.value(), 0.5));
        assert!(CoverageState::new().remove_item(&item("e", &[], 0.3)).is_err());
    }

    #[test]
    fn empty_topic_sets_contribute_nothing() {
        let mut s = CoverageState::new();
        let blank = item("z", &[], 0.7);
        assert_eq!(s.marginal_gain(&blank), 0.0);
        s.apply_item(&blank);
        assert_eq!(s.value(), 0.0);
        s.remove_item(&blank).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn duplicate_topics_are_collapsed() {
        let it = item("d", &[2, 2, 1], 1.0);
        assert_eq!(it.topics(), &[TopicId(1), TopicId(2)]);
        assert!(Item::new("x", [], 1.5).is_err());
    }

    #[test]
    fn copies_compare_by_id_and_tag() {
        let a = Arc::new(item("a", &[1], 1.0));
        let a2 = Arc::new(item("a", &[1], 1.0));
        assert_eq!(ItemCopy::new(a.clone(), 3), ItemCopy::new(a2, 3));
        assert_ne!(ItemCopy::new(a.clone(), 3), ItemCopy::new(a, 4));
    }

    fn arb_item() -> impl Strategy<Value = Item> {
        (
            prop::collection::vec(0u32..12, 0..4),
            prop_oneof![Just(1.0), Just(0.0), 0.0..1.0f64],
        )
            .prop_map(|(topics, p)| item("x", &topics, p))
    }

    proptest! {
        #[test]
        fn incremental_matches_product_formula(items in prop::collection::vec(arb_item(), 0..20)) {
            let s = CoverageState::recompute_from_scratch(&items);
            prop_assert!(close(s.value(), brute_value(&items)));
        }

        #[test]
        fn gain_set_is_additive(base in prop::collection::vec(arb_item(), 0..10), a in arb_item(), b in arb_item()) {
            let mut s = CoverageState::recompute_from_scratch(&base);
            let pair = s.marginal_gain_set([&a, &b]);
            let first = s.marginal_gain(&a);
            s.apply_item(&a);
            let second = s.marginal_gain(&b);
            prop_assert!(close(pair, first + second));
        }

        #[test]
        fn apply_remove_round_trip(base in prop::collection::vec(arb_item(), 0..10), extra in arb_item()) {
            let mut s = CoverageState::recompute_from_scratch(&base);
            let before = s.clone();
            let gain = s.marginal_gain(&extra);
            s.apply_item(&extra);
            prop_assert!(close(s.value(), before.value() + gain));
            s.remove_item(&extra).unwrap();
            prop_assert!(close(s.value(), before.value()));
            for (t, cell) in before.cells() {
                prop_assert_eq!(s.cell(t).unwrap().contributor_count, cell.contributor_count);
            }
            prop_assert_eq!(s.cells().count(), before.cells().count());
        }

        #[test]
        fn diminishing_returns(a in prop::collection::vec(arb_item(), 0..6), extra in prop::collection::vec(arb_item(), 0..6), e in arb_item()) {
            let small = CoverageState::recompute_from_scratch(&a);
            let big = CoverageState::recompute_from_scratch(a.iter().chain(&extra));
            prop_assert!(big.value() >= small.value() - 1e-9);
            prop_assert!(small.marginal_gain(&e) >= big.marginal_gain(&e) - 1e-9);
        }
    }
}
