//! Self-check suites: fixture replay, objective properties, and randomized
//! competitive-ratio checks against the brute-force optimum.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::coverage::{CoverageState, Item, TopicId};
use crate::oracle::{brute_force_opt, ratio_check};
use crate::policy::{Horizon, PolicySpec, RunContext};
use crate::seeding;
use crate::stream::{Fixture, StreamEvent};

use super::run_events;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fixtures,
    Properties,
    Ratios,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixtures" => Ok(Self::Fixtures),
            "properties" => Ok(Self::Properties),
            "ratios" => Ok(Self::Ratios),
            other => Err(format!("unknown suite `{other}` (expected fixtures, properties or ratios)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Check> {
    match suite {
        Suite::Fixtures => fixtures(),
        Suite::Properties => properties(seed, 1000, 500),
        Suite::Ratios => ratios(seed, 200),
    }
}

fn check_value(name: impl Into<String>, got: f64, want: f64) -> Check {
    Check {
        name: name.into(),
        passed: (got - want).abs() <= 1e-9,
        detail: format!("got {got}, expected {want}"),
    }
}

fn fixture_run(fixture: Fixture, spec: PolicySpec, k: usize, tprime: usize) -> f64 {
    let events = fixture.events();
    let visits = events.iter().filter(|e| e.visit).count();
    let ctx = RunContext { k, visits, visit_bound: tprime, seed: 0 };
    run_events(&events, &spec, ctx, false).expect("fixture parameters are valid").total_coverage
}

fn storm(horizon: usize) -> PolicySpec {
    PolicySpec::Storm { horizon: Horizon::Fixed(horizon), skip: None }
}

/// Replays the hard-coded streams against their known values.
pub fn fixtures() -> Vec<Check> {
    let c3 = Fixture::AppendixC3;
    let mut checks = vec![
        check_value("appendix-c3/storm(3)", fixture_run(c3, storm(3), 1, 3), 3.8),
        check_value("appendix-c3/storm(2)", fixture_run(c3, storm(2), 1, 2), 3.0),
        check_value(
            "appendix-c3/stormpp(3,delta=3)",
            fixture_run(c3, PolicySpec::Stormpp { delta: 3, skip: None }, 1, 3),
            3.8,
        ),
        check_value("appendix-c3/lmgreedy", fixture_run(c3, PolicySpec::Lmgreedy { sample: None }, 1, 2), 3.8),
        check_value("appendix-c3/sievepp(eps=0.1)", fixture_run(c3, PolicySpec::Sievepp { epsilon: 0.1 }, 1, 2), 3.8),
        check_value("appendix-c3/preemption(c=1)", fixture_run(c3, PolicySpec::Preemption { c: 1.0 }, 1, 2), 3.0),
        check_value("appendix-c3/opt", brute_force_opt(&c3.events(), 1).expect("tiny").0, 3.8),
    ];

    for tprime in [2, 3, 5] {
        let fixture = Fixture::StormTight(tprime);
        let got = fixture_run(fixture, storm(tprime), 1, tprime);
        let (opt, _) = brute_force_opt(&fixture.events(), 1).expect("tiny");
        checks.push(check_value(format!("storm-tight({tprime})/storm"), got, 1.0));
        checks.push(check_value(format!("storm-tight({tprime})/opt"), opt, tprime as f64));
        let bound = 1.0 / (4.0 * tprime as f64);
        let r = ratio_check(got, opt, bound).expect("positive optimum");
        checks.push(Check {
            name: format!("storm-tight({tprime})/bound"),
            passed: r.passed,
            detail: format!("ratio {} vs bound {bound}", got / opt),
        });
    }

    let thm1 = Fixture::Thm1Adversarial.events();
    let ctx = RunContext { k: 1, visits: 2, visit_bound: 2, seed: 0 };
    let greedy = run_events(&thm1, &PolicySpec::Lmgreedy { sample: None }, ctx, false).expect("valid");
    let (opt, _) = brute_force_opt(&thm1, 1).expect("tiny");
    checks.push(check_value(
        "thm1-adversarial/lmgreedy first visit",
        greedy.outputs[0].gain_at_emission,
        2.0,
    ));
    checks.push(check_value("thm1-adversarial/opt", opt, 4.0));
    let r = ratio_check(greedy.total_coverage, opt, 0.5).expect("positive optimum");
    checks.push(Check {
        name: "thm1-adversarial/lmgreedy bound".into(),
        passed: r.passed,
        detail: format!("lmgreedy {} vs opt {opt}", greedy.total_coverage),
    });
    checks
}

fn random_item(rng: &mut ChaCha8Rng, id: usize, universe: u32, max_topics: usize) -> Item {
    let n = rng.gen_range(0..=max_topics);
    let topics: Vec<TopicId> = (0..n).map(|_| TopicId(rng.gen_range(0..universe))).collect();
    let p = match rng.gen_range(0..10) {
        0 => 0.0,
        1..=2 => 1.0,
        _ => rng.gen::<f64>(),
    };
    Item::new(format!("r{id}"), topics, p).expect("probability in range")
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12_f64.max(1e-9 * a.abs().max(b.abs()))
}

/// Monotonicity and submodularity on random `(A ⊆ B, e)` triples, and
/// apply/remove churn against from-scratch recomputation.
pub fn properties(seed: u64, triples: usize, churns: usize) -> Vec<Check> {
    let mut rng = seeding::rng(seed, 1);
    let (mut mono_fail, mut sub_fail) = (0, 0);
    for _ in 0..triples {
        let b: Vec<Item> = (0..rng.gen_range(0..20)).map(|i| random_item(&mut rng, i, 15, 4)).collect();
        let a: Vec<&Item> = b.iter().filter(|_| rng.gen_bool(0.5)).collect();
        let e = random_item(&mut rng, 99, 15, 4);
        let fa = CoverageState::recompute_from_scratch(a.iter().copied());
        let fb = CoverageState::recompute_from_scratch(&b);
        if fb.value() < fa.value() - 1e-9 {
            mono_fail += 1;
        }
        if fa.marginal_gain(&e) < fb.marginal_gain(&e) - 1e-9 {
            sub_fail += 1;
        }
    }

    let mut churn_fail = 0;
    let mut next_id = 0;
    for _ in 0..churns {
        let mut state = CoverageState::new();
        let mut held: Vec<Item> = Vec::new();
        for _ in 0..100 {
            let it = random_item(&mut rng, next_id, 10, 3);
            next_id += 1;
            state.apply_item(&it);
            held.push(it);
        }
        for _ in 0..200 {
            if !held.is_empty() && rng.gen_bool(0.5) {
                let victim = held.swap_remove(rng.gen_range(0..held.len()));
                state.remove_item(&victim).expect("held items were applied");
            } else {
                let it = random_item(&mut rng, next_id, 10, 3);
                next_id += 1;
                state.apply_item(&it);
                held.push(it);
            }
        }
        let fresh = CoverageState::recompute_from_scratch(&held);
        let cells_match = fresh
            .cells()
            .all(|(t, c)| state.cell(t).is_some_and(|s| s.contributor_count == c.contributor_count))
            && state.cells().count() == fresh.cells().count();
        if !rel_close(state.value(), fresh.value()) || !cells_match {
            churn_fail += 1;
        }
    }

    let summary = |name: &str, fails: usize, total: usize| Check {
        name: name.into(),
        passed: fails == 0,
        detail: format!("{}/{total} passed", total - fails),
    };
    vec![
        summary("properties/monotone", mono_fail, triples),
        summary("properties/submodular", sub_fail, triples),
        summary("properties/churn-vs-recompute", churn_fail, churns),
    ]
}

/// A random tiny instance for the ratio suite.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub events: Vec<StreamEvent>,
    pub k: usize,
    pub visits: usize,
    pub visit_bound: usize,
    pub delta: usize,
}

/// `N ≤ 8, k ≤ 2, T ≤ 3, T ≤ T′ ≤ 5, δ ≤ 3`.
pub fn tiny_instance(seed: u64, index: u64) -> TinyInstance {
    let mut rng = seeding::rng(seed, 1000 + index);
    let n = rng.gen_range(1..=8);
    let visits = rng.gen_range(1..=n.min(3));
    let visit_bound = rng.gen_range(visits..=5);
    let k = rng.gen_range(1..=2);
    let delta = rng.gen_range(1..=3);
    let universe = rng.gen_range(2..=6);
    let items: Vec<Item> = (0..n).map(|i| random_item(&mut rng, i, universe, 3)).collect();
    let mut schedule = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, visits) {
        schedule[i] = true;
    }
    TinyInstance {
        events: crate::stream::build_events(items, &schedule),
        k,
        visits,
        visit_bound,
        delta,
    }
}

impl TinyInstance {
    /// Policies under test with their guaranteed fraction of the optimum.
    pub fn bounded_policies(&self) -> Vec<(&'static str, PolicySpec, f64)> {
        vec![
            ("lmgreedy", PolicySpec::Lmgreedy { sample: None }, 0.5),
            ("storm(T)", PolicySpec::Storm { horizon: Horizon::Visits, skip: None }, 0.25),
            (
                "storm(T')",
                PolicySpec::Storm { horizon: Horizon::Bound, skip: None },
                1.0 / (4.0 * (self.visit_bound - self.visits + 1) as f64),
            ),
            (
                "stormpp",
                PolicySpec::Stormpp { delta: self.delta, skip: None },
                1.0 / (8.0 * self.delta as f64),
            ),
        ]
    }

    pub fn context(&self) -> RunContext {
        RunContext {
            k: self.k,
            visits: self.visits,
            visit_bound: self.visit_bound,
            seed: 0,
        }
    }
}

/// Competitive-ratio bounds on `count` random tiny streams, one check per
/// policy plus an optimum-dominates-everything check.
pub fn ratios(seed: u64, count: usize) -> Vec<Check> {
    let names = ["lmgreedy", "storm(T)", "storm(T')", "stormpp"];
    let mut fails: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    let mut worst = [f64::INFINITY; 4];
    let mut dominated = Vec::new();
    for index in 0..count as u64 {
        let inst = tiny_instance(seed, index);
        let (opt, _) = brute_force_opt(&inst.events, inst.k).expect("tiny instance within the search limit");
        for (slot, (_, spec, bound)) in inst.bounded_policies().into_iter().enumerate() {
            let report = run_events(&inst.events, &spec, inst.context(), false).expect("valid tiny parameters");
            if report.total_coverage > opt + 1e-9 {
                dominated.push(format!("#{index} {}", report.policy));
            }
            if opt <= 0.0 {
                continue;
            }
            let r = ratio_check(report.total_coverage, opt, bound).expect("positive optimum");
            worst[slot] = worst[slot].min(report.total_coverage / opt / bound);
            if !r.passed {
                fails[slot].push(format!("#{index}"));
            }
        }
    }
    let mut checks: Vec<Check> = names
        .iter()
        .zip(fails)
        .zip(worst)
        .map(|((name, failed), worst)| Check {
            name: format!("ratios/{name}"),
            passed: failed.is_empty(),
            detail: if failed.is_empty() {
                format!("{count}/{count} streams within bound, min value/(bound*opt) = {worst:.4}")
            } else {
                format!("{} failing streams: {}", failed.len(), failed.join(" "))
            },
        })
        .collect();
    checks.push(Check {
        name: "ratios/opt-dominates".into(),
        passed: dominated.is_empty(),
        detail: if dominated.is_empty() {
            format!("{count}/{count} streams")
        } else {
            dominated.join(" ")
        },
    });
    checks
}

/// Storm++ and Storm run with the smallest guess `≥ T`, on the same stream.
pub fn stormpp_vs_guess(inst: &TinyInstance) -> (f64, f64) {
    let guess = crate::policy::guess_set(inst.visit_bound, inst.delta)
        .into_iter()
        .find(|&g| g >= inst.visits)
        .expect("largest guess covers T′ ≥ T");
    let value = |spec: PolicySpec| {
        run_events(&inst.events, &spec, inst.context(), false)
            .expect("valid tiny parameters")
            .total_coverage
    };
    (
        value(PolicySpec::Stormpp { delta: inst.delta, skip: None }),
        value(PolicySpec::Storm { horizon: Horizon::Fixed(guess), skip: None }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!("ratios".parse::<Suite>().unwrap(), Suite::Ratios);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn tiny_instances_respect_limits() {
        for i in 0..50 {
            let t = tiny_instance(3, i);
            assert!(t.events.len() <= 8 && t.k <= 2 && t.visits <= 3);
            assert!(t.visits <= t.visit_bound && t.visit_bound <= 5 && t.delta <= 3);
            assert_eq!(t.events.iter().filter(|e| e.visit).count(), t.visits);
        }
    }

    #[test]
    fn small_property_run_passes() {
        assert!(properties(1, 50, 10).iter().all(|c| c.passed));
    }
}
