//! Person-search behavior trees and their stochastic analysis.
//!
//! A tree is a fallback over stochastic actions closed by a return to the
//! help location. Its execution is unrolled into an age-expanded Markov
//! chain: transient state `(child, k)` means child `child` is running and
//! has been for `k` steps. Per step, mass either finds a person (absorbed
//! in the child's success state), suffers a navigation failure, or ages.
//! Deadline expiry hands the mass to the next child; the last child's
//! failure is absorbed in one of two failure states.
//!
//! A child whose deadline is not a multiple of the step length runs only
//! for the remaining fraction of its final step; the rest of that step is
//! idle. Per-action success probabilities are therefore independent of the
//! step length, while start times of later children round up to the next
//! step boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionKind, StochasticAction};

pub const DEFAULT_DT: f64 = 1.0;
pub const DEFAULT_T_MAX: f64 = 200.0;

const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("tree has no children")]
    Empty,
    #[error("tree must end with exactly one return-home action")]
    MissingReturnHome,
    #[error("child {index} ({label}) violates the total-probability condition")]
    InvalidAction { index: usize, label: String },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// What happens after a navigation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavFailurePolicy {
    /// The failed action returns failure and the fallback ticks the next one.
    #[default]
    SkipToNext,
    /// The whole run fails.
    AbortRun,
}

/// Interpretation switches shared by the chain and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSemantics {
    pub nav_failure: NavFailurePolicy,
    /// Whether meeting someone on the way back home counts as success.
    pub home_finds_count: bool,
}

impl Default for ChainSemantics {
    fn default() -> Self {
        Self {
            nav_failure: NavFailurePolicy::SkipToNext,
            home_finds_count: true,
        }
    }
}

impl ChainSemantics {
    /// Encounter rate the analysis attributes to `action` at local time `t`.
    pub fn success_rate_at(&self, action: &StochasticAction, t: f64) -> f64 {
        if action.kind == ActionKind::ReturnHome && !self.home_finds_count {
            0.0
        } else {
            action.profile.rate_at(t)
        }
    }
}

/// Number of steps a child occupies.
pub fn step_count(deadline: f64, dt: f64) -> usize {
    if deadline <= 0.0 {
        0
    } else {
        (deadline / dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// Active duration of step `k` of a child with the given deadline.
pub fn active_duration(deadline: f64, dt: f64, k: usize) -> f64 {
    let n = step_count(deadline, dt);
    if k + 1 == n {
        (deadline - k as f64 * dt).clamp(0.0, dt)
    } else {
        dt
    }
}

/// Mean of the first arrival time within `[0, a)` at rate `mu`, given
/// that one happened.
pub fn conditional_arrival_offset(mu: f64, a: f64) -> f64 {
    let x = mu * a;
    if x < 1e-4 {
        a * (0.5 - x / 12.0)
    } else {
        1.0 / mu - a * (-x).exp() / (-(-x).exp_m1())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    children: Vec<StochasticAction>,
    pub label: String,
}

impl SearchTree {
    pub fn new(children: Vec<StochasticAction>) -> Result<Self, TreeError> {
        if children.is_empty() {
            return Err(TreeError::Empty);
        }
        let homes = children.iter().filter(|c| c.kind == ActionKind::ReturnHome).count();
        if homes != 1 || children.last().map(|c| c.kind) != Some(ActionKind::ReturnHome) {
            return Err(TreeError::MissingReturnHome);
        }
        if let Some((index, c)) = children.iter().enumerate().find(|(_, c)| !c.valid) {
            return Err(TreeError::InvalidAction { index, label: c.label() });
        }
        let label = children.iter().map(StochasticAction::label).collect::<Vec<_>>().join(", ");
        Ok(Self { children, label })
    }

    pub fn children(&self) -> &[StochasticAction] {
        &self.children
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChildBlock {
    pub first_state: usize,
    pub steps: usize,
}

/// Age-expanded chain of one tree. Transient states come first, then one
/// success state per child, then the exhausted and navigation failure
/// states.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub dt: f64,
    pub blocks: Vec<ChildBlock>,
    transient: usize,
    rows: Vec<Row>,
    success_prob: Vec<f64>,
    success_time: Vec<f64>,
    pub initial: usize,
}

impl MarkovModel {
    pub fn n_transient(&self) -> usize {
        self.transient
    }

    pub fn n_states(&self) -> usize {
        self.transient + self.blocks.len() + 2
    }

    pub fn success_state(&self, child: usize) -> usize {
        self.transient + child
    }

    pub fn failure_exhausted(&self) -> usize {
        self.transient + self.blocks.len()
    }

    pub fn failure_navigation(&self) -> usize {
        self.failure_exhausted() + 1
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        state >= self.transient
    }

    /// Outgoing transitions of `state` for one step.
    pub fn row(&self, state: usize) -> Vec<(usize, f64)> {
        if self.is_absorbing(state) {
            vec![(state, 1.0)]
        } else {
            self.rows[state].entries().to_vec()
        }
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_drift(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.entries().iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// At most three outgoing transitions: find, navigation failure, aging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Row {
    len: usize,
    entries: [(usize, f64); 3],
}

impl Row {
    fn entries(&self) -> &[(usize, f64)] {
        &self.entries[..self.len]
    }

    fn push_merged(&mut self, target: usize, p: f64) {
        if p == 0.0 {
            return;
        }
        match self.entries[..self.len].iter_mut().find(|(t, _)| *t == target) {
            Some(entry) => entry.1 += p,
            None => {
                self.entries[self.len] = (target, p);
                self.len += 1;
            }
        }
    }
}

/// Builds the step-`dt` chain of `tree`.
pub fn decompose(tree: &SearchTree, dt: f64, semantics: &ChainSemantics) -> Result<MarkovModel, TreeError> {
    if tree.is_empty() {
        return Err(TreeError::Empty);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TreeError::NonPositive { name: "dt", value: dt });
    }
    let children = tree.children();
    let mut blocks = Vec::with_capacity(children.len());
    let mut transient = 0;
    for c in children {
        let steps = step_count(c.deadline, dt);
        blocks.push(ChildBlock {
            first_state: transient,
            steps,
        });
        transient += steps;
    }
    let exhausted = transient + children.len();
    let navigation = exhausted + 1;
    // first runnable child at or after `i`, else the given failure state
    let entry = |i: usize, fallthrough: usize| -> usize {
        blocks[i.min(blocks.len())..]
            .iter()
            .find(|b| b.steps > 0)
            .map_or(fallthrough, |b| b.first_state)
    };

    let mut rows = Vec::with_capacity(transient);
    let mut success_prob = Vec::with_capacity(transient);
    let mut success_time = Vec::with_capacity(transient);
    for (i, (c, b)) in children.iter().zip(&blocks).enumerate() {
        let after_deadline = entry(i + 1, exhausted);
        let after_nav = match semantics.nav_failure {
            NavFailurePolicy::SkipToNext => entry(i + 1, navigation),
            NavFailurePolicy::AbortRun => navigation,
        };
        for k in 0..b.steps {
            let active = active_duration(c.deadline, dt, k);
            let mu = semantics.success_rate_at(c, k as f64 * dt);
            let keep = (-mu * active).exp();
            let p_succ = -(-mu * active).exp_m1();
            let p_nav = keep * -(-c.nav_fail_rate * active).exp_m1();
            let p_age = keep * (-c.nav_fail_rate * active).exp();
            let age_target = if k + 1 < b.steps { b.first_state + k + 1 } else { after_deadline };
            let mut row = Row::default();
            row.push_merged(transient + i, p_succ);
            row.push_merged(after_nav, p_nav);
            row.push_merged(age_target, p_age);
            rows.push(row);
            success_prob.push(p_succ);
            success_time.push(if p_succ > 0.0 { conditional_arrival_offset(mu, active) } else { 0.0 });
        }
    }
    let model = MarkovModel {
        dt,
        initial: entry(0, exhausted),
        blocks,
        transient,
        rows,
        success_prob,
        success_time,
    };
    assert!(
        model.max_row_drift() <= STOCHASTIC_TOLERANCE,
        "transition rows are not stochastic"
    );
    Ok(model)
}

/// Success and failure probability of a tree over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeScore {
    pub dt: f64,
    pub times: Vec<f64>,
    pub p_success: Vec<f64>,
    pub p_fail: Vec<f64>,
    /// Mean time to a find, conditional on a find by `t_max`. `None` when
    /// nothing can be found.
    pub expected_time_to_success: Option<f64>,
    /// Success mass by `t_max` attributed to each child.
    pub success_by_child: Vec<f64>,
    pub fail_exhausted: f64,
    pub fail_navigation: f64,
}

impl TreeScore {
    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("score has samples")
    }

    pub fn final_success(&self) -> f64 {
        *self.p_success.last().expect("score has samples")
    }

    pub fn final_failure(&self) -> f64 {
        *self.p_fail.last().expect("score has samples")
    }

    fn index_at(&self, t: f64) -> usize {
        let i = (t / self.dt + 1e-9).floor().max(0.0) as usize;
        i.min(self.times.len() - 1)
    }

    /// `pₛ,T(t)` at the last step boundary not after `t`.
    pub fn p_success_at(&self, t: f64) -> f64 {
        self.p_success[self.index_at(t)]
    }

    pub fn p_fail_at(&self, t: f64) -> f64 {
        self.p_fail[self.index_at(t)]
    }

    /// Curve as `t_s,p_success,p_fail`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "p_success", "p_fail"])?;
        for ((t, s), f) in self.times.iter().zip(&self.p_success).zip(&self.p_fail) {
            w.write_record([t.to_string(), s.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Propagates the chain from its initial state for `ceil(t_max / dt)`
/// steps.
///
/// # Panics
///
/// If the rows are not stochastic or probability mass is not conserved.
pub fn transient(model: &MarkovModel, t_max: f64) -> TreeScore {
    assert!(
        model.max_row_drift() <= STOCHASTIC_TOLERANCE,
        "transition rows are not stochastic"
    );
    let dt = model.dt;
    let steps = (t_max / dt - 1e-9).ceil().max(1.0) as usize;
    let n = model.n_states();
    let transient_n = model.n_transient();
    let success_range = transient_n..transient_n + model.blocks.len();

    let mut pi = vec![0.0; n];
    pi[model.initial] = 1.0;
    let mut next = vec![0.0; n];
    let mut times = Vec::with_capacity(steps + 1);
    let mut p_success = Vec::with_capacity(steps + 1);
    let mut p_fail = Vec::with_capacity(steps + 1);
    let record = |pi: &[f64], times: &mut Vec<f64>, ps: &mut Vec<f64>, pf: &mut Vec<f64>, t: f64| {
        times.push(t);
        ps.push(pi[success_range.clone()].iter().sum());
        pf.push(pi[model.failure_exhausted()] + pi[model.failure_navigation()]);
    };
    record(&pi, &mut times, &mut p_success, &mut p_fail, 0.0);

    // after `s` steps no child can be older than `s`, so only the first
    // `s + 1` ages of each block can hold mass
    let mut weighted_time = 0.0;
    for s in 0..steps {
        for b in &model.blocks {
            next[b.first_state..b.first_state + b.steps.min(s + 2)].fill(0.0);
        }
        next[transient_n..].copy_from_slice(&pi[transient_n..]);
        let t0 = s as f64 * dt;
        for b in &model.blocks {
            let active = b.first_state..b.first_state + b.steps.min(s + 1);
            for (state, &m) in active.clone().zip(&pi[active]) {
                if m == 0.0 {
                    continue;
                }
                for &(target, p) in model.rows[state].entries() {
                    next[target] += m * p;
                }
                weighted_time += m * model.success_prob[state] * (t0 + model.success_time[state]);
            }
        }
        std::mem::swap(&mut pi, &mut next);
        let total: f64 = model
            .blocks
            .iter()
            .map(|b| pi[b.first_state..b.first_state + b.steps.min(s + 2)].iter().sum::<f64>())
            .sum::<f64>()
            + pi[transient_n..].iter().sum::<f64>();
        assert!(
            (total - 1.0).abs() <= STOCHASTIC_TOLERANCE,
            "probability mass drifted to {total}"
        );
        record(&pi, &mut times, &mut p_success, &mut p_fail, (s + 1) as f64 * dt);
    }

    let final_success: f64 = *p_success.last().expect("recorded");
    TreeScore {
        dt,
        expected_time_to_success: (final_success > 0.0).then(|| weighted_time / final_success),
        success_by_child: pi[success_range].to_vec(),
        fail_exhausted: pi[model.failure_exhausted()],
        fail_navigation: pi[model.failure_navigation()],
        times,
        p_success,
        p_fail,
    }
}

pub fn score(tree: &SearchTree, dt: f64, t_max: f64, semantics: &ChainSemantics) -> Result<TreeScore, TreeError> {
    if !(t_max >= dt) {
        return Err(TreeError::NonPositive {
            name: "t_max - dt",
            value: t_max - dt,
        });
    }
    Ok(transient(&decompose(tree, dt, semantics)?, t_max))
}
