//! Stochastic action models for the three atomic person-search actions.
//!
//! Each action carries its success/failure rates, a deadline, and the
//! piecewise-constant encounter rate over its local time. The Markov
//! decomposition in [`crate::sbt`] and the simulator in [`crate::sim`] both
//! consume these.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;
use crate::navgrid::{PathGeometry, RateSample};

pub const DEFAULT_P_S_PRIME: f64 = 0.9;
pub const DEFAULT_L_FAIL: f64 = 100.0;
pub const DEFAULT_MAX_WAIT: f64 = 300.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("confidence must lie in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("rate sweep is empty")]
    EmptySweep,
    #[error("search path has zero length")]
    EmptyPath,
}

/// Desired confidence `p′ₛ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(p: f64) -> Result<Self, ActionError> {
        if p > 0.0 && p < 1.0 {
            Ok(Self(p))
        } else {
            Err(ActionError::BadConfidence(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `−ln(1 − p′ₛ)`, the number of expected arrivals needed to reach the
    /// confidence.
    pub fn arrivals_needed(self) -> f64 {
        -(1.0 - self.0).ln()
    }
}

impl Default for Confidence {
    fn default() -> Self {
        Self(DEFAULT_P_S_PRIME)
    }
}

impl TryFrom<f64> for Confidence {
    type Error = ActionError;
    fn try_from(p: f64) -> Result<Self, ActionError> {
        Self::new(p)
    }
}

impl From<Confidence> for f64 {
    fn from(c: Confidence) -> f64 {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionParams {
    pub p_s_prime: Confidence,
    /// Expected distance between navigation failures, meters.
    pub l_fail: f64,
    /// Deadline used when a wait has no encounter rate at all.
    pub max_wait: f64,
}

impl Default for ActionParams {
    fn default() -> Self {
        Self {
            p_s_prime: Confidence::default(),
            l_fail: DEFAULT_L_FAIL,
            max_wait: DEFAULT_MAX_WAIT,
        }
    }
}

impl ActionParams {
    fn validate(&self) -> Result<(), ActionError> {
        for (name, value) in [("l_fail", self.l_fail), ("max_wait", self.max_wait)] {
            if !(value > 0.0) {
                return Err(ActionError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Wait,
    SearchPath,
    ReturnHome,
}

/// Encounter rate over the action's local time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RateProfile {
    Constant { rate: f64 },
    /// Sample `k` holds on `[t_k, t_{k+1})`.
    Stepwise { dt: f64, samples: Vec<RateSample> },
}

impl RateProfile {
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            RateProfile::Constant { rate } => *rate,
            RateProfile::Stepwise { dt, samples } => {
                let k = ((t / dt) + 1e-9).floor().max(0.0) as usize;
                samples[k.min(samples.len() - 1)].rate
            }
        }
    }

    /// `∫₀ᵗ μ(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            RateProfile::Constant { rate } => rate * t,
            RateProfile::Stepwise { dt, samples } => {
                let mut acc = 0.0;
                for (k, s) in samples.iter().enumerate() {
                    let lo = k as f64 * dt;
                    if lo >= t {
                        break;
                    }
                    let hi = if k + 1 == samples.len() { t } else { ((k + 1) as f64 * dt).min(t) };
                    acc += s.rate * (hi - lo);
                }
                acc
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            RateProfile::Constant { rate } => *rate == 0.0,
            RateProfile::Stepwise { samples, .. } => samples.iter().all(|s| s.rate == 0.0),
        }
    }
}

/// Where the robot is while the action runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionGeometry {
    Stationary { position: Point },
    Path { path: PathGeometry },
}

impl ActionGeometry {
    pub fn position_at(&self, t: f64) -> Point {
        match self {
            ActionGeometry::Stationary { position } => *position,
            ActionGeometry::Path { path } => path.point_at_time(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticAction {
    pub kind: ActionKind,
    /// `[i]` for a wait at place i, `[i, j]` for a path from i to j.
    pub places: Vec<usize>,
    /// μ, per second.
    pub success_rate: f64,
    /// ν, per second.
    pub failure_rate: f64,
    /// T′ for waits, `l / v̄` for paths; seconds.
    pub deadline: f64,
    pub profile: RateProfile,
    /// Navigation failure hazard while moving, `v̄ / l_fail`.
    pub nav_fail_rate: f64,
    pub p_s_prime: Confidence,
    /// Wait without any encounter rate; the deadline is the wait cap.
    pub degenerate: bool,
    /// Whether `pₛ,sp(ν⁻¹) ≤ exp(−l / (l_fail + l))` holds. Always true
    /// for waits. Actions failing it must not be scored.
    pub valid: bool,
    pub geometry: ActionGeometry,
}

impl StochasticAction {
    pub fn is_wait(&self) -> bool {
        self.kind == ActionKind::Wait
    }

    pub fn label(&self) -> String {
        match (self.kind, self.places.as_slice()) {
            (ActionKind::Wait, [i]) => format!("W{i}"),
            (ActionKind::SearchPath, [i, j]) => format!("S{i}→{j}"),
            (ActionKind::ReturnHome, _) => "Home".to_string(),
            _ => format!("{:?}", self.kind),
        }
    }

    pub fn path(&self) -> Option<&PathGeometry> {
        match &self.geometry {
            ActionGeometry::Path { path } => Some(path),
            ActionGeometry::Stationary { .. } => None,
        }
    }

    /// Standalone success probability at local time `t`.
    ///
    /// Waits follow the exponential CDF `1 − e^{−μ t}`. Paths accumulate the
    /// swept rate up to the path end: `1 − exp(−∫₀^{min(t, l/v̄)} μ_sp)`.
    pub fn success_probability(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.kind {
            ActionKind::Wait => 1.0 - (-self.success_rate * t).exp(),
            ActionKind::SearchPath | ActionKind::ReturnHome => {
                1.0 - (-self.profile.integral(t.min(self.deadline))).exp()
            }
        }
    }

    /// Standalone failure probability at local time `t`.
    ///
    /// * wait: 0 before T′, `1 − p′ₛ` from T′ on (1 for degenerate waits);
    /// * search path: `1 − exp(−v̄/l_fail · t)` before `ν⁻¹`,
    ///   `1 − pₛ,sp(ν⁻¹)` afterwards;
    /// * return home: navigation failures only.
    pub fn failure_probability(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self.kind {
            ActionKind::Wait => {
                if t < self.deadline {
                    0.0
                } else if self.degenerate {
                    1.0
                } else {
                    1.0 - self.p_s_prime.get()
                }
            }
            ActionKind::SearchPath => {
                let mean_fail = 1.0 / self.failure_rate;
                if t >= mean_fail {
                    1.0 - self.success_probability(mean_fail)
                } else {
                    1.0 - (-self.nav_fail_rate * t).exp()
                }
            }
            ActionKind::ReturnHome => 1.0 - (-self.nav_fail_rate * t.min(self.deadline)).exp(),
        }
    }
}

/// Wait at `place` with the encounter rate `mu_w` summed over the
/// detection disc.
pub fn make_wait(
    place: usize,
    position: Point,
    mu_w: f64,
    params: &ActionParams,
) -> Result<StochasticAction, ActionError> {
    params.validate()?;
    if !(mu_w >= 0.0 && mu_w.is_finite()) {
        return Err(ActionError::NonPositive {
            name: "wait rate",
            value: mu_w,
        });
    }
    let degenerate = mu_w == 0.0;
    let deadline = if degenerate {
        params.max_wait
    } else {
        params.p_s_prime.arrivals_needed() / mu_w
    };
    Ok(StochasticAction {
        kind: ActionKind::Wait,
        places: vec![place],
        success_rate: mu_w,
        failure_rate: 1.0 / deadline,
        deadline,
        profile: RateProfile::Constant { rate: mu_w },
        nav_fail_rate: 0.0,
        p_s_prime: params.p_s_prime,
        degenerate,
        valid: true,
        geometry: ActionGeometry::Stationary { position },
    })
}

/// Minimum over the sweep of `t_k − ln(1 − p′ₛ) / μ_sp,k`, skipping zero
/// rates. `None` when the whole sweep is zero.
pub fn earliest_expected_find(sweep: &[RateSample], p_s_prime: Confidence) -> Option<f64> {
    sweep
        .iter()
        .filter(|s| s.rate > 0.0)
        .map(|s| s.t + p_s_prime.arrivals_needed() / s.rate)
        .min_by(f64::total_cmp)
}

fn path_action(
    kind: ActionKind,
    route: (usize, usize),
    path: &PathGeometry,
    sweep: &[RateSample],
    params: &ActionParams,
) -> Result<StochasticAction, ActionError> {
    params.validate()?;
    if sweep.is_empty() {
        return Err(ActionError::EmptySweep);
    }
    let v = path.avg_speed;
    let l = path.length;
    let nav_fail_rate = v / params.l_fail;
    let success_rate = earliest_expected_find(sweep, params.p_s_prime).map_or(0.0, |t| 1.0 / t);
    let dt = if sweep.len() > 1 { sweep[1].t - sweep[0].t } else { 1.0 };
    let profile = RateProfile::Stepwise {
        dt,
        samples: sweep.to_vec(),
    };
    let mut action = StochasticAction {
        kind,
        places: vec![route.0, route.1],
        success_rate,
        failure_rate: if l > 0.0 { v / l + nav_fail_rate } else { nav_fail_rate },
        deadline: path.duration(),
        profile,
        nav_fail_rate,
        p_s_prime: params.p_s_prime,
        degenerate: false,
        valid: true,
        geometry: ActionGeometry::Path { path: path.clone() },
    };
    // the condition follows from the search failure model; the way home
    // only fails through navigation
    if kind == ActionKind::SearchPath && l > 0.0 {
        let mean_fail = 1.0 / action.failure_rate;
        action.valid = action.success_probability(mean_fail) <= (-l / (params.l_fail + l)).exp();
    }
    Ok(action)
}

/// Search along `path` from place `route.0` to `route.1`.
///
/// Fails when the path end is reached without a find or on a navigation
/// failure. `valid` records the law-of-total-probability condition.
pub fn make_search(
    route: (usize, usize),
    path: &PathGeometry,
    sweep: &[RateSample],
    params: &ActionParams,
) -> Result<StochasticAction, ActionError> {
    if !(path.length > 0.0) {
        return Err(ActionError::EmptyPath);
    }
    path_action(ActionKind::SearchPath, route, path, sweep, params)
}

/// Drive back to the help location. Only navigation failures count as
/// failure; a zero-length path gives a degenerate action with no states.
pub fn make_return_home(
    from: usize,
    path: &PathGeometry,
    sweep: &[RateSample],
    params: &ActionParams,
) -> Result<StochasticAction, ActionError> {
    path_action(ActionKind::ReturnHome, (from, 0), path, sweep, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn straight(l: f64, v: f64) -> PathGeometry {
        PathGeometry::new(vec![Point::new(0.0, 0.0), Point::new(l, 0.0)], v).unwrap()
    }

    fn uniform_sweep(path: &PathGeometry, rate: f64, dt: f64) -> Vec<RateSample> {
        let n = (path.duration() / dt - 1e-9).ceil() as usize;
        (0..=n).map(|k| RateSample { t: k as f64 * dt, rate }).collect()
    }

    #[test]
    fn wait_deadline_and_rates() {
        let w = make_wait(0, Point::default(), 0.1, &ActionParams::default()).unwrap();
        assert_relative_eq!(w.deadline, 23.025850929940457, max_relative = 1e-12);
        assert_relative_eq!(w.failure_rate, 0.04342944819032518, max_relative = 1e-12);
        assert_relative_eq!(w.success_probability(10.0), 1.0 - (-1.0f64).exp());
        assert!((w.deadline * w.success_rate - 10f64.ln()).abs() < 1e-9);
        // survival at T′ is exactly 1 − p′ₛ
        assert_relative_eq!(1.0 - w.success_probability(w.deadline), 0.1, max_relative = 1e-12);
        assert_eq!(w.failure_probability(w.deadline - 1e-6), 0.0);
        assert_relative_eq!(w.failure_probability(w.deadline), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_wait_uses_cap() {
        let w = make_wait(3, Point::default(), 0.0, &ActionParams::default()).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.deadline, DEFAULT_MAX_WAIT);
        assert_eq!(w.success_probability(1e6), 0.0);
        assert_eq!(w.failure_probability(DEFAULT_MAX_WAIT), 1.0);
    }

    #[test]
    fn search_failure_rate() {
        let p = straight(50.0, 0.5);
        let a = make_search((0, 1), &p, &uniform_sweep(&p, 0.0, 1.0), &ActionParams::default()).unwrap();
        assert_relative_eq!(a.failure_rate, 0.015, max_relative = 1e-12);
        assert_relative_eq!(1.0 / a.failure_rate, 66.66666666666667, max_relative = 1e-12);
        assert_eq!(a.success_rate, 0.0);
        assert_eq!(a.deadline, 100.0);
        assert!(a.valid);
    }

    #[test]
    fn constant_profile_minimizer_at_start() {
        let p = straight(50.0, 0.5);
        let sweep = uniform_sweep(&p, 0.1, 1.0);
        let t = earliest_expected_find(&sweep, Confidence::default()).unwrap();
        assert_relative_eq!(t, 23.025850929940457, max_relative = 1e-12);
    }

    #[test]
    fn two_sample_minimizer() {
        // hand check: min(0 + 2.302585/0.01, 30 + 2.302585/0.2)
        let sweep = [RateSample { t: 0.0, rate: 0.01 }, RateSample { t: 30.0, rate: 0.2 }];
        let by_hand = f64::min(10f64.ln() / 0.01, 30.0 + 10f64.ln() / 0.2);
        assert_relative_eq!(by_hand, 41.51292546497023, max_relative = 1e-12);
        let t = earliest_expected_find(&sweep, Confidence::default()).unwrap();
        assert_relative_eq!(t, by_hand, max_relative = 1e-12);
    }

    #[test]
    fn return_home_fails_only_by_navigation() {
        let p = straight(20.0, 0.5);
        let params = ActionParams::default();
        let h = make_return_home(2, &p, &uniform_sweep(&p, 0.0, 1.0), &params).unwrap();
        assert_eq!(h.success_rate, 0.0);
        assert_relative_eq!(h.nav_fail_rate, 0.005);
        assert_eq!(h.deadline, 40.0);
        for t in [0.0f64, 10.0, 39.0, 40.0, 100.0] {
            let expect = 1.0 - (-0.005 * t.min(40.0)).exp();
            assert_relative_eq!(h.failure_probability(t), expect);
        }
        let s = make_search((2, 0), &p, &uniform_sweep(&p, 0.0, 1.0), &params).unwrap();
        assert_eq!(s.success_rate, h.success_rate);
        // the search version jumps once ν⁻¹ has passed
        assert_relative_eq!(s.failure_probability(39.0), 1.0);
    }

    #[test]
    fn return_home_with_infinite_failure_distance() {
        let p = straight(20.0, 0.5);
        let params = ActionParams {
            l_fail: 1e300,
            ..Default::default()
        };
        let h = make_return_home(1, &p, &uniform_sweep(&p, 0.05, 1.0), &params).unwrap();
        for t in [0.0, 5.0, 39.9] {
            assert!(h.failure_probability(t) < 1e-290);
        }
    }

    #[test]
    fn degenerate_home_path() {
        let p = PathGeometry::new(vec![Point::new(1.0, 1.0)], 0.5).unwrap();
        let h = make_return_home(0, &p, &[RateSample { t: 0.0, rate: 0.3 }], &ActionParams::default()).unwrap();
        assert_eq!(h.deadline, 0.0);
        assert!(h.valid);
        assert_eq!(h.success_probability(5.0), 0.0);
        assert!(make_search((0, 1), &p, &[RateSample { t: 0.0, rate: 0.3 }], &ActionParams::default()).is_err());
    }

    #[test]
    fn guard_rejects_rich_paths() {
        // a long path through a busy area finds someone almost surely
        // before ν⁻¹, which the condition does not allow
        let p = straight(60.0, 0.5);
        let a = make_search((0, 1), &p, &uniform_sweep(&p, 0.5, 1.0), &ActionParams::default()).unwrap();
        assert!(!a.valid);
        let b = make_search((0, 1), &p, &uniform_sweep(&p, 0.001, 1.0), &ActionParams::default()).unwrap();
        assert!(b.valid);
        // the same route driven home carries no such condition
        let h = make_return_home(1, &p, &uniform_sweep(&p, 0.5, 1.0), &ActionParams::default()).unwrap();
        assert!(h.valid);
    }

    #[test]
    fn profile_integral() {
        let prof = RateProfile::Stepwise {
            dt: 1.0,
            samples: vec![
                RateSample { t: 0.0, rate: 1.0 },
                RateSample { t: 1.0, rate: 2.0 },
                RateSample { t: 2.0, rate: 4.0 },
            ],
        };
        assert_relative_eq!(prof.integral(0.5), 0.5);
        assert_relative_eq!(prof.integral(1.5), 2.0);
        assert_relative_eq!(prof.integral(2.0), 3.0);
        assert_eq!(prof.rate_at(1.999), 2.0);
        assert_eq!(prof.rate_at(7.0), 4.0);
    }

    #[test]
    fn bad_params() {
        assert!(Confidence::new(1.0).is_err());
        assert!(Confidence::new(0.0).is_err());
        let p = ActionParams {
            l_fail: 0.0,
            ..Default::default()
        };
        assert!(make_wait(0, Point::default(), 0.1, &p).is_err());
        assert!(make_wait(0, Point::default(), -0.1, &ActionParams::default()).is_err());
        let path = straight(5.0, 0.5);
        assert_eq!(
            make_search((0, 1), &path, &[], &ActionParams::default()).unwrap_err(),
            ActionError::EmptySweep
        );
    }

    #[test]
    fn action_json_has_kind_rates_and_profile() {
        let p = straight(2.0, 0.5);
        let a = make_search((1, 2), &p, &uniform_sweep(&p, 0.02, 1.0), &ActionParams::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&a).unwrap();
        assert_eq!(v["kind"], "SearchPath");
        assert_eq!(v["profile"]["samples"].as_array().unwrap().len(), 5);
        assert_eq!(v["p_s_prime"], 0.9);
        let back: StochasticAction = serde_json::from_value(v).unwrap();
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn more_rate_never_slows_the_expected_find(
            rates in proptest::collection::vec(0.0f64..0.3, 2..40),
            bump_at in 0usize..40, bump in 0.0f64..0.5,
        ) {
            let sweep: Vec<RateSample> = rates.iter().enumerate()
                .map(|(k, &r)| RateSample { t: k as f64, rate: r }).collect();
            let mut richer = sweep.clone();
            let i = bump_at % richer.len();
            richer[i].rate += bump;
            let path = PathGeometry::new(vec![Point::default(), Point::new((sweep.len() - 1) as f64 * 0.5, 0.0)], 0.5).unwrap();
            let params = ActionParams::default();
            let a = make_search((0, 1), &path, &sweep, &params).unwrap();
            let b = make_search((0, 1), &path, &richer, &params).unwrap();
            prop_assert!(b.success_rate >= a.success_rate);
        }

        #[test]
        fn longer_paths_take_longer_to_fail(l1 in 0.5f64..200.0, extra in 0.0f64..200.0) {
            let params = ActionParams::default();
            let mk = |l: f64| {
                let p = straight(l, 0.5);
                make_search((0, 1), &p, &uniform_sweep(&p, 0.0, 1.0), &params).unwrap()
            };
            prop_assert!(1.0 / mk(l1 + extra).failure_rate >= 1.0 / mk(l1).failure_rate);
        }

        #[test]
        fn zero_rate_search_never_succeeds(l in 0.5f64..100.0, t in 0.0f64..500.0) {
            let p = straight(l, 0.5);
            let a = make_search((0, 1), &p, &uniform_sweep(&p, 0.0, 1.0), &ActionParams::default()).unwrap();
            prop_assert_eq!(a.success_probability(t), 0.0);
        }
    }
}
