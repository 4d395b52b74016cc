//! Exact regime filter for the hidden chain observed through fills.
//!
//! Between fills the belief follows the deterministic drift
//! `dπᵢ/dt = (Qᵀπ)ᵢ + πᵢ Σ_sides 1_side (Λ̂_side(π) − Λᵢ,side)`, and at a
//! fill on one side it is reweighted by the regime likelihoods,
//! `πᵢ ← πᵢ Λᵢ(δ) / Σⱼ πⱼ Λⱼ(δ)`.

use thiserror::Error;

use crate::hjb_partial::{reduced_coeffs, ReducedCoeffs};
use crate::intensity::IntensityError;
use crate::model::{ModelSpec, Side};
use crate::policy::{Policy, PolicyContext, Quote, QuotePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("filter state {0:?} is not in the open simplex")]
    InvalidState(Vec<f64>),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error("integration step underflow on segment [{t0}, {t1}]")]
    StepUnderflow { t0: f64, t1: f64 },
    #[error("event times must be sorted and inside [0, {horizon}]")]
    EventOrder { horizon: f64 },
    #[error("attractor not defined: {0}")]
    Unsupported(String),
    #[error("no attractor root in (0, 1): {0}")]
    NoRoot(String),
}

pub type Result<T> = std::result::Result<T, FilterError>;

const SIMPLEX_TOL: f64 = 1e-10;
const FLOOR: f64 = 1e-300;
const MAX_STEP: f64 = 1e-3;

/// Belief over the hidden regimes, a point of the open simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    probs: Vec<f64>,
}

impl FilterState {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        let interior = probs.len() == 1 || probs.iter().all(|&p| p > 0.0 && p < 1.0);
        if probs.is_empty() || !interior || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(FilterError::InvalidState(probs));
        }
        Ok(FilterState { probs })
    }

    /// Two-regime state with probability `p` on regime 1.
    pub fn two_regime(p: f64) -> Result<Self> {
        Self::new(vec![p, 1.0 - p])
    }

    pub fn initial(spec: &ModelSpec) -> Result<Self> {
        Self::new(spec.initial_filter.clone())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Observable fill intensities `λ̂±` and the per-regime values behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableRates {
    pub bid_rate: f64,
    pub ask_rate: f64,
    pub bid_components: Vec<f64>,
    pub ask_components: Vec<f64>,
}

impl ObservableRates {
    pub fn rate(&self, side: Side) -> f64 {
        match side {
            Side::Bid => self.bid_rate,
            Side::Ask => self.ask_rate,
        }
    }

    pub fn total(&self) -> f64 {
        self.bid_rate + self.ask_rate
    }
}

/// Per-regime intensities on `side`, or `None` when the side is gated off.
fn side_components(spec: &ModelSpec, side: Side, quote: Quote, n: i64) -> Result<Option<Vec<f64>>> {
    match quote {
        Quote::Spread(delta) if spec.inventory_cap.side_open(side, n) => Ok(Some(
            spec.regimes.iter().map(|r| r.intensity(side).eval(delta)).collect::<std::result::Result<_, _>>()?,
        )),
        _ => Ok(None),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn observable_rates(probs: &[f64], quotes: QuotePair, n: i64, spec: &ModelSpec) -> Result<ObservableRates> {
    let k = spec.num_regimes();
    let bid = side_components(spec, Side::Bid, quotes.bid, n)?;
    let ask = side_components(spec, Side::Ask, quotes.ask, n)?;
    Ok(ObservableRates {
        bid_rate: bid.as_deref().map_or(0.0, |c| dot(probs, c)),
        ask_rate: ask.as_deref().map_or(0.0, |c| dot(probs, c)),
        bid_components: bid.unwrap_or_else(|| vec![0.0; k]),
        ask_components: ask.unwrap_or_else(|| vec![0.0; k]),
    })
}

/// Deterministic drift of the filter between fills.
pub fn drift(probs: &[f64], quotes: QuotePair, n: i64, spec: &ModelSpec) -> Result<Vec<f64>> {
    let mut out = spec.generator.transpose_apply(probs);
    for (side, quote) in [(Side::Bid, quotes.bid), (Side::Ask, quotes.ask)] {
        if let Some(c) = side_components(spec, side, quote, n)? {
            let avg = dot(probs, &c);
            for (o, (p, l)) in out.iter_mut().zip(probs.iter().zip(&c)) {
                *o += p * (avg - l);
            }
        }
    }
    Ok(out)
}

/// Project onto the simplex, flooring coordinates at `1e-300`. Returns the
/// number of coordinates that were floored.
fn renormalize(probs: &mut [f64]) -> usize {
    let mut clamps = 0;
    for p in probs.iter_mut() {
        if !(*p >= FLOOR) {
            *p = FLOOR;
            clamps += 1;
        }
    }
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    if clamps > 0 {
        log::debug!("filter coordinates floored at {FLOOR:e}: {clamps}");
    }
    clamps
}

/// Bayes update at a fill on `side` quoted at `spread`.
pub fn jump_update(state: &FilterState, side: Side, spread: f64, spec: &ModelSpec) -> Result<FilterState> {
    Ok(FilterState { probs: jump_update_probs(&state.probs, side, spread, spec)? })
}

/// [`jump_update`] on a raw probability vector.
pub fn jump_update_probs(probs: &[f64], side: Side, spread: f64, spec: &ModelSpec) -> Result<Vec<f64>> {
    let mut probs = probs.to_vec();
    for (p, regime) in probs.iter_mut().zip(&spec.regimes) {
        *p *= regime.intensity(side).eval(spread)?;
    }
    renormalize(&mut probs);
    Ok(probs)
}

/// State for integrating the filter with a feedback policy between fills.
pub struct FilterFlow<'a, P: Policy + ?Sized> {
    pub spec: &'a ModelSpec,
    pub policy: &'a P,
    /// Largest RK4 step.
    pub max_step: f64,
    /// True regime handed to policies that need it.
    pub regime: Option<usize>,
}

impl<'a, P: Policy + ?Sized> FilterFlow<'a, P> {
    pub fn new(spec: &'a ModelSpec, policy: &'a P) -> Self {
        FilterFlow { spec, policy, max_step: MAX_STEP, regime: None }
    }

    fn rhs(&self, t: f64, n: i64, probs: &[f64]) -> Result<Vec<f64>> {
        let quotes = self.policy.quotes(&PolicyContext { t, inventory: n, filter: probs, regime: self.regime });
        drift(probs, quotes, n, self.spec)
    }

    fn rk4_step(&self, t: f64, h: f64, n: i64, probs: &mut [f64]) -> Result<usize> {
        let k1 = self.rhs(t, n, probs)?;
        let shift = |k: &[f64], s: f64| -> Vec<f64> { probs.iter().zip(k).map(|(p, d)| p + s * d).collect() };
        let k2 = self.rhs(t + 0.5 * h, n, &shift(&k1, 0.5 * h))?;
        let k3 = self.rhs(t + 0.5 * h, n, &shift(&k2, 0.5 * h))?;
        let k4 = self.rhs(t + h, n, &shift(&k3, h))?;
        for (i, p) in probs.iter_mut().enumerate() {
            *p += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(renormalize(probs))
    }

    /// Integrate from `t0` to `t1` with `steps` equal RK4 steps.
    pub fn integrate_fixed(&self, probs: &mut [f64], n: i64, t0: f64, t1: f64, steps: usize) -> Result<usize> {
        let h = (t1 - t0) / steps as f64;
        let mut clamps = 0;
        for s in 0..steps {
            clamps += self.rk4_step(t0 + s as f64 * h, h, n, probs)?;
        }
        Ok(clamps)
    }

    /// Integrate a fill-free segment with step `min(max_step, gap/10)`.
    pub fn advance(&self, probs: &mut [f64], n: i64, t0: f64, t1: f64) -> Result<usize> {
        let gap = t1 - t0;
        // A single regime has nothing to learn.
        if probs.len() == 1 || gap <= 1e-14 * t0.abs().max(1.0) {
            return Ok(0);
        }
        let h = self.max_step.min(gap / 10.0);
        if !(h.is_finite() && h > 0.0) {
            return Err(FilterError::StepUnderflow { t0, t1 });
        }
        let steps = (gap / h).ceil() as usize;
        self.integrate_fixed(probs, n, t0, t1, steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterEvent {
    pub time: f64,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub probs: Vec<f64>,
    pub inventory: i64,
    /// Set on the post-jump point of a fill.
    pub event: Option<Side>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrajectory {
    pub points: Vec<TrajectoryPoint>,
    pub clamp_events: usize,
}

impl FilterTrajectory {
    pub fn terminal(&self) -> &[f64] {
        &self.points.last().expect("trajectory has at least one point").probs
    }
}

/// Run the filter over `[0, t_end]` given the fill times, starting from
/// `initial` with inventory `n0`. A point is recorded after every RK4 step
/// and twice at each fill: the left limit, then the post-jump state.
pub fn evolve<P: Policy + ?Sized>(
    initial: &FilterState,
    n0: i64,
    policy: &P,
    events: &[FilterEvent],
    t_end: f64,
    spec: &ModelSpec,
) -> Result<FilterTrajectory> {
    if events.windows(2).any(|w| w[1].time < w[0].time)
        || events.iter().any(|e| e.time < 0.0 || e.time > t_end)
    {
        return Err(FilterError::EventOrder { horizon: t_end });
    }
    let flow = FilterFlow::new(spec, policy);
    let mut probs = initial.probs.clone();
    let mut n = n0;
    let mut t = 0.0;
    let mut clamp_events = 0;
    let mut points = vec![TrajectoryPoint { t, probs: probs.clone(), inventory: n, event: None }];

    let segment = |t0: f64, t1: f64, probs: &mut Vec<f64>, n: i64, points: &mut Vec<TrajectoryPoint>| -> Result<usize> {
        let gap = t1 - t0;
        if gap <= 0.0 {
            return Ok(0);
        }
        let h = flow.max_step.min(gap / 10.0);
        if !(h.is_finite() && h > 0.0) {
            return Err(FilterError::StepUnderflow { t0, t1 });
        }
        let steps = (gap / h).ceil() as usize;
        let h = gap / steps as f64;
        let mut clamps = 0;
        for s in 0..steps {
            let ts = t0 + s as f64 * h;
            clamps += flow.rk4_step(ts, h, n, probs)?;
            points.push(TrajectoryPoint { t: ts + h, probs: probs.clone(), inventory: n, event: None });
        }
        Ok(clamps)
    };

    for ev in events {
        clamp_events += segment(t, ev.time, &mut probs, n, &mut points)?;
        t = ev.time;
        let quotes = policy.quotes(&PolicyContext { t, inventory: n, filter: &probs, regime: None });
        if let (Quote::Spread(delta), true) = (quotes.side(ev.side), spec.inventory_cap.side_open(ev.side, n)) {
            let state = jump_update(&FilterState { probs: probs.clone() }, ev.side, delta, spec)?;
            probs = state.probs;
            n += ev.side.inventory_step();
        }
        points.push(TrajectoryPoint { t, probs: probs.clone(), inventory: n, event: Some(ev.side) });
    }
    clamp_events += segment(t, t_end, &mut probs, n, &mut points)?;
    Ok(FilterTrajectory { points, clamp_events })
}

/// Stable equilibrium of the two-regime filter drift during a quiet spell
/// with `β` active sides quoting the terminal spread `1/b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attractor {
    pub root: f64,
    /// Derivative of the drift at the root; negative for a stable point.
    pub slope: f64,
}

fn quiet_drift(rc: &ReducedCoeffs, beta: f64, p: f64) -> f64 {
    rc.q_hat(p) + rc.w(p) * rc.a / std::f64::consts::E * beta
}

pub fn attractor(spec: &ModelSpec, beta: u32) -> Result<Attractor> {
    if !(1..=2).contains(&beta) {
        return Err(FilterError::Unsupported(format!("β must be 1 or 2, got {beta}")));
    }
    let rc = reduced_coeffs(spec).map_err(|e| FilterError::Unsupported(e.to_string()))?;
    if spec.terminal_cost != 0.0 {
        return Err(FilterError::Unsupported("terminal cost c must be 0".into()));
    }
    if rc.q21 <= 0.0 {
        return Err(FilterError::NoRoot(format!("q²¹ = {} must be positive", rc.q21)));
    }
    if rc.q11 >= 0.0 {
        return Err(FilterError::NoRoot(format!("q¹¹ = {} must be negative", rc.q11)));
    }
    let beta = beta as f64;
    let f = |p: f64| quiet_drift(&rc, beta, p);
    // f(0) = q²¹ > 0 and f(1) = q¹¹ < 0
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let slope = (rc.q11 - rc.q21) + (rc.m - 1.0) * (1.0 - 2.0 * root) * rc.a / std::f64::consts::E * beta;
    if slope >= 0.0 {
        return Err(FilterError::NoRoot(format!("root {root} is not stable (slope {slope})")));
    }
    Ok(Attractor { root, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::IntensityFamily;
    use crate::model::{Generator, RegimeSpec};
    use crate::policy::FixedSpreads;

    fn reference() -> ModelSpec {
        ModelSpec::two_regime_reference(1.0, 0.0)
    }

    fn with_m(m: f64) -> ModelSpec {
        let mut spec = reference();
        spec.regimes[1] = RegimeSpec::symmetric("good", IntensityFamily::Exponential { a: 2.0 * m, b: 25.0 });
        spec
    }

    fn fixed(spec: &ModelSpec, delta: f64) -> FixedSpreads {
        FixedSpreads { delta, cap: spec.inventory_cap }
    }

    #[test]
    fn observable_rate_is_weighted_average() {
        let spec = reference();
        let r = observable_rates(&[0.5, 0.5], QuotePair::symmetric(0.04), 0, &spec).unwrap();
        let expected = 6.0 * (-1.0f64).exp();
        assert!((r.bid_rate - expected).abs() < 1e-12);
        assert!((r.bid_rate - 2.207277).abs() < 1e-6);
        assert_eq!(r.bid_rate, r.ask_rate);

        let r = observable_rates(&[1.0, 0.0], QuotePair::symmetric(0.04), 0, &spec).unwrap();
        assert!((r.ask_rate - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn blocked_side_has_zero_rate() {
        let spec = reference();
        let r = observable_rates(&[0.5, 0.5], QuotePair::symmetric(0.04), 3, &spec).unwrap();
        assert_eq!(r.bid_rate, 0.0);
        assert!(r.ask_rate > 0.0);
        let r = observable_rates(&[0.5, 0.5], QuotePair::symmetric(0.04), -3, &spec).unwrap();
        assert_eq!(r.ask_rate, 0.0);
        let r = observable_rates(&[0.5, 0.5], QuotePair::new(Quote::Stub, Quote::Spread(0.04)), 0, &spec).unwrap();
        assert_eq!(r.bid_rate, 0.0);
    }

    #[test]
    fn drift_two_regime_values() {
        let spec = reference();
        let d = drift(&[0.5, 0.5], QuotePair::symmetric(0.04), 0, &spec).unwrap();
        // q̂(0.5) + w(0.5)·a·(e^{-1} + e^{-1})
        let expected = 0.0 + 1.0 * 2.0 * 2.0 * (-1.0f64).exp();
        assert!((d[0] - expected).abs() < 1e-12);
        assert!((d[0] - 1.471518).abs() < 1e-6);
        assert!((d[0] + d[1]).abs() < 1e-12);

        let d = drift(&[0.0, 1.0], QuotePair::symmetric(0.04), 0, &spec).unwrap();
        assert!((d[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn drift_is_pure_transport_when_uninformative() {
        let spec = with_m(1.0);
        let p = [0.3, 0.7];
        let d = drift(&p, QuotePair::symmetric(0.01), 0, &spec).unwrap();
        let q = spec.generator.transpose_apply(&p);
        assert!((d[0] - q[0]).abs() < 1e-15 && (d[1] - q[1]).abs() < 1e-15);
    }

    #[test]
    fn drift_is_tangent_for_three_regimes() {
        let mut spec = reference();
        spec.regimes.push(RegimeSpec::symmetric("mid", IntensityFamily::Logistic { a: 4.0, b: 10.0, c: 1.0 }));
        spec.generator = Generator::new(vec![vec![-3.0, 2.0, 1.0], vec![1.0, -4.0, 3.0], vec![0.5, 0.5, -1.0]]);
        let d = drift(&[0.2, 0.5, 0.3], QuotePair::symmetric(0.03), 1, &spec).unwrap();
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn jump_update_values() {
        let spec = reference();
        let s = jump_update(&FilterState::two_regime(0.5).unwrap(), Side::Ask, 0.04, &spec).unwrap();
        assert!((s.probs()[0] - 1.0 / 6.0).abs() < 1e-12);
        let s = jump_update(&FilterState::two_regime(0.6).unwrap(), Side::Bid, 0.0, &spec).unwrap();
        assert!((s.probs()[0] - 0.6 / 2.6).abs() < 1e-12);
        assert!((s.probs()[0] - 0.230769).abs() < 1e-6);
    }

    #[test]
    fn uninformative_jumps_are_identity() {
        let spec = with_m(1.0);
        let s0 = FilterState::two_regime(0.37).unwrap();
        let s1 = jump_update(&s0, Side::Bid, 0.02, &spec).unwrap();
        let s2 = jump_update(&s1, Side::Ask, -0.3, &spec).unwrap();
        assert!((s2.probs()[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn evolve_without_events_reaches_attractor() {
        let spec = reference();
        let policy = fixed(&spec, 0.04);
        let traj = evolve(&FilterState::two_regime(0.5).unwrap(), 0, &policy, &[], 10.0, &spec).unwrap();
        let target = attractor(&spec, 2).unwrap().root;
        assert!((traj.terminal()[0] - target).abs() < 1e-3);
        for p in &traj.points {
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.probs.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn evolve_constant_without_information() {
        let mut spec = with_m(1.0);
        spec.generator = Generator::zeros(2);
        let policy = fixed(&spec, 0.04);
        let ev = [FilterEvent { time: 0.3, side: Side::Bid }];
        let traj = evolve(&FilterState::two_regime(0.2).unwrap(), 0, &policy, &ev, 1.0, &spec).unwrap();
        assert!(traj.points.iter().all(|p| (p.probs[0] - 0.2).abs() < 1e-14));
    }

    #[test]
    fn evolve_feeds_left_limit_to_jump() {
        let spec = reference();
        let policy = fixed(&spec, 0.04);
        let ev = [FilterEvent { time: 0.25, side: Side::Ask }];
        let traj = evolve(&FilterState::two_regime(0.5).unwrap(), 0, &policy, &ev, 0.5, &spec).unwrap();
        let idx = traj.points.iter().position(|p| p.event.is_some()).unwrap();
        let left = &traj.points[idx - 1];
        assert!((left.t - 0.25).abs() < 1e-12);
        let expected = jump_update(&FilterState::new(left.probs.clone()).unwrap(), Side::Ask, 0.04, &spec).unwrap();
        assert!((traj.points[idx].probs[0] - expected.probs()[0]).abs() < 1e-15);
        assert_eq!(traj.points[idx].inventory, -1);
    }

    #[test]
    fn evolve_rejects_unsorted_events() {
        let spec = reference();
        let policy = fixed(&spec, 0.04);
        let ev = [FilterEvent { time: 0.5, side: Side::Ask }, FilterEvent { time: 0.2, side: Side::Bid }];
        assert!(matches!(
            evolve(&FilterState::two_regime(0.5).unwrap(), 0, &policy, &ev, 1.0, &spec),
            Err(FilterError::EventOrder { .. })
        ));
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let spec = reference();
        let policy = fixed(&spec, 0.04);
        let flow = FilterFlow::new(&spec, &policy);
        let run = |steps| {
            let mut p = vec![0.1, 0.9];
            flow.integrate_fixed(&mut p, 0, 0.0, 0.5, steps).unwrap();
            p[0]
        };
        let reference = run(4096);
        let (e1, e2) = ((run(32) - reference).abs(), (run(64) - reference).abs());
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn attractor_values() {
        let spec = reference();
        let a1 = attractor(&spec, 1).unwrap();
        let a2 = attractor(&spec, 2).unwrap();
        assert!((a1.root - 0.572).abs() < 1e-3, "{}", a1.root);
        assert!((a2.root - 0.636).abs() < 1e-3, "{}", a2.root);
        assert!(a1.slope < 0.0 && a2.slope < 0.0);
        let flat = attractor(&with_m(1.0), 1).unwrap();
        assert!((flat.root - 0.5).abs() < 1e-10);
    }

    #[test]
    fn attractor_preconditions() {
        let mut spec = reference();
        spec.generator = Generator::new(vec![vec![-5.0, 5.0], vec![0.0, 0.0]]);
        assert!(matches!(attractor(&spec, 1), Err(FilterError::NoRoot(_))));
        let spec = ModelSpec::two_regime_reference(1.0, 0.01);
        assert!(matches!(attractor(&spec, 1), Err(FilterError::Unsupported(_))));
        assert!(attractor(&reference(), 3).is_err());
    }
}
