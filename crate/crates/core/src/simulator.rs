//! Joint simulation of fills, inventory, filter, price and cash by thinning,
//! and Monte Carlo aggregation of the penalized P&L
//! `X_T + S_T N_T − c N_T² − ½σ²ζ ∫ N² dt`.
//!
//! Candidates arrive at rate `λ̄ = (#open sides) · maxᵢ Λᵢ(δ_min)`, where
//! `δ_min` is the smallest spread the policy can quote, and are accepted
//! with probability `λ/λ̄`. Without an explicit regime `λ` is the observable
//! rate `λ̂`; with one it is the true regime's rate. Each path draws from its
//! own ChaCha stream, so results do not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::filter::{jump_update_probs, observable_rates, FilterError, FilterFlow, FilterState};
use crate::model::{ModelSpec, Side, Violation};
use crate::policy::{Policy, PolicyContext, Quote, QuotePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("thinning bound violated at t = {t}: rate {rate} > bound {bound}")]
    ThinningBound { t: f64, rate: f64, bound: f64 },
    #[error("number of paths must be positive")]
    ZeroPaths,
    #[error("policy needs the true regime; simulate with an explicit regime path")]
    NeedsRegime,
}

pub type Result<T> = std::result::Result<T, SimError>;

pub const DEFAULT_REPORT_POINTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillEvent {
    pub time: f64,
    pub side: Side,
    pub spread: f64,
    /// Reference price at the fill.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub price: f64,
    /// Inventory from this record until the next one.
    pub inventory: i64,
    pub cash: f64,
    pub filter: Vec<f64>,
    pub quotes: QuotePair,
    pub event: Option<Side>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub events: Vec<FillEvent>,
    /// Empty unless recording was requested.
    pub steps: Vec<StepRecord>,
    pub terminal_cash: f64,
    pub terminal_price: f64,
    pub terminal_inventory: i64,
    /// `∫₀ᵀ N² dt`.
    pub inventory_sq_integral: f64,
    pub pnl: f64,
    pub filter_clamps: usize,
}

impl PathRecord {
    pub fn fills(&self, side: Side) -> usize {
        self.events.iter().filter(|e| e.side == side).count()
    }
}

/// Piecewise-constant regime path: `(switch time, regime)` pairs from `t = 0`.
pub type RegimePath = Vec<(f64, usize)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub report_points: usize,
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { report_points: DEFAULT_REPORT_POINTS, record: true }
    }
}

/// RNG for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_valid(spec: &ModelSpec) -> Result<()> {
    let v = spec.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(SimError::Invalid(v))
    }
}

struct PathState {
    t: f64,
    n: i64,
    cash: f64,
    price: f64,
    probs: Vec<f64>,
    sq_integral: f64,
    clamps: usize,
    /// Index of the next reporting node.
    next_node: usize,
}

struct Simulation<'a, P: Policy + ?Sized> {
    spec: &'a ModelSpec,
    policy: &'a P,
    flow: FilterFlow<'a, P>,
    /// `maxᵢ Λᵢ(δ_min)` over both sides.
    peak_rate: f64,
    grid_step: f64,
    opts: SimOptions,
}

impl<'a, P: Policy + ?Sized> Simulation<'a, P> {
    fn new(spec: &'a ModelSpec, policy: &'a P, opts: SimOptions) -> Result<Self> {
        check_valid(spec)?;
        let dmin = policy.min_spread().max(spec.spread_bounds.lo);
        let mut peak_rate = 0.0_f64;
        for r in &spec.regimes {
            for side in Side::BOTH {
                peak_rate = peak_rate.max(r.intensity(side).eval(dmin).map_err(FilterError::from)?);
            }
        }
        Ok(Simulation {
            spec,
            policy,
            flow: FilterFlow::new(spec, policy),
            peak_rate,
            grid_step: spec.horizon / opts.report_points.max(1) as f64,
            opts,
        })
    }

    fn quotes(&self, st: &PathState, regime: Option<usize>) -> QuotePair {
        self.policy.quotes(&PolicyContext { t: st.t, inventory: st.n, filter: &st.probs, regime })
    }

    fn record(&self, st: &PathState, regime: Option<usize>, event: Option<Side>, steps: &mut Vec<StepRecord>) {
        if self.opts.record {
            steps.push(StepRecord {
                t: st.t,
                price: st.price,
                inventory: st.n,
                cash: st.cash,
                filter: st.probs.clone(),
                quotes: self.quotes(st, regime),
                event,
            });
        }
    }

    /// Move to `target` with no fill: price by exact Gaussian increments at
    /// every reporting node on the way, filter by the flow.
    fn advance(
        &self,
        st: &mut PathState,
        target: f64,
        regime: Option<usize>,
        rng: &mut ChaCha8Rng,
        steps: &mut Vec<StepRecord>,
    ) -> Result<()> {
        let vol = self.spec.volatility;
        let flow = FilterFlow { regime, ..self.flow };
        let start = st.t;
        loop {
            let next_node = st.next_node as f64 * self.grid_step;
            let hits_node = next_node < target;
            let to = if hits_node { next_node } else { target };
            let dt = to - st.t;
            if dt > 0.0 {
                // without recording the filter is integrated over the whole gap
                if self.opts.record {
                    st.clamps += flow.advance(&mut st.probs, st.n, st.t, to)?;
                }
                let z: f64 = StandardNormal.sample(rng);
                st.price += self.spec.drift * dt + vol * dt.sqrt() * z;
                st.sq_integral += (st.n * st.n) as f64 * dt;
            }
            st.t = to;
            if !hits_node {
                break;
            }
            st.next_node += 1;
            self.record(st, regime, None, steps);
        }
        if !self.opts.record {
            st.clamps += flow.advance(&mut st.probs, st.n, start, target)?;
        }
        Ok(())
    }

    fn open_sides(&self, n: i64) -> usize {
        Side::BOTH.iter().filter(|&&s| self.spec.inventory_cap.side_open(s, n)).count()
    }

    fn run(&self, rng: &mut ChaCha8Rng, regimes: Option<&RegimePath>) -> Result<PathRecord> {
        let spec = self.spec;
        let horizon = spec.horizon;
        let mut st = PathState {
            t: 0.0,
            n: spec.initial_inventory,
            cash: spec.initial_cash,
            price: spec.initial_price,
            probs: FilterState::initial(spec)?.into_probs(),
            sq_integral: 0.0,
            clamps: 0,
            next_node: 1,
        };
        let regime_at = |t: f64| regimes.map(|path| path.iter().rev().find(|(s, _)| *s <= t).map_or(path[0].1, |r| r.1));
        let mut events = Vec::new();
        let mut steps = Vec::new();
        self.record(&st, regime_at(0.0), None, &mut steps);

        loop {
            let bound = self.open_sides(st.n) as f64 * self.peak_rate;
            let candidate = if bound > 0.0 {
                st.t + Exp::new(bound).expect("positive rate").sample(rng)
            } else {
                f64::INFINITY
            };
            let switch = regimes
                .and_then(|path| path.iter().find(|(s, _)| *s > st.t).map(|r| r.0))
                .unwrap_or(f64::INFINITY);
            if candidate >= horizon && switch >= horizon {
                let current = regime_at(st.t);
                self.advance(&mut st, horizon, current, rng, &mut steps)?;
                break;
            }
            if switch < candidate {
                // memoryless: the pending candidate is discarded at a switch
                let current = regime_at(st.t);
                self.advance(&mut st, switch, current, rng, &mut steps)?;
                continue;
            }
            let regime = regime_at(candidate);
            self.advance(&mut st, candidate, regime, rng, &mut steps)?;
            let quotes = self.quotes(&st, regime);
            let obs = observable_rates(&st.probs, quotes, st.n, spec)?;
            let (bid_rate, ask_rate) = match regime {
                Some(y) => (obs.bid_components[y], obs.ask_components[y]),
                None => (obs.bid_rate, obs.ask_rate),
            };
            let rate = bid_rate + ask_rate;
            if rate > bound * (1.0 + 1e-12) {
                return Err(SimError::ThinningBound { t: st.t, rate, bound });
            }
            let u: f64 = rng.random();
            if u * bound >= rate {
                continue;
            }
            let side = if u * bound < bid_rate { Side::Bid } else { Side::Ask };
            let Quote::Spread(delta) = quotes.side(side) else {
                unreachable!("accepted fill on a stubbed side");
            };
            match side {
                Side::Bid => st.cash -= st.price - delta,
                Side::Ask => st.cash += st.price + delta,
            }
            st.n += side.inventory_step();
            st.probs = jump_update_probs(&st.probs, side, delta, spec)?;
            events.push(FillEvent { time: st.t, side, spread: delta, price: st.price });
            self.record(&st, regime, Some(side), &mut steps);
        }
        if self.opts.record && steps.last().is_none_or(|s| s.t < horizon) {
            self.record(&st, regime_at(horizon), None, &mut steps);
        }
        if st.clamps > 0 {
            log::warn!("filter coordinates floored {} times on one path", st.clamps);
        }
        let pnl = st.cash + st.price * st.n as f64
            - spec.terminal_penalty(st.n)
            - 0.5 * spec.volatility.powi(2) * spec.running_penalty * st.sq_integral;
        Ok(PathRecord {
            events,
            steps,
            terminal_cash: st.cash,
            terminal_price: st.price,
            terminal_inventory: st.n,
            inventory_sq_integral: st.sq_integral,
            pnl,
            filter_clamps: st.clamps,
        })
    }
}

/// Draw the hidden chain on `[0, T]` from the initial filter and `Q`.
pub fn sample_regime_path(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> RegimePath {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut y = spec.num_regimes() - 1;
    for (i, p) in spec.initial_filter.iter().enumerate() {
        acc += p;
        if u < acc {
            y = i;
            break;
        }
    }
    let mut path = vec![(0.0, y)];
    let mut t = 0.0;
    loop {
        let out = -spec.generator.rate(y, y);
        if out <= 0.0 {
            return path;
        }
        t += Exp::new(out).expect("positive rate").sample(rng);
        if t >= spec.horizon {
            return path;
        }
        let v: f64 = rng.random::<f64>() * out;
        let mut acc = 0.0;
        let mut next = y;
        for j in (0..spec.num_regimes()).filter(|&j| j != y) {
            acc += spec.generator.rate(y, j);
            next = j;
            if v < acc {
                break;
            }
        }
        y = next;
        path.push((t, y));
    }
}

/// One path driven by the observable intensity.
pub fn simulate_path<P: Policy + ?Sized>(spec: &ModelSpec, policy: &P, seed: u64) -> Result<PathRecord> {
    simulate_path_with(spec, policy, seed, 0, SimOptions::default())
}

pub fn simulate_path_with<P: Policy + ?Sized>(
    spec: &ModelSpec,
    policy: &P,
    seed: u64,
    index: u64,
    opts: SimOptions,
) -> Result<PathRecord> {
    if policy.needs_regime() {
        return Err(SimError::NeedsRegime);
    }
    Simulation::new(spec, policy, opts)?.run(&mut path_rng(seed, index), None)
}

/// One path with an explicit hidden chain; fills use the true regime's
/// intensity, the filter still sees only the fills.
pub fn simulate_with_regime<P: Policy + ?Sized>(
    spec: &ModelSpec,
    policy: &P,
    seed: u64,
) -> Result<(PathRecord, RegimePath)> {
    simulate_with_regime_with(spec, policy, seed, 0, SimOptions::default())
}

pub fn simulate_with_regime_with<P: Policy + ?Sized>(
    spec: &ModelSpec,
    policy: &P,
    seed: u64,
    index: u64,
    opts: SimOptions,
) -> Result<(PathRecord, RegimePath)> {
    let sim = Simulation::new(spec, policy, opts)?;
    let mut rng = path_rng(seed, index);
    let regimes = sample_regime_path(spec, &mut rng);
    let rec = sim.run(&mut rng, Some(&regimes))?;
    Ok((rec, regimes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[b] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub paths: usize,
    pub mean_pnl: f64,
    pub std_pnl: f64,
    /// `std_pnl / √paths`.
    pub stderr: f64,
    pub mean_fills_bid: f64,
    pub mean_fills_ask: f64,
    pub histogram: Histogram,
    /// Per-path P&L in path order.
    pub pnls: Vec<f64>,
}

impl MonteCarloSummary {
    fn from_paths(records: &[(f64, usize, usize)]) -> Self {
        let n = records.len() as f64;
        let pnls: Vec<f64> = records.iter().map(|r| r.0).collect();
        let mean = pnls.iter().sum::<f64>() / n;
        let var = if records.len() > 1 { pnls.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let std = var.sqrt();
        MonteCarloSummary {
            paths: records.len(),
            mean_pnl: mean,
            std_pnl: std,
            stderr: std / n.sqrt(),
            mean_fills_bid: records.iter().map(|r| r.1 as f64).sum::<f64>() / n,
            mean_fills_ask: records.iter().map(|r| r.2 as f64).sum::<f64>() / n,
            histogram: Histogram::build(&pnls, 50),
            pnls,
        }
    }

    /// Mean and standard error of the per-path difference `self − other`,
    /// for runs sharing a seed.
    pub fn paired_difference(&self, other: &MonteCarloSummary) -> (f64, f64) {
        let d: Vec<f64> = self.pnls.iter().zip(&other.pnls).map(|(a, b)| a - b).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }
}

fn aggregate(
    n_paths: usize,
    run: impl Fn(u64) -> Result<PathRecord> + Sync,
) -> Result<MonteCarloSummary> {
    if n_paths == 0 {
        return Err(SimError::ZeroPaths);
    }
    let records = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| run(i).map(|r| (r.pnl, r.fills(Side::Bid), r.fills(Side::Ask))))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloSummary::from_paths(&records))
}

/// Monte Carlo over the observable-intensity dynamics.
pub fn monte_carlo<P: Policy + ?Sized>(
    spec: &ModelSpec,
    policy: &P,
    n_paths: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if policy.needs_regime() {
        return Err(SimError::NeedsRegime);
    }
    let sim = Simulation::new(spec, policy, SimOptions { record: false, ..SimOptions::default() })?;
    aggregate(n_paths, |i| sim.run(&mut path_rng(seed, i), None))
}

/// Monte Carlo with an explicit hidden chain per path.
pub fn monte_carlo_with_regime<P: Policy + ?Sized>(
    spec: &ModelSpec,
    policy: &P,
    n_paths: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    let sim = Simulation::new(spec, policy, SimOptions { record: false, ..SimOptions::default() })?;
    aggregate(n_paths, |i| {
        let mut rng = path_rng(seed, i);
        let regimes = sample_regime_path(spec, &mut rng);
        sim.run(&mut rng, Some(&regimes))
    })
}
