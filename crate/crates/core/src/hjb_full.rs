//! Full-information solver.
//!
//! With the regime observed, the value reduces to `Θ(t, n, i)` solving the
//! backward ODE system
//!
//! ```text
//! 0 = Θ_t + μn − ½σ²n²(ζ+γ) + Σ_{j≠i} q_ij U_γ(Θ_j − Θ_i)
//!     + 1{n<N*} H⁻_i(Θ(n+1) − Θ(n)) + 1{n>−N*} H⁺_i(Θ(n−1) − Θ(n)),
//! Θ(T, n, i) = −c n²,
//! ```
//!
//! integrated here with classical RK4 in reversed time `τ = T − t`. With an
//! unbounded inventory and `γ = ζ = c = 0` the value splits as
//! `Θ = μn(T−t) + Φ_i(t)` with `Φ` solving a linear `k`-system.

use thiserror::Error;

use crate::intensity::{utility, IntensityError, SpreadOptimizer};
use crate::model::{InventoryCap, ModelSpec, Side, Violation};
use crate::policy::{Policy, PolicyContext, Quote, QuotePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error("CFL condition violated: step {dt:e} exceeds bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },
    #[error("non-finite value at t = {t}")]
    NonFinite { t: f64 },
}

impl SolverError {
    /// Configuration problems as opposed to numerical failures.
    pub fn is_config(&self) -> bool {
        matches!(self, SolverError::Invalid(_) | SolverError::Unsupported(_))
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;

pub const DEFAULT_STEPS: usize = 2000;

pub(crate) fn check_valid(spec: &ModelSpec) -> Result<()> {
    let v = spec.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(SolverError::Invalid(v))
    }
}

/// One optimizer per `(regime, side)`.
#[derive(Debug, Clone)]
pub struct Optimizers {
    bid: Vec<SpreadOptimizer>,
    ask: Vec<SpreadOptimizer>,
}

impl Optimizers {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let make = |side| -> Result<Vec<_>> {
            spec.regimes
                .iter()
                .map(|r| Ok(SpreadOptimizer::new(r.intensity(side), spec.risk_aversion, spec.spread_bounds)?))
                .collect()
        };
        Ok(Optimizers { bid: make(Side::Bid)?, ask: make(Side::Ask)? })
    }

    pub fn get(&self, regime: usize, side: Side) -> &SpreadOptimizer {
        match side {
            Side::Bid => &self.bid[regime],
            Side::Ask => &self.ask[regime],
        }
    }
}

/// Solution `Θ(t, n, i)` on a uniform time grid with the optimal spreads.
#[derive(Debug, Clone, PartialEq)]
pub struct FullInfoSurface {
    pub time_grid: Vec<f64>,
    pub cap: u32,
    pub regimes: usize,
    /// `[t][n + N*][i]`, flattened.
    theta: Vec<f64>,
    spread_bid: Vec<Quote>,
    spread_ask: Vec<Quote>,
}

impl FullInfoSurface {
    /// Assemble a surface from flat `[t][n + N*][i]` arrays.
    pub fn from_parts(
        time_grid: Vec<f64>,
        cap: u32,
        regimes: usize,
        theta: Vec<f64>,
        spread_bid: Vec<Quote>,
        spread_ask: Vec<Quote>,
    ) -> Option<Self> {
        let len = time_grid.len() * (2 * cap as usize + 1) * regimes;
        (theta.len() == len && spread_bid.len() == len && spread_ask.len() == len)
            .then_some(FullInfoSurface { time_grid, cap, regimes, theta, spread_bid, spread_ask })
    }

    pub fn levels(&self) -> usize {
        2 * self.cap as usize + 1
    }

    pub fn inventories(&self) -> std::ops::RangeInclusive<i64> {
        -(self.cap as i64)..=self.cap as i64
    }

    fn idx(&self, t: usize, n: i64, i: usize) -> usize {
        let level = (n + self.cap as i64) as usize;
        (t * self.levels() + level) * self.regimes + i
    }

    pub fn theta(&self, t: usize, n: i64, i: usize) -> f64 {
        self.theta[self.idx(t, n, i)]
    }

    pub fn spread(&self, t: usize, n: i64, i: usize, side: Side) -> Quote {
        let idx = self.idx(t, n, i);
        match side {
            Side::Bid => self.spread_bid[idx],
            Side::Ask => self.spread_ask[idx],
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.time_grid.last().expect("non-empty grid")
    }

    /// Bracketing node and weight of the right node for `t`, clamped to `[0, T]`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.time_grid.len() - 1;
        let t = t.clamp(0.0, self.horizon());
        let h = self.horizon() / m as f64;
        let j = ((t / h).floor() as usize).min(m.saturating_sub(1));
        let w = ((t - self.time_grid[j]) / h).clamp(0.0, 1.0);
        (j, w)
    }

    /// `Θ(t, n, i)` with linear interpolation in `t`.
    pub fn theta_at(&self, t: f64, n: i64, i: usize) -> f64 {
        let (j, w) = self.locate(t);
        if w == 0.0 || j + 1 >= self.time_grid.len() {
            return self.theta(j, n, i);
        }
        (1.0 - w) * self.theta(j, n, i) + w * self.theta(j + 1, n, i)
    }

    pub fn min_spread(&self) -> f64 {
        self.spread_bid.iter().chain(&self.spread_ask).filter_map(|q| q.spread()).fold(f64::INFINITY, f64::min)
    }
}

/// Right-hand side `dΘ/dτ` of the reversed-time system; writes
/// optimal spreads into `spreads` when given.
fn rhs(
    spec: &ModelSpec,
    opt: &Optimizers,
    cap: i64,
    theta: &[f64],
    out: &mut [f64],
    mut spreads: Option<(&mut [Quote], &mut [Quote])>,
) -> Result<()> {
    let k = spec.num_regimes();
    let g = spec.risk_aversion;
    let at = |n: i64, i: usize| theta[((n + cap) as usize) * k + i];
    for n in -cap..=cap {
        let running = spec.drift * n as f64
            - 0.5 * spec.volatility.powi(2) * (n * n) as f64 * (spec.running_penalty + g);
        for i in 0..k {
            let idx = ((n + cap) as usize) * k + i;
            let here = at(n, i);
            let mut v = running;
            for j in 0..k {
                if j != i {
                    v += spec.generator.rate(i, j) * utility(g, at(n, j) - here);
                }
            }
            for side in Side::BOTH {
                let quote = if spec.inventory_cap.side_open(side, n) {
                    let h = opt.get(i, side).hamiltonian(at(n + side.inventory_step(), i) - here)?;
                    v += h.value;
                    Quote::Spread(h.argmax)
                } else {
                    Quote::Stub
                };
                if let Some((bid, ask)) = spreads.as_mut() {
                    match side {
                        Side::Bid => bid[idx] = quote,
                        Side::Ask => ask[idx] = quote,
                    }
                }
            }
            out[idx] = v;
        }
    }
    Ok(())
}

fn finite_cap(spec: &ModelSpec) -> Result<u32> {
    match spec.inventory_cap {
        InventoryCap::Finite(c) => Ok(c),
        InventoryCap::Unbounded => {
            Err(SolverError::Unsupported("constrained solver needs a finite inventory cap".into()))
        }
    }
}

pub fn solve_constrained(spec: &ModelSpec) -> Result<FullInfoSurface> {
    solve_constrained_with(spec, DEFAULT_STEPS)
}

/// Backward RK4 with `steps` uniform steps.
pub fn solve_constrained_with(spec: &ModelSpec, steps: usize) -> Result<FullInfoSurface> {
    check_valid(spec)?;
    let cap_u = finite_cap(spec)?;
    if steps == 0 {
        return Err(SolverError::Unsupported("at least one time step is required".into()));
    }
    let cap = cap_u as i64;
    let k = spec.num_regimes();
    let opt = Optimizers::new(spec)?;
    let size = (2 * cap as usize + 1) * k;
    let horizon = spec.horizon;
    let h = horizon / steps as f64;

    let mut state: Vec<f64> = (-cap..=cap).flat_map(|n| std::iter::repeat_n(-spec.terminal_penalty(n), k)).collect();
    // stored in reversed time, flipped at the end
    let mut thetas = Vec::with_capacity((steps + 1) * size);
    let mut bids = vec![Quote::Stub; (steps + 1) * size];
    let mut asks = vec![Quote::Stub; (steps + 1) * size];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
    let mut tmp = vec![0.0; size];

    for s in 0..=steps {
        thetas.extend_from_slice(&state);
        let (b, a) = (&mut bids[s * size..(s + 1) * size], &mut asks[s * size..(s + 1) * size]);
        rhs(spec, &opt, cap, &state, &mut k1, Some((b, a)))?;
        if s == steps {
            break;
        }
        for (t, (x, d)) in tmp.iter_mut().zip(state.iter().zip(&k1)) {
            *t = x + 0.5 * h * d;
        }
        rhs(spec, &opt, cap, &tmp, &mut k2, None)?;
        for (t, (x, d)) in tmp.iter_mut().zip(state.iter().zip(&k2)) {
            *t = x + 0.5 * h * d;
        }
        rhs(spec, &opt, cap, &tmp, &mut k3, None)?;
        for (t, (x, d)) in tmp.iter_mut().zip(state.iter().zip(&k3)) {
            *t = x + h * d;
        }
        rhs(spec, &opt, cap, &tmp, &mut k4, None)?;
        for j in 0..size {
            state[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { t: horizon - (s + 1) as f64 * h });
        }
    }

    let mut theta = Vec::with_capacity(thetas.len());
    let (mut sb, mut sa) = (Vec::with_capacity(bids.len()), Vec::with_capacity(asks.len()));
    for s in (0..=steps).rev() {
        theta.extend_from_slice(&thetas[s * size..(s + 1) * size]);
        sb.extend_from_slice(&bids[s * size..(s + 1) * size]);
        sa.extend_from_slice(&asks[s * size..(s + 1) * size]);
    }
    let time_grid = (0..=steps).map(|s| if s == steps { horizon } else { s as f64 * h }).collect();
    Ok(FullInfoSurface { time_grid, cap: cap_u, regimes: k, theta, spread_bid: sb, spread_ask: sa })
}

/// Largest ODE residual over the grid midpoints, using the cubic Hermite
/// interpolant of the stored values and slopes on each step.
pub fn midpoint_residual(spec: &ModelSpec, surface: &FullInfoSurface) -> Result<f64> {
    let cap = surface.cap as i64;
    let k = surface.regimes;
    let opt = Optimizers::new(spec)?;
    let size = surface.levels() * k;
    let slice = |t: usize| -> Vec<f64> {
        surface.inventories().flat_map(|n| (0..k).map(move |i| (n, i))).map(|(n, i)| surface.theta(t, n, i)).collect()
    };
    // dΘ/dt = −dΘ/dτ
    let slope = |y: &[f64]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; size];
        rhs(spec, &opt, cap, y, &mut out, None)?;
        Ok(out.into_iter().map(|v| -v).collect())
    };
    let mut worst = 0.0_f64;
    let (mut y0, mut f0) = (slice(0), slope(&slice(0))?);
    for t in 0..surface.time_grid.len() - 1 {
        let h = surface.time_grid[t + 1] - surface.time_grid[t];
        let y1 = slice(t + 1);
        let f1 = slope(&y1)?;
        let mid: Vec<f64> = (0..size).map(|j| 0.5 * (y0[j] + y1[j]) + h / 8.0 * (f0[j] - f1[j])).collect();
        let fm = slope(&mid)?;
        for j in 0..size {
            let deriv = 1.5 * (y1[j] - y0[j]) / h - 0.25 * (f0[j] + f1[j]);
            worst = worst.max((deriv - fm[j]).abs());
        }
        (y0, f0) = (y1, f1);
    }
    Ok(worst)
}

/// Comparison constants `(K̄, K̲)` with `−K̄T − K̲ ≤ Θ ≤ K̄T`.
pub fn comparison_bounds(spec: &ModelSpec) -> Result<(f64, f64)> {
    let cap = finite_cap(spec)? as i64;
    let opt = Optimizers::new(spec)?;
    let mut kbar = 0.0_f64;
    for n in -cap..=cap {
        let running = spec.drift * n as f64
            - 0.5 * spec.volatility.powi(2) * (n * n) as f64 * (spec.running_penalty + spec.risk_aversion);
        for i in 0..spec.num_regimes() {
            let mut v = running;
            for side in Side::BOTH {
                if spec.inventory_cap.side_open(side, n) {
                    v += opt.get(i, side).hamiltonian(0.0)?.value;
                }
            }
            kbar = kbar.max(v.abs());
        }
    }
    Ok((kbar, spec.terminal_penalty(cap)))
}

/// Full-information feedback policy; needs the true regime.
#[derive(Debug, Clone)]
pub struct FullInfoPolicy<'a> {
    surface: &'a FullInfoSurface,
    opt: Optimizers,
    cap: InventoryCap,
    min_spread: f64,
}

impl<'a> FullInfoPolicy<'a> {
    pub fn new(spec: &ModelSpec, surface: &'a FullInfoSurface) -> Result<Self> {
        Ok(FullInfoPolicy {
            surface,
            opt: Optimizers::new(spec)?,
            cap: spec.inventory_cap,
            min_spread: surface.min_spread(),
        })
    }

    /// `(δ̃⁻, δ̃⁺)` at `(t, n, i)` from the interpolated differences.
    pub fn spreads(&self, t: f64, n: i64, i: usize) -> QuotePair {
        let here = self.surface.theta_at(t, n, i);
        let quote = |side: Side| {
            if !self.cap.side_open(side, n) {
                return Quote::Stub;
            }
            let d = self.surface.theta_at(t, n + side.inventory_step(), i) - here;
            // optimizers were already exercised on the whole grid by the solve
            Quote::Spread(self.opt.get(i, side).optimal_spread(d).map(|r| r.0).unwrap_or(f64::NAN))
        };
        QuotePair::new(quote(Side::Bid), quote(Side::Ask))
    }
}

impl Policy for FullInfoPolicy<'_> {
    fn quotes(&self, ctx: &PolicyContext<'_>) -> QuotePair {
        self.spreads(ctx.t, ctx.inventory, ctx.regime.expect("full-information policy needs the regime"))
    }

    fn min_spread(&self) -> f64 {
        self.min_spread
    }

    fn needs_regime(&self) -> bool {
        true
    }
}

/// `Φ_i(t)` on a uniform grid; `Θ(t, n, i) = μn(T−t) + Φ_i(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedSolution {
    pub time_grid: Vec<f64>,
    pub drift: f64,
    /// `[t][i]`.
    pub phi: Vec<Vec<f64>>,
}

impl UnconstrainedSolution {
    pub fn theta(&self, t: usize, n: i64, i: usize) -> f64 {
        let horizon = *self.time_grid.last().expect("non-empty grid");
        self.drift * n as f64 * (horizon - self.time_grid[t]) + self.phi[t][i]
    }
}

pub fn solve_unconstrained(spec: &ModelSpec) -> Result<UnconstrainedSolution> {
    solve_unconstrained_with(spec, DEFAULT_STEPS)
}

pub fn solve_unconstrained_with(spec: &ModelSpec, steps: usize) -> Result<UnconstrainedSolution> {
    check_valid(spec)?;
    if spec.inventory_cap.is_finite() {
        return Err(SolverError::Unsupported("unconstrained solver needs an unbounded inventory".into()));
    }
    if spec.risk_aversion != 0.0 || spec.running_penalty != 0.0 || spec.terminal_cost != 0.0 {
        return Err(SolverError::Unsupported("unconstrained solver needs γ = ζ = c = 0".into()));
    }
    if steps == 0 {
        return Err(SolverError::Unsupported("at least one time step is required".into()));
    }
    let k = spec.num_regimes();
    let opt = Optimizers::new(spec)?;
    let mu = spec.drift;
    let horizon = spec.horizon;
    let h = horizon / steps as f64;

    // dΦ/dτ = QΦ + H⁻(μτ) + H⁺(−μτ)
    let f = |tau: f64, phi: &[f64]| -> Result<Vec<f64>> {
        (0..k)
            .map(|i| {
                let coupling: f64 = (0..k).map(|j| spec.generator.rate(i, j) * phi[j]).sum();
                let hb = opt.get(i, Side::Bid).hamiltonian(mu * tau)?.value;
                let ha = opt.get(i, Side::Ask).hamiltonian(-mu * tau)?.value;
                Ok(coupling + hb + ha)
            })
            .collect()
    };
    let mut phi = vec![0.0; k];
    let mut rev = vec![phi.clone()];
    for s in 0..steps {
        let tau = s as f64 * h;
        let k1 = f(tau, &phi)?;
        let y2: Vec<f64> = phi.iter().zip(&k1).map(|(x, d)| x + 0.5 * h * d).collect();
        let k2 = f(tau + 0.5 * h, &y2)?;
        let y3: Vec<f64> = phi.iter().zip(&k2).map(|(x, d)| x + 0.5 * h * d).collect();
        let k3 = f(tau + 0.5 * h, &y3)?;
        let y4: Vec<f64> = phi.iter().zip(&k3).map(|(x, d)| x + h * d).collect();
        let k4 = f(tau + h, &y4)?;
        for j in 0..k {
            phi[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        rev.push(phi.clone());
    }
    rev.reverse();
    let time_grid = (0..=steps).map(|s| if s == steps { horizon } else { s as f64 * h }).collect();
    Ok(UnconstrainedSolution { time_grid, drift: mu, phi: rev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::IntensityFamily;
    use crate::model::{Generator, RegimeSpec, SpreadBounds};

    fn one_regime(a: f64, b: f64) -> ModelSpec {
        let mut spec = ModelSpec::two_regime_reference(1.0, 0.01);
        spec.regimes = vec![RegimeSpec::symmetric("only", IntensityFamily::Exponential { a, b })];
        spec.generator = Generator::zeros(1);
        spec.initial_filter = vec![1.0];
        spec
    }

    #[test]
    fn terminal_slice_and_spreads() {
        for c in [0.0, 0.01] {
            let spec = ModelSpec::two_regime_reference(1.0, c);
            let s = solve_constrained_with(&spec, 200).unwrap();
            let last = s.time_grid.len() - 1;
            assert_eq!(s.time_grid[last], 1.0);
            for n in s.inventories() {
                for i in 0..2 {
                    assert_eq!(s.theta(last, n, i), -c * (n * n) as f64);
                }
            }
            let ask = s.spread(last, 0, 0, Side::Ask).spread().unwrap();
            let expected = if c == 0.0 { 0.04 } else { 0.05 };
            assert!((ask - expected).abs() < 1e-12, "{ask}");
            assert!(s.spread(last, -3, 0, Side::Ask).is_stub());
            assert!(s.spread(last, 3, 1, Side::Bid).is_stub());
        }
    }

    #[test]
    fn spreads_follow_closed_form() {
        let spec = ModelSpec::two_regime_reference(1.0, 0.01);
        let s = solve_constrained_with(&spec, 200).unwrap();
        for t in [0, 50, 199] {
            for n in -2..=3 {
                for i in 0..2 {
                    let d = s.theta(t, n - 1, i) - s.theta(t, n, i);
                    let expected = (0.04 - d).clamp(-10.0, 10.0);
                    let got = s.spread(t, n, i, Side::Ask).spread().unwrap();
                    assert!((got - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn symmetric_market_symmetry() {
        let spec = ModelSpec::two_regime_reference(1.0, 0.01);
        let s = solve_constrained_with(&spec, 400).unwrap();
        for t in 0..s.time_grid.len() {
            for i in 0..2 {
                for n in 1..=3 {
                    assert!((s.theta(t, n, i) - s.theta(t, -n, i)).abs() < 1e-10);
                    let a = s.spread(t, n, i, Side::Ask).spread().unwrap();
                    let b = s.spread(t, 1 - n, i, Side::Ask).spread().unwrap();
                    assert!((0.04 - a - (b - 0.04)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn comparison_sandwich() {
        let spec = ModelSpec::two_regime_reference(2.0, 0.01);
        let s = solve_constrained_with(&spec, 400).unwrap();
        let (kbar, klow) = comparison_bounds(&spec).unwrap();
        assert!((kbar - 2.0 * 10.0 / 25.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((klow - 0.09).abs() < 1e-15);
        for t in 0..s.time_grid.len() {
            for n in s.inventories() {
                for i in 0..2 {
                    let v = s.theta(t, n, i);
                    assert!(v <= kbar * 2.0 && v >= -kbar * 2.0 - klow);
                }
            }
        }
    }

    #[test]
    fn midpoint_residual_small() {
        let spec = ModelSpec::two_regime_reference(1.0, 0.01);
        let s = solve_constrained(&spec).unwrap();
        let r = midpoint_residual(&spec, &s).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn fourth_order_convergence() {
        let spec = ModelSpec::two_regime_reference(1.0, 0.01);
        let v = |steps| solve_constrained_with(&spec, steps).unwrap().theta(0, 1, 0);
        let reference = v(3200);
        let (e1, e2) = ((v(40) - reference).abs(), (v(80) - reference).abs());
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    /// Independent explicit integrator for one exponential regime, γ = 0.
    fn one_regime_oracle(a: f64, b: f64, spec: &ModelSpec, steps: usize) -> Vec<f64> {
        let cap = 3i64;
        let hmax = |d: f64| {
            let delta = (1.0 / b - d).clamp(-10.0, 10.0);
            a * (-b * delta).exp() * (delta + d)
        };
        let f = |th: &[f64]| -> Vec<f64> {
            (0..7)
                .map(|j| {
                    let n = j as i64 - cap;
                    let mut v = -0.5 * 0.01 * 0.1 * (n * n) as f64;
                    if n < cap {
                        v += hmax(th[j + 1] - th[j]);
                    }
                    if n > -cap {
                        v += hmax(th[j - 1] - th[j]);
                    }
                    v
                })
                .collect()
        };
        let mut th: Vec<f64> = (-cap..=cap).map(|n| -spec.terminal_cost * (n * n) as f64).collect();
        let h = spec.horizon / steps as f64;
        for _ in 0..steps {
            let k1 = f(&th);
            let k2 = f(&th.iter().zip(&k1).map(|(x, d)| x + 0.5 * h * d).collect::<Vec<_>>());
            let k3 = f(&th.iter().zip(&k2).map(|(x, d)| x + 0.5 * h * d).collect::<Vec<_>>());
            let k4 = f(&th.iter().zip(&k3).map(|(x, d)| x + h * d).collect::<Vec<_>>());
            for j in 0..7 {
                th[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        th
    }

    #[test]
    fn one_regime_matches_oracle() {
        let spec = one_regime(4.0, 25.0);
        let s = solve_constrained_with(&spec, 500).unwrap();
        let oracle = one_regime_oracle(4.0, 25.0, &spec, 500);
        for n in -3..=3 {
            assert!((s.theta(0, n, 0) - oracle[(n + 3) as usize]).abs() < 1e-10);
        }
    }

    #[test]
    fn ask_spread_decreases_with_inventory_near_expiry() {
        let spec = ModelSpec::two_regime_reference(1.0, 0.01);
        let s = solve_constrained_with(&spec, 400).unwrap();
        let t = s.time_grid.len() - 10;
        for i in 0..2 {
            for n in -1..3 {
                let a = s.spread(t, n, i, Side::Ask).spread().unwrap();
                let b = s.spread(t, n + 1, i, Side::Ask).spread().unwrap();
                assert!(b <= a + 1e-12);
            }
        }
    }

    #[test]
    fn policy_interpolates_and_stubs() {
        let spec = ModelSpec::two_regime_reference(1.0, 0.0);
        let s = solve_constrained_with(&spec, 100).unwrap();
        let p = FullInfoPolicy::new(&spec, &s).unwrap();
        let q = p.spreads(1.0, 0, 1);
        assert!((q.ask.spread().unwrap() - 0.04).abs() < 1e-9);
        assert!(p.spreads(0.5, -3, 0).ask.is_stub());
        let node = s.spread(50, 1, 0, Side::Bid).spread().unwrap();
        assert!((p.spreads(0.5, 1, 0).bid.spread().unwrap() - node).abs() < 1e-12);
    }

    #[test]
    fn rejects_unbounded_cap() {
        let mut spec = ModelSpec::two_regime_reference(1.0, 0.0);
        spec.inventory_cap = InventoryCap::Unbounded;
        spec.running_penalty = 0.0;
        assert!(matches!(solve_constrained(&spec), Err(SolverError::Unsupported(_))));
    }

    fn unconstrained_spec(k: usize, mu: f64) -> ModelSpec {
        let mut spec = ModelSpec::two_regime_reference(1.0, 0.0);
        spec.inventory_cap = InventoryCap::Unbounded;
        spec.running_penalty = 0.0;
        spec.drift = mu;
        spec.spread_bounds = SpreadBounds::UNBOUNDED;
        if k == 1 {
            spec.regimes.truncate(1);
            spec.generator = Generator::zeros(1);
            spec.initial_filter = vec![1.0];
        }
        spec
    }

    #[test]
    fn unconstrained_linear_in_time() {
        let spec = unconstrained_spec(1, 0.0);
        let sol = solve_unconstrained_with(&spec, 100).unwrap();
        assert_eq!(sol.phi[100][0], 0.0);
        let expected = 2.0 * (2.0 / 25.0) * (-1.0f64).exp();
        assert!((sol.phi[0][0] - expected).abs() < 1e-12);
        assert!((sol.theta(0, 5, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_decoupled_quadrature() {
        let mut spec = unconstrained_spec(2, 0.02);
        spec.generator = Generator::zeros(2);
        let sol = solve_unconstrained_with(&spec, 200).unwrap();
        for (i, a) in [(0usize, 2.0f64), (1, 10.0)] {
            // Simpson quadrature of H(μτ) + H(−μτ) with H(d) = (a/b) e^{-1} e^{-b d}
            let g = |tau: f64| a / 25.0 * (-1.0f64).exp() * ((-25.0 * 0.02 * tau).exp() + (25.0 * 0.02 * tau).exp());
            let m = 2000;
            let h = 1.0 / m as f64;
            let mut q = g(0.0) + g(1.0);
            for s in 1..m {
                q += if s % 2 == 1 { 4.0 } else { 2.0 } * g(s as f64 * h);
            }
            q *= h / 3.0;
            assert!((sol.phi[0][i] - q).abs() < 1e-10, "{} vs {q}", sol.phi[0][i]);
        }
        assert!((sol.theta(0, 2, 0) - (0.04 + sol.phi[0][0])).abs() < 1e-15);
    }

    #[test]
    fn unconstrained_rejects_penalties() {
        let mut spec = unconstrained_spec(2, 0.0);
        spec.running_penalty = 0.1;
        assert!(solve_unconstrained(&spec).is_err());
        assert!(solve_unconstrained(&ModelSpec::two_regime_reference(1.0, 0.0)).is_err());
    }
}
