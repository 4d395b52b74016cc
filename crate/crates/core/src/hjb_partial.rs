//! Partial-information solver for two regimes with proportional exponential
//! intensities `Λ₂ = mΛ₁ = m·a·e^{−bδ}` and `γ = 0`.
//!
//! Writing `π` for the probability of regime 1, the value `θ(t, n, π)`
//! solves, in reversed time `τ = T − t`,
//!
//! ```text
//! θ_τ = μn − ½σ²ζn² + s·q̂(π)θ_π + Σ_sides 1_side m̂(π) H(D + s·(w/m̂)θ_π),
//! D = θ(n∓1, π/m̂(π)) − θ(n, π),   θ(T, n, π) = −cn²,
//! ```
//!
//! where `H` is the regime-1 Hamiltonian, `q̂ = q¹¹π + q²¹(1−π)`,
//! `m̂ = π + (1−π)m`, `w = (m−1)π(1−π)` and `s` is the gradient scale
//! (1 for the derivative along `π`). The optimal spreads are
//! `δ̂ = 1/b − D − s(w/m̂)θ_π`, floored and capped at the spread bounds.
//!
//! The explicit scheme uses the Engquist–Osher flux for the convex map
//! `p ↦ s·q̂p + Σ m̂H(D + s(w/m̂)p)`, which makes each step monotone under
//! the CFL bound returned by [`Scheme::cfl_bound`]. The nonlocal value at
//! `π/m̂(π)` is linearly interpolated between grid nodes.

use std::f64::consts::E;

use crate::hjb_full::{check_valid, Result, SolverError};
use crate::intensity::{IntensityFamily, SpreadOptimizer};
use crate::model::{InventoryCap, ModelSpec, Side};
use crate::policy::{Policy, PolicyContext, Quote, QuotePair};

/// Scalar coefficients of the two-regime reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedCoeffs {
    pub q11: f64,
    pub q21: f64,
    /// Liquidity ratio `Λ₂/Λ₁`.
    pub m: f64,
    pub a: f64,
    pub b: f64,
}

impl ReducedCoeffs {
    pub fn q_hat(&self, p: f64) -> f64 {
        self.q11 * p + self.q21 * (1.0 - p)
    }

    pub fn m_hat(&self, p: f64) -> f64 {
        p + (1.0 - p) * self.m
    }

    pub fn w(&self, p: f64) -> f64 {
        (self.m - 1.0) * p * (1.0 - p)
    }
}

pub fn reduced_coeffs(spec: &ModelSpec) -> Result<ReducedCoeffs> {
    let unsupported = |why: &str| Err(SolverError::Unsupported(why.to_string()));
    if spec.num_regimes() != 2 {
        return unsupported("the partial-information reduction needs exactly 2 regimes");
    }
    if spec.risk_aversion != 0.0 {
        return unsupported("the partial-information reduction needs γ = 0");
    }
    let exp = |f: &IntensityFamily| match *f {
        IntensityFamily::Exponential { a, b } => Some((a, b)),
        _ => None,
    };
    let r = &spec.regimes;
    let (Some((a1, b1)), Some((a1a, b1a)), Some((a2, b2)), Some((a2a, b2a))) = (
        exp(&r[0].bid_intensity),
        exp(&r[0].ask_intensity),
        exp(&r[1].bid_intensity),
        exp(&r[1].ask_intensity),
    ) else {
        return unsupported("the partial-information reduction needs exponential intensities");
    };
    if a1 != a1a || b1 != b1a || a2 != a2a || b2 != b2a {
        return unsupported("the partial-information reduction needs bid and ask intensities to agree");
    }
    if b1 != b2 {
        return unsupported("the partial-information reduction needs proportional intensities (equal b)");
    }
    Ok(ReducedCoeffs {
        q11: spec.generator.rate(0, 0),
        q21: spec.generator.rate(1, 0),
        m: a2 / a1,
        a: a1,
        b: b1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    /// Stored time steps; `None` picks a default from the horizon.
    pub m_t: Option<usize>,
    pub m_pi: usize,
    /// Factor on `θ_π` in the transport and spread terms.
    pub gradient_scale: f64,
    /// Subdivide stored steps to satisfy the CFL bound instead of failing.
    pub auto_refine: bool,
    /// Lower bound on the equal inner steps per stored step.
    pub min_substeps: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams { m_t: None, m_pi: 200, gradient_scale: 1.0, auto_refine: true, min_substeps: 1 }
    }
}

impl GridParams {
    pub fn with_m_pi(m_pi: usize) -> Self {
        GridParams { m_pi, ..Self::default() }
    }

    fn stored_steps(&self, horizon: f64) -> usize {
        self.m_t.unwrap_or_else(|| ((500.0 * horizon).ceil() as usize).max(100))
    }
}

/// Safety factor applied to the CFL bound.
pub const CFL_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CflReport {
    /// Largest `|q̂ + w Σ Λ|` advection speed met during the march.
    pub max_coeff: f64,
    /// Largest ratio of the step used to the unscaled stability bound.
    pub max_ratio: f64,
    pub min_dt: f64,
    pub substeps: usize,
    /// Largest number of inner steps taken within one stored step.
    pub max_substeps_per_step: usize,
}

/// `θ(t, n, π)` on a uniform `(t, π)` grid with the optimal spreads.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialInfoSurface {
    pub time_grid: Vec<f64>,
    pub pi_grid: Vec<f64>,
    pub cap: u32,
    pub gradient_scale: f64,
    pub cfl: CflReport,
    /// `[t][n + N*][j]`, flattened.
    theta: Vec<f64>,
    spread_bid: Vec<Quote>,
    spread_ask: Vec<Quote>,
}

impl PartialInfoSurface {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        time_grid: Vec<f64>,
        pi_grid: Vec<f64>,
        cap: u32,
        gradient_scale: f64,
        cfl: CflReport,
        theta: Vec<f64>,
        spread_bid: Vec<Quote>,
        spread_ask: Vec<Quote>,
    ) -> Option<Self> {
        let len = time_grid.len() * (2 * cap as usize + 1) * pi_grid.len();
        (theta.len() == len && spread_bid.len() == len && spread_ask.len() == len && pi_grid.len() >= 2).then_some(
            PartialInfoSurface { time_grid, pi_grid, cap, gradient_scale, cfl, theta, spread_bid, spread_ask },
        )
    }

    pub fn levels(&self) -> usize {
        2 * self.cap as usize + 1
    }

    pub fn inventories(&self) -> std::ops::RangeInclusive<i64> {
        -(self.cap as i64)..=self.cap as i64
    }

    pub fn m_pi(&self) -> usize {
        self.pi_grid.len() - 1
    }

    fn idx(&self, t: usize, n: i64, j: usize) -> usize {
        (t * self.levels() + (n + self.cap as i64) as usize) * self.pi_grid.len() + j
    }

    pub fn theta(&self, t: usize, n: i64, j: usize) -> f64 {
        self.theta[self.idx(t, n, j)]
    }

    pub fn spread(&self, t: usize, n: i64, j: usize, side: Side) -> Quote {
        let idx = self.idx(t, n, j);
        match side {
            Side::Bid => self.spread_bid[idx],
            Side::Ask => self.spread_ask[idx],
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.time_grid.last().expect("non-empty grid")
    }

    fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
        let m = grid.len() - 1;
        let (lo, hi) = (grid[0], grid[m]);
        let h = (hi - lo) / m as f64;
        let x = x.clamp(lo, hi);
        let j = (((x - lo) / h).floor() as usize).min(m - 1);
        (j, ((x - grid[j]) / h).clamp(0.0, 1.0))
    }

    fn bilinear(&self, t: f64, p: f64, value: impl Fn(usize, usize) -> f64) -> f64 {
        let (i, u) = if self.time_grid.len() == 1 { (0, 0.0) } else { Self::bracket(&self.time_grid, t) };
        let (j, v) = Self::bracket(&self.pi_grid, p);
        let at = |i: usize, j: usize| value(i.min(self.time_grid.len() - 1), j);
        let row = |i| (1.0 - v) * at(i, j) + if v > 0.0 { v * at(i, j + 1) } else { 0.0 };
        (1.0 - u) * row(i) + if u > 0.0 { u * row(i + 1) } else { 0.0 }
    }

    /// `θ(t, n, π)` by bilinear interpolation.
    pub fn theta_at(&self, t: f64, n: i64, p: f64) -> f64 {
        self.bilinear(t, p, |i, j| self.theta(i, n, j))
    }

    /// Spread on `side` at `(t, n, π)` by bilinear interpolation of the table.
    pub fn spread_at(&self, t: f64, n: i64, p: f64, side: Side) -> Quote {
        if self.spread(0, n, 0, side).is_stub() {
            return Quote::Stub;
        }
        Quote::Spread(self.bilinear(t, p, |i, j| self.spread(i, n, j, side).spread().unwrap_or(f64::NAN)))
    }

    pub fn min_spread(&self) -> f64 {
        self.spread_bid.iter().chain(&self.spread_ask).filter_map(|q| q.spread()).fold(f64::INFINITY, f64::min)
    }
}

/// Node-wise evaluation of the scheme on one time level.
#[derive(Debug, Clone, Copy)]
struct NodeEval {
    rhs: f64,
    /// Coefficient of the node's own value; the step is monotone when
    /// `Δτ · rate ≤ 1`.
    rate: f64,
    speed: f64,
    bid: Quote,
    ask: Quote,
}

/// Minimizer of the convex flux `G`, possibly at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Sonic {
    MinusInf,
    At(f64),
    PlusInf,
}

/// Explicit monotone scheme for one spec and `π`-grid.
#[derive(Debug, Clone)]
pub struct Scheme {
    rc: ReducedCoeffs,
    opt: SpreadOptimizer,
    cap: i64,
    gates: InventoryCap,
    m_pi: usize,
    dpi: f64,
    scale: f64,
    drift: f64,
    penalty: f64,
    pis: Vec<f64>,
    /// Bracketing node and weight of `π/m̂(π)` for every node.
    nonlocal: Vec<(usize, f64)>,
}

struct Side1 {
    open: bool,
    d: f64,
}

impl Scheme {
    pub fn new(spec: &ModelSpec, m_pi: usize, gradient_scale: f64) -> Result<Self> {
        check_valid(spec)?;
        let rc = reduced_coeffs(spec)?;
        let cap = match spec.inventory_cap {
            InventoryCap::Finite(c) => c as i64,
            InventoryCap::Unbounded => {
                return Err(SolverError::Unsupported("partial-information solver needs a finite inventory cap".into()))
            }
        };
        if rc.q11 >= 0.0 {
            return Err(SolverError::Unsupported("partial-information solver needs −q¹¹ > 0".into()));
        }
        if m_pi < 2 {
            return Err(SolverError::Unsupported("the π-grid needs at least 2 cells".into()));
        }
        if !(gradient_scale.is_finite() && gradient_scale > 0.0) {
            return Err(SolverError::Unsupported("gradient scale must be positive".into()));
        }
        let opt = SpreadOptimizer::new(&spec.regimes[0].ask_intensity, 0.0, spec.spread_bounds)?;
        let dpi = 1.0 / m_pi as f64;
        let pis: Vec<f64> = (0..=m_pi).map(|j| j as f64 * dpi).collect();
        let nonlocal = pis
            .iter()
            .map(|&p| {
                let x = (p / rc.m_hat(p)).clamp(0.0, 1.0) * m_pi as f64;
                let lo = (x.floor() as usize).min(m_pi - 1);
                (lo, x - lo as f64)
            })
            .collect();
        Ok(Scheme {
            rc,
            opt,
            cap,
            gates: spec.inventory_cap,
            m_pi,
            dpi,
            scale: gradient_scale,
            drift: spec.drift,
            penalty: 0.5 * spec.volatility.powi(2) * spec.running_penalty,
            pis,
            nonlocal,
        })
    }

    pub fn level_len(&self) -> usize {
        (2 * self.cap as usize + 1) * (self.m_pi + 1)
    }

    pub fn coeffs(&self) -> ReducedCoeffs {
        self.rc
    }

    /// Terminal level `θ(T, n, π) = −cn²`.
    pub fn terminal(&self, spec: &ModelSpec) -> Vec<f64> {
        (-self.cap..=self.cap).flat_map(|n| std::iter::repeat_n(-spec.terminal_penalty(n), self.m_pi + 1)).collect()
    }

    fn at(&self, level: &[f64], n: i64, j: usize) -> f64 {
        level[(n + self.cap) as usize * (self.m_pi + 1) + j]
    }

    /// Regime-1 Hamiltonian value, its maximizer and `Λ₁` there.
    fn ham(&self, x: f64) -> (f64, f64, f64) {
        let h = self.opt.hamiltonian(x).expect("exponential Hamiltonian is total");
        let lam = self.rc.a * (-self.rc.b * h.argmax).exp();
        (h.value, h.argmax, lam)
    }

    fn node(&self, level: &[f64], n: i64, j: usize) -> NodeEval {
        let rc = &self.rc;
        let s = self.scale;
        let p = self.pis[j];
        let (qh, mh, w) = (rc.q_hat(p), rc.m_hat(p), rc.w(p));
        let here = self.at(level, n, j);
        let (lo, wt) = self.nonlocal[j];
        let sides = Side::BOTH.map(|side| {
            let open = self.gates.side_open(side, n);
            let d = if open {
                let m = n + side.inventory_step();
                let far = (1.0 - wt) * self.at(level, m, lo) + if wt > 0.0 { wt * self.at(level, m, lo + 1) } else { 0.0 };
                far - here
            } else {
                0.0
            };
            Side1 { open, d }
        });
        let k = s * w / mh;
        // G(p), A(p) = G'(p) and Σ m̂ Λ(p) over open sides
        // side terms are summed before the transport term so that the bid/ask
        // mirror holds bit for bit
        let eval = |grad: f64| -> (f64, f64, f64) {
            let (mut hsum, mut lsum) = (0.0, 0.0);
            for side in sides.iter().filter(|x| x.open) {
                let (hv, _, lam) = self.ham(side.d + k * grad);
                hsum += hv;
                lsum += lam;
            }
            (s * qh * grad + mh * hsum, s * qh + s * w * lsum, mh * lsum)
        };
        let p_plus = (j < self.m_pi).then(|| (self.at(level, n, j + 1) - here) / self.dpi);
        let p_minus = (j > 0).then(|| (here - self.at(level, n, j - 1)) / self.dpi);

        let sonic = self.sonic(qh, w, mh, &sides, p_plus.or(p_minus).unwrap_or(0.0), &eval);
        let (flux, rate, speed, p_eff) = match (p_minus, p_plus, sonic) {
            (_, Some(pp), Sonic::MinusInf) | (None, Some(pp), _) => {
                let (g, a, l) = eval(pp);
                (g, a.max(0.0) / self.dpi + l, a.abs(), pp)
            }
            (Some(pm), _, Sonic::PlusInf) | (Some(pm), None, _) => {
                let (g, a, l) = eval(pm);
                (g, (-a).max(0.0) / self.dpi + l, a.abs(), pm)
            }
            (Some(pm), Some(pp), Sonic::At(p0)) => {
                let (g0, _, l0) = eval(p0);
                let (gp, ap, lp) = eval(pp.max(p0));
                let (gm, am, lm) = eval(pm.min(p0));
                let rate = (if pp > p0 { ap } else { 0.0 } - if pm < p0 { am } else { 0.0 }) / self.dpi + lp + lm - l0;
                let eff = if p0 <= pm.min(pp) {
                    pp
                } else if p0 >= pm.max(pp) {
                    pm
                } else {
                    p0
                };
                (gp + gm - g0, rate, ap.abs().max(am.abs()), eff)
            }
            (None, None, _) => unreachable!("grid has at least two nodes"),
        };

        let quote = |side: &Side1| {
            if side.open {
                Quote::Spread(self.ham(side.d + k * p_eff).1)
            } else {
                Quote::Stub
            }
        };
        let nf = n as f64;
        NodeEval {
            rhs: self.drift * nf - self.penalty * nf * nf + flux,
            rate,
            speed,
            bid: quote(&sides[0]),
            ask: quote(&sides[1]),
        }
    }

    /// Root of the increasing map `A(p) = s q̂ + s w Σ Λ(D + s(w/m̂)p)`.
    fn sonic(
        &self,
        qh: f64,
        w: f64,
        mh: f64,
        sides: &[Side1; 2],
        guess: f64,
        eval: &impl Fn(f64) -> (f64, f64, f64),
    ) -> Sonic {
        let any_open = sides.iter().any(|s| s.open);
        if w == 0.0 || !any_open {
            return if qh >= 0.0 { Sonic::MinusInf } else { Sonic::PlusInf };
        }
        if qh >= 0.0 {
            return Sonic::MinusInf;
        }
        let (a, b, s) = (self.rc.a, self.rc.b, self.scale);
        let k = s * w / mh;
        // unclamped closed form: Σ (a/e) e^{bD} e^{b k p} = −q̂/w
        let mass: f64 = sides.iter().filter(|x| x.open).map(|x| (b * x.d).exp()).sum::<f64>() * a / E;
        if mass > 0.0 && mass.is_finite() {
            let p0 = ((-qh / w) / mass).ln() / (b * k);
            let bounds = self.opt.bounds();
            let interior = sides.iter().filter(|x| x.open).all(|x| {
                let delta = 1.0 / b - x.d - k * p0;
                delta > bounds.lo && delta < bounds.hi
            });
            if p0.is_finite() && interior {
                return Sonic::At(p0);
            }
        }
        let centre = if guess.is_finite() { guess } else { 0.0 };
        let (mut lo, mut hi) = (centre - 1.0, centre + 1.0);
        let mut width = 1.0;
        for _ in 0..200 {
            if eval(lo).1 < 0.0 {
                break;
            }
            width *= 2.0;
            lo = centre - width;
        }
        if eval(lo).1 >= 0.0 {
            return Sonic::MinusInf;
        }
        width = 1.0;
        for _ in 0..200 {
            if eval(hi).1 > 0.0 {
                break;
            }
            width *= 2.0;
            hi = centre + width;
        }
        if eval(hi).1 <= 0.0 {
            return Sonic::PlusInf;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if eval(mid).1 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Sonic::At(0.5 * (lo + hi))
    }

    fn evaluate(&self, level: &[f64]) -> Vec<NodeEval> {
        (-self.cap..=self.cap).flat_map(|n| (0..=self.m_pi).map(move |j| (n, j))).map(|(n, j)| self.node(level, n, j)).collect()
    }

    /// Largest stable step for `level`, before the safety factor.
    pub fn stability_bound(&self, level: &[f64]) -> f64 {
        let rate = self.evaluate(level).iter().fold(0.0_f64, |m, e| m.max(e.rate));
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }

    /// Step allowed by the CFL rule: safety factor times the stability bound.
    pub fn cfl_bound(&self, level: &[f64]) -> f64 {
        CFL_SAFETY * self.stability_bound(level)
    }

    /// One explicit step of size `dt` in reversed time.
    pub fn step(&self, level: &[f64], dt: f64) -> Vec<f64> {
        self.evaluate(level).iter().zip(level).map(|(e, v)| v + dt * e.rhs).collect()
    }

    /// Optimal spreads on `level`, in level order.
    pub fn spreads(&self, level: &[f64]) -> (Vec<Quote>, Vec<Quote>) {
        self.evaluate(level).iter().map(|e| (e.bid, e.ask)).unzip()
    }
}

pub fn solve(spec: &ModelSpec, grid: GridParams) -> Result<PartialInfoSurface> {
    let scheme = Scheme::new(spec, grid.m_pi, grid.gradient_scale)?;
    let steps = grid.stored_steps(spec.horizon);
    if steps == 0 {
        return Err(SolverError::Unsupported("at least one time step is required".into()));
    }
    let horizon = spec.horizon;
    let h = horizon / steps as f64;
    let size = scheme.level_len();
    let mut level = scheme.terminal(spec);
    let mut rev_theta = Vec::with_capacity((steps + 1) * size);
    let mut rev_bid = Vec::with_capacity((steps + 1) * size);
    let mut rev_ask = Vec::with_capacity((steps + 1) * size);
    let mut report = CflReport { min_dt: f64::INFINITY, ..CflReport::default() };

    for s in 0..=steps {
        let evals = scheme.evaluate(&level);
        rev_theta.extend_from_slice(&level);
        rev_bid.extend(evals.iter().map(|e| e.bid));
        rev_ask.extend(evals.iter().map(|e| e.ask));
        if s == steps {
            break;
        }
        // Equal inner steps; re-split the remainder if the bound tightens.
        let mut remaining = h;
        let mut left = grid.min_substeps.max(1);
        let mut taken = 0;
        let mut evals = evals;
        loop {
            let rate = evals.iter().fold(0.0_f64, |m, e| m.max(e.rate));
            report.max_coeff = evals.iter().fold(report.max_coeff, |m, e| m.max(e.speed));
            let bound = if rate > 0.0 { CFL_SAFETY / rate } else { f64::INFINITY };
            let mut dt = remaining / left as f64;
            if dt > bound * (1.0 + 1e-12) {
                if !grid.auto_refine {
                    return Err(SolverError::Cfl { dt, bound });
                }
                left = (remaining / bound).ceil() as usize;
                dt = remaining / left as f64;
            }
            report.max_ratio = report.max_ratio.max(dt * rate);
            report.min_dt = report.min_dt.min(dt);
            report.substeps += 1;
            taken += 1;
            for (v, e) in level.iter_mut().zip(&evals) {
                *v += dt * e.rhs;
            }
            remaining -= dt;
            left -= 1;
            if left == 0 {
                break;
            }
            evals = scheme.evaluate(&level);
        }
        report.max_substeps_per_step = report.max_substeps_per_step.max(taken);
        if level.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { t: horizon - (s + 1) as f64 * h });
        }
    }

    let time_grid = (0..=steps).map(|s| if s == steps { horizon } else { s as f64 * h }).collect();
    Ok(PartialInfoSurface {
        time_grid,
        pi_grid: scheme.pis.clone(),
        cap: scheme.cap as u32,
        gradient_scale: grid.gradient_scale,
        cfl: report,
        theta: flip(&rev_theta, size),
        spread_bid: flip(&rev_bid, size),
        spread_ask: flip(&rev_ask, size),
    })
}

/// Reverse the order of the `size`-long blocks of `rev`.
fn flip<T: Copy>(rev: &[T], size: usize) -> Vec<T> {
    rev.chunks(size).rev().flatten().copied().collect()
}

/// Partial-information feedback policy reading the stored spread tables.
#[derive(Debug, Clone)]
pub struct PartialInfoPolicy<'a> {
    surface: &'a PartialInfoSurface,
    cap: InventoryCap,
    min_spread: f64,
}

impl<'a> PartialInfoPolicy<'a> {
    pub fn new(surface: &'a PartialInfoSurface) -> Self {
        PartialInfoPolicy { surface, cap: InventoryCap::Finite(surface.cap), min_spread: surface.min_spread() }
    }

    pub fn spreads(&self, t: f64, n: i64, p: f64) -> QuotePair {
        let q = |side| {
            if self.cap.side_open(side, n) {
                self.surface.spread_at(t, n, p, side)
            } else {
                Quote::Stub
            }
        };
        QuotePair::new(q(Side::Bid), q(Side::Ask))
    }
}

impl Policy for PartialInfoPolicy<'_> {
    fn quotes(&self, ctx: &PolicyContext<'_>) -> QuotePair {
        self.spreads(ctx.t, ctx.inventory, ctx.filter[0])
    }

    fn min_spread(&self) -> f64 {
        self.min_spread
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub m_pi: usize,
    /// Sup-norm difference to the previous grid on common nodes.
    pub sup_diff: Option<f64>,
    /// Previous difference divided by this one.
    pub ratio: Option<f64>,
    pub substeps: usize,
}

/// Solve on each `M_π` of `ladder` (each doubling the previous) and compare
/// on common nodes. All grids share the stored time grid and the inner step
/// the finest grid needs, so the differences isolate the belief-grid error.
pub fn convergence_report(spec: &ModelSpec, ladder: &[usize], m_t: Option<usize>) -> Result<Vec<ConvergenceRow>> {
    if ladder.len() < 3 || ladder.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(SolverError::Unsupported("ladder needs at least 3 grids, each refining by 2".into()));
    }
    let m_t = m_t.or(Some(GridParams::default().stored_steps(spec.horizon)));
    let finest = *ladder.last().expect("non-empty ladder");
    let min_substeps = solve(spec, GridParams { m_t, m_pi: finest, ..GridParams::default() })?.cfl.max_substeps_per_step;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut prev: Option<PartialInfoSurface> = None;
    for &m_pi in ladder {
        let surf = solve(spec, GridParams { m_t, m_pi, min_substeps, ..GridParams::default() })?;
        let sup_diff = prev.as_ref().map(|c| {
            let mut worst = 0.0_f64;
            for t in 0..surf.time_grid.len() {
                for n in surf.inventories() {
                    for j in 0..=c.m_pi() {
                        worst = worst.max((surf.theta(t, n, 2 * j) - c.theta(t, n, j)).abs());
                    }
                }
            }
            worst
        });
        let ratio = match (rows.last().and_then(|r| r.sup_diff), sup_diff) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        rows.push(ConvergenceRow { m_pi, sup_diff, ratio, substeps: surf.cfl.substeps });
        prev = Some(surf);
    }
    Ok(rows)
}
