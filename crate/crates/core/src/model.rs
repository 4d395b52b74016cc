//! Model parameters and their validation.

use std::fmt;

use crate::intensity::IntensityFamily;

/// Side of the book a client order hits.
///
/// A `Bid` fill is a client sale to the market maker (inventory goes up by
/// one), an `Ask` fill is a client purchase (inventory goes down by one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Bid, Side::Ask];

    /// Inventory change caused by one fill on this side.
    pub fn inventory_step(self) -> i64 {
        match self {
            Side::Bid => 1,
            Side::Ask => -1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hard bound on the absolute inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InventoryCap {
    Finite(u32),
    Unbounded,
}

impl InventoryCap {
    pub fn limit(self) -> Option<i64> {
        match self {
            InventoryCap::Finite(n) => Some(n as i64),
            InventoryCap::Unbounded => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, InventoryCap::Finite(_))
    }

    pub fn contains(self, n: i64) -> bool {
        self.limit().is_none_or(|cap| n.abs() <= cap)
    }

    /// Whether a fill on `side` is allowed with inventory `n`.
    pub fn side_open(self, side: Side, n: i64) -> bool {
        match (self.limit(), side) {
            (None, _) => true,
            (Some(cap), Side::Bid) => n < cap,
            (Some(cap), Side::Ask) => -n < cap,
        }
    }
}

/// Admissible spread interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadBounds {
    pub lo: f64,
    pub hi: f64,
}

impl SpreadBounds {
    pub const UNBOUNDED: SpreadBounds = SpreadBounds { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        SpreadBounds { lo, hi }
    }

    pub fn clamp(&self, delta: f64) -> f64 {
        delta.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, delta: f64) -> bool {
        delta >= self.lo && delta <= self.hi
    }
}

/// One hidden regime: its label and its bid/ask intensity curves.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub label: String,
    pub bid_intensity: IntensityFamily,
    pub ask_intensity: IntensityFamily,
}

impl RegimeSpec {
    pub fn symmetric(label: impl Into<String>, intensity: IntensityFamily) -> Self {
        RegimeSpec { label: label.into(), bid_intensity: intensity.clone(), ask_intensity: intensity }
    }

    pub fn intensity(&self, side: Side) -> &IntensityFamily {
        match side {
            Side::Bid => &self.bid_intensity,
            Side::Ask => &self.ask_intensity,
        }
    }
}

/// Constant generator matrix of the hidden chain, row `i` holding the rates
/// out of regime `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    rows: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Generator { rows }
    }

    pub fn zeros(k: usize) -> Self {
        Generator { rows: vec![vec![0.0; k]; k] }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Transition rate from regime `i` to regime `j` (0-based).
    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `(Qᵀ π)_i`, the transport part of the filter drift.
    pub fn transpose_apply(&self, probs: &[f64]) -> Vec<f64> {
        let k = self.dim();
        (0..k).map(|i| (0..k).map(|j| self.rows[j][i] * probs[j]).sum()).collect()
    }
}

/// Every parameter of one market-making problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub horizon: f64,
    pub drift: f64,
    pub volatility: f64,
    pub risk_aversion: f64,
    pub running_penalty: f64,
    /// Coefficient `c` of the terminal cost `c·n²`.
    pub terminal_cost: f64,
    pub inventory_cap: InventoryCap,
    pub spread_bounds: SpreadBounds,
    pub regimes: Vec<RegimeSpec>,
    pub generator: Generator,
    pub initial_filter: Vec<f64>,
    pub initial_inventory: i64,
    pub initial_cash: f64,
    pub initial_price: f64,
}

/// One violated invariant of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Violation { field: field.into(), reason: reason.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

const ROW_SUM_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-12;

impl ModelSpec {
    /// Standing two-regime parameter set: `μ = 0`, `σ = 0.1`, `ζ = 0.1`,
    /// `Λ₁ = 2e^{-25δ}`, `Λ₂ = 5Λ₁`, `N* = 3`, `-q¹¹ = q²¹ = 5`, spreads in
    /// `[-10, 10]`. Regime 1 is the low-liquidity one.
    pub fn two_regime_reference(horizon: f64, terminal_cost: f64) -> Self {
        let bad = IntensityFamily::Exponential { a: 2.0, b: 25.0 };
        let good = IntensityFamily::Exponential { a: 10.0, b: 25.0 };
        ModelSpec {
            horizon,
            drift: 0.0,
            volatility: 0.1,
            risk_aversion: 0.0,
            running_penalty: 0.1,
            terminal_cost,
            inventory_cap: InventoryCap::Finite(3),
            spread_bounds: SpreadBounds::new(-10.0, 10.0),
            regimes: vec![RegimeSpec::symmetric("bad", bad), RegimeSpec::symmetric("good", good)],
            generator: Generator::new(vec![vec![-5.0, 5.0], vec![5.0, -5.0]]),
            initial_filter: vec![0.5, 0.5],
            initial_inventory: 0,
            initial_cash: 0.0,
            initial_price: 100.0,
        }
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn intensity(&self, regime: usize, side: Side) -> &IntensityFamily {
        self.regimes[regime].intensity(side)
    }

    /// Terminal execution cost `ℓ(n) = c·n²`.
    pub fn terminal_penalty(&self, n: i64) -> f64 {
        self.terminal_cost * (n * n) as f64
    }

    /// Inventory levels `-N*..=N*`; `None` when the cap is unbounded.
    pub fn inventory_levels(&self) -> Option<std::ops::RangeInclusive<i64>> {
        self.inventory_cap.limit().map(|cap| -cap..=cap)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

/// Collect every violated invariant of `spec`; an empty list means the spec is
/// usable by all solvers.
pub fn validate(spec: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    if !(spec.horizon.is_finite() && spec.horizon > 0.0) {
        out.push(Violation::new("horizon_T", "horizon must be finite and strictly positive"));
    }
    if !spec.drift.is_finite() {
        out.push(Violation::new("drift_mu", "drift must be finite"));
    }
    if !(spec.volatility.is_finite() && spec.volatility >= 0.0) {
        out.push(Violation::new("vol_sigma", "volatility must be finite and nonnegative"));
    }
    if !(spec.risk_aversion.is_finite() && spec.risk_aversion >= 0.0) {
        out.push(Violation::new("risk_aversion_gamma", "risk aversion must be finite and nonnegative"));
    }
    if !(spec.running_penalty.is_finite() && spec.running_penalty >= 0.0) {
        out.push(Violation::new("running_penalty_zeta", "running penalty must be finite and nonnegative"));
    }
    if !(spec.terminal_cost.is_finite() && spec.terminal_cost >= 0.0) {
        out.push(Violation::new("terminal_cost_c", "terminal cost must be finite and nonnegative"));
    }
    if spec.inventory_cap == InventoryCap::Finite(0) {
        out.push(Violation::new("inventory_cap_Nstar", "inventory cap must be a positive integer"));
    }
    if spec.inventory_cap == InventoryCap::Unbounded
        && (spec.risk_aversion != 0.0 || spec.running_penalty != 0.0 || spec.terminal_cost != 0.0)
    {
        out.push(Violation::new("inventory_cap_Nstar", "unbounded inventory requires γ=ζ=c=0"));
    }
    let bounds = spec.spread_bounds;
    if bounds.lo.is_nan() || bounds.hi.is_nan() || bounds.lo >= bounds.hi {
        out.push(Violation::new("spread_lo", "spread_lo must be strictly below spread_hi"));
    }
    if bounds.lo == f64::INFINITY || bounds.hi == f64::NEG_INFINITY {
        out.push(Violation::new("spread_lo", "spread bounds point the wrong way"));
    }

    let k = spec.regimes.len();
    if k == 0 {
        out.push(Violation::new("regimes", "at least one regime is required"));
    }

    let q = &spec.generator;
    if q.dim() != k || q.rows().iter().any(|r| r.len() != k) {
        out.push(Violation::new(
            "generator_Q",
            format!("generator must be {k}x{k} to match the number of regimes"),
        ));
    } else {
        for i in 0..k {
            let row = &q.rows()[i];
            let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !v.is_finite()) {
                out.push(Violation::new("generator_Q", format!("row {} has non-finite entries", i + 1)));
                continue;
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                out.push(Violation::new(
                    "generator_Q",
                    format!("generator row sum nonzero (row {} sums to {sum})", i + 1),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                if j != i && v < 0.0 {
                    out.push(Violation::new(
                        "generator_Q",
                        format!("off-diagonal entry ({}, {}) is negative", i + 1, j + 1),
                    ));
                }
            }
            if row[i] > 0.0 {
                out.push(Violation::new("generator_Q", format!("diagonal entry {} is positive", i + 1)));
            }
        }
    }

    let mu0 = &spec.initial_filter;
    if mu0.len() != k {
        out.push(Violation::new(
            "initial_filter_mu0",
            format!("initial filter has {} entries, expected {k}", mu0.len()),
        ));
    } else {
        if mu0.iter().any(|&p| !(p > 0.0 && p < 1.0)) && k > 1 {
            out.push(Violation::new("initial_filter_mu0", "entries must lie strictly inside (0, 1)"));
        }
        if k == 1 && mu0[0] != 1.0 {
            out.push(Violation::new("initial_filter_mu0", "single-regime filter must be (1)"));
        }
        let total: f64 = mu0.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            out.push(Violation::new("initial_filter_mu0", format!("entries sum to {total}, not 1")));
        }
    }

    if !spec.inventory_cap.contains(spec.initial_inventory) {
        out.push(Violation::new("initial_inventory_n0", "initial inventory exceeds the inventory cap"));
    }
    if !spec.initial_cash.is_finite() {
        out.push(Violation::new("initial_cash_x0", "initial cash must be finite"));
    }
    if !spec.initial_price.is_finite() {
        out.push(Violation::new("initial_price_s0", "initial price must be finite"));
    }

    if bounds.lo < bounds.hi {
        for (idx, regime) in spec.regimes.iter().enumerate() {
            for side in Side::BOTH {
                let report = regime.intensity(side).validity(bounds, spec.risk_aversion);
                for issue in report.issues {
                    out.push(Violation::new(format!("regime.{}.{}_intensity", idx + 1, side), issue));
                }
            }
        }
    }

    out
}
