//! Intensity curves `Λ(δ)`, the CARA utility, and the per-regime
//! Hamiltonians `H(d) = sup_δ Λ(δ)·U_γ(δ + d)` with their maximizers.
//!
//! Under the strong regularity condition (`Λ' < 0`, `ΛΛ'' < cΛ'²` with
//! `c < 2`) the maximizer is the unique root of
//! `f(δ, d) = δ + U_γ⁻¹(Λ(δ)/Λ'(δ)) + d`, which is strictly increasing in
//! `δ`; it is found by bisection and then floored/capped at the spread
//! bounds. Tabulated curves, and any curve failing the condition, fall back
//! to a two-level grid search.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use crate::model::SpreadBounds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntensityError {
    #[error("{family} intensity undefined at spread {delta}")]
    Domain { family: &'static str, delta: f64 },
    #[error("inverse utility undefined: y = {y} with γ = {gamma} (requires y < 1/γ)")]
    UtilityDomain { gamma: f64, y: f64 },
    #[error("optimal spread search did not converge after {iterations} iterations (d = {d})")]
    NonConvergence { iterations: usize, d: f64 },
    #[error("invalid intensity table: {0}")]
    InvalidTable(String),
}

pub type Result<T> = std::result::Result<T, IntensityError>;

/// Positive decreasing curve given on a table, interpolated linearly in
/// `log Λ` and extrapolated with the slope of the outermost segments.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTable {
    spreads: Vec<f64>,
    log_values: Vec<f64>,
}

impl IntensityTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(IntensityError::InvalidTable("at least two points required".into()));
        }
        let mut spreads = Vec::with_capacity(points.len());
        let mut log_values = Vec::with_capacity(points.len());
        for (i, &(d, v)) in points.iter().enumerate() {
            if !(d.is_finite() && v.is_finite() && v > 0.0) {
                return Err(IntensityError::InvalidTable(format!("point {i} is not finite and positive")));
            }
            if i > 0 && d <= spreads[i - 1] {
                return Err(IntensityError::InvalidTable("spreads must be strictly increasing".into()));
            }
            spreads.push(d);
            log_values.push(v.ln());
        }
        Ok(IntensityTable { spreads, log_values })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.spreads.iter().zip(&self.log_values).map(|(&d, &l)| (d, l.exp()))
    }

    fn span(&self) -> f64 {
        self.spreads[self.spreads.len() - 1] - self.spreads[0]
    }

    fn eval(&self, delta: f64) -> f64 {
        let n = self.spreads.len();
        let seg = match self.spreads.partition_point(|&s| s <= delta) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (x0, x1) = (self.spreads[seg], self.spreads[seg + 1]);
        let (y0, y1) = (self.log_values[seg], self.log_values[seg + 1]);
        (y0 + (y1 - y0) * (delta - x0) / (x1 - x0)).exp()
    }
}

/// One regime's intensity curve for one side.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensityFamily {
    /// `a·e^{-bδ}`
    Exponential { a: f64, b: f64 },
    /// `a / (1 + c·e^{bδ})`
    Logistic { a: f64, b: f64, c: f64 },
    /// `a·(π/2 + atan(-bδ + c))`
    Arctan { a: f64, b: f64, c: f64 },
    /// `a·(bδ + c)^{-d}` on `δ > -c/b`
    PowerLaw { a: f64, b: f64, c: f64, d: f64 },
    Tabulated(IntensityTable),
}

/// Outcome of the checks in [`IntensityFamily::validity`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub positive_decreasing: bool,
    pub strictly_decreasing: bool,
    /// `None` when the tail condition does not apply (finite upper bound).
    pub tail_vanishes: Option<bool>,
    /// `Λ' < 0` and `max ΛΛ''/Λ'² < 2` on the sampled range.
    pub strong: bool,
    pub issues: Vec<String>,
}

const STRONG_SAMPLES: usize = 1000;
const WINDOW: f64 = 5.0;

impl IntensityFamily {
    pub fn kind(&self) -> &'static str {
        match self {
            IntensityFamily::Exponential { .. } => "exponential",
            IntensityFamily::Logistic { .. } => "logistic",
            IntensityFamily::Arctan { .. } => "arctan",
            IntensityFamily::PowerLaw { .. } => "power_law",
            IntensityFamily::Tabulated(_) => "tabulated",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            IntensityFamily::Exponential { a, b } => vec![a, b],
            IntensityFamily::Logistic { a, b, c } | IntensityFamily::Arctan { a, b, c } => vec![a, b, c],
            IntensityFamily::PowerLaw { a, b, c, d } => vec![a, b, c, d],
            IntensityFamily::Tabulated(ref t) => t.points().flat_map(|(d, v)| [d, v]).collect(),
        }
    }

    /// Infimum of the spreads where the curve is defined.
    pub fn domain_lower(&self) -> f64 {
        match *self {
            IntensityFamily::PowerLaw { b, c, .. } => -c / b,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn eval(&self, delta: f64) -> Result<f64> {
        Ok(match *self {
            IntensityFamily::Exponential { a, b } => a * (-b * delta).exp(),
            IntensityFamily::Logistic { a, b, c } => a / (1.0 + c * (b * delta).exp()),
            IntensityFamily::Arctan { a, b, c } => a * (FRAC_PI_2 + (-b * delta + c).atan()),
            IntensityFamily::PowerLaw { a, b, c, d } => {
                let base = b * delta + c;
                if base <= 0.0 {
                    return Err(IntensityError::Domain { family: "power_law", delta });
                }
                a * base.powf(-d)
            }
            IntensityFamily::Tabulated(ref t) => t.eval(delta),
        })
    }

    /// `Λ'(δ)`; analytic except for tabulated curves.
    pub fn derivative(&self, delta: f64) -> Result<f64> {
        Ok(match *self {
            IntensityFamily::Exponential { a, b } => -b * a * (-b * delta).exp(),
            IntensityFamily::Logistic { a, b, c } => {
                let u = c * (b * delta).exp();
                -a * b * u / ((1.0 + u) * (1.0 + u))
            }
            IntensityFamily::Arctan { a, b, c } => {
                let z = -b * delta + c;
                -a * b / (1.0 + z * z)
            }
            IntensityFamily::PowerLaw { a, b, c, d } => {
                let base = b * delta + c;
                if base <= 0.0 {
                    return Err(IntensityError::Domain { family: "power_law", delta });
                }
                -a * d * b * base.powf(-d - 1.0)
            }
            IntensityFamily::Tabulated(ref t) => {
                let h = t.span() / 1e6;
                (t.eval(delta + h) - t.eval(delta - h)) / (2.0 * h)
            }
        })
    }

    pub fn second_derivative(&self, delta: f64) -> Result<f64> {
        Ok(match *self {
            IntensityFamily::Exponential { a, b } => b * b * a * (-b * delta).exp(),
            IntensityFamily::Logistic { a, b, c } => {
                let u = c * (b * delta).exp();
                -a * b * b * u * (1.0 - u) / (1.0 + u).powi(3)
            }
            IntensityFamily::Arctan { a, b, c } => {
                let z = -b * delta + c;
                -2.0 * a * b * b * z / ((1.0 + z * z) * (1.0 + z * z))
            }
            IntensityFamily::PowerLaw { a, b, c, d } => {
                let base = b * delta + c;
                if base <= 0.0 {
                    return Err(IntensityError::Domain { family: "power_law", delta });
                }
                a * d * (d + 1.0) * b * b * base.powf(-d - 2.0)
            }
            IntensityFamily::Tabulated(ref t) => {
                let h = t.span() / 1e6;
                (t.eval(delta + h) - 2.0 * t.eval(delta) + t.eval(delta - h)) / (h * h)
            }
        })
    }

    /// Finite sampling window standing in for `[δ_*, δ*]` when an end is
    /// infinite.
    pub fn effective_range(&self, bounds: SpreadBounds) -> (f64, f64) {
        let dom = self.domain_lower();
        let lo = if bounds.lo.is_finite() {
            bounds.lo
        } else if dom.is_finite() {
            dom + 1e-6
        } else {
            bounds.hi.min(0.0) - WINDOW
        };
        let hi = if bounds.hi.is_finite() { bounds.hi } else { lo.max(0.0) + WINDOW };
        (lo, hi)
    }

    fn coefficient_issues(&self, gamma: f64) -> Vec<String> {
        let mut issues = Vec::new();
        let positive = |name: &str, v: f64, issues: &mut Vec<String>| {
            if !(v.is_finite() && v > 0.0) {
                issues.push(format!("{} coefficient {name} must be positive", self.kind()));
            }
        };
        match *self {
            IntensityFamily::Exponential { a, b } => {
                positive("a", a, &mut issues);
                positive("b", b, &mut issues);
            }
            IntensityFamily::Logistic { a, b, c } => {
                positive("a", a, &mut issues);
                positive("b", b, &mut issues);
                positive("c", c, &mut issues);
            }
            IntensityFamily::Arctan { a, b, c } => {
                positive("a", a, &mut issues);
                positive("b", b, &mut issues);
                if !c.is_finite() {
                    issues.push("arctan coefficient c must be finite".into());
                }
            }
            IntensityFamily::PowerLaw { a, b, c, d } => {
                positive("a", a, &mut issues);
                positive("b", b, &mut issues);
                let min_d = if gamma == 0.0 { 1.0 } else { 0.0 };
                if !(d.is_finite() && d > min_d) {
                    issues.push(format!("power_law exponent d must exceed {min_d}"));
                }
                if !c.is_finite() {
                    issues.push("power_law coefficient c must be finite".into());
                }
            }
            IntensityFamily::Tabulated(_) => {}
        }
        issues
    }

    /// Sampled checks of positivity, monotonicity, the tail condition and the
    /// strong regularity condition over the effective spread range.
    pub fn validity(&self, bounds: SpreadBounds, gamma: f64) -> ValidityReport {
        let mut issues = self.coefficient_issues(gamma);
        if !issues.is_empty() {
            return ValidityReport {
                positive_decreasing: false,
                strictly_decreasing: false,
                tail_vanishes: None,
                strong: false,
                issues,
            };
        }
        if bounds.lo.is_finite() && bounds.lo <= self.domain_lower() {
            issues.push(format!(
                "spread_lo {} must exceed the power-law pole {}",
                bounds.lo,
                self.domain_lower()
            ));
        } else if !bounds.lo.is_finite() && self.domain_lower().is_finite() {
            issues.push("power_law intensity requires a finite spread_lo".into());
        }
        if !issues.is_empty() {
            return ValidityReport {
                positive_decreasing: false,
                strictly_decreasing: false,
                tail_vanishes: None,
                strong: false,
                issues,
            };
        }

        let (lo, hi) = self.effective_range(bounds);
        let mut positive_decreasing = true;
        let mut strictly_decreasing = true;
        let mut strong = true;
        let mut prev = f64::INFINITY;
        for s in 0..STRONG_SAMPLES {
            let delta = lo + (hi - lo) * s as f64 / (STRONG_SAMPLES - 1) as f64;
            let (Ok(v), Ok(d1), Ok(d2)) =
                (self.eval(delta), self.derivative(delta), self.second_derivative(delta))
            else {
                positive_decreasing = false;
                break;
            };
            if !(v > 0.0) || v > prev {
                positive_decreasing = false;
            }
            if v >= prev {
                strictly_decreasing = false;
            }
            prev = v;
            if !(d1 < 0.0) || !(v * d2 / (d1 * d1) < 2.0) {
                strong = false;
            }
        }
        if !positive_decreasing {
            issues.push("intensity must be positive and decreasing on the spread range".into());
        }

        let tail_vanishes = (bounds.hi == f64::INFINITY).then(|| {
            let weight = |x: f64| if gamma == 0.0 { x } else { 1.0 };
            let near = self.eval(1e3).map(|v| weight(1e3) * v).unwrap_or(f64::NAN);
            let far = self.eval(1e6).map(|v| weight(1e6) * v).unwrap_or(f64::NAN);
            far < 1e-12 || far <= 0.1 * near
        });
        if tail_vanishes == Some(false) {
            let what = if gamma == 0.0 { "δ·Λ(δ)" } else { "Λ(δ)" };
            issues.push(format!("{what} must vanish as δ → ∞ when spread_hi is unbounded"));
        }

        ValidityReport {
            positive_decreasing,
            strictly_decreasing,
            tail_vanishes,
            strong: strong && strictly_decreasing && positive_decreasing,
            issues,
        }
    }
}

/// CARA utility `U_γ(c) = (1 - e^{-γc})/γ`, with `U_0` the identity.
#[inline]
pub fn utility(gamma: f64, c: f64) -> f64 {
    if gamma == 0.0 {
        c
    } else {
        -(-gamma * c).exp_m1() / gamma
    }
}

/// Inverse of [`utility`]; for `γ > 0` it requires `y < 1/γ`.
#[inline]
pub fn utility_inverse(gamma: f64, y: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(y);
    }
    if gamma * y >= 1.0 || y.is_nan() {
        return Err(IntensityError::UtilityDomain { gamma, y });
    }
    Ok(-(-gamma * y).ln_1p() / gamma)
}

/// Which constraint, if any, is active at the optimal spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpreadRegime {
    Interior,
    Floored,
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianResult {
    pub value: f64,
    pub argmax: f64,
    pub regime: SpreadRegime,
}

/// Difference arguments beyond which the optimal spread sits on a bound:
/// below `cap` it equals `δ*`, above `floor` it equals `δ_*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadThresholds {
    pub cap: f64,
    pub floor: f64,
}

fn ratio(fam: &IntensityFamily, delta: f64) -> Result<f64> {
    Ok(fam.eval(delta)? / fam.derivative(delta)?)
}

pub fn spread_thresholds(fam: &IntensityFamily, gamma: f64, bounds: SpreadBounds) -> Result<SpreadThresholds> {
    let cap = if bounds.hi.is_finite() {
        -utility_inverse(gamma, ratio(fam, bounds.hi)?)? - bounds.hi
    } else {
        f64::NEG_INFINITY
    };
    let floor = if bounds.lo.is_finite() {
        -utility_inverse(gamma, ratio(fam, bounds.lo)?)? - bounds.lo
    } else {
        f64::INFINITY
    };
    Ok(SpreadThresholds { cap, floor })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    ClosedForm,
    FixedPoint,
    GridSearch,
}

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;
const BRACKET_MAX_DOUBLINGS: usize = 64;
const GRID_POINTS: usize = 2001;

/// Spread optimizer for one `(Λ, γ, bounds)` triple, with the regularity
/// check and the thresholds computed once.
#[derive(Debug, Clone)]
pub struct SpreadOptimizer {
    family: IntensityFamily,
    gamma: f64,
    bounds: SpreadBounds,
    thresholds: Option<SpreadThresholds>,
    mode: Mode,
}

impl SpreadOptimizer {
    pub fn new(family: &IntensityFamily, gamma: f64, bounds: SpreadBounds) -> Result<Self> {
        let mode = match family {
            IntensityFamily::Exponential { .. } => Mode::ClosedForm,
            IntensityFamily::Tabulated(_) => Mode::GridSearch,
            _ if family.validity(bounds, gamma).strong => Mode::FixedPoint,
            _ => Mode::GridSearch,
        };
        let thresholds = match mode {
            Mode::GridSearch => None,
            _ => Some(spread_thresholds(family, gamma, bounds)?),
        };
        Ok(SpreadOptimizer { family: family.clone(), gamma, bounds, thresholds, mode })
    }

    /// Same as [`SpreadOptimizer::new`] but never uses the exponential closed
    /// form; used to cross-check the bisection path.
    pub fn fixed_point(family: &IntensityFamily, gamma: f64, bounds: SpreadBounds) -> Result<Self> {
        Ok(SpreadOptimizer {
            family: family.clone(),
            gamma,
            bounds,
            thresholds: Some(spread_thresholds(family, gamma, bounds)?),
            mode: Mode::FixedPoint,
        })
    }

    /// Grid-search optimizer regardless of the family's regularity.
    pub fn grid_search(family: &IntensityFamily, gamma: f64, bounds: SpreadBounds) -> Self {
        SpreadOptimizer { family: family.clone(), gamma, bounds, thresholds: None, mode: Mode::GridSearch }
    }

    pub fn family(&self) -> &IntensityFamily {
        &self.family
    }

    pub fn bounds(&self) -> SpreadBounds {
        self.bounds
    }

    pub fn thresholds(&self) -> Option<SpreadThresholds> {
        self.thresholds
    }

    /// `f(δ, d) = δ + U_γ⁻¹(Λ(δ)/Λ'(δ)) + d`; its root is the interior optimum.
    pub fn fixed_point_residual(&self, delta: f64, d: f64) -> Result<f64> {
        Ok(delta + utility_inverse(self.gamma, ratio(&self.family, delta)?)? + d)
    }

    /// `h(δ, d) = Λ(δ)·U_γ(δ + d)`.
    pub fn objective(&self, delta: f64, d: f64) -> Result<f64> {
        Ok(self.family.eval(delta)? * utility(self.gamma, delta + d))
    }

    pub fn optimal_spread(&self, d: f64) -> Result<(f64, SpreadRegime)> {
        match self.mode {
            Mode::GridSearch => self.grid_argmax(d),
            Mode::ClosedForm | Mode::FixedPoint => {
                let th = self.thresholds.expect("thresholds set for non-grid modes");
                if d < th.cap {
                    return Ok((self.bounds.hi, SpreadRegime::Capped));
                }
                if d > th.floor {
                    return Ok((self.bounds.lo, SpreadRegime::Floored));
                }
                let delta = match (self.mode, &self.family) {
                    (Mode::ClosedForm, IntensityFamily::Exponential { b, .. }) => {
                        -utility_inverse(self.gamma, -1.0 / b)? - d
                    }
                    _ => self.bisect(d)?,
                };
                Ok((self.bounds.clamp(delta), SpreadRegime::Interior))
            }
        }
    }

    pub fn hamiltonian(&self, d: f64) -> Result<HamiltonianResult> {
        let (argmax, regime) = self.optimal_spread(d)?;
        Ok(HamiltonianResult { value: self.objective(argmax, d)?, argmax, regime })
    }

    fn bisect(&self, d: f64) -> Result<f64> {
        let f = |x: f64| self.fixed_point_residual(x, d);
        let dom = self.family.domain_lower();
        let mut lo = if self.bounds.lo.is_finite() { self.bounds.lo } else { (-1.0_f64).max(dom + 1e-12) };
        let mut hi = if self.bounds.hi.is_finite() { self.bounds.hi } else { 1.0_f64.max(lo + 1.0) };
        let mut doublings = 0;
        while f(lo)? > 0.0 {
            if self.bounds.lo.is_finite() || doublings >= BRACKET_MAX_DOUBLINGS {
                return Err(IntensityError::NonConvergence { iterations: doublings, d });
            }
            lo = if dom.is_finite() { dom + (lo - dom) / 2.0 } else { 2.0 * lo - 1.0 };
            doublings += 1;
        }
        while f(hi)? < 0.0 {
            if self.bounds.hi.is_finite() || doublings >= BRACKET_MAX_DOUBLINGS {
                return Err(IntensityError::NonConvergence { iterations: doublings, d });
            }
            hi = 2.0 * hi + 1.0;
            doublings += 1;
        }
        for _ in 0..BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= BISECTION_TOL || mid == lo || mid == hi {
                return Ok(mid);
            }
            if f(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if hi - lo <= BISECTION_TOL {
            Ok(0.5 * (lo + hi))
        } else {
            Err(IntensityError::NonConvergence { iterations: BISECTION_MAX_ITER, d })
        }
    }

    /// Coarse grid over the effective range, then a second grid over the two
    /// coarse cells around the best point. Ties go to the smallest spread.
    fn grid_argmax(&self, d: f64) -> Result<(f64, SpreadRegime)> {
        let (lo, hi) = self.family.effective_range(self.bounds);
        let (best, _) = self.scan(d, lo, hi, GRID_POINTS)?;
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let (best, _) = self.scan(d, (best - step).max(lo), (best + step).min(hi), GRID_POINTS)?;
        let regime = if best <= lo && self.bounds.lo.is_finite() {
            SpreadRegime::Floored
        } else if best >= hi && self.bounds.hi.is_finite() {
            SpreadRegime::Capped
        } else {
            SpreadRegime::Interior
        };
        Ok((best, regime))
    }

    fn scan(&self, d: f64, lo: f64, hi: f64, points: usize) -> Result<(f64, f64)> {
        let mut best = (lo, f64::NEG_INFINITY);
        for s in 0..points {
            let delta = lo + (hi - lo) * s as f64 / (points - 1) as f64;
            let v = self.objective(delta, d)?;
            if v > best.1 {
                best = (delta, v);
            }
        }
        Ok(best)
    }
}

/// Optimal spread `δ̄(d)` for a single evaluation.
pub fn optimal_spread(fam: &IntensityFamily, gamma: f64, d: f64, bounds: SpreadBounds) -> Result<f64> {
    Ok(SpreadOptimizer::new(fam, gamma, bounds)?.optimal_spread(d)?.0)
}

/// `H(d) = sup_δ Λ(δ)·U_γ(δ + d)` for a single evaluation.
pub fn hamiltonian(fam: &IntensityFamily, gamma: f64, d: f64, bounds: SpreadBounds) -> Result<HamiltonianResult> {
    SpreadOptimizer::new(fam, gamma, bounds)?.hamiltonian(d)
}
