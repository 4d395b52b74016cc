//! Flat `key = value` configuration files for [`ModelSpec`].
//!
//! Keys match the field names exactly; regimes are 1-based groups
//! `regime.N.label`, `regime.N.bid_intensity`, `regime.N.ask_intensity`
//! (`regime.N.intensity` sets both sides). `#` starts a comment.
//!
//! ```text
//! horizon_T = 1
//! inventory_cap_Nstar = 3
//! generator_Q = -5, 5; 5, -5
//! initial_filter_mu0 = 0.5, 0.5
//! regime.1.intensity = exponential(2, 25)
//! regime.2.intensity = exponential(10, 25)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::intensity::{IntensityFamily, IntensityTable};
use crate::model::{Generator, InventoryCap, ModelSpec, RegimeSpec, SpreadBounds};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` already set on line {first}")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: key `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("regime indices must run 1..={count} without gaps; `regime.{index}` is out of sequence")]
    RegimeGap { index: usize, count: usize },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

const SCALAR_KEYS: &[&str] = &[
    "horizon_T",
    "drift_mu",
    "vol_sigma",
    "risk_aversion_gamma",
    "running_penalty_zeta",
    "terminal_cost_c",
    "inventory_cap_Nstar",
    "spread_lo",
    "spread_hi",
    "generator_Q",
    "initial_filter_mu0",
    "initial_inventory_n0",
    "initial_cash_x0",
    "initial_price_s0",
];

const REQUIRED_KEYS: &[&str] = &["horizon_T", "inventory_cap_Nstar", "generator_Q", "initial_filter_mu0"];

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Debug, Default)]
struct RegimeEntries {
    label: Option<Entry>,
    bid: Option<Entry>,
    ask: Option<Entry>,
    both: Option<Entry>,
}

/// Parses a configuration file. The result is not validated; call
/// [`ModelSpec::validate`] before solving.
pub fn parse(text: &str) -> Result<ModelSpec> {
    let mut scalars: BTreeMap<&'static str, Entry> = BTreeMap::new();
    let mut regimes: BTreeMap<usize, RegimeEntries> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax { line, text: raw.to_string() });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, text: raw.to_string() });
        }
        let entry = Entry { line, value: value.to_string() };

        if let Some(rest) = key.strip_prefix("regime.") {
            let (index, field) = rest
                .split_once('.')
                .and_then(|(i, f)| Some((i.parse::<usize>().ok().filter(|&i| i > 0)?, f)))
                .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
            let group = regimes.entry(index).or_default();
            let slot = match field {
                "label" => &mut group.label,
                "bid_intensity" => &mut group.bid,
                "ask_intensity" => &mut group.ask,
                "intensity" => &mut group.both,
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            };
            if let Some(prev) = slot {
                return Err(ConfigError::Duplicate { line, key: key.to_string(), first: prev.line });
            }
            *slot = Some(entry);
            continue;
        }

        let Some(&known) = SCALAR_KEYS.iter().find(|&&k| k == key) else {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        };
        if let Some(prev) = scalars.get(known) {
            return Err(ConfigError::Duplicate { line, key: key.to_string(), first: prev.line });
        }
        scalars.insert(known, entry);
    }

    for key in REQUIRED_KEYS {
        if !scalars.contains_key(key) {
            return Err(ConfigError::Missing { key: key.to_string() });
        }
    }

    let real = |key: &'static str, default: f64| -> Result<f64> {
        match scalars.get(key) {
            None => Ok(default),
            Some(e) => parse_real(&e.value).map_err(|reason| value_err(e, key, reason)),
        }
    };
    let get = |key: &'static str| &scalars[key];

    let cap_entry = get("inventory_cap_Nstar");
    let inventory_cap = parse_cap(&cap_entry.value).map_err(|r| value_err(cap_entry, "inventory_cap_Nstar", r))?;

    let q_entry = get("generator_Q");
    let rows = parse_matrix(&q_entry.value).map_err(|r| value_err(q_entry, "generator_Q", r))?;

    let mu_entry = get("initial_filter_mu0");
    let initial_filter = parse_list(&mu_entry.value).map_err(|r| value_err(mu_entry, "initial_filter_mu0", r))?;

    let initial_inventory = match scalars.get("initial_inventory_n0") {
        None => 0,
        Some(e) => e
            .value
            .parse::<i64>()
            .map_err(|err| value_err(e, "initial_inventory_n0", format!("not an integer: {err}")))?,
    };

    let count = regimes.len();
    let mut regime_specs = Vec::with_capacity(count);
    for (pos, (index, group)) in regimes.into_iter().enumerate() {
        if index != pos + 1 {
            return Err(ConfigError::RegimeGap { index, count });
        }
        regime_specs.push(build_regime(index, group)?);
    }
    if regime_specs.is_empty() {
        return Err(ConfigError::Missing { key: "regime.1.intensity".into() });
    }

    Ok(ModelSpec {
        horizon: real("horizon_T", f64::NAN)?,
        drift: real("drift_mu", 0.0)?,
        volatility: real("vol_sigma", 0.0)?,
        risk_aversion: real("risk_aversion_gamma", 0.0)?,
        running_penalty: real("running_penalty_zeta", 0.0)?,
        terminal_cost: real("terminal_cost_c", 0.0)?,
        inventory_cap,
        spread_bounds: SpreadBounds {
            lo: real("spread_lo", f64::NEG_INFINITY)?,
            hi: real("spread_hi", f64::INFINITY)?,
        },
        regimes: regime_specs,
        generator: Generator::new(rows),
        initial_filter,
        initial_inventory,
        initial_cash: real("initial_cash_x0", 0.0)?,
        initial_price: real("initial_price_s0", 0.0)?,
    })
}

/// Whether `key` belongs to the config format (as opposed to run metadata).
pub fn is_spec_key(key: &str) -> bool {
    SCALAR_KEYS.contains(&key) || key.starts_with("regime.")
}

pub fn load(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

fn build_regime(index: usize, group: RegimeEntries) -> Result<RegimeSpec> {
    let side = |entry: &Option<Entry>, name: &str| -> Result<Option<IntensityFamily>> {
        match entry {
            None => Ok(None),
            Some(e) => {
                let key = format!("regime.{index}.{name}");
                parse_intensity(&e.value)
                    .map(Some)
                    .map_err(|reason| ConfigError::Value { line: e.line, key, reason })
            }
        }
    };
    let both = side(&group.both, "intensity")?;
    let bid = side(&group.bid, "bid_intensity")?;
    let ask = side(&group.ask, "ask_intensity")?;
    if both.is_some() && (bid.is_some() || ask.is_some()) {
        let e = group.bid.as_ref().or(group.ask.as_ref()).expect("one side present");
        return Err(ConfigError::Value {
            line: e.line,
            key: format!("regime.{index}.intensity"),
            reason: "per-side intensities conflict with the shared `intensity` key".into(),
        });
    }
    let missing = |name: &str| ConfigError::Missing { key: format!("regime.{index}.{name}") };
    let (bid, ask) = match both {
        Some(f) => (f.clone(), f),
        None => (bid.ok_or_else(|| missing("bid_intensity"))?, ask.ok_or_else(|| missing("ask_intensity"))?),
    };
    let label = group.label.map(|e| e.value).unwrap_or_else(|| format!("regime{index}"));
    Ok(RegimeSpec { label, bid_intensity: bid, ask_intensity: ask })
}

fn value_err(entry: &Entry, key: &str, reason: String) -> ConfigError {
    ConfigError::Value { line: entry.line, key: key.to_string(), reason }
}

/// Accepts anything `f64::from_str` does, including `inf` and `-inf`.
fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_nan() {
        return Err("NaN is not allowed".into());
    }
    Ok(v)
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(parse_real).collect()
}

fn parse_matrix(s: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_list).collect::<std::result::Result<_, _>>()?;
    let k = rows.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != k) {
        return Err(format!("row {} has {} entries, expected {k}", bad + 1, rows[bad].len()));
    }
    Ok(rows)
}

fn parse_cap(s: &str) -> std::result::Result<InventoryCap, String> {
    if s.eq_ignore_ascii_case("unbounded") {
        return Ok(InventoryCap::Unbounded);
    }
    match s.parse::<u32>() {
        Ok(n) if n > 0 => Ok(InventoryCap::Finite(n)),
        _ => Err(format!("expected a positive integer or `unbounded`, found {s:?}")),
    }
}

/// `exponential(a, b)`, `logistic(a, b, c)`, `arctan(a, b, c)`,
/// `power_law(a, b, c, d)` or `tabulated(δ:Λ, δ:Λ, ...)`.
pub fn parse_intensity(s: &str) -> std::result::Result<IntensityFamily, String> {
    let s = s.trim();
    let (name, args) = s
        .strip_suffix(')')
        .and_then(|s| s.split_once('('))
        .ok_or_else(|| format!("expected `family(args)`, found {s:?}"))?;
    let name = name.trim();
    if name == "tabulated" {
        let points = args
            .split(',')
            .map(|p| {
                let (d, v) = p.split_once(':').ok_or_else(|| format!("table point {p:?} is not `spread:rate`"))?;
                Ok((parse_real(d)?, parse_real(v)?))
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        return IntensityTable::new(points).map(IntensityFamily::Tabulated).map_err(|e| e.to_string());
    }
    let p = parse_list(args)?;
    let arity = |n: usize| {
        if p.len() == n {
            Ok(())
        } else {
            Err(format!("`{name}` takes {n} parameters, found {}", p.len()))
        }
    };
    match name {
        "exponential" => arity(2).map(|_| IntensityFamily::Exponential { a: p[0], b: p[1] }),
        "logistic" => arity(3).map(|_| IntensityFamily::Logistic { a: p[0], b: p[1], c: p[2] }),
        "arctan" => arity(3).map(|_| IntensityFamily::Arctan { a: p[0], b: p[1], c: p[2] }),
        "power_law" => arity(4).map(|_| IntensityFamily::PowerLaw { a: p[0], b: p[1], c: p[2], d: p[3] }),
        _ => Err(format!("unknown intensity family `{name}`")),
    }
}

pub fn format_intensity(f: &IntensityFamily) -> String {
    let args: Vec<String> = match f {
        IntensityFamily::Tabulated(t) => t.points().map(|(d, v)| format!("{d}:{v}")).collect(),
        _ => f.params().iter().map(f64::to_string).collect(),
    };
    format!("{}({})", f.kind(), args.join(", "))
}

/// Every key of `spec` in file order. `f64` display is shortest round-trip,
/// so [`parse`] of [`to_string`] reproduces the spec exactly.
pub fn entries(spec: &ModelSpec) -> Vec<(String, String)> {
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
    let cap = match spec.inventory_cap {
        InventoryCap::Finite(n) => n.to_string(),
        InventoryCap::Unbounded => "unbounded".into(),
    };
    let q = spec.generator.rows().iter().map(|r| join(r)).collect::<Vec<_>>().join("; ");
    let mut out: Vec<(String, String)> = vec![
        ("horizon_T".into(), spec.horizon.to_string()),
        ("drift_mu".into(), spec.drift.to_string()),
        ("vol_sigma".into(), spec.volatility.to_string()),
        ("risk_aversion_gamma".into(), spec.risk_aversion.to_string()),
        ("running_penalty_zeta".into(), spec.running_penalty.to_string()),
        ("terminal_cost_c".into(), spec.terminal_cost.to_string()),
        ("inventory_cap_Nstar".into(), cap),
        ("spread_lo".into(), spec.spread_bounds.lo.to_string()),
        ("spread_hi".into(), spec.spread_bounds.hi.to_string()),
        ("generator_Q".into(), q),
        ("initial_filter_mu0".into(), join(&spec.initial_filter)),
        ("initial_inventory_n0".into(), spec.initial_inventory.to_string()),
        ("initial_cash_x0".into(), spec.initial_cash.to_string()),
        ("initial_price_s0".into(), spec.initial_price.to_string()),
    ];
    for (i, r) in spec.regimes.iter().enumerate() {
        let n = i + 1;
        out.push((format!("regime.{n}.label"), r.label.clone()));
        out.push((format!("regime.{n}.bid_intensity"), format_intensity(&r.bid_intensity)));
        out.push((format!("regime.{n}.ask_intensity"), format_intensity(&r.ask_intensity)));
    }
    out
}

pub fn to_string(spec: &ModelSpec) -> String {
    let mut s = String::new();
    for (k, v) in entries(spec) {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = "\
# two-regime reference
horizon_T = 1
drift_mu = 0
vol_sigma = 0.1
running_penalty_zeta = 0.1
inventory_cap_Nstar = 3
spread_lo = -10
spread_hi = 10
generator_Q = -5, 5; 5, -5
initial_filter_mu0 = 0.5, 0.5
initial_price_s0 = 100
regime.1.label = bad
regime.1.intensity = exponential(2, 25)
regime.2.label = good
regime.2.intensity = exponential(10, 25)   # five times busier
";

    #[test]
    fn reference_file_matches_builder() {
        let spec = parse(REFERENCE).unwrap();
        assert_eq!(spec, ModelSpec::two_regime_reference(1.0, 0.0));
        assert!(spec.validate().is_empty());
    }

    #[test]
    fn writer_round_trips() {
        let mut spec = ModelSpec::two_regime_reference(2.5, 0.01);
        spec.spread_bounds = SpreadBounds::UNBOUNDED;
        spec.regimes[0].ask_intensity = IntensityFamily::PowerLaw { a: 1.0, b: 3.0, c: 0.5, d: 2.0 };
        spec.regimes[1].bid_intensity =
            IntensityFamily::Tabulated(IntensityTable::new(vec![(0.0, 4.0), (0.1, 1.0 / 3.0)]).unwrap());
        assert_eq!(parse(&to_string(&spec)).unwrap(), spec);
    }

    #[test]
    fn errors_carry_line_and_key() {
        let text = REFERENCE.replace("vol_sigma = 0.1", "vol_sigma = abc");
        match parse(&text) {
            Err(ConfigError::Value { line: 4, key, .. }) => assert_eq!(key, "vol_sigma"),
            other => panic!("{other:?}"),
        }
        let text = REFERENCE.replace("exponential(10, 25)", "exponential(10)");
        match parse(&text) {
            Err(ConfigError::Value { line: 15, key, .. }) => assert_eq!(key, "regime.2.intensity"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("horizon_T 1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse("volatility = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(
            parse(&format!("{REFERENCE}horizon_T = 2\n")),
            Err(ConfigError::Duplicate { line: 16, first: 2, .. })
        ));
    }

    #[test]
    fn structural_errors() {
        let no_q = REFERENCE.replace("generator_Q = -5, 5; 5, -5\n", "");
        assert!(matches!(parse(&no_q), Err(ConfigError::Missing { key }) if key == "generator_Q"));
        let ragged = REFERENCE.replace("-5, 5; 5, -5", "-5, 5; 5");
        assert!(matches!(parse(&ragged), Err(ConfigError::Value { line: 9, .. })));
        let gap = REFERENCE.replace("regime.2.", "regime.3.");
        assert!(matches!(parse(&gap), Err(ConfigError::RegimeGap { index: 3, count: 2 })));
        let cap = REFERENCE.replace("inventory_cap_Nstar = 3", "inventory_cap_Nstar = 0");
        assert!(matches!(parse(&cap), Err(ConfigError::Value { line: 6, .. })));
    }

    #[test]
    fn per_side_intensities_and_unbounded_cap() {
        let text = REFERENCE
            .replace("regime.1.intensity = exponential(2, 25)", "regime.1.bid_intensity = logistic(2, 25, 1)\nregime.1.ask_intensity = arctan(1, 2, 0)")
            .replace("inventory_cap_Nstar = 3", "inventory_cap_Nstar = unbounded")
            .replace("spread_hi = 10", "spread_hi = inf");
        let spec = parse(&text).unwrap();
        assert_eq!(spec.inventory_cap, InventoryCap::Unbounded);
        assert_eq!(spec.spread_bounds.hi, f64::INFINITY);
        assert_eq!(spec.regimes[0].bid_intensity, IntensityFamily::Logistic { a: 2.0, b: 25.0, c: 1.0 });
        assert_eq!(spec.regimes[0].ask_intensity.kind(), "arctan");
        // Unbounded with ζ > 0 parses but does not validate.
        assert!(spec.validate().iter().any(|v| v.field == "inventory_cap_Nstar"));
    }

    #[test]
    fn validation_is_separate_from_parsing() {
        let text = REFERENCE.replace("-5, 5; 5, -5", "-5, 5.1; 5, -5");
        let spec = parse(&text).unwrap();
        assert!(spec.validate().iter().any(|v| v.field == "generator_Q"));
    }
}
