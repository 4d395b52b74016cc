//! Command implementations; each returns a [`CliError`] mapped to an exit code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use regime_mm::config::{self, ConfigError};
use regime_mm::filter::{attractor as find_attractor, FilterError};
use regime_mm::hjb_full::{self, FullInfoPolicy, FullInfoSurface, SolverError};
use regime_mm::hjb_partial::{self, GridParams, PartialInfoPolicy, PartialInfoSurface};
use regime_mm::persist::{self, num, Header, PersistError};
use regime_mm::policy::{FixedSpreads, Policy, Quote};
use regime_mm::simulator::{self, MonteCarloSummary, SimError, SimOptions};
use regime_mm::{ModelSpec, Side};
use thiserror::Error;

use crate::manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(_) | SimError::ZeroPaths => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Unsupported(_) | FilterError::InvalidState(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyArg {
    Partial,
    Full,
    Fixed(f64),
}

impl std::fmt::Display for PolicyArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyArg::Partial => f.write_str("partial"),
            PolicyArg::Full => f.write_str("full"),
            PolicyArg::Fixed(d) => write!(f, "fixed:{d}"),
        }
    }
}

pub fn parse_policy(s: &str) -> std::result::Result<PolicyArg, String> {
    match s {
        "partial" => Ok(PolicyArg::Partial),
        "full" => Ok(PolicyArg::Full),
        _ => {
            let d = s.strip_prefix("fixed:").ok_or("expected `partial`, `full` or `fixed:<spread>`")?;
            d.parse::<f64>()
                .ok()
                .filter(|d| d.is_finite())
                .map(PolicyArg::Fixed)
                .ok_or_else(|| format!("bad fixed spread {d:?}"))
        }
    }
}

/// `--mt` value; `None` picks the default for the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredSteps(pub Option<usize>);

pub fn parse_mt(s: &str) -> std::result::Result<StoredSteps, String> {
    if s == "auto" {
        return Ok(StoredSteps(None));
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(StoredSteps(Some(n))),
        _ => Err(format!("expected a positive integer or `auto`, found {s:?}")),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub m_pi: usize,
    pub m_t: Option<usize>,
    pub gradient_scale: f64,
}

impl Grid {
    fn params(&self) -> GridParams {
        GridParams { m_t: self.m_t, m_pi: self.m_pi, gradient_scale: self.gradient_scale, ..GridParams::default() }
    }

    fn flags(&self) -> Vec<(String, String)> {
        vec![
            ("mpi".into(), self.m_pi.to_string()),
            ("mt".into(), self.m_t.map_or("auto".into(), |m| m.to_string())),
            ("gradient_scale".into(), self.gradient_scale.to_string()),
        ]
    }
}

pub struct SimulateArgs {
    pub policy: PolicyArg,
    pub paths: usize,
    pub seed: u64,
    pub surface: Option<PathBuf>,
    pub record: usize,
    pub grid: Grid,
    pub steps: usize,
}

fn load_spec(path: &Path) -> Result<ModelSpec> {
    let spec = config::load(path)?;
    let violations = spec.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(CliError::Config(format!("invalid model in {}:\n{}", path.display(), list.join("\n"))));
    }
    Ok(spec)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn finish(manifest: &RunManifest) -> Result<()> {
    manifest.write()?;
    println!("out_dir={}", manifest.dir.display());
    Ok(())
}

pub fn solve_full(config: &Path, steps: usize, out: &Path) -> Result<()> {
    let spec = load_spec(config)?;
    let mut m = RunManifest::new("solve-full", &spec, vec![("steps".into(), steps.to_string())], None, out);
    let surface = hjb_full::solve_constrained_with(&spec, steps)?;
    let residual = hjb_full::midpoint_residual(&spec, &surface)?;
    m.create_dir()?;
    persist::write_full_surface(create(&m.output("surface_full.csv"))?, &m.header(), &surface)?;
    println!("rows={}", surface.time_grid.len() * surface.levels() * surface.regimes);
    println!("midpoint_residual={}", num(residual));
    finish(&m)
}

pub fn solve_partial(config: &Path, grid: &Grid, out: &Path) -> Result<()> {
    let spec = load_spec(config)?;
    let mut m = RunManifest::new("solve-partial", &spec, grid.flags(), None, out);
    let surface = hjb_partial::solve(&spec, grid.params())?;
    m.create_dir()?;
    persist::write_partial_surface(create(&m.output("surface_partial.csv"))?, &m.header(), &surface)?;

    let mut w = create(&m.output("spreads_t0.csv"))?;
    for (k, v) in &m.header().entries {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "n,pi,spread_bid,spread_ask")?;
    for n in surface.inventories() {
        for (j, &p) in surface.pi_grid.iter().enumerate() {
            let q = |side| quote(surface.spread(0, n, j, side));
            writeln!(w, "{n},{},{},{}", num(p), q(Side::Bid), q(Side::Ask))?;
        }
    }
    w.flush()?;

    let c = surface.cfl;
    println!("cfl_max_coeff={}", num(c.max_coeff));
    println!("cfl_max_ratio={}", num(c.max_ratio));
    println!("cfl_substeps={}", c.substeps);
    finish(&m)
}

fn quote(q: Quote) -> String {
    q.spread().map_or_else(|| "stub".into(), num)
}

fn check_echo(header: &Header, spec: &ModelSpec, path: &Path) -> Result<()> {
    let echoed = header.spec().map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
    if &echoed != spec {
        return Err(CliError::Config(format!("{} was solved for a different model", path.display())));
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Numerical(format!("surface {}: {e}", path.display())))
}

fn partial_surface(spec: &ModelSpec, args: &SimulateArgs) -> Result<PartialInfoSurface> {
    match &args.surface {
        Some(path) => {
            let (h, s) = persist::read_partial_surface(open(path)?)?;
            check_echo(&h, spec, path)?;
            Ok(s)
        }
        None => Ok(hjb_partial::solve(spec, args.grid.params())?),
    }
}

fn full_surface(spec: &ModelSpec, args: &SimulateArgs) -> Result<FullInfoSurface> {
    match &args.surface {
        Some(path) => {
            let (h, s) = persist::read_full_surface(open(path)?)?;
            check_echo(&h, spec, path)?;
            Ok(s)
        }
        None => Ok(hjb_full::solve_constrained_with(spec, args.steps)?),
    }
}

pub fn simulate(config: &Path, args: &SimulateArgs, out: &Path) -> Result<()> {
    let spec = load_spec(config)?;
    if args.paths == 0 {
        return Err(SimError::ZeroPaths.into());
    }
    let mut flags = vec![
        ("policy".to_string(), args.policy.to_string()),
        ("paths".to_string(), args.paths.to_string()),
        ("record".to_string(), args.record.to_string()),
    ];
    match args.policy {
        PolicyArg::Partial => flags.extend(args.grid.flags()),
        PolicyArg::Full => flags.push(("steps".into(), args.steps.to_string())),
        PolicyArg::Fixed(_) => {}
    }
    if let Some(p) = &args.surface {
        flags.push(("surface".into(), p.display().to_string()));
    }
    let mut m = RunManifest::new("simulate", &spec, flags, Some(args.seed), out);

    match args.policy {
        PolicyArg::Partial => {
            let s = partial_surface(&spec, args)?;
            run_simulation(&spec, &PartialInfoPolicy::new(&s), args, &mut m)
        }
        PolicyArg::Full => {
            let s = full_surface(&spec, args)?;
            run_simulation(&spec, &FullInfoPolicy::new(&spec, &s)?, args, &mut m)
        }
        PolicyArg::Fixed(delta) => {
            run_simulation(&spec, &FixedSpreads { delta, cap: spec.inventory_cap }, args, &mut m)
        }
    }
}

fn run_simulation<P: Policy>(spec: &ModelSpec, policy: &P, args: &SimulateArgs, m: &mut RunManifest) -> Result<()> {
    let summary = if policy.needs_regime() {
        simulator::monte_carlo_with_regime(spec, policy, args.paths, args.seed)?
    } else {
        simulator::monte_carlo(spec, policy, args.paths, args.seed)?
    };
    m.create_dir()?;
    let header = m.header();
    let opts = SimOptions { record: true, ..SimOptions::default() };
    for i in 0..args.record.min(args.paths) {
        let rec = if policy.needs_regime() {
            simulator::simulate_with_regime_with(spec, policy, args.seed, i as u64, opts)?.0
        } else {
            simulator::simulate_path_with(spec, policy, args.seed, i as u64, opts)?
        };
        let mut h = header.clone();
        h.push("path_index", i);
        persist::write_path(create(&m.output(&format!("path_{}.csv", i + 1)))?, &h, &rec)?;
    }
    write_histogram(create(&m.output("histogram.csv"))?, &header, &summary)?;
    let mut h = Header::new();
    h.push("manifest_hash", &m.hash);
    persist::write_summary(create(&m.output("summary.txt"))?, &h, &summary)?;

    println!("paths={}", summary.paths);
    println!("mean_pnl={}", num(summary.mean_pnl));
    println!("stderr={}", num(summary.stderr));
    println!("fills_bid={}", num(summary.mean_fills_bid));
    println!("fills_ask={}", num(summary.mean_fills_ask));
    finish(m)
}

fn write_histogram<W: Write>(mut w: W, header: &Header, s: &MonteCarloSummary) -> Result<()> {
    for (k, v) in &header.entries {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "bin_lo,bin_hi,count")?;
    let h = &s.histogram;
    let width = (h.hi - h.lo) / h.counts.len() as f64;
    for (b, c) in h.counts.iter().enumerate() {
        writeln!(w, "{},{},{c}", num(h.lo + b as f64 * width), num(h.lo + (b + 1) as f64 * width))?;
    }
    w.flush()?;
    Ok(())
}

pub fn attractor(config: &Path, beta: u32) -> Result<()> {
    let spec = load_spec(config)?;
    let a = find_attractor(&spec, beta)?;
    println!("beta={beta}");
    println!("pi_star={}", num(a.root));
    println!("slope={}", num(a.slope));
    Ok(())
}

/// Beliefs at which partial-information spreads are reported.
pub const COMPARE_BELIEFS: [f64; 3] = [0.0, 0.6, 1.0];

pub fn compare(config: &Path, points: usize, grid: &Grid, steps: usize, out: &Path) -> Result<()> {
    let spec = load_spec(config)?;
    if points < 2 {
        return Err(CliError::Config("--points must be at least 2".into()));
    }
    let mut flags = grid.flags();
    flags.push(("steps".into(), steps.to_string()));
    flags.push(("points".into(), points.to_string()));
    let mut m = RunManifest::new("compare", &spec, flags, None, out);

    let partial = hjb_partial::solve(&spec, grid.params())?;
    let full = hjb_full::solve_constrained_with(&spec, steps)?;
    let pp = PartialInfoPolicy::new(&partial);
    let fp = FullInfoPolicy::new(&spec, &full)?;
    let k = spec.num_regimes();
    m.create_dir()?;

    let mut w = create(&m.output("compare.csv"))?;
    for (key, v) in &m.header().entries {
        writeln!(w, "# {key}={v}")?;
    }
    let mut cols = vec!["t".to_string(), "n".into(), "side".into()];
    cols.extend(COMPARE_BELIEFS.iter().map(|p| format!("partial_pi_{p}")));
    cols.extend((1..=k).map(|i| format!("full_regime_{i}")));
    writeln!(w, "{}", cols.join(","))?;
    for step in 0..points {
        let t = spec.horizon * step as f64 / (points - 1) as f64;
        for n in partial.inventories() {
            for side in Side::BOTH {
                let mut row = vec![num(t), n.to_string(), side.as_str().to_string()];
                row.extend(COMPARE_BELIEFS.iter().map(|&p| quote(pp.spreads(t, n, p).side(side))));
                row.extend((0..k).map(|i| quote(fp.spreads(t, n, i).side(side))));
                writeln!(w, "{}", row.join(","))?;
            }
        }
    }
    w.flush()?;

    // Relative ask-spread excess at t = 0, belief 0.6, over each regime.
    let mut s = String::new();
    s.push_str(&format!("manifest_hash={}\n", m.hash));
    let cap = partial.cap as i64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in (1 - cap)..cap {
        let Some(dp) = pp.spreads(0.0, n, 0.6).ask.spread() else { continue };
        for i in 0..k {
            let Some(df) = fp.spreads(0.0, n, i).ask.spread() else { continue };
            let excess = dp / df - 1.0;
            lo = lo.min(excess);
            hi = hi.max(excess);
            s.push_str(&format!("excess_ask_n{n}_regime{}={}\n", i + 1, num(excess)));
        }
    }
    s.push_str(&format!("min_excess_ask={}\nmax_excess_ask={}\n", num(lo), num(hi)));
    std::fs::write(m.output("compare_t0.txt"), &s)?;
    print!("{}", s.lines().skip(1).filter(|l| l.starts_with("m")).map(|l| format!("{l}\n")).collect::<String>());
    finish(&m)
}
