//! CSV files for surfaces, simulated paths and filter trajectories.
//!
//! Every file opens with `# key=value` header lines and a column-name line.
//! Numbers are written with 17 significant digits, so reading a surface back
//! reproduces it bit for bit. Blocked sides are written as `stub`.

use std::io::{BufRead, Write};

use crate::config;
use crate::filter::FilterTrajectory;
use crate::hjb_full::FullInfoSurface;
use crate::hjb_partial::{CflReport, PartialInfoSurface};
use crate::model::{ModelSpec, Side};
use crate::policy::Quote;
use crate::simulator::{MonteCarloSummary, PathRecord};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("surface shape: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, PersistError>;

pub const FULL_COLUMNS: &str = "t,n,i,theta,spread_bid,spread_ask";
pub const PARTIAL_COLUMNS: &str = "t,n,pi,theta,spread_bid,spread_ask";
pub const PATH_COLUMNS: &str = "t,S,N,X,pi1,spread_bid,spread_ask,event_side";

/// Ordered `key=value` pairs written as `# key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Header::default()
    }

    /// Header echoing every config key of `spec`.
    pub fn with_spec(spec: &ModelSpec) -> Self {
        Header { entries: config::entries(spec) }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Last value set for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Rebuilds the echoed spec, ignoring run metadata keys.
    pub fn spec(&self) -> std::result::Result<ModelSpec, config::ConfigError> {
        let text: String = self
            .entries
            .iter()
            .filter(|(k, _)| config::is_spec_key(k))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        config::parse(&text)
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn quote(q: Quote) -> String {
    match q {
        Quote::Spread(d) => num(d),
        Quote::Stub => "stub".into(),
    }
}

fn side_name(side: Option<Side>) -> &'static str {
    side.map_or("", Side::as_str)
}

pub fn write_full_surface<W: Write>(mut w: W, header: &Header, s: &FullInfoSurface) -> Result<()> {
    header.write_to(&mut w)?;
    writeln!(w, "{FULL_COLUMNS}")?;
    for (ti, &t) in s.time_grid.iter().enumerate() {
        for n in s.inventories() {
            for i in 0..s.regimes {
                writeln!(
                    w,
                    "{},{n},{},{},{},{}",
                    num(t),
                    i + 1,
                    num(s.theta(ti, n, i)),
                    quote(s.spread(ti, n, i, Side::Bid)),
                    quote(s.spread(ti, n, i, Side::Ask)),
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the CFL report as `cfl_*` header lines after `header`.
pub fn write_partial_surface<W: Write>(mut w: W, header: &Header, s: &PartialInfoSurface) -> Result<()> {
    header.write_to(&mut w)?;
    writeln!(w, "# gradient_scale={}", s.gradient_scale)?;
    writeln!(w, "# cfl_max_coeff={}", s.cfl.max_coeff)?;
    writeln!(w, "# cfl_max_ratio={}", s.cfl.max_ratio)?;
    writeln!(w, "# cfl_min_dt={}", s.cfl.min_dt)?;
    writeln!(w, "# cfl_substeps={}", s.cfl.substeps)?;
    writeln!(w, "# cfl_max_substeps_per_step={}", s.cfl.max_substeps_per_step)?;
    writeln!(w, "{PARTIAL_COLUMNS}")?;
    for (ti, &t) in s.time_grid.iter().enumerate() {
        for n in s.inventories() {
            for (j, &p) in s.pi_grid.iter().enumerate() {
                writeln!(
                    w,
                    "{},{n},{},{},{},{}",
                    num(t),
                    num(p),
                    num(s.theta(ti, n, j)),
                    quote(s.spread(ti, n, j, Side::Bid)),
                    quote(s.spread(ti, n, j, Side::Ask)),
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Row {
    line: usize,
    t: f64,
    n: i64,
    key: String,
    theta: f64,
    bid: Quote,
    ask: Quote,
}

fn read_table<R: BufRead>(r: R, columns: &str) -> Result<(Header, Vec<Row>)> {
    let mut header = Header::new();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |reason: String| PersistError::Parse { line: line_no, reason };
        if let Some(body) = line.strip_prefix('#') {
            if seen_columns {
                return Err(perr("header line after data".into()));
            }
            let (k, v) = body.trim().split_once('=').ok_or_else(|| perr("header is not `key=value`".into()))?;
            header.push(k.trim(), v.trim());
            continue;
        }
        if !seen_columns {
            if line != columns {
                return Err(perr(format!("expected columns `{columns}`")));
            }
            seen_columns = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(perr(format!("expected 6 fields, found {}", f.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number {s:?}")));
        let q = |s: &str| if s == "stub" { Ok(Quote::Stub) } else { real(s).map(Quote::Spread) };
        rows.push(Row {
            line: line_no,
            t: real(f[0])?,
            n: f[1].parse().map_err(|_| perr(format!("bad inventory {:?}", f[1])))?,
            key: f[2].to_string(),
            theta: real(f[3])?,
            bid: q(f[4])?,
            ask: q(f[5])?,
        });
    }
    if !seen_columns {
        return Err(PersistError::Shape("no column line".into()));
    }
    if rows.is_empty() {
        return Err(PersistError::Shape("no data rows".into()));
    }
    Ok((header, rows))
}

/// Checks rows are laid out `[t][n][inner]` and returns the time grid.
fn time_grid(rows: &[Row], cap: u32, inner: usize) -> Result<Vec<f64>> {
    let block = (2 * cap as usize + 1) * inner;
    if rows.len() % block != 0 {
        return Err(PersistError::Shape(format!("{} rows is not a multiple of {block}", rows.len())));
    }
    let mut grid = Vec::with_capacity(rows.len() / block);
    for (r, row) in rows.iter().enumerate() {
        let level = (r / inner) % (2 * cap as usize + 1);
        if r % block == 0 {
            grid.push(row.t);
        }
        if row.t != grid[r / block] || row.n != level as i64 - cap as i64 {
            return Err(PersistError::Parse { line: row.line, reason: "row out of grid order".into() });
        }
    }
    Ok(grid)
}

fn split(rows: Vec<Row>) -> (Vec<f64>, Vec<Quote>, Vec<Quote>) {
    let mut theta = Vec::with_capacity(rows.len());
    let mut bid = Vec::with_capacity(rows.len());
    let mut ask = Vec::with_capacity(rows.len());
    for r in rows {
        theta.push(r.theta);
        bid.push(r.bid);
        ask.push(r.ask);
    }
    (theta, bid, ask)
}

fn cap_of(rows: &[Row]) -> Result<u32> {
    let cap = rows.iter().map(|r| r.n.unsigned_abs()).max().unwrap_or(0);
    u32::try_from(cap).map_err(|_| PersistError::Shape("inventory out of range".into()))
}

pub fn read_full_surface<R: BufRead>(r: R) -> Result<(Header, FullInfoSurface)> {
    let (header, rows) = read_table(r, FULL_COLUMNS)?;
    let cap = cap_of(&rows)?;
    let mut regimes = 0;
    for row in &rows {
        let i: usize = row.key.parse().ok().filter(|&i| i > 0).ok_or_else(|| PersistError::Parse {
            line: row.line,
            reason: format!("bad regime index {:?}", row.key),
        })?;
        regimes = regimes.max(i);
    }
    for (r, row) in rows.iter().enumerate() {
        if row.key.parse::<usize>().ok() != Some(r % regimes + 1) {
            return Err(PersistError::Parse { line: row.line, reason: "row out of grid order".into() });
        }
    }
    let grid = time_grid(&rows, cap, regimes)?;
    let (theta, bid, ask) = split(rows);
    let surface = FullInfoSurface::from_parts(grid, cap, regimes, theta, bid, ask)
        .ok_or_else(|| PersistError::Shape("inconsistent grid".into()))?;
    Ok((header, surface))
}

pub fn read_partial_surface<R: BufRead>(r: R) -> Result<(Header, PartialInfoSurface)> {
    let (header, rows) = read_table(r, PARTIAL_COLUMNS)?;
    let cap = cap_of(&rows)?;
    let parse_pi = |row: &Row| {
        row.key
            .parse::<f64>()
            .map_err(|_| PersistError::Parse { line: row.line, reason: format!("bad pi {:?}", row.key) })
    };
    let mut pi_grid = vec![parse_pi(&rows[0])?];
    for row in rows.iter().skip(1) {
        if row.n != rows[0].n || row.t != rows[0].t {
            break;
        }
        pi_grid.push(parse_pi(row)?);
    }
    let m = pi_grid.len();
    for (r, row) in rows.iter().enumerate() {
        if parse_pi(row)? != pi_grid[r % m] {
            return Err(PersistError::Parse { line: row.line, reason: "pi grid differs between rows".into() });
        }
    }
    let grid = time_grid(&rows, cap, m)?;

    let real = |key: &str| -> Result<f64> {
        header
            .get(key)
            .unwrap_or("0")
            .parse()
            .map_err(|_| PersistError::Shape(format!("header `{key}` is not a number")))
    };
    let cfl = CflReport {
        max_coeff: real("cfl_max_coeff")?,
        max_ratio: real("cfl_max_ratio")?,
        min_dt: real("cfl_min_dt")?,
        substeps: real("cfl_substeps")? as usize,
        max_substeps_per_step: real("cfl_max_substeps_per_step")? as usize,
    };
    let scale = header.get("gradient_scale").map_or(Ok(1.0), |_| real("gradient_scale"))?;
    let (theta, bid, ask) = split(rows);
    let surface = PartialInfoSurface::from_parts(grid, pi_grid, cap, scale, cfl, theta, bid, ask)
        .ok_or_else(|| PersistError::Shape("inconsistent grid".into()))?;
    Ok((header, surface))
}

/// One row per recorded step; `pi1` is the posterior of regime 1.
pub fn write_path<W: Write>(mut w: W, header: &Header, path: &PathRecord) -> Result<()> {
    header.write_to(&mut w)?;
    writeln!(w, "{PATH_COLUMNS}")?;
    for s in &path.steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            num(s.t),
            num(s.price),
            s.inventory,
            num(s.cash),
            num(s.filter[0]),
            quote(s.quotes.bid),
            quote(s.quotes.ask),
            side_name(s.event),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, pi1..pik, event_flag, side`.
pub fn write_trajectory<W: Write>(mut w: W, header: &Header, traj: &FilterTrajectory) -> Result<()> {
    header.write_to(&mut w)?;
    let k = traj.points.first().map_or(0, |p| p.probs.len());
    let pis: Vec<String> = (1..=k).map(|i| format!("pi{i}")).collect();
    writeln!(w, "t,{},event_flag,side", pis.join(","))?;
    for p in &traj.points {
        let probs: Vec<String> = p.probs.iter().map(|&x| num(x)).collect();
        writeln!(w, "{},{},{},{}", num(p.t), probs.join(","), u8::from(p.event.is_some()), side_name(p.event))?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key=value` summary.
pub fn write_summary<W: Write>(mut w: W, header: &Header, s: &MonteCarloSummary) -> Result<()> {
    for (k, v) in &header.entries {
        writeln!(w, "{k}={v}")?;
    }
    writeln!(w, "paths={}", s.paths)?;
    writeln!(w, "mean_pnl={}", num(s.mean_pnl))?;
    writeln!(w, "std_pnl={}", num(s.std_pnl))?;
    writeln!(w, "stderr={}", num(s.stderr))?;
    writeln!(w, "fills_bid={}", num(s.mean_fills_bid))?;
    writeln!(w, "fills_ask={}", num(s.mean_fills_ask))?;
    w.flush()?;
    Ok(())
}

/// Reads a flat `key=value` file such as the one from [`write_summary`].
pub fn read_flat(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb_full::solve_constrained_with;
    use crate::hjb_partial::{solve, GridParams};

    #[test]
    fn full_surface_round_trips_exactly() {
        let spec = ModelSpec::two_regime_reference(0.2, 0.01);
        let s = solve_constrained_with(&spec, 20).unwrap();
        let mut header = Header::with_spec(&spec);
        header.push("manifest_hash", "abc");
        let mut buf = Vec::new();
        write_full_surface(&mut buf, &header, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 21 * 7 * 2);
        assert!(text.contains(",-3,1,") && text.contains("stub"));
        let (h, back) = read_full_surface(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(h.get("manifest_hash"), Some("abc"));
        assert_eq!(h.spec().unwrap(), spec);
    }

    #[test]
    fn partial_surface_round_trips_exactly() {
        let spec = ModelSpec::two_regime_reference(0.1, 0.0);
        let s = solve(&spec, GridParams { m_t: Some(50), ..GridParams::with_m_pi(20) }).unwrap();
        let mut buf = Vec::new();
        write_partial_surface(&mut buf, &Header::new(), &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("# cfl_max_coeff="));
        let (_, back) = read_partial_surface(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn reader_rejects_disorder() {
        let text = "# a=1\nt,n,i,theta,spread_bid,spread_ask\n0,1,1,0,stub,0.1\n0,0,1,0,0.1,0.1\n0,-1,1,0,0.1,stub\n";
        assert!(matches!(read_full_surface(text.as_bytes()), Err(PersistError::Parse { line: 3, .. })));
        let text = "t,n,i,theta\n";
        assert!(matches!(read_full_surface(text.as_bytes()), Err(PersistError::Parse { line: 1, .. })));
        let text = "t,n,i,theta,spread_bid,spread_ask\n0,-1,1,x,stub,0.1\n";
        assert!(matches!(read_full_surface(text.as_bytes()), Err(PersistError::Parse { line: 2, .. })));
    }

    #[test]
    fn trajectory_columns() {
        let traj = FilterTrajectory {
            points: vec![
                crate::filter::TrajectoryPoint { t: 0.0, probs: vec![0.5, 0.5], inventory: 0, event: None },
                crate::filter::TrajectoryPoint {
                    t: 0.1,
                    probs: vec![0.25, 0.75],
                    inventory: 1,
                    event: Some(Side::Bid),
                },
            ],
            clamp_events: 0,
        };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &Header::new(), &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,pi1,pi2,event_flag,side");
        assert!(lines[2].ends_with(",1,bid"));
        assert!(lines[1].ends_with(",0,"));
    }
}
