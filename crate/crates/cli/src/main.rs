use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use algmech::verification::{run_suite, simulate};
use algmech::{Error, RunConfig, Trajectory};
use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

/// Hamiltonian mechanics on algebroids: simulate, verify, summarize.
#[derive(Parser)]
#[command(name = "algmech", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario and write the trajectory CSV.
    Simulate {
        config: PathBuf,
        /// Overrides output.trajectory; stdout when neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured checks and write the JSON report.
    Verify {
        config: PathBuf,
        /// Overrides output.report; stdout when neither is set.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides verification.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a trajectory CSV.
    Report { csv: PathBuf },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, out),
        Command::Verify { config, report, seed } => cmd_verify(&config, report, seed),
        Command::Report { csv } => cmd_report(&csv),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_trajectory(t: &Trajectory, path: Option<&Path>) -> anyhow::Result<()> {
    let mut w = open_out(path)?;
    t.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(config: &Path, out: Option<PathBuf>) -> anyhow::Result<u8> {
    let cfg = RunConfig::from_path(config)?;
    let bundle = cfg.build()?;
    let x0 = cfg.initial_state(&bundle)?;
    let out = out.or_else(|| cfg.output.trajectory.as_ref().map(PathBuf::from));
    match simulate(&bundle, &x0, cfg.integration.h, cfg.integration.steps) {
        Ok(t) => {
            write_trajectory(&t, out.as_deref())?;
            Ok(0)
        }
        Err(Error::Diverged { last_good_step, partial }) => {
            write_trajectory(&partial, out.as_deref())?;
            eprintln!("error: integration diverged; last good step {last_good_step}");
            Ok(EXIT_DIVERGED)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_verify(config: &Path, report: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.verification.seed = s;
    }
    let bundle = cfg.build()?;
    let r = run_suite(&cfg, &bundle)?;
    let out = report.or_else(|| cfg.output.report.as_ref().map(PathBuf::from));
    let mut w = open_out(out.as_deref())?;
    w.write_all(r.to_json().as_bytes())?;
    w.flush()?;
    for c in &r.checks {
        eprintln!(
            "{} {}: max_residual {:.3e}, tolerance {:.1e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.check,
            c.max_residual,
            c.tolerance
        );
    }
    Ok(if r.pass { 0 } else { EXIT_CHECK_FAILED })
}

struct Columns {
    n: usize,
    m: usize,
    monitors: Vec<String>,
}

fn parse_header(h: &csv::StringRecord) -> anyhow::Result<Columns> {
    let cols: Vec<&str> = h.iter().collect();
    if cols.first() != Some(&"t") {
        bail!("malformed CSV: first column must be t");
    }
    let count = |prefix: &str, from: usize| {
        let mut k = 0;
        while cols.get(from + k).is_some_and(|c| *c == format!("{prefix}{}", k + 1)) {
            k += 1;
        }
        k
    };
    let n = count("q", 1);
    let m = count("p", 1 + n);
    if m == 0 || cols.get(1 + n + m) != Some(&"H") || cols.get(2 + n + m) != Some(&"dHdt") {
        bail!("malformed CSV: header must be t,q1..qn,p1..pm,H,dHdt,<monitors>");
    }
    Ok(Columns { n, m, monitors: cols[3 + n + m..].iter().map(|s| s.to_string()).collect() })
}

fn cmd_report(path: &Path) -> anyhow::Result<u8> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        bail!("malformed CSV: empty file");
    }
    let cols = parse_header(&header)?;
    let width = header.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("malformed CSV at row {}", k + 1))?;
        if rec.len() != width {
            bail!("malformed CSV: row {} has {} fields, expected {width}", k + 1, rec.len());
        }
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("malformed CSV: non-numeric value in row {}", k + 1))?;
        rows.push(vals);
    }
    if rows.is_empty() {
        bail!("malformed CSV: no data rows");
    }
    let (n, m) = (cols.n, cols.m);
    let h_col = 1 + n + m;
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    let drift = rows.iter().map(|r| (r[h_col] - first[h_col]).abs()).fold(0.0, f64::max);
    let max_state = rows.iter().flat_map(|r| r[1..h_col].iter().map(|v| v.abs())).fold(0.0, f64::max);

    let mut out = io::stdout().lock();
    writeln!(out, "rows: {}", rows.len())?;
    writeln!(out, "dimensions: n = {n}, m = {m}")?;
    writeln!(out, "duration: {:.6e}", last[0] - first[0])?;
    writeln!(out, "H initial: {:.17e}", first[h_col])?;
    writeln!(out, "H final: {:.17e}", last[h_col])?;
    writeln!(out, "H drift: {drift:.6e}")?;
    writeln!(out, "max |state|: {max_state:.6e}")?;
    for (j, name) in cols.monitors.iter().enumerate() {
        let c = h_col + 2 + j;
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[c]), hi.max(r[c])));
        writeln!(out, "monitor {name}: initial {:.17e}, min {lo:.17e}, max {hi:.17e}", first[c])?;
    }
    Ok(0)
}
