use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sdt_core::config::CoreConfig;
use sdt_core::daemon::DaemonConfig;
use sdt_core::experiments::{self, IntensityRow, RunOptions, SweepKind};
use sdt_core::power::Coefficients;
use sdt_core::scenario::{Scenario, Topology};
use sdt_core::workload::{IntensityLabel, Rate};
use sdt_core::SimError;

#[derive(Parser)]
#[command(
    name = "sdt-sim",
    version,
    about = "SMT core simulator with a co-running data-delivery thread"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Short warm-up and measured window.
    #[arg(long, global = true)]
    fast: bool,
    /// Directory for CSV, JSON and .dat output. Tables go to stdout otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-op pipeline trace (to <out>/trace.tsv, or stderr).
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs one scenario file and prints its JSON report.
    Run { scenario: PathBuf },
    /// Sensitivity sweep of one structure.
    Sweep {
        #[arg(long)]
        structure: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u64>,
        /// Base scenario; delivery-only on a dedicated beefy core at max rate
        /// when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Aggregate delivery throughput over N dedicated delivery cores.
    Scale {
        #[arg(long, value_delimiter = ',', required = true)]
        cores: Vec<usize>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Co-located SDT+MAIN under the daemon against the two-core reference.
    Intensity {
        #[arg(long, value_delimiter = ',', default_value = "low,medium,high")]
        presets: Vec<String>,
    },
    /// CMP area and power: `cost --cores 20 --sdt vs --cores 40`.
    Cost {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        sides: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), SimError> {
    let c = &cli.common;
    if let Some(dir) = &c.out {
        fs::create_dir_all(dir)?;
    }
    match cli.cmd {
        Cmd::Run { scenario } => cmd_run(c, &scenario),
        Cmd::Sweep {
            structure,
            sizes,
            scenario,
        } => cmd_sweep(c, &structure, &sizes, scenario.as_deref()),
        Cmd::Scale { cores, scenario } => cmd_scale(c, &cores, scenario.as_deref()),
        Cmd::Intensity { presets } => {
            let rows = intensity_rows(c, &presets)?;
            let flat: Vec<IntensityCsv> = rows.iter().map(IntensityCsv::from).collect();
            emit_table(c, "intensity", &flat)
        }
        Cmd::Cost { sides } => cmd_cost(c, &sides),
    }
}

fn apply_common(c: &Common, mut s: Scenario) -> Scenario {
    if c.fast {
        s = s.fast();
    }
    if let Some(seed) = c.seed {
        s = s.with_seed(seed);
    }
    s
}

fn load_or_default(c: &Common, path: Option<&Path>) -> Result<Scenario, SimError> {
    let s = match path {
        Some(p) => Scenario::from_path(p)?,
        None => Scenario::new(
            CoreConfig::beefy(),
            Topology::DedicatedDeliveryCore,
            Rate::Max,
        ),
    };
    Ok(apply_common(c, s))
}

fn cmd_run(c: &Common, path: &Path) -> Result<(), SimError> {
    let s = load_or_default(c, Some(path))?;
    let trace: Option<Box<dyn Write>> = match (c.trace, &c.out) {
        (false, _) => None,
        (true, Some(dir)) => Some(Box::new(BufWriter::new(fs::File::create(
            dir.join("trace.tsv"),
        )?))),
        (true, None) => Some(Box::new(BufWriter::new(io::stderr()))),
    };
    let report = experiments::run_with(&s, RunOptions { trace })?;
    let json = report.to_json();
    match &c.out {
        Some(dir) => fs::write(dir.join("report.json"), format!("{json}\n"))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_sweep(
    c: &Common,
    structure: &str,
    sizes: &[u64],
    path: Option<&Path>,
) -> Result<(), SimError> {
    let kind = SweepKind::from_name(structure).ok_or_else(|| {
        let names: Vec<&str> = SweepKind::ALL.iter().map(|k| k.name()).collect();
        SimError::config(format!(
            "unknown structure {structure:?}; expected one of {}",
            names.join(", ")
        ))
    })?;
    let base = load_or_default(c, path)?;
    let rows = experiments::sweep(&base, kind, sizes)?;
    emit_table(c, &format!("sweep_{}", kind.name()), &rows)
}

fn cmd_scale(c: &Common, counts: &[usize], path: Option<&Path>) -> Result<(), SimError> {
    let base = load_or_default(c, path)?;
    let rows = experiments::scale(&base, counts)?;
    emit_table(c, "scale", &rows)
}

fn intensity_rows(c: &Common, presets: &[String]) -> Result<Vec<IntensityRow>, SimError> {
    let labels = presets
        .iter()
        .map(|p| {
            IntensityLabel::from_name(p).ok_or_else(|| {
                SimError::config(format!(
                    "unknown preset {p:?}; expected low, medium or high"
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    experiments::intensity_study(
        &CoreConfig::beefy(),
        &labels,
        &DaemonConfig::default(),
        |s| apply_common(c, s),
    )
}

#[derive(Serialize)]
struct IntensityCsv {
    preset: &'static str,
    load_gbps: f64,
    chosen_label: &'static str,
    sdt_pipeline_share: f64,
    colocated_gbps: f64,
    reference_gbps: f64,
    ratio: f64,
    colocated_p99_us: f64,
    reference_p99_us: f64,
    strps: usize,
    meets_90pct: bool,
}

impl From<&IntensityRow> for IntensityCsv {
    fn from(r: &IntensityRow) -> Self {
        IntensityCsv {
            preset: r.preset,
            load_gbps: r.load_gbps,
            chosen_label: r.chosen_label,
            sdt_pipeline_share: r.sdt_pipeline_share,
            colocated_gbps: r.colocated_gbps,
            reference_gbps: r.reference_gbps,
            ratio: r.ratio,
            colocated_p99_us: r.colocated_p99_us,
            reference_p99_us: r.reference_p99_us,
            strps: r.strps,
            meets_90pct: r.meets_90pct,
        }
    }
}

#[derive(Debug, PartialEq)]
struct CmpSide {
    cores: usize,
    sdt: bool,
}

/// Parses `--cores N [--sdt] vs --cores M [--sdt]`. Exactly one side must
/// carry `--sdt`; an empty list means 20 SDT cores against 40 baseline cores.
fn parse_cost_sides(terms: &[String]) -> Result<(usize, usize), SimError> {
    if terms.is_empty() {
        return Ok((20, 40));
    }
    let bad = |m: String| SimError::config(format!("cost: {m}"));
    let mut sides = Vec::new();
    for group in terms.split(|t| t == "vs") {
        let mut side = CmpSide {
            cores: 0,
            sdt: false,
        };
        let mut it = group.iter();
        while let Some(tok) = it.next() {
            match tok.as_str() {
                "--sdt" => side.sdt = true,
                "--cores" => {
                    let v = it
                        .next()
                        .ok_or_else(|| bad("--cores needs a value".into()))?;
                    side.cores = v
                        .parse()
                        .map_err(|_| bad(format!("bad core count {v:?}")))?;
                }
                other => return Err(bad(format!("unexpected argument {other:?}"))),
            }
        }
        if side.cores == 0 {
            return Err(bad("each side needs --cores N with N >= 1".into()));
        }
        sides.push(side);
    }
    match sides.as_slice() {
        [a, b] if a.sdt != b.sdt => {
            let (s, base) = if a.sdt { (a, b) } else { (b, a) };
            Ok((s.cores, base.cores))
        }
        _ => Err(bad("expected `--cores N --sdt vs --cores M`".into())),
    }
}

#[derive(Serialize)]
struct CostCsv {
    preset: &'static str,
    sdt_cores: usize,
    baseline_cores: usize,
    sdt_area: f64,
    baseline_area: f64,
    sdt_power: f64,
    baseline_power: f64,
    area_savings_pct: f64,
    power_savings_pct: f64,
}

fn cmd_cost(c: &Common, sides: &[String]) -> Result<(), SimError> {
    let (sdt_cores, baseline_cores) = parse_cost_sides(sides)?;
    let coef = Coefficients::shipped();
    let config = CoreConfig::beefy();
    let presets: Vec<String> = IntensityLabel::ALL
        .iter()
        .map(|l| l.name().to_string())
        .collect();
    let mut rows = Vec::new();
    for r in intensity_rows(c, &presets)? {
        let cmp = experiments::cost_comparison(&coef, &config, sdt_cores, baseline_cores, &r)?;
        rows.push(CostCsv {
            preset: cmp.preset,
            sdt_cores: cmp.sdt_cores,
            baseline_cores: cmp.baseline_cores,
            sdt_area: cmp.sdt.area_units,
            baseline_area: cmp.baseline.area_units,
            sdt_power: cmp.sdt.power_units,
            baseline_power: cmp.baseline.power_units,
            area_savings_pct: cmp.area_savings_pct,
            power_savings_pct: cmp.power_savings_pct,
        });
    }
    emit_table(c, "cost", &rows)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| SimError::config(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SimError::config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Whitespace-separated copy of a CSV table with a `#` header line.
fn to_dat(csv_text: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv_text.lines().enumerate() {
        if i == 0 {
            out.push_str("# ");
        }
        out.push_str(&line.replace(',', " "));
        out.push('\n');
    }
    out
}

/// Writes `<name>.csv` and `<name>.dat` under `--out`, or the CSV to stdout.
fn emit_table<T: Serialize>(c: &Common, name: &str, rows: &[T]) -> Result<(), SimError> {
    let text = to_csv(rows)?;
    match &c.out {
        Some(dir) => {
            fs::write(dir.join(format!("{name}.csv")), &text)?;
            fs::write(dir.join(format!("{name}.dat")), to_dat(&text))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cost_sides() {
        assert_eq!(
            parse_cost_sides(&args("--cores 20 --sdt vs --cores 40")).unwrap(),
            (20, 40)
        );
        assert_eq!(
            parse_cost_sides(&args("--cores 40 vs --sdt --cores 20")).unwrap(),
            (20, 40)
        );
        assert_eq!(parse_cost_sides(&[]).unwrap(), (20, 40));
        assert!(parse_cost_sides(&args("--cores 20 vs --cores 40")).is_err());
        assert!(parse_cost_sides(&args("--cores 20 --sdt")).is_err());
        assert!(parse_cost_sides(&args("--cores x --sdt vs --cores 40")).is_err());
    }

    #[test]
    fn dat_format() {
        assert_eq!(to_dat("a,b\n1,2\n"), "# a b\n1 2\n");
    }
}
