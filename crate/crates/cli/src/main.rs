use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cornerray::records::{tree_summary_json, write_rays, write_reports};
use cornerray::scenario::{parse_branch_rule, Scenario};
use cornerray::suite::{self, classify_grid, kind_name};
use cornerray::verify::PropertyReport;
use cornerray::Error;

/// Trace and verify broken bicharacteristics on manifolds with corners.
#[derive(Parser)]
#[command(name = "cornerray", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace every initial point; writes rays.txt and tree.json.
    Trace(Common),
    /// Tabulate the boundary classification over ζ = z e1, τ = 1; writes classify.txt.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        zeta_min: f64,
        #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
        zeta_max: f64,
        #[arg(long, default_value_t = 15)]
        n: usize,
    },
    /// Run a named property suite (core, symbols, oracle); writes reports.txt.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "core")]
        suite: String,
    },
    /// Run the escape-function and bracket reports; writes symbols.txt.
    SymbolCheck(Common),
    /// Compare against the closed-form flat billiard; writes oracle.txt.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    max_time: Option<f64>,
    /// `specular` or `all:N`.
    #[arg(long)]
    branch_rule: Option<String>,
    #[arg(long)]
    tol_rel: Option<f64>,
    #[arg(long)]
    tol_abs: Option<f64>,
    #[arg(long)]
    tol_event: Option<f64>,
    /// Threshold on |p| drift before a warning is attached.
    #[arg(long)]
    tol_drift: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
}

enum Failure {
    /// Parse or validation problem, already formatted.
    Invalid(String),
    Io(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

fn invalid(path: &Path, e: Error) -> Failure {
    match e {
        Error::ScenarioAt { line, column, message } => {
            Failure::Invalid(format!("{}:{line}:{column}: {message}", path.display()))
        }
        e => Failure::Invalid(format!("{}: {e}", path.display())),
    }
}

fn positive(path: &Path, flag: &str, v: Option<f64>) -> Result<Option<f64>, Failure> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Failure::Invalid(format!(
            "{}: --{flag} must be positive and finite, got {x}",
            path.display()
        ))),
        v => Ok(v),
    }
}

impl Common {
    fn load(&self) -> Result<Scenario, Failure> {
        let path = &self.scenario;
        let mut sc = Scenario::load(path).map_err(|e| invalid(path, e))?;
        let cfg = &mut sc.trace;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = &self.branch_rule {
            cfg.rule = parse_branch_rule(r).map_err(|m| Failure::Invalid(format!("--branch-rule: {m}")))?;
        }
        let int = &mut cfg.integrator;
        for (flag, v, slot) in [
            ("max-time", self.max_time, &mut int.max_time),
            ("tol-rel", self.tol_rel, &mut int.rel_tol),
            ("tol-abs", self.tol_abs, &mut int.abs_tol),
            ("tol-event", self.tol_event, &mut int.event_tol),
            ("tol-drift", self.tol_drift, &mut int.p_drift_warn),
            ("max-step", self.max_step, &mut int.max_step),
        ] {
            if let Some(v) = positive(path, flag, v)? {
                *slot = v;
            }
        }
        Ok(sc)
    }

    fn write(&self, name: &str, text: &str) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let p = self.out.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }
}

fn print_reports(reports: &[PropertyReport]) {
    for r in reports {
        println!(
            "{} {} statistic {:.6e} tolerance {:.6e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.statistic,
            r.tolerance
        );
    }
}

fn finish_reports(common: &Common, file: &str, reports: &[PropertyReport]) -> Result<ExitCode, Failure> {
    common.write(file, &write_reports(reports))?;
    print_reports(reports);
    Ok(if reports.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Trace(common) => {
            let sc = common.load()?;
            let trees = suite::trace_initial(&sc);
            common.write("rays.txt", &write_rays(&trees))?;
            common.write("tree.json", &tree_summary_json(&trees))?;
            for (i, t) in trees.iter().enumerate() {
                println!("tree {i}: {} nodes, {} leaves", t.nodes.len(), t.leaves().count());
                for (n, node) in t.nodes.iter().enumerate() {
                    let names: Vec<&str> = node.ray.events.iter().map(|e| e.kind.name()).collect();
                    println!("  node {n}: {}", names.join(" "));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Classify { common, zeta_min, zeta_max, n } => {
            let sc = common.load()?;
            let rows = classify_grid(&sc, zeta_min, zeta_max, n).map_err(|e| invalid(&common.scenario, e))?;
            let mut text = String::from("# cornerray classify v1\n");
            for r in &rows {
                text.push_str(&format!(
                    "zeta {:.16e} margin {:.16e} tolerance {:.16e} {}\n",
                    r.zeta,
                    r.margin,
                    r.tolerance,
                    kind_name(r.kind)
                ));
            }
            common.write("classify.txt", &text)?;
            print!("{}", text);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, suite: name } => {
            let sc = common.load()?;
            let reports = match name.as_str() {
                "core" => suite::core_suite(&sc),
                "symbols" => suite::symbol_suite(&sc),
                "oracle" => suite::oracle_suite(&sc),
                other => {
                    return Err(Failure::Invalid(format!(
                        "unknown suite `{other}`; expected core, symbols or oracle"
                    )))
                }
            }
            .map_err(|e| invalid(&common.scenario, e))?;
            finish_reports(&common, "reports.txt", &reports)
        }
        Command::SymbolCheck(common) => {
            let sc = common.load()?;
            let reports = suite::symbol_suite(&sc).map_err(|e| invalid(&common.scenario, e))?;
            finish_reports(&common, "symbols.txt", &reports)
        }
        Command::Oracle(common) => {
            let sc = common.load()?;
            let reports = suite::oracle_suite(&sc).map_err(|e| invalid(&common.scenario, e))?;
            finish_reports(&common, "oracle.txt", &reports)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
