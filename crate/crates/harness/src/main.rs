use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use kac_ldp::cost::{crossover, nucleation_cost, optimal_nucleation};
use kac_ldp::schedule::{validate_schedule, Constraint, ScaleSchedule};
use kac_ldp_harness::experiment::init_threads;
use kac_ldp_harness::record::Table;
use kac_ldp_harness::{emit_report, ExperimentConfig, Format, Registry, RunRecord};

#[derive(Parser)]
#[command(name = "kac-ldp", version, about = "Large deviations of Kac-Glauber interfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the scale schedule of a config (or the default) constraint by constraint.
    ValidateSchedule {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a schedule field, e.g. `--set lambda3=0.59`.
        #[arg(long = "set", value_name = "FIELD=VALUE")]
        overrides: Vec<String>,
    },
    /// Instanton profile, free energy and mobility.
    Instanton(RunArgs),
    /// Action of the translating instanton under grid refinement.
    Cost(RunArgs),
    /// Tube probabilities against the discrete action.
    Tube(RunArgs),
    /// Conditional nucleation frequency given front advance.
    Switching(RunArgs),
    /// `w_n = 2n Fbar + V^2 T / (mu (2n+1))` for the given `V^2 T` values.
    NucleationTable {
        #[arg(long, default_value_t = 1.0)]
        fbar: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long = "v2t", required = true)]
        v2t: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        nmax: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Report directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "format")]
    formats: Vec<Format>,
}

fn load(args: &RunArgs, kind: &str) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml(&format!("kind = \"{kind}\""))?,
    };
    if cfg.kind != kind {
        return Err(anyhow!("config is for `{}`, not `{kind}`", cfg.kind));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = &args.out {
        cfg.output.dir = Some(o.clone());
    }
    if !args.formats.is_empty() {
        cfg.output.formats = args.formats.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(rec: &RunRecord) {
    for e in &rec.estimates {
        println!(
            "{:<24} {:>14.6e}  se {:.3e}  [{:.6e}, {:.6e}]",
            e.name, e.value, e.std_err, e.lower, e.upper
        );
    }
    for w in &rec.warnings {
        println!("warning: {w}");
    }
    for c in &rec.checks {
        println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!(
        "hash {}  {:.2}s on {} threads",
        rec.content_hash(),
        rec.metrics.wall_seconds,
        rec.metrics.threads
    );
}

fn run_experiment(args: &RunArgs, kind: &str) -> anyhow::Result<bool> {
    let cfg = load(args, kind)?;
    let rec = Registry::builtin().run(&cfg)?;
    summarize(&rec);
    if let Some(dir) = &cfg.output.dir {
        for f in &cfg.output.formats {
            for p in emit_report(&rec, *f, dir)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(rec.all_passed())
}

fn validate(config: &Option<PathBuf>, overrides: &[String]) -> anyhow::Result<bool> {
    let mut s = match config {
        Some(p) => ExperimentConfig::load(p)
            .map(|c| c.schedule)
            .or_else(|_| -> anyhow::Result<ScaleSchedule> {
                let text = std::fs::read_to_string(p)?;
                Ok(toml::from_str::<ScaleSchedule>(&text)?)
            })?,
        None => ScaleSchedule::default(),
    };
    for o in overrides {
        let (field, value) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("expected FIELD=VALUE, got `{o}`"))?;
        let value: f64 = value.trim().parse().with_context(|| format!("value of {field}"))?;
        s = s.with(field.trim(), value)?;
    }
    let violated = validate_schedule(&s)?;
    for c in Constraint::ALL {
        let ok = !violated.contains(&c);
        println!(
            "{} {:<9} margin {:+.4}",
            if ok { "ok  " } else { "FAIL" },
            c.name(),
            c.margin(&s)
        );
    }
    Ok(violated.is_empty())
}

fn nucleation_table(fbar: f64, mu: f64, v2t: &[f64], nmax: u32, out: &Option<PathBuf>) -> anyhow::Result<bool> {
    let mut cols = vec!["v2t".to_string()];
    cols.extend((0..=nmax).map(|n| format!("w_{n}")));
    cols.push("argmin".into());
    let mut table = Table {
        columns: cols,
        rows: Vec::new(),
    };
    for &x in v2t {
        // R = sqrt(x), T = 1 gives V^2 T = x
        let (r, t) = (x.max(0.0).sqrt(), 1.0);
        let mut row = vec![x];
        for n in 0..=nmax {
            row.push(nucleation_cost(n, r, t, fbar, mu)?);
        }
        row.push(optimal_nucleation(r, t, fbar, mu)?[0] as f64);
        table.rows.push(row);
    }
    println!("{}", table.columns.join(","));
    for row in &table.rows {
        let s: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        println!("{}", s.join(","));
    }
    println!("# crossover 0->1 at V^2 T = {}", crossover(0, fbar, mu));
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&table.columns)?;
        for row in &table.rows {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::ValidateSchedule { config, overrides } => validate(config, overrides),
        Command::Instanton(a) => run_experiment(a, "instanton"),
        Command::Cost(a) => run_experiment(a, "cost"),
        Command::Tube(a) => run_experiment(a, "tube"),
        Command::Switching(a) => run_experiment(a, "switching"),
        Command::NucleationTable {
            fbar,
            mu,
            v2t,
            nmax,
            out,
        } => nucleation_table(*fbar, *mu, v2t, *nmax, out),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
