use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvr_debias::experiment::config::{parse_seed_list, Config};
use cvr_debias::experiment::{real, synth, OutputDir};
use cvr_debias::training::SampleRatio;
use cvr_debias::{Error, Result};

#[derive(Parser)]
#[command(name = "cvr-debias", version, about = "Debiased CVR estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the loss estimators on semi-synthetic worlds
    Synth(Common),
    /// Tune, train and evaluate methods on a real dataset
    Train(Common),
    /// Score a saved checkpoint on the test set
    Eval(Common),
    /// Sweep the unclicked sample ratio of a DR-family method
    Sweep(Common),
    /// Run the four double-learning ablations
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds as `0,1,2` or `0..10`
    #[arg(long)]
    seed_list: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated method names (sets `methods`)
    #[arg(long)]
    method: Option<String>,
    /// Sample ratio: 0, 2, 4, 6, 8 or All
    #[arg(long)]
    ratio: Option<String>,
    /// Grid axis over a train setting, e.g. `--grid train.l2_prediction=1e-4,1e-2`
    #[arg(long = "grid", value_name = "KEY=V1,V2")]
    grid: Vec<String>,
    /// Any other configuration key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self, command: &str) -> Result<(Config, Option<Vec<u64>>, OutputDir)> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::new(),
        };
        cfg.apply_overrides(self.set.iter().map(String::as_str))?;
        for g in &self.grid {
            let (k, v) = g
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--grid '{g}' is not KEY=V1,V2")))?;
            let k = k.trim();
            let k = k.strip_prefix("grid.").unwrap_or(k);
            let k = if k.contains('.') { k.to_string() } else { format!("train.{k}") };
            cfg.set(&format!("grid.{k}"), v.trim());
        }
        if let Some(m) = &self.method {
            cfg.set("methods", m);
        }
        if let Some(r) = &self.ratio {
            let ratio: SampleRatio = r.parse()?;
            let key = if command == "sweep" { "sweep.ratios" } else { "train.ratio" };
            cfg.set(key, ratio);
        }
        let seeds = self.seed_list.as_deref().map(parse_seed_list).transpose()?;
        Ok((cfg, seeds, OutputDir::new(&self.out)?))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let (mut cfg, seeds, out) = c.resolve("synth")?;
            let outcome = synth::run_synth(&mut cfg, seeds, &out)?;
            println!("wrote {} estimator rows to {}", outcome.report.rows.len(), out.root().display());
        }
        Command::Train(c) => {
            let (mut cfg, seeds, out) = c.resolve("train")?;
            let report = real::run_train(&mut cfg, seeds, &out)?;
            for r in &report.summary {
                println!(
                    "{} {} DCG@{} {:.4}±{:.4} ({} seeds, {} failed)",
                    report.dataset, r.method, r.k, r.dcg.0, r.dcg.1, r.n_seeds, r.n_failed
                );
            }
        }
        Command::Eval(c) => {
            let (mut cfg, _, out) = c.resolve("eval")?;
            let table = real::run_eval(&mut cfg, &out)?;
            for r in &table.rows {
                println!("DCG@{} {:.4} Recall@{} {:.4}", r.k, r.dcg, r.k, r.recall_normalized);
            }
        }
        Command::Sweep(c) => {
            let (mut cfg, seeds, out) = c.resolve("sweep")?;
            let report = real::run_sweep(&mut cfg, seeds, &out)?;
            for row in &report.rows {
                let dcg = row.summary.iter().find(|s| s.k == report.select_k).map_or(f64::NAN, |s| s.dcg.0);
                let mark = if row.best { " *" } else { "" };
                println!("{} ratio {} DCG@{} {dcg:.4}{mark}", report.method, row.ratio, report.select_k);
            }
        }
        Command::Ablate(c) => {
            let (mut cfg, seeds, out) = c.resolve("ablate")?;
            let report = real::run_ablate(&mut cfg, seeds, &out)?;
            for r in report.summary.iter().filter(|r| r.k == 4) {
                println!("{} {} DCG@4 {:.4}±{:.4}", report.dataset, r.method, r.dcg.0, r.dcg.1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR kind={} message={msg:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}
