//! `ccem`: train, evaluate, ablate and self-check from the command line.
//!
//! Any argument of the form `--section.key=value` is a config override,
//! applied after the config file and the convenience flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ccem::checks::{self, OracleCheckReport, PlanBenchReport};
use ccem::config::ExperimentConfig;
use ccem::experiment::{self, AblationReport, GroupSummary, Variant};
use ccem::nn::checkpoint;
use ccem::trainer::Trainer;

#[derive(Parser, Debug)]
#[command(name = "ccem", version, about = "Curiosity cross-entropy planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one or more seeds.
    Train(Common),
    /// Evaluate a saved checkpoint without training.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint stem, e.g. `out/seed_0/checkpoints/step_30000`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Planner against brute-force grid oracles.
    PlanBench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// The full, non-contrastive, non-ccem and baseline grid over seeds.
    Ablate(Common),
    /// Finite-difference gradients, stop-gradient contracts and identities.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per loss.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file of flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed; overrides the config's seed list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds or a range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    /// `pointmass-sparse` or `pendulum-dense`.
    #[arg(long)]
    env: Option<String>,
    /// `sum-rewards`, `rewards-plus-terminal`, `value-sum` or `curiosity-value-sum`.
    #[arg(long)]
    scoring: Option<String>,
    /// Skip the temporal contrastive update.
    #[arg(long)]
    non_contrastive: bool,
    /// Zero the intrinsic reward.
    #[arg(long)]
    non_ccem: bool,
    #[arg(long, env = "CCEM_OUT", default_value = "ccem-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range `{s}`");
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed `{x}` in `{s}`")))
        .collect()
}

impl Common {
    /// Config from file, flags and dotted overrides, in that order.
    fn resolve(&self, dotted: &[String]) -> Result<ExperimentConfig> {
        let mut ov = Vec::new();
        if let Some(e) = &self.env {
            ov.push(format!("env.name={e}"));
        }
        if let Some(s) = &self.scoring {
            ov.push(format!("cem.scoring={s}"));
        }
        if self.non_contrastive {
            ov.push("train.non_contrastive=true".into());
        }
        if self.non_ccem {
            ov.push("train.non_ccem=true".into());
        }
        if let Some(s) = self.seed {
            ov.push(format!("seeds=[{s}]"));
        }
        if let Some(s) = &self.seeds {
            let list: Vec<String> = parse_seeds(s)?.iter().map(u64::to_string).collect();
            ov.push(format!("seeds=[{}]", list.join(",")));
        }
        ov.extend_from_slice(dotted);
        let text;
        let file = match &self.config {
            Some(p) => {
                text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Some((p.to_str().unwrap_or("config"), text.as_str()))
            }
            None => None,
        };
        Ok(ExperimentConfig::resolve(file, &ov)?)
    }
}

/// Splits `--a.b=v` overrides from the arguments clap should see.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut dotted = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if k.contains('.') => dotted.push(format!("{k}={v}")),
            _ => rest.push(a),
        }
    }
    (rest, dotted)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "never".to_owned(), |x| format!("{x:.0}"))
}

fn print_group(g: &GroupSummary) {
    println!(
        "{:<16} final return {:>9.3} ± {:<8.3} (n={})  median first success {:>8}  seeds with success {}",
        g.label,
        g.final_return.mean,
        g.final_return.std,
        g.final_return.n,
        fmt_opt(g.first_success_median),
        g.seeds_with_success
    );
}

fn train(c: &Common, dotted: &[String]) -> Result<bool> {
    let cfg = c.resolve(dotted)?;
    let out = experiment::train_seeds(&cfg, &cfg.seeds, c.workers, Some(&c.out_dir))?;
    print_group(&out.summary);
    println!("wrote {}", c.out_dir.display());
    Ok(true)
}

fn eval(c: &Common, dotted: &[String], stem: &Path) -> Result<bool> {
    let cfg = c.resolve(dotted)?;
    let seed = cfg.seeds[0];
    let mut trainer = Trainer::new(&cfg, seed)?;
    trainer.params = checkpoint::load(stem, Some(trainer.model.layout()))
        .with_context(|| format!("loading checkpoint {}", stem.display()))?;
    let res = trainer.evaluate()?;
    std::fs::create_dir_all(&c.out_dir)?;
    let mut w = csv::Writer::from_path(c.out_dir.join("eval.csv"))?;
    w.write_record(["episode", "return"])?;
    for (i, r) in res.returns.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()])?;
    }
    w.flush()?;
    let stats = experiment::Stats::of(&res.returns);
    experiment::write_json(&c.out_dir.join("eval.json"), &stats)?;
    println!("eval return {:.3} ± {:.3} over {} episodes", stats.mean, stats.std, stats.n);
    Ok(true)
}

fn plan_bench(c: &Common, dotted: &[String], trials: usize) -> Result<bool> {
    let cfg = c.resolve(dotted)?;
    let report: PlanBenchReport = checks::plan_bench(&cfg.cem, trials, cfg.seeds[0])?;
    std::fs::create_dir_all(&c.out_dir)?;
    let mut w = csv::Writer::from_path(c.out_dir.join("plan_bench.csv"))?;
    w.write_record(["scoring", "trials", "near_optimal", "mean_ratio", "min_ratio", "mean_gap"])?;
    for g in &report.scoring {
        w.write_record([
            g.scoring.to_string(),
            g.trials.to_string(),
            g.near_optimal.to_string(),
            g.mean_ratio.to_string(),
            g.min_ratio.to_string(),
            g.mean_gap.to_string(),
        ])?;
    }
    w.flush()?;
    experiment::write_json(&c.out_dir.join("plan_bench.json"), &report)?;
    let a = &report.argmax;
    println!(
        "argmax recovery: {}/{} within {} (max L-inf {:.4})",
        a.within_tolerance, a.trials, a.tolerance, a.max_linf
    );
    for g in &report.scoring {
        println!(
            "{:<22} near-optimal {}/{}  mean ratio {:.4}  min ratio {:.4}  mean gap {:+.4}",
            g.scoring.as_str(),
            g.near_optimal,
            g.trials,
            g.mean_ratio,
            g.min_ratio,
            g.mean_gap
        );
    }
    Ok(a.passed)
}

fn ablate(c: &Common, dotted: &[String]) -> Result<bool> {
    let cfg = c.resolve(dotted)?;
    let report: AblationReport = experiment::ablate(&cfg, &Variant::ALL, &cfg.seeds, c.workers, Some(&c.out_dir))?;
    for g in &report.variants {
        print_group(g);
    }
    if let Some(o) = &report.ordering {
        if o.passed {
            println!("ordering: full >= non-contrastive >= baseline, full within noise of non-contrastive");
        }
        for f in &o.flags {
            println!("ORDERING FLAG: {f}");
        }
    }
    println!("wrote {}", c.out_dir.display());
    Ok(true)
}

fn oracle_check(c: &Common, dotted: &[String], instances: usize) -> Result<bool> {
    let cfg = c.resolve(dotted)?;
    let report: OracleCheckReport = checks::oracle_check(cfg.seeds[0], instances)?;
    std::fs::create_dir_all(&c.out_dir)?;
    let mut w = csv::Writer::from_path(c.out_dir.join("oracle_check.csv"))?;
    w.write_record(["suite", "name", "passed", "value"])?;
    for g in &report.gradients {
        w.write_record(["gradient", &g.loss, &g.passed.to_string(), &g.max_rel_error.to_string()])?;
    }
    let s = &report.stop_gradients;
    w.write_record(["stop-gradient", "all", &s.passed.to_string(), &s.violations.len().to_string()])?;
    for i in &report.identities {
        w.write_record(["identity", &i.name, &i.passed.to_string(), &i.detail])?;
    }
    w.flush()?;
    experiment::write_json(&c.out_dir.join("oracle_check.json"), &report)?;
    for g in &report.gradients {
        println!("{} gradient {:<18} max rel error {:.2e}", mark(g.passed), g.loss, g.max_rel_error);
    }
    println!("{} stop-gradient {} checks, {} violations", mark(s.passed), s.checks, s.violations.len());
    for i in &report.identities {
        println!("{} {}", mark(i.passed), i.name);
    }
    Ok(report.passed)
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok  "
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let (args, dotted) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let res = match &cli.command {
        Command::Train(c) => train(c, &dotted),
        Command::Eval { common, checkpoint } => eval(common, &dotted, checkpoint),
        Command::PlanBench { common, trials } => plan_bench(common, &dotted, *trials),
        Command::Ablate(c) => ablate(c, &dotted),
        Command::OracleCheck { common, instances } => oracle_check(common, &dotted, *instances),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_flags_become_overrides() {
        let args = ["ccem", "train", "--cem.population=64", "--seed", "3", "--out-dir=x"];
        let (rest, dotted) = split_overrides(args.iter().map(|s| s.to_string()).collect());
        assert_eq!(dotted, vec!["cem.population=64"]);
        assert_eq!(rest, vec!["ccem", "train", "--seed", "3", "--out-dir=x"]);
    }

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
