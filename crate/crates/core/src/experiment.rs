//! Experiment drivers: single-seed runs with CSV output, parallel seed
//! dispatch, the ablation grid and summary statistics.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::trainer::{final_eval_return, first_success, MetricsRow, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUNS_FILE: &str = "runs.csv";

// ----- metrics files ------------------------------------------------------

pub fn write_metrics<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// ----- single runs --------------------------------------------------------

/// Per-seed outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub seed: u64,
    pub final_return: Option<f64>,
    pub first_success: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: SeedRecord,
    pub rows: Vec<MetricsRow>,
}

/// Trains one seed. With `out_dir`, writes the resolved config, streams the
/// metrics CSV and stores evaluation checkpoints under `checkpoints/`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, label: &str, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(cfg, seed)?;
    let mut rows = Vec::new();
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(CONFIG_FILE), cfg.to_flat_json()?)?;
            trainer = trainer.with_checkpoint_dir(dir.join("checkpoints"));
            let mut w = csv::Writer::from_path(dir.join(METRICS_FILE))?;
            trainer.run(|row| {
                w.serialize(row)?;
                w.flush()?;
                rows.push(row.clone());
                Ok(())
            })?;
        }
        None => trainer.run(|row| {
            rows.push(row.clone());
            Ok(())
        })?,
    }
    Ok(RunOutcome {
        record: SeedRecord {
            label: label.to_owned(),
            seed,
            final_return: final_eval_return(&rows),
            first_success: first_success(&rows),
        },
        rows,
    })
}

/// Runs `jobs` closures on up to `workers` threads. Results keep job order.
pub fn run_parallel<T, F>(jobs: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let out = f(i);
                *slots[i].lock().expect("no poisoned slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned slot").expect("every job ran"))
        .collect()
}

// ----- statistics ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { n, mean, std }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.std / (self.n as f64).sqrt()
        }
    }
}

/// Median first-success step, counting seeds that never succeeded as later
/// than any step. `None` when the median itself falls on such a seed.
pub fn median_first_success(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|s| s.map_or(f64::INFINITY, |x| x as f64)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    m.is_finite().then_some(m)
}

/// Aggregate over the seeds of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub final_return: Stats,
    pub first_success_median: Option<f64>,
    pub seeds_with_success: usize,
}

impl GroupSummary {
    /// Seeds without an evaluation row count as a final return of 0.
    pub fn of(label: &str, records: &[&SeedRecord]) -> Self {
        let finals: Vec<f64> = records.iter().map(|r| r.final_return.unwrap_or(0.0)).collect();
        let firsts: Vec<Option<u64>> = records.iter().map(|r| r.first_success).collect();
        Self {
            label: label.to_owned(),
            final_return: Stats::of(&finals),
            first_success_median: median_first_success(&firsts),
            seeds_with_success: firsts.iter().filter(|f| f.is_some()).count(),
        }
    }
}

pub fn write_runs_csv(path: &Path, records: &[SeedRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<SeedRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// ----- multi-seed training ------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub runs: Vec<SeedRecord>,
    pub summary: GroupSummary,
}

fn seed_dir(out: Option<&Path>, label: Option<&str>, seed: u64) -> Option<PathBuf> {
    out.map(|d| {
        let d = match label {
            Some(l) => d.join(l),
            None => d.to_path_buf(),
        };
        d.join(format!("seed_{seed}"))
    })
}

/// Trains every seed of `seeds` in parallel and writes `runs.csv` and
/// `summary.json` next to the per-seed directories.
pub fn train_seeds(cfg: &ExperimentConfig, seeds: &[u64], workers: usize, out_dir: Option<&Path>) -> Result<TrainSummary> {
    let label = "train";
    let results = run_parallel(seeds.len(), workers, |i| {
        run_seed(cfg, seeds[i], label, seed_dir(out_dir, None, seeds[i]).as_deref()).map(|o| o.record)
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = GroupSummary::of(label, &runs.iter().collect::<Vec<_>>());
    let out = TrainSummary { runs, summary };
    if let Some(dir) = out_dir {
        write_runs_csv(&dir.join(RUNS_FILE), &out.runs)?;
        write_json(&dir.join(SUMMARY_FILE), &out)?;
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

// ----- ablation grid ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NonContrastive,
    NonCcem,
    /// Neither curiosity nor the contrastive loss.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NonContrastive, Variant::NonCcem, Variant::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NonContrastive => "non-contrastive",
            Variant::NonCcem => "non-ccem",
            Variant::Baseline => "baseline",
        }
    }

    /// The base config with this variant's switches. Variants without
    /// curiosity plan with `ablate.non_ccem_scoring`.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        let (non_ccem, non_contrastive) = match self {
            Variant::Full => (false, false),
            Variant::NonContrastive => (false, true),
            Variant::NonCcem => (true, false),
            Variant::Baseline => (true, true),
        };
        cfg.train.non_ccem = non_ccem;
        cfg.train.non_contrastive = non_contrastive;
        if non_ccem {
            cfg.cem.scoring = base.ablate.non_ccem_scoring;
        }
        cfg
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

/// Direction checks on the ablation means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub full_ge_non_contrastive: bool,
    pub non_contrastive_ge_baseline: bool,
    /// `|full − non_contrastive|` within two standard errors of the difference.
    pub full_close_to_non_contrastive: bool,
    pub passed: bool,
    pub flags: Vec<String>,
}

impl OrderingCheck {
    pub fn from_groups(full: &GroupSummary, non_contrastive: &GroupSummary, baseline: &GroupSummary) -> Self {
        let (f, n, b) = (&full.final_return, &non_contrastive.final_return, &baseline.final_return);
        let full_ge = f.mean >= n.mean;
        let nc_ge = n.mean >= b.mean;
        let se = (f.std_error().powi(2) + n.std_error().powi(2)).sqrt();
        let close = (f.mean - n.mean).abs() <= 2.0 * se;
        let mut flags = Vec::new();
        if !full_ge {
            flags.push(format!("full mean {:.3} < non-contrastive mean {:.3}", f.mean, n.mean));
        }
        if !nc_ge {
            flags.push(format!("non-contrastive mean {:.3} < baseline mean {:.3}", n.mean, b.mean));
        }
        if !close {
            flags.push(format!(
                "full and non-contrastive differ by {:.3}, more than two standard errors ({:.3})",
                (f.mean - n.mean).abs(),
                2.0 * se
            ));
        }
        Self {
            full_ge_non_contrastive: full_ge,
            non_contrastive_ge_baseline: nc_ge,
            full_close_to_non_contrastive: close,
            passed: flags.is_empty(),
            flags,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<SeedRecord>,
    pub variants: Vec<GroupSummary>,
    /// Present when the full, non-contrastive and baseline variants all ran.
    pub ordering: Option<OrderingCheck>,
}

impl AblationReport {
    pub fn group(&self, v: Variant) -> Option<&GroupSummary> {
        self.variants.iter().find(|g| g.label == v.as_str())
    }

    /// Recomputes the per-variant summaries from seed records.
    pub fn from_runs(runs: Vec<SeedRecord>, variants: &[Variant]) -> Self {
        let variants: Vec<GroupSummary> = variants
            .iter()
            .map(|v| {
                let recs: Vec<&SeedRecord> = runs.iter().filter(|r| r.label == v.as_str()).collect();
                GroupSummary::of(v.as_str(), &recs)
            })
            .collect();
        let find = |v: Variant| variants.iter().find(|g| g.label == v.as_str());
        let ordering = match (find(Variant::Full), find(Variant::NonContrastive), find(Variant::Baseline)) {
            (Some(f), Some(n), Some(b)) => Some(OrderingCheck::from_groups(f, n, b)),
            _ => None,
        };
        Self {
            runs,
            variants,
            ordering,
        }
    }
}

/// Runs `variants × seeds` on up to `workers` threads. With `out_dir`, each
/// run lands in `<variant>/seed_<s>/`, and `runs.csv` plus `summary.json`
/// are written at the top level.
pub fn ablate(
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let jobs: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let configs: Vec<ExperimentConfig> = variants.iter().map(|v| v.apply(base)).collect();
    let results = run_parallel(jobs.len(), workers, |i| {
        let (v, seed) = jobs[i];
        let cfg = &configs[variants.iter().position(|x| *x == v).expect("listed")];
        let dir = seed_dir(out_dir, Some(v.as_str()), seed);
        run_seed(cfg, seed, v.as_str(), dir.as_deref()).map(|o| o.record)
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = AblationReport::from_runs(runs, variants);
    if let Some(dir) = out_dir {
        write_runs_csv(&dir.join(RUNS_FILE), &report.runs)?;
        write_json(&dir.join(SUMMARY_FILE), &report)?;
    }
    Ok(report)
}

/// Curiosity versus plain reward-sum planning: final return ratio and
/// median first success.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendCheck {
    pub curious_mean: f64,
    pub vanilla_mean: f64,
    pub required_ratio: f64,
    pub return_ok: bool,
    pub curious_first_success: Option<f64>,
    pub vanilla_first_success: Option<f64>,
    pub first_success_ok: bool,
    pub passed: bool,
}

impl TrendCheck {
    pub fn new(curious: &GroupSummary, vanilla: &GroupSummary, required_ratio: f64) -> Self {
        let (c, v) = (curious.final_return.mean, vanilla.final_return.mean);
        let return_ok = c >= required_ratio * v;
        // A seed set that never succeeds has an infinite median.
        let inf = |m: Option<f64>| m.unwrap_or(f64::INFINITY);
        let first_success_ok = inf(curious.first_success_median) < inf(vanilla.first_success_median);
        Self {
            curious_mean: c,
            vanilla_mean: v,
            required_ratio,
            return_ok,
            curious_first_success: curious.first_success_median,
            vanilla_first_success: vanilla.first_success_median,
            first_success_ok,
            passed: return_ok && first_success_ok,
        }
    }
}
