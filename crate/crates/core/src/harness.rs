//! Experiment runner: seeded multi-run training, per-run CSV output,
//! method comparison tables and learning-curve export.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{train, HyperParams, Method, TaskDistribution, TrainConfig, TrainOptions, TrainReport};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub env: TaskDistribution,
    /// `hyper.seed` is the base seed; run `k` uses `seed + k`.
    pub hyper: HyperParams,
    pub num_runs: usize,
    pub eval_every: usize,
    pub target_success: f64,
    /// Save parameters every this many iterations; 0 disables checkpoints.
    pub checkpoint_every: usize,
    /// Train runs concurrently instead of one after another.
    pub parallel_runs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            method: base.method,
            env: base.tasks,
            hyper: base.hyper,
            num_runs: 1,
            eval_every: base.eval_every,
            target_success: base.target_success,
            checkpoint_every: 0,
            parallel_runs: false,
        }
    }
}

impl ExperimentConfig {
    /// Read a JSON or TOML config, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            _ => serde_json::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_runs == 0 {
            return Err(Error::InvalidConfig("num_runs must be at least 1".into()));
        }
        if !(self.target_success > 0.0 && self.target_success <= 1.0) {
            return Err(Error::InvalidConfig("target_success must lie in (0, 1]".into()));
        }
        self.run_config(0).validate()
    }

    /// Training config of run `k`.
    pub fn run_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            method: self.method,
            hyper: HyperParams {
                seed: self.hyper.seed.wrapping_add(k as u64),
                ..self.hyper.clone()
            },
            tasks: self.env.clone(),
            eval_every: self.eval_every,
            target_success: self.target_success,
        }
    }
}

/// Everything `summary.json` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub reports: Vec<TrainReport>,
}

const RUN_COLUMNS: [&str; 16] = [
    "iteration",
    "task_seed",
    "train_success",
    "train_return",
    "macro_objective",
    "macro_kl",
    "macro_clip_fraction",
    "macro_grad_norm",
    "micro_objective",
    "micro_kl",
    "micro_clip_fraction",
    "micro_grad_norm",
    "eval_success",
    "eval_return",
    "eval_length",
    "chosen_blueprint",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per iteration (row 0 carries only the initial evaluation).
/// Floats use the shortest representation that parses back exactly.
pub fn write_run_csv(report: &TrainReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    let evals: BTreeMap<usize, _> = report.evaluations.iter().map(|e| (e.iteration, e)).collect();
    let mut iterations: Vec<usize> = report.iterations.iter().map(|r| r.iteration).collect();
    iterations.extend(evals.keys().copied());
    iterations.sort_unstable();
    iterations.dedup();
    let rows: BTreeMap<usize, _> = report.iterations.iter().map(|r| (r.iteration, r)).collect();
    for it in iterations {
        let row = rows.get(&it);
        let eval = evals.get(&it);
        let m = row.and_then(|r| r.macro_stats);
        let u = row.and_then(|r| r.micro_stats);
        w.write_record([
            it.to_string(),
            row.map(|r| r.task_seed.to_string()).unwrap_or_default(),
            opt(row.map(|r| r.train_success)),
            opt(row.map(|r| r.train_return)),
            opt(m.map(|s| s.objective_value)),
            opt(m.map(|s| s.kl_value)),
            opt(m.map(|s| s.clip_fraction)),
            opt(m.map(|s| s.grad_norm)),
            opt(u.map(|s| s.objective_value)),
            opt(u.map(|s| s.kl_value)),
            opt(u.map(|s| s.clip_fraction)),
            opt(u.map(|s| s.grad_norm)),
            opt(eval.map(|e| e.success)),
            opt(eval.map(|e| e.mean_return)),
            opt(eval.map(|e| e.mean_length)),
            row.and_then(|r| r.chosen_blueprint).map(|i| i.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_csv_name(k: usize) -> String {
    format!("run_{k:02}.csv")
}

/// Train `num_runs` seeds. With an output directory, writes `run_XX.csv`
/// per run, `summary.json`, optional checkpoints and trajectory dumps.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, dump_trajectories: bool) -> Result<Vec<TrainReport>> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    }
    let one = |k: usize| -> Result<TrainReport> {
        let mut opts = TrainOptions::default();
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 {
                let ck = dir.join("checkpoints").join(format!("run_{k:02}"));
                fs::create_dir_all(&ck)?;
                opts.checkpoint_dir = Some(ck);
                opts.checkpoint_every = cfg.checkpoint_every;
            }
            if dump_trajectories {
                let file = fs::File::create(dir.join(format!("trajectories_{k:02}.jsonl")))?;
                opts.trajectory_sink = Some(Box::new(std::io::BufWriter::new(file)));
            }
        }
        let report = train(&cfg.run_config(k), opts)?;
        if let Some(dir) = out_dir {
            let file = fs::File::create(dir.join(run_csv_name(k)))?;
            write_run_csv(&report, std::io::BufWriter::new(file))?;
        }
        Ok(report)
    };
    let reports: Vec<TrainReport> = if cfg.parallel_runs {
        (0..cfg.num_runs).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..cfg.num_runs).map(one).collect::<Result<_>>()?
    };
    if let Some(dir) = out_dir {
        let summary = Summary {
            config: cfg.clone(),
            reports: reports.clone(),
        };
        let file = fs::File::create(dir.join(SUMMARY_FILE))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &summary)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(reports)
}

pub fn load_summary(dir: &Path) -> Result<Summary> {
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Per-method statistics. Runs that never reached the target count as
/// infinitely slow in the iterations-to-target median; mean and std cover
/// only the runs that reached it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    pub success_median: f64,
    pub success_mean: f64,
    pub success_std: f64,
    pub score_median: f64,
    pub score_mean: f64,
    pub score_std: f64,
    pub iters_median: f64,
    pub iters_mean: Option<f64>,
    pub iters_std: Option<f64>,
    pub reached: usize,
}

impl ComparisonRow {
    pub fn from_reports(method: &str, reports: &[TrainReport]) -> Self {
        let success: Vec<f64> = reports.iter().map(|r| r.final_success).collect();
        let score: Vec<f64> = reports.iter().map(|r| r.final_return).collect();
        let iters: Vec<f64> = reports
            .iter()
            .map(|r| r.iters_to_target.map_or(f64::INFINITY, |i| i as f64))
            .collect();
        let reached: Vec<f64> = iters.iter().copied().filter(|v| v.is_finite()).collect();
        let (sm, ss) = mean_std(&success).unwrap_or((f64::NAN, f64::NAN));
        let (cm, cs) = mean_std(&score).unwrap_or((f64::NAN, f64::NAN));
        let it = mean_std(&reached);
        Self {
            method: method.to_string(),
            runs: reports.len(),
            success_median: median(&success).unwrap_or(f64::NAN),
            success_mean: sm,
            success_std: ss,
            score_median: median(&score).unwrap_or(f64::NAN),
            score_mean: cm,
            score_std: cs,
            iters_median: median(&iters).unwrap_or(f64::INFINITY),
            iters_mean: it.map(|p| p.0),
            iters_std: it.map(|p| p.1),
            reached: reached.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn fmt_iters(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "none".into()
    }
}

/// One row per method, in the given order.
pub fn compare(groups: &[(String, Vec<TrainReport>)]) -> ComparisonTable {
    ComparisonTable {
        rows: groups
            .iter()
            .map(|(name, reports)| ComparisonRow::from_reports(name, reports))
            .collect(),
    }
}

impl ComparisonTable {
    pub fn render_text(&self) -> String {
        let header = [
            "method",
            "runs",
            "succ median",
            "succ mean±std",
            "score median",
            "score mean±std",
            "iters median",
            "iters mean±std",
            "reached",
        ];
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.runs.to_string(),
                    format!("{:.3}", r.success_median),
                    format!("{:.3}±{:.3}", r.success_mean, r.success_std),
                    format!("{:.3}", r.score_median),
                    format!("{:.3}±{:.3}", r.score_mean, r.score_std),
                    fmt_iters(r.iters_median),
                    match (r.iters_mean, r.iters_std) {
                        (Some(m), Some(s)) => format!("{m:.1}±{s:.1}"),
                        _ => "-".into(),
                    },
                    format!("{}/{}", r.reached, r.runs),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: Vec<&str>| -> String {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(header.to_vec());
        out.push('\n');
        for row in &body {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "runs",
            "success_median",
            "success_mean",
            "success_std",
            "score_median",
            "score_mean",
            "score_std",
            "iters_median",
            "iters_mean",
            "iters_std",
            "reached",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.runs.to_string(),
                r.success_median.to_string(),
                r.success_mean.to_string(),
                r.success_std.to_string(),
                r.score_median.to_string(),
                r.score_mean.to_string(),
                r.score_std.to_string(),
                fmt_iters(r.iters_median),
                opt(r.iters_mean),
                opt(r.iters_std),
                r.reached.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub iteration: usize,
    pub success: f64,
    pub mean_return: f64,
}

/// Held-out learning curves: one row per evaluation of every run.
pub fn export_curves(reports: &[TrainReport], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["method", "run", "seed", "iteration", "success", "mean_return"])?;
    for (run, r) in reports.iter().enumerate() {
        for e in &r.evaluations {
            w.serialize(CurvePoint {
                method: r.method.name().to_string(),
                run,
                seed: r.seed,
                iteration: e.iteration,
                success: e.success,
                mean_return: e.mean_return,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(input: impl std::io::Read) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Output directories in the order given; each must hold a summary.
pub fn load_groups(dirs: &[PathBuf]) -> Result<Vec<(String, Vec<TrainReport>)>> {
    dirs.iter()
        .map(|d| {
            let s = load_summary(d)?;
            Ok((s.config.method.name().to_string(), s.reports))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 10.0]), Some(3.0));
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), Some(f64::INFINITY));
    }

    #[test]
    fn zero_runs_rejected() {
        let cfg = ExperimentConfig {
            num_runs: 0,
            ..Default::default()
        };
        assert_eq!(run_experiment(&cfg, None, false).unwrap_err().kind(), "invalid_config");
    }

    #[test]
    fn empty_curves_are_header_only() {
        let mut buf = Vec::new();
        export_curves(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "method,run,seed,iteration,success,mean_return\n");
    }

    #[test]
    fn run_seeds_are_offsets() {
        let cfg = ExperimentConfig {
            hyper: HyperParams {
                seed: 40,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(cfg.run_config(0).hyper.seed, 40);
        assert_eq!(cfg.run_config(3).hyper.seed, 43);
    }
}
