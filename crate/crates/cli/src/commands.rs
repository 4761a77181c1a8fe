use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sst_core::diagnostics::{pearson, prune_network, read_metrics_csv, write_metrics_csv, MetricsRow};
use sst_core::exec::map_indexed;
use sst_core::optim::{Method, SamplingStrategy};
use sst_core::tasks::{evaluate_run, train, RunOutput};
use sst_core::{Error, Result};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Median of a non-empty slice; NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub struct TrainArtifacts {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: PathBuf,
    pub output: RunOutput,
}

impl TrainArtifacts {
    pub fn nan_abort(&self) -> Option<usize> {
        self.output.metrics.nan_abort
    }
}

pub fn summary_json(cfg: &RunConfig, out: &RunOutput) -> Value {
    let m = &out.metrics;
    let fin = m.final_eval();
    let traces = pearson(&m.grad_norms(), &m.records.iter().map(|r| r.grad_norm_aux).collect::<Vec<_>>()).ok();
    json!({
        "method": m.method.as_str(),
        "seed": m.seed,
        "rank": m.rank,
        "config_digest": format!("{:016x}", cfg.digest(&[])),
        "final": {
            "eval_loss": fin.map(|e| e.loss),
            "accuracy": fin.and_then(|e| e.accuracy),
            "train_loss_tail": m.tail_train_loss(50),
        },
        "evals": m.evals.iter().map(|e| json!({"step": e.step, "epoch": e.epoch, "loss": e.loss, "accuracy": e.accuracy})).collect::<Vec<_>>(),
        "correlations": { "grad_norm_vs_aux": traces },
        "counts": {
            "steps": m.steps_completed,
            "effective_steps": m.effective_steps,
            "trainable_weights": m.trainable.weights,
            "trainable_biases": m.trainable.biases,
            "trainable_other": m.trainable.other,
            "iterations": m.counters.iterations,
            "resvds": m.counters.resvds,
            "merges": m.counters.merges,
            "refreshes": m.counters.refreshes,
            "degenerate_columns": m.counters.degenerate,
        },
        "nan_abort": m.nan_abort,
        "timing": { "wall_seconds": out.timing.wall_seconds, "resvd_seconds": out.timing.resvd_seconds },
    })
}

/// Trains and writes `metrics.csv`, `summary.json` and `checkpoint.bin`
/// under `out`.
pub fn train_to_dir(cfg: &RunConfig, out: &Path) -> Result<TrainArtifacts> {
    fs::create_dir_all(out)?;
    let output = train(&cfg.run)?;
    let metrics = out.join(METRICS_FILE);
    write_metrics_csv(fs::File::create(&metrics)?, &output.metrics.csv_rows())?;
    let summary = out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary_json(cfg, &output)).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&summary, text + "\n")?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    Checkpoint {
        config: cfg.to_text(),
        counters: output.metrics.counters,
        rng: output.rng,
        model: output.model.clone(),
    }
    .save(&checkpoint)?;
    Ok(TrainArtifacts {
        metrics,
        summary,
        checkpoint,
        output,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: SamplingStrategy,
    pub finals: Vec<f64>,
    pub median: f64,
    /// Config digest with the sampling key left out.
    pub digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub top_r_worst: bool,
    /// `max / min − 1` of the medians of the three non-greedy strategies.
    pub spread: f64,
    pub same_digest: bool,
}

impl Ablation {
    pub fn comparable(&self) -> bool {
        self.spread <= 0.10
    }
}

pub const STRATEGIES: [SamplingStrategy; 4] = [
    SamplingStrategy::MultinomialMix,
    SamplingStrategy::Uniform,
    SamplingStrategy::Sequential,
    SamplingStrategy::TopR,
];

/// Trains SST under each sampling strategy for seeds `base, base+1, …`.
pub fn ablate_sampling(cfg: &RunConfig, seeds: usize) -> Result<Ablation> {
    if cfg.run.method() != Method::Sst {
        return Err(Error::InvalidArgument(format!(
            "sampling ablation needs method sst, config has {}",
            cfg.run.method()
        )));
    }
    let jobs: Vec<RunConfig> = STRATEGIES
        .iter()
        .flat_map(|&s| {
            (0..seeds).map(move |i| {
                let mut c = cfg.clone();
                c.run.trainer.schedule.sampling = s;
                c.run.seed = cfg.run.seed + i as u64;
                c
            })
        })
        .collect();
    let results = map_indexed(jobs.len(), |i| train(&jobs[i].run));
    let mut rows = Vec::new();
    for (si, &strategy) in STRATEGIES.iter().enumerate() {
        let mut finals = Vec::with_capacity(seeds);
        for r in &results[si * seeds..(si + 1) * seeds] {
            let out = r.as_ref().map_err(|e| Error::InvalidArgument(format!("{strategy}: {e}")))?;
            finals.push(out.metrics.final_eval().map_or(f64::NAN, |e| e.loss));
        }
        let digests: Vec<u64> = jobs[si * seeds..(si + 1) * seeds].iter().map(|c| c.digest(&["sampling", "seed"])).collect();
        rows.push(AblationRow {
            strategy,
            median: median(&finals),
            finals,
            digest: digests[0],
        });
    }
    let top = rows[3].median;
    let others: Vec<f64> = rows[..3].iter().map(|r| r.median).collect();
    let (lo, hi) = others.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(Ablation {
        top_r_worst: others.iter().all(|&v| top > v),
        spread: hi / lo - 1.0,
        same_digest: rows.iter().all(|r| r.digest == rows[0].digest),
        rows,
    })
}

pub fn format_ablation(a: &Ablation) -> String {
    let mut s = format!("{:<16} {:>14}  finals\n", "strategy", "median loss");
    for r in &a.rows {
        let finals: Vec<String> = r.finals.iter().map(|v| format!("{v:.4}")).collect();
        s.push_str(&format!("{:<16} {:>14.6}  {}\n", r.strategy.to_string(), r.median, finals.join(" ")));
    }
    s.push_str(&format!(
        "top_r worst: {}\nothers spread: {:.1}% ({})\nconfig digest (sampling excluded): {:016x} ({})\n",
        if a.top_r_worst { "yes" } else { "no" },
        100.0 * a.spread,
        if a.comparable() { "within 10%" } else { "not within 10%" },
        a.rows[0].digest,
        if a.same_digest { "identical" } else { "DIFFERS" },
    ));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRow {
    pub label: String,
    pub energy: f64,
    pub pruned_ratio: f64,
    pub eval_loss: f64,
    pub delta: f64,
}

/// Eval loss of the checkpointed model on its own task, pruned at each
/// energy threshold.
pub fn prune_checkpoint(ck: &Checkpoint, label: &str, energies: &[f64]) -> Result<Vec<PruneRow>> {
    let cfg = RunConfig::parse(&ck.config)?;
    let base = evaluate_run(&cfg.run, &ck.model)?.loss;
    energies
        .iter()
        .map(|&energy| {
            let (net, ratio) = prune_network(&ck.model, energy)?;
            let loss = evaluate_run(&cfg.run, &net)?.loss;
            Ok(PruneRow {
                label: label.to_owned(),
                energy,
                pruned_ratio: ratio,
                eval_loss: loss,
                delta: loss - base,
            })
        })
        .collect()
}

pub fn prune_csv(rows: &[PruneRow]) -> String {
    let mut s = String::from("run,energy,pruned_ratio,eval_loss,loss_delta\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.label, r.energy, r.pruned_ratio, r.eval_loss, r.delta));
    }
    s
}

struct RunFiles {
    name: String,
    rows: Vec<MetricsRow>,
    summary: Option<Value>,
}

fn read_run(dir: &Path, name: String) -> Result<Option<RunFiles>> {
    let metrics = dir.join(METRICS_FILE);
    if !metrics.is_file() {
        return Ok(None);
    }
    let rows = read_metrics_csv(fs::File::open(&metrics)?)?;
    let summary = match fs::read_to_string(dir.join(SUMMARY_FILE)) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?),
        Err(_) => None,
    };
    Ok(Some(RunFiles { name, rows, summary }))
}

/// Human-readable summary of a run directory (or of its immediate
/// subdirectories) plus a plot-ready CSV of every trace.
pub fn report(dir: &Path) -> Result<(String, String)> {
    let mut runs = Vec::new();
    if let Some(r) = read_run(dir, ".".into())? {
        runs.push(r);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let name = sub.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        if let Some(r) = read_run(&sub, name)? {
            runs.push(r);
        }
    }
    if runs.is_empty() {
        return Err(Error::Data(format!("no {METRICS_FILE} under {}", dir.display())));
    }
    let full_trace: Option<Vec<f64>> = runs
        .iter()
        .find(|r| r.rows.first().is_some_and(|x| x.method == "full"))
        .map(|r| r.rows.iter().map(|x| x.grad_norm).collect());

    let mut text = format!(
        "{:<20} {:<12} {:>7} {:>12} {:>12} {:>10} {:>12}\n",
        "run", "method", "steps", "final loss", "train tail", "accuracy", "corr(full)"
    );
    let mut csv = String::from("run,step,loss,grad_norm,lr,method\n");
    for r in &runs {
        let method = r.rows.first().map_or("?", |x| x.method.as_str());
        let tail = &r.rows[r.rows.len().saturating_sub(50)..];
        let tail_loss = tail.iter().map(|x| x.loss).sum::<f64>() / tail.len().max(1) as f64;
        let fin = r.summary.as_ref().and_then(|s| s["final"]["eval_loss"].as_f64());
        let acc = r.summary.as_ref().and_then(|s| s["final"]["accuracy"].as_f64());
        let trace: Vec<f64> = r.rows.iter().map(|x| x.grad_norm).collect();
        let corr = full_trace.as_ref().and_then(|f| {
            let n = f.len().min(trace.len());
            pearson(&f[..n], &trace[..n]).ok()
        });
        let opt = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.p$}"));
        text.push_str(&format!(
            "{:<20} {:<12} {:>7} {:>12} {:>12.6} {:>10} {:>12}\n",
            r.name,
            method,
            r.rows.len(),
            opt(fin, 6),
            tail_loss,
            opt(acc, 4),
            opt(corr, 3)
        ));
        for x in &r.rows {
            csv.push_str(&format!("{},{},{},{},{},{}\n", r.name, x.step, x.loss, x.grad_norm, x.lr, x.method));
        }
    }
    Ok((text, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
