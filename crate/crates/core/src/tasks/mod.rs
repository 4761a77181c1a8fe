//! Workloads and the generic training loop.

mod idx;
mod model;
mod synthetic;

pub use idx::{
    load_idx, load_mnist, mnist_paths, write_idx_images, write_idx_labels, ImageClassTask, LabeledImages,
    IMAGES_MAGIC, LABELS_MAGIC,
};
pub use model::{build_model, layer_kind, ModelSpec};
pub use synthetic::{gen_synthetic, low_rank_plus_tail, random_orthonormal, SyntheticRecoveryTask, SyntheticSpec};

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{Loss, Network};
use crate::diagnostics::{trainable_count, MetricsRow, TrainableCount};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::{build_trainer, Method, RngState, ScheduleCounters, StepStats, TrainerConfig};

/// Independent random streams derived from one seed.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const DATA: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const TASK: u64 = 3;
}

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistSpec {
    pub data_dir: PathBuf,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    Synthetic(SyntheticSpec),
    Mnist(MnistSpec),
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub task: TaskSpec,
    /// `trainer.schedule.rank` and `trainer.galore_rank` are overwritten with
    /// this value.
    pub rank: usize,
    pub trainer: TrainerConfig,
    pub seed: u64,
    /// Optimizer steps for the synthetic task.
    pub steps: usize,
    /// Passes over the training split for image tasks.
    pub epochs: usize,
    pub batch_size: usize,
    /// Synthetic evaluation cadence in steps; 0 evaluates only at the end.
    pub eval_every: usize,
}

impl TrainRun {
    pub fn method(&self) -> Method {
        self.trainer.method
    }

    /// Checks everything that does not need the data on disk.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        let shapes = self.model_spec().shapes();
        let widest = shapes.iter().map(|&(m, n)| m.min(n)).max().unwrap_or(0);
        if self.method() != Method::Full && self.rank > widest {
            return Err(Error::InvalidArgument(format!(
                "rank {} exceeds min(m, n) = {widest} of every layer",
                self.rank
            )));
        }
        if self.trainer.lr.base <= 0.0 || self.trainer.lr.low_rank <= 0.0 {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        match &self.task {
            TaskSpec::Synthetic(s) => {
                if s.spectrum.len() != s.m.min(s.n) {
                    return Err(Error::InvalidArgument(format!(
                        "spectrum has {} values, expected {}",
                        s.spectrum.len(),
                        s.m.min(s.n)
                    )));
                }
                if self.steps == 0 {
                    return Err(Error::InvalidArgument("steps must be at least 1".into()));
                }
            }
            TaskSpec::Mnist(_) => {
                if self.epochs == 0 {
                    return Err(Error::InvalidArgument("epochs must be at least 1".into()));
                }
            }
        }
        let mut cfg = self.trainer.clone();
        cfg.schedule.rank = self.rank;
        if self.method() == Method::Sst {
            cfg.schedule.validate()?;
        }
        if self.method() == Method::ReloraStar && cfg.merge_interval == 0 {
            return Err(Error::InvalidArgument("merge_interval must be at least 1".into()));
        }
        if self.method() == Method::Galore && cfg.galore_period == 0 {
            return Err(Error::InvalidArgument("galore_period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match &self.task {
            TaskSpec::Synthetic(s) => ModelSpec::linear(s.n, s.m),
            TaskSpec::Mnist(s) => ModelSpec::mlp(784, &s.hidden, 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub grad_norm_aux: f64,
    pub lr: f64,
    pub active_digest: u64,
}

impl From<&StepStats> for StepRecord {
    fn from(s: &StepStats) -> Self {
        Self {
            step: s.step,
            loss: s.loss,
            grad_norm: s.grad_norm,
            grad_norm_aux: s.grad_norm_aux,
            lr: s.lr,
            active_digest: s.active_digest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Steps completed when the evaluation ran.
    pub step: usize,
    pub epoch: Option<usize>,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Deterministic record of a run: equal [`TrainRun`]s give equal metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub seed: u64,
    pub rank: usize,
    pub records: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub trainable: TrainableCount,
    pub steps_completed: usize,
    /// `trainable.total() × steps_completed`.
    pub effective_steps: u64,
    pub counters: ScheduleCounters,
    /// Step at which a non-finite loss stopped the run.
    pub nan_abort: Option<usize>,
}

impl RunMetrics {
    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// Mean training loss over the last `window` steps.
    pub fn tail_train_loss(&self, window: usize) -> f64 {
        let n = self.records.len();
        let tail = &self.records[n.saturating_sub(window.max(1))..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.grad_norm).collect()
    }

    pub fn csv_rows(&self) -> Vec<MetricsRow> {
        self.records
            .iter()
            .map(|r| MetricsRow {
                step: r.step,
                loss: r.loss,
                grad_norm: r.grad_norm,
                lr: r.lr,
                method: self.method.to_string(),
            })
            .collect()
    }
}

/// Wall-clock measurements, kept apart from the deterministic metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub wall_seconds: f64,
    pub resvd_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub timing: RunTiming,
    pub model: Network,
    pub rng: Option<RngState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Loss (and accuracy for classification) of `net` on `(x, target)`. Works
/// on a copy, so `net` is left untouched.
pub fn evaluate(net: &Network, x: &Matrix, target: &Loss) -> Result<EvalResult> {
    let mut scratch = net.clone();
    let out = scratch.forward(x)?;
    let loss = target.eval(&out)?.value;
    let accuracy = match target {
        Loss::CrossEntropy(labels) => Some(accuracy(&out, labels)),
        Loss::Mse(_) => None,
    };
    Ok(EvalResult { loss, accuracy })
}

/// Fraction of columns whose arg-max row equals the label (ties go to the
/// lower row).
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(c, &label)| {
            let mut best = 0;
            for r in 1..logits.rows() {
                if logits.get(r, c) > logits.get(best, c) {
                    best = r;
                }
            }
            best == label
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// [`evaluate`] over a labelled split in chunks of `chunk` samples.
pub fn evaluate_split(net: &Network, split: &LabeledImages, chunk: usize) -> Result<EvalResult> {
    let mut scratch = net.clone();
    let (mut loss, mut hits) = (0.0, 0.0);
    let n = split.len();
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let (x, labels) = split.batch(&idx);
        let out = scratch.forward(&x)?;
        let w = idx.len() as f64;
        loss += Loss::CrossEntropy(labels.clone()).eval(&out)?.value * w;
        hits += accuracy(&out, &labels) * w;
    }
    let n = n.max(1) as f64;
    Ok(EvalResult {
        loss: loss / n,
        accuracy: Some(hits / n),
    })
}

/// Loss (and accuracy) of `net` on the evaluation data of `run`: the held-out
/// synthetic set a run with the same seed evaluates on, or the test split.
pub fn evaluate_run(run: &TrainRun, net: &Network) -> Result<EvalResult> {
    match &run.task {
        TaskSpec::Synthetic(spec) => {
            let task = spec.build(seeded_stream(run.seed, stream::TASK).random())?;
            let (x, y) = task.sample(spec.eval_samples.max(1), &mut seeded_stream(run.seed, stream::DATA));
            evaluate(net, &x, &Loss::Mse(y))
        }
        TaskSpec::Mnist(spec) => {
            let data = load_mnist(&spec.data_dir, spec.train_limit, spec.test_limit)?;
            evaluate_split(net, &data.test, 1000)
        }
    }
}

/// Runs one training job end to end.
///
/// A non-finite loss stops the run and is reported in
/// [`RunMetrics::nan_abort`]; every other failure is an error.
pub fn train(run: &TrainRun) -> Result<RunOutput> {
    run.validate()?;
    let start = Instant::now();
    match &run.task {
        TaskSpec::Synthetic(spec) => {
            let task = spec.build(seeded_stream(run.seed, stream::TASK).random())?;
            train_synthetic(run, spec, &task, start)
        }
        TaskSpec::Mnist(spec) => {
            let data = load_mnist(&spec.data_dir, spec.train_limit, spec.test_limit)?;
            train_images(run, &data, start)
        }
    }
}

struct Loop {
    metrics: RunMetrics,
    net: Network,
    trainer: Box<dyn crate::optim::Trainer>,
}

impl Loop {
    fn new(run: &TrainRun) -> Result<Self> {
        let mut init = seeded_stream(run.seed, stream::INIT);
        let net = build_model(&run.model_spec(), layer_kind(run.method()), run.rank, &mut init)?;
        let mut cfg = run.trainer.clone();
        cfg.schedule.rank = run.rank;
        cfg.galore_rank = run.rank;
        let trainer = build_trainer(&cfg, &net, seeded_stream(run.seed, stream::SAMPLING))?;
        let metrics = RunMetrics {
            method: run.method(),
            seed: run.seed,
            rank: run.rank,
            records: Vec::new(),
            evals: Vec::new(),
            trainable: trainable_count(&net),
            steps_completed: 0,
            effective_steps: 0,
            counters: ScheduleCounters::default(),
            nan_abort: None,
        };
        Ok(Self { metrics, net, trainer })
    }

    /// `false` once a non-finite loss has stopped the run.
    fn step(&mut self, x: &Matrix, loss: &Loss) -> Result<bool> {
        match self.trainer.step(&mut self.net, x, loss) {
            Ok(s) => {
                self.metrics.records.push(StepRecord::from(&s));
                self.metrics.steps_completed += 1;
                Ok(true)
            }
            Err(Error::NonFiniteLoss { step }) => {
                log::warn!("non-finite loss at step {step}; stopping");
                self.metrics.nan_abort = Some(step);
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn finish(mut self, start: Instant) -> RunOutput {
        self.metrics.trainable = trainable_count(&self.net);
        self.metrics.effective_steps = self.metrics.trainable.total() as u64 * self.metrics.steps_completed as u64;
        self.metrics.counters = self.trainer.counters();
        RunOutput {
            timing: RunTiming {
                wall_seconds: start.elapsed().as_secs_f64(),
                resvd_seconds: self.trainer.resvd_seconds(),
            },
            rng: self.trainer.rng_state(),
            metrics: self.metrics,
            model: self.net,
        }
    }
}

fn train_synthetic(run: &TrainRun, spec: &SyntheticSpec, task: &SyntheticRecoveryTask, start: Instant) -> Result<RunOutput> {
    let mut data = seeded_stream(run.seed, stream::DATA);
    let (ex, ey) = task.sample(spec.eval_samples.max(1), &mut data);
    let eval_target = Loss::Mse(ey);
    let mut lp = Loop::new(run)?;
    for step in 0..run.steps {
        let (x, y) = task.sample(run.batch_size, &mut data);
        if !lp.step(&x, &Loss::Mse(y))? {
            break;
        }
        let done = step + 1;
        if (run.eval_every > 0 && done % run.eval_every == 0) || done == run.steps {
            let e = evaluate(&lp.net, &ex, &eval_target)?;
            lp.metrics.evals.push(EvalRecord {
                step: done,
                epoch: None,
                loss: e.loss,
                accuracy: None,
            });
        }
    }
    Ok(lp.finish(start))
}

fn train_images(run: &TrainRun, data: &ImageClassTask, start: Instant) -> Result<RunOutput> {
    if data.classes > 10 {
        return Err(Error::Data(format!("{} classes, the model has 10 outputs", data.classes)));
    }
    let mut rng = seeded_stream(run.seed, stream::DATA);
    let mut lp = Loop::new(run)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    'epochs: for epoch in 0..run.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(run.batch_size) {
            let (x, labels) = data.train.batch(chunk);
            if !lp.step(&x, &Loss::CrossEntropy(labels))? {
                break 'epochs;
            }
        }
        let e = evaluate_split(&lp.net, &data.test, 1000)?;
        log::info!(
            "{} epoch {}: test loss {:.4}, accuracy {:.4}",
            run.method(),
            epoch + 1,
            e.loss,
            e.accuracy.unwrap_or(0.0)
        );
        lp.metrics.evals.push(EvalRecord {
            step: lp.metrics.steps_completed,
            epoch: Some(epoch + 1),
            loss: e.loss,
            accuracy: e.accuracy,
        });
    }
    Ok(lp.finish(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{AdamHyper, LrConfig, SstSchedule};

    pub(crate) fn synthetic_run(method: Method, rank: usize, seed: u64) -> TrainRun {
        let (m, n) = (8, 8);
        TrainRun {
            task: TaskSpec::Synthetic(SyntheticSpec {
                m,
                n,
                spectrum: low_rank_plus_tail(8, 4, 2.0, 0.1),
                noise: 0.01,
                eval_samples: 64,
            }),
            rank,
            trainer: TrainerConfig {
                method,
                lr: LrConfig::uniform(0.01),
                adam: AdamHyper::default(),
                schedule: SstSchedule::new(m, rank, 4, 25),
                merge_interval: 25,
                merge_warmup: 5,
                galore_rank: rank,
                galore_period: 25,
            },
            seed,
            steps: 200,
            epochs: 1,
            batch_size: 16,
            eval_every: 50,
        }
    }

    #[test]
    fn every_method_trains_and_is_deterministic() {
        for method in Method::ALL {
            let run = synthetic_run(method, 2, 7);
            let a = train(&run).unwrap();
            let b = train(&run).unwrap();
            assert_eq!(a.metrics, b.metrics, "{method}");
            assert_eq!(a.metrics.steps_completed, 200);
            assert_eq!(a.metrics.evals.len(), 4);
            let first = a.metrics.records[0].loss;
            assert!(a.metrics.tail_train_loss(20) < first, "{method}");
            assert_eq!(
                a.metrics.effective_steps,
                a.metrics.trainable.total() as u64 * 200
            );
        }
    }

    #[test]
    fn rank_above_dimension_rejected() {
        let run = synthetic_run(Method::Sst, 9, 0);
        assert!(matches!(train(&run), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn full_rank_sst_tracks_full() {
        // r = min(m, n) and a single iteration: nothing is frozen or reset
        let setup = |method| {
            let mut run = synthetic_run(method, 8, 3);
            run.steps = 1000;
            run.trainer.lr = LrConfig::uniform(0.003);
            run.trainer.schedule = SstSchedule::new(8, 8, 1, 1000);
            if let TaskSpec::Synthetic(s) = &mut run.task {
                s.noise = 0.1;
                s.eval_samples = 256;
            }
            train(&run).unwrap().metrics.final_eval().unwrap().loss
        };
        let (f, s) = (setup(Method::Full), setup(Method::Sst));
        assert!((s - f).abs() / f <= 0.05, "full {f} sst {s}");
    }

    #[test]
    fn evaluate_run_matches_final_eval() {
        let run = synthetic_run(Method::Sst, 2, 4);
        let out = train(&run).unwrap();
        let again = evaluate_run(&run, &out.model).unwrap();
        assert_eq!(again.loss, out.metrics.final_eval().unwrap().loss);
    }

    #[test]
    fn evaluation_leaves_model_alone() {
        let out = train(&synthetic_run(Method::Full, 2, 1)).unwrap();
        let before = out.model.clone();
        let x = Matrix::from_fn(8, 3, |i, j| (i + j) as f64);
        let y = Loss::Mse(Matrix::zeros(8, 3));
        let e1 = evaluate(&out.model, &x, &y).unwrap();
        let e2 = evaluate(&out.model, &x, &y).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(out.model, before);
    }

    #[test]
    fn accuracy_of_perfect_and_chance_classifiers() {
        let logits = Matrix::from_fn(3, 6, |r, c| if r == c % 3 { 1.0 } else { 0.0 });
        assert_eq!(accuracy(&logits, &[0, 1, 2, 0, 1, 2]), 1.0);
        assert_eq!(accuracy(&logits, &[1, 2, 0, 1, 2, 0]), 0.0);
    }
}
