//! Run configuration: `key = value` lines grouped under `[section]` headers.
//! `#` and `;` start comments. Unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sst_core::optim::{AdamHyper, LrConfig, Method, SamplingStrategy, SstSchedule, TrainerConfig};
use sst_core::tasks::{low_rank_plus_tail, MnistSpec, SyntheticSpec, TaskSpec, TrainRun};
use sst_core::{Error, Result};

pub const DATA_DIR_ENV: &str = "SST_DATA_DIR";

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["seed", "steps", "epochs", "batch_size", "eval_every", "out_dir"]),
    (
        "task",
        &[
            "kind",
            "m",
            "n",
            "spectrum",
            "target_rank",
            "head",
            "tail",
            "noise",
            "eval_samples",
            "data_dir",
            "train_limit",
            "test_limit",
            "hidden",
        ],
    ),
    ("method", &["name", "rank"]),
    (
        "schedule",
        &[
            "rounds",
            "iterations_per_round",
            "iteration_interval",
            "warmup_steps",
            "sampling",
            "merge_interval",
            "merge_warmup",
            "galore_period",
        ],
    ),
    ("optim", &["lr", "low_rank_lr", "beta1", "beta2", "eps", "weight_decay"]),
];

/// A validated run plus where its artifacts go.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: TrainRun,
    pub out_dir: Option<PathBuf>,
}

struct Entry {
    value: String,
    line: usize,
}

/// Parsed but untyped entries, keyed `section.key`.
struct Raw {
    entries: BTreeMap<String, Entry>,
}

fn config_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_owned(),
        message: message.into(),
    }
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, content, "unterminated section header"))?
                    .trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(config_err(line, name, "unknown section"));
                }
                section = Some(name.to_owned());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| config_err(line, key, "key outside of any section"))?;
            let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            let full = format!("{sec}.{key}");
            if !known.contains(&key) {
                return Err(config_err(line, &full, "unknown key"));
            }
            if value.is_empty() {
                return Err(config_err(line, &full, "empty value"));
            }
            if let Some(prev) = entries.get(&full) {
                let prev: &Entry = prev;
                return Err(config_err(line, &full, format!("duplicate key (first set on line {})", prev.line)));
            }
            entries.insert(
                full,
                Entry {
                    value: value.to_owned(),
                    line,
                },
            );
        }
        Ok(Self { entries })
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| config_err(e.line, key, format!("cannot parse `{}`: {err}", e.value))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|err| config_err(e.line, key, format!("cannot parse `{}`: {err}", item.trim())))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    /// Parses and validates. `SST_DATA_DIR` supplies the dataset root when
    /// `task.data_dir` is absent.
    pub fn parse(text: &str) -> Result<Self> {
        let raw = Raw::parse(text)?;

        let method_line = raw.line("method.name");
        let method: Method = raw
            .get("method.name")?
            .ok_or_else(|| config_err(0, "method.name", "required"))?;
        let rank: usize = raw.or("method.rank", 4)?;
        if rank == 0 {
            return Err(config_err(raw.line("method.rank"), "method.rank", "must be at least 1"));
        }

        let kind: String = raw.or("task.kind", "synthetic".to_owned())?;
        let (task, d) = match kind.as_str() {
            "synthetic" => {
                let m: usize = raw.or("task.m", 32)?;
                let n: usize = raw.or("task.n", 32)?;
                if m == 0 || n == 0 {
                    return Err(config_err(raw.line("task.m"), "task.m", "dimensions must be at least 1"));
                }
                let k = m.min(n);
                let spectrum = match raw.list::<f64>("task.spectrum")? {
                    Some(s) => s,
                    None => {
                        let target_rank: usize = raw.or("task.target_rank", 8.min(k))?;
                        if target_rank == 0 || target_rank > k {
                            return Err(config_err(
                                raw.line("task.target_rank"),
                                "task.target_rank",
                                format!("must be in 1..={k}"),
                            ));
                        }
                        low_rank_plus_tail(k, target_rank, raw.or("task.head", 4.0)?, raw.or("task.tail", 0.2)?)
                    }
                };
                let line = raw.line("task.spectrum");
                if spectrum.len() != k {
                    return Err(config_err(line, "task.spectrum", format!("{} values for min(m, n) = {k}", spectrum.len())));
                }
                if spectrum.iter().any(|&v| !(v >= 0.0)) || spectrum.windows(2).any(|w| w[0] < w[1]) {
                    return Err(config_err(line, "task.spectrum", "values must be non-negative and descending"));
                }
                let noise: f64 = raw.or("task.noise", 0.1)?;
                if !(noise >= 0.0) {
                    return Err(config_err(raw.line("task.noise"), "task.noise", "must be non-negative"));
                }
                let spec = SyntheticSpec {
                    m,
                    n,
                    spectrum,
                    noise,
                    eval_samples: raw.or("task.eval_samples", 512)?,
                };
                (TaskSpec::Synthetic(spec), k)
            }
            "mnist" => {
                let data_dir = match raw.get::<PathBuf>("task.data_dir")? {
                    Some(p) => p,
                    None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                        config_err(
                            raw.line("task.kind"),
                            "task.data_dir",
                            format!("required for mnist unless {DATA_DIR_ENV} is set"),
                        )
                    })?,
                };
                let hidden = raw.list("task.hidden")?.unwrap_or_else(|| vec![512, 512, 512]);
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(config_err(raw.line("task.hidden"), "task.hidden", "widths must be at least 1"));
                }
                let d = hidden.iter().copied().max().unwrap_or(1);
                let spec = MnistSpec {
                    data_dir,
                    train_limit: Some(raw.or("task.train_limit", 10_000)?),
                    test_limit: raw.get("task.test_limit")?,
                    hidden,
                };
                (TaskSpec::Mnist(spec), d)
            }
            other => {
                return Err(config_err(
                    raw.line("task.kind"),
                    "task.kind",
                    format!("unknown task `{other}` (synthetic, mnist)"),
                ))
            }
        };
        let synthetic = matches!(task, TaskSpec::Synthetic(_));

        let steps: usize = raw.or("run.steps", 2000)?;
        let interval: usize = raw.or("schedule.iteration_interval", 50)?;
        let iterations: usize = raw.or("schedule.iterations_per_round", SstSchedule::default_iterations(d, rank))?;
        let per_round = (iterations * interval).max(1);
        let schedule = SstSchedule {
            rounds: raw.or("schedule.rounds", steps.div_ceil(per_round).max(1))?,
            iterations_per_round: iterations,
            iteration_interval: interval,
            warmup_steps: raw.or("schedule.warmup_steps", SstSchedule::DEFAULT_WARMUP.min(interval))?,
            sampling: raw.or("schedule.sampling", SamplingStrategy::MultinomialMix)?,
            rank,
        };
        let lr: f64 = raw.or("optim.lr", 0.01)?;
        let defaults = AdamHyper::default();
        let trainer = TrainerConfig {
            method,
            lr: LrConfig {
                base: lr,
                low_rank: raw.or("optim.low_rank_lr", lr)?,
            },
            adam: AdamHyper {
                beta1: raw.or("optim.beta1", defaults.beta1)?,
                beta2: raw.or("optim.beta2", defaults.beta2)?,
                eps: raw.or("optim.eps", defaults.eps)?,
                weight_decay: raw.or("optim.weight_decay", defaults.weight_decay)?,
            },
            schedule,
            merge_interval: raw.or("schedule.merge_interval", interval)?,
            merge_warmup: raw.or("schedule.merge_warmup", schedule.warmup_steps)?,
            galore_rank: rank,
            galore_period: raw.or("schedule.galore_period", 200)?,
        };
        let run = TrainRun {
            task,
            rank,
            trainer,
            seed: raw.or("run.seed", 0)?,
            steps,
            epochs: raw.or("run.epochs", 10)?,
            batch_size: raw.or("run.batch_size", if synthetic { 32 } else { 128 })?,
            eval_every: raw.or("run.eval_every", 0)?,
        };
        let cfg = RunConfig {
            run,
            out_dir: raw.get("run.out_dir")?,
        };
        cfg.run.validate().map_err(|e| match e {
            Error::InvalidArgument(msg) => config_err(method_line, "method", msg),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Every resolved value, in a form [`RunConfig::parse`] reads back to an
    /// equal config.
    pub fn to_text(&self) -> String {
        let r = &self.run;
        let t = &r.trainer;
        let mut s = String::new();
        let _ = writeln!(s, "[run]\nseed = {}\nsteps = {}\nepochs = {}\nbatch_size = {}\neval_every = {}", r.seed, r.steps, r.epochs, r.batch_size, r.eval_every);
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", dir.display());
        }
        s.push_str("\n[task]\n");
        match &r.task {
            TaskSpec::Synthetic(spec) => {
                let _ = writeln!(s, "kind = synthetic\nm = {}\nn = {}", spec.m, spec.n);
                let _ = writeln!(s, "spectrum = {}", join(&spec.spectrum));
                let _ = writeln!(s, "noise = {}\neval_samples = {}", spec.noise, spec.eval_samples);
            }
            TaskSpec::Mnist(spec) => {
                let _ = writeln!(s, "kind = mnist\ndata_dir = {}", spec.data_dir.display());
                if let Some(v) = spec.train_limit {
                    let _ = writeln!(s, "train_limit = {v}");
                }
                if let Some(v) = spec.test_limit {
                    let _ = writeln!(s, "test_limit = {v}");
                }
                let _ = writeln!(s, "hidden = {}", join(&spec.hidden));
            }
        }
        let _ = writeln!(s, "\n[method]\nname = {}\nrank = {}", t.method, r.rank);
        let sc = &t.schedule;
        let _ = writeln!(
            s,
            "\n[schedule]\nrounds = {}\niterations_per_round = {}\niteration_interval = {}\nwarmup_steps = {}\nsampling = {}\nmerge_interval = {}\nmerge_warmup = {}\ngalore_period = {}",
            sc.rounds, sc.iterations_per_round, sc.iteration_interval, sc.warmup_steps, sc.sampling, t.merge_interval, t.merge_warmup, t.galore_period
        );
        let _ = writeln!(
            s,
            "\n[optim]\nlr = {}\nlow_rank_lr = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nweight_decay = {}",
            t.lr.base, t.lr.low_rank, t.adam.beta1, t.adam.beta2, t.adam.eps, t.adam.weight_decay
        );
        s
    }

    /// FNV-1a over [`RunConfig::to_text`] with the lines for `skip` keys
    /// (bare key names) and `out_dir` left out.
    pub fn digest(&self, skip: &[&str]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for line in self.to_text().lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if key == "out_dir" || skip.contains(&key) {
                continue;
            }
            for b in line.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[method]\nname = sst\nrank = 4\n";

    fn key_of(err: Error) -> (usize, String) {
        match err {
            Error::Config { line, key, .. } => (line, key),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.run.rank, 4);
        assert_eq!(cfg.run.trainer.schedule.iterations_per_round, 8);
        assert_eq!(cfg.run.trainer.schedule.warmup_steps, 20);
        assert_eq!(cfg.run.trainer.merge_interval, 50);
        assert_eq!(cfg.run.trainer.schedule.rounds, 5);
        match &cfg.run.task {
            TaskSpec::Synthetic(s) => assert_eq!(s.spectrum.len(), 32),
            _ => panic!(),
        }
    }

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig::parse(
            "# comment\n[run]\nseed = 9 ; trailing\nout_dir = /tmp/x\n[task]\nm = 6\nn = 4\nspectrum = 3, 2, 1, 0.1\n[method]\nname = relora*\nrank = 2\n[optim]\nlr = 0.003\nlow_rank_lr = 0.1\n",
        )
        .unwrap();
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.run.trainer.method, Method::ReloraStar);
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let (line, key) = key_of(RunConfig::parse("[method]\nname = sst\n\n[optim]\nlearning_rate = 1\n").unwrap_err());
        assert_eq!((line, key.as_str()), (5, "optim.learning_rate"));
    }

    #[test]
    fn malformed_fixtures_rejected() {
        let cases: &[(&str, &str)] = &[
            ("[methods]\nname = sst\n", "methods"),
            ("name = sst\n", "name"),
            ("[method]\nname = adam\n", "method.name"),
            ("[method]\nname = sst\nname = lora\n", "method.name"),
            ("[method]\nname sst\n", "name sst"),
            ("[method]\nname = sst\nrank = -1\n", "method.rank"),
            ("[method]\nname = sst\nrank = 0\n", "method.rank"),
            ("[method]\nname = sst\n[run]\nsteps = many\n", "run.steps"),
            ("[method]\nname = sst\n[task]\nkind = cifar\n", "task.kind"),
            ("[method]\nname = sst\n[task]\nm = 3\nn = 3\nspectrum = 1, 2, 3\n", "task.spectrum"),
            ("[method]\nname = sst\n[task]\nm = 3\nn = 3\nspectrum = 1, 2\n", "task.spectrum"),
            ("[method]\nname = sst\n[schedule]\nsampling = greedy\n", "schedule.sampling"),
            ("[method]\nname = sst\n[optim]\nlr =\n", "optim.lr"),
            ("[method\nname = sst\n", "[method"),
            ("[run]\nseed = 1\n", "method.name"),
        ];
        for (text, key) in cases {
            let (_, got) = key_of(RunConfig::parse(text).unwrap_err());
            assert_eq!(&got, key, "{text:?}");
        }
    }

    #[test]
    fn rank_above_dimension_fails_validation() {
        let err = RunConfig::parse("[task]\nm = 4\nn = 6\nspectrum = 1, 1, 1, 1\n[method]\nname = sst\nrank = 5\n").unwrap_err();
        let (line, key) = key_of(err);
        assert_eq!((line, key.as_str()), (6, "method"));
    }

    #[test]
    fn digest_ignores_skipped_keys() {
        let a = RunConfig::parse("[method]\nname = sst\n[schedule]\nsampling = uniform\n").unwrap();
        let b = RunConfig::parse("[method]\nname = sst\n[schedule]\nsampling = top_r\n").unwrap();
        assert_ne!(a.digest(&[]), b.digest(&[]));
        assert_eq!(a.digest(&["sampling"]), b.digest(&["sampling"]));
    }
}
