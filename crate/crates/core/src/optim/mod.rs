//! Adam and the per-method training controllers.

mod adam;
mod full;
mod galore;
mod partition;
mod relora;
mod sampling;
mod schedule;
mod sst;

pub use adam::{AdamHyper, AdamState};
pub use full::FullTrainer;
pub use galore::{galore_step, GaloreState, GaloreTrainer};
pub use partition::{sigma_step, ActivePartition};
pub use relora::LoraTrainer;
pub use sampling::{mix_probabilities, sample_indices, SamplingStrategy};
pub use schedule::{warmup_factor, SstSchedule};
pub use sst::SstTrainer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{Layer, LayerGrad, Loss, LossGrad, Network};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Lora,
    ReloraStar,
    Sst,
    Galore,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Full,
        Method::Lora,
        Method::ReloraStar,
        Method::Sst,
        Method::Galore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Lora => "lora",
            Method::ReloraStar => "relora_star",
            Method::Sst => "sst",
            Method::Galore => "galore",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Method::Full),
            "lora" => Ok(Method::Lora),
            "relora_star" | "relora*" | "relora" => Ok(Method::ReloraStar),
            "sst" => Ok(Method::Sst),
            "galore" => Ok(Method::Galore),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// `base` drives dense and bias blocks; `low_rank` drives `U`/`σ`/`Vᵀ`,
/// `B`/`A` and GaLore-projected weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub base: f64,
    pub low_rank: f64,
}

impl LrConfig {
    pub fn uniform(lr: f64) -> Self {
        Self {
            base: lr,
            low_rank: lr,
        }
    }
}

/// What happened during one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    /// Mean Frobenius norm of the method's tracked gradient blocks: active
    /// `U` for SST, `A` for LoRA-style layers, the projected gradient for
    /// GaLore and the weight gradient for full training.
    pub grad_norm: f64,
    /// Companion trace: active `Vᵀ` for SST, `B` for LoRA-style layers, the
    /// unprojected gradient for GaLore, all blocks for full training.
    pub grad_norm_aux: f64,
    /// Learning rate applied to the tracked blocks, after warmup.
    pub lr: f64,
    pub sampled: bool,
    pub merged: bool,
    pub resvd: bool,
    pub degenerate: usize,
    /// Hash of every spectral layer's active index set (0 without any).
    pub active_digest: u64,
}

/// Schedule progress, persisted in checkpoints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleCounters {
    pub steps: u64,
    pub iterations: u64,
    pub resvds: u64,
    pub merges: u64,
    pub refreshes: u64,
    pub degenerate: u64,
}

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// A training controller. It owns all optimizer state for the network it
/// was built for.
pub trait Trainer: Send {
    fn method(&self) -> Method;

    /// One forward/backward/update on `(x, loss)`.
    fn step(&mut self, net: &mut Network, x: &Matrix, loss: &Loss) -> Result<StepStats>;

    fn counters(&self) -> ScheduleCounters;

    /// State of the controller's own random stream, if it has one.
    fn rng_state(&self) -> Option<RngState> {
        None
    }

    /// Seconds spent in re-SVD so far.
    fn resvd_seconds(&self) -> f64 {
        0.0
    }
}

/// Controller settings shared by every method; fields a method does not use
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub method: Method,
    pub lr: LrConfig,
    pub adam: AdamHyper,
    pub schedule: SstSchedule,
    /// ReLoRA* merge interval in steps.
    pub merge_interval: usize,
    /// Warmup after each ReLoRA* merge.
    pub merge_warmup: usize,
    pub galore_rank: usize,
    pub galore_period: usize,
}

/// Builds the controller for `cfg.method`. `rng` seeds any stream the
/// controller draws from (sampling, LoRA redraws).
pub fn build_trainer(cfg: &TrainerConfig, net: &Network, rng: ChaCha8Rng) -> Result<Box<dyn Trainer>> {
    Ok(match cfg.method {
        Method::Full => Box::new(FullTrainer::new(net, cfg.lr, cfg.adam)?),
        Method::Lora => Box::new(LoraTrainer::new(net, None, 0, cfg.lr, cfg.adam, rng)?),
        Method::ReloraStar => Box::new(LoraTrainer::new(
            net,
            Some(cfg.merge_interval),
            cfg.merge_warmup,
            cfg.lr,
            cfg.adam,
            rng,
        )?),
        Method::Sst => Box::new(SstTrainer::new(net, cfg.schedule, cfg.lr, cfg.adam, rng)?),
        Method::Galore => Box::new(GaloreTrainer::new(
            net,
            cfg.galore_rank,
            cfg.galore_period,
            cfg.lr,
            cfg.adam,
        )?),
    })
}

/// Forward pass plus loss, rejecting non-finite values.
pub(crate) fn forward_loss(net: &mut Network, x: &Matrix, loss: &Loss, step: usize) -> Result<LossGrad> {
    let out = net.forward(x)?;
    let lg = loss.eval(&out)?;
    if !lg.value.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(lg)
}

/// Adam states for dense and bias layers, created on first use.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct PlainStates {
    states: Vec<Option<AdamState>>,
}

impl PlainStates {
    pub(crate) fn new(layers: usize) -> Self {
        Self {
            states: vec![None; layers],
        }
    }

    /// Updates a dense or bias layer; returns the gradient norm.
    pub(crate) fn step(&mut self, k: usize, layer: &mut Layer, grad: &LayerGrad, lr: f64, hyper: AdamHyper) -> Result<f64> {
        let g: &[f64] = match (&*layer, grad) {
            (Layer::Dense(_), LayerGrad::Dense(g)) => g.as_slice(),
            (Layer::Bias(_), LayerGrad::Bias(g)) => g,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "layer {k} is not trainable by a plain optimizer under this method"
                )))
            }
        };
        let state = self.states[k].get_or_insert_with(|| AdamState::new(g.len(), hyper));
        let mut blocks = layer.param_blocks_mut();
        state.step(blocks[0], g, lr);
        Ok(norm2(g))
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub(crate) fn frob(m: &Matrix) -> f64 {
    frobenius_norm(m)
}

/// FNV-1a over the active index sets, layer by layer.
pub fn active_digest(net: &Network) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut any = false;
    for (k, layer) in net.layers().iter().enumerate() {
        let active = match layer {
            Layer::Spectral(l) => l.active(),
            Layer::Hyperbolic(l) => l.inner().active(),
            _ => continue,
        };
        any = true;
        for v in std::iter::once(k).chain(active.iter().copied()) {
            for byte in (v as u64).to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    if any {
        h
    } else {
        0
    }
}
