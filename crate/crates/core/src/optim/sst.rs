use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use super::partition::ActivePartition;
use super::sampling::sample_indices;
use super::schedule::{warmup_factor, SstSchedule};
use super::{
    active_digest, forward_loss, frob, mean, AdamHyper, LrConfig, Method, PlainStates, RngState,
    ScheduleCounters, StepStats, Trainer,
};
use crate::backprop::{BackwardOptions, Layer, LayerGrad, Loss, Network};
use crate::error::{Error, Result};
use crate::layers::{GradMode, GradScope, SpectralLinear};
use crate::linalg::Matrix;

/// Sparse spectral training.
///
/// Each iteration of `T₃` steps starts by sampling a new active set per
/// spectral layer and clearing every `U`/`σ`/`Vᵀ` moment, followed by a
/// linear warmup. Every `T₂` iterations the layers are re-decomposed.
/// Dense and bias layers get plain Adam at the base rate.
#[derive(Debug, Clone)]
pub struct SstTrainer {
    schedule: SstSchedule,
    lr: LrConfig,
    hyper: AdamHyper,
    mode: GradMode,
    partitions: Vec<Option<ActivePartition>>,
    plain: PlainStates,
    rng: ChaCha8Rng,
    counters: ScheduleCounters,
    resvd_seconds: f64,
}

fn spectral_mut(layer: &mut Layer) -> Option<&mut SpectralLinear> {
    match layer {
        Layer::Spectral(l) => Some(l),
        Layer::Hyperbolic(l) => Some(l.inner_mut()),
        _ => None,
    }
}

impl SstTrainer {
    pub fn new(net: &Network, schedule: SstSchedule, lr: LrConfig, hyper: AdamHyper, rng: ChaCha8Rng) -> Result<Self> {
        schedule.validate()?;
        let mut partitions = Vec::with_capacity(net.len());
        for (k, l) in net.layers().iter().enumerate() {
            partitions.push(match l {
                Layer::Spectral(s) => Some(ActivePartition::new(s, hyper)),
                Layer::Hyperbolic(h) => Some(ActivePartition::new(h.inner(), hyper)),
                Layer::Dense(_) | Layer::Bias(_) | Layer::Activation(_) => None,
                Layer::Lora(_) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {k}: LoRA layers cannot be trained with SST"
                    )))
                }
            });
        }
        Ok(Self {
            schedule,
            lr,
            hyper,
            mode: GradMode::Enhanced,
            partitions,
            plain: PlainStates::new(net.len()),
            rng,
            counters: ScheduleCounters::default(),
            resvd_seconds: 0.0,
        })
    }

    /// Switches between enhanced (default) and true `U`/`V` gradients.
    pub fn with_grad_mode(mut self, mode: GradMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn schedule(&self) -> &SstSchedule {
        &self.schedule
    }

    pub fn partitions(&self) -> impl Iterator<Item = &ActivePartition> {
        self.partitions.iter().flatten()
    }

    fn re_svd_all(&mut self, net: &mut Network) -> Result<()> {
        let start = Instant::now();
        for (k, p) in self.partitions.iter().enumerate() {
            if p.is_some() {
                if let Some(l) = spectral_mut(net.layer_mut(k)) {
                    l.re_svd()?;
                }
            }
        }
        self.resvd_seconds += start.elapsed().as_secs_f64();
        self.counters.resvds += 1;
        Ok(())
    }

    fn resample_all(&mut self, net: &mut Network, iteration: usize) -> Result<()> {
        for (k, p) in self.partitions.iter_mut().enumerate() {
            let Some(p) = p else { continue };
            let Some(l) = spectral_mut(net.layer_mut(k)) else { continue };
            let picked = sample_indices(l.sigma(), p.rank(), self.schedule.sampling, iteration, &mut self.rng)?;
            p.swap_active(l, picked)?;
            p.reset_all();
        }
        self.counters.iterations += 1;
        Ok(())
    }
}

impl Trainer for SstTrainer {
    fn method(&self) -> Method {
        Method::Sst
    }

    fn step(&mut self, net: &mut Network, x: &Matrix, loss: &Loss) -> Result<StepStats> {
        let step = self.counters.steps as usize;
        let (_, iteration, pos) = self.schedule.locate(step);
        let (mut sampled, mut resvd) = (false, false);
        if pos == 0 {
            if step > 0 && iteration == 0 {
                self.re_svd_all(net)?;
                resvd = true;
            }
            self.resample_all(net, iteration)?;
            sampled = true;
        }
        let lr_low = self.lr.low_rank * warmup_factor(pos, self.schedule.warmup_steps);

        let lg = forward_loss(net, x, loss, step)?;
        let opts = BackwardOptions {
            mode: self.mode,
            scope: GradScope::Active,
        };
        let grads = net.backward(&lg.grad, opts)?;
        let (mut u_norms, mut vt_norms) = (Vec::new(), Vec::new());
        let mut degenerate = 0;
        for (k, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            let spectral = match g {
                LayerGrad::Spectral(s) => Some(s),
                LayerGrad::Hyperbolic(h) => Some(&h.spectral),
                _ => None,
            };
            match (spectral, self.partitions[k].as_mut()) {
                (Some(sg), Some(p)) => {
                    u_norms.push(frob(&sg.u));
                    vt_norms.push(frob(&sg.vt));
                    let l = spectral_mut(net.layer_mut(k)).expect("partition implies spectral layer");
                    p.sigma_step(l, &sg.sigma, lr_low);
                    degenerate += p.uv_step(l, sg, lr_low)?;
                }
                _ => {
                    self.plain.step(k, net.layer_mut(k), g, self.lr.base, self.hyper)?;
                }
            }
        }
        self.counters.steps += 1;
        self.counters.degenerate += degenerate as u64;
        Ok(StepStats {
            step,
            loss: lg.value,
            grad_norm: mean(&u_norms),
            grad_norm_aux: mean(&vt_norms),
            lr: lr_low,
            sampled,
            merged: false,
            resvd,
            degenerate,
            active_digest: active_digest(net),
        })
    }

    fn counters(&self) -> ScheduleCounters {
        self.counters
    }

    fn rng_state(&self) -> Option<RngState> {
        Some(RngState::capture(&self.rng))
    }

    fn resvd_seconds(&self) -> f64 {
        self.resvd_seconds
    }
}
