use super::{
    forward_loss, frob, mean, AdamHyper, AdamState, LrConfig, Method, PlainStates, ScheduleCounters,
    StepStats, Trainer,
};
use crate::backprop::{BackwardOptions, Layer, LayerGrad, Loss, Network};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, svd, Matrix};

/// Gradient projection onto the top-`r` left singular subspace of a recent
/// gradient, with Adam moments kept in the projected `r × n` space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaloreState {
    p: Option<Matrix>,
    rank: usize,
    period: usize,
    adam: AdamState,
    steps: u64,
}

impl GaloreState {
    pub fn new(rank: usize, cols: usize, period: usize, hyper: AdamHyper) -> Result<Self> {
        if rank == 0 || period == 0 {
            return Err(Error::InvalidArgument(
                "GaLore rank and refresh period must be at least 1".into(),
            ));
        }
        Ok(Self {
            p: None,
            rank,
            period,
            adam: AdamState::new(rank * cols, hyper),
            steps: 0,
        })
    }

    /// Current `m × r` projection, once the first step has set it.
    pub fn projection(&self) -> Option<&Matrix> {
        self.p.as_ref()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// One projected Adam step on `w` with scale factor 1. Refreshes the
/// projection from `grad` every `period` steps; returns the projected
/// gradient and whether a refresh happened.
pub fn galore_step(gs: &mut GaloreState, w: &mut Matrix, grad: &Matrix, lr: f64) -> Result<(Matrix, bool)> {
    if w.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "GaLore weight {:?} vs gradient {:?}",
            w.shape(),
            grad.shape()
        )));
    }
    if gs.rank > w.rows() || gs.adam.len() != gs.rank * w.cols() {
        return Err(Error::InvalidArgument(format!(
            "GaLore rank {} does not fit weight {:?}",
            gs.rank,
            w.shape()
        )));
    }
    let refresh = gs.steps % gs.period as u64 == 0;
    if refresh {
        let s = svd(grad)?;
        let cols: Vec<usize> = (0..gs.rank).collect();
        gs.p = Some(s.u.select_cols(&cols));
    }
    let p = gs.p.as_ref().expect("projection set on first step");
    let low = matmul_tn(p, grad)?;
    let dir = Matrix::from_vec(gs.rank, w.cols(), gs.adam.direction(low.as_slice()))?;
    let update = matmul(p, &dir)?;
    let decay = lr * gs.adam.hyper().weight_decay;
    for (wv, u) in w.as_mut_slice().iter_mut().zip(update.as_slice()) {
        if decay != 0.0 {
            *wv -= decay * *wv;
        }
        *wv -= lr * u;
    }
    gs.steps += 1;
    Ok((low, refresh))
}

/// GaLore on every dense layer with `r < min(m, n)`; other blocks get plain
/// Adam at the base rate.
#[derive(Debug, Clone)]
pub struct GaloreTrainer {
    lr: LrConfig,
    hyper: AdamHyper,
    projected: Vec<Option<GaloreState>>,
    plain: PlainStates,
    counters: ScheduleCounters,
}

impl GaloreTrainer {
    pub fn new(net: &Network, rank: usize, period: usize, lr: LrConfig, hyper: AdamHyper) -> Result<Self> {
        let mut projected = Vec::with_capacity(net.len());
        for (k, l) in net.layers().iter().enumerate() {
            projected.push(match l {
                Layer::Dense(d) if rank < d.out_dim().min(d.in_dim()) => {
                    Some(GaloreState::new(rank, d.in_dim(), period, hyper)?)
                }
                Layer::Dense(_) | Layer::Bias(_) | Layer::Activation(_) => None,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "GaLore expects dense layers; layer {k} is not"
                    )))
                }
            });
        }
        Ok(Self {
            lr,
            hyper,
            projected,
            plain: PlainStates::new(net.len()),
            counters: ScheduleCounters::default(),
        })
    }
}

impl Trainer for GaloreTrainer {
    fn method(&self) -> Method {
        Method::Galore
    }

    fn step(&mut self, net: &mut Network, x: &Matrix, loss: &Loss) -> Result<StepStats> {
        let step = self.counters.steps as usize;
        let lg = forward_loss(net, x, loss, step)?;
        let grads = net.backward(&lg.grad, BackwardOptions::default())?;
        let (mut low_norms, mut full_norms) = (Vec::new(), Vec::new());
        for (k, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            match (g, self.projected[k].as_mut(), net.layer_mut(k)) {
                (LayerGrad::Dense(gw), Some(gs), Layer::Dense(d)) => {
                    let (low, refreshed) = galore_step(gs, d.weight_mut(), gw, self.lr.low_rank)?;
                    low_norms.push(frob(&low));
                    full_norms.push(frob(gw));
                    if refreshed {
                        self.counters.refreshes += 1;
                    }
                }
                (g, _, layer) => {
                    self.plain.step(k, layer, g, self.lr.base, self.hyper)?;
                }
            }
        }
        self.counters.steps += 1;
        Ok(StepStats {
            step,
            loss: lg.value,
            grad_norm: mean(&low_norms),
            grad_norm_aux: mean(&full_norms),
            lr: self.lr.low_rank,
            sampled: false,
            merged: false,
            resvd: false,
            degenerate: 0,
            active_digest: 0,
        })
    }

    fn counters(&self) -> ScheduleCounters {
        self.counters
    }
}
