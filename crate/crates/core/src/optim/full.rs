use super::{forward_loss, frob, mean, AdamHyper, LrConfig, Method, PlainStates, ScheduleCounters, StepStats, Trainer};
use crate::backprop::{BackwardOptions, Layer, LayerGrad, Loss, Network};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Adam on every dense weight and bias.
#[derive(Debug, Clone)]
pub struct FullTrainer {
    lr: LrConfig,
    hyper: AdamHyper,
    states: PlainStates,
    counters: ScheduleCounters,
}

impl FullTrainer {
    pub fn new(net: &Network, lr: LrConfig, hyper: AdamHyper) -> Result<Self> {
        for (k, l) in net.layers().iter().enumerate() {
            if !matches!(l, Layer::Dense(_) | Layer::Bias(_) | Layer::Activation(_)) {
                return Err(Error::InvalidArgument(format!(
                    "full training expects dense layers; layer {k} is not"
                )));
            }
        }
        Ok(Self {
            lr,
            hyper,
            states: PlainStates::new(net.len()),
            counters: ScheduleCounters::default(),
        })
    }
}

impl Trainer for FullTrainer {
    fn method(&self) -> Method {
        Method::Full
    }

    fn step(&mut self, net: &mut Network, x: &Matrix, loss: &Loss) -> Result<StepStats> {
        let step = self.counters.steps as usize;
        let lg = forward_loss(net, x, loss, step)?;
        let grads = net.backward(&lg.grad, BackwardOptions::default())?;
        let mut tracked = Vec::new();
        let mut total_sq = 0.0;
        for (k, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            if let LayerGrad::Dense(w) = g {
                tracked.push(frob(w));
            }
            let norm = self.states.step(k, net.layer_mut(k), g, self.lr.base, self.hyper)?;
            total_sq += norm * norm;
        }
        self.counters.steps += 1;
        Ok(StepStats {
            step,
            loss: lg.value,
            grad_norm: mean(&tracked),
            grad_norm_aux: total_sq.sqrt(),
            lr: self.lr.base,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::DenseLinear;

    #[test]
    fn matches_hand_adam_on_a_scalar_layer() {
        let mut net = Network::new(vec![Layer::Dense(DenseLinear::new(Matrix::from_rows(&[&[2.0]])))]);
        let mut t = FullTrainer::new(&net, LrConfig::uniform(0.1), AdamHyper::default()).unwrap();
        let x = Matrix::from_rows(&[&[1.0]]);
        let target = Loss::Mse(Matrix::from_rows(&[&[0.0]]));
        let s = t.step(&mut net, &x, &target).unwrap();
        assert_eq!(s.loss, 2.0);
        assert_eq!(s.grad_norm, 2.0);
        // First Adam step moves by lr (up to eps) against the gradient sign.
        let w = net.layers()[0].effective_weight().unwrap().get(0, 0);
        assert!((w - 1.9).abs() < 1e-8);
        assert_eq!(t.counters().steps, 1);
    }

    #[test]
    fn nan_loss_aborts_with_step() {
        let mut net = Network::new(vec![Layer::Dense(DenseLinear::new(Matrix::from_rows(&[&[f64::NAN]])))]);
        let mut t = FullTrainer::new(&net, LrConfig::uniform(0.1), AdamHyper::default()).unwrap();
        let x = Matrix::from_rows(&[&[1.0]]);
        let err = t.step(&mut net, &x, &Loss::Mse(x.clone())).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 0 }));
    }
}
