use rand_chacha::ChaCha8Rng;

use super::schedule::warmup_factor;
use super::{
    forward_loss, frob, mean, AdamHyper, AdamState, LrConfig, Method, PlainStates, RngState,
    ScheduleCounters, StepStats, Trainer,
};
use crate::backprop::{BackwardOptions, Layer, LayerGrad, Loss, Network};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
struct LoraStates {
    b: AdamState,
    a: AdamState,
}

/// LoRA, or ReLoRA* when a merge interval is set: every `interval` steps
/// each adapter is merged into its base, `A` is redrawn, `B` zeroed and the
/// `B`/`A` moments cleared.
#[derive(Debug, Clone)]
pub struct LoraTrainer {
    interval: Option<usize>,
    warmup: usize,
    lr: LrConfig,
    hyper: AdamHyper,
    adapters: Vec<Option<LoraStates>>,
    plain: PlainStates,
    rng: ChaCha8Rng,
    counters: ScheduleCounters,
}

impl LoraTrainer {
    pub fn new(
        net: &Network,
        interval: Option<usize>,
        warmup: usize,
        lr: LrConfig,
        hyper: AdamHyper,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if interval == Some(0) {
            return Err(Error::InvalidArgument("merge interval must be at least 1".into()));
        }
        if let Some(t) = interval {
            if warmup > t {
                return Err(Error::InvalidArgument(format!(
                    "merge warmup {warmup} exceeds merge interval {t}"
                )));
            }
        }
        let mut adapters = Vec::with_capacity(net.len());
        for (k, l) in net.layers().iter().enumerate() {
            adapters.push(match l {
                Layer::Lora(l) => {
                    if !l.is_frozen() {
                        return Err(Error::InvalidArgument(format!(
                            "layer {k}: LoRA base must be frozen"
                        )));
                    }
                    Some(LoraStates {
                        b: AdamState::new(l.b().as_slice().len(), hyper),
                        a: AdamState::new(l.a().as_slice().len(), hyper),
                    })
                }
                Layer::Dense(_) | Layer::Bias(_) | Layer::Activation(_) => None,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {k} cannot be trained with LoRA"
                    )))
                }
            });
        }
        Ok(Self {
            interval,
            warmup,
            lr,
            hyper,
            adapters,
            plain: PlainStates::new(net.len()),
            rng,
            counters: ScheduleCounters::default(),
        })
    }

    fn merge_all(&mut self, net: &mut Network) {
        for (k, st) in self.adapters.iter_mut().enumerate() {
            let Some(st) = st else { continue };
            if let Layer::Lora(l) = net.layer_mut(k) {
                l.merge(&mut self.rng);
            }
            st.b.reset();
            st.a.reset();
        }
        self.counters.merges += 1;
    }
}

impl Trainer for LoraTrainer {
    fn method(&self) -> Method {
        if self.interval.is_some() {
            Method::ReloraStar
        } else {
            Method::Lora
        }
    }

    fn step(&mut self, net: &mut Network, x: &Matrix, loss: &Loss) -> Result<StepStats> {
        let step = self.counters.steps as usize;
        let mut merged = false;
        let since_reset = match self.interval {
            Some(t) => {
                if step > 0 && step % t == 0 {
                    self.merge_all(net);
                    merged = true;
                }
                step % t
            }
            None => step,
        };
        let lr_low = match self.interval {
            Some(_) => self.lr.low_rank * warmup_factor(since_reset, self.warmup),
            None => self.lr.low_rank,
        };

        let lg = forward_loss(net, x, loss, step)?;
        let grads = net.backward(&lg.grad, BackwardOptions::default())?;
        let (mut a_norms, mut b_norms) = (Vec::new(), Vec::new());
        for (k, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            match (g, self.adapters[k].as_mut()) {
                (LayerGrad::Lora(g), Some(st)) => {
                    a_norms.push(frob(&g.a));
                    b_norms.push(frob(&g.b));
                    if let Layer::Lora(l) = net.layer_mut(k) {
                        let (_, b, a) = l.parts_mut();
                        st.b.step(b.as_mut_slice(), g.b.as_slice(), lr_low);
                        st.a.step(a.as_mut_slice(), g.a.as_slice(), lr_low);
                    }
                }
                _ => {
                    self.plain.step(k, net.layer_mut(k), g, self.lr.base, self.hyper)?;
                }
            }
        }
        self.counters.steps += 1;
        Ok(StepStats {
            step,
            loss: lg.value,
            grad_norm: mean(&a_norms),
            grad_norm_aux: mean(&b_norms),
            lr: lr_low,
            sampled: false,
            merged,
            resvd: false,
            degenerate: 0,
            active_digest: 0,
        })
    }

    fn counters(&self) -> ScheduleCounters {
        self.counters
    }

    fn rng_state(&self) -> Option<RngState> {
        Some(RngState::capture(&self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LoraLinear;
    use rand::{Rng, SeedableRng};

    fn setup(seed: u64) -> (Network, Matrix, Loss) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = Matrix::from_fn(6, 5, |_, _| rng.random_range(-0.5..0.5));
        let net = Network::new(vec![Layer::Lora(LoraLinear::new(w0, 2, &mut rng).unwrap())]);
        let x = Matrix::from_fn(5, 8, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0));
        (net, x, Loss::Mse(y))
    }

    #[test]
    fn merges_every_interval_with_zero_a_gradient() {
        let (mut net, x, loss) = setup(1);
        let rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = LoraTrainer::new(&net, Some(5), 2, LrConfig::uniform(0.05), AdamHyper::default(), rng).unwrap();
        let mut merges = Vec::new();
        for _ in 0..26 {
            let s = t.step(&mut net, &x, &loss).unwrap();
            if s.merged {
                merges.push(s.step);
                assert_eq!(s.grad_norm, 0.0);
                assert_eq!(s.lr, 0.025);
            }
        }
        assert_eq!(merges, vec![5, 10, 15, 20, 25]);
        assert_eq!(t.counters().merges, 5);
        assert_eq!(t.method(), Method::ReloraStar);
    }

    #[test]
    fn plain_lora_never_merges() {
        let (mut net, x, loss) = setup(3);
        let rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = LoraTrainer::new(&net, None, 0, LrConfig::uniform(0.05), AdamHyper::default(), rng).unwrap();
        let base = match &net.layers()[0] {
            Layer::Lora(l) => l.base().clone(),
            _ => unreachable!(),
        };
        let first = t.step(&mut net, &x, &loss).unwrap().loss;
        let mut last = first;
        for _ in 0..50 {
            let s = t.step(&mut net, &x, &loss).unwrap();
            assert!(!s.merged);
            last = s.loss;
        }
        assert!(last < first);
        match &net.layers()[0] {
            Layer::Lora(l) => assert_eq!(l.base(), &base),
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_interval_rejected() {
        let (net, _, _) = setup(0);
        let rng = ChaCha8Rng::seed_from_u64(0);
        assert!(LoraTrainer::new(&net, Some(0), 0, LrConfig::uniform(0.1), AdamHyper::default(), rng).is_err());
    }
}
