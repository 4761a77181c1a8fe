//! Explicit forward/backward over a fixed sequence of layers.
//!
//! Each layer caches what its backward pass needs during `forward`. The
//! network tracks whether those caches belong to the current parameters:
//! any mutable access to a layer invalidates them, and `backward` refuses to
//! run on stale caches.

mod gradcheck;
mod loss;

pub use gradcheck::{fd_check, fd_check_report, fd_check_with, FdReport};
pub use loss::{mse, softmax_cross_entropy, Loss, LossGrad};

use crate::error::{Error, Result};
use crate::layers::{
    Bias, DenseLinear, GradMode, GradScope, HyperbolicGrad, HyperbolicSpectralLinear, LoraGrad,
    LoraLinear, SpectralGrad, SpectralLinear,
};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLayer {
    kind: Activation,
    /// post-activation output
    cache: Option<Matrix>,
}

impl ActivationLayer {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    pub fn kind(&self) -> Activation {
        self.kind
    }

    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        let out = match self.kind {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(f64::tanh),
        };
        self.cache = Some(out.clone());
        out
    }

    pub fn backward(&self, grad: &Matrix) -> Result<Matrix> {
        let out = self.cache.as_ref().ok_or(Error::StaleCache)?;
        if out.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "activation output {:?} vs gradient {:?}",
                out.shape(),
                grad.shape()
            )));
        }
        let mut g = grad.clone();
        for (gv, &o) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *gv *= match self.kind {
                Activation::Relu => {
                    if o > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Activation::Tanh => 1.0 - o * o,
            };
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLinear),
    Lora(LoraLinear),
    Spectral(SpectralLinear),
    Hyperbolic(HyperbolicSpectralLinear),
    Bias(Bias),
    Activation(ActivationLayer),
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Activation(ActivationLayer::new(Activation::Relu))
    }

    pub fn tanh() -> Self {
        Layer::Activation(ActivationLayer::new(Activation::Tanh))
    }

    /// `(out, in)` for linear layers.
    pub fn linear_shape(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Dense(l) => Some((l.out_dim(), l.in_dim())),
            Layer::Lora(l) => Some((l.out_dim(), l.in_dim())),
            Layer::Spectral(l) => Some((l.out_dim(), l.in_dim())),
            Layer::Hyperbolic(l) => Some((l.out_dim(), l.in_dim())),
            Layer::Bias(_) | Layer::Activation(_) => None,
        }
    }

    /// The weight matrix the layer currently represents.
    pub fn effective_weight(&self) -> Option<Matrix> {
        match self {
            Layer::Dense(l) => Some(l.weight().clone()),
            Layer::Lora(l) => Some(l.effective_weight()),
            Layer::Spectral(l) => Some(l.effective_weight()),
            Layer::Hyperbolic(l) => Some(l.inner().effective_weight()),
            Layer::Bias(_) | Layer::Activation(_) => None,
        }
    }

    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Lora(l) => l.forward(x),
            Layer::Spectral(l) => l.forward(x),
            Layer::Hyperbolic(l) => l.forward(x),
            Layer::Bias(l) => l.forward(x),
            Layer::Activation(l) => Ok(l.forward(x)),
        }
    }

    fn backward(&self, grad: &Matrix, opts: BackwardOptions) -> Result<(Option<LayerGrad>, Matrix)> {
        Ok(match self {
            Layer::Dense(l) => {
                let (gw, gx) = l.backward(grad)?;
                (Some(LayerGrad::Dense(gw)), gx)
            }
            Layer::Lora(l) => {
                let (g, gx) = l.backward(grad)?;
                (Some(LayerGrad::Lora(g)), gx)
            }
            Layer::Spectral(l) => {
                let (g, gx) = l.backward(grad, opts.mode, opts.scope)?;
                (Some(LayerGrad::Spectral(g)), gx)
            }
            Layer::Hyperbolic(l) => {
                let (g, gx) = l.backward(grad, opts.mode, opts.scope)?;
                (Some(LayerGrad::Hyperbolic(g)), gx)
            }
            Layer::Bias(l) => {
                let (g, gx) = l.backward(grad)?;
                (Some(LayerGrad::Bias(g)), gx)
            }
            Layer::Activation(l) => (None, l.backward(grad)?),
        })
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Dense(l) => l.clear_cache(),
            Layer::Lora(l) => l.clear_cache(),
            Layer::Spectral(l) => l.clear_cache(),
            Layer::Hyperbolic(l) => l.clear_cache(),
            Layer::Bias(l) => l.clear_cache(),
            Layer::Activation(l) => l.cache = None,
        }
    }

    /// Mutable views of every trainable parameter block, in the order used
    /// by [`LayerGrad::flatten`].
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.clear_cache();
        match self {
            Layer::Dense(l) => vec![l.weight_mut().as_mut_slice()],
            Layer::Lora(l) => {
                let frozen = l.is_frozen();
                let (w0, b, a) = l.parts_mut();
                let mut blocks = Vec::with_capacity(3);
                if !frozen {
                    blocks.push(w0.as_mut_slice());
                }
                blocks.push(b.as_mut_slice());
                blocks.push(a.as_mut_slice());
                blocks
            }
            Layer::Spectral(l) => spectral_blocks(l),
            Layer::Hyperbolic(l) => l.param_blocks_mut(),
            Layer::Bias(l) => vec![l.values_mut().as_mut_slice()],
            Layer::Activation(_) => Vec::new(),
        }
    }
}

pub(crate) fn spectral_blocks(l: &mut SpectralLinear) -> Vec<&mut [f64]> {
    let (u, s, vt) = l.factors_mut();
    vec![u.as_mut_slice(), s.as_mut_slice(), vt.as_mut_slice()]
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Dense(Matrix),
    Lora(LoraGrad),
    Spectral(SpectralGrad),
    Hyperbolic(HyperbolicGrad),
    Bias(Vec<f64>),
}

impl LayerGrad {
    /// Concatenates the gradient blocks in parameter order. Spectral
    /// gradients must cover every column, in index order.
    pub fn flatten(&self) -> Vec<f64> {
        fn spectral(g: &SpectralGrad, out: &mut Vec<f64>) {
            assert!(
                g.columns.iter().enumerate().all(|(i, &c)| i == c) && g.columns.len() == g.sigma.len(),
                "flatten needs a full-scope spectral gradient"
            );
            out.extend_from_slice(g.u.as_slice());
            out.extend_from_slice(&g.sigma);
            out.extend_from_slice(g.vt.as_slice());
        }
        let mut out = Vec::new();
        match self {
            LayerGrad::Dense(w) => out.extend_from_slice(w.as_slice()),
            LayerGrad::Lora(g) => {
                if let Some(w0) = &g.w0 {
                    out.extend_from_slice(w0.as_slice());
                }
                out.extend_from_slice(g.b.as_slice());
                out.extend_from_slice(g.a.as_slice());
            }
            LayerGrad::Spectral(g) => spectral(g, &mut out),
            LayerGrad::Hyperbolic(g) => {
                spectral(&g.spectral, &mut out);
                out.extend_from_slice(&g.v);
            }
            LayerGrad::Bias(b) => out.extend_from_slice(b),
        }
        out
    }

    /// Mutable flat view of the first block, used to inject faults in
    /// negative-control checks.
    pub fn first_block_mut(&mut self) -> &mut [f64] {
        match self {
            LayerGrad::Dense(w) => w.as_mut_slice(),
            LayerGrad::Lora(g) => match &mut g.w0 {
                Some(w0) => w0.as_mut_slice(),
                None => g.b.as_mut_slice(),
            },
            LayerGrad::Spectral(g) => g.u.as_mut_slice(),
            LayerGrad::Hyperbolic(g) => g.spectral.u.as_mut_slice(),
            LayerGrad::Bias(b) => b.as_mut_slice(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardOptions {
    pub mode: GradMode,
    pub scope: GradScope,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            mode: GradMode::Default,
            scope: GradScope::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// One entry per layer; `None` for parameter-free layers.
    pub layers: Vec<Option<LayerGrad>>,
    pub input: Matrix,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.flatten())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    layers: Vec<Layer>,
    fresh: bool,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            fresh: false,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Mutable access to one layer; invalidates all forward caches.
    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.invalidate();
        &mut self.layers[i]
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.invalidate();
        &mut self.layers
    }

    fn invalidate(&mut self) {
        self.fresh = false;
        for l in &mut self.layers {
            l.clear_cache();
        }
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.fresh = false;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h).map_err(|e| match e {
                Error::Shape(detail) => Error::LayerShape { layer: k, detail },
                Error::Linalg(err) => Error::LayerShape {
                    layer: k,
                    detail: err.to_string(),
                },
                other => other,
            })?;
        }
        self.fresh = true;
        Ok(h)
    }

    pub fn backward(&self, grad_out: &Matrix, opts: BackwardOptions) -> Result<Gradients> {
        if !self.fresh {
            return Err(Error::StaleCache);
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (lg, gx) = layer.backward(&g, opts).map_err(|e| match e {
                Error::Shape(detail) => Error::LayerShape { layer: k, detail },
                other => other,
            })?;
            grads[k] = lg;
            g = gx;
        }
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.fresh = false;
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_blocks_mut())
            .collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.param_blocks_mut().iter().map(|b| b.len()).sum()
    }
}
