//! Gradient-norm traces, spectrum snapshots, pruning and parameter accounting.

mod sink;

pub use sink::{read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};

use serde::{Deserialize, Serialize};

use crate::backprop::{Layer, Network};
use crate::error::{Error, Result};
use crate::layers::{trainable_weight_params, DenseLinear, LayerKind};
use crate::linalg::{svd, truncate_rank, Matrix};

/// Energy thresholds of the pruning sweep, `1.00, 0.99, …, 0.90`.
pub const PRUNE_ENERGIES: [f64; 11] = [1.0, 0.99, 0.98, 0.97, 0.96, 0.95, 0.94, 0.93, 0.92, 0.91, 0.90];

/// Per-step gradient norms for one method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradNormTrace {
    pub label: String,
    pub values: Vec<f64>,
}

impl GradNormTrace {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, v: f64) {
        debug_assert!(v >= 0.0 || v.is_nan());
        self.values.push(v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pearson correlation of two equal-length traces.
pub fn grad_corr(a: &GradNormTrace, b: &GradNormTrace) -> Result<f64> {
    pearson(&a.values, &b.values)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs equal lengths of at least 3, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Descending singular values of one layer at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSnapshot {
    pub layer: usize,
    pub step: usize,
    pub sigma: Vec<f64>,
}

/// Snapshot of layer `layer` of `net`; `None` for layers without a weight.
pub fn spectrum_dump(net: &Network, layer: usize, step: usize) -> Result<Option<SpectrumSnapshot>> {
    let Some(w) = net.layers().get(layer).and_then(Layer::effective_weight) else {
        return Ok(None);
    };
    Ok(Some(SpectrumSnapshot {
        layer,
        step,
        sigma: svd(&w)?.sigma,
    }))
}

/// Smallest `k` with `Σᵢ≤k σᵢ / Σ σᵢ ≥ keep_energy`. An all-zero spectrum
/// gives `k = 0`.
pub fn select_rank(sigma: &[f64], keep_energy: f64) -> Result<usize> {
    if !(keep_energy > 0.0 && keep_energy <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_energy {keep_energy} outside (0, 1]"
        )));
    }
    let mut prefix = Vec::with_capacity(sigma.len());
    let mut acc = 0.0;
    for &s in sigma {
        acc += s;
        prefix.push(acc);
    }
    if acc == 0.0 {
        return Ok(0);
    }
    Ok(prefix
        .iter()
        .position(|&p| p / acc >= keep_energy)
        .map_or(sigma.len(), |i| i + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub matrix: Matrix,
    pub k: usize,
    /// `(min(m, n) − k) / min(m, n)`.
    pub pruned_ratio: f64,
}

/// Keeps the leading singular values holding `keep_energy` of the sum.
pub fn prune_spectrum(w: &Matrix, keep_energy: f64) -> Result<Pruned> {
    let s = svd(w)?;
    let k = select_rank(&s.sigma, keep_energy)?;
    let total = s.sigma.len();
    let matrix = if k == 0 {
        Matrix::zeros(w.rows(), w.cols())
    } else {
        truncate_rank(&s, k)?
    };
    Ok(Pruned {
        matrix,
        k,
        pruned_ratio: (total - k) as f64 / total as f64,
    })
}

/// Every linear layer replaced by a dense layer holding its pruned weight.
/// `pruned_ratio` pools the discarded singular values over all layers.
pub fn prune_network(net: &Network, keep_energy: f64) -> Result<(Network, f64)> {
    let (mut dropped, mut total) = (0usize, 0usize);
    let mut layers = Vec::with_capacity(net.len());
    for layer in net.layers() {
        match layer {
            Layer::Dense(_) | Layer::Lora(_) | Layer::Spectral(_) => {
                let w = layer.effective_weight().expect("linear layer has a weight");
                let p = prune_spectrum(&w, keep_energy)?;
                let k = w.rows().min(w.cols());
                dropped += k - p.k;
                total += k;
                layers.push(Layer::Dense(DenseLinear::new(p.matrix)));
            }
            other => layers.push(other.clone()),
        }
    }
    let ratio = if total == 0 { 0.0 } else { dropped as f64 / total as f64 };
    Ok((Network::new(layers), ratio))
}

/// Memory reduction per percent of quality loss. Undefined when the method
/// matched or beat the reference.
pub fn efficiency_ratio(mem_reduction_pct: f64, metric_increase_pct: f64) -> Result<f64> {
    if !(metric_increase_pct > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "metric increase {metric_increase_pct}% must be positive"
        )));
    }
    Ok(mem_reduction_pct / metric_increase_pct)
}

/// `100 · (reference − value) / reference`.
pub fn reduction_pct(reference: f64, value: f64) -> f64 {
    100.0 * (reference - value) / reference
}

/// `100 · (value − reference) / reference`.
pub fn increase_pct(reference: f64, value: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Trainable parameters of a network, split by role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableCount {
    pub weights: usize,
    pub biases: usize,
    /// Auxiliary vectors such as the hyperbolic `v`.
    pub other: usize,
}

impl TrainableCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases + self.other
    }
}

/// Counts what each layer's optimizer actually updates: all of a dense
/// weight, `B` and `A` of a frozen-base LoRA layer, and `r(m+n) + min(m,n)`
/// for a spectral layer with `r` active vectors.
pub fn trainable_count(net: &Network) -> TrainableCount {
    let mut c = TrainableCount::default();
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => c.weights += d.out_dim() * d.in_dim(),
            Layer::Lora(l) => {
                let (m, n) = (l.out_dim(), l.in_dim());
                c.weights += trainable_weight_params(LayerKind::Lora, m, n, l.rank());
                if !l.is_frozen() {
                    c.weights += m * n;
                }
            }
            Layer::Spectral(s) => {
                c.weights += trainable_weight_params(LayerKind::Spectral, s.out_dim(), s.in_dim(), s.rank());
            }
            Layer::Hyperbolic(h) => {
                let s = h.inner();
                c.weights += trainable_weight_params(LayerKind::Spectral, s.out_dim(), s.in_dim(), s.rank());
                if h.v_trainable() {
                    c.other += h.v().len();
                }
            }
            Layer::Bias(b) => c.biases += b.dim(),
            Layer::Activation(_) => {}
        }
    }
    c
}
