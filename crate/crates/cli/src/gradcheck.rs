//! Finite-difference sweep over every layer kind and loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sst_core::backprop::{fd_check_with, BackwardOptions, Layer, LayerGrad, Loss, Network};
use sst_core::layers::{Bias, DenseLinear, GradMode, GradScope, HyperbolicSpectralLinear, LoraLinear, SpectralLinear};
use sst_core::linalg::Matrix;
use sst_core::Result;

pub const TOLERANCE: f64 = 1e-5;
pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dense,
    Lora,
    SpectralDefault,
    SpectralEnhanced,
    Hyperbolic,
}

impl Kind {
    pub const ALL: [Kind; 5] = [
        Kind::Dense,
        Kind::Lora,
        Kind::SpectralDefault,
        Kind::SpectralEnhanced,
        Kind::Hyperbolic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Dense => "dense",
            Kind::Lora => "lora",
            Kind::SpectralDefault => "spectral-default",
            Kind::SpectralEnhanced => "spectral-enhanced",
            Kind::Hyperbolic => "hyperbolic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Mse, LossKind::CrossEntropy];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross-entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub kind: Kind,
    pub loss: LossKind,
    pub cases: usize,
    pub max_rel_error: f64,
    /// Largest `m × n` shape drawn.
    pub largest: (usize, usize),
}

impl Entry {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// Options for [`run`]. `corrupt` perturbs one analytic gradient entry per
/// case so the sweep must fail.
#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub seeds: usize,
    pub max_m: usize,
    pub max_n: usize,
    pub corrupt: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            seeds: 50,
            max_m: 16,
            max_n: 24,
            corrupt: false,
        }
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `[layer, bias, tanh]` around the layer under test.
fn case(kind: Kind, m: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Network> {
    let rank = rng.random_range(1..=m.min(n));
    let w = random(m, n, rng);
    let (layer, out) = match kind {
        Kind::Dense => (Layer::Dense(DenseLinear::new(w)), m),
        Kind::Lora => {
            let (b, a) = (random(m, rank, rng), random(rank, n, rng));
            (Layer::Lora(LoraLinear::from_parts(w, b, a, true)?), m)
        }
        Kind::SpectralDefault | Kind::SpectralEnhanced => (Layer::Spectral(SpectralLinear::from_weight(&w, rank)?), m),
        Kind::Hyperbolic => {
            let inner = SpectralLinear::from_weight(&w, rank)?;
            let curvature = -rng.random_range(0.5..2.0);
            let mut h = HyperbolicSpectralLinear::new(inner, curvature)?;
            h.set_v_trainable(false);
            (Layer::Hyperbolic(h), m + 1)
        }
    };
    let bias = (0..out).map(|_| rng.random_range(-0.5..0.5)).collect();
    Ok(Network::new(vec![layer, Layer::Bias(Bias::new(bias)), Layer::tanh()]))
}

fn to_true_gradients(grads: &mut [Option<LayerGrad>], sigma: &[f64]) {
    for g in grads.iter_mut().flatten() {
        match g {
            LayerGrad::Spectral(s) => *s = s.to_default(sigma),
            LayerGrad::Hyperbolic(h) => h.spectral = h.spectral.to_default(sigma),
            _ => {}
        }
    }
}

/// Worst relative error per (layer kind, loss) over `opts.seeds` random
/// shapes each.
pub fn run(opts: Options) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (ki, kind) in Kind::ALL.into_iter().enumerate() {
        for (li, loss_kind) in LossKind::ALL.into_iter().enumerate() {
            let mut entry = Entry {
                kind,
                loss: loss_kind,
                cases: 0,
                max_rel_error: 0.0,
                largest: (0, 0),
            };
            for seed in 0..opts.seeds {
                let mut rng = ChaCha8Rng::seed_from_u64((seed as u64) << 8 | (ki as u64) << 4 | li as u64);
                let m = rng.random_range(2..=opts.max_m.max(2));
                let n = rng.random_range(2..=opts.max_n.max(2));
                let batch = rng.random_range(1..=4);
                let mut net = case(kind, m, n, &mut rng)?;
                let out_dim = if kind == Kind::Hyperbolic { m + 1 } else { m };
                let x = random(n, batch, &mut rng);
                let loss = match loss_kind {
                    LossKind::Mse => Loss::Mse(random(out_dim, batch, &mut rng)),
                    LossKind::CrossEntropy => Loss::CrossEntropy((0..batch).map(|_| rng.random_range(0..out_dim)).collect()),
                };
                let mode = if kind == Kind::SpectralEnhanced {
                    GradMode::Enhanced
                } else {
                    GradMode::Default
                };
                let sigma: Vec<f64> = match &net.layers()[0] {
                    Layer::Spectral(s) => s.sigma().to_vec(),
                    Layer::Hyperbolic(h) => h.inner().sigma().to_vec(),
                    _ => Vec::new(),
                };
                let opts_bw = BackwardOptions {
                    mode,
                    scope: GradScope::All,
                };
                let corrupt = opts.corrupt;
                let report = fd_check_with(&mut net, &x, &loss, EPSILON, opts_bw, |g| {
                    to_true_gradients(&mut g.layers, &sigma);
                    if corrupt {
                        if let Some(first) = g.layers[0].as_mut() {
                            first.first_block_mut()[0] += 1e-3;
                        }
                    }
                })?;
                entry.cases += 1;
                entry.max_rel_error = entry.max_rel_error.max(report.max_rel_error);
                if m * n > entry.largest.0 * entry.largest.1 {
                    entry.largest = (m, n);
                }
            }
            out.push(entry);
        }
    }
    Ok(out)
}

pub fn format_table(entries: &[Entry]) -> String {
    let mut s = format!("{:<18} {:<14} {:>6} {:>14}  status\n", "layer", "loss", "cases", "max rel err");
    for e in entries {
        s.push_str(&format!(
            "{:<18} {:<14} {:>6} {:>14.3e}  {}\n",
            e.kind.name(),
            e.loss.name(),
            e.cases,
            e.max_rel_error,
            if e.passed() { "ok" } else { "FAIL" }
        ));
    }
    s
}
