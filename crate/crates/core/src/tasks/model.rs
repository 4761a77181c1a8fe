use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{Layer, Network};
use crate::error::{Error, Result};
use crate::layers::{kaiming_uniform, Bias, DenseLinear, LayerKind, LoraLinear, SpectralLinear};
use crate::optim::Method;

/// A stack of linear layers `dims[0] → dims[1] → … → dims[last]` with an
/// activation between consecutive layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dims: Vec<usize>,
    pub bias: bool,
}

impl ModelSpec {
    pub fn linear(n: usize, m: usize) -> Self {
        Self {
            dims: vec![n, m],
            bias: false,
        }
    }

    /// `input → hidden… → classes`, ReLU and bias on every layer.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        Self { dims, bias: true }
    }

    /// `(out, in)` of each linear layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Layer parametrization each method trains.
pub fn layer_kind(method: Method) -> LayerKind {
    match method {
        Method::Full | Method::Galore => LayerKind::Dense,
        Method::Lora | Method::ReloraStar => LayerKind::Lora,
        Method::Sst => LayerKind::Spectral,
    }
}

/// Kaiming-initialized model. Layers with `min(m, n) < rank` stay dense.
/// All weights are drawn before any adapter, so every kind starts from the
/// same effective weights for a given `rng` state.
pub fn build_model<R: Rng + ?Sized>(spec: &ModelSpec, kind: LayerKind, rank: usize, rng: &mut R) -> Result<Network> {
    if spec.dims.len() < 2 || spec.dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid model dims {:?}", spec.dims)));
    }
    if kind != LayerKind::Dense && rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let shapes = spec.shapes();
    let weights: Vec<_> = shapes.iter().map(|&(m, n)| kaiming_uniform(m, n, rng)).collect();
    let mut layers = Vec::new();
    for (i, (&(m, n), w)) in shapes.iter().zip(weights).enumerate() {
        let low_rank = rank <= m.min(n);
        layers.push(match kind {
            LayerKind::Lora if low_rank => Layer::Lora(LoraLinear::new(w, rank, rng)?),
            LayerKind::Spectral if low_rank => Layer::Spectral(SpectralLinear::from_weight(&w, rank)?),
            _ => Layer::Dense(DenseLinear::new(w)),
        });
        if spec.bias {
            layers.push(Layer::Bias(Bias::zeros(m)));
        }
        if i + 1 < shapes.len() {
            layers.push(Layer::relu());
        }
    }
    Ok(Network::new(layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_layout() {
        let spec = ModelSpec::mlp(784, &[512, 512, 512], 10);
        assert_eq!(spec.shapes(), vec![(512, 784), (512, 512), (512, 512), (10, 512)]);
    }

    #[test]
    fn small_layers_stay_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ModelSpec::mlp(12, &[8], 3);
        let net = build_model(&spec, LayerKind::Spectral, 3, &mut rng).unwrap();
        assert!(matches!(net.layers()[0], Layer::Spectral(_)));
        assert!(matches!(net.layers()[1], Layer::Bias(_)));
        assert!(matches!(net.layers()[2], Layer::Activation(_)));
        assert!(matches!(net.layers()[3], Layer::Spectral(_)));
        let net = build_model(&spec, LayerKind::Lora, 4, &mut rng).unwrap();
        assert!(matches!(net.layers()[0], Layer::Lora(_)));
        assert!(matches!(net.layers()[3], Layer::Dense(_)));
        assert_eq!(net.len(), 5);
    }

    #[test]
    fn same_seed_same_init_across_kinds() {
        let spec = ModelSpec::linear(6, 5);
        let dense = build_model(&spec, LayerKind::Dense, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let sst = build_model(&spec, LayerKind::Spectral, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let a = dense.layers()[0].effective_weight().unwrap();
        let b = sst.layers()[0].effective_weight().unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}
