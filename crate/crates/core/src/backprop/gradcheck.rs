//! Central-difference gradient check.

use super::{BackwardOptions, Gradients, Loss, Network};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `max |analytic − fd| / max(1, |fd|)` over all parameters.
    pub max_rel_error: f64,
    /// Index into the flattened parameter vector where the maximum occurred.
    pub worst_index: usize,
    pub param_count: usize,
}

/// Worst relative error between the network's analytic gradients and
/// central differences with step `epsilon`.
pub fn fd_check(net: &mut Network, x: &Matrix, loss: &Loss, epsilon: f64) -> Result<f64> {
    Ok(fd_check_report(net, x, loss, epsilon, |_| {})?.max_rel_error)
}

/// Like [`fd_check`]; `tamper` may modify the analytic gradients before the
/// comparison (negative controls).
pub fn fd_check_report(
    net: &mut Network,
    x: &Matrix,
    loss: &Loss,
    epsilon: f64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<FdReport> {
    fd_check_with(net, x, loss, epsilon, BackwardOptions::default(), tamper)
}

/// Like [`fd_check_report`] with explicit backward options. With enhanced
/// spectral gradients, `tamper` is expected to map them back to true
/// gradients before the comparison.
pub fn fd_check_with(
    net: &mut Network,
    x: &Matrix,
    loss: &Loss,
    epsilon: f64,
    opts: BackwardOptions,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let out = net.forward(x)?;
    let lg = loss.eval(&out)?;
    let mut grads = net.backward(&lg.grad, opts)?;
    tamper(&mut grads);
    let analytic = grads.flatten();

    let block_lens: Vec<usize> = net.param_blocks_mut().iter().map(|b| b.len()).collect();
    let total: usize = block_lens.iter().sum();
    if total != analytic.len() {
        return Err(Error::Shape(format!(
            "{} analytic gradient entries for {total} parameters",
            analytic.len()
        )));
    }

    let eval_at = |net: &mut Network, block: usize, idx: usize, value: f64| -> Result<f64> {
        net.param_blocks_mut()[block][idx] = value;
        let out = net.forward(x)?;
        Ok(loss.eval(&out)?.value)
    };

    let mut worst = 0.0f64;
    let mut worst_index = 0;
    let mut flat = 0;
    for (block, &len) in block_lens.iter().enumerate() {
        for idx in 0..len {
            let orig = net.param_blocks_mut()[block][idx];
            let plus = eval_at(net, block, idx, orig + epsilon)?;
            let minus = eval_at(net, block, idx, orig - epsilon)?;
            net.param_blocks_mut()[block][idx] = orig;
            let fd = (plus - minus) / (2.0 * epsilon);
            let err = (analytic[flat] - fd).abs() / fd.abs().max(1.0);
            if err > worst || err.is_nan() {
                worst = if err.is_nan() { f64::INFINITY } else { err };
                worst_index = flat;
            }
            flat += 1;
        }
    }
    Ok(FdReport {
        max_rel_error: worst,
        worst_index,
        param_count: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::Layer;
    use crate::layers::{Bias, DenseLinear};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_mlp_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = |a, b| Matrix::from_fn(a, b, |_, _| rng.random_range(-1.0..1.0));
        let mut net = Network::new(vec![
            Layer::Dense(DenseLinear::new(r(6, 4))),
            Layer::Bias(Bias::new(vec![0.1; 6])),
            Layer::tanh(),
            Layer::Dense(DenseLinear::new(r(3, 6))),
        ]);
        let x = r(4, 5);
        let err = fd_check(&mut net, &x, &Loss::CrossEntropy(vec![0, 1, 2, 1, 0]), 1e-5).unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn tampering_is_detected() {
        let mut net = Network::new(vec![Layer::Dense(DenseLinear::new(Matrix::identity(2)))]);
        let x = Matrix::from_rows(&[&[1.0], &[2.0]]);
        let target = Loss::Mse(Matrix::from_rows(&[&[0.0], &[0.0]]));
        let rep = fd_check_report(&mut net, &x, &target, 1e-5, |g| {
            g.layers[0].as_mut().unwrap().first_block_mut()[0] += 1e-2;
        })
        .unwrap();
        assert!(rep.max_rel_error > 1e-3);
        assert_eq!(rep.worst_index, 0);
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut net = Network::new(vec![Layer::Dense(DenseLinear::new(Matrix::identity(1)))]);
        let x = Matrix::identity(1);
        assert!(fd_check(&mut net, &x, &Loss::Mse(x.clone()), 1e-2).is_err());
    }
}
