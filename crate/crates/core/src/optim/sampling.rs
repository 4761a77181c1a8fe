//! Choosing which singular vectors are trained during an iteration.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Draws without replacement from `½(1/m + σᵢ/Σσ)`.
    MultinomialMix,
    Uniform,
    /// Walks the index range in blocks of `r`, wrapping around.
    Sequential,
    /// The `r` largest singular values; ties go to the lower index.
    TopR,
}

impl SamplingStrategy {
    pub const ALL: [SamplingStrategy; 4] = [
        SamplingStrategy::MultinomialMix,
        SamplingStrategy::Uniform,
        SamplingStrategy::Sequential,
        SamplingStrategy::TopR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::MultinomialMix => "multinomial_mix",
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::Sequential => "sequential",
            SamplingStrategy::TopR => "top_r",
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "multinomial_mix" | "multinomial" => Ok(SamplingStrategy::MultinomialMix),
            "uniform" => Ok(SamplingStrategy::Uniform),
            "sequential" => Ok(SamplingStrategy::Sequential),
            "top_r" | "topr" => Ok(SamplingStrategy::TopR),
            other => Err(format!("unknown sampling strategy `{other}`")),
        }
    }
}

/// Single-draw probabilities `½(1/m + σᵢ/Σⱼσⱼ)`.
///
/// When every `σ` is zero the proportional term has no mass to distribute
/// and is taken as uniform, so the result is `1/m` everywhere.
pub fn mix_probabilities(sigma: &[f64]) -> Vec<f64> {
    let m = sigma.len() as f64;
    let total: f64 = sigma.iter().sum();
    sigma
        .iter()
        .map(|&s| {
            let prop = if total > 0.0 { s / total } else { 1.0 / m };
            0.5 * (1.0 / m + prop)
        })
        .collect()
}

/// Returns `r` distinct indices into `sigma`.
///
/// `iteration` is only used by [`SamplingStrategy::Sequential`], which picks
/// `{(iteration·r + j) mod m : j < r}`.
pub fn sample_indices<R: Rng + ?Sized>(
    sigma: &[f64],
    r: usize,
    strategy: SamplingStrategy,
    iteration: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let m = sigma.len();
    if r > m {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {r} of {m} singular vectors"
        )));
    }
    if sigma.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "singular values must be finite and non-negative".into(),
        ));
    }
    Ok(match strategy {
        SamplingStrategy::MultinomialMix => weighted_without_replacement(&mix_probabilities(sigma), r, rng),
        SamplingStrategy::Uniform => weighted_without_replacement(&vec![1.0; m], r, rng),
        SamplingStrategy::Sequential => (0..r).map(|j| (iteration * r + j) % m).collect(),
        SamplingStrategy::TopR => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
            order.truncate(r);
            order
        }
    })
}

/// Sequential draws, each proportional to `weights` renormalized over the
/// indices not yet taken.
fn weighted_without_replacement<R: Rng + ?Sized>(weights: &[f64], r: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let total: f64 = remaining.iter().map(|&(_, w)| w).sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &(_, w)) in remaining.iter().enumerate() {
            if target < w {
                pick = pos;
                break;
            }
            target -= w;
        }
        out.push(remaining.remove(pick).0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_index_first_draw() {
        assert_eq!(mix_probabilities(&[1.0, 0.0]), vec![0.75, 0.25]);
    }

    #[test]
    fn equal_sigma_is_uniform() {
        let p = mix_probabilities(&[2.0; 5]);
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let z = mix_probabilities(&[0.0; 4]);
        assert!(z.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn returns_distinct_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = [5.0, 0.0, 1.0, 3.0, 0.5, 0.0];
        for strategy in SamplingStrategy::ALL {
            for it in 0..5 {
                let s = sample_indices(&sigma, 4, strategy, it, &mut rng).unwrap();
                let mut sorted = s.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), 4, "{strategy} {s:?}");
            }
        }
    }

    #[test]
    fn top_r_breaks_ties_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_indices(&[1.0, 3.0, 3.0, 2.0], 2, SamplingStrategy::TopR, 0, &mut rng).unwrap();
        assert_eq!(s, vec![1, 2]);
    }

    #[test]
    fn sequential_covers_everything_in_one_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sigma = [1.0; 8];
        let mut seen = [false; 8];
        for it in 0..4 {
            for i in sample_indices(&sigma, 2, SamplingStrategy::Sequential, it, &mut rng).unwrap() {
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn too_many_requested() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_indices(&[1.0, 2.0], 3, SamplingStrategy::Uniform, 0, &mut rng).is_err());
    }

    #[test]
    fn single_draw_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigma = [4.0, 0.0, 1.0, 2.5, 0.5];
        let expected = mix_probabilities(&sigma);
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            let s = sample_indices(&sigma, 1, SamplingStrategy::MultinomialMix, 0, &mut rng).unwrap();
            counts[s[0]] += 1;
        }
        for (c, p) in counts.iter().zip(&expected) {
            assert!((*c as f64 / draws as f64 - p).abs() < 0.01);
        }
    }
}
