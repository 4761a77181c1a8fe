use serde::{Deserialize, Serialize};

/// Adam hyper-parameters. `weight_decay > 0` switches to decoupled (AdamW)
/// decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moments and timestep for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m1: Vec<f64>,
    m2: Vec<f64>,
    t: u64,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        Self {
            m1: vec![0.0; len],
            m2: vec![0.0; len],
            t: 0,
            hyper,
        }
    }

    pub fn len(&self) -> usize {
        self.m1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m1.is_empty()
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m1, &self.m2)
    }

    /// Clears both moments and the timestep.
    pub fn reset(&mut self) {
        self.m1.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
        self.t = 0;
    }

    /// Advances the moments with `grad` and returns the bias-corrected
    /// direction `m̂ / (√v̂ + ε)`.
    pub fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.m1.len(), "adam: gradient length");
        self.t += 1;
        let AdamHyper {
            beta1, beta2, eps, ..
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut dir = Vec::with_capacity(grad.len());
        for ((m, v), &g) in self.m1.iter_mut().zip(self.m2.iter_mut()).zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            dir.push(m_hat / (v_hat.sqrt() + eps));
        }
        dir
    }

    /// One in-place update of `params` with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len(), "adam: parameter length");
        let dir = self.direction(grad);
        let decay = lr * self.hyper.weight_decay;
        for (p, d) in params.iter_mut().zip(dir) {
            if decay != 0.0 {
                *p -= decay * *p;
            }
            *p -= lr * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = AdamState::new(3, AdamHyper::default());
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3], 0.1);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut s = AdamState::new(2, AdamHyper::default());
        let mut p = vec![0.0, 0.0];
        let lr = 0.01;
        let mut last = p.clone();
        for _ in 0..2000 {
            last.copy_from_slice(&p);
            s.step(&mut p, &[3.0, -0.25], lr);
        }
        assert!(((last[0] - p[0]) - lr).abs() < 1e-6);
        assert!(((last[1] - p[1]) + lr).abs() < 1e-6);
    }

    #[test]
    fn three_scalar_steps_match_hand_trace() {
        // hand-stepped reference: b1=0.9, b2=0.999, eps=1e-8, lr=0.1
        let grads = [0.5, -1.0, 2.0];
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        let mut expected = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            expected.push(x);
        }
        // first step moves by exactly lr·sign(g) up to eps
        assert!((expected[0] - 0.9).abs() < 1e-8);

        let mut s = AdamState::new(1, AdamHyper::default());
        let mut p = [1.0];
        for (g, e) in grads.iter().zip(&expected) {
            s.step(&mut p, &[*g], lr);
            assert!((p[0] - e).abs() < 1e-15, "{} vs {e}", p[0]);
        }
        assert_eq!(s.timestep(), 3);
        s.reset();
        assert_eq!(s.timestep(), 0);
        assert_eq!(s.moments().0, &[0.0]);
    }

    #[test]
    fn decoupled_weight_decay() {
        let hyper = AdamHyper {
            weight_decay: 0.5,
            ..AdamHyper::default()
        };
        let mut s = AdamState::new(1, hyper);
        let mut p = [2.0];
        s.step(&mut p, &[0.0], 0.1);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
