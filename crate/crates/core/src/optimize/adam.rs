use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam for gradient ascent, with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `theta += lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Coordinates whose gradient and moments are all zero stay bit-identical.
    pub fn ascend(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: if theta.len() != self.m.len() { theta.len() } else { grad.len() },
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if self.m[i] == 0.0 {
                continue;
            }
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] += lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // textbook form: running products for the bias correction, descent on -g
    fn reference_run(theta0: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut theta = theta0.to_vec();
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let (mut p1, mut p2) = (1.0, 1.0);
        for g in grads {
            p1 *= b1;
            p2 *= b2;
            for i in 0..theta.len() {
                let d = -g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * d;
                v[i] = b2 * v[i] + (1.0 - b2) * d * d;
                theta[i] -= lr * (m[i] / (1.0 - p1)) / ((v[i] / (1.0 - p2)).sqrt() + eps);
            }
        }
        theta
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = crate::seed::rng(4);
        let theta0: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let mut theta = theta0.clone();
        let mut opt = Adam::new(50);
        for g in &grads {
            opt.ascend(&mut theta, g, 3e-3).unwrap();
        }
        let expected = reference_run(&theta0, &grads, 3e-3);
        for (a, b) in theta.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut theta = vec![0.0, 1.0];
        let mut opt = Adam::new(2);
        opt.ascend(&mut theta, &[2.0, 0.0], 0.01).unwrap();
        assert!((theta[0] - 0.01).abs() < 1e-9);
        assert_eq!(theta[1], 1.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut theta = vec![0.3, -0.2];
        let mut opt = Adam::new(2);
        opt.ascend(&mut theta, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(theta, vec![0.3, -0.2]);
    }

    #[test]
    fn fixed_gradient_moves_monotonically() {
        let g = [1.5, -0.5, 0.0];
        let mut theta = vec![0.0; 3];
        let mut opt = Adam::new(3);
        opt.ascend(&mut theta, &g, 0.01).unwrap();
        let first = theta.clone();
        opt.ascend(&mut theta, &g, 0.01).unwrap();
        assert!(first[0] > 0.0 && theta[0] > first[0]);
        assert!(first[1] < 0.0 && theta[1] < first[1]);
        assert_eq!(theta[2], 0.0);
    }

    #[test]
    fn length_checked() {
        let mut opt = Adam::new(3);
        assert!(opt.ascend(&mut [0.0; 2], &[0.0; 3], 0.1).is_err());
    }
}
