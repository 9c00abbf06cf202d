//! Adam with per-block step counters.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{Grads, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[Tensor]) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
            t: vec![0; shapes.len()],
        }
    }

    /// One update. Blocks whose gradient is exactly zero are skipped, moments
    /// included, so a zero gradient leaves parameters untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &Grads, names: &[String]) -> Result<(), ModelError> {
        for (i, g) in grads.blocks.iter().enumerate() {
            if g.data.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFiniteGradient(names.get(i).cloned().unwrap_or_default()));
            }
        }
        for (i, g) in grads.blocks.iter().enumerate() {
            if g.is_zero() {
                continue;
            }
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v, p) = (&mut self.m[i].data, &mut self.v[i].data, &mut params[i].data);
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Vec<Tensor> {
        vec![Tensor {
            rows: 1,
            cols: 1,
            data: vec![x],
        }]
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one(1.5);
        let mut opt = Adam::new(0.1, &p);
        let g = Grads { blocks: one(0.0) };
        opt.step(&mut p, &g, &["w".into()]).unwrap();
        assert_eq!(p, one(1.5));
    }

    #[test]
    fn quadratic_converges() {
        // minimize (w - 3)^2 from w = -2; oracle: plain scalar simulation of
        // the same recurrence written out by hand
        let mut p = one(-2.0);
        let mut opt = Adam::new(0.05, &p);
        let (mut w, mut m, mut v) = (-2.0f64, 0.0f64, 0.0f64);
        for t in 1..=500 {
            let g = 2.0 * (p[0].data[0] - 3.0);
            opt.step(&mut p, &Grads { blocks: one(g) }, &["w".into()]).unwrap();
            let gw = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * gw;
            v = 0.999 * v + 0.001 * gw * gw;
            w -= 0.05 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((p[0].data[0] - w).abs() < 1e-12);
        assert!((p[0].data[0] - 3.0).abs() < 1e-2, "{}", p[0].data[0]);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = one(0.3);
            let mut opt = Adam::new(0.01, &p);
            for _ in 0..10 {
                opt.step(&mut p, &Grads { blocks: one(0.7) }, &["w".into()]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_rejected() {
        let mut p = one(0.0);
        let mut opt = Adam::new(0.01, &p);
        let r = opt.step(&mut p, &Grads { blocks: one(f64::NAN) }, &["w".into()]);
        assert!(matches!(r, Err(ModelError::NonFiniteGradient(n)) if n == "w"));
        assert_eq!(p, one(0.0));
    }
}
