use serde::{Deserialize, Serialize};

/// Bias-corrected Adam moments for a flat list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = shapes.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Zero the moments and step counter, re-sizing to `shapes`.
    pub fn reset(&mut self, shapes: impl IntoIterator<Item = usize>) {
        *self = Self {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            ..Self::new(shapes)
        };
    }

    pub fn is_zeroed(&self) -> bool {
        self.step == 0
            && self
                .m
                .iter()
                .chain(&self.v)
                .all(|t| t.iter().all(|&x| x == 0.0))
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter tensor count");
        assert_eq!(grads.len(), self.m.len(), "gradient tensor count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "parameter and gradient length");
            for i in 0..p.len() {
                m[i] = flush(b1 * m[i] + (1.0 - b1) * g[i]);
                v[i] = flush(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Moments of parameters whose gradient stays zero (dead units) decay
/// geometrically into the subnormal range, where arithmetic is very slow.
fn flush(x: f64) -> f64 {
    if x.is_normal() {
        x
    } else {
        0.0
    }
}
