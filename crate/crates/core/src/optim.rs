//! Adam with bias correction.

use crate::error::{KrfError, Result};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// One in-place Adam update of a flat parameter; `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every tensor in `store` from its stored gradient; tensors
    /// without one are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(KrfError::Config(format!(
                "optimizer tracks {} tensors but the store holds {}",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        for (k, (name, tensor)) in store.iter_mut().enumerate() {
            if self.m[k].len() != tensor.len() {
                return Err(KrfError::Config(format!("parameter `{name}` changed size")));
            }
            let grad = tensor.take_grad().unwrap_or_else(|| vec![0.0; tensor.len()]);
            adam_update(
                tensor.data_mut(),
                &grad,
                &mut self.m[k],
                &mut self.v[k],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.t,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::vector(values).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store(vec![1.0, -2.0, 0.5]);
        s.get_mut("theta").unwrap().set_grad(vec![0.3, -4.0, 1e-3]).unwrap();
        let mut adam = Adam::new(0.01);
        adam.step(&mut s).unwrap();
        let got = s.get("theta").unwrap().data().to_vec();
        let expected = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-7, "{got:?}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(vec![1.0, -2.0]);
        s.get_mut("theta").unwrap().set_grad(vec![0.0, 0.0]).unwrap();
        Adam::new(0.1).step(&mut s).unwrap();
        assert_eq!(s.get("theta").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let theta0 = vec![0.8, -0.6, 0.4, 0.2];
        let norm0 = theta0.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let mut s = store(theta0);
        let mut adam = Adam::new(0.01);
        let mut norms = Vec::new();
        for _ in 0..200 {
            let g: Vec<f64> = s.get("theta").unwrap().data().iter().map(|v| 2.0 * v).collect();
            s.get_mut("theta").unwrap().set_grad(g).unwrap();
            adam.step(&mut s).unwrap();
            norms.push(s.get("theta").unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        // Adam overshoots near the optimum, so monotone descent is checked
        // over the approach phase only.
        let approach = norms.iter().position(|&n| n < 0.1 * norm0).expect("never reached 10%");
        assert!(norms[..approach].windows(2).all(|w| w[1] < w[0]));
        assert!(*norms.last().unwrap() < 0.1 * norm0);
    }
}
