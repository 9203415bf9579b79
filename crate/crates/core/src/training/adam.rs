//! Adam over a [`ParamStore`].

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{FcnrError, Result};
use crate::networks::ParamStore;

const MOMENT1: &str = "adam.m.";
const MOMENT2: &str = "adam.v.";

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub steps: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, var) in store.iter() {
            first.insert(name.clone(), var.as_tensor().zeros_like()?);
            second.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            first,
            second,
        })
    }

    /// Apply one update. Parameters without a gradient still decay their
    /// moments, as with an explicit zero gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in store.iter() {
            let theta = var.as_tensor();
            let g = match grads.get(theta) {
                Some(g) => g.detach(),
                None => theta.zeros_like()?,
            };
            let m = self.first.get_mut(name).expect("moment registered");
            *m = ((&*m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = self.second.get_mut(name).expect("moment registered");
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&*m / c1)?;
            let v_hat = (&*v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(theta.detach() - (update * self.lr)?)?)?;
        }
        Ok(())
    }

    /// Moments keyed `adam.m.<param>` / `adam.v.<param>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.first {
            out.insert(format!("{MOMENT1}{k}"), v.clone());
        }
        for (k, v) in &self.second {
            out.insert(format!("{MOMENT2}{k}"), v.clone());
        }
        out
    }

    /// Restore moments written by [`Adam::state_tensors`].
    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>, steps: u64) -> Result<()> {
        for (prefix, map) in [(MOMENT1, &mut self.first), (MOMENT2, &mut self.second)] {
            for (name, slot) in map.iter_mut() {
                let stored = tensors
                    .get(&format!("{prefix}{name}"))
                    .ok_or_else(|| FcnrError::Checkpoint(format!("missing optimizer state for {name}")))?;
                if stored.dims() != slot.dims() {
                    return Err(FcnrError::Checkpoint(format!("optimizer state for {name} has wrong shape")));
                }
                *slot = stored.to_dtype(slot.dtype())?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new(DType::F64);
        let w = store.init(0).from_values("w", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = Adam::new(&store, 0.1, 0.9, 0.999, 1e-8).unwrap();
        let loss = (w.sqr().unwrap().sum_all().unwrap() * 0.5).unwrap();
        let grads = loss.backward().unwrap();
        adam.step(&store, &grads).unwrap();
        let after = store.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        // With bias correction the first step is lr * sign(g).
        for (a, b) in after.iter().zip([0.9, -1.9, 0.4]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut store = ParamStore::new(DType::F64);
        store.init(0).from_values("w", &[2], vec![3.0, -4.0]).unwrap();
        let mut adam = Adam::new(&store, 0.05, 0.9, 0.999, 1e-8).unwrap();
        for _ in 0..600 {
            let w = store.get("w").unwrap().as_tensor().clone();
            let target = Tensor::new(&[1.0f64, 2.0], w.device()).unwrap();
            let loss = (&w - target).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            adam.step(&store, &grads).unwrap();
        }
        let w = store.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-2 && (w[1] - 2.0).abs() < 1e-2, "{w:?}");
    }
}
