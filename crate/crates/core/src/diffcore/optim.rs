use super::{Gradients, ParamGroup, ParamStore};
use crate::error::{Error, Result};

/// Learning rate and decoupled weight decay for one parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
}

/// Adam with decoupled weight decay and per-group hyperparameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &Gradients,
        hyper: impl Fn(ParamGroup) -> GroupHyper,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient set has {} entries for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        // Validate up front so a failed step leaves every parameter untouched.
        for id in params.ids() {
            let g = grads
                .get(id)
                .ok_or_else(|| Error::MissingGrad(params.name(id).to_string()))?;
            if g.shape() != params.tensor(id).shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: params.tensor(id).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let GroupHyper { lr, weight_decay } = hyper(params.group(id));
            let g = grads.get(id).expect("validated above").data();
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let w = params.tensor_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + weight_decay * w[i]);
            }
        }
        Ok(())
    }
}
