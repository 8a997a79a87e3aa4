use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// SGD with momentum; weight decay enters as an L2 term on the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub hyper: SgdParams,
    velocities: Vec<Tensor>,
}

impl OptimizerState {
    /// Zero velocities shaped like `params`.
    pub fn new<'a>(hyper: SgdParams, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            hyper,
            velocities: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }
}

/// `v ← momentum·v + (g + weight_decay·p)`, then `p ← p − lr·v`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::Dimension {
            op: "sgd_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.velocities.len()],
        });
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocities) {
        p.check_same_shape("sgd_step grad", g)?;
        p.check_same_shape("sgd_step velocity", v)?;
    }
    let SgdParams {
        lr,
        momentum,
        weight_decay,
    } = state.hyper;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocities) {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + (gv + weight_decay * *pv);
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
