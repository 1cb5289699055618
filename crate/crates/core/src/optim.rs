//! Classical momentum SGD.

use crate::params::Model;

/// Per-tensor velocities mirroring the model, plus hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Model,
    pub step: u64,
    pub lr: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(model: &Model, lr: f64, momentum: f64) -> Self {
        let mut velocity = model.clone();
        velocity.scale_assign(0.0);
        Self {
            velocity,
            step: 0,
            lr,
            momentum,
        }
    }
}

/// `v ← momentum·v + g; w ← w − lr·v`.
pub fn sgd_step(params: &mut Model, grads: &Model, state: &mut OptimizerState) {
    let (lr, mu) = (state.lr, state.momentum);
    for ((w, g), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.velocity.tensors_mut())
    {
        assert_eq!(w.shape(), g.shape(), "gradient shape mismatch");
        for ((wi, &gi), vi) in w
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(v.as_mut_slice())
        {
            *vi = mu * *vi + gi;
            *wi -= lr * *vi;
        }
    }
    state.step += 1;
}
