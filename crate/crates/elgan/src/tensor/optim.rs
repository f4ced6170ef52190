//! First-order optimizers over raw parameter tensors.

use ndarray::ArrayD;

use super::graph::Data;

/// Which update rule an optimizer applies.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OptimizerKind {
    Adam { beta1: f32, beta2: f32, eps: f32 },
    RmsProp { alpha: f32, eps: f32 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        // beta1 = 0 is the usual choice for adversarial critics.
        OptimizerKind::Adam { beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }

    pub fn adam_classic() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { alpha: 0.9, eps: 1e-8 }
    }
}

struct Slot {
    m: Data,
    v: Data,
}

/// Stateful optimizer for one parameter set, addressed by tensor index.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    step: u64,
    slots: Vec<Option<Slot>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32, n_params: usize) -> Self {
        Self { kind, lr, step: 0, slots: (0..n_params).map(|_| None).collect() }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// Apply one update. `grads[i] = None` leaves parameter `i` untouched.
    pub fn step(&mut self, params: &mut [Data], grads: &[Option<Data>]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.slots.len());
        self.step += 1;
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let p = &mut params[i];
            let slot = self.slots[i].get_or_insert_with(|| Slot {
                m: ArrayD::zeros(p.raw_dim()),
                v: ArrayD::zeros(p.raw_dim()),
            });
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    slot.m.zip_mut_with(g, |m, &gv| *m = beta1 * *m + (1.0 - beta1) * gv);
                    slot.v.zip_mut_with(g, |v, &gv| *v = beta2 * *v + (1.0 - beta2) * gv * gv);
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    let lr = self.lr;
                    ndarray::Zip::from(&mut *p)
                        .and(&slot.m)
                        .and(&slot.v)
                        .for_each(|p, &m, &v| {
                            let mhat = m / bc1;
                            let vhat = v / bc2;
                            *p -= lr * mhat / (vhat.sqrt() + eps);
                        });
                }
                OptimizerKind::RmsProp { alpha, eps } => {
                    slot.v.zip_mut_with(g, |v, &gv| *v = alpha * *v + (1.0 - alpha) * gv * gv);
                    let lr = self.lr;
                    ndarray::Zip::from(&mut *p).and(&slot.v).and(g).for_each(|p, &v, &gv| {
                        *p -= lr * gv / (v.sqrt() + eps);
                    });
                }
            }
        }
    }
}
