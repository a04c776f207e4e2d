//! Adam (β = 0.9/0.999, ε = 1e-8, no weight decay).
//!
//! On CPU the update runs as one fused loop per parameter over host buffers,
//! which avoids the dozen full-size temporaries the tensor-op formulation
//! allocates per step. Other devices use candle's `AdamW` with zero decay,
//! which computes the same update.

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::Result;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub struct Adam {
    lr: f64,
    step: i32,
    inner: Inner,
}

enum Inner {
    Fused(Vec<Slot>),
    Device(AdamW),
}

struct Slot {
    var: Var,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64) -> Result<Self> {
        let fused = vars.iter().all(|v| v.device().is_cpu() && v.dtype() == DType::F32);
        let inner = if fused {
            Inner::Fused(
                vars.into_iter()
                    .map(|var| {
                        let n = var.elem_count();
                        Slot { var, m: vec![0.0; n], v: vec![0.0; n] }
                    })
                    .collect(),
            )
        } else {
            let params = ParamsAdamW { lr, beta1: BETA1, beta2: BETA2, eps: EPS, weight_decay: 0.0 };
            Inner::Device(AdamW::new(vars, params)?)
        };
        Ok(Self { lr, step: 0, inner })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
        if let Inner::Device(opt) = &mut self.inner {
            opt.set_learning_rate(lr);
        }
    }

    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let grads = loss.backward()?;
        self.step(&grads)
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let slots = match &mut self.inner {
            Inner::Device(opt) => return Ok(opt.step(grads)?),
            Inner::Fused(slots) => slots,
        };
        let c1 = 1.0 / (1.0 - BETA1.powi(self.step));
        let c2 = 1.0 / (1.0 - BETA2.powi(self.step));
        let (b1, b2, eps) = (BETA1 as f32, BETA2 as f32, EPS as f32);
        let (lr_c1, c2) = ((self.lr * c1) as f32, c2 as f32);
        for slot in slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else { continue };
            let g = g.flatten_all()?.to_vec1::<f32>()?;
            let shape = slot.var.shape().clone();
            let mut w = slot.var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            for (((w, m), v), g) in w.iter_mut().zip(&mut slot.m).zip(&mut slot.v).zip(&g) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr_c1 * *m / ((*v * c2).sqrt() + eps);
            }
            slot.var.set(&Tensor::from_vec(w, shape, slot.var.device())?)?;
        }
        Ok(())
    }
}
