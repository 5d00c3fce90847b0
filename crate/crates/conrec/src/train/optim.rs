//! LARS and momentum-SGD parameter updates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Gradients, Tensor};

const LARS_EPS: f32 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Lars,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lars" => Ok(OptimizerKind::Lars),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Lars => "lars",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Biases and batch-norm scales/shifts are excluded from weight decay and
/// from LARS adaptation; they get plain momentum SGD.
fn excluded_from_adaptation(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".gamma") || name.ends_with(".beta")
}

pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f32,
    pub weight_decay: f32,
    pub momentum: f32,
    pub trust_coef: f32,
    buffers: BTreeMap<String, Tensor<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, momentum: f64, trust_coef: f64) -> Self {
        Optimizer {
            kind,
            lr: lr as f32,
            weight_decay: weight_decay as f32,
            momentum: momentum as f32,
            trust_coef: trust_coef as f32,
            buffers: BTreeMap::new(),
        }
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.buffers
    }

    pub fn restore_buffers(&mut self, buffers: BTreeMap<String, Tensor<f32>>) {
        self.buffers = buffers;
    }

    /// One update over every parameter present in the gradient map. Layers
    /// whose sub-network was never run are not in the map and stay untouched.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &Gradients<f32>) -> Result<()> {
        for (name, grad) in grads.iter() {
            if !grad.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for layer {name}")));
            }
            let w = params.get_mut(name);
            assert_eq!(w.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let buf = self
                .buffers
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));

            let plain = excluded_from_adaptation(name);
            match self.kind {
                OptimizerKind::Lars if !plain => {
                    let mut wnorm = 0.0f32;
                    for &v in w.data() {
                        wnorm += v * v;
                    }
                    wnorm = wnorm.sqrt();
                    // g' = g + wd * w
                    let mut gnorm = 0.0f32;
                    let wd = self.weight_decay;
                    for (&g, &wv) in grad.data().iter().zip(w.data().iter()) {
                        let gp = g + wd * wv;
                        gnorm += gp * gp;
                    }
                    gnorm = gnorm.sqrt();
                    let local_lr = if wnorm > 0.0 && gnorm > 0.0 {
                        self.trust_coef * wnorm / (gnorm + LARS_EPS)
                    } else {
                        1.0
                    };
                    let scale = local_lr * self.lr;
                    for ((m, &g), (wv, _)) in buf
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data().iter())
                        .zip(w.data().iter().map(|v| (*v, ())))
                    {
                        *m = self.momentum * *m + (g + wd * wv) * scale;
                    }
                    for (wv, &m) in w.data_mut().iter_mut().zip(buf.data().iter()) {
                        *wv -= m;
                    }
                }
                OptimizerKind::Lars => {
                    // Plain momentum SGD, no weight decay.
                    for (m, &g) in buf.data_mut().iter_mut().zip(grad.data().iter()) {
                        *m = self.momentum * *m + g * self.lr;
                    }
                    for (wv, &m) in w.data_mut().iter_mut().zip(buf.data().iter()) {
                        *wv -= m;
                    }
                }
                OptimizerKind::Sgd => {
                    let wd = if plain { 0.0 } else { self.weight_decay };
                    let snapshot: Vec<f32> = w.data().to_vec();
                    for ((m, &g), &wv) in
                        buf.data_mut().iter_mut().zip(grad.data().iter()).zip(snapshot.iter())
                    {
                        *m = self.momentum * *m + (g + wd * wv) * self.lr;
                    }
                    for (wv, &m) in w.data_mut().iter_mut().zip(buf.data().iter()) {
                        *wv -= m;
                    }
                }
            }
        }
        Ok(())
    }
}
