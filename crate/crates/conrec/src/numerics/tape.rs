//! Reverse-mode differentiation over a Wengert tape.
//!
//! Forward calls record one node per operation; the node list is already in
//! topological order, so the backward pass is a single reverse sweep that
//! visits each node exactly once. Parameters enter the tape as named leaves;
//! `backward` returns one gradient per named leaf (zero-filled when the leaf
//! never reaches the loss).

use std::collections::BTreeMap;

use super::ops::{self, Padding};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf { name: Option<String> },
    Conv2d { x: Var, k: Var, b: Var, stride: usize, padding: Padding },
    ConvBnRelu {
        x: Var,
        k: Var,
        b: Var,
        gamma: Var,
        beta: Var,
        stride: usize,
        padding: Padding,
        xhat: Tensor<S>,
        inv_std: Vec<S>,
        train: bool,
    },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample { x: Var, factor: usize },
    BnTrain { x: Var, gamma: Var, beta: Var, mean: Vec<S>, inv_std: Vec<S> },
    BnInfer { x: Var, gamma: Var, beta: Var, mean: Vec<S>, inv_std: Vec<S> },
    Gap { x: Var },
    ConcatC { a: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Dense { x: Var, w: Var, b: Var },
    L2NormRows { x: Var, norms: Vec<S> },
    MatmulNt { a: Var, b: Var },
    MulBcastC { x: Var, a: Var },
    DivBcastRow { u: Var, v: Var },
    Mse { pred: Var, target: Tensor<S> },
    NtXent { s: Var, tau: S },
    ScalarAdd { a: Var, b: Var },
    ScalarScale { x: Var, c: S },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Ordered record of executed operations for one forward pass.
pub struct GradientTape<S: Scalar> {
    nodes: Vec<Node<S>>,
    /// Whether each node is reachable from a named (trainable) leaf; inputs
    /// that are not never get their gradients materialized.
    needs_grad: Vec<bool>,
}

/// Gradients keyed by parameter name, in deterministic (sorted) order.
pub struct Gradients<S: Scalar> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    #[cfg(test)]
    pub fn from_map_for_tests(map: BTreeMap<String, Tensor<S>>) -> Self {
        Gradients { map }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<S: Scalar> Default for GradientTape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> GradientTape<S> {
    pub fn new() -> Self {
        GradientTape { nodes: Vec::new(), needs_grad: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced on tape");
        let needs = match &op {
            Op::Leaf { name } => name.is_some(),
            other => op_inputs(other).iter().any(|v| self.needs_grad[v.0]),
        };
        self.nodes.push(Node { value, op });
        self.needs_grad.push(needs);
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: participates in forward only.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf { name: None })
    }

    /// Named trainable leaf; its gradient appears in the backward result.
    pub fn param(&mut self, name: &str, value: &Tensor<S>) -> Var {
        let mut t = value.clone();
        t.set_requires_grad(true);
        self.push(t, Op::Leaf { name: Some(name.to_string()) })
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(k), self.value(b), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { x, k, b, stride, padding }))
    }

    /// Fused convolution + training-mode batch norm + ReLU. Returns the
    /// output var and the batch statistics for the running-estimate update.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn_relu_train(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        gamma: Var,
        beta: Var,
        stride: usize,
        padding: Padding,
        eps: S,
    ) -> Result<(Var, Vec<S>, Vec<S>)> {
        let fused = ops::conv_bn_relu_train(
            self.value(x),
            self.value(k),
            self.value(b),
            self.value(gamma),
            self.value(beta),
            stride,
            padding,
            eps,
        )?;
        let (mean, var) = (fused.stats.mean, fused.stats.var);
        let v = self.push(
            fused.y,
            Op::ConvBnRelu {
                x,
                k,
                b,
                gamma,
                beta,
                stride,
                padding,
                xhat: fused.xhat,
                inv_std: fused.stats.inv_std,
                train: true,
            },
        );
        Ok((v, mean, var))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn_relu_infer(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        gamma: Var,
        beta: Var,
        run_mean: &Tensor<S>,
        run_var: &Tensor<S>,
        stride: usize,
        padding: Padding,
        eps: S,
    ) -> Result<Var> {
        let (y, xhat, inv_std) = ops::conv_bn_relu_infer(
            self.value(x),
            self.value(k),
            self.value(b),
            self.value(gamma),
            self.value(beta),
            run_mean,
            run_var,
            stride,
            padding,
            eps,
        )?;
        Ok(self.push(
            y,
            Op::ConvBnRelu { x, k, b, gamma, beta, stride, padding, xhat, inv_std, train: false },
        ))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_nearest(self.value(x), factor)?;
        Ok(self.push(out, Op::Upsample { x, factor }))
    }

    /// Training-mode batch norm; returns the output var plus the batch
    /// statistics so the caller can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: S,
    ) -> Result<(Var, Vec<S>, Vec<S>)> {
        let (out, stats) = ops::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let (mean, var) = (stats.mean.clone(), stats.var);
        let v = self.push(
            out,
            Op::BnTrain { x, gamma, beta, mean: stats.mean, inv_std: stats.inv_std },
        );
        Ok((v, mean, var))
    }

    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        run_mean: &Tensor<S>,
        run_var: &Tensor<S>,
        eps: S,
    ) -> Result<Var> {
        let out = ops::batch_norm_infer(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            run_mean,
            run_var,
            eps,
        )?;
        let inv_std = run_var.data().iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
        Ok(self.push(out, Op::BnInfer { x, gamma, beta, mean: run_mean.data().to_vec(), inv_std }))
    }

    pub fn global_average_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_average_pool(self.value(x))?;
        Ok(self.push(out, Op::Gap { x }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::ConcatC { a, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid { x })
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Dense { x, w, b }))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (out, norms) = ops::l2_normalize_rows(self.value(x))?;
        Ok(self.push(out, Op::L2NormRows { x, norms }))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatmulNt { a, b }))
    }

    pub fn mul_bcast_c(&mut self, x: Var, a: Var) -> Result<Var> {
        let out = ops::mul_bcast_c(self.value(x), self.value(a))?;
        Ok(self.push(out, Op::MulBcastC { x, a }))
    }

    pub fn div_bcast_row(&mut self, u: Var, v: Var) -> Result<Var> {
        let out = ops::div_bcast_row(self.value(u), self.value(v))?;
        Ok(self.push(out, Op::DivBcastRow { u, v }))
    }

    pub fn mse(&mut self, pred: Var, target: &Tensor<S>) -> Result<Var> {
        let v = ops::mse(self.value(pred), target)?;
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target: target.clone() }))
    }

    pub fn ntxent_from_sim(&mut self, s: Var, tau: S) -> Result<Var> {
        let v = ops::ntxent_from_sim(self.value(s), tau)?;
        Ok(self.push(Tensor::scalar(v), Op::NtXent { s, tau }))
    }

    pub fn scalar_add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).item() + self.value(b).item();
        self.push(Tensor::scalar(v), Op::ScalarAdd { a, b })
    }

    pub fn scalar_scale(&mut self, x: Var, c: S) -> Var {
        let v = self.value(x).item() * c;
        self.push(Tensor::scalar(v), Op::ScalarScale { x, c })
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every named
    /// leaf on the tape; leaves that do not reach the loss get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::ONE));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { .. } => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { x, k, b, stride, padding } => {
                    let want_dx = self.needs_grad[x.0];
                    let (dx, dk, db) = ops::conv2d_backward_sel(
                        self.value(*x),
                        self.value(*k),
                        *stride,
                        *padding,
                        &g,
                        want_dx,
                    );
                    if want_dx {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate(&mut grads, *k, dk);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::ConvBnRelu { x, k, b, gamma, beta, stride, padding, xhat, inv_std, train } => {
                    let want_dx = self.needs_grad[x.0];
                    let (dx, dk, db, dgamma, dbeta) = ops::conv_bn_relu_backward(
                        self.value(*x),
                        self.value(*k),
                        self.value(*gamma),
                        &self.nodes[i].value,
                        xhat,
                        inv_std,
                        *stride,
                        *padding,
                        &g,
                        *train,
                        want_dx,
                    );
                    if want_dx {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate(&mut grads, *k, dk);
                    self.accumulate(&mut grads, *b, db);
                    self.accumulate(&mut grads, *gamma, dgamma);
                    self.accumulate(&mut grads, *beta, dbeta);
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = ops::max_pool2_backward(&g, argmax, self.value(*x).shape());
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Upsample { x, factor } => {
                    let dx = ops::upsample_nearest_backward(&g, *factor);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::BnTrain { x, gamma, beta, mean, inv_std } => {
                    let (dx, dgamma, dbeta) = ops::batch_norm_train_backward(
                        self.value(*x),
                        self.value(*gamma),
                        mean,
                        inv_std,
                        &g,
                    );
                    self.accumulate(&mut grads, *x, dx);
                    self.accumulate(&mut grads, *gamma, dgamma);
                    self.accumulate(&mut grads, *beta, dbeta);
                }
                Op::BnInfer { x, gamma, beta, mean, inv_std } => {
                    let (dx, dgamma, dbeta) = ops::batch_norm_infer_backward(
                        self.value(*x),
                        self.value(*gamma),
                        mean,
                        inv_std,
                        &g,
                    );
                    self.accumulate(&mut grads, *x, dx);
                    self.accumulate(&mut grads, *gamma, dgamma);
                    self.accumulate(&mut grads, *beta, dbeta);
                }
                Op::Gap { x } => {
                    let dx = ops::global_average_pool_backward(&g, self.value(*x).shape());
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::ConcatC { a, b } => {
                    let (da, db) =
                        ops::concat_channels_backward(&g, self.value(*a).dim(3), self.value(*b).dim(3));
                    self.accumulate(&mut grads, *a, da);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(&self.nodes[i].value, &g);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let dx = ops::sigmoid_backward(&self.nodes[i].value, &g);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = ops::dense_backward(self.value(*x), self.value(*w), &g);
                    self.accumulate(&mut grads, *x, dx);
                    self.accumulate(&mut grads, *w, dw);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::L2NormRows { x, norms } => {
                    let dx = ops::l2_normalize_rows_backward(&self.nodes[i].value, norms, &g);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::MatmulNt { a, b } => {
                    let (da, db) = ops::matmul_nt_backward(self.value(*a), self.value(*b), &g);
                    self.accumulate(&mut grads, *a, da);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::MulBcastC { x, a } => {
                    let (dx, da) = ops::mul_bcast_c_backward(self.value(*x), self.value(*a), &g);
                    self.accumulate(&mut grads, *x, dx);
                    self.accumulate(&mut grads, *a, da);
                }
                Op::DivBcastRow { u, v } => {
                    let (du, dv) = ops::div_bcast_row_backward(self.value(*u), self.value(*v), &g);
                    self.accumulate(&mut grads, *u, du);
                    self.accumulate(&mut grads, *v, dv);
                }
                Op::Mse { pred, target } => {
                    let dp = ops::mse_backward(self.value(*pred), target, g.item());
                    self.accumulate(&mut grads, *pred, dp);
                }
                Op::NtXent { s, tau } => {
                    let ds = ops::ntxent_from_sim_backward(self.value(*s), *tau, g.item());
                    self.accumulate(&mut grads, *s, ds);
                }
                Op::ScalarAdd { a, b } => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::ScalarScale { x, c } => {
                    self.accumulate(&mut grads, *x, Tensor::scalar(g.item() * *c));
                }
            }
        }

        let mut map = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { name: Some(name) } = &node.op {
                let grad = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                if map.insert(name.clone(), grad).is_some() {
                    return Err(Error::Config(format!("parameter {name} placed on tape twice")));
                }
            }
        }
        Ok(Gradients { map })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        match &mut grads[v.0] {
            Some(existing) => ops::add_into(existing, &g),
            slot @ None => *slot = Some(g),
        }
    }
}



fn op_inputs<S: Scalar>(op: &Op<S>) -> Vec<Var> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::Conv2d { x, k, b, .. } => vec![*x, *k, *b],
        Op::ConvBnRelu { x, k, b, gamma, beta, .. } => vec![*x, *k, *b, *gamma, *beta],
        Op::MaxPool2 { x, .. }
        | Op::Upsample { x, .. }
        | Op::Gap { x }
        | Op::Relu { x }
        | Op::Sigmoid { x }
        | Op::L2NormRows { x, .. }
        | Op::ScalarScale { x, .. } => vec![*x],
        Op::BnTrain { x, gamma, beta, .. } | Op::BnInfer { x, gamma, beta, .. } => {
            vec![*x, *gamma, *beta]
        }
        Op::ConcatC { a, b } | Op::MatmulNt { a, b } | Op::ScalarAdd { a, b } => vec![*a, *b],
        Op::Dense { x, w, b } => vec![*x, *w, *b],
        Op::MulBcastC { x, a } => vec![*x, *a],
        Op::DivBcastRow { u, v } => vec![*u, *v],
        Op::Mse { pred, .. } => vec![*pred],
        Op::NtXent { s, .. } => vec![*s],
    }
}
