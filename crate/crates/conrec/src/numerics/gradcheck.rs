//! Finite-difference gradient checking.
//!
//! Double precision, central differences. Used both by the op test suite and
//! by the full-model acceptance check.

use std::collections::BTreeMap;

use super::scalar::Scalar;
use rayon::prelude::*;

use super::tape::{GradientTape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub type Params = BTreeMap<String, Tensor<f64>>;

/// Per-parameter maximum relative error between analytic and central
/// finite-difference gradients.
#[derive(Debug)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// rel = |ga - gf| / max(1e-8, |ga| + |gf|)
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / f64::max(1e-8, analytic.abs() + fd.abs())
}

/// Check analytic gradients of a scalar-valued function against central
/// finite differences. `build` must construct the same computation every time
/// it is called (deterministic for fixed params). The perturbed evaluations
/// are independent and run in parallel.
pub fn grad_check<F>(build: F, params: &Params, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut GradientTape<f64>, &Params) -> Result<Var> + Sync,
{
    // Analytic pass.
    let mut tape = GradientTape::new();
    let loss = build(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let eval = |p: &Params| -> Result<f64> {
        let mut t = GradientTape::new();
        let l = build(&mut t, p)?;
        Ok(t.value(l).item())
    };

    let mut per_param = BTreeMap::new();
    let mut max_rel = 0.0f64;
    for (name, tensor) in params {
        let analytic = grads
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        let rels: Vec<f64> = (0..tensor.numel())
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut plus = params.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += eps;
                let mut minus = params.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= eps;
                let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
                Ok(relative_error(analytic.data()[i].to_f64(), fd))
            })
            .collect::<Result<Vec<_>>>()?;
        let worst = rels.into_iter().fold(0.0f64, f64::max);
        max_rel = max_rel.max(worst);
        per_param.insert(name.clone(), worst);
    }
    Ok(GradCheckReport { per_param, max_rel_err: max_rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::Padding;
    use crate::rng::stream;
    use rand::Rng;

    fn rand_t(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = stream(seed);
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    /// Squared distance to a fixed random target, as a scalar loss. A random
    /// target (rather than zero) keeps gradients O(1) even through layers like
    /// batch norm whose raw square-norm is nearly input-invariant.
    fn sq_loss(tape: &mut GradientTape<f64>, v: Var) -> Result<Var> {
        let target = rand_t(tape.value(v).shape(), 0xbeef, -1.0, 1.0);
        let l = tape.mse(v, &target)?;
        Ok(tape.scalar_scale(l, tape.value(v).numel() as f64))
    }

    fn check(params: Params, build: impl Fn(&mut GradientTape<f64>, &Params) -> Result<Var> + Sync) {
        let report = grad_check(build, &params, 1e-5).unwrap();
        assert!(
            report.max_rel_err <= 1e-5,
            "finite-difference mismatch: {:?}",
            report.per_param
        );
    }

    #[test]
    fn conv2d_gradients() {
        for (stride, padding, seed) in
            [(1, Padding::Same, 1u64), (1, Padding::Valid, 2), (2, Padding::Same, 3)]
        {
            let mut p = Params::new();
            p.insert("x".into(), rand_t(&[2, 5, 5, 2], seed, -1.0, 1.0));
            p.insert("k".into(), rand_t(&[3, 3, 2, 3], seed + 10, -1.0, 1.0));
            p.insert("b".into(), rand_t(&[3], seed + 20, -0.5, 0.5));
            check(p, move |tape, p| {
                let x = tape.param("x", &p["x"]);
                let k = tape.param("k", &p["k"]);
                let b = tape.param("b", &p["b"]);
                let y = tape.conv2d(x, k, b, stride, padding)?;
                sq_loss(tape, y)
            });
        }
    }

    #[test]
    fn max_pool_gradients() {
        let mut p = Params::new();
        // Well-separated values keep the argmax stable under +-eps.
        let mut rng = stream(9);
        let mut vals: Vec<f64> = (0..2 * 4 * 4 * 2).map(|i| i as f64 * 0.1).collect();
        for i in (1..vals.len()).rev() {
            let j = rng.random_range(0..=i);
            vals.swap(i, j);
        }
        p.insert("x".into(), Tensor::new(&[2, 4, 4, 2], vals).unwrap());
        check(p, |tape, p| {
            let x = tape.param("x", &p["x"]);
            let y = tape.max_pool2(x)?;
            sq_loss(tape, y)
        });
    }

    #[test]
    fn upsample_gradients() {
        let mut p = Params::new();
        p.insert("x".into(), rand_t(&[2, 3, 3, 2], 11, -1.0, 1.0));
        check(p, |tape, p| {
            let x = tape.param("x", &p["x"]);
            let y = tape.upsample_nearest(x, 2)?;
            sq_loss(tape, y)
        });
    }

    #[test]
    fn batch_norm_train_gradients() {
        let mut p = Params::new();
        p.insert("x".into(), rand_t(&[3, 3, 3, 2], 13, -1.0, 1.0));
        p.insert("gamma".into(), rand_t(&[2], 14, 0.5, 1.5));
        p.insert("beta".into(), rand_t(&[2], 15, -0.5, 0.5));
        check(p, |tape, p| {
            let x = tape.param("x", &p["x"]);
            let g = tape.param("gamma", &p["gamma"]);
            let b = tape.param("beta", &p["beta"]);
            let (y, _, _) = tape.batch_norm_train(x, g, b, 1e-5)?;
            sq_loss(tape, y)
        });
    }

    #[test]
    fn fused_conv_bn_relu_gradients() {
        for train in [true, false] {
            let mut p = Params::new();
            p.insert("x".into(), rand_t(&[2, 4, 4, 2], 71, -1.0, 1.0));
            p.insert("k".into(), rand_t(&[3, 3, 2, 3], 72, -0.7, 0.7));
            p.insert("b".into(), rand_t(&[3], 73, -0.3, 0.3));
            p.insert("gamma".into(), rand_t(&[3], 74, 0.6, 1.4));
            p.insert("beta".into(), rand_t(&[3], 75, -0.4, 0.4));
            let rm = rand_t(&[3], 76, -0.2, 0.2);
            let rv = rand_t(&[3], 77, 0.6, 1.4);
            check(p, move |tape, p| {
                let x = tape.param("x", &p["x"]);
                let k = tape.param("k", &p["k"]);
                let b = tape.param("b", &p["b"]);
                let gamma = tape.param("gamma", &p["gamma"]);
                let beta = tape.param("beta", &p["beta"]);
                let y = if train {
                    let (y, _, _) =
                        tape.conv_bn_relu_train(x, k, b, gamma, beta, 1, Padding::Same, 1e-5)?;
                    y
                } else {
                    tape.conv_bn_relu_infer(x, k, b, gamma, beta, &rm, &rv, 1, Padding::Same, 1e-5)?
                };
                sq_loss(tape, y)
            });
        }
    }

    #[test]
    fn fused_block_matches_unfused_composition() {
        let x = rand_t(&[2, 5, 5, 2], 81, -1.0, 1.0);
        let k = rand_t(&[3, 3, 2, 4], 82, -0.7, 0.7);
        let b = rand_t(&[4], 83, -0.3, 0.3);
        let gamma = rand_t(&[4], 84, 0.6, 1.4);
        let beta = rand_t(&[4], 85, -0.4, 0.4);

        let mut tape = GradientTape::<f64>::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let bv = tape.constant(b.clone());
        let gv = tape.constant(gamma.clone());
        let bev = tape.constant(beta.clone());
        let (fused, mean_f, var_f) =
            tape.conv_bn_relu_train(xv, kv, bv, gv, bev, 1, Padding::Same, 1e-5).unwrap();
        let conv = tape.conv2d(xv, kv, bv, 1, Padding::Same).unwrap();
        let (bn, mean_u, var_u) = tape.batch_norm_train(conv, gv, bev, 1e-5).unwrap();
        let relu = tape.relu(bn);
        assert!(tape.value(fused).max_abs_diff(tape.value(relu)) <= 1e-12);
        for (a, b) in mean_f.iter().zip(mean_u.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in var_f.iter().zip(var_u.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_norm_infer_gradients() {
        let mut p = Params::new();
        p.insert("x".into(), rand_t(&[2, 3, 3, 2], 17, -1.0, 1.0));
        p.insert("gamma".into(), rand_t(&[2], 18, 0.5, 1.5));
        p.insert("beta".into(), rand_t(&[2], 19, -0.5, 0.5));
        let rm = rand_t(&[2], 20, -0.2, 0.2);
        let rv = rand_t(&[2], 21, 0.5, 1.5);
        check(p, move |tape, p| {
            let x = tape.param("x", &p["x"]);
            let g = tape.param("gamma", &p["gamma"]);
            let b = tape.param("beta", &p["beta"]);
            let y = tape.batch_norm_infer(x, g, b, &rm, &rv, 1e-5)?;
            sq_loss(tape, y)
        });
    }

    #[test]
    fn gap_concat_relu_sigmoid_gradients() {
        let mut p = Params::new();
        // Keep values away from the ReLU kink so +-eps never crosses zero.
        let a = rand_t(&[2, 4, 4, 2], 23, 0.1, 1.0);
        let b = rand_t(&[2, 4, 4, 3], 24, -1.0, -0.1);
        p.insert("a".into(), a);
        p.insert("b".into(), b);
        check(p, |tape, p| {
            let a = tape.param("a", &p["a"]);
            let b = tape.param("b", &p["b"]);
            let cat = tape.concat_channels(a, b)?;
            let r = tape.relu(cat);
            let s = tape.sigmoid(r);
            let g = tape.global_average_pool(s)?;
            sq_loss(tape, g)
        });
    }

    #[test]
    fn dense_and_projection_gradients() {
        let mut p = Params::new();
        p.insert("x".into(), rand_t(&[3, 4], 31, -1.0, 1.0));
        p.insert("w0".into(), rand_t(&[4, 5], 32, -1.0, 1.0));
        p.insert("b0".into(), rand_t(&[5], 33, -0.5, 0.5));
        p.insert("w1".into(), rand_t(&[5, 2], 34, -1.0, 1.0));
        p.insert("b1".into(), rand_t(&[2], 35, -0.5, 0.5));
        check(p, |tape, p| {
            let x = tape.param("x", &p["x"]);
            let w0 = tape.param("w0", &p["w0"]);
            let b0 = tape.param("b0", &p["b0"]);
            let w1 = tape.param("w1", &p["w1"]);
            let b1 = tape.param("b1", &p["b1"]);
            let h = tape.dense(x, w0, b0)?;
            let h = tape.relu(h);
            let z = tape.dense(h, w1, b1)?;
            sq_loss(tape, z)
        });
    }

    #[test]
    fn ntxent_of_projection_wrt_inputs() {
        // Random 4x8 projection batch, gradient w.r.t. the inputs.
        let mut p = Params::new();
        p.insert("z".into(), rand_t(&[4, 8], 41, -1.0, 1.0));
        check(p, |tape, p| {
            let z = tape.param("z", &p["z"]);
            let n = tape.l2_normalize_rows(z)?;
            let s = tape.matmul_nt(n, n)?;
            tape.ntxent_from_sim(s, 0.5)
        });
    }

    #[test]
    fn attention_pool_composite_gradients() {
        let mut p = Params::new();
        p.insert("phi".into(), rand_t(&[2, 3, 3, 4], 51, -1.0, 1.0));
        p.insert("alogit".into(), rand_t(&[2, 3, 3, 1], 52, -1.0, 1.0));
        check(p, |tape, p| {
            let phi = tape.param("phi", &p["phi"]);
            let al = tape.param("alogit", &p["alogit"]);
            let a = tape.sigmoid(al);
            let h = crate::model::attention_pool_with_map(tape, phi, a)?;
            sq_loss(tape, h)
        });
    }

    #[test]
    fn mse_and_scalar_combination_gradients() {
        let mut p = Params::new();
        p.insert("pred".into(), rand_t(&[2, 3, 3, 1], 61, 0.0, 1.0));
        p.insert("z".into(), rand_t(&[4, 3], 62, -1.0, 1.0));
        let target = rand_t(&[2, 3, 3, 1], 63, 0.0, 1.0);
        check(p, move |tape, p| {
            let pred = tape.param("pred", &p["pred"]);
            let z = tape.param("z", &p["z"]);
            let lr = tape.mse(pred, &target)?;
            let n = tape.l2_normalize_rows(z)?;
            let s = tape.matmul_nt(n, n)?;
            let lc = tape.ntxent_from_sim(s, 0.5)?;
            let weighted = tape.scalar_scale(lr, 100.0);
            Ok(tape.scalar_add(lc, weighted))
        });
    }

    #[test]
    fn linear_function_is_exact() {
        // f(w) = sum(w * c): finite differences are exact for linear maps.
        let mut params = Params::new();
        params.insert("w".into(), Tensor::new(&[1, 3], vec![0.3, -0.7, 1.1]).unwrap());
        let c = Tensor::new(&[1, 3], vec![2.0, -1.0, 0.5]).unwrap();
        let report = grad_check(
            |tape, p| {
                let w = tape.param("w", &p["w"]);
                let cv = tape.constant(c.clone());
                let s = tape.matmul_nt(w, cv)?; // [1,1] = dot
                let loss = tape.mse(s, &Tensor::zeros(&[1, 1]))?;
                Ok(loss)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-9, "got {}", report.max_rel_err);
    }

    #[test]
    fn dead_relu_parameter_reports_zero_both_ways() {
        // The parameter feeds a ReLU that is always off; both the analytic and
        // the finite-difference gradient are zero, so the relative error is 0.
        let mut params = Params::new();
        params.insert("w".into(), Tensor::new(&[1, 1], vec![0.5]).unwrap());
        let report = grad_check(
            |tape, p| {
                let w = tape.param("w", &p["w"]);
                let x = tape.constant(Tensor::new(&[1, 1], vec![-3.0]).unwrap());
                let b = tape.constant(Tensor::zeros(&[1]));
                // dense output = -3 * w < 0 around w = 0.5; relu kills it
                let y = tape.dense(x, w, b)?;
                let y = tape.relu(y);
                let loss = tape.mse(y, &Tensor::zeros(&[1, 1]))?;
                Ok(loss)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.per_param["w"], 0.0);
    }
}
