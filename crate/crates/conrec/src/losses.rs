//! Contrastive (NT-Xent), reconstruction (pixel-wise MSE) and their weighted
//! combination.

use crate::error::{Error, Result};
use crate::numerics::{ops, GradientTape, Scalar, Tensor, Var};

#[derive(Clone, Debug)]
pub struct LossConfig {
    /// NT-Xent temperature.
    pub tau: f64,
    /// Reconstruction weight in the combined loss.
    pub alpha: f64,
    pub contrastive_enabled: bool,
    pub reconstruction_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { tau: 0.5, alpha: 100.0, contrastive_enabled: true, reconstruction_enabled: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !self.contrastive_enabled && !self.reconstruction_enabled {
            return Err(Error::Config("at least one loss term must be enabled".into()));
        }
        Ok(())
    }
}

/// u . v / (|u| |v|); rejects zero vectors.
pub fn cosine_sim<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine_sim length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = S::dot(u, u).sqrt();
    let nv = S::dot(v, v).sqrt();
    if !(nu > S::ZERO) || !(nv > S::ZERO) {
        return Err(Error::Numeric("cosine_sim on zero vector".into()));
    }
    Ok(S::dot(u, v) / (nu * nv))
}

/// NT-Xent over a batch Z [2N, d] whose rows (2k, 2k+1) are the positive pair
/// for source image k. Mean over all 2N ordered positive pairs.
pub fn nt_xent<S: Scalar>(z: &Tensor<S>, tau: S) -> Result<S> {
    if z.rank() != 2 {
        return Err(Error::Shape(format!("nt_xent expects [2N, d], got {:?}", z.shape())));
    }
    let (normed, _) = ops::l2_normalize_rows(z)?;
    let sim = ops::matmul_nt(&normed, &normed)?;
    ops::ntxent_from_sim(&sim, tau)
}

/// Same computation recorded on a tape for training.
pub fn nt_xent_on_tape<S: Scalar>(tape: &mut GradientTape<S>, z: Var, tau: S) -> Result<Var> {
    let normed = tape.l2_normalize_rows(z)?;
    let sim = tape.matmul_nt(normed, normed)?;
    tape.ntxent_from_sim(sim, tau)
}

/// Mean over all batch items and all pixels of (pred - target)^2.
pub fn reconstruction_mse<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<S> {
    ops::mse(pred, target)
}

/// Combined loss: enabled contrastive term plus alpha times the enabled
/// reconstruction term. Disabled terms contribute exactly zero.
pub fn conrec_loss<S: Scalar>(lc: S, lr: S, cfg: &LossConfig) -> S {
    let mut total = S::ZERO;
    if cfg.contrastive_enabled {
        total += lc;
    }
    if cfg.reconstruction_enabled {
        total += S::from_f64(cfg.alpha) * lr;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Naive double-loop evaluation of the loss definition: for every ordered
    /// positive pair (i, j), -log(exp(sim_ij / tau) / sum_{k != i} exp(sim_ik / tau)).
    fn nt_xent_oracle(z: &Tensor<f64>, tau: f64) -> f64 {
        let (n2, d) = (z.dim(0), z.dim(1));
        let row = |i: usize| &z.data()[i * d..(i + 1) * d];
        let mut total = 0.0;
        for i in 0..n2 {
            let j = if i % 2 == 0 { i + 1 } else { i - 1 };
            let num = (cosine_sim(row(i), row(j)).unwrap() / tau).exp();
            let mut den = 0.0;
            for k in 0..n2 {
                if k != i {
                    den += (cosine_sim(row(i), row(k)).unwrap() / tau).exp();
                }
            }
            total += -(num / den).ln();
        }
        total / n2 as f64
    }

    fn random_z(n_pairs: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed);
        Tensor::from_fn(&[2 * n_pairs, d], |_| rng.random_range(-1.0..1.0) + 0.01)
    }

    #[test]
    fn single_pair_loss_is_exactly_zero() {
        let z = Tensor::new(&[2, 3], vec![1.0, 0.2, -0.5, 0.4, 0.4, 0.9]).unwrap();
        assert_eq!(nt_xent(&z, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_two_pair_case() {
        // z1 = z2 = (1,0), z3 = z4 = (0,1), tau = 0.5:
        // every ordered-pair term is -log(e^2 / (e^2 + 2)) = log(1 + 2 e^-2)
        let z = Tensor::new(&[4, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let want = (1.0f64 + 2.0 * (-2.0f64).exp()).ln();
        let got = nt_xent(&z, 0.5).unwrap();
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        assert!((want - 0.2395).abs() < 5e-5);
    }

    #[test]
    fn matches_double_loop_oracle() {
        for case in 0..100u64 {
            let n_pairs = 1 + (case as usize % 8);
            let d = 2 + (case as usize % 5);
            let z = random_z(n_pairs, d, 1000 + case);
            let tau = [0.1, 0.5, 1.0][case as usize % 3];
            let got = nt_xent(&z, tau).unwrap();
            let want = nt_xent_oracle(&z, tau);
            assert!((got - want).abs() <= 1e-10, "case {case}: {got} vs {want}");
        }
    }

    #[test]
    fn nt_xent_rejects_zero_row() {
        let z = Tensor::new(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(nt_xent(&z, 0.5).is_err());
    }

    #[test]
    fn cosine_sim_basics() {
        let u = [1.0f64, 2.0, 3.0];
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() <= 1e-12);
        let a = [1.0f64, 0.0];
        let b = [0.0f64, 1.0];
        assert_eq!(cosine_sim(&a, &b).unwrap(), 0.0);
        let scaled: Vec<f64> = u.iter().map(|v| v * 3.7).collect();
        let v = [0.3f64, -0.2, 0.9];
        assert!((cosine_sim(&scaled, &v).unwrap() - cosine_sim(&u, &v).unwrap()).abs() <= 1e-12);
        assert!(cosine_sim(&[0.0f64, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn reconstruction_mse_examples() {
        let x = Tensor::new(&[1, 2, 2, 1], vec![0.1, 0.4, 0.7, 0.2]).unwrap();
        assert_eq!(reconstruction_mse(&x, &x).unwrap(), 0.0);
        let zeros = Tensor::<f64>::zeros(&[1, 2, 2, 1]);
        let ones = Tensor::full(&[1, 2, 2, 1], 1.0);
        assert!((reconstruction_mse(&zeros, &ones).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn combined_loss_cases() {
        let cfg = LossConfig { tau: 0.5, alpha: 100.0, contrastive_enabled: true, reconstruction_enabled: true };
        assert!((conrec_loss(0.5f64, 0.01, &cfg) - 1.5).abs() <= 1e-12);

        let cfg0 = LossConfig { alpha: 0.0, ..cfg.clone() };
        assert_eq!(conrec_loss(0.5f64, 0.01, &cfg0), 0.5);

        let recon_only =
            LossConfig { contrastive_enabled: false, reconstruction_enabled: true, ..cfg.clone() };
        assert!((conrec_loss(0.5f64, 0.01, &recon_only) - 1.0).abs() <= 1e-12);

        let bad = LossConfig { contrastive_enabled: false, reconstruction_enabled: false, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rotation_invariance() {
        // Apply the same Givens rotations to all rows; cosine similarities,
        // and therefore the loss, are unchanged.
        let mut rng = stream(77);
        let z = random_z(4, 5, 42);
        let base = nt_xent(&z, 0.5).unwrap();
        let mut rot = z.clone();
        for _ in 0..6 {
            let a = rng.random_range(0..5usize);
            let b = (a + 1 + rng.random_range(0..4usize)) % 5;
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            for r in 0..rot.dim(0) {
                let ia = r * 5 + a;
                let ib = r * 5 + b;
                let (va, vb) = (rot.data()[ia], rot.data()[ib]);
                rot.data_mut()[ia] = c * va - s * vb;
                rot.data_mut()[ib] = s * va + c * vb;
            }
        }
        let rotated = nt_xent(&rot, 0.5).unwrap();
        assert!((base - rotated).abs() <= 1e-9, "{base} vs {rotated}");
    }

    proptest! {
        #[test]
        fn scale_invariance(scale in 0.1f64..10.0, seed in 0u64..50) {
            let z = random_z(3, 4, seed);
            let scaled = z.map(|v| v * scale);
            let a = nt_xent(&z, 0.5).unwrap();
            let b = nt_xent(&scaled, 0.5).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn pair_swap_symmetry(seed in 0u64..50) {
            let z = random_z(3, 4, seed);
            let mut swapped = z.clone();
            for k in 0..3 {
                for c in 0..4 {
                    swapped.data_mut().swap((2 * k) * 4 + c, (2 * k + 1) * 4 + c);
                }
            }
            let a = nt_xent(&z, 0.5).unwrap();
            let b = nt_xent(&swapped, 0.5).unwrap();
            prop_assert!((a - b).abs() <= 1e-10);
        }

        #[test]
        fn loss_is_non_negative(seed in 0u64..100) {
            let z = random_z(2 + (seed as usize % 4), 3, seed);
            let v = nt_xent(&z, 0.5).unwrap();
            prop_assert!(v >= 0.0);
        }
    }
}
