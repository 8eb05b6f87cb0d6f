//! The three training objectives and their gradients.

use super::EncoderModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-term values of one loss evaluation. `l1` and `l3` are batch means,
/// `l2` the mean over unordered pairs, `total` the weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub l1: T,
    pub l2: T,
    pub l3: T,
    pub total: T,
}

/// Negative log-likelihood of `action` under a unit-variance Gaussian
/// centred on the decoder output, without the constant.
pub fn loss_reconstruction<T: Scalar>(model: &EncoderModel<T>, z: &[T], action: T) -> T {
    let r = action - model.decode(z);
    T::lit(0.5) * r * r
}

/// `Σ_d ½(μ² + e^{lv} − lv − 1)`
pub fn loss_kl<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    let half = T::lit(0.5);
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - lv - T::one()))
        .sum()
}

/// Mean over unordered pairs of `s·ℓ² + d·max(0, ε − ℓ)²` where `d` is the
/// squared factor distance, `s = max(0, 1 − d)` and `ℓ` the latent distance.
pub fn loss_contrastive<T: Scalar>(z: &[Vec<T>], y: &[Vec<T>], epsilon: T) -> Result<T> {
    contrastive_with_grad(z, y, epsilon, None)
}

/// As [`loss_contrastive`]; when `dz` is given, adds `scale · ∂L2/∂z` to it.
pub(crate) fn contrastive_with_grad<T: Scalar>(
    z: &[Vec<T>],
    y: &[Vec<T>],
    epsilon: T,
    mut grad: Option<(&mut [Vec<T>], T)>,
) -> Result<T> {
    let n = z.len();
    if n < 2 {
        return Err(Error::InsufficientSupport(format!(
            "contrastive loss needs at least 2 latents, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::Shape {
            what: "contrastive factor batch",
            expected: n,
            actual: y.len(),
        });
    }
    let pairs = T::lit((n * (n - 1) / 2) as f64);
    let two = T::lit(2.0);
    let mut total = T::zero();
    let dim = z[0].len();
    let mut diff = vec![T::zero(); dim];
    for i in 0..n {
        let mut row = T::zero();
        for j in i + 1..n {
            let d: T = y[i].iter().zip(&y[j]).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let s = (T::one() - d).max(T::zero());
            let mut l2 = T::zero();
            for k in 0..dim {
                diff[k] = z[i][k] - z[j][k];
                l2 += diff[k] * diff[k];
            }
            let l = l2.sqrt();
            let hinge = (epsilon - l).max(T::zero());
            row += s * l2 + d * hinge * hinge;
            if let Some((dz, scale)) = grad.as_mut() {
                // ∂/∂z_i of s·ℓ² is 2s·diff; of d·hinge² is −2d·hinge·diff/ℓ
                let mut coef = two * s;
                if hinge > T::zero() && l > T::epsilon() {
                    coef -= two * d * hinge / l;
                }
                let c = *scale * coef / pairs;
                for k in 0..dim {
                    let g = c * diff[k];
                    dz[i][k] += g;
                    dz[j][k] -= g;
                }
            }
        }
        total += row;
    }
    Ok(total / pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{FeatureScaler, ParamLayout};

    fn pair(y: [f64; 2], z: [[f64; 2]; 2]) -> f64 {
        loss_contrastive(&[z[0].to_vec(), z[1].to_vec()], &[vec![y[0]], vec![y[1]]], 2.0).unwrap()
    }

    #[test]
    fn contrastive_hand_values() {
        assert_eq!(pair([0.0, 0.0], [[0.0, 0.0], [3.0, 4.0]]), 25.0);
        assert_eq!(pair([0.0, 1.0], [[0.0, 0.0], [3.0, 4.0]]), 0.0);
        assert_eq!(pair([0.0, 1.0], [[0.0, 0.0], [0.6, 0.8]]), 1.0);
    }

    #[test]
    fn contrastive_needs_two() {
        assert!(loss_contrastive(&[vec![0.0, 0.0]], &[vec![1.0]], 2.0).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(loss_kl::<f64>(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((loss_kl::<f64>(&[1.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-12);
        let v = loss_kl::<f64>(&[0.0, 0.0], &[2f64.ln(), 0.0]);
        assert!((v - 0.5 * (2.0 - 2f64.ln() - 1.0)).abs() < 1e-12);
        assert!((v - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn reconstruction_closed_forms() {
        let layout = ParamLayout {
            inputs: 6,
            hidden: 2,
            latent: 2,
        };
        let mut m = EncoderModel::<f64>::zeros(layout, 3, FeatureScaler::identity(6));
        let dw = layout.dec_w();
        m.params[dw].copy_from_slice(&[1.0, -1.0]);
        let z = [0.75, 0.25];
        assert_eq!(m.decode(&z), 0.5);
        assert_eq!(loss_reconstruction(&m, &z, 0.5), 0.0);
        assert_eq!(loss_reconstruction(&m, &z, 1.5), 0.5);
        assert_eq!(loss_reconstruction(&m, &z, -1.5), 2.0);
    }
}
