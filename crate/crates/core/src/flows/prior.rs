use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ndnet::Matrix;
use crate::rng::{normal, uniform};
use crate::scalar::{lit, Scalar};

/// Latent distribution `q(z)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPrior {
    #[default]
    StandardNormal,
    /// Uniform on the closed unit ball, density `1 / vol(B_1(0))`.
    UniformBall,
}

/// `ln vol(B_1(0))` in `dim` dimensions.
pub fn log_unit_ball_volume(dim: usize) -> f64 {
    let d = dim as f64;
    0.5 * d * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(0.5 * d + 1.0)
}

impl LatentPrior {
    pub fn log_density<T: Scalar>(self, z: &[T]) -> T {
        let d = z.len();
        let sq: T = z.iter().map(|&v| v * v).sum();
        match self {
            LatentPrior::StandardNormal => {
                let c: T = lit(-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln());
                c - lit::<T>(0.5) * sq
            }
            LatentPrior::UniformBall => {
                if sq <= T::one() {
                    lit(-log_unit_ball_volume(d))
                } else {
                    T::neg_infinity()
                }
            }
        }
    }

    /// Gradient of `log q` at `z`; zero inside the ball for the uniform prior.
    pub fn grad_log_density<T: Scalar>(self, z: &[T], out: &mut [T]) {
        match self {
            LatentPrior::StandardNormal => out.iter_mut().zip(z).for_each(|(o, &v)| *o = -v),
            LatentPrior::UniformBall => out.iter_mut().for_each(|o| *o = T::zero()),
        }
    }

    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, rng: &mut R, n: usize, dim: usize) -> Result<Matrix<T>> {
        let mut m = Matrix::zeros(n, dim);
        for r in 0..n {
            let row = m.row_mut(r);
            for v in row.iter_mut() {
                *v = normal(rng);
            }
            if self == LatentPrior::UniformBall {
                let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                let u: T = uniform(rng, 0.0, 1.0);
                let radius = u.powf(T::one() / lit(dim as f64));
                row.iter_mut().for_each(|v| *v = *v / norm * radius);
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_density_at_mode() {
        let v = LatentPrior::StandardNormal.log_density(&[0.0f64, 0.0]);
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn ball_volume_and_support() {
        assert!((log_unit_ball_volume(2) - std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((log_unit_ball_volume(3) - (4.0 / 3.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert_eq!(LatentPrior::UniformBall.log_density(&[0.8f64, 0.8]), f64::NEG_INFINITY);
        let mut rng = crate::rng::stream(1, 1);
        let s: Matrix<f64> = LatentPrior::UniformBall.sample(&mut rng, 200, 3).unwrap();
        assert!(s.row_iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() <= 1.0));
    }
}
