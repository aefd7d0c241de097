#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqflow::charts::{VqAe, VqAeConfig};
use vqflow::flows::{FlowLayer, FlowStack, LatentPrior, MafLayer};
use vqflow::ndnet::{Matrix, Mode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let t = (x - mu) / sd;
    (-0.5 * t * t).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn col(v: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
}

/// One-dimensional flow `z = (x - cond) * exp(-scale)` conditioned on a scalar.
pub fn shift_by_cond_flow(scale: f64) -> FlowStack<f64> {
    let layer = MafLayer::new(vec![1], 1, &[]).unwrap();
    let mut s = FlowStack::from_layers(vec![FlowLayer::MaskedAutoregressive(layer)], LatentPrior::StandardNormal, &mut rng(0))
        .unwrap();
    // weights are (x, cond) x (s, t) row-major, then biases (s, t)
    s.params_mut().values_mut().copy_from_slice(&[0.0, 0.0, 0.0, 1.0, scale, 0.0]);
    s
}

/// Two well separated 1-D Gaussians with equal weight.
pub fn two_gaussians(n: usize, mu: f64, sd: f64, seed: u64) -> Matrix<f64> {
    let mut r = rng(seed);
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
            sign * mu + sd * r.sample::<f64, _>(rand_distr::StandardNormal)
        })
        .collect();
    col(&v)
}

pub fn two_gaussian_nll(x: &Matrix<f64>, mu: f64, sd: f64) -> f64 {
    -x.as_slice().iter().map(|&v| (0.5 * normal_pdf(v, -mu, sd) + 0.5 * normal_pdf(v, mu, sd)).ln()).sum::<f64>()
        / x.rows() as f64
}

/// Asymptotic Kolmogorov-Smirnov p-value of a sample against a CDF.
pub fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    let mut q = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        q += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
    }
    q.clamp(0.0, 1.0)
}

/// `|fd - analytic|` relative to `|fd|`, floored at 1e-2 so near-zero
/// gradients are compared absolutely.
pub fn grad_rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(1e-2)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Worst [`grad_rel_err`] of the VQ-AE gradient on batch `x`. The oracle holds
/// the code assignment fixed and differentiates the straight-through surrogate
/// directly: the decoder sees `v_q + (E(x) - E_0(x))`, the codebook only feels
/// the codebook term.
pub fn vqae_gradient_error(vq: &VqAe<f64>, cfg: &VqAeConfig, x: &Matrix<f64>) -> f64 {
    let p = vq.params().to_vec();
    let (er, dr, cr) = vq.param_ranges();
    let (enc, dec) = (vq.encoder(), vq.decoder());
    let ze0 = enc.forward(&p[er.clone()], x, Mode::Train).unwrap().0;
    let q = vq.quantize(&ze0);
    let zq0 = vq.codebook().select_rows(&q);
    let (_, _, grad) = vq.loss_and_grad(x, cfg).unwrap();

    let loss = |pp: &[f64]| -> f64 {
        let ze = enc.forward(&pp[er.clone()], x, Mode::Train).unwrap().0;
        let shifted: Vec<f64> =
            zq0.as_slice().iter().zip(ze.as_slice()).zip(ze0.as_slice()).map(|((v, e), e0)| v + (e - e0)).collect();
        let shifted = Matrix::from_vec(zq0.rows(), zq0.cols(), shifted).unwrap();
        let xh = dec.forward(&pp[dr.clone()], &shifted, Mode::Train).unwrap().0;
        let codes = Matrix::from_vec(vq.codebook_size(), vq.latent_dim(), pp[cr.clone()].to_vec()).unwrap();
        let zq = codes.select_rows(&q);
        mse(xh.as_slice(), x.as_slice())
            + cfg.commitment * mse(ze.as_slice(), zq0.as_slice())
            + cfg.codebook_weight * mse(ze0.as_slice(), zq.as_slice())
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut pp = p.clone();
        pp[i] += h;
        let mut pm = p.clone();
        pm[i] -= h;
        let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
        worst = worst.max(grad_rel_err(fd, grad[i]));
    }
    worst
}
