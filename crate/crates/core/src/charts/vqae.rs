use std::ops::Range;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::kmeans::sq_dist;
use crate::error::{Error, Result};
use crate::ndnet::{Activation, Adam, AdamConfig, Matrix, Mlp, MlpSpec, MlpTape, Mode};
use crate::rng::{stream, streams};
use crate::scalar::{lit, to_f64, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqAeConfig {
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub batch_norm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the commitment term `|E(x) - sg(v)|²`.
    pub commitment: f64,
    /// Weight of the codebook term `|sg(E(x)) - v|²`.
    pub codebook_weight: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for VqAeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            codebook_size: 32,
            hidden: vec![128; 4],
            leaky_slope: 0.2,
            batch_norm: true,
            epochs: 50,
            batch_size: 128,
            commitment: 0.25,
            codebook_weight: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Vector-quantised autoencoder: encoder `E`, decoder `Dec` and codebook `{v_k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VqAe<T> {
    encoder: Mlp<T>,
    decoder: Mlp<T>,
    params: Vec<T>,
    enc_range: Range<usize>,
    dec_range: Range<usize>,
    code_range: Range<usize>,
    latent_dim: usize,
    codebook_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqReport {
    /// Mean reconstruction MSE per epoch (decoder fed the quantised code).
    pub recon_mse: Vec<f64>,
    pub initial_recon_mse: f64,
    /// `exp(entropy)` of the code usage on the training set.
    pub perplexity: f64,
    pub used_codes: usize,
    /// Fewer than two codes in use.
    pub collapsed: bool,
}

impl<T: Scalar> VqAe<T> {
    /// Builds the networks and initialises parameters; the codebook starts as
    /// the encodings of `codebook_size` distinct random rows of `data`.
    pub fn new(data: &Matrix<T>, cfg: &VqAeConfig) -> Result<Self> {
        if cfg.codebook_size == 0 || cfg.latent_dim == 0 {
            return Err(Error::InvalidConfig("codebook size and latent dim must be positive".into()));
        }
        if data.rows() < cfg.codebook_size {
            return Err(Error::Precondition(format!("{} rows for {} codes", data.rows(), cfg.codebook_size)));
        }
        let spec = |i, o| MlpSpec {
            in_dim: i,
            out_dim: o,
            hidden: cfg.hidden.clone(),
            activation: Activation::LeakyRelu { slope: cfg.leaky_slope },
            batch_norm: cfg.batch_norm,
        };
        let encoder = Mlp::new(spec(data.cols(), cfg.latent_dim))?;
        let decoder = Mlp::new(spec(cfg.latent_dim, data.cols()))?;
        let mut rng = stream(cfg.seed, streams::CODEBOOK);
        let mut params = encoder.init_params(&mut rng);
        let enc_range = 0..params.len();
        params.extend(decoder.init_params(&mut rng));
        let dec_range = enc_range.end..params.len();
        let picks = index::sample(&mut rng, data.rows(), cfg.codebook_size).into_vec();
        let (codes, _) = encoder.forward(&params[enc_range.clone()], &data.select_rows(&picks), Mode::Train)?;
        params.extend_from_slice(codes.as_slice());
        let code_range = dec_range.end..params.len();
        Ok(Self {
            encoder,
            decoder,
            params,
            enc_range,
            dec_range,
            code_range,
            latent_dim: cfg.latent_dim,
            codebook_size: cfg.codebook_size,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn codebook(&self) -> Matrix<T> {
        Matrix::from_vec(self.codebook_size, self.latent_dim, self.params[self.code_range.clone()].to_vec()).expect("codebook shape")
    }

    pub fn encoder(&self) -> &Mlp<T> {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp<T> {
        &self.decoder
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Encoder, decoder and codebook slices of [`params`](Self::params).
    pub fn param_ranges(&self) -> (Range<usize>, Range<usize>, Range<usize>) {
        (self.enc_range.clone(), self.dec_range.clone(), self.code_range.clone())
    }

    /// `E(x)` in eval mode.
    pub fn encode(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.encoder.eval(&self.params[self.enc_range.clone()], x)
    }

    pub fn decode(&self, v: &Matrix<T>) -> Result<Matrix<T>> {
        self.decoder.eval(&self.params[self.dec_range.clone()], v)
    }

    /// Nearest code index of each encoding; ties go to the lowest index.
    pub fn quantize(&self, z: &Matrix<T>) -> Vec<usize> {
        let codes = self.codebook();
        z.row_iter()
            .map(|e| {
                let mut best = (0, T::infinity());
                for (k, c) in codes.row_iter().enumerate() {
                    let d = sq_dist(e, c);
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                best.0
            })
            .collect()
    }

    /// Mean squared error of `Dec(v_{q(x)})` against `x` in eval mode.
    pub fn reconstruction_mse(&self, x: &Matrix<T>) -> Result<f64> {
        let z = self.encode(x)?;
        let q = self.codebook().select_rows(&self.quantize(&z));
        let xh = self.decode(&q)?;
        let se: f64 = xh.as_slice().iter().zip(x.as_slice()).map(|(&a, &b)| to_f64((a - b) * (a - b))).sum();
        Ok(se / x.as_slice().len().max(1) as f64)
    }

    /// Train-mode loss and straight-through gradient on a batch. The loss is
    /// `mse(x, Dec(v_q)) + β mse(E(x), sg(v_q)) + w mse(sg(E(x)), v_q)` with
    /// `q` the nearest code; the reconstruction gradient at `v_q` is copied to
    /// `E(x)` and does not reach the codebook. Returns `(loss, recon_mse, grad)`.
    pub fn loss_and_grad(&self, x: &Matrix<T>, cfg: &VqAeConfig) -> Result<(f64, f64, Vec<T>)> {
        let (l, r, g, _) = self.batch_grad(x, cfg)?;
        Ok((l, r, g))
    }

    #[allow(clippy::type_complexity)]
    fn batch_grad(&self, x: &Matrix<T>, cfg: &VqAeConfig) -> Result<(f64, f64, Vec<T>, (MlpTape<T>, MlpTape<T>))> {
        let (b, dl, dx) = (x.rows(), self.latent_dim, x.cols());
        let (ze, etape) = self.encoder.forward(&self.params[self.enc_range.clone()], x, Mode::Train)?;
        let codes = self.codebook();
        let q = self.quantize(&ze);
        let zq = codes.select_rows(&q);
        let (xh, dtape) = self.decoder.forward(&self.params[self.dec_range.clone()], &zq, Mode::Train)?;

        let mut grad = vec![T::zero(); self.params.len()];
        let rec_scale: T = lit(2.0 / (b * dx) as f64);
        let mut se = 0.0;
        let g_xh = {
            let data = xh
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(&a, &t)| {
                    se += to_f64((a - t) * (a - t));
                    rec_scale * (a - t)
                })
                .collect();
            Matrix::from_vec(b, dx, data)?
        };
        let mut g_ze =
            self.decoder.backward(&self.params[self.dec_range.clone()], &dtape, &g_xh, &mut grad[self.dec_range.clone()])?;
        let lat_scale: T = lit(2.0 / (b * dl) as f64);
        let beta: T = lit(cfg.commitment);
        let wcb: T = lit(cfg.codebook_weight);
        let mut lat = 0.0;
        for r in 0..b {
            for j in 0..dl {
                let diff = ze[(r, j)] - zq[(r, j)];
                lat += to_f64(diff * diff);
                g_ze[(r, j)] += beta * lat_scale * diff;
                grad[self.code_range.start + q[r] * dl + j] -= wcb * lat_scale * diff;
            }
        }
        self.encoder.backward(&self.params[self.enc_range.clone()], &etape, &g_ze, &mut grad[self.enc_range.clone()])?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("VQ-AE gradient".into()));
        }
        let recon = se / (b * dx) as f64;
        let lat = lat / (b * dl) as f64;
        Ok((recon + (cfg.commitment + cfg.codebook_weight) * lat, recon, grad, (etape, dtape)))
    }

    /// One straight-through step on a batch; returns the batch reconstruction MSE.
    fn step(&mut self, x: &Matrix<T>, cfg: &VqAeConfig, adam: &mut Adam<T>) -> Result<f64> {
        let (_, recon, grad, (etape, dtape)) = self.batch_grad(x, cfg)?;
        adam.step(&mut self.params, &grad)?;
        self.encoder.update_running(&etape);
        self.decoder.update_running(&dtape);
        Ok(recon)
    }

    /// Code usage perplexity and the number of used codes on `x`.
    pub fn usage(&self, x: &Matrix<T>) -> Result<(f64, usize)> {
        let q = self.quantize(&self.encode(x)?);
        let mut counts = vec![0usize; self.codebook_size];
        q.iter().for_each(|&k| counts[k] += 1);
        let n = q.len().max(1) as f64;
        let entropy: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum();
        Ok((entropy.exp(), counts.iter().filter(|&&c| c > 0).count()))
    }
}

/// Trains a VQ-AE on `data` (rows are points).
pub fn train_vqae<T: Scalar>(data: &Matrix<T>, cfg: &VqAeConfig) -> Result<(VqAe<T>, VqReport)> {
    let mut model = VqAe::new(data, cfg)?;
    let mut report = VqReport { initial_recon_mse: model.reconstruction_mse(data)?, ..Default::default() };
    let mut adam = Adam::new(model.params.len(), cfg.adam.clone());
    let mut rng = stream(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for rows in order.chunks(cfg.batch_size.max(1)) {
            if rows.len() < 2 && data.rows() > 1 {
                continue;
            }
            let mse = model.step(&data.select_rows(rows), cfg, &mut adam).map_err(|e| match e {
                Error::NonFinite(d) => Error::Divergence { epoch, detail: d },
                e => e,
            })?;
            sum += mse * rows.len() as f64;
            count += rows.len();
        }
        report.recon_mse.push(sum / count.max(1) as f64);
    }
    let (perplexity, used) = model.usage(data)?;
    report.perplexity = perplexity;
    report.used_codes = used;
    report.collapsed = used < 2;
    Ok((model, report))
}
