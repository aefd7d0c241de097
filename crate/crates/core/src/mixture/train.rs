use serde::{Deserialize, Serialize};

use super::model::{draw_index, MixtureModel, View};
use crate::charts::ChartAtlas;
use crate::conformal::{pretrain_reconstruction, ConformalEmbedding, PreparedEmbedding, ReconConfig, ReconReport};
use crate::error::{Error, Result};
use crate::flows::{train_mle, Batch, BatchSource, TrainConfig, TrainReport};
use crate::ndnet::Matrix;
use crate::rng::{stream, streams, StreamRng};
use crate::scalar::Scalar;

/// One training point with its member charts, chart-draw weights and (in CEF
/// mode) the latent of the point under each member chart.
struct PointCharts<T> {
    ids: Vec<usize>,
    weights: Vec<T>,
    latents: Vec<Vec<T>>,
}

/// Batches for the stochastic-chart objective: every epoch each point draws one
/// member chart `k ~ p_k / sum_{j in S(x)} p_j` and is fed to the flow with the
/// conditioning `v_k`.
pub struct StochasticChartSource<T> {
    points: Vec<PointCharts<T>>,
    codebook: Matrix<T>,
    conditional: bool,
    rng: StreamRng,
    drawn: Vec<usize>,
}

impl<T: Scalar> StochasticChartSource<T> {
    pub fn new(
        atlas: &ChartAtlas<T>,
        embeddings: Option<&[ConformalEmbedding<T>]>,
        conditional: bool,
        x: &Matrix<T>,
        seed: u64,
    ) -> Result<Self> {
        let prepared: Option<Vec<PreparedEmbedding<T>>> = embeddings.map(|e| e.iter().map(|e| e.prepare()).collect());
        Self::from_prepared(atlas, prepared.as_deref(), conditional, x, seed)
    }

    fn from_prepared(
        atlas: &ChartAtlas<T>,
        prepared: Option<&[PreparedEmbedding<T>]>,
        conditional: bool,
        x: &Matrix<T>,
        seed: u64,
    ) -> Result<Self> {
        let p = atlas.priors();
        let members = atlas.memberships(x)?;
        let mut points = Vec::with_capacity(x.rows());
        for (r, m) in members.into_iter().enumerate() {
            let mut weights: Vec<T> = m.ids.iter().map(|&k| p[k]).collect();
            if !weights.iter().any(|&w| w > T::zero()) {
                weights.iter_mut().for_each(|w| *w = T::one());
            }
            let latents = match prepared {
                None => vec![x.row(r).to_vec(); m.ids.len()],
                Some(embs) => m
                    .ids
                    .iter()
                    .map(|&k| Ok(embs[k].left_inverse(x.row(r), T::infinity())?.u))
                    .collect::<Result<Vec<_>>>()?,
            };
            points.push(PointCharts { ids: m.ids, weights, latents });
        }
        let drawn = points.iter().map(|pc| pc.ids[0]).collect();
        Ok(Self { points, codebook: atlas.codebook().clone(), conditional, rng: stream(seed, streams::CHART_DRAW), drawn })
    }

    /// Chart currently assigned to each point.
    pub fn drawn(&self) -> &[usize] {
        &self.drawn
    }

    /// Draw weights `p~_x(k)` of point `i`, aligned with its member ids.
    pub fn draw_probs(&self, i: usize) -> (Vec<usize>, Vec<T>) {
        let pc = &self.points[i];
        let total: T = pc.weights.iter().copied().sum();
        (pc.ids.clone(), pc.weights.iter().map(|&w| w / total).collect())
    }
}

impl<T: Scalar> BatchSource<T> for StochasticChartSource<T> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn begin_epoch(&mut self, _epoch: usize) -> Result<()> {
        for (pc, d) in self.points.iter().zip(self.drawn.iter_mut()) {
            *d = if pc.ids.len() == 1 { pc.ids[0] } else { pc.ids[draw_index(&pc.weights, &mut self.rng)] };
        }
        Ok(())
    }

    fn batch(&self, rows: &[usize]) -> Result<Batch<T>> {
        let mut xs = Vec::with_capacity(rows.len());
        let mut cs = Vec::with_capacity(rows.len());
        for &r in rows {
            let pc = &self.points[r];
            let k = self.drawn[r];
            let i = pc.ids.iter().position(|&c| c == k).expect("drawn chart is a member");
            xs.push(pc.latents[i].as_slice());
            cs.push(self.codebook.row(k));
        }
        let x = Matrix::from_rows(&xs)?;
        let cond = if self.conditional { Some(Matrix::from_rows(&cs)?) } else { None };
        Ok(Batch { x, cond })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureTrainConfig {
    pub flow: TrainConfig,
    /// CEF mode only.
    pub recon: ReconConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureTrainReport {
    pub flow: TrainReport,
    /// Per-chart reconstruction pre-training; charts with too few points are skipped (`None`).
    pub recon: Vec<Option<ReconReport>>,
}

/// Fewest member points needed to fit a chart's embedding.
const MIN_EMBEDDING_POINTS: usize = 8;

impl<T: Scalar> MixtureModel<T> {
    /// Per-chart embeddings initialised from the member points of each chart
    /// (principal axes and mean); charts with too few points reuse the global fit.
    pub fn init_embeddings(atlas: &ChartAtlas<T>, latent_dim: usize, x: &Matrix<T>) -> Result<Vec<ConformalEmbedding<T>>> {
        let global = ConformalEmbedding::standard_for_data(latent_dim, x)?;
        let rows = member_rows(atlas, x)?;
        rows.iter()
            .map(|r| {
                if r.len() < MIN_EMBEDDING_POINTS {
                    Ok(global.clone())
                } else {
                    ConformalEmbedding::standard_for_data(latent_dim, &x.select_rows(r))
                }
            })
            .collect()
    }

    /// Fits each chart's embedding to its member points by reconstruction.
    pub fn pretrain_embeddings(&mut self, x: &Matrix<T>, cfg: &ReconConfig) -> Result<Vec<Option<ReconReport>>> {
        let (atlas, _, embs) = self.parts_mut();
        let Some(embs) = embs else {
            return Ok(Vec::new());
        };
        let rows = member_rows(atlas, x)?;
        let mut reports = Vec::with_capacity(embs.len());
        for (k, (emb, r)) in embs.iter_mut().zip(&rows).enumerate() {
            if r.len() < MIN_EMBEDDING_POINTS {
                reports.push(None);
                continue;
            }
            let c = ReconConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
            reports.push(Some(pretrain_reconstruction(emb, &x.select_rows(r), &c)?));
        }
        Ok(reports)
    }

    /// Stochastic-chart maximum likelihood. CEF models first pre-train their
    /// embeddings, which stay frozen during flow training. Early stopping uses
    /// the member-chart likelihood of `val`.
    pub fn train(&mut self, train: &Matrix<T>, val: &Matrix<T>, cfg: &MixtureTrainConfig) -> Result<MixtureTrainReport> {
        if train.cols() != self.data_dim() || val.cols() != self.data_dim() {
            return Err(Error::Dimension("training data does not match the model".into()));
        }
        let recon = if self.embeddings().is_some() && cfg.recon.epochs > 0 {
            self.pretrain_embeddings(train, &cfg.recon)?
        } else {
            Vec::new()
        };
        let prepared = self.prepared();
        let conditional = self.flow().cond_dim() > 0;
        let mut source =
            StochasticChartSource::from_prepared(self.atlas(), prepared.as_deref(), conditional, train, cfg.flow.seed)?;
        let (atlas, flow, _) = self.parts_mut();
        let flow_report = train_mle(
            flow,
            &mut source,
            |f| {
                let view = View { atlas, flow: f, embeddings: prepared.as_deref(), tau_proj: None, counter: None };
                view.mean_nll(val, true)
            },
            &cfg.flow,
        )?;
        Ok(MixtureTrainReport { flow: flow_report, recon })
    }

    /// Mean validation NLL as used for early stopping.
    pub fn validation_nll(&self, x: &Matrix<T>) -> Result<f64> {
        let prepared = self.prepared();
        let view = View {
            atlas: self.atlas(),
            flow: self.flow(),
            embeddings: prepared.as_deref(),
            tau_proj: None,
            counter: None,
        };
        view.mean_nll(x, true)
    }
}

fn member_rows<T: Scalar>(atlas: &ChartAtlas<T>, x: &Matrix<T>) -> Result<Vec<Vec<usize>>> {
    let mut rows = vec![Vec::new(); atlas.num_charts()];
    for (i, m) in atlas.memberships(x)?.into_iter().enumerate() {
        for k in m.ids {
            rows[k].push(i);
        }
    }
    Ok(rows)
}
