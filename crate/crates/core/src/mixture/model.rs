use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::charts::{ChartAtlas, Membership};
use crate::conformal::{ConformalEmbedding, PreparedEmbedding};
use crate::error::{Error, Result};
use crate::flows::FlowStack;
use crate::ndnet::{Matrix, Mode};
use crate::rng::{stream, streams};
use crate::scalar::{lit, log_sum_exp, to_f64, Scalar};

const CHUNK: usize = 4096;

/// Which charts enter the mixture sum of `log_prob`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Only charts whose region contains the point.
    #[default]
    MemberCharts,
    /// Every chart, regardless of membership.
    AllCharts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Stochastic,
    Mean,
    Map,
}

/// Counts per-point flow evaluations. Cloning copies the current count.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicUsize);

impl EvalCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed)
    }

    fn add(&self, n: usize) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }
}

impl Clone for EvalCounter {
    fn clone(&self) -> Self {
        Self(AtomicUsize::new(self.get()))
    }
}

impl PartialEq for EvalCounter {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Density of a point under one chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartLogProb<T> {
    pub value: T,
    /// CEF mode only: the left-inverse residual exceeded `tau_proj`.
    pub off_manifold: bool,
}

/// `p(k|x)` over the member charts of a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<T> {
    pub ids: Vec<usize>,
    pub probs: Vec<T>,
    /// Every member density was zero; `probs` is uniform.
    pub degenerate: bool,
}

impl<T: Scalar> Posterior<T> {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        self.ids[best]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult<T> {
    pub mode: InferenceMode,
    pub z: Vec<T>,
    /// Chosen chart; `None` for the posterior-weighted mean.
    pub chart: Option<usize>,
    pub posterior: Posterior<T>,
    pub off_manifold: bool,
}

/// Samples with the chart and latent that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSamples<T> {
    pub x: Matrix<T>,
    pub z: Matrix<T>,
    pub charts: Vec<usize>,
}

/// Result of running chart `k` on one point.
#[derive(Clone, Debug)]
pub(crate) struct PairEval<T> {
    pub z: Vec<T>,
    pub log_prob: T,
    pub off_manifold: bool,
}

/// Borrowed pieces needed to evaluate densities, so training can score a flow
/// that is not (yet) owned by a model.
pub(crate) struct View<'a, T> {
    pub atlas: &'a ChartAtlas<T>,
    pub flow: &'a FlowStack<T>,
    pub embeddings: Option<&'a [PreparedEmbedding<T>]>,
    pub tau_proj: Option<T>,
    pub counter: Option<&'a EvalCounter>,
}

impl<T: Scalar> View<'_, T> {
    fn cond_for(&self, k: usize, n: usize) -> Option<Matrix<T>> {
        (self.flow.cond_dim() > 0).then(|| Matrix::broadcast_row(self.atlas.codebook().row(k), n))
    }

    /// Evaluates `(row, chart)` pairs, grouping rows by chart.
    pub fn eval_pairs(&self, x: &Matrix<T>, pairs: &[(usize, usize)]) -> Result<Vec<PairEval<T>>> {
        let k_total = self.atlas.num_charts();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k_total];
        for (i, &(_, k)) in pairs.iter().enumerate() {
            if k >= k_total {
                return Err(Error::ChartOutOfRange { chart: k, charts: k_total });
            }
            groups[k].push(i);
        }
        let mut out: Vec<Option<PairEval<T>>> = vec![None; pairs.len()];
        for (k, idx) in groups.iter().enumerate() {
            for chunk in idx.chunks(CHUNK) {
                let rows: Vec<usize> = chunk.iter().map(|&i| pairs[i].0).collect();
                let xb = x.select_rows(&rows);
                let evals = self.eval_chart(&xb, k)?;
                for (&i, e) in chunk.iter().zip(evals) {
                    out[i] = Some(e);
                }
            }
        }
        Ok(out.into_iter().map(|e| e.expect("every pair evaluated")).collect())
    }

    /// `f_k` and `log p(x|k)` (without the membership indicator) for a block of rows.
    pub fn eval_chart(&self, x: &Matrix<T>, k: usize) -> Result<Vec<PairEval<T>>> {
        let n = x.rows();
        if n == 0 {
            return Ok(Vec::new());
        }
        if let Some(c) = self.counter {
            c.add(n);
        }
        let cond = self.cond_for(k, n);
        let d = lit::<T>(self.flow.dim() as f64);
        let (u, corr, off) = match self.embeddings {
            None => (x.clone(), vec![T::zero(); n], vec![false; n]),
            Some(embs) => {
                let tau = self.tau_proj.unwrap_or_else(T::infinity);
                let (u, proj) = embs[k].left_inverse_batch(x, tau)?;
                let corr = proj.iter().map(|p| -d * p.log_lambda).collect();
                let off = proj.iter().map(|p| p.off_manifold).collect();
                (u, corr, off)
            }
        };
        let fwd = self.flow.forward(&u, cond.as_ref(), Mode::Eval)?;
        let prior = self.flow.prior();
        Ok((0..n)
            .map(|r| {
                let z = fwd.z.row(r).to_vec();
                let log_prob = if off[r] { T::neg_infinity() } else { prior.log_density(&z) + fwd.logdet[r] + corr[r] };
                PairEval { z, log_prob, off_manifold: off[r] }
            })
            .collect())
    }

    fn support_sets(&self, x: &Matrix<T>, support: SupportMode) -> Result<Vec<Vec<usize>>> {
        let p = self.atlas.priors();
        Ok(match support {
            SupportMode::AllCharts => {
                let all: Vec<usize> = (0..p.len()).filter(|&k| p[k] > T::zero()).collect();
                vec![all; x.rows()]
            }
            SupportMode::MemberCharts => self
                .atlas
                .memberships(x)?
                .into_iter()
                .map(|m| m.ids.into_iter().filter(|&k| p[k] > T::zero()).collect())
                .collect(),
        })
    }

    /// `log sum_{k in S(x)} p_k p(x|k)` for each row.
    pub fn log_prob(&self, x: &Matrix<T>, support: SupportMode) -> Result<Vec<T>> {
        let sets = self.support_sets(x, support)?;
        self.log_prob_over(x, &sets)
    }

    pub fn log_prob_over(&self, x: &Matrix<T>, sets: &[Vec<usize>]) -> Result<Vec<T>> {
        let pairs: Vec<(usize, usize)> =
            sets.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&k| (i, k))).collect();
        let evals = self.eval_pairs(x, &pairs)?;
        let p = self.atlas.priors();
        let mut terms: Vec<Vec<T>> = vec![Vec::new(); x.rows()];
        for (&(i, k), e) in pairs.iter().zip(&evals) {
            terms[i].push(p[k].ln() + e.log_prob);
        }
        Ok(terms.iter().map(|t| log_sum_exp(t)).collect())
    }

    /// Member-chart likelihood, falling back to all charts for points whose
    /// member charts carry no prior mass.
    pub fn validation_log_prob(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let mut sets = self.support_sets(x, SupportMode::MemberCharts)?;
        let p = self.atlas.priors();
        let all: Vec<usize> = (0..p.len()).filter(|&k| p[k] > T::zero()).collect();
        for s in sets.iter_mut().filter(|s| s.is_empty()) {
            *s = all.clone();
        }
        self.log_prob_over(x, &sets)
    }

    pub fn mean_nll(&self, x: &Matrix<T>, validation: bool) -> Result<f64> {
        if x.rows() == 0 {
            return Err(Error::Precondition("empty evaluation set".into()));
        }
        let lp = if validation { self.validation_log_prob(x)? } else { self.log_prob(x, SupportMode::MemberCharts)? };
        Ok(-lp.into_iter().map(to_f64).sum::<f64>() / x.rows() as f64)
    }
}

/// Atlas plus one conditional flow shared by all charts (conditioned on the
/// chart center), with optional per-chart conformal embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MixtureModel<T> {
    atlas: ChartAtlas<T>,
    flow: FlowStack<T>,
    embeddings: Option<Vec<ConformalEmbedding<T>>>,
    support: SupportMode,
    /// Left-inverse residual above which a point is off the manifold; `None` accepts all.
    tau_proj: Option<f64>,
    #[serde(skip)]
    flow_evals: EvalCounter,
}

impl<T: Scalar> MixtureModel<T> {
    /// A flow with `cond_dim == 0` ignores the chart center (used for the
    /// single-chart base models).
    pub fn new(atlas: ChartAtlas<T>, flow: FlowStack<T>, embeddings: Option<Vec<ConformalEmbedding<T>>>) -> Result<Self> {
        let model = Self {
            atlas,
            flow,
            embeddings,
            support: SupportMode::MemberCharts,
            tau_proj: None,
            flow_evals: EvalCounter::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let cd = self.flow.cond_dim();
        if cd != 0 && cd != self.atlas.code_dim() {
            return Err(Error::Dimension(format!(
                "flow conditions on {cd} values but codes have {}",
                self.atlas.code_dim()
            )));
        }
        if let Some(embs) = &self.embeddings {
            if embs.len() != self.atlas.num_charts() {
                return Err(Error::Dimension(format!("{} embeddings for {} charts", embs.len(), self.atlas.num_charts())));
            }
            let out = embs[0].out_dim();
            for e in embs {
                if e.in_dim() != self.flow.dim() || e.out_dim() != out {
                    return Err(Error::Dimension(format!(
                        "embedding {}->{} does not match a {}-dim flow",
                        e.in_dim(),
                        e.out_dim(),
                        self.flow.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn atlas(&self) -> &ChartAtlas<T> {
        &self.atlas
    }

    pub fn flow(&self) -> &FlowStack<T> {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut FlowStack<T> {
        &mut self.flow
    }

    pub fn embeddings(&self) -> Option<&[ConformalEmbedding<T>]> {
        self.embeddings.as_deref()
    }

    pub fn embeddings_mut(&mut self) -> Option<&mut [ConformalEmbedding<T>]> {
        self.embeddings.as_deref_mut()
    }

    pub(crate) fn parts_mut(&mut self) -> (&ChartAtlas<T>, &mut FlowStack<T>, Option<&mut Vec<ConformalEmbedding<T>>>) {
        (&self.atlas, &mut self.flow, self.embeddings.as_mut())
    }

    pub fn num_charts(&self) -> usize {
        self.atlas.num_charts()
    }

    /// Ambient dimension of the data.
    pub fn data_dim(&self) -> usize {
        match &self.embeddings {
            Some(e) => e[0].out_dim(),
            None => self.flow.dim(),
        }
    }

    pub fn support_mode(&self) -> SupportMode {
        self.support
    }

    pub fn set_support_mode(&mut self, mode: SupportMode) {
        self.support = mode;
    }

    pub fn tau_proj(&self) -> Option<f64> {
        self.tau_proj
    }

    pub fn set_tau_proj(&mut self, tau: Option<f64>) -> Result<()> {
        if let Some(t) = tau {
            if !(t >= 0.0) {
                return Err(Error::InvalidConfig(format!("tau_proj {t} must be non-negative")));
            }
        }
        self.tau_proj = tau;
        Ok(())
    }

    /// Number of per-point flow evaluations since the last reset.
    pub fn flow_evals(&self) -> &EvalCounter {
        &self.flow_evals
    }

    pub(crate) fn prepared(&self) -> Option<Vec<PreparedEmbedding<T>>> {
        self.embeddings.as_ref().map(|e| e.iter().map(|e| e.prepare()).collect())
    }

    fn check(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.data_dim() {
            return Err(Error::Dimension(format!("{} columns for {}-dim data", x.cols(), self.data_dim())));
        }
        Ok(())
    }

    fn with_view<R>(&self, f: impl FnOnce(&View<'_, T>) -> Result<R>) -> Result<R> {
        let prepared = self.prepared();
        let view = View {
            atlas: &self.atlas,
            flow: &self.flow,
            embeddings: prepared.as_deref(),
            tau_proj: self.tau_proj.map(lit),
            counter: Some(&self.flow_evals),
        };
        f(&view)
    }

    /// `log p(x|k)` for every row: `-inf` outside `U_k` in member mode or off the manifold.
    pub fn log_prob_given_chart(&self, x: &Matrix<T>, k: usize) -> Result<Vec<ChartLogProb<T>>> {
        self.check(x)?;
        if k >= self.num_charts() {
            return Err(Error::ChartOutOfRange { chart: k, charts: self.num_charts() });
        }
        let member = match self.support {
            SupportMode::AllCharts => vec![true; x.rows()],
            SupportMode::MemberCharts => self.atlas.memberships(x)?.iter().map(|m| m.ids.contains(&k)).collect(),
        };
        let evals = self.with_view(|v| v.eval_chart(x, k))?;
        Ok(evals
            .into_iter()
            .zip(member)
            .map(|(e, inside)| ChartLogProb {
                value: if inside { e.log_prob } else { T::neg_infinity() },
                off_manifold: e.off_manifold,
            })
            .collect())
    }

    /// `log p(x)` under the model's support mode.
    pub fn log_prob(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        self.log_prob_with(x, self.support)
    }

    pub fn log_prob_with(&self, x: &Matrix<T>, support: SupportMode) -> Result<Vec<T>> {
        self.check(x)?;
        self.with_view(|v| v.log_prob(x, support))
    }

    /// Single-flow evaluation for partition atlases: `log p_k(x) + log p(x|k(x))`.
    pub fn hard_log_prob(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        self.check(x)?;
        if !self.atlas.rule().is_hard() {
            return Err(Error::Precondition("hard_log_prob needs m = 1 and epsilon = 0".into()));
        }
        let charts = self.atlas.hard_charts(x)?;
        let pairs: Vec<(usize, usize)> = charts.iter().copied().enumerate().collect();
        let evals = self.with_view(|v| v.eval_pairs(x, &pairs))?;
        let p = self.atlas.priors();
        Ok(charts.iter().zip(evals).map(|(&k, e)| p[k].ln() + e.log_prob).collect())
    }

    fn posteriors_from(&self, members: &[Membership<T>], evals: &[Vec<PairEval<T>>]) -> Vec<Posterior<T>> {
        let p = self.atlas.priors();
        members
            .iter()
            .zip(evals)
            .map(|(m, ev)| {
                let w: Vec<T> = m.ids.iter().zip(ev).map(|(&k, e)| p[k].ln() + e.log_prob).collect();
                let lse = log_sum_exp(&w);
                let n = m.ids.len();
                if lse == T::neg_infinity() || !lse.is_finite() {
                    let u = T::one() / lit::<T>(n as f64);
                    return Posterior { ids: m.ids.clone(), probs: vec![u; n], degenerate: true };
                }
                Posterior { ids: m.ids.clone(), probs: w.iter().map(|&v| (v - lse).exp()).collect(), degenerate: false }
            })
            .collect()
    }

    /// Per-point member charts with `f_k(x)` and `log p(x|k)` for each.
    fn member_evals(&self, x: &Matrix<T>) -> Result<(Vec<Membership<T>>, Vec<Vec<PairEval<T>>>)> {
        self.check(x)?;
        let members = self.atlas.memberships(x)?;
        let pairs: Vec<(usize, usize)> =
            members.iter().enumerate().flat_map(|(i, m)| m.ids.iter().map(move |&k| (i, k))).collect();
        let mut evals = self.with_view(|v| v.eval_pairs(x, &pairs))?.into_iter();
        let grouped = members.iter().map(|m| evals.by_ref().take(m.ids.len()).collect()).collect();
        Ok((members, grouped))
    }

    /// `p(k|x)` over the member charts of each row.
    pub fn chart_posterior(&self, x: &Matrix<T>) -> Result<Vec<Posterior<T>>> {
        let (members, evals) = self.member_evals(x)?;
        Ok(self.posteriors_from(&members, &evals))
    }

    /// Draws `k ~ p_k` by inverse CDF and `z ~ q`, then maps `x = g_k(z)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<MixtureSamples<T>> {
        let mut chart_rng = stream(seed, streams::CHART_SAMPLE);
        let mut latent_rng = stream(seed, streams::LATENT);
        let cdf = cumulative(self.atlas.priors());
        let charts: Vec<usize> = (0..n).map(|_| inverse_cdf(&cdf, chart_rng.random::<f64>())).collect();
        let z = self.flow.prior().sample::<T, _>(&mut latent_rng, n, self.flow.dim())?;
        let mut x = Matrix::zeros(n, self.data_dim());
        let prepared = self.prepared();
        for k in 0..self.num_charts() {
            let rows: Vec<usize> = (0..n).filter(|&i| charts[i] == k).collect();
            if rows.is_empty() {
                continue;
            }
            let cond = (self.flow.cond_dim() > 0).then(|| Matrix::broadcast_row(self.atlas.codebook().row(k), rows.len()));
            let (u, _) = self.flow.inverse(&z.select_rows(&rows), cond.as_ref())?;
            let xk = match &prepared {
                Some(p) => p[k].embed_batch(&u)?.0,
                None => u,
            };
            for (j, &i) in rows.iter().enumerate() {
                x.row_mut(i).copy_from_slice(xk.row(j));
            }
        }
        Ok(MixtureSamples { x, z, charts })
    }

    /// Latent codes of each row; stochastic draws use the INFERENCE stream of `seed`.
    pub fn infer(&self, x: &Matrix<T>, mode: InferenceMode, seed: u64) -> Result<Vec<InferenceResult<T>>> {
        let (members, evals) = self.member_evals(x)?;
        let posts = self.posteriors_from(&members, &evals);
        let mut rng = stream(seed, streams::INFERENCE);
        let dim = self.flow.dim();
        let mut out = Vec::with_capacity(x.rows());
        for (post, ev) in posts.into_iter().zip(evals) {
            let off_manifold = ev.iter().any(|e| e.off_manifold);
            let (z, chart) = match mode {
                InferenceMode::Map => {
                    let k = post.argmax();
                    let i = post.ids.iter().position(|&c| c == k).expect("argmax is a member");
                    (ev[i].z.clone(), Some(k))
                }
                InferenceMode::Stochastic => {
                    let probs: Vec<f64> = post.probs.iter().map(|&p| to_f64(p)).collect();
                    let i = inverse_cdf(&cumulative(&probs), rng.random::<f64>());
                    (ev[i].z.clone(), Some(post.ids[i]))
                }
                InferenceMode::Mean => {
                    let mut z = vec![T::zero(); dim];
                    for (e, &w) in ev.iter().zip(&post.probs) {
                        z.iter_mut().zip(&e.z).for_each(|(a, &b)| *a += w * b);
                    }
                    (z, None)
                }
            };
            out.push(InferenceResult { mode, z, chart, posterior: post, off_manifold });
        }
        Ok(out)
    }
}

pub(crate) fn cumulative<T: Scalar>(p: &[T]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&v| {
            acc += to_f64(v);
            acc
        })
        .collect()
}

/// First index whose cumulative mass exceeds `u * total`; never lands on a zero-mass entry.
pub(crate) fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("nonempty distribution");
    let target = u * total;
    let mut prev = 0.0;
    let mut last_positive = 0;
    for (i, &c) in cdf.iter().enumerate() {
        if c > prev {
            if target < c {
                return i;
            }
            last_positive = i;
        }
        prev = c;
    }
    last_positive
}

/// Draws one index from unnormalised weights.
pub(crate) fn draw_index<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    inverse_cdf(&cumulative(weights), rng.random::<f64>())
}
