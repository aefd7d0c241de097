use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stack::FlowStack;
use crate::error::{Error, Result};
use crate::ndnet::{Adam, AdamConfig, Matrix, Mode};
use crate::rng::{stream, streams, StreamRng};
use crate::scalar::{to_f64, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 128, patience: 10, adam: AdamConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training NLL per epoch.
    pub train_nll: Vec<f64>,
    /// Validation NLL after each epoch (eval mode).
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_nll.len()
    }
}

pub struct Batch<T> {
    pub x: Matrix<T>,
    pub cond: Option<Matrix<T>>,
}

/// Supplies training batches. `begin_epoch` lets sources redraw per-epoch state
/// such as the conditioning chart of each point.
pub trait BatchSource<T> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn begin_epoch(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }

    fn batch(&self, rows: &[usize]) -> Result<Batch<T>>;
}

/// Plain data with an optional fixed conditioning matrix.
pub struct UnconditionalSource<'a, T> {
    pub x: &'a Matrix<T>,
    pub cond: Option<&'a Matrix<T>>,
}

impl<T: Scalar> BatchSource<T> for UnconditionalSource<'_, T> {
    fn len(&self) -> usize {
        self.x.rows()
    }

    fn batch(&self, rows: &[usize]) -> Result<Batch<T>> {
        Ok(Batch { x: self.x.select_rows(rows), cond: self.cond.map(|c| c.select_rows(rows)) })
    }
}

/// Mean NLL of `x` under the stack in eval mode, evaluated in chunks.
pub fn mean_nll<T: Scalar>(stack: &FlowStack<T>, x: &Matrix<T>, cond: Option<&Matrix<T>>) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::Precondition("empty evaluation set".into()));
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(4096) {
        let xb = x.select_rows(chunk);
        let cb = cond.map(|c| c.select_rows(chunk));
        total -= stack.log_prob(&xb, cb.as_ref())?.into_iter().map(to_f64).sum::<f64>();
    }
    Ok(total / x.rows() as f64)
}

/// Maximum-likelihood training with Adam and early stopping.
///
/// `val_nll` scores the current stack after every epoch; the stack is left at
/// the parameters (and batch-norm statistics) of the best-scoring epoch.
pub fn train_mle<T, S, V>(stack: &mut FlowStack<T>, source: &mut S, mut val_nll: V, cfg: &TrainConfig) -> Result<TrainReport>
where
    T: Scalar,
    S: BatchSource<T> + ?Sized,
    V: FnMut(&FlowStack<T>) -> Result<f64>,
{
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    let mut rng: StreamRng = stream(cfg.seed, streams::SHUFFLE);
    let mut adam = Adam::new(stack.params().len(), cfg.adam.clone());
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut report = TrainReport { best_val_nll: f64::INFINITY, ..Default::default() };
    let mut best = stack.clone();
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        source.begin_epoch(epoch)?;
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for rows in order.chunks(cfg.batch_size) {
            // Batch statistics of a single row are degenerate.
            if rows.len() < 2 && order.len() > 1 {
                continue;
            }
            let b = source.batch(rows)?;
            let (loss, grad, tapes) = stack.nll_and_grad(&b.x, b.cond.as_ref(), Mode::Train)?;
            let loss = to_f64(loss);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, detail: format!("non-finite loss {loss}") });
            }
            adam.step(stack.params_mut().values_mut(), &grad)?;
            stack.update_running(&tapes);
            sum += loss * rows.len() as f64;
            count += rows.len();
        }
        report.train_nll.push(sum / count.max(1) as f64);

        let v = val_nll(stack)?;
        if !v.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("non-finite validation NLL {v}") });
        }
        report.val_nll.push(v);
        if v < report.best_val_nll {
            report.best_val_nll = v;
            report.best_epoch = epoch;
            best = stack.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    *stack = best;
    Ok(report)
}
