//! Feedforward networks with tape-based reverse-mode gradients.
//!
//! Parameters live outside the network in a flat block (`&[T]`) so that larger
//! models can place many networks inside one [`ParameterVector`](super::ParameterVector).
//! A hidden layer is `linear -> [batch norm] -> activation`; the output layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at every update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if v > T::zero() {
                    v
                } else {
                    v * lit(slope)
                }
            }
        }
    }

    /// Derivative given the input `v` and output `y`.
    fn derivative<T: Scalar>(self, v: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if v > T::zero() {
                    T::one()
                } else {
                    lit(slope)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig(format!("MLP dimensions must be >= 1: {self:?}")));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::InvalidConfig(format!("leaky slope {slope} outside (0,1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LinearLayout {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
    /// Offsets of batch-norm scale and shift.
    bn: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// A multilayer perceptron; parameters are supplied per call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layout: Vec<LinearLayout>,
    /// Optional fixed 0/1 connectivity mask per linear layer, shape `fan_in x fan_out`.
    masks: Vec<Option<Matrix<T>>>,
    running: Vec<Option<RunningStats<T>>>,
    n_params: usize,
}

struct BnTape<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

struct LayerTape<T> {
    /// Input to the activation (after batch norm when present).
    act_in: Matrix<T>,
    /// Activation output.
    out: Matrix<T>,
    bn: Option<BnTape<T>>,
}

/// Activation record of one forward call.
pub struct MlpTape<T> {
    input: Matrix<T>,
    hidden: Vec<LayerTape<T>>,
    mode: Mode,
    n_params: usize,
}

impl<T> MlpTape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut dims = vec![spec.in_dim];
        dims.extend(&spec.hidden);
        dims.push(spec.out_dim);
        let mut layout = Vec::new();
        let mut running = Vec::new();
        let mut cursor = 0;
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = cursor;
            cursor += fan_in * fan_out;
            let bias = cursor;
            cursor += fan_out;
            let is_hidden = l + 1 < dims.len() - 1;
            let bn = if is_hidden && spec.batch_norm {
                let g = cursor;
                cursor += fan_out;
                let b = cursor;
                cursor += fan_out;
                running.push(Some(RunningStats {
                    mean: vec![T::zero(); fan_out],
                    var: vec![T::one(); fan_out],
                }));
                Some((g, b))
            } else {
                if is_hidden {
                    running.push(None);
                }
                None
            };
            layout.push(LinearLayout { fan_in, fan_out, weight, bias, bn });
        }
        let masks = vec![None; layout.len()];
        Ok(Self { spec, layout, masks, running, n_params: cursor })
    }

    /// Installs fixed connectivity masks (one per linear layer, `fan_in x fan_out`).
    pub fn with_masks(mut self, masks: Vec<Matrix<T>>) -> Result<Self> {
        if masks.len() != self.layout.len() {
            return Err(Error::Dimension(format!(
                "{} masks for {} layers",
                masks.len(),
                self.layout.len()
            )));
        }
        for (m, l) in masks.iter().zip(&self.layout) {
            if m.shape() != (l.fan_in, l.fan_out) {
                return Err(Error::Dimension(format!(
                    "mask {:?} for a {}x{} layer",
                    m.shape(),
                    l.fan_in,
                    l.fan_out
                )));
            }
        }
        self.masks = masks.into_iter().map(Some).collect();
        Ok(self)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    pub fn num_linear_layers(&self) -> usize {
        self.layout.len()
    }

    /// Range of the weight matrix (`fan_in x fan_out`, row-major) of linear layer `l`.
    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let ll = &self.layout[l];
        ll.weight..ll.weight + ll.fan_in * ll.fan_out
    }

    pub fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let ll = &self.layout[l];
        ll.bias..ll.bias + ll.fan_out
    }

    pub fn running_stats(&self) -> &[Option<RunningStats<T>>] {
        &self.running
    }

    /// Glorot-uniform weights, zero biases, unit batch-norm scale, zero shift.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.n_params];
        for l in &self.layout {
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for v in &mut p[l.weight..l.weight + l.fan_in * l.fan_out] {
                *v = lit(rng.random_range(-bound..bound));
            }
            if let Some((g, _)) = l.bn {
                p[g..g + l.fan_out].iter_mut().for_each(|v| *v = T::one());
            }
        }
        p
    }

    fn effective_weight<'a>(&self, params: &'a [T], l: usize) -> std::borrow::Cow<'a, [T]> {
        let w = &params[self.weight_range(l)];
        match &self.masks[l] {
            None => std::borrow::Cow::Borrowed(w),
            Some(m) => std::borrow::Cow::Owned(
                w.iter().zip(m.as_slice()).map(|(&a, &b)| a * b).collect(),
            ),
        }
    }

    fn check(&self, params: &[T], x: &Matrix<T>) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Dimension(format!(
                "{} parameters for an MLP with {}",
                params.len(),
                self.n_params
            )));
        }
        if x.cols() != self.spec.in_dim {
            return Err(Error::Dimension(format!(
                "batch has {} columns, MLP expects {}",
                x.cols(),
                self.spec.in_dim
            )));
        }
        Ok(())
    }

    fn linear(&self, params: &[T], l: usize, x: &Matrix<T>) -> Matrix<T> {
        let ll = &self.layout[l];
        let n = x.rows();
        let bias = &params[self.bias_range(l)];
        let mut out = Matrix::broadcast_row(bias, n);
        if n > 0 {
            let w = self.effective_weight(params, l);
            T::gemm(
                n,
                ll.fan_in,
                ll.fan_out,
                T::one(),
                x.as_slice(),
                ll.fan_in,
                1,
                &w,
                ll.fan_out,
                1,
                T::one(),
                out.as_mut_slice(),
                ll.fan_out,
                1,
            );
        }
        out
    }

    /// Forward pass. Train mode normalises with batch statistics, eval mode with running ones.
    pub fn forward(&self, params: &[T], x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, MlpTape<T>)> {
        self.check(params, x)?;
        let n_hidden = self.layout.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut cur = x.clone();
        for l in 0..n_hidden {
            let ll = &self.layout[l];
            let mut z = self.linear(params, l, &cur);
            let bn = match ll.bn {
                None => None,
                Some((g_off, b_off)) => {
                    let width = ll.fan_out;
                    let n = z.rows();
                    let (mean, var) = match mode {
                        Mode::Train => batch_moments(&z),
                        Mode::Eval => {
                            let rs = self.running[l].as_ref().expect("running stats for bn layer");
                            (rs.mean.clone(), rs.var.clone())
                        }
                    };
                    let inv_std: Vec<T> =
                        var.iter().map(|&v| T::one() / (v + lit(BN_EPS)).sqrt()).collect();
                    let mut xhat = Matrix::zeros(n, width);
                    for i in 0..n {
                        let zr = z.row_mut(i);
                        let xr = xhat.row_mut(i);
                        for j in 0..width {
                            xr[j] = (zr[j] - mean[j]) * inv_std[j];
                            zr[j] = xr[j] * params[g_off + j] + params[b_off + j];
                        }
                    }
                    Some(BnTape { xhat, inv_std, batch_mean: mean, batch_var: var })
                }
            };
            let act = self.spec.activation;
            let out = z.map(|v| act.apply(v));
            cur = out.clone();
            hidden.push(LayerTape { act_in: z, out, bn });
        }
        let y = self.linear(params, n_hidden, &cur);
        let tape = MlpTape { input: x.clone(), hidden, mode, n_params: self.n_params };
        Ok((y, tape))
    }

    /// Eval-mode forward without keeping the tape.
    pub fn eval(&self, params: &[T], x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(params, x, Mode::Eval)?.0)
    }

    /// Reverse pass. Parameter gradients are accumulated into `param_grad`;
    /// the gradient with respect to the input batch is returned.
    pub fn backward(
        &self,
        params: &[T],
        tape: &MlpTape<T>,
        upstream: &Matrix<T>,
        param_grad: &mut [T],
    ) -> Result<Matrix<T>> {
        if tape.n_params != self.n_params
            || tape.hidden.len() + 1 != self.layout.len()
            || upstream.rows() != tape.input.rows()
            || upstream.cols() != self.spec.out_dim
            || param_grad.len() != self.n_params
        {
            return Err(Error::Precondition("tape does not match this network or gradient".into()));
        }
        let n = tape.input.rows();
        let mut g = upstream.clone();
        for l in (0..self.layout.len()).rev() {
            let ll = &self.layout[l];
            let input = if l == 0 { &tape.input } else { &tape.hidden[l - 1].out };
            // dW += input^T g (masked), db += colsum(g)
            if n > 0 {
                let mut dw = vec![T::zero(); ll.fan_in * ll.fan_out];
                T::gemm(
                    ll.fan_in,
                    n,
                    ll.fan_out,
                    T::one(),
                    input.as_slice(),
                    1,
                    ll.fan_in,
                    g.as_slice(),
                    ll.fan_out,
                    1,
                    T::zero(),
                    &mut dw,
                    ll.fan_out,
                    1,
                );
                let slot = &mut param_grad[self.weight_range(l)];
                match &self.masks[l] {
                    None => slot.iter_mut().zip(&dw).for_each(|(s, &d)| *s += d),
                    Some(m) => slot
                        .iter_mut()
                        .zip(dw.iter().zip(m.as_slice()))
                        .for_each(|(s, (&d, &mk))| *s += d * mk),
                }
            }
            let db = &mut param_grad[self.bias_range(l)];
            for r in g.row_iter() {
                db.iter_mut().zip(r).for_each(|(s, &v)| *s += v);
            }
            // dx = g W^T
            let mut gx = Matrix::zeros(n, ll.fan_in);
            if n > 0 {
                let w = self.effective_weight(params, l);
                T::gemm(
                    n,
                    ll.fan_out,
                    ll.fan_in,
                    T::one(),
                    g.as_slice(),
                    ll.fan_out,
                    1,
                    &w,
                    1,
                    ll.fan_out,
                    T::zero(),
                    gx.as_mut_slice(),
                    ll.fan_in,
                    1,
                );
            }
            g = gx;
            if l == 0 {
                break;
            }
            // back through activation and batch norm of hidden layer l-1
            let h = &tape.hidden[l - 1];
            let act = self.spec.activation;
            for (gv, (&a, &o)) in g
                .as_mut_slice()
                .iter_mut()
                .zip(h.act_in.as_slice().iter().zip(h.out.as_slice()))
            {
                *gv *= act.derivative(a, o);
            }
            let prev = &self.layout[l - 1];
            if let (Some((g_off, b_off)), Some(bn)) = (prev.bn, &h.bn) {
                g = bn_backward(&g, bn, &params[g_off..g_off + prev.fan_out], tape.mode, param_grad, g_off, b_off);
            }
        }
        Ok(g)
    }

    /// Folds the batch statistics of a train-mode tape into the running statistics.
    pub fn update_running(&mut self, tape: &MlpTape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        let m: T = lit(BN_MOMENTUM);
        for (rs, h) in self.running.iter_mut().zip(&tape.hidden) {
            if let (Some(rs), Some(bn)) = (rs.as_mut(), &h.bn) {
                for j in 0..rs.mean.len() {
                    rs.mean[j] = m * rs.mean[j] + (T::one() - m) * bn.batch_mean[j];
                    rs.var[j] = m * rs.var[j] + (T::one() - m) * bn.batch_var[j];
                }
            }
        }
    }

    pub fn set_running_stats(&mut self, stats: Vec<Option<RunningStats<T>>>) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(Error::Dimension("running statistics layout".into()));
        }
        self.running = stats;
        Ok(())
    }
}

/// Per-column mean and biased variance.
pub fn batch_moments<T: Scalar>(z: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    let n = z.rows();
    let mean = z.col_means();
    let mut var = vec![T::zero(); z.cols()];
    for r in z.row_iter() {
        for j in 0..r.len() {
            let d = r[j] - mean[j];
            var[j] += d * d;
        }
    }
    let nn = T::from_usize(n.max(1)).unwrap();
    var.iter_mut().for_each(|v| *v /= nn);
    (mean, var)
}

fn bn_backward<T: Scalar>(
    g_out: &Matrix<T>,
    bn: &BnTape<T>,
    gamma: &[T],
    mode: Mode,
    param_grad: &mut [T],
    g_off: usize,
    b_off: usize,
) -> Matrix<T> {
    let (n, w) = g_out.shape();
    let mut dxhat = Matrix::zeros(n, w);
    for i in 0..n {
        for j in 0..w {
            let g = g_out[(i, j)];
            param_grad[g_off + j] += g * bn.xhat[(i, j)];
            param_grad[b_off + j] += g;
            dxhat[(i, j)] = g * gamma[j];
        }
    }
    match mode {
        Mode::Eval => {
            for i in 0..n {
                for j in 0..w {
                    dxhat[(i, j)] *= bn.inv_std[j];
                }
            }
            dxhat
        }
        Mode::Train => {
            let nn = T::from_usize(n).unwrap();
            let mut sum = vec![T::zero(); w];
            let mut sum_x = vec![T::zero(); w];
            for i in 0..n {
                for j in 0..w {
                    sum[j] += dxhat[(i, j)];
                    sum_x[j] += dxhat[(i, j)] * bn.xhat[(i, j)];
                }
            }
            let mut dz = Matrix::zeros(n, w);
            for i in 0..n {
                for j in 0..w {
                    dz[(i, j)] = bn.inv_std[j] / nn
                        * (nn * dxhat[(i, j)] - sum[j] - bn.xhat[(i, j)] * sum_x[j]);
                }
            }
            dz
        }
    }
}
