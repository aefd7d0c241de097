//! Acceptance suite. Property criteria run first, then the experiment
//! criteria, whose checkpoints are cached under `VQFLOW_ACCEPTANCE_DIR`
//! (default: `<target tmpdir>/acceptance`) so reruns only re-score.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vqflow::charts::{kmeans, ChartAtlas, MembershipRule, VqAe, VqAeConfig};
use vqflow::conformal::linalg::{expm, skew};
use vqflow::conformal::{flatten, pad_point, ConformalEmbedding, Epsilon, MobiusParams, Stage};
use vqflow::datasets::{distance_to_manifold, DatasetName};
use vqflow::experiment::{
    ablation_summary, ablation_trial, dataset_kde, eval_trial, generate_dataset, load_dataset, load_trial_manifest,
    load_trial_model, train_trial, ExperimentConfig, Family, Layout, LoadedData, PartitionerKind, TrialStatus,
};
use vqflow::flows::{
    CouplingLayer, FlowArchitecture, FlowBatchNorm, FlowKind, FlowLayer, FlowStack, LatentPrior, MafLayer, TrainConfig,
};
use vqflow::mixture::{MixtureModel, MixtureTrainConfig, SupportMode};
use vqflow::ndnet::{Activation, AdamConfig, Matrix, Mlp, MlpSpec, Mode};
use vqflow::rng::normal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn randn(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * normal::<f64, _>(r)).collect()).unwrap()
}

fn perturb(stack: &mut FlowStack<f64>, r: &mut ChaCha8Rng, scale: f64) {
    for v in stack.params_mut().values_mut() {
        *v += scale * normal::<f64, _>(r);
    }
}

fn randomize_bn(stack: &mut FlowStack<f64>, r: &mut ChaCha8Rng) {
    for l in stack.layers_mut() {
        if let FlowLayer::FlowBatchnorm(bn) = l {
            let d = bn.dim();
            let mean = (0..d).map(|_| 0.3 * normal::<f64, _>(r)).collect();
            let var = (0..d).map(|_| 0.5 + r.random::<f64>()).collect();
            bn.set_running(mean, var).unwrap();
        }
    }
}

/// Stack with weights `noise` away from their initialisation and random
/// frozen batch-norm statistics.
fn random_stack(kind: FlowKind, dim: usize, cond_dim: usize, noise: f64, seed: u64) -> FlowStack<f64> {
    let mut r = rng(seed);
    let arch = FlowArchitecture { kind, layers: 3, hidden: vec![16, 16], batch_norm: true };
    let mut s = FlowStack::new(dim, cond_dim, &arch, LatentPrior::StandardNormal, &mut r).unwrap();
    perturb(&mut s, &mut r, noise);
    randomize_bn(&mut s, &mut r);
    s
}

/// One randomly parameterised layer wrapped in a stack; `which` picks the kind.
fn random_layer(which: usize, dim: usize, cond_dim: usize, seed: u64) -> FlowStack<f64> {
    let mut r = rng(seed);
    let layer = match which % 3 {
        0 => FlowLayer::Coupling(
            CouplingLayer::new(CouplingLayer::<f64>::alternating_mask(dim, seed as usize % 2), cond_dim, &[12]).unwrap(),
        ),
        1 => {
            let order = if seed % 2 == 0 { MafLayer::<f64>::natural_order(dim) } else { MafLayer::<f64>::reversed_order(dim) };
            FlowLayer::MaskedAutoregressive(MafLayer::new(order, cond_dim, &[12]).unwrap())
        }
        _ => FlowLayer::FlowBatchnorm(FlowBatchNorm::new(dim)),
    };
    let mut s = FlowStack::from_layers(vec![layer], LatentPrior::StandardNormal, &mut r).unwrap();
    perturb(&mut s, &mut r, 0.3);
    randomize_bn(&mut s, &mut r);
    s
}

// ---- criterion 5 ----

fn invertibility() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_ld: f64 = 0.0;
    let mut cases = 0;
    let mut check = |s: &FlowStack<f64>, seed: u64| {
        let mut r = rng(seed);
        let cond_dim = s.cond_dim();
        let x = randn(&mut r, 1000, s.dim(), 1.5);
        let cond = (cond_dim > 0).then(|| randn(&mut r, 1000, cond_dim, 1.0));
        let f = s.forward(&x, cond.as_ref(), Mode::Eval).unwrap();
        let (back, ld) = s.inverse(&f.z, cond.as_ref()).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
        worst_ld = worst_ld.max(f.logdet.iter().zip(&ld).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max));
        cases += 1;
    };
    for which in 0..3 {
        for (dim, cond_dim) in [(1, 0), (2, 2), (3, 0), (3, 3), (4, 1)] {
            if which == 0 && dim == 1 {
                continue;
            }
            let seed = 1000 + 10 * which as u64 + dim as u64 + cond_dim as u64;
            check(&random_layer(which, dim, cond_dim, seed), seed + 1);
        }
    }
    for kind in [FlowKind::RealNvp, FlowKind::Maf] {
        for cond_dim in [0, 2, 3] {
            let seed = 2000 + cond_dim as u64 + if kind == FlowKind::Maf { 50 } else { 0 };
            // heavier noise lets a stack squeeze a coordinate below f64 resolution
            check(&random_stack(kind, 3, cond_dim, 0.1, seed), seed + 1);
        }
    }
    outcome(
        worst <= 1e-8,
        format!("{cases} layers/stacks x 1000 points, max |x - g(f(x))| = {worst:.2e}, max |ld_f + ld_g| = {worst_ld:.2e}"),
    )
}

// ---- criterion 6 ----

fn det(m: &[Vec<f64>]) -> f64 {
    // Gaussian elimination with partial pivoting
    let n = m.len();
    let mut a = m.to_vec();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        d *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    d
}

fn fd_logdet(s: &FlowStack<f64>, x: &[f64], cond: Option<&Matrix<f64>>) -> f64 {
    let h = 1e-5;
    let d = x.len();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let zp = s.forward(&Matrix::from_vec(1, d, xp).unwrap(), cond, Mode::Eval).unwrap().z;
        let zm = s.forward(&Matrix::from_vec(1, d, xm).unwrap(), cond, Mode::Eval).unwrap().z;
        for i in 0..d {
            jac[i][j] = (zp[(0, i)] - zm[(0, i)]) / (2.0 * h);
        }
    }
    det(&jac).abs()
}

fn logdet_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for cfg in 0..50u64 {
        let dim = 2 + (cfg % 3) as usize;
        let cond_dim = (cfg / 3 % 3) as usize;
        let s = match cfg % 5 {
            0 => random_stack(FlowKind::RealNvp, dim, cond_dim, 0.2, 300 + cfg),
            1 => random_stack(FlowKind::Maf, dim, cond_dim, 0.2, 300 + cfg),
            k => random_layer(k as usize - 2, dim, cond_dim, 300 + cfg),
        };
        let mut r = rng(400 + cfg);
        let x = randn(&mut r, 1, dim, 1.0);
        let cond_dim = s.cond_dim();
        let cond = (cond_dim > 0).then(|| randn(&mut r, 1, cond_dim, 1.0));
        let ld = s.forward(&x, cond.as_ref(), Mode::Eval).unwrap().logdet[0];
        let fd = fd_logdet(&s, x.row(0), cond.as_ref());
        worst = worst.max((ld.exp() - fd).abs() / fd);
    }
    outcome(worst <= 1e-4, format!("50 configurations, worst relative |det J| error {worst:.2e}"))
}

// ---- criterion 7 ----

fn rvec(r: &mut ChaCha8Rng, d: usize, s: f64) -> Vec<f64> {
    (0..d).map(|_| s * (2.0 * r.random::<f64>() - 1.0)).collect()
}

fn random_mobius(r: &mut ChaCha8Rng, d: usize, eps: Epsilon) -> MobiusParams<f64> {
    let orth = expm(&skew(d, &rvec(r, d * (d - 1) / 2, 2.0)));
    let alpha = (0.5 + r.random::<f64>()) * if r.random::<bool>() { 1.0 } else { -1.0 };
    MobiusParams::new(orth, rvec(r, d, 1.0), rvec(r, d, 1.0), alpha, eps).unwrap()
}

fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Matrix<f64> {
    let h = 1e-6;
    let y0 = f(x);
    let mut j = Matrix::zeros(y0.len(), x.len());
    for c in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let (yp, ym) = (f(&xp), f(&xm));
        for r in 0..y0.len() {
            j[(r, c)] = (yp[r] - ym[r]) / (2.0 * h);
        }
    }
    j
}

fn conformality_error(j: &Matrix<f64>, lambda: f64) -> f64 {
    let jtj = j.transpose().matmul(j).unwrap();
    let l2 = lambda * lambda;
    jtj.max_abs_diff(&Matrix::identity(j.cols()).map(|v| v * l2)) / l2.max(1.0)
}

fn conformality() -> Outcome {
    let mut r = rng(7);
    let mut worst_mobius: f64 = 0.0;
    for t in 0..50 {
        let eps = if t % 2 == 0 { Epsilon::Zero } else { Epsilon::Two };
        let m = random_mobius(&mut r, 2 + t % 2, eps);
        let x = rvec(&mut r, m.dim(), 2.0);
        let j = fd_jacobian(|p| m.apply(p).unwrap(), &x);
        worst_mobius = worst_mobius.max(conformality_error(&j, m.conformal_factor(&x).unwrap()));
    }
    let mut worst_emb: f64 = 0.0;
    for _ in 0..50 {
        let mut e = ConformalEmbedding::<f64>::standard(2, 3).unwrap();
        let n = e.num_params();
        e.set_params(&rvec(&mut r, n, 0.3)).unwrap();
        let mut stages = vec![Stage::Mobius(random_mobius(&mut r, 2, Epsilon::Two))];
        stages.extend(e.stages().iter().cloned());
        let e = ConformalEmbedding::new(2, stages).unwrap();
        let u = rvec(&mut r, 2, 1.0);
        let (_, ll) = e.embed(&u).unwrap();
        let j = fd_jacobian(|p| e.embed(p).unwrap().0, &u);
        worst_emb = worst_emb.max(conformality_error(&j, ll.exp()));
    }
    let mut worst_flat: f64 = 0.0;
    for t in 0..50 {
        let m1 = random_mobius(&mut r, 2, if t % 2 == 0 { Epsilon::Zero } else { Epsilon::Two });
        let m2 = random_mobius(&mut r, 3, if t / 2 % 2 == 0 { Epsilon::Zero } else { Epsilon::Two });
        let m = flatten(&m1, 1, &m2).unwrap();
        for _ in 0..20 {
            let x = rvec(&mut r, 2, 2.0);
            let Ok(y1) = m1.apply(&x) else { continue };
            let Ok(staged) = m2.apply(&pad_point(&y1, 1)) else { continue };
            let direct = m.apply(&pad_point(&x, 1)).unwrap();
            for (a, b) in staged.iter().zip(&direct) {
                worst_flat = worst_flat.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    outcome(
        worst_mobius <= 1e-5 && worst_emb <= 1e-5 && worst_flat <= 1e-9,
        format!(
            "|JtJ - l^2 I|: Mobius {worst_mobius:.2e}, embeddings {worst_emb:.2e} (<= 1e-5); flatten {worst_flat:.2e} (<= 1e-9)"
        ),
    )
}

// ---- criterion 8 ----

fn random_model(seed: u64, k: usize, rule: MembershipRule) -> MixtureModel<f64> {
    let mut r = rng(seed);
    let mut a = ChartAtlas::from_centers(randn(&mut r, k, 3, 1.5), rule).unwrap();
    let w: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    a.set_priors(w.iter().map(|v| v / total).collect()).unwrap();
    let arch = FlowArchitecture { kind: FlowKind::RealNvp, layers: 3, hidden: vec![16], batch_norm: false };
    let mut flow = FlowStack::new(3, 3, &arch, LatentPrior::StandardNormal, &mut r).unwrap();
    perturb(&mut flow, &mut r, 0.05);
    MixtureModel::new(a, flow, None).unwrap()
}

fn mixture_numerics() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut worst_lse: f64 = 0.0;
    for seed in 0..20u64 {
        let rule = MembershipRule { m: 1 + (seed % 4) as usize, epsilon: 0.25 * (seed % 3) as f64 };
        let m = random_model(500 + seed, 4, rule);
        let pts = randn(&mut rng(600 + seed), 20, 3, 2.0);
        for post in m.chart_posterior(&pts).unwrap() {
            worst_sum = worst_sum.max((post.probs.iter().sum::<f64>() - 1.0).abs());
        }
        let lp = m.log_prob(&pts).unwrap();
        let per_chart: Vec<_> = (0..4).map(|k| m.log_prob_given_chart(&pts, k).unwrap()).collect();
        for (i, mem) in m.atlas().memberships(&pts).unwrap().iter().enumerate() {
            let terms: Vec<f64> = mem.ids.iter().map(|&k| m.atlas().priors()[k].ln() + per_chart[k][i].value).collect();
            let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let want = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            if want.is_finite() || lp[i].is_finite() {
                worst_lse = worst_lse.max((lp[i] - want).abs());
            }
        }
    }

    let p = [0.1, 0.25, 0.05, 0.6];
    let base = random_model(700, 4, MembershipRule::default());
    let mut a = base.atlas().clone();
    a.set_priors(p.to_vec()).unwrap();
    let m = MixtureModel::new(a, base.flow().clone(), None).unwrap();
    let n = 10_000;
    let s = m.sample(n, 3).unwrap();
    let mut worst_se: f64 = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        let freq = s.charts.iter().filter(|&&c| c == k).count() as f64 / n as f64;
        worst_se = worst_se.max((freq - pk).abs() / (pk * (1.0 - pk) / n as f64).sqrt());
    }

    let mut hard_eq = true;
    for seed in 0..10u64 {
        let m = random_model(800 + seed, 1 + seed as usize % 5, MembershipRule::default());
        let pts = randn(&mut rng(900 + seed), 50, 3, 2.0);
        hard_eq &= m.hard_log_prob(&pts).unwrap() == m.log_prob(&pts).unwrap();
    }
    outcome(
        worst_sum <= 1e-12 && worst_lse <= 1e-12 && worst_se <= 3.0 && hard_eq,
        format!(
            "posterior |sum - 1| {worst_sum:.1e}, mixture vs log-sum-exp {worst_lse:.1e}, chart frequencies within {worst_se:.2} SE, hard == soft: {hard_eq}"
        ),
    )
}

// ---- criterion 9 ----

fn normalization() -> Outcome {
    let trapezoid = |f: &[f64], h: f64| h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[f.len() - 1]));
    let grid: Vec<f64> = (0..=6000).map(|i| -15.0 + 30.0 * i as f64 / 6000.0).collect();
    let h = 30.0 / 6000.0;
    let x = col(&grid);

    // Hard partition with flows concentrated inside their own chart.
    let centers = Matrix::from_rows(&[vec![-2.0], vec![2.0]]).unwrap();
    let mut a = ChartAtlas::from_centers(centers, MembershipRule::default()).unwrap();
    a.set_priors(vec![0.3, 0.7]).unwrap();
    let m = MixtureModel::new(a, shift_by_cond_flow(0.3f64.ln()), None).unwrap();
    let member_1d = trapezoid(&m.log_prob(&x).unwrap().iter().map(|v| v.exp()).collect::<Vec<_>>(), h);

    // 1-D, three charts, trained-looking MAF, all-charts support.
    let mut r = rng(31);
    let centers = Matrix::from_rows(&[vec![-3.0], vec![0.5], vec![4.0]]).unwrap();
    let mut a = ChartAtlas::from_centers(centers, MembershipRule::default()).unwrap();
    a.set_priors(vec![0.2, 0.5, 0.3]).unwrap();
    let arch = FlowArchitecture { kind: FlowKind::Maf, layers: 2, hidden: vec![8], batch_norm: false };
    let mut flow = FlowStack::new(1, 1, &arch, LatentPrior::StandardNormal, &mut r).unwrap();
    perturb(&mut flow, &mut r, 0.1);
    let mut m = MixtureModel::new(a, flow, None).unwrap();
    m.set_support_mode(SupportMode::AllCharts);
    let all_1d = trapezoid(&m.log_prob(&x).unwrap().iter().map(|v| v.exp()).collect::<Vec<_>>(), h);

    // 2-D, four charts, conditioned RealNVP, all-charts support.
    let mut a = ChartAtlas::from_centers(randn(&mut r, 4, 2, 1.5), MembershipRule::default()).unwrap();
    a.set_priors(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let arch = FlowArchitecture { kind: FlowKind::RealNvp, layers: 3, hidden: vec![8], batch_norm: false };
    let mut flow = FlowStack::new(2, 2, &arch, LatentPrior::StandardNormal, &mut r).unwrap();
    perturb(&mut flow, &mut r, 0.1);
    let mut m = MixtureModel::new(a, flow, None).unwrap();
    m.set_support_mode(SupportMode::AllCharts);
    let n = 401;
    let (lo, hi) = (-12.0, 12.0);
    let h2 = (hi - lo) / (n - 1) as f64;
    let mut pts = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            pts.extend([lo + i as f64 * h2, lo + j as f64 * h2]);
        }
    }
    let lp = m.log_prob(&Matrix::from_vec(n * n, 2, pts).unwrap()).unwrap();
    let w = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    let mut all_2d = 0.0;
    for i in 0..n {
        for j in 0..n {
            all_2d += w(i) * w(j) * lp[i * n + j].exp();
        }
    }
    all_2d *= h2 * h2;

    let ok = [member_1d, all_1d, all_2d].iter().all(|v| (v - 1.0).abs() <= 0.02);
    outcome(ok, format!("mass: 1-D member-charts {member_1d:.4}, 1-D all-charts {all_1d:.4}, 2-D all-charts {all_2d:.4}"))
}

// ---- criterion 10 ----

fn mlp_gradient_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (k, act) in [Activation::Tanh, Activation::LeakyRelu { slope: 0.2 }].into_iter().enumerate() {
        for bn in [false, true] {
            for mode in [Mode::Train, Mode::Eval] {
                let spec = MlpSpec { in_dim: 3, out_dim: 2, hidden: vec![6, 5], activation: act, batch_norm: bn };
                let mut r = rng(10 + k as u64);
                let mut net = Mlp::<f64>::new(spec.clone()).unwrap();
                let mut params = net.init_params(&mut r);
                params.iter_mut().for_each(|p| *p += 0.1 * normal::<f64, _>(&mut r));
                if mode == Mode::Eval {
                    let x = randn(&mut r, 20, 3, 1.0);
                    let (_, tape) = net.forward(&params, &x, Mode::Train).unwrap();
                    net.update_running(&tape);
                }
                let x = randn(&mut r, 7, 3, 1.0);
                let w = randn(&mut r, 7, 2, 1.0);
                let loss = |p: &[f64]| -> f64 {
                    let (y, _) = net.forward(p, &x, mode).unwrap();
                    y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
                };
                let (_, tape) = net.forward(&params, &x, mode).unwrap();
                let mut grad = vec![0.0; params.len()];
                net.backward(&params, &tape, &w, &mut grad).unwrap();
                for i in 0..params.len() {
                    let mut pp = params.clone();
                    pp[i] += 1e-6;
                    let mut pm = params.clone();
                    pm[i] -= 1e-6;
                    worst = worst.max(grad_rel_err((loss(&pp) - loss(&pm)) / 2e-6, grad[i]));
                }
            }
        }
    }
    worst
}

fn flow_gradient_error() -> f64 {
    let mut worst: f64 = 0.0;
    for kind in [FlowKind::RealNvp, FlowKind::Maf] {
        for mode in [Mode::Train, Mode::Eval] {
            let s = random_stack(kind, 3, 2, 0.2, 51);
            let mut r = rng(52);
            let x = randn(&mut r, 16, 3, 1.0);
            let c = randn(&mut r, 16, 2, 1.0);
            let (_, grad, _) = s.nll_and_grad(&x, Some(&c), mode).unwrap();
            for i in 0..s.params().len() {
                let mut sp = s.clone();
                sp.params_mut().values_mut()[i] += 1e-6;
                let mut sm = s.clone();
                sm.params_mut().values_mut()[i] -= 1e-6;
                let fd = (sp.nll_and_grad(&x, Some(&c), mode).unwrap().0 - sm.nll_and_grad(&x, Some(&c), mode).unwrap().0)
                    / 2e-6;
                worst = worst.max(grad_rel_err(fd, grad[i]));
            }
        }
    }
    worst
}

fn embedding_gradient_error() -> f64 {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut e = ConformalEmbedding::<f64>::standard(2, 3).unwrap();
        let n = e.num_params();
        e.set_params(&rvec(&mut r, n, 0.3)).unwrap();
        let x = rvec(&mut r, 3, 1.5);
        let (_, grad) = e.prepare().reconstruction_grad(&x).unwrap().unwrap();
        let p0 = e.params();
        for k in 0..p0.len() {
            let eval = |d: f64| {
                let mut ee = e.clone();
                let mut p = p0.clone();
                p[k] += d;
                ee.set_params(&p).unwrap();
                ee.prepare().reconstruction_grad(&x).unwrap().unwrap().0
            };
            worst = worst.max(grad_rel_err((eval(1e-6) - eval(-1e-6)) / 2e-6, grad[k]));
        }
    }
    worst
}

fn vq_gradient_error() -> f64 {
    let mut r = rng(11);
    let data = randn(&mut r, 40, 3, 2.0);
    let mut worst: f64 = 0.0;
    for (bn, seed) in [(false, 1), (true, 2)] {
        let cfg = VqAeConfig { codebook_size: 3, hidden: vec![6, 5], batch_norm: bn, seed, ..Default::default() };
        let vq = VqAe::new(&data, &cfg).unwrap();
        worst = worst.max(vqae_gradient_error(&vq, &cfg, &data));
    }
    worst
}

fn gradients() -> Outcome {
    let errs =
        [("MLP", mlp_gradient_error()), ("flow NLL", flow_gradient_error()), ("embedding", embedding_gradient_error()), (
            "VQ-AE",
            vq_gradient_error(),
        )];
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    outcome(errs.iter().all(|(_, e)| *e <= 1e-4), format!("worst relative error: {detail}"))
}

// ---- criterion 11 ----

fn closed_form_recovery() -> Outcome {
    let (mu, sd) = (3.0, 0.7);
    let train = two_gaussians(3000, mu, sd, 1);
    let val = two_gaussians(600, mu, sd, 2);
    let test = two_gaussians(2000, mu, sd, 3);
    let km = kmeans(&train, 2, &mut rng(4)).unwrap();
    let mut a = ChartAtlas::from_centers(km.centers, MembershipRule::default()).unwrap();
    a.estimate_priors(&train).unwrap();
    let arch = FlowArchitecture { kind: FlowKind::Maf, layers: 2, hidden: vec![16], batch_norm: false };
    let flow = FlowStack::new(1, 1, &arch, LatentPrior::StandardNormal, &mut rng(5)).unwrap();
    let mut m = MixtureModel::new(a, flow, None).unwrap();
    let cfg = MixtureTrainConfig {
        flow: TrainConfig { epochs: 150, patience: 20, adam: AdamConfig { lr: 5e-3, ..AdamConfig::default() }, ..TrainConfig::default() },
        ..MixtureTrainConfig::default()
    };
    m.train(&train, &val, &cfg).unwrap();
    let hard = -m.log_prob(&test).unwrap().iter().sum::<f64>() / test.rows() as f64;
    m.set_support_mode(SupportMode::AllCharts);
    let nll = -m.log_prob(&test).unwrap().iter().sum::<f64>() / test.rows() as f64;
    let oracle = two_gaussian_nll(&test, mu, sd);
    outcome(
        (nll - oracle).abs() <= 0.1,
        format!("test NLL {nll:.4} (member-charts {hard:.4}) vs analytic {oracle:.4}, gap {:.4}", (nll - oracle).abs()),
    )
}

// ---- experiment criteria ----

struct Lab {
    layout: Layout,
    /// Core-seconds spent training and scoring, as recorded in the checkpoints.
    seconds: f64,
}

impl Lab {
    fn new() -> Self {
        let root = std::env::var_os("VQFLOW_ACCEPTANCE_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
        eprintln!("experiment outputs in {}", root.display());
        Lab { layout: Layout::new(root), seconds: 0.0 }
    }

    fn config(&self, d: DatasetName, family: Family, vq: bool) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.dataset.name = d;
        c.model.family = family;
        c.model.vq = vq;
        c.out_dir = self.layout.root().to_path_buf();
        c
    }

    fn data(&self, cfg: &ExperimentConfig) -> LoadedData {
        load_dataset(&self.layout, &cfg.dataset).unwrap_or_else(|_| {
            generate_dataset(&self.layout, &cfg.dataset).unwrap();
            load_dataset(&self.layout, &cfg.dataset).unwrap()
        })
    }

    /// Trains (or reuses) every trial; returns per-trial `(test_ll, sample_ll)`,
    /// skipping diverged trials.
    fn run(&mut self, cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
        let data = self.data(cfg);
        let kde = dataset_kde(&self.layout, &data).unwrap();
        let mut out = Vec::new();
        for t in 0..cfg.trials {
            let m = train_trial(&self.layout, cfg, &data, t).unwrap();
            self.seconds += m.seconds;
            if let TrialStatus::Diverged { detail } = &m.status {
                eprintln!("  {} {} trial {t}: diverged ({detail})", cfg.dataset.name, cfg.model.tag());
                continue;
            }
            let s = eval_trial(&self.layout, cfg, &data, &kde, t).unwrap().unwrap();
            self.seconds += s.seconds;
            eprintln!(
                "  {} {} trial {t}: test LL {:.3}, sample LL {:.3} ({:.0}s train)",
                cfg.dataset.name, s.model, s.test_ll, s.sample_ll, m.seconds
            );
            out.push((s.test_ll, s.sample_ll));
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn density_ordering(lab: &mut Lab) -> (Outcome, Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let start = lab.seconds;
    let mut wins = [0usize; 2];
    let mut joint = 0;
    let mut lines = Vec::new();
    let mut helix = (Vec::new(), Vec::new());
    for d in DatasetName::MAIN {
        let mut both = true;
        for (i, family) in [Family::RealNvp, Family::Maf].into_iter().enumerate() {
            let base = lab.run(&lab.config(d, family, false));
            let vq = lab.run(&lab.config(d, family, true));
            let gap = mean(&vq.iter().map(|r| r.0).collect::<Vec<_>>()) - mean(&base.iter().map(|r| r.0).collect::<Vec<_>>());
            let win = gap >= 0.2;
            wins[i] += win as usize;
            both &= win;
            lines.push(format!("{d}/{}: {gap:+.2}", family.as_str()));
            if d == DatasetName::Helix && family == Family::RealNvp {
                helix = (base, vq);
            }
        }
        joint += both as usize;
    }
    let budget = (lab.seconds - start) / 4.0;
    let pass = wins.iter().all(|&w| w >= 5) && budget <= 7200.0;
    let detail = format!(
        "VQ gain >= 0.2 nats on {}/6 (RealNVP), {}/6 (MAF), {joint}/6 both; suite {:.0} core-s = {:.0} s on 4 cores; gaps [{}]",
        wins[0],
        wins[1],
        lab.seconds - start,
        budget,
        lines.join(", ")
    );
    (outcome(pass, detail), helix.0, helix.1)
}

fn sample_gap(base: &[(f64, f64)], vq: &[(f64, f64)]) -> Outcome {
    let b = mean(&base.iter().map(|r| r.1).collect::<Vec<_>>());
    let v = mean(&vq.iter().map(|r| r.1).collect::<Vec<_>>());
    outcome(b <= v - 10.0, format!("Helix KDE sample LL: RealNVP {b:.2}, VQ-RealNVP {v:.2}, gap {:.2}", v - b))
}

fn cef_planarity(lab: &mut Lab) -> Outcome {
    let d = DatasetName::TwistedEight;
    let mut dist = [0.0; 2];
    for (i, vq) in [false, true].into_iter().enumerate() {
        let cfg = lab.config(d, Family::Cef, vq);
        lab.run(&cfg);
        let mut all = Vec::new();
        for t in 0..cfg.trials {
            let m = load_trial_manifest(&lab.layout, &cfg, t).unwrap();
            if m.diverged() {
                continue;
            }
            let model = load_trial_model(&lab.layout, &m).unwrap();
            let s = model.sample(2500, cfg.trial_seed(t)).unwrap();
            all.extend(s.x.row_iter().map(|p| distance_to_manifold(d, p)).filter(|v| v.is_finite()));
        }
        dist[i] = mean(&all);
    }
    let ratio = dist[0] / dist[1];
    outcome(
        ratio >= 5.0,
        format!("Twisted-Eight mean distance to curve: CEF {:.4}, VQ-CEF {:.4}, ratio {ratio:.2}", dist[0], dist[1]),
    )
}

fn ablation(lab: &mut Lab) -> Outcome {
    let mut cfg = lab.config(DatasetName::Helix, Family::RealNvp, true);
    cfg.ablation.ks = vec![8, 16, 32, 64];
    let data = lab.data(&cfg);
    let mut rows = Vec::new();
    for p in [PartitionerKind::Vqae, PartitionerKind::Kmeans] {
        for &k in &cfg.ablation.ks {
            for t in 0..cfg.ablation.trials {
                let start = Instant::now();
                let r = ablation_trial(&lab.layout, &cfg, &data, p, k, t).unwrap();
                eprintln!("  ablation {} K={k} trial {t}: val LL {:.3} ({:.0}s)", p.as_str(), r.val_ll, start.elapsed().as_secs_f64());
                rows.push(r);
            }
        }
    }
    let summary = ablation_summary(&rows);
    let get = |p: PartitionerKind, k: usize| summary.iter().find(|s| s.0 == p && s.1 == k).unwrap().2;
    let mut dominated = Vec::new();
    let mut cells = Vec::new();
    for &k in &cfg.ablation.ks {
        let (v, m) = (get(PartitionerKind::Vqae, k), get(PartitionerKind::Kmeans, k));
        cells.push(format!("K={k} {v:.2}/{m:.2}"));
        if !(v >= m) {
            dominated.push(k);
        }
    }
    let plateau = (get(PartitionerKind::Vqae, 64) - get(PartitionerKind::Vqae, 32)).abs();
    outcome(
        dominated.is_empty() && plateau <= 0.3,
        format!(
            "val LL vqae/kmeans [{}]; k-means ahead at K={dominated:?}; |LL(64) - LL(32)| = {plateau:.3}",
            cells.join(", ")
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    };
    report(5, "invertibility", invertibility());
    report(6, "log-det exactness", logdet_exactness());
    report(7, "conformality", conformality());
    report(8, "mixture numerics", mixture_numerics());
    report(9, "normalization", normalization());
    report(10, "gradient checks", gradients());
    report(11, "closed-form recovery", closed_form_recovery());

    let mut lab = Lab::new();
    let (c1, helix_base, helix_vq) = density_ordering(&mut lab);
    report(1, "density ordering", c1);
    report(2, "sample gap", sample_gap(&helix_base, &helix_vq));
    report(3, "CEF planarity", cef_planarity(&mut lab));
    report(4, "ablation shape", ablation(&mut lab));

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
