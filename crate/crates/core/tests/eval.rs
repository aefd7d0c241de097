mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use vqflow::charts::{ChartAtlas, MembershipRule};
use vqflow::eval::{cv_bandwidth, default_bandwidth_grid, evaluate, KdeModel, DEFAULT_FOLDS};
use vqflow::flows::{FlowArchitecture, FlowKind, FlowStack, LatentPrior};
use vqflow::mixture::MixtureModel;
use vqflow::ndnet::Matrix;
use vqflow::Error;

fn randn(seed: u64, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let mut r = rng(seed);
    let v = (0..rows * cols).map(|_| scale * r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

fn identity_model(dim: usize) -> MixtureModel<f64> {
    let arch = FlowArchitecture { kind: FlowKind::Maf, layers: 1, hidden: vec![4], batch_norm: false };
    let mut flow = FlowStack::new(dim, 0, &arch, LatentPrior::StandardNormal, &mut rng(0)).unwrap();
    flow.set_identity();
    let atlas = ChartAtlas::from_centers(Matrix::zeros(1, dim), MembershipRule::default()).unwrap();
    MixtureModel::new(atlas, flow, None).unwrap()
}

#[test]
fn kernel_at_its_center() {
    let kde = KdeModel::new(&Matrix::<f64>::zeros(1, 3), 1.0).unwrap();
    let v = kde.log_prob(&Matrix::<f64>::zeros(1, 3)).unwrap()[0];
    assert!((v + 2.756_815_599_614_018).abs() < 1e-12);

    let kde = KdeModel::new(&col(&[-1.0, 1.0]), 1.0).unwrap();
    let v = kde.log_prob(&col(&[0.0])).unwrap()[0];
    assert!((v - ((-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
}

/// Direct summation with compensated accumulation.
fn naive_kde(reference: &Matrix<f64>, h: f64, x: &[f64]) -> f64 {
    let d = reference.cols() as f64;
    let norm = (2.0 * std::f64::consts::PI * h * h).powf(-d / 2.0);
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for r in reference.row_iter() {
        let sq: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let term = norm * (-sq / (2.0 * h * h)).exp();
        let y = term - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    (sum / reference.rows() as f64).ln()
}

#[test]
fn matches_direct_summation() {
    for seed in 0..5 {
        let reference = randn(seed, 300, 3, 1.0);
        let h = 0.3 + 0.2 * seed as f64;
        let kde = KdeModel::new(&reference, h).unwrap();
        let pts = randn(seed + 50, 40, 3, 1.2);
        let got = kde.log_prob(&pts).unwrap();
        for (i, p) in pts.row_iter().enumerate() {
            assert!((got[i] - naive_kde(&reference, h, p)).abs() < 1e-10);
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    assert!(matches!(KdeModel::new(&Matrix::<f64>::zeros(0, 2), 1.0), Err(Error::Precondition(_))));
    assert!(matches!(KdeModel::new(&Matrix::<f64>::zeros(2, 2), 0.0), Err(Error::InvalidConfig(_))));
    let kde = KdeModel::new(&Matrix::<f64>::zeros(2, 2), 1.0).unwrap();
    assert!(matches!(kde.log_prob(&Matrix::<f64>::zeros(1, 3)), Err(Error::Dimension(_))));
}

#[test]
fn bandwidth_near_silverman() {
    let data = randn(7, 2000, 1, 0.01);
    let grid = default_bandwidth_grid();
    let h = cv_bandwidth(&data, &grid, DEFAULT_FOLDS).unwrap();
    let v = data.as_slice();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    let silverman = (4.0f64 / 3.0).powf(0.2) * sd * (v.len() as f64).powf(-0.2);
    let step = (grid[1] / grid[0]).ln();
    assert!((h.ln() - silverman.ln()).abs() <= step, "cv {h} vs silverman {silverman}");
}

#[test]
fn single_grid_value_is_returned() {
    let data = randn(8, 50, 2, 1.0);
    assert_eq!(cv_bandwidth(&data, &[0.37], 5).unwrap(), 0.37);
    assert!(cv_bandwidth(&data, &[], 5).is_err());
}

#[test]
fn bandwidth_ignores_row_order() {
    let data = randn(9, 400, 3, 0.5);
    let grid = default_bandwidth_grid();
    let h = cv_bandwidth(&data, &grid, 5).unwrap();
    let mut idx: Vec<usize> = (0..400).collect();
    idx.shuffle(&mut rng(10));
    assert_eq!(cv_bandwidth(&data.select_rows(&idx), &grid, 5).unwrap(), h);
    let mut rev = grid.clone();
    rev.reverse();
    assert_eq!(cv_bandwidth(&data, &rev, 5).unwrap(), h);
}

#[test]
fn identical_points_are_degenerate() {
    let data = Matrix::filled(30, 2, 1.5f64);
    assert!(matches!(cv_bandwidth(&data, &default_bandwidth_grid(), 5), Err(Error::Precondition(_))));
}

#[test]
fn identity_model_scores_prior_entropy() {
    let model = identity_model(3);
    let test = randn(11, 20_000, 3, 1.0);
    let kde = KdeModel::new(&randn(12, 100, 3, 1.0), 0.5).unwrap();
    let (ll, failures, _) = evaluate(&model, &test, &kde, 10, 0).unwrap();
    let entropy = 1.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    assert!((ll + entropy).abs() < 0.05, "{ll} vs {}", -entropy);
    assert_eq!(failures, 0.0);
}

#[test]
fn samples_from_the_reference_distribution_score_like_test_data() {
    let train = randn(13, 3000, 2, 1.0);
    let test = randn(14, 2500, 2, 1.0);
    let h = cv_bandwidth(&train, &default_bandwidth_grid(), DEFAULT_FOLDS).unwrap();
    let kde = KdeModel::new(&train, h).unwrap();
    let self_score = kde.mean_log_prob(&test).unwrap();
    let (_, _, sample_score) = evaluate(&identity_model(2), &test, &kde, 2500, 3).unwrap();
    assert!((sample_score - self_score).abs() < 0.2, "{sample_score} vs {self_score}");
}

#[test]
fn empty_generated_set_is_an_error() {
    let kde = KdeModel::new(&randn(15, 10, 2, 1.0), 0.5).unwrap();
    assert!(matches!(evaluate(&identity_model(2), &randn(16, 5, 2, 1.0), &kde, 0, 0), Err(Error::Precondition(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reference_order_does_not_matter(seed in 0u64..10_000, h in 0.05f64..2.0) {
        let reference = randn(seed, 60, 2, 1.0);
        let mut idx: Vec<usize> = (0..60).collect();
        idx.shuffle(&mut rng(seed + 1));
        let a = KdeModel::new(&reference, h).unwrap();
        let b = KdeModel::new(&reference.select_rows(&idx), h).unwrap();
        let pts = randn(seed + 2, 10, 2, 1.5);
        for (x, y) in a.log_prob(&pts).unwrap().iter().zip(b.log_prob(&pts).unwrap()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn never_overflows(x in -1e6f64..1e6, y in -1e6f64..1e6, log_h in -13.8f64..0.0) {
        let reference = Matrix::from_rows(&[[0.0, 0.0], [1e6, -1e6], [-3.0, 2.0]]).unwrap();
        let kde = KdeModel::new(&reference, log_h.exp()).unwrap();
        let v = kde.log_prob(&Matrix::from_rows(&[[x, y]]).unwrap()).unwrap()[0];
        prop_assert!(v.is_finite());
    }
}
