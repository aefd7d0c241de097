//! Parametric 3-D toy manifolds with ambient Gaussian noise.
//!
//! Each dataset is a union of one to three parametric curves (Spherical is a
//! projected Gaussian mixture instead). Points are generated i.i.d.: a branch is
//! drawn uniformly, then `theta` uniformly on the dataset's interval, then
//! isotropic noise is added. The Disjoint-Circles first branch is the segment
//! `(-1 + sin t) * (1, 1, 1)`, which is what its defining equations describe.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnet::Matrix;
use crate::rng::{normal, stream, streams};

pub const DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    Spherical,
    Helix,
    Lissajous,
    TwistedEight,
    Knotted,
    InterlockedCircles,
    NonKnotted,
    BentLissajous,
    DisjointCircles,
    Star,
}

impl DatasetName {
    pub const ALL: [DatasetName; 10] = [
        DatasetName::Spherical,
        DatasetName::Helix,
        DatasetName::Lissajous,
        DatasetName::TwistedEight,
        DatasetName::Knotted,
        DatasetName::InterlockedCircles,
        DatasetName::NonKnotted,
        DatasetName::BentLissajous,
        DatasetName::DisjointCircles,
        DatasetName::Star,
    ];

    /// The six datasets of the main density-estimation benchmark.
    pub const MAIN: [DatasetName; 6] = [
        DatasetName::Spherical,
        DatasetName::Helix,
        DatasetName::Lissajous,
        DatasetName::TwistedEight,
        DatasetName::Knotted,
        DatasetName::InterlockedCircles,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Spherical => "spherical",
            DatasetName::Helix => "helix",
            DatasetName::Lissajous => "lissajous",
            DatasetName::TwistedEight => "twisted-eight",
            DatasetName::Knotted => "knotted",
            DatasetName::InterlockedCircles => "interlocked-circles",
            DatasetName::NonKnotted => "non-knotted",
            DatasetName::BentLissajous => "bent-lissajous",
            DatasetName::DisjointCircles => "disjoint-circles",
            DatasetName::Star => "star",
        }
    }

    /// Number of parametric branches (mixture components for Spherical).
    pub fn branches(self) -> usize {
        match self {
            DatasetName::Spherical | DatasetName::Star => 3,
            DatasetName::TwistedEight | DatasetName::InterlockedCircles | DatasetName::DisjointCircles => 2,
            _ => 1,
        }
    }

    /// Interval `theta` is drawn from.
    pub fn theta_range(self) -> (f64, f64) {
        match self {
            DatasetName::Helix => (0.0, 8.0 * PI),
            _ => (-PI, PI),
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        DatasetName::ALL
            .into_iter()
            .find(|d| d.as_str().replace('-', "") == key)
            .ok_or_else(|| Error::UnknownDataset(s.to_string()))
    }
}

/// Means of the three Gaussians projected onto the sphere.
pub const SPHERICAL_MEANS: [[f64; 3]; 3] = [[-0.15, -0.77, 0.94], [0.79, -0.75, -0.02], [0.04, 0.40, 1.31]];
pub const SPHERICAL_SIGMA: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub n_total: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// (train, val, test) sizes.
    pub split: (usize, usize, usize),
}

impl DatasetSpec {
    pub fn new(name: DatasetName, seed: u64) -> Self {
        Self { name, n_total: 10_000, noise_sigma: 0.01, seed, split: (5_000, 2_500, 2_500) }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if a + b + c != self.n_total {
            return Err(Error::InvalidConfig(format!(
                "split {a}+{b}+{c} does not add up to {}",
                self.n_total
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sigma {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Noiseless point of `name` on `branch` at parameter `theta`.
pub fn curve_point(name: DatasetName, theta: f64, branch: usize) -> Result<[f64; 3]> {
    if branch >= name.branches() {
        return Err(Error::BranchOutOfRange {
            dataset: name.to_string(),
            branch,
            branches: name.branches(),
        });
    }
    let (s, c) = theta.sin_cos();
    let p = match (name, branch) {
        (DatasetName::Spherical, _) => {
            return Err(Error::InvalidConfig("spherical data is not a parametric curve".into()))
        }
        (DatasetName::Helix, _) => [theta, c, s],
        (DatasetName::Lissajous, _) => [c, 0.0, (2.0 * theta).sin()],
        (DatasetName::TwistedEight, 0) | (DatasetName::InterlockedCircles, 0) => [s, c, 0.0],
        (DatasetName::TwistedEight, _) => [2.0 + s, 0.0, c],
        (DatasetName::InterlockedCircles, _) => [1.0 + s, 0.0, c],
        (DatasetName::Knotted, _) => [
            s + 2.0 * (2.0 * theta).sin(),
            c - 2.0 * (2.0 * theta).cos(),
            (3.0 * theta).sin(),
        ],
        (DatasetName::NonKnotted, _) => {
            let r = 1.0 + 0.5 * (3.0 * theta).cos();
            [r * (2.0 * theta).cos(), r * (2.0 * theta).sin(), 0.5 * s]
        }
        (DatasetName::BentLissajous, _) => [(2.0 * theta).sin(), c, (2.0 * theta).cos()],
        (DatasetName::DisjointCircles, 0) => [-1.0 + s, -1.0 + s, -1.0 + s],
        (DatasetName::DisjointCircles, _) => [2.0 + s, 1.0 + 2.0 * c, 1.0 + 2.0 * c],
        (DatasetName::Star, 0) => [s, 0.0, 0.0],
        (DatasetName::Star, 1) => [0.0, s, 0.0],
        (DatasetName::Star, _) => [0.0, 0.0, s],
    };
    Ok(p)
}

/// How one point was produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub branch: usize,
    /// `NaN` for Spherical.
    pub theta: f64,
    /// Point before ambient noise.
    pub clean: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Matrix<f64>,
    pub val: Matrix<f64>,
    pub test: Matrix<f64>,
    /// Generation records in train, val, test order.
    pub provenance: Vec<Provenance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

fn draw_point<R: Rng>(name: DatasetName, sigma: f64, rng: &mut R) -> (Provenance, [f64; 3]) {
    let branch = if name.branches() > 1 { rng.random_range(0..name.branches()) } else { 0 };
    if name == DatasetName::Spherical {
        let mu = SPHERICAL_MEANS[branch];
        let mut p = [0.0; 3];
        for (pi, m) in p.iter_mut().zip(mu) {
            *pi = m + SPHERICAL_SIGMA * normal::<f64, _>(rng);
        }
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        p.iter_mut().for_each(|v| *v /= norm);
        return (Provenance { branch, theta: f64::NAN, clean: p }, p);
    }
    let (lo, hi) = name.theta_range();
    let theta = rng.random_range(lo..hi);
    let clean = curve_point(name, theta, branch).expect("branch drawn in range");
    let mut p = clean;
    for v in p.iter_mut() {
        *v += sigma * normal::<f64, _>(rng);
    }
    (Provenance { branch, theta, clean }, p)
}

/// Generates the train/val/test splits; deterministic in `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, streams::DATA);
    let mut provenance = Vec::with_capacity(spec.n_total);
    let mut points = Vec::with_capacity(spec.n_total);
    for _ in 0..spec.n_total {
        let (prov, p) = draw_point(spec.name, spec.noise_sigma, &mut rng);
        provenance.push(prov);
        points.push(p);
    }
    let (a, b, _) = spec.split;
    Ok(Dataset {
        spec: spec.clone(),
        train: Matrix::from_rows(&points[..a])?,
        val: Matrix::from_rows(&points[a..a + b])?,
        test: Matrix::from_rows(&points[a + b..])?,
        provenance,
    })
}

/// Distance from `p` to the noiseless manifold of `name`, by dense parameter search
/// refined with a golden-section step. Spherical uses the unit sphere.
pub fn distance_to_manifold(name: DatasetName, p: &[f64]) -> f64 {
    if name == DatasetName::Spherical {
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        return (r - 1.0).abs();
    }
    let (lo, hi) = name.theta_range();
    let steps = 2048;
    let dist = |theta: f64, branch: usize| {
        let c = curve_point(name, theta, branch).unwrap();
        c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for branch in 0..name.branches() {
        let h = (hi - lo) / steps as f64;
        let mut arg = 0;
        let mut val = f64::INFINITY;
        for i in 0..=steps {
            let d = dist(lo + h * i as f64, branch);
            if d < val {
                val = d;
                arg = i;
            }
        }
        // golden-section refinement on the bracketing cell
        let (mut a, mut b) = (lo + h * (arg as f64 - 1.0), lo + h * (arg as f64 + 1.0));
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let c = b - gr * (b - a);
            let d = a + gr * (b - a);
            if dist(c, branch) < dist(d, branch) {
                b = d;
            } else {
                a = c;
            }
        }
        val = val.min(dist(0.5 * (a + b), branch));
        best = best.min(val);
    }
    best.sqrt()
}

/// Writes `x,y,z,split` rows with 17 significant digits.
pub fn write_csv<W: Write>(mut w: W, parts: &[(Split, &Matrix<f64>)]) -> Result<()> {
    writeln!(w, "x,y,z,split")?;
    for (split, m) in parts {
        for r in m.row_iter() {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{}", r[0], r[1], r[2], split.as_str())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_curve_points() {
        assert_eq!(curve_point(DatasetName::Helix, 0.0, 0).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(curve_point(DatasetName::Lissajous, 0.0, 0).unwrap(), [1.0, 0.0, 0.0]);
        let s = curve_point(DatasetName::Star, PI / 2.0, 2).unwrap();
        assert_eq!(s, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn branch_out_of_range() {
        assert!(matches!(
            curve_point(DatasetName::Helix, 0.0, 1),
            Err(Error::BranchOutOfRange { .. })
        ));
        assert!(curve_point(DatasetName::Star, 0.0, 3).is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("Twisted-Eight".parse::<DatasetName>().unwrap(), DatasetName::TwistedEight);
        assert_eq!("interlocked_circles".parse::<DatasetName>().unwrap(), DatasetName::InterlockedCircles);
        assert!(matches!("torus".parse::<DatasetName>(), Err(Error::UnknownDataset(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = DatasetSpec::new(DatasetName::Helix, 1);
        s.split = (1, 1, 1);
        assert!(generate(&s).is_err());
    }

    #[test]
    fn spherical_points_lie_on_sphere() {
        let mut s = DatasetSpec::new(DatasetName::Spherical, 3);
        s.n_total = 300;
        s.split = (100, 100, 100);
        let d = generate(&s).unwrap();
        for m in [&d.train, &d.val, &d.test] {
            for r in m.row_iter() {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn helix_noise_stays_within_five_sigma() {
        let mut s = DatasetSpec::new(DatasetName::Helix, 7);
        s.n_total = 100;
        s.split = (100, 0, 0);
        let d = generate(&s).unwrap();
        for (r, prov) in d.train.row_iter().zip(&d.provenance) {
            let c = curve_point(DatasetName::Helix, prov.theta, prov.branch).unwrap();
            let dist = r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(dist <= 5.0 * 0.01);
        }
    }

    #[test]
    fn manifold_distance_of_curve_point_is_zero() {
        for name in DatasetName::ALL.into_iter().filter(|d| *d != DatasetName::Spherical) {
            let p = curve_point(name, 0.3, name.branches() - 1).unwrap();
            assert!(distance_to_manifold(name, &p) < 1e-6, "{name}");
        }
        let off = [0.0, 1.5, 0.0];
        assert!((distance_to_manifold(DatasetName::Helix, &off) - 0.5).abs() < 1e-9);
    }
}
