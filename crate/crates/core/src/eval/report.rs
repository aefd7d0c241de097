use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::kde::KdeModel;
use crate::error::{Error, Result};
use crate::mixture::{MixtureModel, SupportMode};
use crate::ndnet::Matrix;
use crate::scalar::{to_f64, Scalar};

pub const DEFAULT_SAMPLE_COUNT: usize = 2500;

/// Metrics of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub dataset: String,
    pub model: String,
    pub trial: usize,
    pub seed: u64,
    /// Mean test log-likelihood over points with finite density (nats).
    #[serde(with = "nonfinite")]
    pub test_ll: f64,
    /// Fraction of test points with zero model density.
    pub support_failure_rate: f64,
    /// Mean KDE log-likelihood of model samples (nats).
    #[serde(with = "nonfinite")]
    pub sample_ll: f64,
    pub seconds: f64,
}

/// JSON has no infinities: non-finite values are written as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Scores `model` on `test` (all-charts likelihood) and on `n_samples`
/// generated points under `kde`.
pub fn evaluate<T: Scalar>(
    model: &MixtureModel<T>,
    test: &Matrix<T>,
    kde: &KdeModel,
    n_samples: usize,
    sample_seed: u64,
) -> Result<(f64, f64, f64)> {
    if n_samples == 0 {
        return Err(Error::Precondition("cannot score an empty generated set".into()));
    }
    if test.rows() == 0 {
        return Err(Error::Precondition("empty test set".into()));
    }
    let lp = model.log_prob_with(test, SupportMode::AllCharts)?;
    let finite: Vec<f64> = lp.iter().map(|&v| to_f64(v)).filter(|v| v.is_finite()).collect();
    let failure = 1.0 - finite.len() as f64 / lp.len() as f64;
    let test_ll = if finite.is_empty() { f64::NEG_INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    let samples = model.sample(n_samples, sample_seed)?;
    let sample_ll = kde.mean_log_prob(&samples.x)?;
    Ok((test_ll, failure, sample_ll))
}

/// Like [`evaluate`], packaged with identifiers and timing.
pub fn evaluate_trial<T: Scalar>(
    model: &MixtureModel<T>,
    test: &Matrix<T>,
    kde: &KdeModel,
    n_samples: usize,
    ids: (&str, &str, usize, u64),
) -> Result<TrialMetrics> {
    let start = Instant::now();
    let (dataset, tag, trial, seed) = ids;
    let (test_ll, support_failure_rate, sample_ll) = evaluate(model, test, kde, n_samples, seed)?;
    Ok(TrialMetrics {
        dataset: dataset.into(),
        model: tag.into(),
        trial,
        seed,
        test_ll,
        support_failure_rate,
        sample_ll,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean and the half-width of its two-sided 95% Student-t interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// `None` with fewer than two values.
    pub half_width: Option<f64>,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("no values to summarise".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Ok(Self { mean, half_width: None });
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .inverse_cdf(0.975);
        Ok(Self { mean, half_width: Some(t * (var / n).sqrt()) })
    }

    fn fmt(&self) -> String {
        match self.half_width {
            Some(h) => format!("{:.2} ± {:.2}", self.mean, h),
            None => format!("{:.2}", self.mean),
        }
    }
}

/// Aggregate over the trials of one dataset x model pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub model: String,
    pub seeds: Vec<u64>,
    pub test_ll: MeanCi,
    pub sample_ll: MeanCi,
    pub support_failure_rate: f64,
    pub seconds: f64,
}

impl EvaluationReport {
    pub fn from_trials(trials: &[TrialMetrics]) -> Result<Self> {
        let first = trials.first().ok_or_else(|| Error::Precondition("no trials to aggregate".into()))?;
        if trials.iter().any(|t| t.dataset != first.dataset || t.model != first.model) {
            return Err(Error::Precondition("trials mix datasets or models".into()));
        }
        let n = trials.len() as f64;
        Ok(Self {
            dataset: first.dataset.clone(),
            model: first.model.clone(),
            seeds: trials.iter().map(|t| t.seed).collect(),
            test_ll: MeanCi::of(&trials.iter().map(|t| t.test_ll).collect::<Vec<_>>())?,
            sample_ll: MeanCi::of(&trials.iter().map(|t| t.sample_ll).collect::<Vec<_>>())?,
            support_failure_rate: trials.iter().map(|t| t.support_failure_rate).sum::<f64>() / n,
            seconds: trials.iter().map(|t| t.seconds).sum(),
        })
    }
}

/// Groups trials by `(dataset, model)` in first-seen order and aggregates each group.
pub fn aggregate(trials: &[TrialMetrics]) -> Result<Vec<EvaluationReport>> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for t in trials {
        let k = (t.dataset.clone(), t.model.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .map(|(d, m)| {
            let mut group: Vec<TrialMetrics> =
                trials.iter().filter(|t| &t.dataset == d && &t.model == m).cloned().collect();
            group.sort_by_key(|t| t.trial);
            EvaluationReport::from_trials(&group)
        })
        .collect()
}

pub const TRIAL_CSV_HEADER: &str = "dataset,model,trial,seed,test_ll,sample_ll,support_failure_rate,seconds";

/// One row per dataset x model x trial. Timing is left out when `with_timing`
/// is false so that reruns produce identical bytes.
pub fn trials_csv(trials: &[TrialMetrics], with_timing: bool) -> String {
    let mut s = String::from(TRIAL_CSV_HEADER);
    s.push('\n');
    for t in trials {
        let secs = if with_timing { format!("{:.3}", t.seconds) } else { String::new() };
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{}",
            t.dataset, t.model, t.trial, t.seed, t.test_ll, t.sample_ll, t.support_failure_rate, secs
        );
    }
    s
}

/// Long table (one row per dataset x model) followed by two wide tables with
/// models as rows and datasets as columns, for test and sample log-likelihood.
pub fn markdown_report(reports: &[EvaluationReport]) -> String {
    let mut s = String::new();
    s.push_str("| dataset | model | trials | test LL | sample LL | support failures |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} |",
            r.dataset,
            r.model,
            r.seeds.len(),
            r.test_ll.fmt(),
            r.sample_ll.fmt(),
            r.support_failure_rate
        );
    }
    let mut datasets: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    for (title, pick) in [("Test log-likelihood (nats)", 0), ("Sample log-likelihood under the KDE (nats)", 1)] {
        let _ = write!(s, "\n{title}\n\n| model |");
        for d in &datasets {
            let _ = write!(s, " {d} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(datasets.len()));
        s.push('\n');
        for m in &models {
            let _ = write!(s, "| {m} |");
            for d in &datasets {
                let cell = reports
                    .iter()
                    .find(|r| r.dataset == *d && r.model == *m)
                    .map(|r| if pick == 0 { r.test_ll.fmt() } else { r.sample_ll.fmt() })
                    .unwrap_or_else(|| "-".into());
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(model: &str, trial: usize, ll: f64) -> TrialMetrics {
        TrialMetrics {
            dataset: "helix".into(),
            model: model.into(),
            trial,
            seed: trial as u64,
            test_ll: ll,
            support_failure_rate: 0.0,
            sample_ll: ll - 1.0,
            seconds: 1.0,
        }
    }

    #[test]
    fn infinite_scores_survive_json() {
        let mut t = trial("maf", 0, f64::NEG_INFINITY);
        t.sample_ll = f64::NAN;
        let back: TrialMetrics = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back.test_ll, f64::NEG_INFINITY);
        assert!(back.sample_ll.is_nan());
        let t = trial("maf", 0, -1.25);
        assert_eq!(serde_json::from_str::<TrialMetrics>(&serde_json::to_string(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn student_t_interval() {
        let ci = MeanCi::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(ci.mean, 3.0);
        // t_{0.975,4} = 2.776445
        assert!((ci.half_width.unwrap() - 2.776_445 * (2.5f64 / 5.0).sqrt()).abs() < 1e-5);
        assert_eq!(MeanCi::of(&[2.0]).unwrap().half_width, None);
    }

    #[test]
    fn interval_shrinks_with_more_trials() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let w3 = MeanCi::of(&vals[..3]).unwrap().half_width.unwrap();
        let w20 = MeanCi::of(&vals).unwrap().half_width.unwrap();
        assert!(w20 < w3);
    }

    #[test]
    fn aggregate_groups_by_pair() {
        let t = vec![trial("realnvp", 0, 1.0), trial("vq-realnvp", 0, 2.0), trial("realnvp", 1, 3.0)];
        let r = aggregate(&t).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].seeds, vec![0, 1]);
        assert_eq!(r[0].test_ll.mean, 2.0);
        let md = markdown_report(&r);
        assert_eq!(md.lines().filter(|l| l.starts_with("| helix |")).count(), 2);
        assert!(md.contains("| vq-realnvp | 2.00 |"));
        let csv = trials_csv(&t, false);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with(TRIAL_CSV_HEADER));
    }
}
