use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{self, digest, write_atomic};
use super::config::{AtlasConfig, ExperimentConfig, Family, ModelConfig, PartitionerKind, TrainingConfig};
use super::plot::read_points;
use crate::charts::{kmeans, train_vqae, ChartAtlas, MembershipRule};
use crate::conformal::ConformalEmbedding;
use crate::datasets::{generate, write_csv, DatasetName, DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, cv_bandwidth, default_bandwidth_grid, evaluate_trial, markdown_report, trials_csv, KdeModel,
    TrialMetrics, DEFAULT_FOLDS,
};
use crate::flows::{FlowStack, LatentPrior, TrainReport};
use crate::mixture::{MixtureModel, MixtureTrainReport, SupportMode};
use crate::ndnet::Matrix;
use crate::rng::{stream, streams};

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Order of model tags in reports.
const MODEL_ORDER: [&str; 6] = ["realnvp", "vq-realnvp", "maf", "vq-maf", "cef", "vq-cef"];

/// File layout under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self, d: DatasetName) -> PathBuf {
        self.root.join(d.as_str()).join("data")
    }

    pub fn split_csv(&self, d: DatasetName, s: Split) -> PathBuf {
        self.data_dir(d).join(format!("{}.csv", s.as_str()))
    }

    /// Relative to the root so manifests survive moving the output directory.
    fn atlas_rel(&self, d: DatasetName, atlas: &AtlasConfig, trial: usize) -> PathBuf {
        Path::new(d.as_str()).join("atlas").join(atlas.key()).join(format!("trial{trial}.json"))
    }

    pub fn trial_dir(&self, d: DatasetName, tag: &str, trial: usize) -> PathBuf {
        self.root.join(self.trial_rel(d, tag, trial))
    }

    fn trial_rel(&self, d: DatasetName, tag: &str, trial: usize) -> PathBuf {
        Path::new(d.as_str()).join(tag).join(format!("trial{trial}"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn ablation_csv(&self, d: DatasetName) -> PathBuf {
        self.root.join(d.as_str()).join("ablation.csv")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub digest: String,
    pub rows: (usize, usize, usize),
}

pub struct LoadedData {
    pub manifest: DatasetManifest,
    pub train: Matrix<f64>,
    pub val: Matrix<f64>,
    pub test: Matrix<f64>,
}

/// Writes the train/val/test CSVs and a manifest. Deterministic in the spec.
pub fn generate_dataset(layout: &Layout, spec: &DatasetSpec) -> Result<DatasetManifest> {
    let ds = generate(spec)?;
    let mut all = Vec::new();
    for (s, m) in [(Split::Train, &ds.train), (Split::Val, &ds.val), (Split::Test, &ds.test)] {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[(s, m)])?;
        write_atomic(&layout.split_csv(spec.name, s), &buf)?;
        all.extend_from_slice(&buf);
    }
    let manifest =
        DatasetManifest { spec: spec.clone(), digest: digest(&all), rows: (ds.train.rows(), ds.val.rows(), ds.test.rows()) };
    checkpoint::save(&layout.data_dir(spec.name).join("manifest.json"), "dataset", &manifest)?;
    Ok(manifest)
}

fn read_split(path: &Path) -> Result<Matrix<f64>> {
    if !path.exists() {
        return Err(Error::MissingDataset(path.to_path_buf()));
    }
    let table = read_points(&fs::read_to_string(path)?)?;
    if table.skipped > 0 {
        return Err(Error::InvalidConfig(format!("{} has {} malformed rows", path.display(), table.skipped)));
    }
    Matrix::from_rows(&table.points)
}

/// Loads a generated dataset, checking it was generated from `spec`.
pub fn load_dataset(layout: &Layout, spec: &DatasetSpec) -> Result<LoadedData> {
    let mpath = layout.data_dir(spec.name).join("manifest.json");
    if !mpath.exists() {
        return Err(Error::MissingDataset(mpath));
    }
    let manifest: DatasetManifest = checkpoint::load(&mpath, "dataset")?;
    if &manifest.spec != spec {
        return Err(Error::InvalidConfig(format!(
            "dataset under {} was generated from a different spec",
            layout.data_dir(spec.name).display()
        )));
    }
    let [train, val, test] = SPLITS.map(|s| read_split(&layout.split_csv(spec.name, s)));
    Ok(LoadedData { manifest, train: train?, val: val?, test: test? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AtlasCheckpoint {
    config: AtlasConfig,
    seed: u64,
    dataset_digest: String,
    atlas: ChartAtlas<f64>,
}

/// Trains a partitioner on `train` and estimates chart priors.
pub fn fit_atlas(train: &Matrix<f64>, cfg: &AtlasConfig, seed: u64) -> Result<ChartAtlas<f64>> {
    let mut atlas = match cfg.partitioner {
        PartitionerKind::Vqae => {
            let (model, _) = train_vqae(train, &cfg.vqae(seed))?;
            ChartAtlas::from_vqae(model, cfg.rule())?
        }
        PartitionerKind::Kmeans => {
            let km = kmeans(train, cfg.k, &mut stream(seed, streams::KMEANS))?;
            ChartAtlas::from_centers(km.centers, cfg.rule())?
        }
    };
    atlas.estimate_priors(train)?;
    Ok(atlas)
}

/// The single chart of a base model: one center, every point a member.
pub fn single_chart(dim: usize) -> Result<ChartAtlas<f64>> {
    ChartAtlas::from_centers(Matrix::zeros(1, dim), MembershipRule::default())
}

/// Untrained model for `cfg`: the flow is conditioned on chart centers for
/// VQ variants, and CEF adds one embedding per chart initialised from its points.
pub fn build_model(
    model: &ModelConfig,
    latent_dim: usize,
    atlas: ChartAtlas<f64>,
    train: &Matrix<f64>,
    seed: u64,
) -> Result<MixtureModel<f64>> {
    let flow_dim = if model.family == Family::Cef { latent_dim } else { train.cols() };
    let cond_dim = if model.vq { atlas.code_dim() } else { 0 };
    let flow = FlowStack::new(
        flow_dim,
        cond_dim,
        &model.architecture(),
        LatentPrior::StandardNormal,
        &mut stream(seed, streams::INIT),
    )?;
    let embeddings = if model.family == Family::Cef {
        Some(MixtureModel::init_embeddings(&atlas, latent_dim, train)?)
    } else {
        None
    };
    MixtureModel::new(atlas, flow, embeddings)
}

/// What a trial's checkpoints were trained from; a rerun with the same key reuses them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialKey {
    pub dataset: DatasetSpec,
    pub dataset_digest: String,
    pub model: ModelConfig,
    pub atlas: Option<AtlasConfig>,
    pub training: TrainingConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Trained { epochs_run: usize, best_epoch: usize, best_val_nll: f64 },
    Diverged { detail: String },
}

/// Checkpoint manifest of one trial. Paths are relative to the output root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub key: TrialKey,
    pub tag: String,
    pub trial: usize,
    pub status: TrialStatus,
    pub atlas: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub support_mode: SupportMode,
    pub tau_proj: Option<f64>,
    pub seconds: f64,
}

impl TrialManifest {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TrialStatus::Diverged { .. })
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::NonFinite(_))
}

fn curve_csv(r: &TrainReport) -> String {
    let mut s = String::from("epoch,train_nll,val_nll\n");
    for (i, (t, v)) in r.train_nll.iter().zip(&r.val_nll).enumerate() {
        let _ = writeln!(s, "{i},{t:.9},{v:.9}");
    }
    s
}

/// Loads or trains the atlas of a VQ trial. Atlases are cached per
/// (dataset, atlas config, trial) and shared across model families.
fn trial_atlas(layout: &Layout, cfg: &ExperimentConfig, data: &LoadedData, trial: usize) -> Result<(PathBuf, ChartAtlas<f64>)> {
    let rel = layout.atlas_rel(cfg.dataset.name, &cfg.atlas, trial);
    let path = layout.root.join(&rel);
    let seed = cfg.trial_seed(trial);
    if path.exists() {
        let c: AtlasCheckpoint = checkpoint::load(&path, "atlas")?;
        if c.config == cfg.atlas && c.seed == seed && c.dataset_digest == data.manifest.digest {
            return Ok((rel, c.atlas));
        }
    }
    let atlas = fit_atlas(&data.train, &cfg.atlas, seed)?;
    let c = AtlasCheckpoint { config: cfg.atlas.clone(), seed, dataset_digest: data.manifest.digest.clone(), atlas };
    checkpoint::save(&path, "atlas", &c)?;
    Ok((rel, c.atlas))
}

fn existing_manifest(layout: &Layout, cfg: &ExperimentConfig, tag: &str, key: &TrialKey, trial: usize) -> Option<TrialManifest> {
    let path = layout.trial_dir(cfg.dataset.name, tag, trial).join("manifest.json");
    let m: TrialManifest = checkpoint::load(&path, "trial").ok()?;
    let files_ok = [&m.atlas, &m.flow, &m.embeddings].iter().all(|p| p.as_ref().is_none_or(|p| layout.root.join(p).exists()));
    (m.key == *key && files_ok && !m.diverged()).then_some(m)
}

/// Trains (or reuses) trial `trial` of `cfg`. Divergence is recorded in the
/// manifest rather than returned as an error.
pub fn train_trial(layout: &Layout, cfg: &ExperimentConfig, data: &LoadedData, trial: usize) -> Result<TrialManifest> {
    train_trial_as(layout, cfg, data, trial, cfg.model.tag())
}

fn train_trial_as(
    layout: &Layout,
    cfg: &ExperimentConfig,
    data: &LoadedData,
    trial: usize,
    tag: String,
) -> Result<TrialManifest> {
    cfg.validate()?;
    let seed = cfg.trial_seed(trial);
    let key = TrialKey {
        dataset: cfg.dataset.clone(),
        dataset_digest: data.manifest.digest.clone(),
        model: cfg.model.clone(),
        atlas: cfg.model.vq.then(|| cfg.atlas.clone()),
        training: cfg.training.clone(),
        seed,
    };
    if let Some(m) = existing_manifest(layout, cfg, &tag, &key, trial) {
        return Ok(m);
    }
    let rel = layout.trial_rel(cfg.dataset.name, &tag, trial);
    let dir = layout.root.join(&rel);
    fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut manifest = TrialManifest {
        key,
        tag,
        trial,
        status: TrialStatus::Diverged { detail: String::new() },
        atlas: None,
        flow: None,
        embeddings: None,
        support_mode: SupportMode::default(),
        tau_proj: None,
        seconds: 0.0,
    };

    let outcome = (|| -> Result<(MixtureModel<f64>, MixtureTrainReport, PathBuf)> {
        let (atlas_rel, atlas) = if cfg.model.vq {
            trial_atlas(layout, cfg, data, trial)?
        } else {
            let mut a = single_chart(data.train.cols())?;
            a.estimate_priors(&data.train)?;
            let rel = rel.join("atlas.json");
            let c = AtlasCheckpoint {
                config: cfg.atlas.clone(),
                seed,
                dataset_digest: data.manifest.digest.clone(),
                atlas: a.clone(),
            };
            checkpoint::save(&layout.root.join(&rel), "atlas", &c)?;
            (rel, a)
        };
        let mut model = build_model(&cfg.model, cfg.atlas.latent_dim, atlas, &data.train, seed)?;
        let report = model.train(&data.train, &data.val, &cfg.training.mixture(seed))?;
        Ok((model, report, atlas_rel))
    })();

    match outcome {
        Ok((model, report, atlas_rel)) => {
            write_atomic(&dir.join("curve.csv"), curve_csv(&report.flow).as_bytes())?;
            checkpoint::save(&dir.join("flow.json"), "flow", model.flow())?;
            manifest.flow = Some(rel.join("flow.json"));
            if let Some(e) = model.embeddings() {
                checkpoint::save(&dir.join("embeddings.json"), "embeddings", &e.to_vec())?;
                manifest.embeddings = Some(rel.join("embeddings.json"));
            }
            manifest.atlas = Some(atlas_rel);
            manifest.support_mode = model.support_mode();
            manifest.tau_proj = model.tau_proj();
            manifest.status = TrialStatus::Trained {
                epochs_run: report.flow.epochs_run(),
                best_epoch: report.flow.best_epoch,
                best_val_nll: report.flow.best_val_nll,
            };
        }
        Err(e) if is_divergence(&e) => {
            manifest.status = TrialStatus::Diverged { detail: e.to_string() };
        }
        Err(e) => return Err(e),
    }
    manifest.seconds = start.elapsed().as_secs_f64();
    checkpoint::save(&dir.join("manifest.json"), "trial", &manifest)?;
    Ok(manifest)
}

/// Reassembles the model of a trained trial.
pub fn load_trial_model(layout: &Layout, manifest: &TrialManifest) -> Result<MixtureModel<f64>> {
    let (Some(atlas), Some(flow)) = (&manifest.atlas, &manifest.flow) else {
        return Err(Error::Precondition(format!("trial {} of {} has no trained model", manifest.trial, manifest.tag)));
    };
    let atlas: AtlasCheckpoint = checkpoint::load(&layout.root.join(atlas), "atlas")?;
    let flow: FlowStack<f64> = checkpoint::load(&layout.root.join(flow), "flow")?;
    let embeddings: Option<Vec<ConformalEmbedding<f64>>> = match &manifest.embeddings {
        Some(p) => Some(checkpoint::load(&layout.root.join(p), "embeddings")?),
        None => None,
    };
    let mut model = MixtureModel::new(atlas.atlas, flow, embeddings)?;
    model.set_support_mode(manifest.support_mode);
    model.set_tau_proj(manifest.tau_proj)?;
    Ok(model)
}

pub fn load_trial_manifest(layout: &Layout, cfg: &ExperimentConfig, trial: usize) -> Result<TrialManifest> {
    let path = layout.trial_dir(cfg.dataset.name, &cfg.model.tag(), trial).join("manifest.json");
    checkpoint::load(&path, "trial")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct KdeCache {
    dataset_digest: String,
    grid: Vec<f64>,
    folds: usize,
    bandwidth: f64,
}

/// KDE on the training split with a cross-validated bandwidth, cached next to the data.
pub fn dataset_kde(layout: &Layout, data: &LoadedData) -> Result<KdeModel> {
    let path = layout.data_dir(data.manifest.spec.name).join("kde.json");
    let grid = default_bandwidth_grid();
    if let Ok(c) = checkpoint::load::<KdeCache>(&path, "kde") {
        if c.dataset_digest == data.manifest.digest && c.grid == grid && c.folds == DEFAULT_FOLDS {
            return KdeModel::new(&data.train, c.bandwidth);
        }
    }
    let bandwidth = cv_bandwidth(&data.train, &grid, DEFAULT_FOLDS)?;
    let c = KdeCache { dataset_digest: data.manifest.digest.clone(), grid, folds: DEFAULT_FOLDS, bandwidth };
    checkpoint::save(&path, "kde", &c)?;
    KdeModel::new(&data.train, bandwidth)
}

/// Metrics file contents: the scores plus what they were computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredMetrics {
    key: TrialKey,
    eval_samples: usize,
    bandwidth: f64,
    metrics: TrialMetrics,
}

/// Scores trial `trial` and stores its metrics next to the checkpoints.
/// Stored metrics computed from the same checkpoints and KDE are reused.
/// Returns `None` for diverged trials.
pub fn eval_trial(
    layout: &Layout,
    cfg: &ExperimentConfig,
    data: &LoadedData,
    kde: &KdeModel,
    trial: usize,
) -> Result<Option<TrialMetrics>> {
    let manifest = load_trial_manifest(layout, cfg, trial)?;
    if manifest.diverged() {
        return Ok(None);
    }
    let path = layout.trial_dir(cfg.dataset.name, &manifest.tag, trial).join("metrics.json");
    if let Ok(m) = checkpoint::load::<StoredMetrics>(&path, "metrics") {
        if m.key == manifest.key && m.eval_samples == cfg.eval_samples && m.bandwidth == kde.bandwidth() {
            return Ok(Some(m.metrics));
        }
    }
    let model = load_trial_model(layout, &manifest)?;
    let ids = (cfg.dataset.name.as_str(), manifest.tag.as_str(), trial, cfg.trial_seed(trial));
    let metrics = evaluate_trial(&model, &data.test, kde, cfg.eval_samples, ids)?;
    let stored =
        StoredMetrics { key: manifest.key, eval_samples: cfg.eval_samples, bandwidth: kde.bandwidth(), metrics };
    checkpoint::save(&path, "metrics", &stored)?;
    Ok(Some(stored.metrics))
}

fn model_rank(tag: &str) -> (usize, String) {
    (MODEL_ORDER.iter().position(|m| *m == tag).unwrap_or(MODEL_ORDER.len()), tag.to_string())
}

fn dataset_rank(name: &str) -> (usize, String) {
    let i = name.parse::<DatasetName>().ok().and_then(|d| DatasetName::ALL.iter().position(|x| *x == d));
    (i.unwrap_or(usize::MAX), name.to_string())
}

/// Every stored trial metric under the output root, in report order.
pub fn collect_metrics(layout: &Layout) -> Result<Vec<TrialMetrics>> {
    let mut out = Vec::new();
    let Ok(datasets) = fs::read_dir(&layout.root) else {
        return Ok(out);
    };
    for d in datasets.flatten().filter(|e| e.path().is_dir()) {
        for m in fs::read_dir(d.path())?.flatten().filter(|e| e.path().is_dir()) {
            for t in fs::read_dir(m.path())?.flatten() {
                let p = t.path().join("metrics.json");
                if p.exists() {
                    out.push(checkpoint::load::<StoredMetrics>(&p, "metrics")?.metrics);
                }
            }
        }
    }
    out.sort_by(|a, b| {
        (dataset_rank(&a.dataset), model_rank(&a.model), a.trial).cmp(&(dataset_rank(&b.dataset), model_rank(&b.model), b.trial))
    });
    Ok(out)
}

/// Rewrites `report/{trials.csv,timings.csv,report.md}` from all stored metrics.
/// Only the timing file depends on wall-clock time.
pub fn write_reports(layout: &Layout) -> Result<Vec<TrialMetrics>> {
    let trials = collect_metrics(layout)?;
    let dir = layout.report_dir();
    write_atomic(&dir.join("trials.csv"), trials_csv(&trials, false).as_bytes())?;
    write_atomic(&dir.join("timings.csv"), trials_csv(&trials, true).as_bytes())?;
    let md = if trials.is_empty() { String::from("No evaluated trials.\n") } else { markdown_report(&aggregate(&trials)?) };
    write_atomic(&dir.join("report.md"), md.as_bytes())?;
    Ok(trials)
}

/// Draws `n` samples from a trained trial; rows are `x,y,z,chart`.
pub fn sample_csv(layout: &Layout, cfg: &ExperimentConfig, trial: usize, n: usize) -> Result<String> {
    let manifest = load_trial_manifest(layout, cfg, trial)?;
    let model = load_trial_model(layout, &manifest)?;
    let s = model.sample(n, cfg.trial_seed(trial))?;
    let mut out = String::from("x,y,z,chart\n");
    for (r, k) in s.x.row_iter().zip(&s.charts) {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{k}", r[0], r[1], r[2]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub partitioner: PartitionerKind,
    pub k: usize,
    pub trial: usize,
    /// Mean all-charts log-likelihood of the validation split; NaN if the trial diverged.
    pub val_ll: f64,
}

/// Configuration of one ablation cell: a conditioned RealNVP trained for the
/// ablation's epoch budget on atlas `(partitioner, k)`.
pub fn ablation_config(cfg: &ExperimentConfig, partitioner: PartitionerKind, k: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.model = ModelConfig { family: Family::RealNvp, vq: true, ..cfg.model.clone() };
    c.atlas.partitioner = partitioner;
    c.atlas.k = k;
    c.training.epochs = cfg.ablation.epochs;
    c.trials = cfg.ablation.trials;
    c
}

/// Tag under which ablation trials are stored.
pub fn ablation_tag(partitioner: PartitionerKind, k: usize) -> String {
    format!("ablation-{}-k{k}", partitioner.as_str())
}

/// Trains or reuses one ablation trial and scores it on the validation split.
pub fn ablation_trial(
    layout: &Layout,
    cfg: &ExperimentConfig,
    data: &LoadedData,
    partitioner: PartitionerKind,
    k: usize,
    trial: usize,
) -> Result<AblationRow> {
    let c = ablation_config(cfg, partitioner, k);
    let m = train_trial_as(layout, &c, data, trial, ablation_tag(partitioner, k))?;
    let val_ll = if m.diverged() {
        f64::NAN
    } else {
        let model = load_trial_model(layout, &m)?;
        let lp = model.log_prob_with(&data.val, SupportMode::AllCharts)?;
        let finite: Vec<f64> = lp.into_iter().filter(|v| v.is_finite()).collect();
        if finite.is_empty() { f64::NEG_INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 }
    };
    Ok(AblationRow { partitioner, k, trial, val_ll })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("partitioner,K,trial,val_ll\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6}", r.partitioner.as_str(), r.k, r.trial, r.val_ll);
    }
    s
}

/// Mean and sample standard deviation of `val_ll` per `(partitioner, K)`, in first-seen order.
pub fn ablation_summary(rows: &[AblationRow]) -> Vec<(PartitionerKind, usize, f64, f64)> {
    let mut keys: Vec<(PartitionerKind, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.partitioner, r.k)) {
            keys.push((r.partitioner, r.k));
        }
    }
    keys.into_iter()
        .map(|(p, k)| {
            let v: Vec<f64> = rows.iter().filter(|r| r.partitioner == p && r.k == k).map(|r| r.val_ll).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            (p, k, mean, sd)
        })
        .collect()
}

pub fn ablation_summary_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("partitioner,K,mean_val_ll,std_val_ll\n");
    for (p, k, mean, sd) in ablation_summary(rows) {
        let _ = writeln!(s, "{},{k},{mean:.6},{sd:.6}", p.as_str());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_order() {
        let mut tags = vec!["vq-maf", "cef", "realnvp", "zzz", "vq-realnvp"];
        tags.sort_by_key(|t| model_rank(t));
        assert_eq!(tags, vec!["realnvp", "vq-realnvp", "vq-maf", "cef", "zzz"]);
        assert!(dataset_rank("helix") < dataset_rank("knotted") || dataset_rank("knotted") < dataset_rank("helix"));
    }

    #[test]
    fn ablation_tables() {
        let rows: Vec<AblationRow> = [(8, 0, 1.0), (8, 1, 3.0), (16, 0, 2.0)]
            .iter()
            .map(|&(k, trial, v)| AblationRow { partitioner: PartitionerKind::Kmeans, k, trial, val_ll: v })
            .collect();
        let s = ablation_summary(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].2, 2.0);
        assert!((s[0].3 - 2f64.sqrt()).abs() < 1e-12);
        assert!(ablation_csv(&rows).starts_with("partitioner,K,trial,val_ll\nkmeans,8,0,1.000000\n"));
    }
}
