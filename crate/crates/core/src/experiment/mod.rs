//! End-to-end experiment pipeline: dataset files, atlas and flow training per
//! trial, checkpoints, evaluation reports, the partitioner ablation and plots.

pub mod checkpoint;
mod config;
mod pipeline;
pub mod plot;

pub use config::{AblationConfig, AtlasConfig, ExperimentConfig, Family, ModelConfig, PartitionerKind, TrainingConfig};
pub use pipeline::{
    ablation_config, ablation_csv, ablation_summary, ablation_summary_csv, ablation_tag, ablation_trial, build_model,
    collect_metrics, dataset_kde, eval_trial, fit_atlas, generate_dataset, load_dataset, load_trial_manifest,
    load_trial_model, sample_csv, single_chart, train_trial, write_reports, AblationRow, DatasetManifest, Layout,
    LoadedData, TrialKey, TrialManifest, TrialStatus,
};
