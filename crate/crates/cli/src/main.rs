use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vqflow::datasets::DatasetName;
use vqflow::experiment::{
    ablation_csv, ablation_summary_csv, ablation_trial, checkpoint::write_atomic, dataset_kde, eval_trial,
    generate_dataset, load_dataset, plot, sample_csv, train_trial, write_reports, ExperimentConfig, Family, Layout,
    PartitionerKind, TrialStatus,
};
use vqflow::Error;

#[derive(Parser)]
#[command(name = "vqflow", version, about = "Mixtures of local normalizing flows on 3-D toy manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/val/test CSVs and a manifest.
    Generate(Overrides),
    /// Train every trial of the configured model.
    Train(Overrides),
    /// Score trained trials and rewrite the report tables.
    Eval(Overrides),
    /// Draw samples from one trained trial.
    Sample {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(short, long, default_value_t = 2500)]
        n: usize,
        /// Output CSV; defaults to samples.csv in the trial directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Three SVG projections (xy, xz, yz) of a points CSV.
    Plot {
        csv: PathBuf,
        /// Output directory; defaults to the CSV's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partitioner x K sweep of the conditioned RealNVP.
    Ablate {
        #[command(flatten)]
        o: Overrides,
        /// Comma-separated K grid.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
}

#[derive(Args, Clone, Debug, Default)]
struct Overrides {
    /// JSON experiment config; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetName>,
    #[arg(long, value_parser = parse_family)]
    model: Option<Family>,
    #[arg(long, overrides_with = "no_vq")]
    vq: bool,
    #[arg(long)]
    no_vq: bool,
    /// Master seed; also seeds the dataset.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_partitioner)]
    partitioner: Option<PartitionerKind>,
}

fn parse_dataset(s: &str) -> Result<DatasetName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_partitioner(s: &str) -> Result<PartitionerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(Error),
    AllDiverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::UnknownDataset(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                ExperimentConfig::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(d) = self.dataset {
            cfg.dataset.name = d;
        }
        if let Some(f) = self.model {
            cfg.model.family = f;
        }
        if self.vq {
            cfg.model.vq = true;
        }
        if self.no_vq {
            cfg.model.vq = false;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
            cfg.dataset.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(k) = self.k {
            cfg.atlas.k = k;
        }
        if let Some(m) = self.m {
            cfg.atlas.m = m;
        }
        if let Some(e) = self.epsilon {
            cfg.atlas.epsilon = e;
        }
        if let Some(e) = self.epochs {
            cfg.training.epochs = e;
        }
        if let Some(p) = self.partitioner {
            cfg.atlas.partitioner = p;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn generate(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let layout = Layout::new(&cfg.out_dir);
    let m = generate_dataset(&layout, &cfg.dataset)?;
    println!(
        "{}: {} train, {} val, {} test rows in {} (digest {})",
        cfg.dataset.name,
        m.rows.0,
        m.rows.1,
        m.rows.2,
        layout.data_dir(cfg.dataset.name).display(),
        m.digest
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let layout = Layout::new(&cfg.out_dir);
    let data = load_dataset(&layout, &cfg.dataset)?;
    let tag = cfg.model.tag();
    let mut diverged = 0;
    for trial in 0..cfg.trials {
        let m = train_trial(&layout, cfg, &data, trial)?;
        match &m.status {
            TrialStatus::Trained { epochs_run, best_epoch, best_val_nll } => println!(
                "{} {tag} trial {trial}: {epochs_run} epochs, best val NLL {best_val_nll:.4} at epoch {best_epoch} ({:.1}s)",
                cfg.dataset.name, m.seconds
            ),
            TrialStatus::Diverged { detail } => {
                diverged += 1;
                println!("{} {tag} trial {trial}: diverged ({detail})", cfg.dataset.name);
            }
        }
    }
    if diverged == cfg.trials {
        return Err(Failure::AllDiverged);
    }
    Ok(())
}

fn eval(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let layout = Layout::new(&cfg.out_dir);
    let data = load_dataset(&layout, &cfg.dataset)?;
    let kde = dataset_kde(&layout, &data)?;
    let mut scored = 0;
    for trial in 0..cfg.trials {
        match eval_trial(&layout, cfg, &data, &kde, trial)? {
            Some(t) => {
                scored += 1;
                println!(
                    "{} {} trial {trial}: test LL {:.4}, sample LL {:.4}, support failures {:.4}",
                    t.dataset, t.model, t.test_ll, t.sample_ll, t.support_failure_rate
                );
            }
            None => println!("{} {} trial {trial}: diverged, skipped", cfg.dataset.name, cfg.model.tag()),
        }
    }
    write_reports(&layout)?;
    println!("report written to {}", layout.report_dir().display());
    if scored == 0 {
        return Err(Failure::AllDiverged);
    }
    Ok(())
}

fn sample(cfg: &ExperimentConfig, trial: usize, n: usize, output: Option<PathBuf>) -> Result<(), Failure> {
    let layout = Layout::new(&cfg.out_dir);
    let csv = sample_csv(&layout, cfg, trial, n)?;
    let path = output.unwrap_or_else(|| layout.trial_dir(cfg.dataset.name, &cfg.model.tag(), trial).join("samples.csv"));
    write_atomic(&path, csv.as_bytes())?;
    println!("{n} samples written to {}", path.display());
    Ok(())
}

fn plot_csv(csv: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(csv).map_err(|e| Failure::Usage(format!("{}: {e}", csv.display())))?;
    let table = plot::read_points(&text)?;
    let dir = out.unwrap_or_else(|| csv.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("points");
    for (plane, svg) in plot::projections(&table, stem) {
        let path = dir.join(format!("{stem}_{plane}.svg"));
        write_atomic(&path, svg.as_bytes())?;
        println!("{}", path.display());
    }
    if table.skipped > 0 {
        eprintln!("skipped {} malformed rows", table.skipped);
    }
    Ok(())
}

fn ablate(cfg: &mut ExperimentConfig, ks: Option<Vec<usize>>) -> Result<(), Failure> {
    if let Some(ks) = ks {
        cfg.ablation.ks = ks;
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let layout = Layout::new(&cfg.out_dir);
    let data = load_dataset(&layout, &cfg.dataset)?;
    let mut rows = Vec::new();
    for p in [PartitionerKind::Vqae, PartitionerKind::Kmeans] {
        for &k in &cfg.ablation.ks {
            for trial in 0..cfg.ablation.trials {
                let r = ablation_trial(&layout, cfg, &data, p, k, trial)?;
                println!("{} K={k} trial {trial}: val LL {:.4}", p.as_str(), r.val_ll);
                rows.push(r);
            }
        }
    }
    write_atomic(&layout.ablation_csv(cfg.dataset.name), ablation_csv(&rows).as_bytes())?;
    let summary = layout.ablation_csv(cfg.dataset.name).with_file_name("ablation_summary.csv");
    write_atomic(&summary, ablation_summary_csv(&rows).as_bytes())?;
    println!("{}", layout.ablation_csv(cfg.dataset.name).display());
    if rows.iter().all(|r| r.val_ll.is_nan()) {
        return Err(Failure::AllDiverged);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(o) => generate(&o.resolve()?),
        Command::Train(o) => train(&o.resolve()?),
        Command::Eval(o) => eval(&o.resolve()?),
        Command::Sample { o, trial, n, output } => sample(&o.resolve()?, trial, n, output),
        Command::Plot { csv, out } => plot_csv(&csv, out),
        Command::Ablate { o, ks } => ablate(&mut o.resolve()?, ks),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::AllDiverged) => {
            eprintln!("error: every trial diverged");
            ExitCode::from(3)
        }
    }
}
