//! Command-line front end: probability-map inspection, training, the
//! baseline-vs-adaptive benchmark, and checkpoint rendering.
//!
//! Exit codes: 0 success, 2 usage/config, 3 data/checkpoint, 4 numeric
//! failure.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::RunConfig;
use rayfield::field::{FieldError, VoxelField};
use rayfield::geometry::{generate_scene, load_nerf_synthetic, Dataset};
use rayfield::imaging::{self, ContextMetric, MetricKind};
use rayfield::render::RaySampling;
use rayfield::sampler::{PixelDraw, QuadTree};
use rayfield::trainer::{
    self, evaluate, EpochLog, TrainError, TrainObserver, EPOCH_CSV_HEADER,
};

#[derive(Parser)]
#[command(
    name = "rayfield",
    version,
    about = "CPU voxel radiance field trainer with adaptive ray sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the context-based sampling prior of an image as a grayscale PNG
    Probmap {
        /// Input image (8-bit RGB or RGBA PNG)
        image: PathBuf,
        /// Context metric: std-dev, variance or entropy
        #[arg(long, default_value = "std-dev")]
        metric: String,
        /// Window side length: 3, 5, 7 or 9
        #[arg(long, default_value_t = 3)]
        patch: u32,
        /// Output PNG path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the adaptive sampler on a config and write all artifacts
    Train {
        /// JSON experiment config
        config: PathBuf,
    },
    /// Train baseline and adaptive arms on the same scene and compare
    Bench {
        /// JSON experiment config
        config: PathBuf,
    },
    /// Render views from a checkpoint
    Render {
        /// Field checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON experiment config describing the dataset
        #[arg(long)]
        config: PathBuf,
        /// Output directory for PNGs
        #[arg(long)]
        out: PathBuf,
        /// Which split to render: test or train
        #[arg(long, default_value = "test")]
        split: String,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::Render { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Sampler(rayfield::sampler::SamplerError::InvalidConfig(_)) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_data(e: std::io::Error, what: &Path) -> CliError {
    CliError::Data(format!("{}: {e}", what.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Probmap { image, metric, patch, out } => cmd_probmap(&image, &metric, patch, &out),
        Command::Train { config } => cmd_train(&config),
        Command::Bench { config } => cmd_bench(&config),
        Command::Render { checkpoint, config, out, split } => {
            cmd_render(&checkpoint, &config, &out, &split)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_workers(config_workers: usize) {
    let workers = std::env::var("RAYFIELD_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(config_workers);
    if workers > 0 {
        // ignore failure: the global pool can only be set once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn cmd_probmap(image: &Path, metric: &str, patch: u32, out: &Path) -> Result<(), CliError> {
    let kind = MetricKind::from_str(metric).map_err(CliError::Usage)?;
    let metric = ContextMetric::new(kind, patch).map_err(CliError::Usage)?;
    let img = imaging::load_png(image).map_err(|e| CliError::Data(e.to_string()))?;
    let map = imaging::probability_map(&img, metric);
    map.save_png(out).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "wrote {} ({}x{}, metric {} patch {})",
        out.display(),
        map.width(),
        map.height(),
        metric.kind,
        metric.patch
    );
    Ok(())
}

fn build_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    if let Some(scene) = &config.scene {
        eprintln!(
            "generating {0}x{0} scene ({1} train / {2} test views)...",
            scene.resolution, scene.n_train, scene.n_test
        );
        generate_scene(&scene.spec, scene.n_train, scene.n_test, scene.resolution)
            .map_err(|e| CliError::Data(e.to_string()))
    } else {
        let dir = config.dataset_path.as_ref().expect("validated");
        eprintln!("loading dataset from {}...", dir.display());
        load_nerf_synthetic(dir, config.train.sampling.near, config.train.sampling.far)
            .map_err(|e| CliError::Data(e.to_string()))
    }
}

/// Streams the epoch CSV, prints progress lines, and writes per-round
/// overlay PNGs and leaf-layout CSVs for one chosen view.
struct ArtifactObserver<'a> {
    out_dir: PathBuf,
    dataset: &'a Dataset,
    overlay_view: usize,
    csv: BufWriter<File>,
    label: &'static str,
}

impl<'a> ArtifactObserver<'a> {
    fn new(
        out_dir: &Path,
        dataset: &'a Dataset,
        overlay_view: usize,
        csv_name: &str,
        label: &'static str,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir).map_err(|e| io_data(e, out_dir))?;
        let csv_path = out_dir.join(csv_name);
        let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| io_data(e, &csv_path))?);
        writeln!(csv, "{EPOCH_CSV_HEADER}").map_err(|e| io_data(e, &csv_path))?;
        Ok(ArtifactObserver { out_dir: out_dir.to_path_buf(), dataset, overlay_view, csv, label })
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.csv.flush().map_err(|e| io_data(e, &self.out_dir))
    }
}

impl TrainObserver for ArtifactObserver<'_> {
    fn epoch_end(&mut self, log: &EpochLog) {
        println!("{}{}", self.label, log.progress_line());
        writeln!(self.csv, "{}", log.csv_row()).expect("epoch csv write");
    }

    fn before_subdivision(&mut self, epoch: u32, tree: &QuadTree, draws: &[PixelDraw]) {
        let round_dir = self.out_dir.join(format!("round_e{epoch:03}"));
        if fs::create_dir_all(&round_dir).is_err() {
            return;
        }
        // layout rows for every view, one file per round
        let csv_path = round_dir.join("leaves.csv");
        let layout = tree.layout_csv();
        let body = match fs::read_to_string(&csv_path) {
            Ok(existing) => {
                let rows = layout.split_once('\n').map(|x| x.1).unwrap_or("");
                format!("{existing}{rows}")
            }
            Err(_) => layout,
        };
        let _ = fs::write(&csv_path, body);

        let overlay_target = self
            .dataset
            .train_views()
            .get(self.overlay_view)
            .copied()
            .unwrap_or(usize::MAX);
        if tree.view() == overlay_target {
            let base = &self.dataset.images[tree.view()];
            let scatter = QuadTree::scatter_overlay(base, draws);
            let _ = imaging::save_png(&scatter, &round_dir.join("sampled_rays.png"));
            let _ = imaging::save_png(&tree.error_overlay(), &round_dir.join("render_error.png"));
        }
    }
}

fn cmd_train(config_path: &Path) -> Result<(), CliError> {
    let config = RunConfig::load(config_path).map_err(CliError::Usage)?;
    init_workers(config.workers);
    let dataset = build_dataset(&config)?;
    let mut field = config.field.build();

    let mut observer = ArtifactObserver::new(
        &config.output_dir,
        &dataset,
        config.overlay_view,
        "epochs.csv",
        "",
    )?;
    let report = trainer::train_with_observer(&dataset, &mut field, &config.train, &mut observer)?;
    observer.finish()?;

    let ckpt_path = config.output_dir.join("field.ckpt");
    field.save(&ckpt_path).map_err(|e| CliError::Data(e.to_string()))?;

    let final_log = report.logs.last();
    println!(
        "done: {} epochs, {} total rays, checkpoint {}",
        report.logs.len(),
        report.total_rays(),
        ckpt_path.display()
    );
    if let Some(log) = final_log {
        if let (Some(p), Some(s)) = (log.psnr, log.ssim) {
            println!("final mean test psnr {p:.6} dB, ssim {s:.6}");
        }
    }
    Ok(())
}

fn cmd_bench(config_path: &Path) -> Result<(), CliError> {
    let config = RunConfig::load(config_path).map_err(CliError::Usage)?;
    init_workers(config.workers);
    let dataset = build_dataset(&config)?;
    let initial_field = config.field.build();

    let mut bench_train = config.train;
    bench_train.eval_every = 1;

    eprintln!("training baseline arm...");
    let mut baseline_field = initial_field.clone();
    let mut observer = ArtifactObserver::new(
        &config.output_dir,
        &dataset,
        config.overlay_view,
        "baseline_epochs.csv",
        "[baseline] ",
    )?;
    let start = Instant::now();
    let baseline_report = trainer::baseline_uniform_train_with_observer(
        &dataset,
        &mut baseline_field,
        &bench_train,
        &mut observer,
    )?;
    let baseline_seconds = start.elapsed().as_secs_f64();
    observer.finish()?;

    eprintln!("training adaptive arm...");
    let mut adaptive_field = initial_field;
    let mut observer = ArtifactObserver::new(
        &config.output_dir,
        &dataset,
        config.overlay_view,
        "adaptive_epochs.csv",
        "[adaptive] ",
    )?;
    let start = Instant::now();
    let adaptive_report = trainer::train_with_observer(
        &dataset,
        &mut adaptive_field,
        &bench_train,
        &mut observer,
    )?;
    let adaptive_seconds = start.elapsed().as_secs_f64();
    observer.finish()?;

    let bench = trainer::BenchReport {
        baseline: trainer::BenchArm {
            label: "baseline",
            report: baseline_report,
            wall_seconds: baseline_seconds,
        },
        adaptive: trainer::BenchArm {
            label: "adaptive",
            report: adaptive_report,
            wall_seconds: adaptive_seconds,
        },
    };

    let comparison_path = config.output_dir.join("comparison.csv");
    fs::write(&comparison_path, bench.comparison_csv())
        .map_err(|e| io_data(e, &comparison_path))?;
    let summary_path = config.output_dir.join("summary.csv");
    fs::write(&summary_path, bench.summary_csv()).map_err(|e| io_data(e, &summary_path))?;

    println!("{}", bench.summary_line());
    Ok(())
}

fn cmd_render(
    checkpoint: &Path,
    config_path: &Path,
    out: &Path,
    split: &str,
) -> Result<(), CliError> {
    let config = RunConfig::load(config_path).map_err(CliError::Usage)?;
    init_workers(config.workers);
    let field = VoxelField::load(checkpoint).map_err(|e| match e {
        FieldError::Io { .. } => CliError::Data(e.to_string()),
        _ => CliError::Data(format!("corrupt checkpoint: {e}")),
    })?;
    let dataset = build_dataset(&config)?;
    let views = match split {
        "test" => dataset.test_views(),
        "train" => dataset.train_views(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown split {other:?}, expected test or train"
            )))
        }
    };

    fs::create_dir_all(out).map_err(|e| io_data(e, out))?;
    let sampling = RaySampling { jitter: false, ..config.train.sampling };
    for (i, &view) in views.iter().enumerate() {
        let image = rayfield::render::render_view(&field, &dataset.cameras[view], &sampling);
        let path = out.join(format!("r_{i}.png"));
        imaging::save_png(&image, &path).map_err(|e| CliError::Data(e.to_string()))?;
    }

    let scores = evaluate(&field, &dataset, &views, &sampling);
    for s in &scores.per_view {
        println!("view {}: psnr {:.6} dB, ssim {:.6}", s.view, s.psnr, s.ssim);
    }
    println!(
        "mean psnr {:.10} dB, mean ssim {:.10} ({} views)",
        scores.mean_psnr,
        scores.mean_ssim,
        scores.per_view.len()
    );
    Ok(())
}
