//! Epoch-synchronized training: draw rays for every view, shuffle, fit
//! in batches, record per-leaf errors, and subdivide all quadtrees at
//! the same epoch boundaries. Also hosts the uniform-sampling baseline
//! (the control arm) and the benchmark that runs both on one scene.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{self, FieldError, GradientBuffer, RadianceField, VoxelField};
use crate::geometry::{Dataset, GeometryError, Ray};
use crate::imaging::{probability_map, ContextMetric, ProbabilityMap};
use crate::metrics;
use crate::render::{self, midpoint_ts, sample_ts, RaySampling, RenderError};
use crate::sampler::{PixelDraw, QuadTree, SamplerConfig, SamplerError, SubdivisionDecision};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epoch {epoch}: {source}")]
    Render {
        epoch: u32,
        #[source]
        source: RenderError,
    },
    #[error("epoch {epoch}: non-finite loss; try a smaller learning rate")]
    NonFiniteLoss { epoch: u32 },
    #[error("epoch {epoch}: no rays were drawn")]
    EmptyRayPool { epoch: u32 },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Everything one training run needs beyond the dataset and the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    /// Rays consumed per gradient step.
    pub batch_size: u32,
    /// Initial learning rate; decays multiplicatively each epoch.
    pub lr: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    pub sampler: SamplerConfig,
    pub sampling: RaySampling,
    #[serde(default)]
    pub metric: ContextMetric,
    /// Evaluate the test split every this many epochs (0 = only at the
    /// end); the final epoch always evaluates.
    #[serde(default = "default_eval_every")]
    pub eval_every: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr_decay() -> f64 {
    0.85
}

fn default_eval_every() -> u32 {
    4
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            problems.push(format!("lr_decay must be in (0,1], got {}", self.lr_decay));
        }
        if self.sampling.n_samples < 2 {
            problems.push("sampling.n_samples must be >= 2".to_string());
        }
        if !(self.sampling.near > 0.0 && self.sampling.near < self.sampling.far) {
            problems.push(format!(
                "need 0 < near < far, got near={}, far={}",
                self.sampling.near, self.sampling.far
            ));
        }
        if let Err(e) = self.sampler.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// Per-epoch accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub rays_total: u64,
    pub rays_unmarked: u64,
    pub rays_marked: u64,
    pub rays_all_pixel: u64,
    pub unmarked_leaves: u64,
    pub marked_leaves: u64,
    /// (unmarked, marked) leaf counts per train view, in train-view order.
    pub per_view_leaves: Vec<(u64, u64)>,
    pub mean_loss: f64,
    pub seconds: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,rays_total,rays_unmarked,rays_marked,rays_all_pixel,leaves_unmarked,leaves_marked,mean_loss,psnr,ssim";

impl EpochLog {
    /// Deterministic CSV row: everything except wall-clock time, which
    /// goes to the human-readable progress stream instead.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.rays_total,
            self.rays_unmarked,
            self.rays_marked,
            self.rays_all_pixel,
            self.unmarked_leaves,
            self.marked_leaves,
            self.mean_loss,
            opt(self.psnr),
            opt(self.ssim)
        )
    }

    pub fn progress_line(&self) -> String {
        let eval = match (self.psnr, self.ssim) {
            (Some(p), Some(s)) => format!("  psnr {p:.2} dB  ssim {s:.4}"),
            _ => String::new(),
        };
        format!(
            "epoch {:>3}: {:>8} rays ({} prior/uniform, {} marked, {} all-pixel)  loss {:.6}  {:.2}s{}",
            self.epoch,
            self.rays_total,
            self.rays_unmarked,
            self.rays_marked,
            self.rays_all_pixel,
            self.mean_loss,
            self.seconds,
            eval
        )
    }
}

/// All subdivision decisions taken for one view at one epoch boundary.
#[derive(Debug, Clone)]
pub struct SubdivisionRecord {
    pub epoch: u32,
    pub view: usize,
    pub decisions: Vec<SubdivisionDecision>,
}

/// The result of a training run: logs, every subdivision decision, and
/// the final per-view trees (in train-view order).
pub struct TrainReport {
    pub logs: Vec<EpochLog>,
    pub subdivisions: Vec<SubdivisionRecord>,
    pub trees: Vec<QuadTree>,
}

impl TrainReport {
    pub fn total_rays(&self) -> u64 {
        self.logs.iter().map(|l| l.rays_total).sum()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.logs.last().and_then(|l| l.psnr)
    }

    pub fn final_ssim(&self) -> Option<f64> {
        self.logs.last().and_then(|l| l.ssim)
    }
}

/// Hooks for artifact writers (overlays, CSV streams). The default
/// implementation ignores everything.
pub trait TrainObserver {
    fn epoch_end(&mut self, log: &EpochLog) {
        let _ = log;
    }

    /// Fires once per view at each subdivision boundary, before the tree
    /// resets its error statistics; `draws` are that view's draws from
    /// the epoch that just ended.
    fn before_subdivision(&mut self, epoch: u32, tree: &QuadTree, draws: &[PixelDraw]) {
        let _ = (epoch, tree, draws);
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SamplerMode {
    Adaptive,
    UniformBaseline,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(purpose ^ splitmix64(a) ^ splitmix64(b.wrapping_mul(0x9E37))));
    rng
}

const STREAM_DRAWS: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_JITTER: u64 = 3;

/// Adaptive training: context-prior draws inside per-view quadtrees,
/// error-driven subdivision every `sampler.subdivide_every` epochs, and
/// (optionally) one ray per pixel on the final epoch.
pub fn train(
    dataset: &Dataset,
    field: &mut VoxelField,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with_observer(dataset, field, cfg, &mut ())
}

pub fn train_with_observer(
    dataset: &Dataset,
    field: &mut VoxelField,
    cfg: &TrainConfig,
    observer: &mut impl TrainObserver,
) -> Result<TrainReport, TrainError> {
    train_impl(dataset, field, cfg, SamplerMode::Adaptive, observer)
}

/// The control arm: the identical loop with every view reduced to a
/// single whole-image leaf drawing H*W uniform rays per epoch, no
/// subdivision, no prior, no all-pixel finale.
pub fn baseline_uniform_train(
    dataset: &Dataset,
    field: &mut VoxelField,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    baseline_uniform_train_with_observer(dataset, field, cfg, &mut ())
}

pub fn baseline_uniform_train_with_observer(
    dataset: &Dataset,
    field: &mut VoxelField,
    cfg: &TrainConfig,
    observer: &mut impl TrainObserver,
) -> Result<TrainReport, TrainError> {
    train_impl(dataset, field, cfg, SamplerMode::UniformBaseline, observer)
}

fn train_impl(
    dataset: &Dataset,
    field: &mut VoxelField,
    cfg: &TrainConfig,
    mode: SamplerMode,
    observer: &mut impl TrainObserver,
) -> Result<TrainReport, TrainError> {
    let train_views = dataset.train_views();
    let test_views = dataset.test_views();

    let sampler_cfg = match mode {
        SamplerMode::Adaptive => cfg.sampler,
        SamplerMode::UniformBaseline => SamplerConfig {
            random_ratio: 1.0,
            init_depth: 0,
            all_pixel_last_epoch: false,
            ..cfg.sampler
        },
    };

    // The prior is computed once per train view, before any training.
    let probs: Vec<ProbabilityMap> = match mode {
        SamplerMode::Adaptive => train_views
            .par_iter()
            .map(|&view| probability_map(&dataset.images[view], cfg.metric))
            .collect(),
        // never consulted at random_ratio = 1
        SamplerMode::UniformBaseline => train_views
            .iter()
            .map(|&view| {
                let img = &dataset.images[view];
                ProbabilityMap::from_weights(
                    img.width(),
                    img.height(),
                    vec![1.0; img.pixel_count()],
                )
                .expect("uniform weights are valid")
            })
            .collect(),
    };

    let mut trees: Vec<QuadTree> = train_views
        .iter()
        .map(|&view| {
            let img = &dataset.images[view];
            QuadTree::new(view, img.height(), img.width(), &sampler_cfg)
        })
        .collect::<Result<_, _>>()?;

    let mut logs = Vec::new();
    let mut subdivisions = Vec::new();
    let mut grads = GradientBuffer::zeros_like(field);
    let midpoints = midpoint_ts(&cfg.sampling);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let last_epoch = epoch + 1 == cfg.epochs;
        let all_pixel = sampler_cfg.all_pixel_last_epoch && last_epoch;
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);

        // 1. draw this epoch's rays for every train view
        let mut per_view_draws: Vec<Vec<PixelDraw>> = Vec::with_capacity(trees.len());
        if all_pixel {
            for (slot, &view) in train_views.iter().enumerate() {
                let img = &dataset.images[view];
                let mut draws = Vec::with_capacity(img.pixel_count());
                for u in 0..img.height() {
                    for v in 0..img.width() {
                        draws.push(PixelDraw { view, u, v, from_marked: false });
                    }
                }
                let _ = slot;
                per_view_draws.push(draws);
            }
        } else {
            for (slot, tree) in trees.iter().enumerate() {
                let mut rng = stream_rng(cfg.seed, STREAM_DRAWS, epoch as u64, slot as u64);
                per_view_draws.push(tree.sample_epoch_rays(&probs[slot], &sampler_cfg, &mut rng)?);
            }
        }

        let rays_all_pixel = if all_pixel {
            per_view_draws.iter().map(|d| d.len() as u64).sum()
        } else {
            0
        };
        let rays_marked: u64 = per_view_draws
            .iter()
            .flatten()
            .filter(|d| d.from_marked)
            .count() as u64;
        let rays_total: u64 = per_view_draws.iter().map(|d| d.len() as u64).sum();
        let rays_unmarked = rays_total - rays_marked - rays_all_pixel;
        if rays_total == 0 {
            return Err(TrainError::EmptyRayPool { epoch });
        }

        // 2. materialize supervision rays and shuffle globally
        let mut rays: Vec<Ray> = Vec::with_capacity(rays_total as usize);
        for draws in &per_view_draws {
            for d in draws {
                rays.push(dataset.ray(d.view, d.u, d.v)?);
            }
        }
        let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE, epoch as u64, 0);
        rays.shuffle(&mut shuffle_rng);

        // 3. consume in batches: parallel backward, ordered accumulate,
        //    one SGD step per batch
        let mut loss_sum = 0.0;
        let mut ray_losses: Vec<(usize, u32, u32, f64)> = Vec::with_capacity(rays.len());
        let mut offset = 0u64;
        for chunk in rays.chunks(cfg.batch_size as usize) {
            let jitter = cfg.sampling.jitter;
            let results: Vec<Result<render::RayBackward, RenderError>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, ray)| {
                    if jitter {
                        let mut rng = stream_rng(
                            cfg.seed,
                            STREAM_JITTER,
                            epoch as u64,
                            offset + i as u64,
                        );
                        let ts = sample_ts(&cfg.sampling, &mut rng);
                        render::render_ray_backward_at(
                            field,
                            ray,
                            &ts,
                            cfg.sampling.far,
                            cfg.sampling.background,
                        )
                    } else {
                        render::render_ray_backward_at(
                            field,
                            ray,
                            &midpoints,
                            cfg.sampling.far,
                            cfg.sampling.background,
                        )
                    }
                })
                .collect();
            for (ray, result) in chunk.iter().zip(results) {
                let back = result.map_err(|source| TrainError::Render { epoch, source })?;
                back.accumulate_into(&mut grads);
                loss_sum += back.loss;
                ray_losses.push((ray.view, ray.pixel.0, ray.pixel.1, back.loss));
            }
            grads.scale(1.0 / chunk.len() as f64);
            field::sgd_step(field, &mut grads, lr).map_err(|e| match e {
                FieldError::NonFiniteGradient => TrainError::NonFiniteLoss { epoch },
                other => TrainError::Field(other),
            })?;
            offset += chunk.len() as u64;
        }
        let mean_loss = loss_sum / rays.len() as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }

        // 4. feed each ray's training-time loss to its leaf
        let view_to_slot: std::collections::HashMap<usize, usize> =
            train_views.iter().enumerate().map(|(slot, &view)| (view, slot)).collect();
        for &(view, u, v, loss) in &ray_losses {
            trees[view_to_slot[&view]].record_error(u, v, loss)?;
        }

        // 5. evaluate on the test split when scheduled
        let evaluate_now =
            last_epoch || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
        let (psnr, ssim) = if evaluate_now {
            let scores = evaluate(field, dataset, &test_views, &cfg.sampling);
            (Some(scores.mean_psnr), Some(scores.mean_ssim))
        } else {
            (None, None)
        };

        let mut unmarked_leaves = 0;
        let mut marked_leaves = 0;
        let mut per_view_leaves = Vec::with_capacity(trees.len());
        for tree in &trees {
            let budget = tree.ray_budget();
            unmarked_leaves += budget.unmarked_leaves;
            marked_leaves += budget.marked_leaves;
            per_view_leaves.push((budget.unmarked_leaves, budget.marked_leaves));
        }

        let log = EpochLog {
            epoch,
            rays_total,
            rays_unmarked,
            rays_marked,
            rays_all_pixel,
            unmarked_leaves,
            marked_leaves,
            per_view_leaves,
            mean_loss,
            seconds: started.elapsed().as_secs_f64(),
            psnr,
            ssim,
        };
        observer.epoch_end(&log);
        logs.push(log);

        // 6. synchronized subdivision at epoch boundaries
        let boundary = mode == SamplerMode::Adaptive
            && !last_epoch
            && (epoch + 1) % sampler_cfg.subdivide_every == 0;
        if boundary {
            for (slot, tree) in trees.iter_mut().enumerate() {
                observer.before_subdivision(epoch, tree, &per_view_draws[slot]);
                let decisions = tree.subdivide();
                subdivisions.push(SubdivisionRecord { epoch, view: tree.view(), decisions });
            }
        } else {
            for tree in &mut trees {
                tree.clear_errors();
            }
        }
    }

    Ok(TrainReport { logs, subdivisions, trees })
}

#[derive(Debug, Clone, Copy)]
pub struct ViewScore {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub per_view: Vec<ViewScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders each listed view (deterministic midpoint sampling) and scores
/// it against its ground-truth image.
pub fn evaluate(
    field: &impl RadianceField,
    dataset: &Dataset,
    views: &[usize],
    sampling: &RaySampling,
) -> EvalResult {
    let eval_sampling = RaySampling { jitter: false, ..*sampling };
    let per_view: Vec<ViewScore> = views
        .iter()
        .map(|&view| {
            let rendered = render::render_view(field, &dataset.cameras[view], &eval_sampling);
            ViewScore {
                view,
                psnr: metrics::psnr(&rendered, &dataset.images[view]),
                ssim: metrics::ssim(&rendered, &dataset.images[view]),
            }
        })
        .collect();
    let n = per_view.len().max(1) as f64;
    EvalResult {
        mean_psnr: per_view.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: per_view.iter().map(|s| s.ssim).sum::<f64>() / n,
        per_view,
    }
}

/// One side of the benchmark.
pub struct BenchArm {
    pub label: &'static str,
    pub report: TrainReport,
    pub wall_seconds: f64,
}

impl BenchArm {
    pub fn total_rays(&self) -> u64 {
        self.report.total_rays()
    }
}

pub struct BenchReport {
    pub baseline: BenchArm,
    pub adaptive: BenchArm,
}

impl BenchReport {
    /// Fraction of baseline rays the adaptive arm avoided.
    pub fn ray_reduction(&self) -> f64 {
        1.0 - self.adaptive.total_rays() as f64 / self.baseline.total_rays() as f64
    }

    pub fn time_reduction(&self) -> f64 {
        1.0 - self.adaptive.wall_seconds / self.baseline.wall_seconds
    }

    /// Final mean test PSNR difference, adaptive minus baseline.
    pub fn delta_psnr(&self) -> f64 {
        self.adaptive.report.final_psnr().unwrap_or(f64::NAN)
            - self.baseline.report.final_psnr().unwrap_or(f64::NAN)
    }

    /// Per-epoch rows for both arms: arm,epoch,rays,seconds,psnr.
    pub fn comparison_csv(&self) -> String {
        let mut out = String::from("arm,epoch,rays,seconds,psnr\n");
        for arm in [&self.baseline, &self.adaptive] {
            for log in &arm.report.logs {
                out.push_str(&format!(
                    "{},{},{},{:.6},{}\n",
                    arm.label,
                    log.epoch,
                    log.rays_total,
                    log.seconds,
                    log.psnr.map(|p| p.to_string()).unwrap_or_default()
                ));
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "baseline_rays,adaptive_rays,ray_reduction_pct,baseline_seconds,adaptive_seconds,time_reduction_pct,baseline_psnr,adaptive_psnr,delta_psnr\n{},{},{:.2},{:.3},{:.3},{:.2},{:.4},{:.4},{:.4}\n",
            self.baseline.total_rays(),
            self.adaptive.total_rays(),
            100.0 * self.ray_reduction(),
            self.baseline.wall_seconds,
            self.adaptive.wall_seconds,
            100.0 * self.time_reduction(),
            self.baseline.report.final_psnr().unwrap_or(f64::NAN),
            self.adaptive.report.final_psnr().unwrap_or(f64::NAN),
            self.delta_psnr()
        )
    }

    pub fn summary_line(&self) -> String {
        format!(
            "rays {} -> {} ({:.1}% fewer), time {:.1}s -> {:.1}s ({:.1}% less), psnr {:.2} -> {:.2} dB (delta {:+.2})",
            self.baseline.total_rays(),
            self.adaptive.total_rays(),
            100.0 * self.ray_reduction(),
            self.baseline.wall_seconds,
            self.adaptive.wall_seconds,
            100.0 * self.time_reduction(),
            self.baseline.report.final_psnr().unwrap_or(f64::NAN),
            self.adaptive.report.final_psnr().unwrap_or(f64::NAN),
            self.delta_psnr()
        )
    }
}

/// Trains the baseline and the adaptive sampler from the same initial
/// field on the same dataset and seed, evaluating every epoch.
pub fn run_bench(
    dataset: &Dataset,
    initial_field: &VoxelField,
    cfg: &TrainConfig,
) -> Result<BenchReport, TrainError> {
    let mut bench_cfg = *cfg;
    bench_cfg.eval_every = 1;

    let mut baseline_field = initial_field.clone();
    let start = Instant::now();
    let baseline_report = baseline_uniform_train(dataset, &mut baseline_field, &bench_cfg)?;
    let baseline_seconds = start.elapsed().as_secs_f64();

    let mut adaptive_field = initial_field.clone();
    let start = Instant::now();
    let adaptive_report = train(dataset, &mut adaptive_field, &bench_cfg)?;
    let adaptive_seconds = start.elapsed().as_secs_f64();

    Ok(BenchReport {
        baseline: BenchArm {
            label: "baseline",
            report: baseline_report,
            wall_seconds: baseline_seconds,
        },
        adaptive: BenchArm {
            label: "adaptive",
            report: adaptive_report,
            wall_seconds: adaptive_seconds,
        },
    })
}
