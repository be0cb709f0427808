use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use splat_core::rasterizer::render;
use splat_core::scene::ply::{load_ply, save_ply};
use splat_core::scene::synthetic::TEST_HOLDOUT;
use splat_core::scene::{make_synthetic_scene, perturbed_init, SceneKind, SceneSpec};
use splat_core::telemetry::{self, HeatmapKind};
use splat_core::trainer::{describe_schedule, evaluate, write_log, Checkpoint, Trainer};
use splat_core::{Dataset, Error, TrainConfig};

#[derive(Parser)]
#[command(name = "splat", version, about = "CPU Gaussian splatting trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileKind {
    Length,
    Entropy,
    Dist,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus ground-truth and initial models.
    Synth {
        #[arg(long, default_value = "random-cloud")]
        kind: String,
        #[arg(long, default_value_t = 500)]
        gaussians: usize,
        #[arg(long, default_value_t = 12)]
        cameras: usize,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Std-dev of the position noise in the initial model.
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a model against a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Initial model; defaults to DATA/init.ply.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_entropy: bool,
        #[arg(long)]
        no_reset: bool,
        #[arg(long)]
        no_resched: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write OUT/checkpoint.json every N iterations (0: only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Report PSNR, SSIM, entropy and list length on a split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Render one dataset camera to a PNG.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        camera: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        downsample: u32,
    },
    /// Heatmaps and histograms for a model.
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: ProfileKind,
        /// Views to profile (default: the test split, or all views if it is empty).
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainConfig::parse(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn split_views(data: &Dataset, split: Split) -> Vec<usize> {
    match split {
        Split::Train => data.train.clone(),
        Split::Test => data.test.clone(),
        Split::All => (0..data.len()).collect(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { kind, gaussians, cameras, width, height, seed, jitter, out } => {
            let spec = SceneSpec {
                kind: kind.parse::<SceneKind>()?,
                gaussians,
                cameras,
                width,
                height,
                seed,
                ..SceneSpec::default()
            };
            let (gt, data) = make_synthetic_scene(&spec)?;
            data.save(&out)?;
            save_ply(&gt, &out.join("gt.ply"))?;
            save_ply(&perturbed_init(&gt, jitter, 0.1, seed), &out.join("init.ply"))?;
            println!("wrote {} views and {} Gaussians to {}", data.len(), gt.len(), out.display());
        }
        Command::Train { data, config, out, init, seed, no_entropy, no_reset, no_resched, resume, checkpoint_every } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.entropy_enabled &= !no_entropy;
            cfg.reset_enabled &= !no_reset;
            cfg.resolution_schedule &= !no_resched;
            let dataset = Dataset::load(&data, TEST_HOLDOUT)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("config.txt"), &cfg.to_text())?;

            let mut trainer = match resume {
                Some(ck) => Trainer::resume(&dataset, cfg.clone(), &Checkpoint::load(&ck)?)?,
                None => {
                    let init = init.unwrap_or_else(|| data.join("init.ply"));
                    Trainer::new(&dataset, load_ply(&init)?, cfg.clone())?
                }
            };
            write(&out.join("schedule.txt"), &describe_schedule(&cfg, &trainer.schedule()))?;
            loop {
                match trainer.step() {
                    Ok(Some(row)) => {
                        let done = row.iter + 1;
                        if done % cfg.iterations_per_epoch == 0 {
                            eprintln!(
                                "epoch {:>4}  r={}  l1={:.5}  total={:.5}  list={:.2}",
                                row.epoch, row.r, row.l1, row.total, row.mean_list_len
                            );
                        }
                        if checkpoint_every > 0 && done % checkpoint_every == 0 {
                            trainer.checkpoint().save(&out.join("checkpoint.json"))?;
                        }
                    }
                    Ok(None) => break,
                    Err(Error::NonFiniteLoss(diag)) => {
                        let dir = out.join("diagnostic");
                        diag.write(&dir)?;
                        bail!("{}; inputs dumped to {}", Error::NonFiniteLoss(diag), dir.display());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            trainer.checkpoint().save(&out.join("checkpoint.json"))?;
            write_log(trainer.log(), &out.join("log.csv"))?;
            telemetry::write_timing_breakdown(trainer.log(), 200, &out.join("timing.csv"))?;
            let model = trainer.into_model();
            save_ply(&model, &out.join("model.ply"))?;
            let views = if dataset.test.is_empty() { &dataset.train } else { &dataset.test };
            let m = evaluate(&model, &dataset, views, &cfg.render_settings())?;
            println!("psnr {:.3} dB, mean list length {:.3}", m.psnr, m.mean_list_length);
        }
        Command::Eval { model, data, split } => {
            let dataset = Dataset::load(&data, TEST_HOLDOUT)?;
            let model = load_ply(&model)?;
            let views = split_views(&dataset, split);
            let m = evaluate(&model, &dataset, &views, &Default::default())?;
            println!("views          {}", m.views);
            println!("psnr           {:.4}", m.psnr);
            match m.ssim {
                Some(s) => println!("ssim           {s:.5}"),
                None => println!("ssim           n/a"),
            }
            println!("mean_entropy   {:.5}", m.mean_entropy);
            println!("mean_list_len  {:.4}", m.mean_list_length);
            println!("mean_contrib   {:.4}", m.mean_contrib);
        }
        Command::Render { model, data, camera, out, downsample } => {
            let dataset = Dataset::load(&data, TEST_HOLDOUT)?;
            let model = load_ply(&model)?;
            let Some(cam) = dataset.cameras.get(camera) else {
                bail!("camera {camera} out of range (dataset has {})", dataset.len());
            };
            if downsample == 0 {
                bail!("downsample must be >= 1");
            }
            render(&model, cam, downsample, &Default::default(), false).output.image.save(&out)?;
        }
        Command::Profile { model, data, out, kind, views } => {
            let dataset = Dataset::load(&data, TEST_HOLDOUT)?;
            let model = load_ply(&model)?;
            let views = if !views.is_empty() {
                views
            } else if !dataset.test.is_empty() {
                dataset.test.clone()
            } else {
                (0..dataset.len()).collect()
            };
            if let Some(&v) = views.iter().find(|&&v| v >= dataset.len()) {
                bail!("view {v} out of range");
            }
            let settings = Default::default();
            match kind {
                ProfileKind::Dist => {
                    let set = telemetry::distributions(&model, &dataset, &views, 8);
                    telemetry::write_distributions(&set, &out)?;
                }
                ProfileKind::Length | ProfileKind::Entropy => {
                    let kind = if matches!(kind, ProfileKind::Length) { HeatmapKind::ListLength } else { HeatmapKind::Entropy };
                    for v in views {
                        let map = telemetry::heatmap(&model, &dataset.cameras[v], kind, &settings);
                        let stem = format!("{}_{v:04}", if kind == HeatmapKind::ListLength { "length" } else { "entropy" });
                        let files = telemetry::write_heatmap(&map, &out, &stem, None)?;
                        println!("{}  mean {:.4}", files.png.display(), files.mean);
                    }
                }
            }
        }
    }
    Ok(())
}
