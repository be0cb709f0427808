//! The optimization loop.
//!
//! [`Trainer`] owns the model, optimizer and sampler and advances one
//! iteration per [`Trainer::step`]. Epoch-level decisions (scale reset,
//! view order) happen on the first step of each epoch, so a checkpoint taken
//! between any two steps resumes to the same trajectory.

mod adam;
mod checkpoint;
mod eval;
mod log;

pub use adam::{AdamState, GroupRates, Moments, GROUPS};
pub use checkpoint::{Checkpoint, ModelRecord, RngRecord};
pub use eval::{evaluate, EvalMetrics};
pub use log::{write_log, LogRow, LOG_HEADER};

use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backward::{backproject_gradients, render_backward, GradientBuffer};
use crate::losses::{compose_total, dssim_loss, l1_loss, opacity_polarization, LossReport, SSIM_WINDOW};
use crate::projection::project;
use crate::rasterizer::{bin_and_sort, blend_forward, Frame, RenderSettings};
use crate::schedule::{
    apply_scale_reset, effective_zeta, entropy_active, regularizer_cadence, reset_due, sample_epoch,
    ResolutionSchedule, TrainConfig,
};
use crate::scene::{sigmoid, Dataset, GaussianModel, Image};
use crate::{Error, Result};

/// What was being computed when a loss or gradient went non-finite.
#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub iteration: usize,
    pub epoch: usize,
    pub camera: usize,
    pub downsample: u32,
    pub report: LossReport,
    /// Parameters before the failing update.
    pub model: GaussianModel,
}

impl Diagnostic {
    /// Writes `diagnostic.txt` and the offending model as `diagnostic.ply`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = format!(
            "iteration = {}\nepoch = {}\ncamera = {}\ndownsample = {}\nreport = {:?}\n",
            self.iteration, self.epoch, self.camera, self.downsample, self.report
        );
        let p = dir.join("diagnostic.txt");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        crate::scene::ply::save_ply(&self.model, &dir.join("diagnostic.ply"))
    }
}

/// Epoch-indexed summary of the schedule, for the run log.
pub fn describe_schedule(config: &TrainConfig, schedule: &ResolutionSchedule) -> String {
    let mut out = format!("r_max = {}\n", schedule.r_max);
    let mut prev = None;
    for e in 0..config.epochs {
        let r = schedule.resolution_for_epoch(e);
        if prev != Some(r) {
            out.push_str(&format!("epoch {e}: r = {r}\n"));
            prev = Some(r);
        }
        if reset_due(e, config) {
            out.push_str(&format!("epoch {e}: scale reset, zeta = {}\n", effective_zeta(config, r)));
        }
    }
    out
}

pub struct TrainOutput {
    pub model: GaussianModel,
    pub log: Vec<LogRow>,
    pub schedule: ResolutionSchedule,
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    settings: RenderSettings,
    model: GaussianModel,
    adam: AdamState,
    schedule: ResolutionSchedule,
    rng: ChaCha8Rng,
    lr_scale: f64,
    epoch: usize,
    iter_in_epoch: usize,
    global_step: usize,
    epoch_order: Vec<usize>,
    log: Vec<LogRow>,
    pool: Option<rayon::ThreadPool>,
}

fn build_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Mean tile list length over the given views at full resolution.
pub fn mean_list_length(model: &GaussianModel, dataset: &Dataset, views: &[usize], tile_size: u32) -> f64 {
    if views.is_empty() {
        return 0.0;
    }
    let total: f64 = views
        .iter()
        .map(|&v| {
            let p = project(model, &dataset.cameras[v], 1, tile_size);
            bin_and_sort(&p.splats, &p.grid).mean_list_length()
        })
        .sum();
    total / views.len() as f64
}

/// Length scale for the positional learning rate: the camera spread when the
/// cameras surround the scene, otherwise the camera-to-model distance. Both
/// are multiplied by 1.1.
pub fn spatial_lr_scale(dataset: &Dataset, model: &GaussianModel) -> f64 {
    let centers: Vec<Vector3<f64>> = dataset.cameras.iter().map(|c| c.center()).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let spread = {
        let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        centers.iter().map(|c| (c - centroid).norm()).fold(0.0, f64::max)
    };
    if spread > 1e-9 {
        return dataset.scene_extent();
    }
    if model.is_empty() {
        return 1.0;
    }
    let centroid = model.means.iter().sum::<Vector3<f64>>() / model.len() as f64;
    let d = centers.iter().map(|c| (c - centroid).norm()).fold(0.0, f64::max);
    if d > 1e-9 {
        1.1 * d
    } else {
        1.0
    }
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, init: GaussianModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        init.validate()?;
        if config.epochs > 0 {
            if init.is_empty() {
                return Err(Error::Config("cannot train an empty model".into()));
            }
            if dataset.train.is_empty() {
                return Err(Error::Config("dataset has no training views".into()));
            }
        }
        for &v in &dataset.train {
            let c = &dataset.cameras[v];
            if config.lambda > 0.0 && ((c.width as usize) < SSIM_WINDOW || (c.height as usize) < SSIM_WINDOW) {
                return Err(Error::Shape(format!(
                    "view {v} is {}x{}, smaller than the {SSIM_WINDOW}px D-SSIM window",
                    c.width, c.height
                )));
            }
        }
        let pool = build_pool(config.threads)?;
        let schedule = if config.epochs == 0 {
            ResolutionSchedule::fixed(0)
        } else {
            let stats = mean_list_length(&init, dataset, &dataset.train, config.tile_size);
            let min_side = dataset.train.iter().map(|&v| dataset.cameras[v].width.min(dataset.cameras[v].height)).min().unwrap_or(1);
            ResolutionSchedule::from_stats(stats, min_side, SSIM_WINDOW as u32, &config)
        };
        let adam = AdamState::new(init.len(), config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Self {
            dataset,
            settings: config.render_settings(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            lr_scale: spatial_lr_scale(dataset, &init),
            model: init,
            adam,
            schedule,
            epoch: 0,
            iter_in_epoch: 0,
            global_step: 0,
            epoch_order: Vec::new(),
            log: Vec::new(),
            pool,
            config,
        })
    }

    pub fn model(&self) -> &GaussianModel {
        &self.model
    }

    pub fn into_model(self) -> GaussianModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> ResolutionSchedule {
        self.schedule
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn global_step(&self) -> usize {
        self.global_step
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn learning_rates(&self) -> GroupRates {
        let c = &self.config;
        let total = c.total_iterations().max(1) as f64;
        let t = (self.global_step as f64 / total).clamp(0.0, 1.0);
        let means = if c.lr_means > 0.0 && c.lr_means_final > 0.0 {
            (c.lr_means.ln() * (1.0 - t) + c.lr_means_final.ln() * t).exp()
        } else {
            c.lr_means
        };
        [means * self.lr_scale, c.lr_scales, c.lr_rotations, c.lr_opacities, c.lr_colors]
    }

    fn begin_epoch(&mut self) {
        let r = self.schedule.resolution_for_epoch(self.epoch);
        if reset_due(self.epoch, &self.config) {
            apply_scale_reset(&mut self.model, effective_zeta(&self.config, r));
            if self.config.clear_scale_moments_on_reset {
                self.adam.scale_moments_mut().clear();
            }
        }
        self.epoch_order = sample_epoch(&self.dataset.train, self.config.iterations_per_epoch, &mut self.rng);
    }

    /// Runs one iteration. Returns `Ok(None)` once all epochs are done.
    pub fn step(&mut self) -> Result<Option<&LogRow>> {
        if self.is_done() {
            return Ok(None);
        }
        let row = match self.pool.take() {
            Some(pool) => {
                let r = pool.install(|| self.step_inner());
                self.pool = Some(pool);
                r?
            }
            None => self.step_inner()?,
        };
        self.log.push(row);
        Ok(self.log.last())
    }

    fn step_inner(&mut self) -> Result<LogRow> {
        if self.iter_in_epoch == 0 {
            self.begin_epoch();
        }
        let epoch = self.epoch;
        let view = self.epoch_order[self.iter_in_epoch];
        let r = self.schedule.resolution_for_epoch(epoch);
        let (entropy_on, gamma) = entropy_active(epoch, r, &self.config);
        let xi = if regularizer_cadence(epoch, &self.config) { self.config.xi } else { 0.0 };
        let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;

        let t0 = Instant::now();
        let projection = project(&self.model, &self.dataset.cameras[view], r, self.settings.tile_size);
        let t_project = ms(t0);

        let t0 = Instant::now();
        let bins = bin_and_sort(&projection.splats, &projection.grid);
        let output = blend_forward(&bins, &projection.splats, &self.settings, entropy_on);
        let frame = Frame { projection, bins, output };
        let t_forward = ms(t0);

        let target = self.dataset.images[view].downsample(r as usize);
        let rendered = &frame.output.image;
        let l1 = l1_loss(rendered, &target)?;
        let lambda = self.config.lambda;
        let dssim = if lambda > 0.0 { Some(dssim_loss(rendered, &target)?) } else { None };
        let entropy = frame.output.mean_entropy().unwrap_or(0.0);
        let opacities: Vec<f64> = if xi > 0.0 { self.model.raw_opacities.iter().map(|&x| sigmoid(x)).collect() } else { Vec::new() };
        let (opacity_reg, d_sigma) = opacity_polarization(&opacities);
        let report = compose_total(
            l1.value,
            dssim.as_ref().map_or(0.0, |d| d.value),
            entropy,
            opacity_reg,
            lambda,
            gamma,
            xi,
        );

        let diagnostic = |model: &GaussianModel| {
            Error::NonFiniteLoss(Box::new(Diagnostic {
                iteration: self.global_step,
                epoch,
                camera: view,
                downsample: r,
                report,
                model: model.clone(),
            }))
        };
        if !report.total.is_finite() {
            return Err(diagnostic(&self.model));
        }

        let t0 = Instant::now();
        let mut d_color = Image::new(rendered.width, rendered.height);
        for (i, g) in d_color.data.iter_mut().enumerate() {
            *g = (1.0 - lambda) * l1.grad.data[i] + dssim.as_ref().map_or(0.0, |d| lambda * d.grad.data[i]);
        }
        let pixels = (rendered.width * rendered.height).max(1) as f64;
        let splat_grads = render_backward(&frame, &d_color, gamma / pixels, &self.settings);
        let mut grads: GradientBuffer = backproject_gradients(&self.model, &frame.projection, &splat_grads);
        if xi > 0.0 {
            for (g, (&ds, &s)) in grads.d_raw_opacities.iter_mut().zip(d_sigma.iter().zip(&opacities)) {
                *g += xi * ds * s * (1.0 - s);
            }
        }
        let t_backward = ms(t0);
        if !grads.is_finite() {
            return Err(diagnostic(&self.model));
        }

        let t0 = Instant::now();
        let lr = self.learning_rates();
        self.adam.step(&mut self.model, &grads, &lr);
        self.model.renormalize_rotations();
        let t_step = ms(t0);

        let timed = |t: f64| if self.config.record_timings { t } else { 0.0 };
        let row = LogRow {
            iter: self.global_step,
            epoch,
            r,
            l1: report.l1,
            dssim: report.dssim,
            entropy: entropy_on.then_some(report.entropy),
            total: report.total,
            mean_list_len: frame.bins.mean_list_length(),
            t_project_ms: timed(t_project),
            t_forward_ms: timed(t_forward),
            t_backward_ms: timed(t_backward),
            t_step_ms: timed(t_step),
        };

        self.global_step += 1;
        self.iter_in_epoch += 1;
        if self.iter_in_epoch == self.config.iterations_per_epoch {
            self.iter_in_epoch = 0;
            self.epoch += 1;
        }
        Ok(row)
    }

    /// Runs until all epochs are done.
    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            model: self.model,
            log: self.log,
            schedule: self.schedule,
        }
    }
}

/// Trains `init` on the dataset's training split for `config.epochs` epochs.
pub fn train(dataset: &Dataset, init: GaussianModel, config: &TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(dataset, init, config.clone())?;
    trainer.run()?;
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_synthetic_scene, perturbed_init, SceneSpec};

    fn tiny() -> (GaussianModel, Dataset) {
        let spec = SceneSpec { gaussians: 20, cameras: 4, width: 24, height: 24, ..SceneSpec::default() };
        make_synthetic_scene(&spec).unwrap()
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (gt, data) = tiny();
        let init = perturbed_init(&gt, 0.05, 0.1, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&data, init.clone(), &cfg).unwrap();
        assert_eq!(out.model, init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn empty_model_rejected() {
        let (_, data) = tiny();
        let cfg = TrainConfig { epochs: 1, iterations_per_epoch: 1, ..TrainConfig::default() };
        assert!(matches!(Trainer::new(&data, GaussianModel::default(), cfg), Err(Error::Config(_))));
    }

    #[test]
    fn loss_decreases_over_short_run() {
        let (gt, data) = tiny();
        let init = perturbed_init(&gt, 0.05, 0.2, 2);
        let cfg = TrainConfig { epochs: 2, iterations_per_epoch: 40, resolution_schedule: false, ..TrainConfig::default() };
        let out = train(&data, init, &cfg).unwrap();
        assert_eq!(out.log.len(), 80);
        let first: f64 = out.log[..10].iter().map(|r| r.l1).sum();
        let last: f64 = out.log[70..].iter().map(|r| r.l1).sum();
        assert!(last < first, "{first} -> {last}");
        assert!(out.model.rotations.iter().all(|q| (q.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let (gt, data) = tiny();
        let mut init = perturbed_init(&gt, 0.05, 0.2, 2);
        init.sh_dc[0].x = f64::INFINITY;
        let cfg = TrainConfig { epochs: 1, iterations_per_epoch: 3, resolution_schedule: false, ..TrainConfig::default() };
        // validate() rejects non-finite parameters up front
        assert!(Trainer::new(&data, init, cfg.clone()).is_err());

        let mut init = perturbed_init(&gt, 0.05, 0.2, 2);
        init.raw_opacities[0] = 0.0;
        let mut trainer = Trainer::new(&data, init, TrainConfig { lambda: 0.0, ..cfg }).unwrap();
        trainer.model.sh_dc.iter_mut().for_each(|c| c.x = f64::NAN);
        match trainer.step() {
            Err(Error::NonFiniteLoss(d)) => {
                assert_eq!(d.iteration, 0);
                assert_eq!(d.epoch, 0);
                assert!(d.model.sh_dc[0].x.is_nan());
            }
            other => panic!("expected NonFiniteLoss, got {:?}", other.map(|r| r.cloned())),
        }
    }

    #[test]
    fn schedule_description_lists_resets() {
        let cfg = TrainConfig::default();
        let s = ResolutionSchedule { r_max: 4, epochs: 150 };
        let text = describe_schedule(&cfg, &s);
        assert!(text.contains("epoch 0: r = 4"));
        assert!(text.contains("epoch 140: scale reset"));
        assert_eq!(text.matches("scale reset").count(), 7);
    }
}
