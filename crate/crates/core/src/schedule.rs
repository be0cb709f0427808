//! Training-time policies: scale reset, entropy cadence, stage-adaptive
//! strengths, coarse-to-fine resolution and per-epoch view sampling.

use std::fmt::Write as _;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::rasterizer::RenderSettings;
use crate::scene::GaussianModel;
use crate::{Error, Result};

/// All hyperparameters of a training run.
///
/// Serialized as plain `key = value` lines; see [`TrainConfig::parse`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub seed: u64,

    pub reset_enabled: bool,
    /// Shrink factor ζ applied to every linear scale at a reset.
    pub zeta: f64,
    pub reset_period_epochs: usize,
    /// Zero the Adam moments of the log-scales at each reset.
    pub clear_scale_moments_on_reset: bool,

    pub entropy_enabled: bool,
    /// Entropy weight γ.
    pub gamma: f64,
    /// D-SSIM weight λ.
    pub lambda: f64,
    /// Opacity-polarization weight ξ (0 disables it).
    pub xi: f64,

    /// Full-resolution multiplier on γ.
    pub gamma_boost: f64,
    /// Full-resolution exponent on ζ: the reset uses `ζ^zeta_boost`, so values
    /// above 1 shrink harder.
    pub zeta_boost: f64,

    pub resolution_schedule: bool,
    pub r_max_cap: u32,
    pub tile_count_threshold: f64,

    pub lr_means: f64,
    pub lr_means_final: f64,
    pub lr_scales: f64,
    pub lr_rotations: f64,
    pub lr_opacities: f64,
    pub lr_colors: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub tile_size: u32,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub t_term: f64,
    pub background: [f64; 3],

    /// Worker threads for rendering; 0 uses the global pool.
    pub threads: usize,
    /// Write wall-clock timings to the run log (zeros otherwise, which keeps
    /// logs byte-reproducible).
    pub record_timings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let render = RenderSettings::default();
        Self {
            epochs: 150,
            iterations_per_epoch: 200,
            seed: 0,
            reset_enabled: true,
            zeta: 0.2,
            reset_period_epochs: 20,
            clear_scale_moments_on_reset: false,
            entropy_enabled: true,
            gamma: 0.015,
            lambda: 0.2,
            xi: 0.0,
            gamma_boost: 1.0,
            zeta_boost: 1.0,
            resolution_schedule: true,
            r_max_cap: 4,
            tile_count_threshold: 150.0,
            lr_means: 1.6e-4,
            lr_means_final: 1.6e-6,
            lr_scales: 5e-3,
            lr_rotations: 1e-3,
            lr_opacities: 0.05,
            lr_colors: 2.5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            tile_size: render.tile_size,
            alpha_min: render.alpha_min,
            alpha_max: render.alpha_max,
            t_term: render.t_term,
            background: render.background,
            threads: 0,
            record_timings: true,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        const CONFIG_KEYS: &[&str] = &[$(stringify!($key)),*];

        impl TrainConfig {
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => self.$key = ConfigValue::parse_value(value)
                        .map_err(|m| Error::Config(format!("{key}: {m}")))?,)*
                    "background" => {
                        let parts: Vec<f64> = value
                            .split([',', ' '])
                            .filter(|s| !s.is_empty())
                            .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("background: bad number {s:?}"))))
                            .collect::<Result<_>>()?;
                        self.background = parts
                            .try_into()
                            .map_err(|_| Error::Config("background: expected three components".into()))?;
                    }
                    other => return Err(Error::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            /// Canonical `key = value` text; parses back to an equal config.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", stringify!($key), self.$key.format_value());)*
                let [r, g, b] = self.background;
                let _ = writeln!(s, "background = {r:?},{g:?},{b:?}");
                s
            }
        }
    };
}

config_keys!(
    epochs,
    iterations_per_epoch,
    seed,
    reset_enabled,
    zeta,
    reset_period_epochs,
    clear_scale_moments_on_reset,
    entropy_enabled,
    gamma,
    lambda,
    xi,
    gamma_boost,
    zeta_boost,
    resolution_schedule,
    r_max_cap,
    tile_count_threshold,
    lr_means,
    lr_means_final,
    lr_scales,
    lr_rotations,
    lr_opacities,
    lr_colors,
    adam_beta1,
    adam_beta2,
    adam_eps,
    tile_size,
    alpha_min,
    alpha_max,
    t_term,
    threads,
    record_timings,
);

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! config_value_via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("cannot parse {s:?}"))
            }
            fn format_value(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}
config_value_via_fromstr!(f64, u32, u64, usize, bool);

impl TrainConfig {
    /// Parses `key = value` lines (`#` starts a comment) over the defaults.
    /// Unknown keys and malformed lines are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        CONFIG_KEYS.iter().copied().chain(std::iter::once("background"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad("zeta must lie in (0, 1]");
        }
        if !(self.gamma >= 0.0) || !(self.xi >= 0.0) {
            return bad("gamma and xi must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.reset_period_epochs == 0 {
            return bad("reset_period_epochs must be positive");
        }
        if self.r_max_cap < 1 {
            return bad("r_max_cap must be >= 1");
        }
        if !(self.tile_count_threshold > 0.0) {
            return bad("tile_count_threshold must be positive");
        }
        if self.iterations_per_epoch == 0 {
            return bad("iterations_per_epoch must be positive");
        }
        if self.tile_size == 0 {
            return bad("tile_size must be positive");
        }
        if !(self.alpha_max > 0.0 && self.alpha_max <= 1.0 && self.alpha_min >= 0.0 && self.alpha_min < self.alpha_max) {
            return bad("need 0 <= alpha_min < alpha_max <= 1");
        }
        if !(self.gamma_boost >= 0.0 && self.zeta_boost > 0.0) {
            return bad("boosters must be positive");
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            tile_size: self.tile_size,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            t_term: self.t_term,
            background: self.background,
        }
    }

    /// SHA-256 of the canonical text, ignoring settings that do not change
    /// the optimization trajectory (thread count, timing capture).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.record_timings = false;
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch
    }
}

/// `s ← ζ·s` for every Gaussian, applied as `ln s += ln ζ`. `ζ = 1` leaves the
/// model bit-identical.
pub fn apply_scale_reset(model: &mut GaussianModel, zeta: f64) {
    assert!(zeta > 0.0 && zeta <= 1.0, "zeta must lie in (0, 1]");
    if zeta == 1.0 {
        return;
    }
    let shift = zeta.ln();
    for s in &mut model.log_scales {
        s.x += shift;
        s.y += shift;
        s.z += shift;
    }
}

/// Whether a reset fires at the start of `epoch`.
pub fn reset_due(epoch: usize, config: &TrainConfig) -> bool {
    config.reset_enabled && epoch > 0 && epoch % config.reset_period_epochs == 0
}

/// Effective ζ for a reset at resolution factor `r`.
pub fn effective_zeta(config: &TrainConfig, r: u32) -> f64 {
    if r == 1 {
        config.zeta.powf(config.zeta_boost)
    } else {
        config.zeta
    }
}

/// Every other epoch within each reset window, starting on the window's
/// first epoch. Shared by the entropy and opacity-polarization terms.
pub fn regularizer_cadence(epoch: usize, config: &TrainConfig) -> bool {
    (epoch % config.reset_period_epochs) % 2 == 0
}

/// Entropy cadence: on for even epochs within each reset window. Returns the
/// flag and the γ to use (boosted at full resolution; 0 when inactive).
pub fn entropy_active(epoch: usize, r: u32, config: &TrainConfig) -> (bool, f64) {
    let on = config.entropy_enabled && config.gamma > 0.0 && regularizer_cadence(epoch, config);
    if !on {
        return (false, 0.0);
    }
    let gamma = if r == 1 { config.gamma * config.gamma_boost } else { config.gamma };
    (true, gamma)
}

pub const RESOLUTION_STAGES: usize = 4;

/// Coarse-to-fine schedule: four equal stages at `r_max, r_max/2, …`, the
/// last stage always at full resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolutionSchedule {
    pub r_max: u32,
    pub epochs: usize,
}

impl ResolutionSchedule {
    pub fn fixed(epochs: usize) -> Self {
        Self { r_max: 1, epochs }
    }

    /// Chooses `r_max` as the largest power of two up to `config.r_max_cap`
    /// for which `mean_tile_count · r²` stays within the threshold and the
    /// downsampled image keeps at least `min_side` pixels per side.
    ///
    /// Tiles of a downsampled render cover `r²` times more of the scene, so
    /// the full-resolution mean list length is scaled by `r²`.
    pub fn from_stats(mean_tile_count: f64, image_min_side: u32, min_side: u32, config: &TrainConfig) -> Self {
        if !config.resolution_schedule {
            return Self::fixed(config.epochs);
        }
        let mut r_max = 1;
        let mut r = 2;
        while r <= config.r_max_cap {
            let estimate = mean_tile_count * (r * r) as f64;
            if estimate > config.tile_count_threshold || image_min_side / r < min_side {
                break;
            }
            r_max = r;
            r *= 2;
        }
        Self {
            r_max,
            epochs: config.epochs,
        }
    }

    pub fn resolution_for_epoch(&self, epoch: usize) -> u32 {
        if self.epochs == 0 {
            return 1;
        }
        let stage = (epoch * RESOLUTION_STAGES / self.epochs).min(RESOLUTION_STAGES - 1);
        if stage == RESOLUTION_STAGES - 1 {
            return 1;
        }
        (self.r_max >> stage).max(1)
    }
}

/// `count` view indices drawn uniformly with replacement from `views`.
pub fn sample_epoch<R: Rng>(views: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    assert!(!views.is_empty(), "cannot sample from an empty split");
    (0..count).map(|_| views[rng.random_range(0..views.len())]).collect()
}
