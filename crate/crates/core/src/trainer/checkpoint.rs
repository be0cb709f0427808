use std::path::Path;

use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_pool, AdamState, LogRow, Trainer};
use crate::schedule::{ResolutionSchedule, TrainConfig};
use crate::scene::{Dataset, GaussianModel};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Raw model parameters in plain arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub means: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub raw_opacities: Vec<f64>,
    pub sh_dc: Vec<[f64; 3]>,
}

impl From<&GaussianModel> for ModelRecord {
    fn from(m: &GaussianModel) -> Self {
        Self {
            means: m.means.iter().map(|v| (*v).into()).collect(),
            log_scales: m.log_scales.iter().map(|v| (*v).into()).collect(),
            rotations: m.rotations.iter().map(|v| (*v).into()).collect(),
            raw_opacities: m.raw_opacities.clone(),
            sh_dc: m.sh_dc.iter().map(|v| (*v).into()).collect(),
        }
    }
}

impl ModelRecord {
    pub fn to_model(&self) -> Result<GaussianModel> {
        let model = GaussianModel {
            means: self.means.iter().map(|&v| Vector3::from(v)).collect(),
            log_scales: self.log_scales.iter().map(|&v| Vector3::from(v)).collect(),
            rotations: self.rotations.iter().map(|&v| Vector4::from(v)).collect(),
            raw_opacities: self.raw_opacities.clone(),
            sh_dc: self.sh_dc.iter().map(|&v| Vector3::from(v)).collect(),
        };
        model.validate().map_err(|e| Error::Checkpoint(format!("model: {e}")))?;
        Ok(model)
    }
}

/// Sampler state: seed plus stream position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
}

impl From<&ChaCha8Rng> for RngRecord {
    fn from(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }
}

impl RngRecord {
    fn to_rng(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub iter_in_epoch: usize,
    pub global_step: usize,
    pub epoch_order: Vec<usize>,
    pub rng: RngRecord,
    pub r_max: u32,
    pub spatial_lr_scale: f64,
    pub model: ModelRecord,
    pub adam: AdamState,
    pub log: Vec<LogRow>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl<'a> Trainer<'a> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: FORMAT_VERSION,
            config_hash: self.config.hash(),
            epoch: self.epoch,
            iter_in_epoch: self.iter_in_epoch,
            global_step: self.global_step,
            epoch_order: self.epoch_order.clone(),
            rng: (&self.rng).into(),
            r_max: self.schedule.r_max,
            spatial_lr_scale: self.lr_scale,
            model: (&self.model).into(),
            adam: self.adam.clone(),
            log: self.log.clone(),
        }
    }

    /// Continues a run. The config must hash equal to the one the checkpoint
    /// was taken under (thread count and timing capture may differ).
    pub fn resume(dataset: &'a Dataset, config: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.config_hash != config.hash() {
            return Err(Error::Checkpoint("config does not match the checkpoint".into()));
        }
        let model = ck.model.to_model()?;
        ck.adam.check_shapes(model.len())?;
        if ck.iter_in_epoch >= config.iterations_per_epoch.max(1)
            || (ck.iter_in_epoch > 0 && ck.epoch_order.len() != config.iterations_per_epoch)
            || ck.epoch_order.iter().any(|&v| v >= dataset.len())
        {
            return Err(Error::Checkpoint("inconsistent epoch position".into()));
        }
        Ok(Self {
            dataset,
            settings: config.render_settings(),
            rng: ck.rng.to_rng()?,
            lr_scale: ck.spatial_lr_scale,
            model,
            adam: ck.adam.clone(),
            schedule: ResolutionSchedule {
                r_max: ck.r_max,
                epochs: config.epochs,
            },
            epoch: ck.epoch,
            iter_in_epoch: ck.iter_in_epoch,
            global_step: ck.global_step,
            epoch_order: ck.epoch_order.clone(),
            log: ck.log.clone(),
            pool: build_pool(config.threads)?,
            config,
        })
    }
}
