//! Experiment configuration: a single TOML file describing the use case
//! (organs, grid, noise, thresholds, network, training) plus dataset
//! paths, output directory, method selection and bootstrap settings.
//!
//! Environment variables override exactly two keys: `OUT_DIR` replaces
//! `experiment.out_dir` and `THREADS` replaces `experiment.threads`.

use crate::corrupt::NoiseSpec;
use crate::error::{Error, Result};
use crate::nets::{NetworkKind, NetworkSpec};
use crate::phantom::AnatomyLayout;
use crate::voxelgrid::Spacing;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentSection {
    pub name: String,
    pub out_dir: PathBuf,
    /// Methods to train/score: any of dae, vae_single, vae_multi,
    /// statistical.
    pub methods: Vec<String>,
    /// Worker cap for case-parallel stages; 0 means all available cores.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSection {
    /// Organ names in channel order.
    pub organs: Vec<String>,
    /// Common spacing in mm.
    pub spacing: [f64; 3],
    /// Common spatial size in voxels.
    pub size: [usize; 3],
    /// Optional crop about the foreground center of mass, applied after
    /// padding (the CT-style bounding-box crop).
    #[serde(default)]
    pub crop_size: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomSection {
    pub layout: AnatomyLayout,
    pub jitter: f64,
    pub train_cases: usize,
    pub val_cases: usize,
    pub test_cases: usize,
    /// Fraction of (case, organ) pairs degraded in the test set.
    pub degraded_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BootstrapSection {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    pub seed: u64,
}

fn default_resamples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DataSection {
    /// Directory holding generated datasets (written by `gen`, read by
    /// `train`/`score`/`eval`).
    pub dir: PathBuf,
}

/// The parsed experiment file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub phantom: PhantomSection,
    /// Per-organ corruption hyperparameters, keyed by organ name.
    pub noise: BTreeMap<String, NoiseSpec>,
    /// Per-organ accuracy thresholds on true Dice (label 1 iff below).
    pub thresholds: BTreeMap<String, f64>,
    pub network: NetworkSpec,
    pub train: TrainSection,
    pub bootstrap: BootstrapSection,
    pub data: DataSection,
}

/// The merged per-use-case view consumed by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct UseCaseConfig {
    pub organs: Vec<String>,
    pub spacing: Spacing,
    pub size: (usize, usize, usize),
    pub crop_size: Option<(usize, usize, usize)>,
    pub noise: BTreeMap<String, NoiseSpec>,
    pub thresholds: BTreeMap<String, f64>,
    pub network: NetworkSpec,
    pub train: TrainParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
}

impl UseCaseConfig {
    /// Grid dims after the optional crop; the shape networks are built for.
    pub fn network_dims(&self) -> (usize, usize, usize) {
        self.crop_size.unwrap_or(self.size)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        if let Ok(out_dir) = std::env::var("OUT_DIR") {
            cfg.experiment.out_dir = PathBuf::from(out_dir);
        }
        if let Ok(threads) = std::env::var("THREADS") {
            cfg.experiment.threads = threads
                .parse()
                .map_err(|_| Error::ConfigParse(format!("bad THREADS value {threads:?}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.organs.is_empty() {
            return Err(Error::ConfigParse("grid.organs must be nonempty".into()));
        }
        let layout_names = self.phantom.layout.organ_names();
        if self.grid.organs != layout_names {
            return Err(Error::ConfigParse(format!(
                "grid.organs {:?} must match the phantom layout organs {:?}",
                self.grid.organs, layout_names
            )));
        }
        Spacing::new(self.grid.spacing[0], self.grid.spacing[1], self.grid.spacing[2])
            .map_err(|e| Error::ConfigParse(e.to_string()))?;
        for (organ, t) in &self.thresholds {
            if !(0.0 < *t && *t < 1.0) {
                return Err(Error::ConfigParse(format!(
                    "threshold for {organ} must lie in (0,1), got {t}"
                )));
            }
        }
        for organ in &self.grid.organs {
            if !self.thresholds.contains_key(organ) {
                return Err(Error::ConfigParse(format!("missing threshold for {organ}")));
            }
            if !self.noise.contains_key(organ) {
                return Err(Error::ConfigParse(format!("missing noise spec for {organ}")));
            }
            self.noise[organ]
                .validate()
                .map_err(|e| Error::ConfigParse(format!("noise for {organ}: {e}")))?;
        }
        self.network
            .validate()
            .map_err(|e| Error::ConfigParse(e.to_string()))?;
        let organ_count = self.grid.organs.len();
        match self.network.kind {
            NetworkKind::Dae | NetworkKind::VaeMulti => {
                if self.network.in_channels != organ_count
                    || self.network.out_channels != organ_count
                {
                    return Err(Error::ConfigParse(format!(
                        "network in/out channels must equal the organ count {organ_count}"
                    )));
                }
            }
            NetworkKind::VaeSingle => {
                if self.network.in_channels != 1 || self.network.out_channels != 1 {
                    return Err(Error::ConfigParse(
                        "vae_single trains one single-channel model per organ".into(),
                    ));
                }
            }
        }
        for m in &self.experiment.methods {
            if !matches!(m.as_str(), "dae" | "vae_single" | "vae_multi" | "statistical") {
                return Err(Error::ConfigParse(format!("unknown method {m:?}")));
            }
        }
        if self.train.batch_size == 0 || self.train.max_epochs == 0 {
            return Err(Error::ConfigParse(
                "train.batch_size and train.max_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn use_case(&self) -> UseCaseConfig {
        UseCaseConfig {
            organs: self.grid.organs.clone(),
            spacing: Spacing::new(
                self.grid.spacing[0],
                self.grid.spacing[1],
                self.grid.spacing[2],
            )
            .expect("validated"),
            size: (self.grid.size[0], self.grid.size[1], self.grid.size[2]),
            crop_size: self.grid.crop_size.map(|c| (c[0], c[1], c[2])),
            noise: self.noise.clone(),
            thresholds: self.thresholds.clone(),
            network: self.network.clone(),
            train: TrainParams {
                batch_size: self.train.batch_size,
                max_epochs: self.train.max_epochs,
                patience: self.train.patience,
                lr: self.train.lr,
                seed: self.train.seed,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DESK_TOML: &str = r#"
[experiment]
name = "pelvis-desk"
out_dir = "out"
methods = ["dae", "statistical"]

[grid]
organs = ["bladder", "femoral_head_l", "femoral_head_r", "penile_bulb", "prostate", "rectum", "urethra"]
spacing = [1.0, 1.0, 1.0]
size = [32, 32, 32]

[phantom]
layout = "pelvis_like7"
jitter = 0.02
train_cases = 16
val_cases = 4
test_cases = 100
degraded_fraction = 0.3
seed = 11

[noise.bladder]
max_patches = 4
min_patch = 1
max_patch = 20
center_sampling = "foreground"

[noise.femoral_head_l]
max_patches = 4
min_patch = 1
max_patch = 16
center_sampling = "foreground"

[noise.femoral_head_r]
max_patches = 4
min_patch = 1
max_patch = 16
center_sampling = "foreground"

[noise.penile_bulb]
max_patches = 3
min_patch = 1
max_patch = 12
center_sampling = "foreground"

[noise.prostate]
max_patches = 4
min_patch = 1
max_patch = 14
center_sampling = "foreground"

[noise.rectum]
max_patches = 4
min_patch = 1
max_patch = 14
center_sampling = "foreground"

[noise.urethra]
max_patches = 3
min_patch = 1
max_patch = 10
center_sampling = "foreground"

[thresholds]
bladder = 0.86
femoral_head_l = 0.92
femoral_head_r = 0.92
penile_bulb = 0.51
prostate = 0.70
rectum = 0.78
urethra = 0.28

[network]
kind = "dae"
in_channels = 7
out_channels = 7
channels = [8, 16, 32]
strides = [2, 2]
num_res_units = 2

[train]
batch_size = 4
max_epochs = 200
patience = 25
seed = 7

[bootstrap]
resamples = 1000
seed = 13

[data]
dir = "out/data"
"#;

    #[test]
    fn desk_config_parses_and_validates() {
        let cfg: ExperimentConfig = toml::from_str(DESK_TOML).unwrap();
        cfg.validate().unwrap();
        let uc = cfg.use_case();
        assert_eq!(uc.organs.len(), 7);
        assert_eq!(uc.network_dims(), (32, 32, 32));
        assert_eq!(uc.train.lr, 1e-3);
        assert_eq!(cfg.bootstrap.resamples, 1000);
    }

    #[test]
    fn organ_network_mismatch_is_rejected() {
        let mut cfg: ExperimentConfig = toml::from_str(DESK_TOML).unwrap();
        cfg.network.in_channels = 3;
        assert!(matches!(cfg.validate(), Err(Error::ConfigParse(_))));
    }

    #[test]
    fn missing_threshold_is_rejected() {
        let mut cfg: ExperimentConfig = toml::from_str(DESK_TOML).unwrap();
        cfg.thresholds.remove("urethra");
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg: ExperimentConfig = toml::from_str(DESK_TOML).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
