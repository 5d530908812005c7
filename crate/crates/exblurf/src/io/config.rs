//! Command configuration files (JSON) with field-level validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{BlurParams, CameraRing, SceneSpec};
use crate::train::TrainConfig;

/// `generate` command config: scene, camera ring, and blur magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub camera: CameraRing,
    pub n_views: usize,
    pub n_test_views: usize,
    pub blur: BlurParams,
    /// Sub-frame count for the reference blur quadrature.
    #[serde(default = "default_n_oracle")]
    pub n_oracle: usize,
}

fn default_n_oracle() -> usize {
    64
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate().map_err(|e| Error::Config(format!("scene: {e}")))?;
        self.camera.validate().map_err(|e| Error::Config(format!("camera: {e}")))?;
        if self.n_views < 2 {
            return Err(Error::Config("n_views must be >= 2".into()));
        }
        if self.n_oracle < 2 {
            return Err(Error::Config("n_oracle must be >= 2".into()));
        }
        if self.blur.bezier_order < 1 {
            return Err(Error::Config("blur.bezier_order must be >= 1".into()));
        }
        if !(self.blur.rot_max >= 0.0 && self.blur.trans_max >= 0.0) {
            return Err(Error::Config("blur magnitudes must be >= 0".into()));
        }
        Ok(())
    }
}

/// `train` command config: dataset location plus the training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCliConfig {
    pub dataset: String,
    pub train: TrainConfig,
}

impl TrainCliConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset path must not be empty".into()));
        }
        self.train.validate()
    }
}

/// Pose source for the `render` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseSource {
    /// Held-out test poses from the dataset manifest.
    Test,
    /// Sub-frame poses of every view's ground-truth trajectory.
    GtSubframes,
    /// Poses of each view's optimized trajectory at mid exposure.
    OptimizedMidpoints,
    /// An interpolated orbit around the scene at the mean camera radius.
    Orbit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderCliConfig {
    pub checkpoint: String,
    pub dataset: String,
    pub pose_source: PoseSource,
    #[serde(default = "default_orbit_frames")]
    pub orbit_frames: usize,
    /// Sub-frames per view when rendering gt-subframes.
    #[serde(default = "default_render_subframes")]
    pub n_subframes: usize,
}

fn default_orbit_frames() -> usize {
    8
}

fn default_render_subframes() -> usize {
    5
}

impl RenderCliConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint.is_empty() || self.dataset.is_empty() {
            return Err(Error::Config("checkpoint and dataset paths are required".into()));
        }
        if self.pose_source == PoseSource::Orbit && self.orbit_frames == 0 {
            return Err(Error::Config("orbit_frames must be >= 1".into()));
        }
        if self.pose_source == PoseSource::GtSubframes && self.n_subframes < 2 {
            return Err(Error::Config("n_subframes must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCliConfig {
    pub checkpoint: String,
    pub dataset: String,
}

impl EvalCliConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint.is_empty() || self.dataset.is_empty() {
            return Err(Error::Config("checkpoint and dataset paths are required".into()));
        }
        Ok(())
    }
}

/// `benchmark-memory` config: the sub-frame counts to sweep and the fixed
/// step shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_bench_batch")]
    pub batch_rays: usize,
    #[serde(default = "default_bench_grid")]
    pub grid_dims: [usize; 3],
    #[serde(default = "default_bench_image")]
    pub image_size: u32,
    #[serde(default = "default_bench_seed")]
    pub seed: u64,
    /// Optional second batch size for the linear-in-B check; defaults to
    /// twice `batch_rays`.
    #[serde(default)]
    pub batch_rays_doubled: Option<usize>,
}

fn default_n_values() -> Vec<usize> {
    vec![5, 11, 15, 19, 21]
}

fn default_bench_batch() -> usize {
    512
}

fn default_bench_grid() -> [usize; 3] {
    [16, 16, 16]
}

fn default_bench_image() -> u32 {
    32
}

fn default_bench_seed() -> u64 {
    0
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_values: default_n_values(),
            batch_rays: default_bench_batch(),
            grid_dims: default_bench_grid(),
            image_size: default_bench_image(),
            seed: default_bench_seed(),
            batch_rays_doubled: None,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.len() < 2 {
            return Err(Error::Config("n_values needs at least 2 entries".into()));
        }
        if self.n_values.iter().any(|&n| n < 2) {
            return Err(Error::Config("every n value must be >= 2".into()));
        }
        if self.batch_rays == 0 {
            return Err(Error::Config("batch_rays must be >= 1".into()));
        }
        Ok(())
    }
}
