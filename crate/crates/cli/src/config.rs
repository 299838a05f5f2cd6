//! The experiment config document: scene or dataset source, field shape,
//! training settings, and output location. Unknown keys are rejected and
//! every validation problem is reported before exiting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rayfield::field::{Aabb, VoxelField};
use rayfield::geometry::SceneSpec;
use rayfield::imaging::SUPPORTED_PATCH_SIZES;
use rayfield::trainer::TrainConfig;
use rayfield::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Procedural scene to generate (exactly one of `scene` /
    /// `dataset_path` must be present).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
    /// Directory holding transforms_train.json / transforms_test.json.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Worker threads; 0 means all cores. RAYFIELD_WORKERS overrides.
    #[serde(default)]
    pub workers: usize,
    /// Train view whose per-round overlays are written (index into the
    /// train split).
    #[serde(default)]
    pub overlay_view: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(flatten)]
    pub spec: SceneSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// Grid vertices per axis.
    pub resolution: u32,
    #[serde(default = "default_bounds_min")]
    pub bounds_min: [f64; 3],
    #[serde(default = "default_bounds_max")]
    pub bounds_max: [f64; 3],
}

fn default_bounds_min() -> [f64; 3] {
    [-1.0, -1.0, -1.0]
}

fn default_bounds_max() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl FieldConfig {
    pub fn build(&self) -> VoxelField {
        VoxelField::new(
            self.resolution,
            Aabb::new(Vec3::from(self.bounds_min), Vec3::from(self.bounds_max)),
        )
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("malformed config {}: {e}", path.display()))?;
        let problems = config.validate();
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(format!(
                "invalid config {}:\n  {}",
                path.display(),
                problems.join("\n  ")
            ))
        }
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match (&self.scene, &self.dataset_path) {
            (None, None) => {
                problems.push("one of 'scene' or 'dataset_path' is required".to_string())
            }
            (Some(_), Some(_)) => {
                problems.push("'scene' and 'dataset_path' are mutually exclusive".to_string())
            }
            _ => {}
        }
        if let Some(scene) = &self.scene {
            if scene.n_train == 0 || scene.n_test == 0 {
                problems.push("scene needs at least one train and one test view".to_string());
            }
            if scene.resolution < 8 {
                problems.push(format!(
                    "scene.resolution must be >= 8, got {}",
                    scene.resolution
                ));
            }
            if scene.spec.primitives.is_empty() {
                problems.push("scene.primitives must not be empty".to_string());
            }
        }
        if self.field.resolution < 2 {
            problems.push(format!(
                "field.resolution must be >= 2, got {}",
                self.field.resolution
            ));
        }
        for axis in 0..3 {
            if self.field.bounds_min[axis] >= self.field.bounds_max[axis] {
                problems.push("field bounds_min must be below bounds_max per axis".to_string());
                break;
            }
        }
        if !SUPPORTED_PATCH_SIZES.contains(&self.train.metric.patch) {
            problems.push(format!(
                "train.metric.patch must be one of {SUPPORTED_PATCH_SIZES:?}, got {}",
                self.train.metric.patch
            ));
        }
        if let Err(e) = self.train.validate() {
            problems.push(e);
        }
        if self.output_dir.as_os_str().is_empty() {
            problems.push("output_dir must not be empty".to_string());
        }
        problems
    }
}
