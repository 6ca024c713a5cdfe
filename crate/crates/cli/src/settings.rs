//! Training settings: defaults, then an optional TOML file, then flags.

use std::fs;
use std::path::Path;

use mixnet::arch::Variant;
use mixnet::augment::{AugOp, AugmentPolicy};
use mixnet::trainer::OptimConfig;
use mixnet::volume::Plane;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub variant: Variant,
    pub plane: Plane,
    pub seed: u64,
    /// Subject excluded from training and used for validation.
    pub holdout: Option<String>,
    /// Keep every n-th slice of each training subject.
    pub slice_stride: usize,
    /// Channels per level; `None` keeps the standard widths.
    pub width: Option<usize>,
    pub init_pool: bool,
    /// Augmentation operations; `None` selects the plane's default policy
    /// and an empty list disables augmentation.
    pub augment: Option<Vec<AugOp>>,
    pub optim: OptimConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            variant: Variant::V2,
            plane: Plane::Transverse,
            seed: 0,
            holdout: None,
            slice_stride: 1,
            width: None,
            init_pool: true,
            augment: None,
            optim: OptimConfig::default(),
        }
    }
}

impl TrainSettings {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn policy(&self) -> AugmentPolicy {
        match &self.augment {
            Some(ops) => AugmentPolicy { plane: self.plane, ops: ops.clone() },
            None => AugmentPolicy::default_for(self.plane),
        }
    }

    /// The same settings with the augmentation list spelled out, as echoed to
    /// the run directory.
    pub fn resolved(&self) -> Self {
        TrainSettings { augment: Some(self.policy().ops), ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.slice_stride == 0 {
            return Err(Failure::usage("slice_stride must be positive"));
        }
        if self.width == Some(0) {
            return Err(Failure::usage("width must be positive"));
        }
        self.optim.validate()?;
        self.policy().validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::usage(format!("cannot serialize settings: {e}")))
    }
}
