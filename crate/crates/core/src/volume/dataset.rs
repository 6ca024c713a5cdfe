//! Dataset manifests: which files hold each subject's modalities and labels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngSeed;

use super::io::{read_labels, read_volume, write_labels, write_volume};
use super::synth::{generate_synthetic, Subject, SynthConfig, MODALITY_NAMES};

pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    #[serde(default)]
    pub role: Role,
    /// Header paths, relative to the manifest directory, in modality order.
    pub modalities: Vec<PathBuf>,
    pub labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_classes: usize,
    pub modalities: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Directory the manifest was read from; relative paths resolve here.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Read `path`, which may be the manifest file or its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file)
            .map_err(|e| Error::Data(format!("cannot read dataset manifest {}: {e}", file.display())))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format { path: file.clone(), msg: e.to_string() })?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let file = dir.as_ref().join(MANIFEST_FILE);
        fs::write(&file, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Data(format!("dataset declares {} classes", self.n_classes)));
        }
        for s in &self.subjects {
            if s.modalities.len() != self.modalities.len() {
                return Err(Error::Data(format!(
                    "subject {} lists {} modalities, dataset has {}",
                    s.id,
                    s.modalities.len(),
                    self.modalities.len()
                )));
            }
        }
        Ok(())
    }

    pub fn subject(&self, id: &str) -> Result<&SubjectEntry> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Data(format!("subject {id:?} not in dataset")))
    }

    /// Read a subject's volumes and check label ids against the class count.
    pub fn load_subject(&self, id: &str) -> Result<Subject> {
        let entry = self.subject(id)?;
        let modalities =
            entry.modalities.iter().map(|p| read_volume(self.root.join(p))).collect::<Result<Vec<_>>>()?;
        let labels = read_labels(self.root.join(&entry.labels))?;
        labels.check_classes(self.n_classes)?;
        for v in &modalities {
            v.geometry.ensure_same_dims(&labels.geometry)?;
        }
        Ok(Subject { modalities, labels })
    }
}

/// Generate `n_subjects` phantoms under `dir` and write their manifest.
/// Subject `i` is drawn from `seed.derive([i])`.
pub fn write_synthetic_dataset(
    dir: impl AsRef<Path>,
    cfg: &SynthConfig,
    n_subjects: usize,
    seed: RngSeed,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut subjects = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        let id = format!("subject-{:02}", i + 1);
        let s = generate_synthetic(cfg, seed.derive(&[i as u64]))?;
        let mut paths = Vec::new();
        for v in &s.modalities {
            let rel = PathBuf::from(&id).join(format!("{}.json", v.modality));
            write_volume(v, dir.join(&rel))?;
            paths.push(rel);
        }
        let labels = PathBuf::from(&id).join("labels.json");
        write_labels(&s.labels, dir.join(&labels))?;
        subjects.push(SubjectEntry { id, role: Role::Train, modalities: paths, labels });
    }
    let manifest = DatasetManifest {
        version: 1,
        n_classes: cfg.n_classes,
        modalities: MODALITY_NAMES.iter().map(|s| s.to_string()).collect(),
        subjects,
        synthetic: Some(cfg.clone()),
        seed: Some(seed.0),
        root: dir.to_path_buf(),
    };
    manifest.save(dir)?;
    Ok(manifest)
}
