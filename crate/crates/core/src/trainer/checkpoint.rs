//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "MIXNETCK"
//! version  u32 LE
//! hlen     u64 LE   length of the JSON header
//! header   hlen bytes of JSON (configs, epoch, seed, manifest, metadata)
//! params   f32 LE, manifest order
//! velocity f32 LE, manifest order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{Manifest, MixNet, NetConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::optim::{OptimConfig, Optimizer};

pub const MAGIC: &[u8; 8] = b"MIXNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    optim: OptimConfig,
    epoch: usize,
    seed: u64,
    manifest: Manifest,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub optim: OptimConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub params: ParamStore<f32>,
    pub velocity: ParamStore<f32>,
    /// Free-form run information (plane, augmentation policy, ...).
    pub meta: serde_json::Value,
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

impl Checkpoint {
    pub fn from_optimizer(
        net: &MixNet,
        params: &ParamStore<f32>,
        opt: &Optimizer,
        epoch: usize,
        seed: u64,
        meta: serde_json::Value,
    ) -> Self {
        Checkpoint {
            net: net.config().clone(),
            optim: opt.cfg.clone(),
            epoch,
            seed,
            params: params.clone(),
            velocity: opt.velocity.clone(),
            meta,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer { cfg: self.optim.clone(), velocity: self.velocity.clone() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let manifest = MixNet::new(self.net.clone())?.manifest().clone();
        self.params.check_against(&manifest)?;
        self.velocity.check_against(&manifest)?;
        let header = Header {
            net: self.net.clone(),
            optim: self.optim.clone(),
            epoch: self.epoch,
            seed: self.seed,
            manifest: manifest.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(20 + json.len() + 8 * manifest.total());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for store in [&self.params, &self.velocity] {
            for p in manifest.iter() {
                for v in store.require(&p.name)?.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt_err(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fmt_err(path, format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(fmt_err(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| fmt_err(path, e.to_string()))?;
        let net = MixNet::new(header.net.clone())?;
        if net.manifest() != &header.manifest {
            return Err(fmt_err(path, "stored manifest does not match the network configuration"));
        }
        let mut data = &body[hlen..];
        let expected = 2 * 4 * header.manifest.total();
        if data.len() != expected {
            return Err(fmt_err(path, format!("parameter block holds {} bytes, expected {expected}", data.len())));
        }
        let mut read_store = || -> Result<ParamStore<f32>> {
            let mut store = ParamStore::new();
            for p in header.manifest.iter() {
                let n = p.count();
                let vals = data[..4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                data = &data[4 * n..];
                store.insert(p.name.clone(), Tensor::from_vec(p.shape.clone(), vals)?);
            }
            Ok(store)
        };
        let params = read_store()?;
        let velocity = read_store()?;
        Ok(Checkpoint {
            net: header.net,
            optim: header.optim,
            epoch: header.epoch,
            seed: header.seed,
            params,
            velocity,
            meta: header.meta,
        })
    }
}
