//! Mini-batch training over 2-D slice samples.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arch::{MixNet, ParamStore};
use crate::autodiff::loss::softmax_cross_entropy_forward;
use crate::autodiff::{Graph, Reduction};
use crate::error::{Error, Result};
use crate::tensor::{RngSeed, Shape, Tensor};
use crate::volume::Sample;

use super::checkpoint::Checkpoint;
use super::optim::{lr_schedule, OptimConfig, Optimizer};

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over training slices of the per-slice summed cross-entropy.
    pub train_loss: f64,
    /// Same quantity over the validation slices.
    pub val_loss: Option<f64>,
    /// Foreground Dice per class `1..K` over all validation pixels.
    pub dice: Vec<f64>,
}

/// Pack samples into an `(N, H, W, C)` tensor and flat labels.
pub fn make_batch(samples: &[&Sample], n_classes: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (h, w, c) = (first.h, first.w, first.channels);
    let mut image = Vec::with_capacity(samples.len() * h * w * c);
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.h, s.w, s.channels) != (h, w, c) {
            return Err(Error::Data(format!(
                "batch mixes {}x{}x{} and {h}x{w}x{c} samples",
                s.h, s.w, s.channels
            )));
        }
        if let Some(&l) = s.labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Data(format!("label {l} is not below the class count {n_classes}")));
        }
        image.extend_from_slice(&s.image);
        labels.extend(s.labels.iter().map(|&l| l as usize));
    }
    Ok((Tensor::from_vec(Shape::nhwc(samples.len(), h, w, c)?, image)?, labels))
}

/// Summed loss and confusion counts of a network over `samples`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SliceScores {
    pub n_samples: usize,
    pub loss_sum: f64,
    /// Per class: (predicted, reference, both).
    pub counts: Vec<(usize, usize, usize)>,
}

impl SliceScores {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.n_samples.max(1) as f64
    }

    /// Dice of classes `1..K`; two empty masks count as 1.
    pub fn foreground_dice(&self) -> Vec<f64> {
        self.counts
            .iter()
            .skip(1)
            .map(|&(p, t, b)| if p + t == 0 { 1.0 } else { 2.0 * b as f64 / (p + t) as f64 })
            .collect()
    }

    pub fn mean_foreground_dice(&self) -> f64 {
        let d = self.foreground_dice();
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }
}

/// Forward `samples` in batches and score the argmax predictions.
pub fn score_samples(net: &MixNet, params: &ParamStore<f32>, samples: &[Sample], batch: usize) -> Result<SliceScores> {
    let k = net.config().n_classes;
    let mut s = SliceScores { counts: vec![(0, 0, 0); k], ..Default::default() };
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, labels) = make_batch(&refs, k)?;
        let logits = net.forward(params, &x)?;
        let ce = softmax_cross_entropy_forward(&logits, &labels, Reduction::Sum)?;
        if !ce.loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss is {}", ce.loss)));
        }
        s.loss_sum += ce.loss;
        s.n_samples += chunk.len();
        for (px, &t) in ce.probs.data().chunks_exact(k).zip(&labels) {
            let p = argmax(px);
            s.counts[p].0 += 1;
            s.counts[t].1 += 1;
            if p == t {
                s.counts[p].2 += 1;
            }
        }
    }
    Ok(s)
}

/// Index of the largest value; ties go to the lower index.
fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Network, parameters and optimizer state of one training run.
pub struct Trainer {
    pub net: MixNet,
    pub params: ParamStore<f32>,
    pub opt: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: RngSeed,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    /// Fresh run: parameters from `seed.derive([0])`, epoch `e` shuffled by
    /// `seed.derive([1, e])`.
    pub fn new(net: MixNet, optim: OptimConfig, seed: RngSeed) -> Result<Self> {
        let params = net.init_params(seed.derive(&[0]))?;
        let opt = Optimizer::new(optim, &params)?;
        Ok(Trainer { net, params, opt, epoch: 0, seed, log: Vec::new() })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let net = MixNet::new(ck.net.clone())?;
        ck.params.check_against(net.manifest())?;
        ck.optim.validate()?;
        Ok(Trainer {
            opt: ck.optimizer(),
            params: ck.params,
            net,
            epoch: ck.epoch,
            seed: RngSeed(ck.seed),
            log: Vec::new(),
        })
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint::from_optimizer(&self.net, &self.params, &self.opt, self.epoch, self.seed.0, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
        self.checkpoint(meta).save(path)
    }

    /// One gradient step on `samples`. Returns the batch loss.
    pub fn step(&mut self, samples: &[&Sample], lr: f64) -> Result<f64> {
        let k = self.net.config().n_classes;
        let (x, labels) = make_batch(samples, k)?;
        let mut g = Graph::<f32>::new();
        let xi = g.input(x);
        let (wired, nodes) = self.net.build(&mut g, xi, &self.params, true)?;
        let loss = g.softmax_cross_entropy(wired.logits, &labels, self.opt.cfg.reduction)?;
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {value} at epoch {}", self.epoch)));
        }
        let mut grads = g.backward(loss)?;
        let mut by_name = BTreeMap::new();
        for (name, id) in nodes {
            if let Some(t) = grads.take(id) {
                by_name.insert(name, t);
            }
        }
        self.opt.step(&mut self.params, &by_name, lr)?;
        Ok(value)
    }

    /// Train one epoch over shuffled `train` and score `val` afterwards.
    pub fn run_epoch(&mut self, train: &[Sample], val: Option<&[Sample]>) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let cfg = self.opt.cfg.clone();
        if self.epoch >= cfg.epochs {
            return Err(Error::Config(format!("run already finished {} epochs", cfg.epochs)));
        }
        let lr = lr_schedule(self.epoch, &cfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.seed.derive(&[1, self.epoch as u64]).rng());
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let l = self.step(&batch, lr)?;
            total += match cfg.reduction {
                Reduction::Sum => l,
                Reduction::Mean => l * batch.iter().map(|s| s.h * s.w).sum::<usize>() as f64,
            };
        }
        let (val_loss, dice) = match val {
            Some(v) if !v.is_empty() => {
                let s = score_samples(&self.net, &self.params, v, cfg.batch_size)?;
                (Some(s.mean_loss()), s.foreground_dice())
            }
            _ => (None, Vec::new()),
        };
        let row = EpochLog { epoch: self.epoch, lr, train_loss: total / train.len() as f64, val_loss, dice };
        self.epoch += 1;
        self.log.push(row.clone());
        Ok(row)
    }

    /// Run the remaining epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.opt.cfg.epochs {
            let row = self.run_epoch(train, val)?;
            on_epoch(self, &row)?;
        }
        Ok(())
    }
}

/// Write the log as CSV: `epoch,lr,train_loss,val_loss,dice_1..dice_{K-1}`.
/// A missing validation loss is an empty field.
pub fn write_log_csv(path: impl AsRef<Path>, rows: &[EpochLog], n_classes: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    let mut header = vec!["epoch".to_string(), "lr".into(), "train_loss".into(), "val_loss".into()];
    header.extend((1..n_classes).map(|c| format!("dice_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string()];
        rec.push(r.val_loss.map_or(String::new(), |v| v.to_string()));
        for c in 0..n_classes.saturating_sub(1) {
            rec.push(r.dice.get(c).map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{NetConfig, Variant};

    fn tiny_net() -> MixNet {
        let mut cfg = NetConfig::with_width(Variant::V2, 3, 4);
        cfg.init_pool = false;
        MixNet::new(cfg).unwrap()
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let (h, w) = (16, 16);
                let labels: Vec<u8> = (0..h * w).map(|p| (((p / w) + i) / 6 % 3) as u8).collect();
                let image = labels
                    .iter()
                    .flat_map(|&l| [l as f32 - 1.0, 0.5 * l as f32, 0.2 * (i as f32)])
                    .collect();
                Sample::new(h, w, 3, image, labels).unwrap()
            })
            .collect()
    }

    fn optim(epochs: usize) -> OptimConfig {
        OptimConfig { lr0: 1e-4, momentum: 0.9, epochs, batch_size: 2, ..OptimConfig::default() }
    }

    #[test]
    fn zero_lr_leaves_params_untouched() {
        let mut t = Trainer::new(tiny_net(), OptimConfig { lr0: 0.0, ..optim(3) }, RngSeed(3)).unwrap();
        let before = t.params.clone();
        t.fit(&samples(3), None, |_, _| Ok(())).unwrap();
        assert_eq!(t.params, before);
        assert_eq!(t.log.len(), 3);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = samples(5);
        let val = samples(2);
        let mut full = Trainer::new(tiny_net(), optim(4), RngSeed(9)).unwrap();
        full.fit(&data, Some(&val), |_, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut first = Trainer::new(tiny_net(), optim(4), RngSeed(9)).unwrap();
        first.run_epoch(&data, Some(&val)).unwrap();
        first.run_epoch(&data, Some(&val)).unwrap();
        first.save(&path, serde_json::Value::Null).unwrap();
        let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
        resumed.fit(&data, Some(&val), |_, _| Ok(())).unwrap();

        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.opt.velocity, full.opt.velocity);
        assert_eq!(resumed.log[..], full.log[2..]);
    }

    #[test]
    fn loss_decreases_and_logs() {
        let data = samples(4);
        let mut t = Trainer::new(tiny_net(), optim(8), RngSeed(1)).unwrap();
        t.fit(&data, Some(&data), |_, _| Ok(())).unwrap();
        let first = t.log[0].train_loss;
        let last = t.log.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        assert_eq!(t.log[0].dice.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_log_csv(&p, &t.log, 3).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,val_loss,dice_1,dice_2\n"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn bad_inputs() {
        let mut t = Trainer::new(tiny_net(), optim(2), RngSeed(1)).unwrap();
        assert!(matches!(t.run_epoch(&[], None), Err(Error::Data(_))));
        let mut s = samples(1);
        s[0].labels[0] = 3;
        assert!(matches!(t.run_epoch(&s, None), Err(Error::Data(_))));
    }

    #[test]
    fn nan_input_aborts() {
        let mut t = Trainer::new(tiny_net(), optim(2), RngSeed(1)).unwrap();
        let mut s = samples(1);
        s[0].image[5] = f32::NAN;
        assert!(matches!(t.run_epoch(&s, None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn scores_count_pixels() {
        let net = tiny_net();
        let params = net.init_params(RngSeed(2)).unwrap();
        let s = score_samples(&net, &params, &samples(3), 2).unwrap();
        assert_eq!(s.n_samples, 3);
        assert_eq!(s.counts.iter().map(|c| c.0).sum::<usize>(), 3 * 256);
        assert_eq!(s.counts.iter().map(|c| c.1).sum::<usize>(), 3 * 256);
    }
}
