use std::fs;
use std::path::{Path, PathBuf};

use mixnet::arch::{MixNet, NetConfig};
use mixnet::augment::expand_dataset;
use mixnet::metrics::{evaluate as score, foreground_classes, overall_score, EvalReport, ScoreWeights};
use mixnet::trainer::{predict_volume, write_log_csv, Checkpoint, EpochLog, Trainer};
use mixnet::verify::{failures, render, run_suite, Suite};
use mixnet::volume::{
    fuse_predictions, read_labels, read_probabilities, slice_stack, write_labels, write_probabilities,
    write_synthetic_dataset, DatasetManifest, FusionConfig, Plane, Role, Sample, SynthConfig, Volume,
};
use mixnet::RngSeed;
use serde_json::json;

use crate::failure::Failure;
use crate::settings::TrainSettings;
use crate::{EvaluateArgs, FuseArgs, GenerateArgs, PredictArgs, TrainArgs, VerifyArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn generate(a: GenerateArgs) -> Result<(), Failure> {
    if a.dims.len() != 3 || a.spacing.len() != 3 {
        return Err(Failure::usage("--dims and --spacing take three comma-separated values"));
    }
    let cfg = SynthConfig {
        dims: [a.dims[0], a.dims[1], a.dims[2]],
        spacing: [a.spacing[0], a.spacing[1], a.spacing[2]],
        n_classes: a.classes,
        noise_sigma: a.noise,
        bias_strength: a.bias,
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let m = write_synthetic_dataset(&a.out, &cfg, a.subjects, RngSeed(a.seed))?;
    println!("wrote {} subjects to {}", m.subjects.len(), a.out.display());
    Ok(())
}

fn resolve_train_settings(a: &TrainArgs) -> Result<TrainSettings, Failure> {
    let mut s = match &a.config {
        Some(p) => TrainSettings::from_file(p)?,
        None => TrainSettings::default(),
    };
    if let Some(v) = a.variant {
        s.variant = v;
    }
    if let Some(p) = a.plane {
        s.plane = p;
    }
    if a.holdout.is_some() {
        s.holdout = a.holdout.clone();
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.slice_stride {
        s.slice_stride = v;
    }
    if a.width.is_some() {
        s.width = a.width;
    }
    if a.no_augment {
        s.augment = Some(Vec::new());
    }
    let o = &mut s.optim;
    if let Some(v) = a.epochs {
        o.epochs = v;
    }
    if let Some(v) = a.batch_size {
        o.batch_size = v;
    }
    if let Some(v) = a.lr0 {
        o.lr0 = v;
    }
    if let Some(v) = a.momentum {
        o.momentum = v;
    }
    if let Some(v) = a.weight_decay {
        o.weight_decay = v;
    }
    if let Some(v) = a.reduction {
        o.reduction = v;
    }
    let s = s.resolved();
    s.validate()?;
    Ok(s)
}

fn normalized(vols: &[Volume]) -> Vec<Volume> {
    vols.iter().map(Volume::normalized).collect()
}

fn subject_slices(m: &DatasetManifest, id: &str, plane: Plane) -> Result<Vec<Sample>, Failure> {
    let s = m.load_subject(id)?;
    Ok(slice_stack(&normalized(&s.modalities), &s.labels, plane)?)
}

fn net_config(s: &TrainSettings, m: &DatasetManifest) -> NetConfig {
    let mut cfg = match s.width {
        Some(w) => NetConfig::with_width(s.variant, m.n_classes, w),
        None => NetConfig::standard(s.variant, m.n_classes),
    };
    cfg.n_modalities = m.modalities.len();
    cfg.init_pool = s.init_pool;
    cfg
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let settings = resolve_train_settings(&a)?;
    let manifest = DatasetManifest::load(&a.data)?;
    if let Some(h) = &settings.holdout {
        manifest.subject(h)?;
    }
    fs::create_dir_all(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    let mut trainer = if a.resume {
        let ck = Checkpoint::load(&ck_path)?;
        let saved: TrainSettings = serde_json::from_value(ck.meta["settings"].clone())
            .map_err(|e| Failure::data(format!("checkpoint settings: {e}")))?;
        if saved != settings {
            return Err(Failure::usage("resumed settings differ from the checkpoint's; pass the same flags and config"));
        }
        let log: Vec<EpochLog> = serde_json::from_value(ck.meta["log"].clone()).unwrap_or_default();
        let mut t = Trainer::from_checkpoint(ck)?;
        t.log = log;
        t
    } else {
        let net = MixNet::new(net_config(&settings, &manifest))?;
        Trainer::new(net, settings.optim.clone(), RngSeed(settings.seed))?
    };
    fs::write(a.out.join(CONFIG_FILE), settings.to_toml()?)?;

    let policy = settings.policy();
    let mut originals = Vec::new();
    for e in manifest.subjects.iter().filter(|e| e.role == Role::Train) {
        if settings.holdout.as_deref() == Some(e.id.as_str()) {
            continue;
        }
        let slices = subject_slices(&manifest, &e.id, settings.plane)?;
        originals.extend(slices.into_iter().skip(settings.slice_stride / 2).step_by(settings.slice_stride));
    }
    let train_set = expand_dataset(&originals, &policy, RngSeed(settings.seed).derive(&[2]))?;
    let val = match &settings.holdout {
        Some(h) => Some(subject_slices(&manifest, h, settings.plane)?),
        None => None,
    };
    println!(
        "training {} on {} slices ({} originals, augmentation {}), {} epochs",
        settings.variant,
        train_set.len(),
        originals.len(),
        policy.describe(),
        settings.optim.epochs
    );

    let k = manifest.n_classes;
    let log_path = a.out.join(LOG_FILE);
    let settings_json = serde_json::to_value(&settings)?;
    let stop = a.until_epoch.unwrap_or(usize::MAX).min(settings.optim.epochs);
    while trainer.epoch < stop {
        let row = trainer.run_epoch(&train_set, val.as_deref())?;
        let val = row.val_loss.map_or("-".to_string(), |v| format!("{v:.2}"));
        let dice: Vec<String> = row.dice.iter().map(|d| format!("{d:.4}")).collect();
        println!(
            "epoch {:>4}  lr {:.3e}  train {:.2}  val {val}  dice [{}]",
            row.epoch,
            row.lr,
            row.train_loss,
            dice.join(", ")
        );
        write_log_csv(&log_path, &trainer.log, k)?;
        let meta = json!({ "plane": settings.plane, "settings": settings_json, "log": trainer.log });
        trainer.save(&ck_path, meta)?;
    }
    println!("checkpoint: {}", ck_path.display());
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let plane = match a.plane {
        Some(p) => p,
        None => serde_json::from_value(ck.meta["plane"].clone())
            .map_err(|_| Failure::usage("checkpoint records no plane; pass --plane"))?,
    };
    let manifest = DatasetManifest::load(&a.data)?;
    let net = MixNet::new(ck.net.clone())?;
    ck.params.check_against(net.manifest())?;
    if net.config().n_classes != manifest.n_classes {
        return Err(Failure::data(format!(
            "checkpoint predicts {} classes, dataset has {}",
            net.config().n_classes,
            manifest.n_classes
        )));
    }
    let subject = manifest.load_subject(&a.subject)?;
    let probs = predict_volume(&net, &ck.params, &normalized(&subject.modalities), plane, a.batch)?;
    write_probabilities(&probs, &a.out)?;
    println!("{} probabilities for {} written to {}", plane, a.subject, a.out.display());
    Ok(())
}

fn parse_input(s: &str) -> Result<(Plane, PathBuf), Failure> {
    let (plane, path) =
        s.split_once('=').ok_or_else(|| Failure::usage(format!("input {s:?} is not PLANE=PATH")))?;
    Ok((plane.parse()?, PathBuf::from(path)))
}

pub fn fuse(a: FuseArgs) -> Result<(), Failure> {
    let cfg = FusionConfig::parse(&a.weights)?;
    let mut vols = Vec::new();
    for s in &a.inputs {
        let (plane, path) = parse_input(s)?;
        if vols.iter().any(|(p, _)| *p == plane) {
            return Err(Failure::usage(format!("plane {plane} given twice")));
        }
        vols.push((plane, read_probabilities(&path)?));
    }
    let refs: Vec<_> = vols.iter().map(|(p, v)| (*p, v)).collect();
    let labels = fuse_predictions(&refs, &cfg)?;
    write_labels(&labels, &a.out)?;
    println!("fused {} planes into {}", refs.len(), a.out.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.truth)?;
    let k = match a.classes {
        Some(k) => k,
        None => pred.data.iter().chain(&truth.data).copied().max().map_or(2, |m| m as usize + 1).max(2),
    };
    pred.check_classes(k)?;
    truth.check_classes(k)?;
    let classes = foreground_classes(k);
    let mut report = score(&pred, &truth, &classes, a.hd_mode)?;
    let weights = match &a.score_weights {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Failure::usage(format!("score weights {}: {e}", p.display())))?,
        None => ScoreWeights::placeholder(classes.iter().map(|(_, n)| n.as_str())),
    };
    report.overall = Some(overall_score(&report, &weights)?);
    let table = EvalReport::table(&[("result", &report)]);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    fs::write(a.out.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let suites = if a.suite.is_empty() { Suite::ALL.to_vec() } else { a.suite.clone() };
    let mut reports = Vec::new();
    for s in suites {
        reports.push(run_suite(s, RngSeed(a.seed))?);
    }
    print!("{}", render(&reports));
    let summary = json!({
        "passed": reports.iter().all(|r| r.passed),
        "failures": failures(&reports),
        "suites": reports,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    println!("{text}");
    if let Some(p) = &a.json {
        write_text(p, &text)?;
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::verify("verification failed"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
