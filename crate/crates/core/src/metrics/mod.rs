//! Overlap, boundary-distance and volume agreement between segmentations.
//!
//! Conventions for empty masks: Dice and volumetric similarity of two empty
//! masks are 1; HD95 with an empty mask is undefined.

pub mod hausdorff;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::volume::LabelVolume;

pub use hausdorff::{hd95, HdMode};

fn counts(pred: &[bool], truth: &[bool]) -> Result<(usize, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(shape_err!("masks have {} and {} voxels", pred.len(), truth.len()));
    }
    let (mut a, mut b, mut both) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        a += p as usize;
        b += t as usize;
        both += (p && t) as usize;
    }
    Ok((a, b, both))
}

/// `2 |A n B| / (|A| + |B|)`.
pub fn dice(pred: &[bool], truth: &[bool]) -> Result<f64> {
    let (a, b, both) = counts(pred, truth)?;
    Ok(if a + b == 0 { 1.0 } else { 2.0 * both as f64 / (a + b) as f64 })
}

/// `1 - ||A| - |B|| / (|A| + |B|)`.
pub fn volumetric_similarity(pred: &[bool], truth: &[bool]) -> Result<f64> {
    let (a, b, _) = counts(pred, truth)?;
    Ok(if a + b == 0 { 1.0 } else { 1.0 - a.abs_diff(b) as f64 / (a + b) as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub name: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub vs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub hd_mode: HdMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall: Option<f64>,
}

/// Weights of one class in the overall score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub dice: f64,
    pub hd95: f64,
    pub vs: f64,
}

/// Weighted sum of per-class metrics. HD95 enters as
/// `1 / (1 + hd95 / hd_scale)`, which is 1 for a perfect boundary and falls
/// towards 0 as the distance grows; an undefined HD95 contributes 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub hd_scale_mm: f64,
    /// Keyed by class name.
    pub classes: BTreeMap<String, ClassWeights>,
}

impl ScoreWeights {
    /// Equal weights on every metric of every named class, with a 1 mm HD
    /// scale. This is a placeholder, not the weighting of any existing
    /// benchmark.
    pub fn placeholder<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let classes: BTreeMap<_, _> =
            names.into_iter().map(|n| (n.to_string(), ClassWeights { dice: 1.0, hd95: 1.0, vs: 1.0 })).collect();
        ScoreWeights { hd_scale_mm: 1.0, classes }
    }
}

pub fn hd_transform(hd: Option<f64>, scale: f64) -> f64 {
    hd.map_or(0.0, |d| 1.0 / (1.0 + d / scale))
}

pub fn overall_score(report: &EvalReport, weights: &ScoreWeights) -> Result<f64> {
    if !(weights.hd_scale_mm > 0.0) {
        return Err(Error::Config("hd_scale_mm must be positive".into()));
    }
    let mut total = 0.0;
    for c in &report.classes {
        let w = weights
            .classes
            .get(&c.name)
            .ok_or_else(|| Error::Config(format!("no score weights for class {}", c.name)))?;
        total += w.dice * c.dice + w.hd95 * hd_transform(c.hd95, weights.hd_scale_mm) + w.vs * c.vs;
    }
    Ok(total)
}

/// Metrics for each listed class. `names` defaults to `class-<id>`.
pub fn evaluate(
    pred: &LabelVolume,
    truth: &LabelVolume,
    classes: &[(u8, String)],
    mode: HdMode,
) -> Result<EvalReport> {
    pred.geometry.ensure_same_dims(&truth.geometry)?;
    let dims = truth.geometry.dims;
    let spacing = truth.geometry.spacing;
    let mut out = Vec::with_capacity(classes.len());
    for (class, name) in classes {
        let p = pred.mask(*class);
        let t = truth.mask(*class);
        let hd = match hd95(&p, &t, dims, spacing, mode) {
            Ok(v) => Some(v),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        out.push(ClassMetrics {
            class: *class,
            name: name.clone(),
            dice: dice(&p, &t)?,
            hd95: hd,
            vs: volumetric_similarity(&p, &t)?,
        });
    }
    Ok(EvalReport { classes: out, hd_mode: mode, overall: None })
}

/// Foreground classes `1..n_classes` with default names.
pub fn foreground_classes(n_classes: usize) -> Vec<(u8, String)> {
    (1..n_classes).map(|c| (c as u8, format!("class-{c}"))).collect()
}

impl EvalReport {
    pub fn mean_dice(&self) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.classes.iter().map(|c| c.dice).sum::<f64>() / self.classes.len() as f64
    }

    /// Rows of `(label, report)` in a grid with one Dice/HD/VS column group
    /// per class. All reports must list the same classes.
    pub fn table(rows: &[(&str, &EvalReport)]) -> String {
        let Some((_, first)) = rows.first() else {
            return String::new();
        };
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
        let group_w = 3 * 8 + 2;
        let mut s = String::new();
        let _ = write!(s, "{:label_w$}", "");
        for c in &first.classes {
            let _ = write!(s, "  {:^group_w$}", c.name);
        }
        s.push('\n');
        let _ = write!(s, "{:label_w$}", "");
        for _ in &first.classes {
            let _ = write!(s, "  {:>8} {:>8} {:>8}", "Dice", "HD", "VS");
        }
        s.push('\n');
        for (label, r) in rows {
            let _ = write!(s, "{label:label_w$}");
            for c in &r.classes {
                let hd = c.hd95.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                let _ = write!(s, "  {:>8.4} {:>8} {:>8.4}", c.dice, hd, c.vs);
            }
            if let Some(o) = r.overall {
                let _ = write!(s, "  overall {o:.4}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    #[test]
    fn dice_examples() {
        let a = [true, true, true, true, false, false, false, false];
        let b = [true, true, false, false, true, true, false, false];
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = [false, false, false, false, true, true, true, true];
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert_eq!(dice(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert!(matches!(dice(&a, &[true]), Err(Error::Shape(_))));
    }

    #[test]
    fn vs_examples() {
        let mut a = vec![false; 200];
        let mut b = vec![false; 200];
        a[..100].fill(true);
        b[150..].fill(true);
        assert!((volumetric_similarity(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(volumetric_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(volumetric_similarity(&a, &[false; 200]).unwrap(), 0.0);
    }

    fn labels(data: Vec<u8>) -> LabelVolume {
        LabelVolume::new(Geometry::new([2, 2, 2], [1.0; 3]).unwrap(), data).unwrap()
    }

    #[test]
    fn evaluate_identity_and_missing_class() {
        let t = labels(vec![0, 1, 1, 2, 2, 2, 0, 0]);
        let r = evaluate(&t, &t, &foreground_classes(4), HdMode::Max).unwrap();
        for c in &r.classes[..2] {
            assert_eq!((c.dice, c.hd95, c.vs), (1.0, Some(0.0), 1.0));
        }
        // Class 3 is absent from both: Dice and VS are 1, HD95 undefined.
        assert_eq!((r.classes[2].dice, r.classes[2].hd95), (1.0, None));
        let table = EvalReport::table(&[("identity", &r)]);
        assert!(table.contains("class-1") && table.contains("n/a"));
    }

    #[test]
    fn overall_score_rules() {
        let t = labels(vec![0, 1, 1, 2, 2, 2, 0, 0]);
        let p = labels(vec![0, 1, 0, 2, 2, 2, 2, 0]);
        let classes = foreground_classes(3);
        let r = evaluate(&p, &t, &classes, HdMode::Max).unwrap();
        let mut only_dice = ScoreWeights::placeholder(["class-1"]);
        only_dice.classes.insert("class-1".into(), ClassWeights { dice: 1.0, hd95: 0.0, vs: 0.0 });
        let single = EvalReport { classes: r.classes[..1].to_vec(), ..r.clone() };
        assert_eq!(overall_score(&single, &only_dice).unwrap(), r.classes[0].dice);

        let mut zero = ScoreWeights::placeholder(["class-1", "class-2"]);
        zero.classes.values_mut().for_each(|w| *w = ClassWeights { dice: 0.0, hd95: 0.0, vs: 0.0 });
        assert_eq!(overall_score(&r, &zero).unwrap(), 0.0);

        assert!(matches!(overall_score(&r, &only_dice), Err(Error::Config(_))));

        let w = ScoreWeights::placeholder(["class-1", "class-2"]);
        let perfect = evaluate(&t, &t, &classes, HdMode::Max).unwrap();
        assert_eq!(overall_score(&perfect, &w).unwrap(), 6.0);
        assert!(overall_score(&r, &w).unwrap() < 6.0);
    }
}
