//! Self-checks runnable from the command line: finite-difference gradients,
//! reference layer shapes, the v3-in-v1 embedding, metric oracles, the
//! optimizer schedule and augmentation counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::units::{dilate_res_unit, init_unit, output_unit};
use crate::arch::{embed_v3_into_v1, DilateResUnitConfig, MixNet, NetConfig, ParamInfo, ParamSource, Variant};
use crate::augment::{expand_dataset, AugOp, AugmentPolicy};
use crate::autodiff::gradcheck::{grad_check_with, GradCheckOptions};
use crate::autodiff::{ConvSpec, Graph, NodeId, Reduction};
use crate::error::{Error, Result};
use crate::metrics::{dice, hd95, volumetric_similarity, HdMode};
use crate::tensor::{RngSeed, Shape, Tensor};
use crate::trainer::{lr_schedule, nesterov_step, OptimConfig};
use crate::volume::{Plane, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Gradcheck,
    Shapes,
    Embedding,
    Metrics,
    Optimizer,
    Augment,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Gradcheck, Suite::Shapes, Suite::Embedding, Suite::Metrics, Suite::Optimizer, Suite::Augment];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Shapes => "shapes",
            Suite::Embedding => "embedding",
            Suite::Metrics => "metrics",
            Suite::Optimizer => "optimizer",
            Suite::Augment => "augment",
        };
        f.write_str(s)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| Error::Usage(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

pub fn run_suite(suite: Suite, seed: RngSeed) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match suite {
        Suite::Gradcheck => gradcheck_suite(seed)?,
        Suite::Shapes => shapes_suite()?,
        Suite::Embedding => embedding_suite(seed)?,
        Suite::Metrics => metrics_suite(seed)?,
        Suite::Optimizer => optimizer_suite()?,
        Suite::Augment => augment_suite(seed)?,
    };
    Ok(SuiteReport {
        suite,
        passed: checks.iter().all(|c| c.passed),
        seconds: start.elapsed().as_secs_f64(),
        checks,
    })
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into() }
}

// ---------------------------------------------------------------- gradients

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_INSTANCES: u64 = 5;

fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("dims match")
}

/// Hands out graph nodes that the gradient checker created, by name.
struct Leaves<'a> {
    names: &'a [String],
    ids: &'a [NodeId],
}

impl ParamSource<f64> for Leaves<'_> {
    fn fetch(&mut self, _g: &mut Graph<f64>, info: ParamInfo) -> Result<NodeId> {
        let i = self
            .names
            .iter()
            .position(|n| *n == info.name)
            .ok_or_else(|| Error::Build(format!("no leaf for {}", info.name)))?;
        Ok(self.ids[i])
    }
}

type Builder = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>;

/// One gradient-check case: inputs and a scalar-valued graph over them.
struct Case {
    name: String,
    inputs: Vec<Tensor<f64>>,
    build: Box<Builder>,
}

/// Reduce an op's output with fixed random weights so every output
/// coordinate carries a distinct upstream gradient.
fn weigh(g: &mut Graph<f64>, y: NodeId, rng_seed: RngSeed) -> Result<NodeId> {
    let dims = g.shape(y).dims().to_vec();
    let w = uniform(&dims, -1.0, 1.0, &mut rng_seed.rng());
    g.weighted_sum(y, w)
}

fn op_cases(seed: RngSeed) -> Vec<Case> {
    let mut cases = Vec::new();
    for i in 0..GRAD_INSTANCES {
        let s = seed.derive(&[i]);
        let mut rng = s.rng();
        let ws = s.derive(&[99]);
        let (h, w) = (rng.random_range(4..8), rng.random_range(4..8));
        let x = uniform(&[2, h, w, 3], -1.0, 1.0, &mut rng);
        let y = uniform(&[2, h, w, 3], -1.0, 1.0, &mut rng);

        cases.push(Case {
            name: format!("add#{i}"),
            inputs: vec![x.clone(), y.clone()],
            build: Box::new(move |g, ids| {
                let z = g.add(ids[0], ids[1])?;
                weigh(g, z, ws)
            }),
        });
        cases.push(Case {
            name: format!("scale#{i}"),
            inputs: vec![x.clone()],
            build: Box::new(move |g, ids| {
                let z = g.scale(ids[0], -1.7);
                weigh(g, z, ws)
            }),
        });
        cases.push(Case {
            name: format!("relu#{i}"),
            inputs: vec![x.clone()],
            build: Box::new(move |g, ids| {
                let z = g.relu(ids[0]);
                weigh(g, z, ws)
            }),
        });
        for d in [1, 2] {
            let k = if d == 1 && i % 2 == 0 { 1 } else { 3 };
            let kern = uniform(&[k, k, 3, 4], -0.5, 0.5, &mut rng);
            let bias = uniform(&[4], -0.5, 0.5, &mut rng);
            cases.push(Case {
                name: format!("conv{k}x{k}d{d}#{i}"),
                inputs: vec![x.clone(), kern, bias],
                build: Box::new(move |g, ids| {
                    let z = g.conv2d(ids[0], ids[1], Some(ids[2]), ConvSpec::new(k, d))?;
                    weigh(g, z, ws)
                }),
            });
        }
        cases.push(Case {
            name: format!("maxpool2x2#{i}"),
            inputs: vec![x.clone()],
            build: Box::new(move |g, ids| {
                let z = g.maxpool2x2(ids[0])?;
                weigh(g, z, ws)
            }),
        });
        let bins = rng.random_range(2..=h.min(w));
        cases.push(Case {
            name: format!("avgpool{bins}x{bins}#{i}"),
            inputs: vec![x.clone()],
            build: Box::new(move |g, ids| {
                let z = g.avgpool_region(ids[0], bins, bins)?;
                weigh(g, z, ws)
            }),
        });
        let (oh, ow) = (rng.random_range(2..12), rng.random_range(2..12));
        cases.push(Case {
            name: format!("bilinear{oh}x{ow}#{i}"),
            inputs: vec![x.clone()],
            build: Box::new(move |g, ids| {
                let z = g.bilinear_resize(ids[0], oh, ow)?;
                weigh(g, z, ws)
            }),
        });
        cases.push(Case {
            name: format!("concat+slice#{i}"),
            inputs: vec![x.clone(), y.clone()],
            build: Box::new(move |g, ids| {
                let c = g.concat_channels(&[ids[0], ids[1]])?;
                let z = g.slice_channels(c, 2, 3)?;
                weigh(g, z, ws)
            }),
        });
        let labels: Vec<usize> = (0..2 * h * w).map(|_| rng.random_range(0..3)).collect();
        for reduction in [Reduction::Sum, Reduction::Mean] {
            let labels = labels.clone();
            cases.push(Case {
                name: format!("cross-entropy-{reduction:?}#{i}").to_lowercase(),
                inputs: vec![x.scale(2.0)],
                build: Box::new(move |g, ids| g.softmax_cross_entropy(ids[0], &labels, reduction)),
            });
        }
        cases.push(Case {
            name: format!("sum#{i}"),
            inputs: vec![x.clone()],
            build: Box::new(|g, ids| Ok(g.sum(ids[0]))),
        });
    }
    cases
}

/// A case covering one wiring function with all of its parameters as leaves.
fn unit_case<F>(name: String, input: Tensor<f64>, seed: RngSeed, wire: F) -> Result<Case>
where
    F: Fn(&mut Graph<f64>, &mut dyn ParamSource<f64>, NodeId) -> Result<NodeId> + 'static,
{
    let mut g = Graph::<f64>::new();
    let x = g.input(input.clone());
    let mut rec = crate::arch::params::ManifestRecorder::default();
    wire(&mut g, &mut rec, x)?;
    let mut rng = seed.rng();
    let names: Vec<String> = rec.manifest.iter().map(|p| p.name.clone()).collect();
    let mut inputs = vec![input];
    for p in rec.manifest.iter() {
        let scale = if p.fan_in > 0 { (2.0 / p.fan_in as f64).sqrt() } else { 0.2 };
        inputs.push(uniform(p.shape.dims(), -scale, scale, &mut rng));
    }
    let ws = seed.derive(&[99]);
    Ok(Case {
        name,
        inputs,
        build: Box::new(move |g, ids| {
            let mut src = Leaves { names: &names, ids: &ids[1..] };
            let y = wire(g, &mut src, ids[0])?;
            weigh(g, y, ws)
        }),
    })
}

fn unit_cases(seed: RngSeed) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    for i in 0..GRAD_INSTANCES {
        let s = seed.derive(&[1000, i]);
        let mut rng = s.rng();
        let (c1, c2) = if i % 2 == 0 { (4, 4) } else { (3, 6) };
        let d = [1, 2, 4][i as usize % 3];
        let x = uniform(&[1, 6, 7, c1], -1.0, 1.0, &mut rng);
        cases.push(unit_case(format!("dilate-res-unit c1={c1} c2={c2} d={d}#{i}"), x, s, move |g, src, x| {
            dilate_res_unit(g, src, "u", x, DilateResUnitConfig::new(c1, c2, 4, d))
        })?);
        let x = uniform(&[1, 6, 6, 2], -1.0, 1.0, &mut rng);
        let pool = i % 2 == 1;
        cases.push(unit_case(format!("init-unit pool={pool}#{i}"), x, s.derive(&[1]), move |g, src, x| {
            init_unit(g, src, "init", x, 3, pool)
        })?);
        let x = uniform(&[1, 4, 5, 3], -1.0, 1.0, &mut rng);
        let up = if i % 2 == 0 { Some((7, 9)) } else { None };
        cases.push(unit_case(format!("output-unit#{i}"), x, s.derive(&[2]), move |g, src, x| {
            output_unit(g, src, "out", x, &[2, 4], 2, up)
        })?);
    }
    Ok(cases)
}

/// Every autodiff op, each network unit and one small full model.
pub fn gradcheck_suite(seed: RngSeed) -> Result<Vec<Check>> {
    let mut cases = op_cases(seed);
    cases.extend(unit_cases(seed)?);
    let mut out = Vec::new();
    for case in cases {
        let opts = GradCheckOptions { seed: seed.derive(&[7]), ..GradCheckOptions::new(1e-6, GRAD_TOLERANCE) };
        let r = grad_check_with(&case.build, &case.inputs, &opts)?;
        out.push(check(
            case.name,
            r.passed,
            format!("max rel error {:.2e} over {} coords ({} skipped at kinks)", r.max_rel_error, r.checked, r.skipped),
        ));
    }
    for variant in [Variant::V1, Variant::V2, Variant::V3] {
        out.push(model_gradcheck(variant, seed)?);
    }
    Ok(out)
}

/// Full network, 2 classes, cross-entropy loss; a random subset of
/// coordinates per tensor keeps the run short.
fn model_gradcheck(variant: Variant, seed: RngSeed) -> Result<Check> {
    let mut cfg = NetConfig::with_width(variant, 2, 4);
    cfg.pyramid_bins = vec![2, 4];
    let net = MixNet::new(cfg)?;
    let params = net.init_params::<f64>(seed.derive(&[5]))?;
    let mut rng = seed.derive(&[6]).rng();
    let x = uniform(&[1, 10, 10, 3], -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..100).map(|_| rng.random_range(0..2)).collect();
    let names: Vec<String> = net.manifest().iter().map(|p| p.name.clone()).collect();
    let mut inputs = vec![x];
    for n in &names {
        // He init leaves biases at zero; perturb them so their gradients
        // are checked away from that special point.
        let t = params.require(n)?;
        inputs.push(t.add(&uniform(t.dims(), -0.05, 0.05, &mut rng))?);
    }
    let build = |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId> {
        let mut src = Leaves { names: &names, ids: &ids[1..] };
        let wired = net.wire(g, ids[0], &mut src)?;
        g.softmax_cross_entropy(wired.logits, &labels, Reduction::Sum)
    };
    let opts = GradCheckOptions {
        max_coords_per_input: Some(6),
        seed: seed.derive(&[8]),
        ..GradCheckOptions::new(1e-6, GRAD_TOLERANCE)
    };
    let r = grad_check_with(build, &inputs, &opts)?;
    Ok(check(
        format!("model-{variant}"),
        r.passed,
        format!("max rel error {:.2e} over {} coords ({} skipped at kinks)", r.max_rel_error, r.checked, r.skipped),
    ))
}

// ------------------------------------------------------------------ shapes

/// Reference per-level `(input, filters, dilation, output)`, as `HxWxC` at a
/// 240x240 input. For v2 and v3 the channel count is that of one unit.
pub fn reference_levels(variant: Variant) -> [(&'static str, usize, usize, &'static str); 5] {
    match variant {
        Variant::V1 => [
            ("120x120x72", 72, 2, "120x120x72"),
            ("120x120x72", 72, 1, "120x120x72"),
            ("120x120x72", 72, 4, "120x120x72"),
            ("120x120x72", 72, 1, "120x120x72"),
            ("120x120x72", 72, 8, "120x120x72"),
        ],
        Variant::V2 => [
            ("120x120x72", 24, 2, "120x120x24"),
            ("120x120x48", 24, 1, "120x120x24"),
            ("120x120x72", 24, 4, "120x120x24"),
            ("120x120x48", 24, 1, "120x120x24"),
            ("120x120x72", 24, 8, "120x120x24"),
        ],
        Variant::V3 => [
            ("120x120x24", 24, 2, "120x120x24"),
            ("120x120x24", 24, 1, "120x120x24"),
            ("120x120x24", 24, 4, "120x120x24"),
            ("120x120x24", 24, 1, "120x120x24"),
            ("120x120x24", 24, 8, "120x120x24"),
        ],
    }
}

fn hwc(s: &Shape) -> String {
    let d = s.dims();
    format!("{}x{}x{}", d[1], d[2], d[3])
}

pub fn shapes_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for variant in [Variant::V1, Variant::V2, Variant::V3] {
        let net = MixNet::new(NetConfig::standard(variant, 4))?;
        let trace = net.shape_trace(240, 240)?;
        for (l, &(input, filters, dilation, output)) in reference_levels(variant).iter().enumerate() {
            let level = l + 1;
            let units: Vec<_> = trace.iter().filter(|t| t.level == Some(level)).collect();
            let cfg = &net.config().levels[l];
            let ok = !units.is_empty()
                && units.iter().all(|u| hwc(&u.input) == input && hwc(&u.output) == output)
                && cfg.filters == filters
                && cfg.dilation == dilation;
            let seen: Vec<String> = units.iter().map(|u| format!("{} -> {}", hwc(&u.input), hwc(&u.output))).collect();
            out.push(check(
                format!("{variant} level {level}"),
                ok,
                format!("expected {input} -> {output} (f={filters}, d={dilation}); got {}", seen.join(", ")),
            ));
        }
        let logits = trace.last().map(|t| hwc(&t.output)).unwrap_or_default();
        out.push(check(format!("{variant} logits"), logits == "240x240x4", format!("got {logits}")));
    }
    Ok(out)
}

// --------------------------------------------------------------- embedding

pub const EMBED_TOLERANCE: f64 = 1e-4;

pub fn embedding_suite(seed: RngSeed) -> Result<Vec<Check>> {
    let v3 = MixNet::new(NetConfig::standard(Variant::V3, 4))?;
    let mut out = Vec::new();
    for i in 0..5 {
        let s = seed.derive(&[2000, i]);
        let mut p3 = v3.init_params::<f64>(s)?;
        let mut rng = s.derive(&[1]).rng();
        for (_, t) in p3.iter_mut() {
            if t.dims().len() == 1 {
                *t = uniform(t.dims(), -0.1, 0.1, &mut rng);
            }
        }
        let (cfg1, p1) = embed_v3_into_v1(v3.config(), &p3)?;
        let v1 = MixNet::new(cfg1)?;
        let x = uniform(&[1, 24, 26, 3], -2.0, 2.0, &mut rng);
        let diff = v3.forward(&p3, &x)?.max_abs_diff(&v1.forward(&p1, &x)?)?;
        out.push(check(format!("draw {i}"), diff <= EMBED_TOLERANCE, format!("max |v1 - v3| = {diff:.3e}")));
    }
    Ok(out)
}

// ----------------------------------------------------------------- metrics

fn brute_hd95(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3], mode: HdMode) -> Option<f64> {
    let [nx, ny, nz] = dims;
    let surface = |m: &[bool]| -> Vec<[i64; 3]> {
        let at = |x: i64, y: i64, z: i64| {
            x >= 0
                && y >= 0
                && z >= 0
                && (x as usize) < nx
                && (y as usize) < ny
                && (z as usize) < nz
                && m[(x as usize * ny + y as usize) * nz + z as usize]
        };
        let mut s = Vec::new();
        for x in 0..nx as i64 {
            for y in 0..ny as i64 {
                for z in 0..nz as i64 {
                    let n6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                    if at(x, y, z) && n6.iter().any(|&(dx, dy, dz)| !at(x + dx, y + dy, z + dz)) {
                        s.push([x, y, z]);
                    }
                }
            }
        }
        s
    };
    let (sa, sb) = (surface(a), surface(b));
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let directed = |from: &[[i64; 3]], to: &[[i64; 3]]| -> Vec<f64> {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        let p = [p[0] as usize, p[1] as usize, p[2] as usize];
                        let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                        crate::metrics::hausdorff::distance(p, q, spacing)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let p95 = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let rank = (95 * n).div_ceil(100);
        v[rank.max(1) - 1]
    };
    let ab = directed(&sa, &sb);
    let ba = directed(&sb, &sa);
    Some(match mode {
        HdMode::Max => p95(ab).max(p95(ba)),
        HdMode::Pooled => p95(ab.into_iter().chain(ba).collect()),
    })
}

pub fn metrics_suite(seed: RngSeed) -> Result<Vec<Check>> {
    let mut rng = seed.derive(&[3000]).rng();
    let (mut dice_bad, mut vs_bad, mut hd_bad, mut undefined) = (0, 0, 0, 0);
    let trials = 100;
    for _ in 0..trials {
        let dims = [rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=12)];
        let n: usize = dims.iter().product();
        let spacing = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
        let (pa, pb) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.6));
        let a: Vec<bool> = (0..n).map(|_| rng.random_bool(pa)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.random_bool(pb)).collect();
        let (na, nb) = (a.iter().filter(|&&v| v).count(), b.iter().filter(|&&v| v).count());
        let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let d_ref = if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 };
        let v_ref = if na + nb == 0 { 1.0 } else { 1.0 - na.abs_diff(nb) as f64 / (na + nb) as f64 };
        dice_bad += (dice(&a, &b)? != d_ref) as usize;
        vs_bad += (volumetric_similarity(&a, &b)? != v_ref) as usize;
        for mode in [HdMode::Max, HdMode::Pooled] {
            let got = match hd95(&a, &b, dims, spacing, mode) {
                Ok(v) => Some(v),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            };
            let want = brute_hd95(&a, &b, dims, spacing, mode);
            undefined += want.is_none() as usize;
            hd_bad += (got != want) as usize;
        }
    }
    Ok(vec![
        check("dice", dice_bad == 0, format!("{dice_bad} of {trials} trials differ from the brute-force oracle")),
        check("volumetric similarity", vs_bad == 0, format!("{vs_bad} of {trials} trials differ")),
        check(
            "hd95",
            hd_bad == 0,
            format!("{hd_bad} of {} evaluations differ ({undefined} undefined)", 2 * trials),
        ),
    ])
}

// --------------------------------------------------------------- optimizer

pub fn optimizer_suite() -> Result<Vec<Check>> {
    let cfg = OptimConfig { epochs: 100, lr0: 2e-4, ..OptimConfig::default() };
    let boundaries = [20, 40, 60, 75, 80, 85, 90, 95];
    let mut bad = Vec::new();
    for (k, &b) in boundaries.iter().enumerate() {
        let want_at = 2e-4 * 0.5f64.powi(k as i32 + 1);
        let want_before = 2e-4 * 0.5f64.powi(k as i32);
        if lr_schedule(b, &cfg) != want_at || lr_schedule(b - 1, &cfg) != want_before {
            bad.push(b);
        }
    }
    let ends = lr_schedule(0, &cfg) == 2e-4 && lr_schedule(99, &cfg) == 2e-4 / 256.0;
    let (mut p, mut v) = ([1.0f64], [0.0f64]);
    nesterov_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0)?;
    let e1 = (p[0] - 0.81).abs().max((v[0] + 0.1).abs());
    nesterov_step(&mut p, &[0.5], &mut v, 0.1, 0.9, 0.0)?;
    let e2 = (p[0] - 0.634).abs().max((v[0] + 0.14).abs());
    Ok(vec![
        check("schedule table", bad.is_empty() && ends, format!("mismatching boundaries: {bad:?}")),
        check("nesterov two-step trace", e1.max(e2) <= 1e-12, format!("max error {:.1e}", e1.max(e2))),
    ])
}

// ---------------------------------------------------------------- augment

pub fn augment_suite(seed: RngSeed) -> Result<Vec<Check>> {
    let (h, w) = (32, 28);
    let mut rng = seed.derive(&[4000]).rng();
    let labels: Vec<u8> = (0..h * w).map(|p| (((p / w) / 6 + (p % w) / 9) % 4) as u8).collect();
    let image = (0..h * w * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let s = Sample::new(h, w, 3, image, labels)?;
    let mut out = Vec::new();
    for plane in Plane::ALL {
        let want = if plane == Plane::Transverse { 15 } else { 3 };
        let got = expand_dataset(std::slice::from_ref(&s), &AugmentPolicy::default_for(plane), seed)?;
        out.push(check(format!("{plane} samples per original"), got.len() == want, format!("{} (want {want})", got.len())));
        let original: Vec<bool> = (0..=255u8).map(|c| s.labels.contains(&c)).collect();
        let ok = got.iter().all(|a| a.labels.iter().all(|&l| l == 0 || original[l as usize]));
        out.push(check(format!("{plane} label sets"), ok, "augmented labels are a subset of the original set plus background"));
    }
    let id = crate::augment::apply(&AugOp::Elastic { alpha: 0.0, sigma: 4.0 }, &s, seed)?;
    out.push(check("elastic alpha=0 is identity", id == s, ""));
    Ok(out)
}

/// Summary line per suite and one line per failed check.
pub fn render(reports: &[SuiteReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{status} {:<10} {:>3} checks  {:.1}s\n", r.suite, r.checks.len(), r.seconds));
        for c in r.checks.iter().filter(|c| !c.passed) {
            s.push_str(&format!("     FAIL {}: {}\n", c.name, c.detail));
        }
    }
    s
}

/// Count of failed checks per suite.
pub fn failures(reports: &[SuiteReport]) -> BTreeMap<Suite, usize> {
    reports.iter().map(|r| (r.suite, r.checks.iter().filter(|c| !c.passed).count())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_roundtrip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!(matches!("nope".parse::<Suite>(), Err(Error::Usage(_))));
    }

    #[test]
    fn cheap_suites_pass() {
        for s in [Suite::Optimizer, Suite::Augment, Suite::Shapes] {
            let r = run_suite(s, RngSeed(1)).unwrap();
            assert!(r.passed, "{}", render(&[r]));
        }
    }
}
