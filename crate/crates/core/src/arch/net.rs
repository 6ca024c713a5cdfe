use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::loss::softmax_last_axis;
use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{RngSeed, Scalar, Shape, Tensor};

use super::config::{DilateResUnitConfig, NetConfig, Variant};
use super::params::{Manifest, ManifestRecorder, ParamSource, ParamStore, StoreSource};
use super::units::{channels, dilate_res_unit, init_unit, output_unit};

/// Input and output shape of one unit in a forward pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitTrace {
    pub name: String,
    /// 1-based level index; `None` for the initial and output units.
    pub level: Option<usize>,
    pub stream: Option<usize>,
    pub input: Shape,
    pub output: Shape,
}

/// Graph handles produced by wiring a network.
pub struct Wired {
    pub logits: NodeId,
    pub trace: Vec<UnitTrace>,
    /// Output node of every unit, keyed by unit name.
    pub units: BTreeMap<String, NodeId>,
    pub aggregate: NodeId,
}

/// A validated network configuration together with its parameter manifest.
#[derive(Clone, Debug)]
pub struct MixNet {
    cfg: NetConfig,
    manifest: Manifest,
}

struct Wiring<'a, 'g, T: Scalar> {
    g: &'g mut Graph<T>,
    src: &'a mut dyn ParamSource<T>,
    trace: Vec<UnitTrace>,
    units: BTreeMap<String, NodeId>,
}

impl<T: Scalar> Wiring<'_, '_, T> {
    fn record(&mut self, name: &str, level: Option<usize>, stream: Option<usize>, x: NodeId, y: NodeId) {
        self.trace.push(UnitTrace {
            name: name.to_string(),
            level,
            stream,
            input: self.g.shape(x).clone(),
            output: self.g.shape(y).clone(),
        });
        self.units.insert(name.to_string(), y);
    }

    fn init(&mut self, name: &str, stream: Option<usize>, x: NodeId, out: usize, pool: bool) -> Result<NodeId> {
        let y = init_unit(self.g, self.src, name, x, out, pool)?;
        self.record(name, None, stream, x, y);
        Ok(y)
    }

    fn unit(
        &mut self,
        name: &str,
        level: usize,
        stream: Option<usize>,
        x: NodeId,
        filters: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        let c1 = channels(self.g, x)?;
        let y = dilate_res_unit(self.g, self.src, name, x, DilateResUnitConfig::new(c1, filters, filters, dilation))?;
        self.record(name, Some(level), stream, x, y);
        Ok(y)
    }
}

impl MixNet {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.min_input_extent();
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(Shape::nhwc(1, s, s, cfg.n_modalities)?));
        let mut rec = ManifestRecorder::default();
        let mut net = MixNet { cfg, manifest: Manifest::default() };
        net.wire(&mut g, x, &mut rec)?;
        net.manifest = rec.manifest;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn init_params<T: Scalar>(&self, seed: RngSeed) -> Result<ParamStore<T>> {
        ParamStore::initialize(&self.manifest, seed)
    }

    /// Wire the network onto `g` for an `(N, H, W, modalities)` input node.
    ///
    /// v1 runs a single chain on the stacked modalities. v2 runs one chain per
    /// modality; odd levels are summary units over the concatenated streams
    /// and even levels are per-stream units over `[stream, summary]`. v3 runs
    /// independent chains. The output unit receives the level outputs
    /// concatenated in level order (v1, v2) or stream-major order (v3).
    pub fn wire<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, src: &mut dyn ParamSource<T>) -> Result<Wired> {
        let cfg = &self.cfg;
        let (_, h, w, c) = g.shape(x).as_nhwc()?;
        if c != cfg.n_modalities {
            return Err(shape_err!("input has {c} channels, network expects {} modalities", cfg.n_modalities));
        }
        let min = cfg.min_input_extent();
        if h < min || w < min {
            return Err(Error::Param(format!("input {h}x{w} is smaller than the minimum {min}x{min}")));
        }
        let mut wr = Wiring { g, src, trace: Vec::new(), units: BTreeMap::new() };
        let m = cfg.n_modalities;
        let pool = cfg.init_pool;
        let aggregate_parts = match cfg.variant {
            Variant::V1 => {
                let mut cur = wr.init("init", None, x, cfg.init_channels, pool)?;
                let mut outs = Vec::new();
                for (i, l) in cfg.levels.iter().enumerate() {
                    cur = wr.unit(&format!("level{}", i + 1), i + 1, None, cur, l.filters, l.dilation)?;
                    outs.push(cur);
                }
                outs
            }
            Variant::V2 => {
                let mut streams = Vec::with_capacity(m);
                for s in 0..m {
                    let xs = wr.g.slice_channels(x, s, 1)?;
                    streams.push(wr.init(&format!("init.m{s}"), Some(s), xs, cfg.init_channels, pool)?);
                }
                let mut summary = None;
                let mut outs = Vec::new();
                for (i, l) in cfg.levels.iter().enumerate() {
                    let level = i + 1;
                    if i % 2 == 0 {
                        let cat = wr.g.concat_channels(&streams)?;
                        let y = wr.unit(&format!("level{level}"), level, None, cat, l.filters, l.dilation)?;
                        summary = Some(y);
                        outs.push(y);
                    } else {
                        let sum = summary.expect("even levels follow a summary level");
                        for (s, stream) in streams.iter_mut().enumerate() {
                            let cat = wr.g.concat_channels(&[*stream, sum])?;
                            *stream =
                                wr.unit(&format!("level{level}.m{s}"), level, Some(s), cat, l.filters, l.dilation)?;
                            outs.push(*stream);
                        }
                    }
                }
                outs
            }
            Variant::V3 => {
                let mut outs = Vec::new();
                for s in 0..m {
                    let xs = wr.g.slice_channels(x, s, 1)?;
                    let mut cur = wr.init(&format!("init.m{s}"), Some(s), xs, cfg.init_channels, pool)?;
                    for (i, l) in cfg.levels.iter().enumerate() {
                        let level = i + 1;
                        cur = wr.unit(&format!("level{level}.m{s}"), level, Some(s), cur, l.filters, l.dilation)?;
                        outs.push(cur);
                    }
                }
                outs
            }
        };
        let aggregate = wr.g.concat_channels(&aggregate_parts)?;
        let upscale = if pool { Some((h, w)) } else { None };
        let logits = output_unit(wr.g, wr.src, "output", aggregate, &cfg.pyramid_bins, cfg.n_classes, upscale)?;
        wr.record("output", None, None, aggregate, logits);
        Ok(Wired { logits, trace: wr.trace, units: wr.units, aggregate })
    }

    /// Wire with parameters from `store`. Returns the parameter node of every
    /// tensor so gradients can be looked up by name.
    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        store: &ParamStore<T>,
        trainable: bool,
    ) -> Result<(Wired, BTreeMap<String, NodeId>)> {
        let mut src = StoreSource::new(store, trainable);
        let wired = self.wire(g, x, &mut src)?;
        Ok((wired, src.nodes))
    }

    /// Logits for an `(N, H, W, modalities)` batch.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let (wired, _) = self.build(&mut g, xi, store, false)?;
        Ok(g.value(wired.logits).clone())
    }

    /// Per-pixel class probabilities.
    pub fn predict_proba<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_last_axis(&self.forward(store, x)?))
    }

    /// Shapes of every unit for an input of `h x w`, without evaluating the
    /// convolutions.
    pub fn shape_trace(&self, h: usize, w: usize) -> Result<Vec<UnitTrace>> {
        let store = ParamStore::<f32>::zeros(&self.manifest);
        let mut g = Graph::shape_only();
        let x = g.input(Tensor::zeros(Shape::nhwc(1, h, w, self.cfg.n_modalities)?));
        Ok(self.build(&mut g, x, &store, false)?.0.trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::config::LevelConfig;

    fn small(variant: Variant, width: usize, pool: bool) -> NetConfig {
        let mut cfg = NetConfig::with_width(variant, 2, width);
        cfg.init_pool = pool;
        cfg
    }

    #[test]
    fn manifests_are_deterministic() {
        for v in [Variant::V1, Variant::V2, Variant::V3] {
            let a = MixNet::new(NetConfig::standard(v, 4)).unwrap();
            let b = MixNet::new(NetConfig::standard(v, 4)).unwrap();
            assert_eq!(a.manifest(), b.manifest());
        }
    }

    #[test]
    fn v2_per_stream_units_are_unshared() {
        let net = MixNet::new(NetConfig::standard(Variant::V2, 4)).unwrap();
        let names: Vec<_> = net.manifest().iter().map(|p| p.name.clone()).collect();
        for s in 0..3 {
            assert!(names.contains(&format!("level2.m{s}.conv1.w")));
            assert!(names.contains(&format!("level4.m{s}.shortcut.w")));
        }
        assert!(names.contains(&"level1.shortcut.w".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("level1.m")));
    }

    #[test]
    fn v3_streams_are_independent() {
        let net = MixNet::new(small(Variant::V3, 4, false)).unwrap();
        let store = net.init_params::<f32>(RngSeed(1)).unwrap();
        let base = Tensor::<f32>::full(Shape::nhwc(1, 12, 12, 3).unwrap(), 0.5);
        let mut perturbed = base.clone();
        for p in 0..144 {
            perturbed.data_mut()[p * 3 + 1] += 0.3 * (p as f32).sin();
        }
        let run = |x: &Tensor<f32>| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let (w, _) = net.build(&mut g, xi, &store, false).unwrap();
            w.units.iter().map(|(k, id)| (k.clone(), g.value(*id).clone())).collect::<BTreeMap<_, _>>()
        };
        let a = run(&base);
        let b = run(&perturbed);
        for (name, t) in &a {
            if name.ends_with(".m0") || name.ends_with(".m2") {
                assert_eq!(t, &b[name], "{name}");
            }
        }
        assert_ne!(a["level5.m1"], b["level5.m1"]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = MixNet::new(small(Variant::V1, 4, true)).unwrap();
        let store = net.init_params::<f32>(RngSeed(0)).unwrap();
        let x = Tensor::<f32>::zeros(Shape::nhwc(1, 22, 30, 3).unwrap());
        assert!(matches!(net.forward(&store, &x), Err(Error::Param(_))));
        let x = Tensor::<f32>::zeros(Shape::nhwc(1, 24, 24, 2).unwrap());
        assert!(matches!(net.forward(&store, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn odd_input_restores_size() {
        let net = MixNet::new(small(Variant::V2, 4, true)).unwrap();
        let store = net.init_params::<f32>(RngSeed(0)).unwrap();
        let x = Tensor::<f32>::full(Shape::nhwc(2, 25, 27, 3).unwrap(), 0.1);
        assert_eq!(net.forward(&store, &x).unwrap().dims(), &[2, 25, 27, 2]);
    }

    #[test]
    fn nonuniform_levels_allocate_shortcuts() {
        let mut cfg = small(Variant::V1, 4, false);
        cfg.levels[2] = LevelConfig { filters: 8, dilation: 4 };
        let net = MixNet::new(cfg).unwrap();
        let names: Vec<_> = net.manifest().iter().map(|p| p.name.as_str()).collect();
        assert!(names.contains(&"level3.shortcut.w"));
        assert!(names.contains(&"level4.shortcut.w"));
        assert!(!names.contains(&"level2.shortcut.w"));
    }

    #[test]
    fn dilated_chain_receptive_field() {
        // All-positive weights and input keep every ReLU active, so the
        // influence of a single pixel reaches exactly as far as the taps do:
        // 1 + 2 * (2 + 1 + 4 + 1 + 8) = 33 pixels across.
        let mut rec = ManifestRecorder::default();
        let run = |src: &mut dyn ParamSource<f64>, x: Tensor<f64>| {
            let mut g = Graph::new();
            let mut cur = g.input(x);
            for (i, d) in crate::arch::config::DILATIONS.iter().enumerate() {
                let cfg = DilateResUnitConfig::new(4, 4, 4, *d);
                cur = dilate_res_unit(&mut g, src, &format!("level{}", i + 1), cur, cfg).unwrap();
            }
            g.value(cur).clone()
        };
        let n = 41;
        let shape = Shape::nhwc(1, n, n, 4).unwrap();
        run(&mut rec, Tensor::zeros(shape.clone()));
        let mut store = ParamStore::<f64>::initialize(&rec.manifest, RngSeed(2)).unwrap();
        for p in rec.manifest.iter() {
            let t = store.get_mut(&p.name).unwrap();
            *t = t.map(|v| v.abs() + 0.01);
        }
        let base = Tensor::full(shape.clone(), 1.0);
        let mut delta = base.clone();
        let c = n / 2;
        delta.data_mut()[(c * n + c) * 4] += 1.0;
        let a = run(&mut StoreSource::new(&store, false), base);
        let b = run(&mut StoreSource::new(&store, false), delta);
        let mut radius = 0;
        for i in 0..n {
            for j in 0..n {
                let p = (i * n + j) * 4;
                if (0..4).any(|k| a.data()[p + k] != b.data()[p + k]) {
                    radius = radius.max(i.abs_diff(c)).max(j.abs_diff(c));
                }
            }
        }
        assert_eq!(2 * radius + 1, 33);
    }
}
