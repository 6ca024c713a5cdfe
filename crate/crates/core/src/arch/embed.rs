//! Construction of v1 parameters that reproduce a given v3 network.
//!
//! A v1 network whose levels are `m` times wider than the v3 streams can hold
//! the `m` independent chains side by side: every kernel becomes
//! block-diagonal with one block per stream and zeros coupling the streams.
//! The only remaining difference is the channel order handed to the output
//! unit, which is fixed by permuting the input rows of the classifier
//! kernel.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

use super::config::{LevelConfig, NetConfig, Variant};
use super::params::ParamStore;

/// v1 configuration able to hold `v3` exactly.
pub fn v1_config_for(v3: &NetConfig) -> Result<NetConfig> {
    if v3.variant != Variant::V3 {
        return Err(Error::Build(format!("expected a v3 configuration, got {}", v3.variant)));
    }
    v3.validate()?;
    let m = v3.n_modalities;
    Ok(NetConfig {
        variant: Variant::V1,
        levels: v3.levels.iter().map(|l| LevelConfig { filters: m * l.filters, dilation: l.dilation }).collect(),
        n_classes: v3.n_classes,
        init_pool: v3.init_pool,
        n_modalities: m,
        init_channels: m * v3.init_channels,
        pyramid_bins: v3.pyramid_bins.clone(),
    })
}

/// Copy `block` into `dst` so that its `(in, out)` plane lands at offset
/// `(in0, out0)`. Both kernels are `(kh, kw, in, out)` with equal spatial
/// extents.
fn place_block<T: Scalar>(dst: &mut Tensor<T>, block: &Tensor<T>, in0: usize, out0: usize) {
    let (kh, kw, bi, bo) = dims4(block);
    let (_, _, di, dout) = dims4(dst);
    let src = block.data();
    let out = dst.data_mut();
    for t in 0..kh * kw {
        for i in 0..bi {
            let s = (t * bi + i) * bo;
            let d = (t * di + in0 + i) * dout + out0;
            out[d..d + bo].copy_from_slice(&src[s..s + bo]);
        }
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    match t.dims() {
        &[a, b, c, d] => (a, b, c, d),
        _ => unreachable!("kernels are rank 4"),
    }
}

fn block_kernel<T: Scalar>(
    v3: &ParamStore<T>,
    name: impl Fn(usize) -> String,
    m: usize,
    per_stream_in: Option<usize>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = v3.require(&format!("{}.w", name(0)))?;
    let (kh, kw, bi, bo) = dims4(first);
    // The initial unit reads one input channel per stream, so its blocks sit on
    // channel `s` rather than `s * bi`.
    let total_in = per_stream_in.map_or(m * bi, |_| m);
    let mut w = Tensor::zeros(Shape::new(vec![kh, kw, total_in, m * bo])?);
    let mut b = Vec::with_capacity(m * bo);
    for s in 0..m {
        let ws = v3.require(&format!("{}.w", name(s)))?;
        if ws.dims() != first.dims() {
            return Err(Error::Param(format!("stream {s} kernel {} differs from stream 0", name(s))));
        }
        let in0 = if per_stream_in.is_some() { s } else { s * bi };
        place_block(&mut w, ws, in0, s * bo);
        b.extend_from_slice(v3.require(&format!("{}.b", name(s)))?.data());
    }
    Ok((w, Tensor::new(&[m * bo], b)?))
}

/// v1 parameters reproducing the v3 network `(v3_cfg, v3)`. Returns the v1
/// configuration alongside.
pub fn embed_v3_into_v1<T: Scalar>(v3_cfg: &NetConfig, v3: &ParamStore<T>) -> Result<(NetConfig, ParamStore<T>)> {
    let v1_cfg = v1_config_for(v3_cfg)?;
    let m = v3_cfg.n_modalities;
    let mut out = ParamStore::new();
    let mut put = |name: &str, (w, b): (Tensor<T>, Tensor<T>)| {
        out.insert(format!("{name}.w"), w);
        out.insert(format!("{name}.b"), b);
    };

    put("init.conv", block_kernel(v3, |s| format!("init.m{s}.conv"), m, Some(1))?);
    for l in 1..=v3_cfg.levels.len() {
        for conv in ["conv1", "conv2", "conv3", "shortcut"] {
            if v3.get(&format!("level{l}.m0.{conv}.w")).is_none() {
                continue;
            }
            put(&format!("level{l}.{conv}"), block_kernel(v3, |s| format!("level{l}.m{s}.{conv}"), m, None)?);
        }
    }

    // Aggregate channel of stream s, level l, channel c:
    //   v1: level-major, offset(l) * m + s * f_l + c
    //   v3: stream-major, s * sum(f) + offset(l) + c
    let widths: Vec<usize> = v3_cfg.levels.iter().map(|l| l.filters).collect();
    let per_stream: usize = widths.iter().sum();
    let agg = m * per_stream;
    let w3 = v3.require("output.conv.w")?;
    let (kh, kw, cin, k) = dims4(w3);
    let copies = v3_cfg.pyramid_bins.len() + 1;
    if cin != copies * agg {
        return Err(Error::Param(format!("output kernel reads {cin} channels, expected {}", copies * agg)));
    }
    let mut w1 = Tensor::zeros(w3.shape().clone());
    {
        let src = w3.data();
        let dst = w1.data_mut();
        for t in 0..kh * kw {
            for j in 0..copies {
                let mut offset = 0;
                for &f in &widths {
                    for s in 0..m {
                        for c in 0..f {
                            let i1 = j * agg + offset * m + s * f + c;
                            let i3 = j * agg + s * per_stream + offset + c;
                            let d = (t * cin + i1) * k;
                            let s3 = (t * cin + i3) * k;
                            dst[d..d + k].copy_from_slice(&src[s3..s3 + k]);
                        }
                    }
                    offset += f;
                }
            }
        }
    }
    out.insert("output.conv.w", w1);
    out.insert("output.conv.b", v3.require("output.conv.b")?.clone());
    Ok((v1_cfg, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::net::MixNet;
    use crate::tensor::RngSeed;
    use rand::Rng;

    fn cfg(width: usize) -> NetConfig {
        let mut c = NetConfig::with_width(Variant::V3, 3, width);
        c.init_pool = false;
        c
    }

    #[test]
    fn embedded_manifest_matches_v1() {
        let v3 = MixNet::new(NetConfig::standard(Variant::V3, 4)).unwrap();
        let p3 = v3.init_params::<f32>(RngSeed(0)).unwrap();
        let (c1, p1) = embed_v3_into_v1(v3.config(), &p3).unwrap();
        assert_eq!(c1, NetConfig::standard(Variant::V1, 4));
        let v1 = MixNet::new(c1).unwrap();
        p1.check_against(v1.manifest()).unwrap();
    }

    #[test]
    fn embedding_reproduces_logits() {
        let v3 = MixNet::new(cfg(4)).unwrap();
        for draw in 0..2u64 {
            let p3 = v3.init_params::<f64>(RngSeed(draw)).unwrap();
            let (c1, p1) = embed_v3_into_v1(v3.config(), &p3).unwrap();
            let v1 = MixNet::new(c1).unwrap();
            let mut rng = RngSeed(100 + draw).rng();
            let x = Tensor::new(&[1, 14, 13, 3], (0..14 * 13 * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let a = v3.forward(&p3, &x).unwrap();
            let b = v1.forward(&p1, &x).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
        }
    }

    #[test]
    fn zero_parameters_agree_exactly() {
        let v3 = MixNet::new(cfg(2)).unwrap();
        let p3 = ParamStore::<f32>::zeros(v3.manifest());
        let (c1, p1) = embed_v3_into_v1(v3.config(), &p3).unwrap();
        let v1 = MixNet::new(c1).unwrap();
        let x = Tensor::full(Shape::nhwc(1, 12, 12, 3).unwrap(), 0.3f32);
        assert_eq!(v3.forward(&p3, &x).unwrap(), v1.forward(&p1, &x).unwrap());
    }

    #[test]
    fn rejects_non_v3() {
        let c = NetConfig::standard(Variant::V2, 4);
        assert!(matches!(v1_config_for(&c), Err(Error::Build(_))));
    }
}
