//! The three building blocks: initial convolution, dilated residual unit and
//! pyramid-pooling output unit.

use crate::autodiff::{ConvSpec, Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Shape};

use super::config::DilateResUnitConfig;
use super::params::{ParamInfo, ParamSource};

/// Convolution with bias, kernel `k x k`, SAME padding. Registers
/// `{name}.w` with shape `(k, k, cin, cout)` and `{name}.b` with `(cout)`.
pub fn conv_layer<T: Scalar>(
    g: &mut Graph<T>,
    src: &mut dyn ParamSource<T>,
    name: &str,
    x: NodeId,
    cout: usize,
    kernel: usize,
    dilation: usize,
) -> Result<NodeId> {
    let cin = channels(g, x)?;
    let w = src.fetch(
        g,
        ParamInfo {
            name: format!("{name}.w"),
            shape: Shape::new(vec![kernel, kernel, cin, cout])?,
            fan_in: kernel * kernel * cin,
        },
    )?;
    let b = src.fetch(g, ParamInfo { name: format!("{name}.b"), shape: Shape::new(vec![cout])?, fan_in: 0 })?;
    g.conv2d(x, w, Some(b), ConvSpec::new(kernel, dilation))
}

pub(crate) fn channels<T: Scalar>(g: &Graph<T>, x: NodeId) -> Result<usize> {
    Ok(g.shape(x).as_nhwc()?.3)
}

/// 5x5 convolution, ReLU, then an optional 2x2 stride-2 max pool.
pub fn init_unit<T: Scalar>(
    g: &mut Graph<T>,
    src: &mut dyn ParamSource<T>,
    name: &str,
    x: NodeId,
    out_channels: usize,
    pool: bool,
) -> Result<NodeId> {
    let c = conv_layer(g, src, &format!("{name}.conv"), x, out_channels, 5, 1)?;
    let a = g.relu(c);
    if pool {
        g.maxpool2x2(a)
    } else {
        Ok(a)
    }
}

/// Bottleneck residual unit:
/// `relu(conv1x1(relu(dilated3x3(relu(conv1x1(x))))) + shortcut(x))`, where
/// the shortcut is the identity when the channel count is unchanged and a 1x1
/// convolution otherwise.
pub fn dilate_res_unit<T: Scalar>(
    g: &mut Graph<T>,
    src: &mut dyn ParamSource<T>,
    name: &str,
    x: NodeId,
    cfg: DilateResUnitConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let cin = channels(g, x)?;
    if cin != cfg.c1 {
        return Err(shape_err!("{name}: input has {cin} channels, unit expects {}", cfg.c1));
    }
    let b = cfg.bottleneck();
    let h = conv_layer(g, src, &format!("{name}.conv1"), x, b, 1, 1)?;
    let h = g.relu(h);
    let h = conv_layer(g, src, &format!("{name}.conv2"), h, b, 3, cfg.d)?;
    let h = g.relu(h);
    let h = conv_layer(g, src, &format!("{name}.conv3"), h, cfg.c2, 1, 1)?;
    let shortcut = if cfg.has_shortcut_conv() {
        conv_layer(g, src, &format!("{name}.shortcut"), x, cfg.c2, 1, 1)?
    } else {
        x
    };
    let sum = g.add(h, shortcut)?;
    Ok(g.relu(sum))
}

/// Pyramid pooling followed by the 3x3 classifier convolution.
///
/// Each bin count `b` average-pools the map into `b x b` regions and resizes
/// the result back to the map size. The branches are concatenated after `x`
/// in `bins` order. With `upscale_to` set, the logits are bilinearly resized
/// to that size.
pub fn output_unit<T: Scalar>(
    g: &mut Graph<T>,
    src: &mut dyn ParamSource<T>,
    name: &str,
    x: NodeId,
    bins: &[usize],
    n_classes: usize,
    upscale_to: Option<(usize, usize)>,
) -> Result<NodeId> {
    let (_, h, w, _) = g.shape(x).as_nhwc()?;
    let largest = bins.iter().copied().max().unwrap_or(0);
    if h < largest || w < largest {
        return Err(Error::Param(format!(
            "{name}: feature map {h}x{w} is smaller than the largest pyramid bin count {largest}"
        )));
    }
    let mut parts = vec![x];
    for &b in bins {
        let p = g.avgpool_region(x, b, b)?;
        parts.push(g.bilinear_resize(p, h, w)?);
    }
    let cat = g.concat_channels(&parts)?;
    let logits = conv_layer(g, src, &format!("{name}.conv"), cat, n_classes, 3, 1)?;
    match upscale_to {
        Some((oh, ow)) if (oh, ow) != (h, w) => g.bilinear_resize(logits, oh, ow),
        _ => Ok(logits),
    }
}
