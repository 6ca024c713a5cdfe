//! Slice-wise inference over whole volumes.

use crate::arch::{MixNet, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::volume::{restack_probabilities, slice_images, Plane, ProbVolume, Volume};

/// Class probabilities for every voxel, predicted slice by slice along
/// `plane`. `volumes` are the modality volumes in network channel order.
pub fn predict_volume(
    net: &MixNet,
    params: &ParamStore<f32>,
    volumes: &[Volume],
    plane: Plane,
    batch: usize,
) -> Result<ProbVolume> {
    let cfg = net.config();
    if volumes.len() != cfg.n_modalities {
        return Err(Error::Data(format!(
            "{} modality volumes for a network with {} inputs",
            volumes.len(),
            cfg.n_modalities
        )));
    }
    let geometry = volumes[0].geometry;
    let (_, rows, cols) = plane.slice_dims(geometry.dims);
    let images = slice_images(volumes, plane)?;
    let m = cfg.n_modalities;
    let mut probs = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let data: Vec<f32> = chunk.iter().flatten().copied().collect();
        let x = Tensor::from_vec(Shape::nhwc(chunk.len(), rows, cols, m)?, data)?;
        let p = net.predict_proba(params, &x)?;
        p.check_finite("predicted probabilities")?;
        let per = rows * cols * cfg.n_classes;
        probs.extend(p.data().chunks_exact(per).map(<[f32]>::to_vec));
    }
    restack_probabilities(geometry, plane, cfg.n_classes, &probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{NetConfig, Variant};
    use crate::tensor::RngSeed;
    use crate::volume::Geometry;

    #[test]
    fn probabilities_sum_to_one_on_every_plane() {
        let mut cfg = NetConfig::with_width(Variant::V3, 4, 4);
        cfg.init_pool = false;
        let net = MixNet::new(cfg).unwrap();
        let params = net.init_params(RngSeed(5)).unwrap();
        let g = Geometry::new([14, 13, 15], [1.0, 1.0, 2.0]).unwrap();
        let vols: Vec<Volume> = (0..3)
            .map(|m| Volume::new(g, format!("m{m}"), (0..g.voxels()).map(|i| ((i * (m + 3)) % 11) as f32 / 11.0).collect()).unwrap())
            .collect();
        for plane in Plane::ALL {
            let p = predict_volume(&net, &params, &vols, plane, 4).unwrap();
            assert_eq!(p.geometry, g);
            assert!(p.max_sum_error() <= 1e-5);
        }
        assert!(matches!(predict_volume(&net, &params, &vols[..2], Plane::Sagittal, 4), Err(Error::Data(_))));
    }
}
