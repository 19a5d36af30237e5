use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{wrap_degrees, Pose9DoF};
use crate::error::{Error, Result};
use crate::volume::VolumeMeta;

/// Box parameters squashed into `[0, 1]` relative to an image grid:
/// position over the voxel grid, scale over the physical image size and
/// angles as `(a + 180) / 360`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTarget(pub [f64; 9]);

impl NormalizedTarget {
    pub fn position(&self) -> &[f64] {
        &self.0[0..3]
    }

    pub fn scale(&self) -> &[f64] {
        &self.0[3..6]
    }

    pub fn angle(&self) -> &[f64] {
        &self.0[6..9]
    }

    pub fn as_array(&self) -> &[f64; 9] {
        &self.0
    }
}

fn unchecked(pose: &Pose9DoF, meta: &VolumeMeta) -> [f64; 9] {
    let index = meta.world_to_index(&pose.center_vec());
    let extent = meta.extent_mm();
    let mut out = [0.0; 9];
    for k in 0..3 {
        out[k] = (index[k] + 0.5) / meta.dims[k] as f64;
        out[3 + k] = pose.scale[k] / extent[k];
        out[6 + k] = (pose.angles[k] + 180.0) / 360.0;
    }
    out
}

/// Like [`normalize_target`] but clamps every component into `[0, 1]`.
/// Meant for noisy predictions, which may leave the image.
pub fn normalize_target_clamped(pose: &Pose9DoF, meta: &VolumeMeta) -> NormalizedTarget {
    NormalizedTarget(unchecked(pose, meta).map(|v| v.clamp(0.0, 1.0)))
}

pub fn normalize_target(pose: &Pose9DoF, meta: &VolumeMeta) -> Result<NormalizedTarget> {
    let out = unchecked(pose, meta);
    if let Some((component, &value)) = out
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::OutOfUnitRange { component, value });
    }
    Ok(NormalizedTarget(out))
}

pub fn denormalize_target(target: &NormalizedTarget, label: u16, meta: &VolumeMeta) -> Pose9DoF {
    let t = &target.0;
    let index = Vector3::from_fn(|k, _| t[k] * meta.dims[k] as f64 - 0.5);
    let extent = meta.extent_mm();
    Pose9DoF {
        label,
        center: meta.index_to_world(&index).into(),
        scale: std::array::from_fn(|k| t[3 + k] * extent[k]),
        angles: std::array::from_fn(|k| wrap_degrees(t[6 + k] * 360.0 - 180.0)),
    }
}
