//! Training-time transforms that keep volumes and 9-DoF ground truth in step.
//!
//! Rigid transforms update poses analytically. Crops recompute the box of
//! every truncated instance from its surviving voxels. Erasing drops the
//! bottom pair of a ladder.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euler_to_matrix, pca_parameterize, resample_onto, Interpolation, Pose9DoF};
use crate::volume::{LabelVolume, Volume, VolumeMeta, Voxel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_translation_mm: f64,
    pub scale_range: [f64; 2],
    pub rotation_range_deg: [f64; 2],
    pub erase_probability: f64,
    /// Shortest crop kept by [`random_crop_z`], as a fraction of the z extent.
    pub min_crop_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_translation_mm: 20.0,
            scale_range: [0.9, 1.1],
            rotation_range_deg: [-15.0, 15.0],
            erase_probability: 0.5,
            min_crop_fraction: 0.6,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.max_translation_mm >= 0.0) {
            return bad(format!(
                "max_translation_mm must be >= 0, got {}",
                self.max_translation_mm
            ));
        }
        let [s0, s1] = self.scale_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!(
                "scale_range must be a non-empty positive interval, got {:?}",
                self.scale_range
            ));
        }
        let [r0, r1] = self.rotation_range_deg;
        if !(r0 <= r1 && r0 > -90.0 && r1 < 90.0) {
            return bad(format!(
                "rotation_range_deg must be a non-empty interval inside (-90, 90), got {:?}",
                self.rotation_range_deg
            ));
        }
        if !(0.0..=1.0).contains(&self.erase_probability) {
            return bad(format!(
                "erase_probability must be in [0, 1], got {}",
                self.erase_probability
            ));
        }
        if !(self.min_crop_fraction > 0.0 && self.min_crop_fraction <= 1.0) {
            return bad(format!(
                "min_crop_fraction must be in (0, 1], got {}",
                self.min_crop_fraction
            ));
        }
        Ok(())
    }
}

/// World map `x ↦ c + s·R·(x − c) + t` about the image center `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidDraw {
    pub translation_mm: [f64; 3],
    pub scale: f64,
    /// Euler angles of `R`.
    pub rotation_deg: [f64; 3],
}

impl RigidDraw {
    pub const IDENTITY: RigidDraw = RigidDraw {
        translation_mm: [0.0; 3],
        scale: 1.0,
        rotation_deg: [0.0; 3],
    };

    pub fn sample(config: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let m = config.max_translation_mm;
        let translation_mm = loop {
            let t: [f64; 3] =
                std::array::from_fn(|_| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 });
            if Vector3::from(t).norm() <= m {
                break t;
            }
        };
        let [s0, s1] = config.scale_range;
        let [r0, r1] = config.rotation_range_deg;
        Ok(Self {
            translation_mm,
            scale: if s0 < s1 { rng.gen_range(s0..=s1) } else { s0 },
            rotation_deg: std::array::from_fn(
                |_| if r0 < r1 { rng.gen_range(r0..=r1) } else { r0 },
            ),
        })
    }

    pub fn validate(&self, config: &AugmentConfig) -> Result<()> {
        let tol = 1e-9;
        let t = Vector3::from(self.translation_mm).norm();
        let [s0, s1] = config.scale_range;
        let [r0, r1] = config.rotation_range_deg;
        if t > config.max_translation_mm + tol
            || !(self.scale >= s0 - tol && self.scale <= s1 + tol)
            || self
                .rotation_deg
                .iter()
                .any(|a| !(*a >= r0 - tol && *a <= r1 + tol))
        {
            return Err(Error::Config(format!(
                "rigid draw {self:?} outside the configured ranges"
            )));
        }
        Ok(())
    }

    fn rotation(&self) -> Matrix3<f64> {
        euler_to_matrix(self.rotation_deg).into_inner()
    }

    /// Image of a world point.
    pub fn apply(&self, pivot: &Vector3<f64>, x: &Vector3<f64>) -> Vector3<f64> {
        pivot + self.scale * self.rotation() * (x - pivot) + Vector3::from(self.translation_mm)
    }
}

/// Resamples `volume` under the draw and moves each pose with it: center
/// mapped, scale multiplied, frame rotated. Poses are not refitted.
pub fn rigid_augment<T: Voxel>(
    volume: &Volume<T>,
    poses: &[Pose9DoF],
    draw: &RigidDraw,
    mode: Interpolation,
) -> Result<(Volume<T>, Vec<Pose9DoF>)> {
    if !(draw.scale > 0.0) {
        return Err(Error::Config(format!(
            "scale must be > 0, got {}",
            draw.scale
        )));
    }
    let meta = &volume.meta;
    let pivot = meta.center_world();
    let r = draw.rotation();
    let t = Vector3::from(draw.translation_mm);

    // Output voxel at world y reads input at c + Rᵀ(y − t − c)/s, which is
    // itself a valid grid: origin mapped, spacing shrunk, direction rotated.
    let inverse = |y: Vector3<f64>| pivot + r.transpose() * (y - t - pivot) / draw.scale;
    let source = VolumeMeta::new(
        meta.dims,
        meta.spacing / draw.scale,
        inverse(meta.origin),
        r.transpose() * meta.direction,
    )?;
    let mut out = resample_onto(volume, source, mode)?;
    out.meta = meta.clone();

    let moved = poses
        .iter()
        .map(|p| {
            let frame = r * p.rotation().as_matrix();
            Pose9DoF::from_frame(
                p.label,
                draw.apply(&pivot, &p.center_vec()),
                p.scale.map(|s| s * draw.scale),
                &frame,
            )
        })
        .collect();
    Ok((out, moved))
}

pub fn random_rigid_augment<T: Voxel>(
    volume: &Volume<T>,
    poses: &[Pose9DoF],
    config: &AugmentConfig,
    mode: Interpolation,
    rng: &mut ChaCha8Rng,
) -> Result<(Volume<T>, Vec<Pose9DoF>, RigidDraw)> {
    let draw = RigidDraw::sample(config, rng)?;
    let (v, p) = rigid_augment(volume, poses, &draw, mode)?;
    Ok((v, p, draw))
}

/// Keeps slices `z_lo..z_hi` of the voxel k axis. Intact instances keep
/// their pose, truncated ones are refitted, vanished ones are dropped.
/// An empty pose list means the crop removed every instance.
pub fn crop_z(
    volume: &LabelVolume,
    poses: &[Pose9DoF],
    z_lo: usize,
    z_hi: usize,
) -> Result<(LabelVolume, Vec<Pose9DoF>)> {
    let meta = &volume.meta;
    if !(z_lo < z_hi && z_hi <= meta.dims[2]) {
        return Err(Error::Config(format!(
            "crop interval {z_lo}..{z_hi} invalid for depth {}",
            meta.dims[2]
        )));
    }
    let dims = [meta.dims[0], meta.dims[1], z_hi - z_lo];
    let origin = meta.voxel_to_world([0, 0, z_lo])?;
    let new_meta = VolumeMeta::new(dims, meta.spacing, origin, meta.direction)?;
    let plane = meta.dims[0] * meta.dims[1];
    let cropped = LabelVolume::new(new_meta, volume.voxels[z_lo * plane..z_hi * plane].to_vec())?;

    let mut before = vec![0usize; u16::MAX as usize + 1];
    for &v in &volume.voxels {
        before[v as usize] += 1;
    }
    let mut after = vec![0usize; u16::MAX as usize + 1];
    for &v in &cropped.voxels {
        after[v as usize] += 1;
    }
    let mut kept = Vec::new();
    for p in poses {
        let (b, a) = (before[p.label as usize], after[p.label as usize]);
        if a == 0 {
            log::debug!("crop removed instance {}", p.label);
        } else if a == b {
            kept.push(*p);
        } else {
            kept.push(pca_parameterize(&cropped, p.label)?);
        }
    }
    Ok((cropped, kept))
}

/// [`crop_z`] on a random interval at least `min_crop_fraction` deep.
pub fn random_crop_z(
    volume: &LabelVolume,
    poses: &[Pose9DoF],
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelVolume, Vec<Pose9DoF>, [usize; 2])> {
    config.validate()?;
    let depth = volume.meta.dims[2];
    let min_len = ((depth as f64 * config.min_crop_fraction).ceil() as usize).clamp(1, depth);
    let lo = rng.gen_range(0..=depth - min_len);
    let hi = rng.gen_range(lo + min_len..=depth);
    let (v, p) = crop_z(volume, poses, lo, hi)?;
    Ok((v, p, [lo, hi]))
}

/// With probability `probability`, removes the voxels and poses of the two
/// largest labels. Returns whether it erased.
pub fn random_erase_bottom_pair(
    volume: &LabelVolume,
    poses: &[Pose9DoF],
    probability: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelVolume, Vec<Pose9DoF>, bool)> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::Config(format!(
            "erase probability must be in [0, 1], got {probability}"
        )));
    }
    let fire = rng.gen::<f64>() < probability;
    if poses.len() < 2 {
        log::warn!("fewer than two instances, nothing to erase");
        return Ok((volume.clone(), poses.to_vec(), false));
    }
    if !fire {
        return Ok((volume.clone(), poses.to_vec(), false));
    }
    let mut labels: Vec<u16> = poses.iter().map(|p| p.label).collect();
    labels.sort_unstable();
    let bottom = &labels[labels.len() - 2..];
    let mut out = volume.clone();
    for v in &mut out.voxels {
        if bottom.contains(v) {
            *v = 0;
        }
    }
    let kept = poses
        .iter()
        .filter(|p| !bottom.contains(&p.label))
        .copied()
        .collect();
    Ok((out, kept, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::parameterize_all;
    use crate::rng::{stream, Op};
    use crate::synth::{gen_scene, Jitter, SceneConfig};

    fn scene() -> crate::synth::Scene {
        gen_scene(&SceneConfig {
            jitter: Jitter::NONE,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn pose(angles: [f64; 3]) -> Pose9DoF {
        Pose9DoF {
            label: 1,
            center: [30.0, 40.0, 50.0],
            scale: [20.0, 10.0, 5.0],
            angles,
        }
    }

    fn tiny() -> LabelVolume {
        LabelVolume::filled(VolumeMeta::axis_aligned([10, 10, 10], [1.0; 3]).unwrap(), 0)
    }

    #[test]
    fn translation_moves_centers_only() {
        let draw = RigidDraw {
            translation_mm: [3.0, -2.0, 1.0],
            ..RigidDraw::IDENTITY
        };
        let p = pose([10.0, 5.0, -3.0]);
        let (_, out) = rigid_augment(&tiny(), &[p], &draw, Interpolation::Nearest).unwrap();
        for k in 0..3 {
            assert!((out[0].center[k] - p.center[k] - draw.translation_mm[k]).abs() < 1e-12);
            assert!((out[0].angles[k] - p.angles[k]).abs() < 1e-9);
        }
        assert_eq!(out[0].scale, p.scale);
    }

    #[test]
    fn scaling_about_the_image_center() {
        let vol = tiny();
        let c = vol.meta.center_world();
        let draw = RigidDraw {
            scale: 1.1,
            ..RigidDraw::IDENTITY
        };
        let p = pose([0.0; 3]);
        let (_, out) = rigid_augment(&vol, &[p], &draw, Interpolation::Nearest).unwrap();
        for k in 0..3 {
            assert!((out[0].center[k] - (c[k] + 1.1 * (p.center[k] - c[k]))).abs() < 1e-12);
            assert!((out[0].scale[k] - 1.1 * p.scale[k]).abs() < 1e-12);
        }
        assert_eq!(out[0].angles, [0.0; 3]);
    }

    #[test]
    fn rotation_composes_in_alpha() {
        let draw = RigidDraw {
            rotation_deg: [15.0, 0.0, 0.0],
            ..RigidDraw::IDENTITY
        };
        let (_, out) = rigid_augment(
            &tiny(),
            &[pose([10.0, 0.0, 0.0])],
            &draw,
            Interpolation::Nearest,
        )
        .unwrap();
        assert!((out[0].angles[0] - 25.0).abs() < 1e-9);
        assert!(out[0].angles[1].abs() < 1e-9 && out[0].angles[2].abs() < 1e-9);
    }

    #[test]
    fn trilinear_on_labels_is_rejected() {
        let r = rigid_augment(&tiny(), &[], &RigidDraw::IDENTITY, Interpolation::Trilinear);
        assert!(matches!(r, Err(Error::TrilinearOnLabels)));
    }

    #[test]
    fn analytic_poses_agree_with_refit() {
        let s = scene();
        let cfg = AugmentConfig::default();
        // Training ground truth comes from PCA, so start from the fitted boxes.
        let fitted = parameterize_all(&s.labels);
        let voxel = 1.5;
        for seed in 0..4 {
            let mut rng = stream(seed, 0, Op::Rigid);
            let (vol, poses, _) =
                random_rigid_augment(&s.labels, &fitted, &cfg, Interpolation::Nearest, &mut rng)
                    .unwrap();
            let refit = parameterize_all(&vol);
            assert_eq!(refit.len(), poses.len());
            for (a, b) in poses.iter().zip(&refit) {
                // Boxes pushed partly out of view are truncated, not comparable.
                let inside = crate::geometry::box_corners(a).iter().all(|c| {
                    let i = vol.meta.world_to_index(c);
                    (0..3).all(|k| i[k] >= 0.0 && i[k] <= vol.meta.dims[k] as f64 - 1.0)
                });
                if !inside {
                    continue;
                }
                for k in 0..3 {
                    assert!((a.angles[k] - b.angles[k]).abs() < 2.0, "{a:?} vs {b:?}");
                    assert!((a.center[k] - b.center[k]).abs() < 2.0 * voxel);
                    assert!(
                        (a.scale[k] - b.scale[k]).abs() < 2.0 * voxel,
                        "scale {k}: {a:?} vs {b:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn crop_rules() {
        let s = scene();
        let depth = s.meta.dims[2];
        let (_, same) = crop_z(&s.labels, &s.gt_poses, 0, depth).unwrap();
        assert_eq!(same, s.gt_poses);

        let (_, none) = crop_z(&s.labels, &s.gt_poses, 0, 3).unwrap();
        assert!(none.is_empty());

        // Cut through the middle of the top-right instance.
        let top = &s.gt_poses[0];
        let cut = s.meta.world_to_index(&top.center_vec())[2].round() as usize;
        let (vol, poses) = crop_z(&s.labels, &s.gt_poses, 0, cut).unwrap();
        let refit = poses.iter().find(|p| p.label == 1).unwrap();
        assert_eq!(*refit, pca_parameterize(&vol, 1).unwrap());
        assert_ne!(*refit, *top);
        assert!(vol.labels().iter().all(|l| s.labels.labels().contains(l)));
    }

    #[test]
    fn erase_rules() {
        let s = scene();
        let mut rng = stream(1, 0, Op::Erase);
        let (vol, poses, fired) =
            random_erase_bottom_pair(&s.labels, &s.gt_poses, 1.0, &mut rng).unwrap();
        assert!(fired);
        assert_eq!(poses.len(), 22);
        assert_eq!(vol.labels(), (1..=22).collect::<Vec<u16>>());

        let (vol, poses, fired) =
            random_erase_bottom_pair(&s.labels, &s.gt_poses, 0.0, &mut rng).unwrap();
        assert!(!fired);
        assert_eq!(poses, s.gt_poses);
        assert_eq!(vol.voxels, s.labels.voxels);

        let draws = |seed| {
            let mut rng = stream(seed, 0, Op::Erase);
            (0..20)
                .map(|_| {
                    random_erase_bottom_pair(
                        &tiny(),
                        &[
                            pose([0.0; 3]),
                            Pose9DoF {
                                label: 2,
                                ..pose([0.0; 3])
                            },
                        ],
                        0.5,
                        &mut rng,
                    )
                    .unwrap()
                    .2
                })
                .collect::<Vec<bool>>()
        };
        assert_eq!(draws(9), draws(9));
    }
}
