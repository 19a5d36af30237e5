//! Box-guided cropping of sub-volumes and merging of binary sub-masks back
//! into an instance label volume.

use nalgebra::{Matrix3, Vector3};

use super::{box_corners, matrix_to_euler, Pose9DoF, RotationMatrix};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume, VolumeMeta, Voxel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

/// Sampling grid of a crop: `out_dims` cells tiling the box grown by
/// `expansion` mm, oriented with the box frame. Samples sit at cell centers.
pub fn crop_geometry(pose: &Pose9DoF, expansion: f64, out_dims: [usize; 3]) -> Result<VolumeMeta> {
    pose.validate()?;
    if !(expansion >= 0.0) {
        return Err(Error::Config(format!(
            "expansion must be >= 0, got {expansion}"
        )));
    }
    if out_dims.contains(&0) {
        return Err(Error::Config(format!(
            "out_dims must be >= 1, got {out_dims:?}"
        )));
    }
    let rotation = *pose.rotation().as_matrix();
    let full = Vector3::from(pose.scale).add_scalar(2.0 * expansion);
    let spacing = Vector3::from_fn(|k, _| full[k] / out_dims[k] as f64);
    let first = -full / 2.0 + spacing / 2.0;
    let origin = pose.center_vec() + rotation * first;
    VolumeMeta::new(out_dims, spacing, origin, rotation)
}

/// Maps output voxel indices to continuous input voxel indices.
struct IndexMap {
    linear: Matrix3<f64>,
    offset: Vector3<f64>,
}

impl IndexMap {
    fn new(from: &VolumeMeta, to: &VolumeMeta) -> Self {
        let inv_spacing = Matrix3::from_diagonal(&to.spacing.map(|s| 1.0 / s));
        let linear = inv_spacing
            * to.direction.transpose()
            * from.direction
            * Matrix3::from_diagonal(&from.spacing);
        let offset = inv_spacing * to.direction.transpose() * (from.origin - to.origin);
        Self { linear, offset }
    }

    fn apply(&self, index: [usize; 3]) -> Vector3<f64> {
        self.linear * Vector3::new(index[0] as f64, index[1] as f64, index[2] as f64) + self.offset
    }
}

fn sample_nearest<T: Voxel>(volume: &Volume<T>, at: &Vector3<f64>) -> T {
    let mut idx = [0usize; 3];
    for k in 0..3 {
        let r = at[k].round();
        if r < 0.0 || r >= volume.meta.dims[k] as f64 {
            return T::default();
        }
        idx[k] = r as usize;
    }
    volume.get(idx)
}

fn sample_trilinear<T: Voxel>(volume: &Volume<T>, at: &Vector3<f64>) -> T {
    const EDGE: f64 = 1e-9;
    let dims = volume.meta.dims;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for k in 0..3 {
        let hi = (dims[k] - 1) as f64;
        if at[k] < -EDGE || at[k] > hi + EDGE {
            return T::default();
        }
        let x = at[k].clamp(0.0, hi);
        let b = (x.floor() as usize).min(dims[k].saturating_sub(2));
        base[k] = b;
        frac[k] = if dims[k] == 1 { 0.0 } else { x - b as f64 };
    }
    let mut acc = 0.0;
    for corner in 0..8usize {
        let mut w = 1.0;
        let mut idx = base;
        for k in 0..3 {
            if corner >> k & 1 == 1 {
                w *= frac[k];
                idx[k] = (idx[k] + 1).min(dims[k] - 1);
            } else {
                w *= 1.0 - frac[k];
            }
        }
        if w != 0.0 {
            acc += w * volume.get(idx).to_f64();
        }
    }
    T::from_f64(acc)
}

/// Resamples `volume` on `grid`; out-of-bounds samples are zero.
pub(crate) fn resample_onto<T: Voxel>(
    volume: &Volume<T>,
    grid: VolumeMeta,
    mode: Interpolation,
) -> Result<Volume<T>> {
    if mode == Interpolation::Trilinear && !T::INTERPOLATES {
        return Err(Error::TrilinearOnLabels);
    }
    let map = IndexMap::new(&grid, &volume.meta);
    let voxels = (0..grid.voxel_count())
        .map(|n| {
            let at = map.apply(grid.unravel(n));
            match mode {
                Interpolation::Nearest => sample_nearest(volume, &at),
                Interpolation::Trilinear => sample_trilinear(volume, &at),
            }
        })
        .collect();
    Ok(Volume { meta: grid, voxels })
}

/// Crops the (expanded) box out of `volume` onto an `out_dims` grid aligned
/// with the box frame. The returned volume's metadata is that grid, so its
/// voxels map back to world space directly.
pub fn crop_resample<T: Voxel>(
    volume: &Volume<T>,
    pose: &Pose9DoF,
    expansion: f64,
    out_dims: [usize; 3],
    mode: Interpolation,
) -> Result<Volume<T>> {
    if mode == Interpolation::Trilinear && !T::INTERPOLATES {
        return Err(Error::TrilinearOnLabels);
    }
    let grid = crop_geometry(pose, expansion, out_dims)?;
    resample_onto(volume, grid, mode)
}

/// Axis-aligned crop box on the input grid that encloses `pose` grown by
/// `expansion`, snapped to whole voxels. Cropping with the returned pose and
/// dims samples input voxel centers exactly.
pub fn grid_aligned_crop(
    pose: &Pose9DoF,
    meta: &VolumeMeta,
    expansion: f64,
) -> Result<(Pose9DoF, [usize; 3])> {
    let grown = Pose9DoF {
        scale: pose.scale.map(|s| s + 2.0 * expansion),
        ..*pose
    };
    grown.validate()?;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in box_corners(&grown) {
        let idx = meta.world_to_index(&c);
        lo = lo.inf(&idx);
        hi = hi.sup(&idx);
    }
    let mut first = [0i64; 3];
    let mut dims = [0usize; 3];
    for k in 0..3 {
        let a = (lo[k] - 1e-9).ceil().max(0.0) as i64;
        let b = (hi[k] + 1e-9).floor().min(meta.dims[k] as f64 - 1.0) as i64;
        if b < a {
            return Err(Error::Config(format!(
                "box {} lies outside the image",
                pose.label
            )));
        }
        first[k] = a;
        dims[k] = (b - a + 1) as usize;
    }
    let mid = Vector3::from_fn(|k, _| first[k] as f64 + (dims[k] as f64 - 1.0) / 2.0);
    let frame = RotationMatrix::new(meta.direction)?;
    let crop_pose = Pose9DoF {
        label: pose.label,
        center: meta.index_to_world(&mid).into(),
        scale: std::array::from_fn(|k| dims[k] as f64 * meta.spacing[k]),
        angles: matrix_to_euler(&frame),
    };
    Ok((crop_pose, dims))
}

/// A binary mask on a crop grid (see [`crop_geometry`]) tagged with its label.
#[derive(Debug, Clone)]
pub struct Submask {
    pub label: u16,
    /// Non-zero voxels are foreground; `meta` is the crop grid.
    pub mask: LabelVolume,
}

impl Submask {
    /// Wraps mask values laid out on the crop grid of `pose`.
    pub fn on_crop_grid(
        pose: &Pose9DoF,
        expansion: f64,
        out_dims: [usize; 3],
        values: Vec<u16>,
    ) -> Result<Self> {
        let meta = crop_geometry(pose, expansion, out_dims)?;
        Ok(Self {
            label: pose.label,
            mask: LabelVolume::new(meta, values)?,
        })
    }
}

/// Splats every foreground sub-voxel onto its nearest target voxel. Instances
/// are written in ascending label order and never overwrite foreground.
pub fn merge_back(submasks: &[Submask], target: &VolumeMeta) -> Result<LabelVolume> {
    target.validate()?;
    for s in submasks {
        s.mask.meta.validate()?;
    }
    let mut order: Vec<&Submask> = submasks.iter().collect();
    order.sort_by_key(|s| s.label);

    let mut out = LabelVolume::filled(target.clone(), 0);
    for sub in order {
        let map = IndexMap::new(&sub.mask.meta, target);
        for (n, &v) in sub.mask.voxels.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let at = map.apply(sub.mask.meta.unravel(n));
            let mut idx = [0usize; 3];
            let mut inside = true;
            for k in 0..3 {
                let r = at[k].round();
                if r < 0.0 || r >= target.dims[k] as f64 {
                    inside = false;
                    break;
                }
                idx[k] = r as usize;
            }
            if inside {
                let slot = target.linear_index(idx);
                if out.voxels[slot] == 0 {
                    out.voxels[slot] = sub.label;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{contains, pca_parameterize};
    use crate::volume::ScalarVolume;

    fn whole_volume_pose(meta: &VolumeMeta) -> Pose9DoF {
        Pose9DoF {
            label: 1,
            center: meta.center_world().into(),
            scale: meta.extent_mm().into(),
            angles: [0.0; 3],
        }
    }

    #[test]
    fn whole_volume_crop_is_identity() {
        let meta = VolumeMeta::axis_aligned([7, 5, 4], [1.0, 2.0, 0.5]).unwrap();
        let voxels = (0..meta.voxel_count() as u16).collect();
        let vol = LabelVolume::new(meta.clone(), voxels).unwrap();
        let out = crop_resample(
            &vol,
            &whole_volume_pose(&meta),
            0.0,
            meta.dims,
            Interpolation::Nearest,
        )
        .unwrap();
        assert_eq!(out.voxels, vol.voxels);
    }

    #[test]
    fn trilinear_midpoint() {
        let meta = VolumeMeta::axis_aligned([2, 1, 1], [1.0; 3]).unwrap();
        let vol = ScalarVolume::new(meta, vec![0.0, 10.0]).unwrap();
        // One output cell centered between the two input voxels.
        let pose = Pose9DoF {
            label: 1,
            center: [0.5, 0.0, 0.0],
            scale: [1.0; 3],
            angles: [0.0; 3],
        };
        let out = crop_resample(&vol, &pose, 0.0, [1, 1, 1], Interpolation::Trilinear).unwrap();
        assert!((out.voxels[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn trilinear_on_labels_rejected() {
        let meta = VolumeMeta::axis_aligned([2, 2, 2], [1.0; 3]).unwrap();
        let vol = LabelVolume::filled(meta.clone(), 1);
        let err = crop_resample(
            &vol,
            &whole_volume_pose(&meta),
            0.0,
            [2, 2, 2],
            Interpolation::Trilinear,
        );
        assert!(matches!(err, Err(Error::TrilinearOnLabels)));
    }

    #[test]
    fn out_of_bounds_samples_are_zero() {
        let meta = VolumeMeta::axis_aligned([4, 4, 4], [1.0; 3]).unwrap();
        let vol = LabelVolume::filled(meta, 9);
        let pose = Pose9DoF {
            label: 1,
            center: [100.0; 3],
            scale: [2.0; 3],
            angles: [0.0; 3],
        };
        let out = crop_resample(&vol, &pose, 0.0, [2, 2, 2], Interpolation::Nearest).unwrap();
        assert!(out.voxels.iter().all(|&v| v == 0));
    }

    fn rasterize(meta: &VolumeMeta, poses: &[Pose9DoF]) -> LabelVolume {
        let mut vol = LabelVolume::filled(meta.clone(), 0);
        for n in 0..meta.voxel_count() {
            let w = meta.voxel_to_world(meta.unravel(n)).unwrap();
            if let Some(p) = poses.iter().find(|p| contains(p, &w, 0.0)) {
                vol.voxels[n] = p.label;
            }
        }
        vol
    }

    #[test]
    fn crop_then_merge_single_instance_is_exact() {
        let meta = VolumeMeta::axis_aligned([30, 24, 20], [1.0, 1.0, 1.5]).unwrap();
        let truth = Pose9DoF {
            label: 4,
            center: [14.0, 11.0, 13.0],
            scale: [16.0, 8.0, 5.0],
            angles: [25.0, 10.0, -5.0],
        };
        let vol = rasterize(&meta, &[truth]);
        let pose = pca_parameterize(&vol, 4).unwrap();
        let (crop_pose, dims) = grid_aligned_crop(&pose, &meta, 0.0).unwrap();
        let crop = crop_resample(&vol, &crop_pose, 0.0, dims, Interpolation::Nearest).unwrap();
        let binary: Vec<u16> = crop.voxels.iter().map(|&v| (v == 4) as u16).collect();
        let sub = Submask {
            label: 4,
            mask: LabelVolume::new(crop.meta, binary).unwrap(),
        };
        let merged = merge_back(&[sub], &meta).unwrap();
        assert_eq!(merged, vol);
    }

    #[test]
    fn oblique_crop_covers_instance() {
        let meta = VolumeMeta::axis_aligned([40, 40, 24], [1.0; 3]).unwrap();
        let truth = Pose9DoF {
            label: 2,
            center: [20.0, 19.0, 12.0],
            scale: [24.0, 9.0, 5.0],
            angles: [33.0, -12.0, 8.0],
        };
        let vol = rasterize(&meta, &[truth]);
        let pose = pca_parameterize(&vol, 2).unwrap();
        let dims = pose.scale.map(|s| (2.0 * (s + 2.0)).ceil() as usize);
        let crop = crop_resample(&vol, &pose, 1.0, dims, Interpolation::Nearest).unwrap();
        let binary: Vec<u16> = crop.voxels.iter().map(|&v| (v == 2) as u16).collect();
        let sub = Submask {
            label: 2,
            mask: LabelVolume::new(crop.meta, binary).unwrap(),
        };
        let merged = merge_back(&[sub], &meta).unwrap();
        let total = vol.count(2);
        let recovered = merged.count(2);
        assert_eq!(
            merged
                .voxels
                .iter()
                .zip(&vol.voxels)
                .filter(|(m, v)| **m == 2 && **v != 2)
                .count(),
            0
        );
        assert!(
            recovered as f64 >= 0.99 * total as f64,
            "{recovered}/{total}"
        );
    }

    #[test]
    fn overlapping_submasks_first_label_wins() {
        let meta = VolumeMeta::axis_aligned([6, 6, 6], [1.0; 3]).unwrap();
        let full = whole_volume_pose(&meta);
        let a = Submask::on_crop_grid(&Pose9DoF { label: 5, ..full }, 0.0, meta.dims, vec![1; 216])
            .unwrap();
        let mut half = vec![0u16; 216];
        half[..108].fill(1);
        let b =
            Submask::on_crop_grid(&Pose9DoF { label: 3, ..full }, 0.0, meta.dims, half).unwrap();
        let merged = merge_back(&[a, b], &meta).unwrap();
        assert_eq!(merged.count(3), 108);
        assert_eq!(merged.count(5), 108);
    }

    #[test]
    fn disjoint_submasks_histogram_adds_up() {
        let meta = VolumeMeta::axis_aligned([10, 4, 4], [1.0; 3]).unwrap();
        let mut vol = LabelVolume::filled(meta.clone(), 0);
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..3 {
                    vol.set([i, j, k], 1);
                    vol.set([i + 6, j, k], 2);
                }
            }
        }
        let subs: Vec<Submask> = [1u16, 2]
            .iter()
            .map(|&l| {
                let p = pca_parameterize(&vol, l).unwrap();
                let (cp, dims) = grid_aligned_crop(&p, &meta, 0.0).unwrap();
                let crop = crop_resample(&vol, &cp, 0.0, dims, Interpolation::Nearest).unwrap();
                let bin = crop.voxels.iter().map(|&v| (v == l) as u16).collect();
                Submask {
                    label: l,
                    mask: LabelVolume::new(crop.meta, bin).unwrap(),
                }
            })
            .collect();
        let merged = merge_back(&subs, &meta).unwrap();
        assert_eq!(merged.count(1), 48);
        assert_eq!(merged.count(2), 48);
        assert_eq!(merged, vol);
    }

    #[test]
    fn merge_rejects_bad_target() {
        let mut meta = VolumeMeta::axis_aligned([2, 2, 2], [1.0; 3]).unwrap();
        meta.direction[(0, 0)] = 2.0;
        assert!(merge_back(&[], &meta).is_err());
    }
}
