use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::Pose9DoF;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, VolumeMeta};

/// Relative eigenvalue gap (fraction of the trace) under which two axes are tied.
const EIGEN_TIE: f64 = 1e-9;
/// Smallest-to-trace eigenvalue ratio under which the covariance is rank deficient.
const RANK_DEFICIENT: f64 = 1e-12;
/// Instances with fewer voxels use the identity frame.
const MIN_PCA_VOXELS: usize = 4;

/// Flips each column so its largest-magnitude component is positive, then
/// negates the third column if the frame is left-handed.
pub fn canonical_frame(frame: &Matrix3<f64>) -> Matrix3<f64> {
    let mut out = *frame;
    for k in 0..3 {
        let col = out.column(k);
        let dominant = (0..3)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .expect("three rows");
        if col[dominant] < 0.0 {
            let flipped = -out.column(k);
            out.set_column(k, &flipped);
        }
    }
    if out.determinant() < 0.0 {
        let flipped = -out.column(2);
        out.set_column(2, &flipped);
    }
    out
}

/// Eigenvectors as columns, sorted by descending eigenvalue. `None` when the
/// covariance is rank deficient.
fn principal_axes(cov: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let trace = cov.trace();
    if !(trace > 0.0) {
        return None;
    }
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if values[2] <= RANK_DEFICIENT * trace {
        return None;
    }
    let mut axes = Matrix3::zeros();
    for (slot, &k) in order.iter().enumerate() {
        axes.set_column(slot, &eig.eigenvectors.column(k));
    }

    // Groups of tied eigenvalues span a degenerate eigenspace; pick the basis
    // closest to the world axes, trying Z, then Y, then X.
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && values[end - 1] - values[end] < EIGEN_TIE * trace {
            end += 1;
        }
        if end - start > 1 {
            let span: Vec<Vector3<f64>> =
                (start..end).map(|k| axes.column(k).into_owned()).collect();
            let mut chosen: Vec<Vector3<f64>> = Vec::new();
            for world in [Vector3::z(), Vector3::y(), Vector3::x()] {
                if chosen.len() == span.len() {
                    break;
                }
                let mut u: Vector3<f64> = span.iter().map(|s| s * s.dot(&world)).sum();
                for c in &chosen {
                    u -= c * c.dot(&u);
                }
                if u.norm() > 1e-6 {
                    chosen.push(u.normalize());
                }
            }
            if chosen.len() == span.len() {
                chosen.sort_by_key(|v| v.iamax());
                for (slot, v) in (start..end).zip(chosen) {
                    axes.set_column(slot, &v);
                }
            }
        }
        start = end;
    }
    Some(axes)
}

/// Fits a 9-DoF box to a set of voxel-center world points.
///
/// Axes come from the covariance eigenvectors (descending eigenvalue,
/// canonical signs). Each edge length is the projected extent of the points
/// plus one voxel cell projected onto that axis, and the center is the middle
/// of the projected extents, so every point lies inside the closed box.
/// Fewer than four points or a rank-deficient covariance fall back to the
/// identity frame.
pub fn parameterize_points(
    points: &[Vector3<f64>],
    meta: &VolumeMeta,
    label: u16,
) -> Result<Pose9DoF> {
    if points.is_empty() {
        return Err(Error::LabelAbsent(label));
    }
    let n = points.len() as f64;
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;

    let frame = if points.len() < MIN_PCA_VOXELS {
        None
    } else {
        let cov = points
            .iter()
            .map(|p| {
                let d = p - mean;
                d * d.transpose()
            })
            .sum::<Matrix3<f64>>()
            / n;
        principal_axes(&cov)
    };
    let frame = canonical_frame(&frame.unwrap_or_else(Matrix3::identity));

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let frame_t = frame.transpose();
    for p in points {
        let local = frame_t * (p - mean);
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    }
    let scale = std::array::from_fn(|k| {
        hi[k] - lo[k] + meta.voxel_width_along(&frame.column(k).into_owned())
    });
    let center = mean + frame * ((lo + hi) / 2.0);
    Ok(Pose9DoF::from_frame(label, center, scale, &frame))
}

/// Fits the box of one instance label.
pub fn pca_parameterize(volume: &LabelVolume, label: u16) -> Result<Pose9DoF> {
    parameterize_points(&volume.world_points(label), &volume.meta, label)
}

/// Boxes for every label present, in ascending label order.
pub fn parameterize_all(volume: &LabelVolume) -> Vec<Pose9DoF> {
    let mut points: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); u16::MAX as usize + 1];
    for (idx, v) in volume.indexed() {
        if v != 0 {
            let i = Vector3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64);
            points[v as usize].push(volume.meta.index_to_world(&i));
        }
    }
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(label, p)| {
            parameterize_points(p, &volume.meta, label as u16).expect("non-empty point set")
        })
        .collect()
}

/// Axis-aligned world region around a coarse foreground mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    /// Mean world coordinate of the foreground voxels.
    pub center: Vector3<f64>,
    /// Per-axis world extent of the foreground plus one voxel.
    pub extents: Vector3<f64>,
}

pub fn roi_from_foreground(mask: &LabelVolume) -> Result<Roi> {
    let mut count = 0usize;
    let mut sum = Vector3::zeros();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (idx, v) in mask.indexed() {
        if v == 0 {
            continue;
        }
        let w =
            mask.meta
                .index_to_world(&Vector3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64));
        count += 1;
        sum += w;
        lo = lo.inf(&w);
        hi = hi.sup(&w);
    }
    if count == 0 {
        return Err(Error::EmptyForeground);
    }
    let margin = Vector3::from_fn(|k, _| {
        let mut axis = Vector3::zeros();
        axis[k] = 1.0;
        mask.meta.voxel_width_along(&axis)
    });
    Ok(Roi {
        center: sum / count as f64,
        extents: hi - lo + margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{contains, euler_to_matrix};
    use approx::assert_abs_diff_eq;

    fn cuboid_volume(dims: [usize; 3], lo: [usize; 3], size: [usize; 3]) -> LabelVolume {
        let meta = VolumeMeta::axis_aligned(dims, [1.0; 3]).unwrap();
        let mut vol = LabelVolume::filled(meta, 0);
        for k in lo[2]..lo[2] + size[2] {
            for j in lo[1]..lo[1] + size[1] {
                for i in lo[0]..lo[0] + size[0] {
                    vol.set([i, j, k], 1);
                }
            }
        }
        vol
    }

    #[test]
    fn axis_aligned_cuboid() {
        let vol = cuboid_volume([32, 20, 12], [4, 3, 2], [21, 11, 5]);
        let pose = pca_parameterize(&vol, 1).unwrap();
        assert_abs_diff_eq!(pose.scale[0], 21.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pose.scale[1], 11.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pose.scale[2], 5.0, epsilon = 1e-9);
        for a in pose.angles {
            assert_abs_diff_eq!(a, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(
            pose.center_vec(),
            Vector3::new(4.0 + 10.0, 3.0 + 5.0, 2.0 + 2.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn rotated_cuboid_recovers_alpha() {
        // 21 x 11 x 5 mm cuboid rotated 30° about Z, rasterized at 0.5 mm.
        let meta = VolumeMeta::axis_aligned([64, 64, 16], [0.5; 3]).unwrap();
        let truth = super::super::Pose9DoF {
            label: 1,
            center: [16.0, 16.0, 4.0],
            scale: [21.0, 11.0, 5.0],
            angles: [30.0, 0.0, 0.0],
        };
        let mut vol = LabelVolume::filled(meta.clone(), 0);
        for n in 0..meta.voxel_count() {
            let idx = meta.unravel(n);
            let w = meta.voxel_to_world(idx).unwrap();
            if contains(&truth, &w, 0.0) {
                vol.voxels[n] = 1;
            }
        }
        let pose = pca_parameterize(&vol, 1).unwrap();
        assert!((pose.angles[0] - 30.0).abs() < 2.0, "{pose:?}");
        assert!(
            pose.angles[1].abs() < 2.0 && pose.angles[2].abs() < 2.0,
            "{pose:?}"
        );
    }

    #[test]
    fn single_voxel_falls_back() {
        let meta = VolumeMeta::axis_aligned([5, 5, 5], [0.8, 1.2, 2.0]).unwrap();
        let mut vol = LabelVolume::filled(meta, 0);
        vol.set([2, 3, 1], 7);
        let pose = pca_parameterize(&vol, 7).unwrap();
        assert_eq!(pose.angles, [0.0; 3]);
        assert_abs_diff_eq!(pose.scale[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.scale[1], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.scale[2], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            pose.center_vec(),
            Vector3::new(1.6, 3.6, 2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn absent_label_is_error() {
        let vol = cuboid_volume([8, 8, 8], [1, 1, 1], [3, 3, 3]);
        assert!(matches!(
            pca_parameterize(&vol, 2),
            Err(Error::LabelAbsent(2))
        ));
    }

    #[test]
    fn planar_instance_uses_identity_frame() {
        let vol = cuboid_volume([16, 16, 4], [2, 2, 1], [9, 5, 1]);
        let pose = pca_parameterize(&vol, 1).unwrap();
        assert_eq!(pose.angles, [0.0; 3]);
        assert_abs_diff_eq!(pose.scale[0], 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.scale[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cube_ties_resolve_to_world_axes() {
        let vol = cuboid_volume([12, 12, 12], [2, 2, 2], [6, 6, 6]);
        let pose = pca_parameterize(&vol, 1).unwrap();
        for a in pose.angles {
            assert_abs_diff_eq!(a, 0.0, epsilon = 1e-9);
        }
        // Square cross-section rod along x: the tied y/z pair also snaps.
        let rod = cuboid_volume([20, 12, 12], [2, 3, 3], [15, 5, 5]);
        let pose = pca_parameterize(&rod, 1).unwrap();
        for a in pose.angles {
            assert_abs_diff_eq!(a, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(pose.scale[0], 15.0, epsilon = 1e-9);
    }

    #[test]
    fn canonical_frame_sign_rules() {
        let frame = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert_eq!(canonical_frame(&frame), Matrix3::identity());
        let r = euler_to_matrix([150.0, 0.0, 0.0]).into_inner();
        let c = canonical_frame(&r);
        assert!((c.determinant() - 1.0).abs() < 1e-12);
        for k in 0..2 {
            let col = c.column(k);
            assert!(col[col.iamax()] > 0.0);
        }
    }

    #[test]
    fn translation_only_moves_center() {
        let meta = VolumeMeta::axis_aligned([40, 40, 20], [1.0, 1.0, 1.5]).unwrap();
        let truth = Pose9DoF {
            label: 1,
            center: [20.0, 19.0, 14.0],
            scale: [24.0, 10.0, 6.0],
            angles: [22.0, -8.0, 5.0],
        };
        let pts: Vec<Vector3<f64>> = (0..meta.voxel_count())
            .map(|n| meta.voxel_to_world(meta.unravel(n)).unwrap())
            .filter(|w| contains(&truth, w, 0.0))
            .collect();
        let a = parameterize_points(&pts, &meta, 1).unwrap();
        let t = Vector3::new(13.25, -7.5, 101.0);
        let shifted: Vec<_> = pts.iter().map(|p| p + t).collect();
        let b = parameterize_points(&shifted, &meta, 1).unwrap();
        assert_abs_diff_eq!(b.center_vec() - a.center_vec(), t, epsilon = 1e-6);
        for k in 0..3 {
            assert_abs_diff_eq!(a.scale[k], b.scale[k], epsilon = 1e-6);
            assert_abs_diff_eq!(a.angles[k], b.angles[k], epsilon = 1e-6);
        }
        assert!(pts.iter().all(|p| contains(&a, p, 0.0)));
    }

    #[test]
    fn roi_of_cube_and_clusters() {
        let vol = cuboid_volume([10, 10, 10], [2, 2, 2], [4, 4, 4]);
        let roi = roi_from_foreground(&vol).unwrap();
        assert_abs_diff_eq!(roi.center, Vector3::repeat(3.5), epsilon = 1e-12);
        assert_abs_diff_eq!(roi.extents, Vector3::repeat(4.0), epsilon = 1e-12);

        let meta = VolumeMeta::axis_aligned([10, 1, 1], [1.0; 3]).unwrap();
        let mut two = LabelVolume::filled(meta, 0);
        two.set([0, 0, 0], 1);
        for i in 6..9 {
            two.set([i, 0, 0], 1);
        }
        let roi = roi_from_foreground(&two).unwrap();
        assert_abs_diff_eq!(
            roi.center[0],
            (0.0 + 6.0 + 7.0 + 8.0) / 4.0,
            epsilon = 1e-12
        );

        let empty = LabelVolume::filled(VolumeMeta::axis_aligned([3, 3, 3], [1.0; 3]).unwrap(), 0);
        assert!(matches!(
            roi_from_foreground(&empty),
            Err(Error::EmptyForeground)
        ));
    }
}
