//! Overlap and surface-distance metrics on binary masks.
//!
//! Surfaces are the foreground voxels with at least one background
//! 6-neighbour (the grid outside counts as background). Directed distances
//! come from an exact Euclidean distance transform of the other surface,
//! with anisotropic spacing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub dims: [usize; 3],
    pub voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], voxels: Vec<bool>) -> Self {
        assert_eq!(voxels.len(), dims.iter().product::<usize>(), "mask size");
        Self { dims, voxels }
    }

    pub fn from_labels(volume: &LabelVolume, label: u16) -> Self {
        Self::new(
            volume.meta.dims,
            volume.voxels.iter().map(|&v| v == label).collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.voxels.iter().any(|&v| v)
    }

    fn at(&self, i: usize, j: usize, k: usize) -> bool {
        self.voxels[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Linear indices of surface voxels.
    pub fn surface(&self) -> Vec<usize> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if !self.at(i, j, k) {
                        continue;
                    }
                    let border = i == 0
                        || i + 1 == nx
                        || j == 0
                        || j + 1 == ny
                        || k == 0
                        || k + 1 == nz
                        || !self.at(i - 1, j, k)
                        || !self.at(i + 1, j, k)
                        || !self.at(i, j - 1, k)
                        || !self.at(i, j + 1, k)
                        || !self.at(i, j, k - 1)
                        || !self.at(i, j, k + 1);
                    if border {
                        out.push(i + nx * (j + ny * k));
                    }
                }
            }
        }
        out
    }
}

fn check_grid(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::GridMismatch(a.dims, b.dims));
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_grid(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.voxels.iter().zip(&b.voxels) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// One-dimensional squared distance transform of sampled function `f` at
/// positions `x_q = q * step` (lower envelope of parabolas).
fn edt_1d(f: &[f64], step: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    let pos = |q: usize| q as f64 * step;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let s = ((fq + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(q) - pos(v)));
            if s <= *bounds.last().expect("bounds track sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = pos(p);
        while k + 1 < sites.len() && bounds[k + 1] < x {
            k += 1;
        }
        let d = x - pos(sites[k]);
        *o = d * d + f[sites[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest site.
fn squared_edt(sites: &[usize], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let n: usize = dims.iter().product();
    let mut field = vec![f64::INFINITY; n];
    for &s in sites {
        field[s] = 0.0;
    }
    let strides = [1, dims[0], dims[0] * dims[1]];
    let longest = *dims.iter().max().expect("three dims");
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let (mut site_buf, mut bound_buf) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        for start in 0..n {
            // Visit each line once, from its first element.
            if !(start / stride).is_multiple_of(len) {
                continue;
            }
            for t in 0..len {
                line[t] = field[start + t * stride];
            }
            edt_1d(
                &line[..len],
                spacing[axis],
                &mut out[..len],
                &mut site_buf,
                &mut bound_buf,
            );
            for t in 0..len {
                field[start + t * stride] = out[t];
            }
        }
    }
    field
}

/// Directed distances (mm) from each surface voxel of `from` to the surface of `to`.
fn directed(from: &[usize], to_field: &[f64]) -> Vec<f64> {
    from.iter().map(|&i| to_field[i].sqrt()).collect()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    /// Max of the two directed 95th percentiles, mm.
    pub hd95: f64,
    /// Mean over the union of both directed distance sets, mm.
    pub assd: f64,
    /// Full Hausdorff distance, mm.
    pub hd: f64,
}

/// Surface distances between two masks; `None` when either mask is empty.
pub fn surface_metrics(
    a: &BinaryMask,
    b: &BinaryMask,
    spacing: [f64; 3],
) -> Result<Option<SurfaceDistances>> {
    check_grid(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let (sa, sb) = (a.surface(), b.surface());
    let a_to_b = directed(&sa, &squared_edt(&sb, b.dims, spacing));
    let b_to_a = directed(&sb, &squared_edt(&sa, a.dims, spacing));
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let total: f64 = a_to_b.iter().sum::<f64>() + b_to_a.iter().sum::<f64>();
    Ok(Some(SurfaceDistances {
        hd95: percentile(&a_to_b, 95.0).max(percentile(&b_to_a, 95.0)),
        assd: total / (a_to_b.len() + b_to_a.len()) as f64,
        hd: max(&a_to_b).max(max(&b_to_a)),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSeg {
    pub label: u16,
    pub dsc: f64,
    pub hd95: Option<f64>,
    pub assd: Option<f64>,
    pub hd: Option<f64>,
    /// Present in the reference, absent from the prediction.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub per_instance: Vec<InstanceSeg>,
    /// Mean DSC over every reference instance (missing ones count as 0).
    pub mean_dsc: f64,
    /// Surface means skip instances where the distance is undefined.
    pub mean_hd95: Option<f64>,
    pub mean_assd: Option<f64>,
    pub mean_hd: Option<f64>,
    pub missing: Vec<u16>,
}

/// Half-open voxel box covering the foreground of either mask.
fn joint_bounds(
    gt: &LabelVolume,
    pred: &LabelVolume,
    label: u16,
) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for vol in [gt, pred] {
        for (n, &v) in vol.voxels.iter().enumerate() {
            if v == label {
                let idx = vol.meta.unravel(n);
                for k in 0..3 {
                    lo[k] = lo[k].min(idx[k]);
                    hi[k] = hi[k].max(idx[k] + 1);
                }
                any = true;
            }
        }
    }
    any.then_some((lo, hi))
}

fn sub_mask(vol: &LabelVolume, label: u16, lo: [usize; 3], hi: [usize; 3]) -> BinaryMask {
    let dims = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut voxels = Vec::with_capacity(dims.iter().product());
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                voxels.push(vol.get([i, j, k]) == label);
            }
        }
    }
    BinaryMask::new(dims, voxels)
}

/// Per-instance metrics for every label in `gt`, computed in parallel and
/// reported in ascending label order.
pub fn evaluate_segmentation(gt: &LabelVolume, pred: &LabelVolume) -> Result<SegReport> {
    if gt.meta.dims != pred.meta.dims {
        return Err(Error::GridMismatch(gt.meta.dims, pred.meta.dims));
    }
    let spacing: [f64; 3] = gt.meta.spacing.into();
    let labels = gt.labels();
    if labels.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let per_instance: Vec<InstanceSeg> = labels
        .par_iter()
        .map(|&label| {
            // Restricting to the joint bounding box leaves surfaces and
            // distances unchanged: voxels outside it are background for both.
            let (lo, hi) = joint_bounds(gt, pred, label).expect("label present in gt");
            let a = sub_mask(gt, label, lo, hi);
            let b = sub_mask(pred, label, lo, hi);
            let dsc = dice(&a, &b)?;
            let surf = surface_metrics(&a, &b, spacing)?;
            Ok(InstanceSeg {
                label,
                dsc,
                hd95: surf.map(|s| s.hd95),
                assd: surf.map(|s| s.assd),
                hd: surf.map(|s| s.hd),
                missing: b.is_empty(),
            })
        })
        .collect::<Result<_>>()?;

    let mean_of = |f: fn(&InstanceSeg) -> Option<f64>| {
        let vals: Vec<f64> = per_instance.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(SegReport {
        mean_dsc: per_instance.iter().map(|s| s.dsc).sum::<f64>() / per_instance.len() as f64,
        mean_hd95: mean_of(|s| s.hd95),
        mean_assd: mean_of(|s| s.assd),
        mean_hd: mean_of(|s| s.hd),
        missing: per_instance
            .iter()
            .filter(|s| s.missing)
            .map(|s| s.label)
            .collect(),
        per_instance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeMeta;
    use rand::{Rng, SeedableRng};

    fn single(dims: [usize; 3], at: [usize; 3]) -> BinaryMask {
        let mut m = BinaryMask::new(dims, vec![false; dims.iter().product()]);
        m.voxels[at[0] + dims[0] * (at[1] + dims[1] * at[2])] = true;
        m
    }

    #[test]
    fn dice_cases() {
        let a = BinaryMask::new([4, 2, 2], vec![true; 16]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let mut x = vec![false; 16];
        x[..8].fill(true);
        let mut y = vec![false; 16];
        y[4..12].fill(true);
        let (x, y) = (BinaryMask::new([4, 2, 2], x), BinaryMask::new([4, 2, 2], y));
        assert_eq!(dice(&x, &y).unwrap(), 0.5);
        let mut z = vec![false; 16];
        z[8..].fill(true);
        assert_eq!(dice(&x, &BinaryMask::new([4, 2, 2], z)).unwrap(), 0.0);
        let empty = BinaryMask::new([4, 2, 2], vec![false; 16]);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert!(dice(&x, &BinaryMask::new([2, 2, 2], vec![false; 8])).is_err());
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = BinaryMask::new([9, 9, 9], (0..729).map(|_| rng.gen_bool(0.3)).collect());
        let s = surface_metrics(&m, &m, [1.0, 2.0, 0.5]).unwrap().unwrap();
        assert_eq!((s.hd95, s.assd, s.hd), (0.0, 0.0, 0.0));
    }

    #[test]
    fn two_single_voxels() {
        let a = single([8, 3, 3], [1, 1, 1]);
        let b = single([8, 3, 3], [4, 1, 1]);
        let s = surface_metrics(&a, &b, [1.0; 3]).unwrap().unwrap();
        assert_eq!((s.hd95, s.assd), (3.0, 3.0));
        let s = surface_metrics(&a, &b, [2.5, 1.0, 1.0]).unwrap().unwrap();
        assert_eq!(s.hd95, 7.5);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let a = single([3, 3, 3], [1, 1, 1]);
        let e = BinaryMask::new([3, 3, 3], vec![false; 27]);
        assert_eq!(surface_metrics(&a, &e, [1.0; 3]).unwrap(), None);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&v, 50.0), 20.0);
        assert_eq!(percentile(&v, 95.0), 38.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
    }

    #[test]
    fn missing_instances_excluded_from_surface_means() {
        let meta = VolumeMeta::axis_aligned([10, 4, 4], [1.0; 3]).unwrap();
        let mut gt = LabelVolume::filled(meta.clone(), 0);
        let mut pred = LabelVolume::filled(meta, 0);
        for j in 0..4 {
            for k in 0..4 {
                for i in 0..3 {
                    gt.set([i, j, k], 1);
                    pred.set([i, j, k], 1);
                    gt.set([i + 6, j, k], 2);
                }
            }
        }
        let r = evaluate_segmentation(&gt, &pred).unwrap();
        assert_eq!(r.missing, vec![2]);
        assert_eq!(r.mean_dsc, 0.5);
        assert_eq!(r.mean_hd95, Some(0.0));
        assert_eq!(r.per_instance[1].hd95, None);
    }
}
