//! Seeded synthetic scenes of ordered, oriented cuboid instances.
//!
//! A ladder mimics a rib cage: level `k` (from the top, decreasing z) holds
//! labels `2k - 1` on the right (negative x) and `2k` on the left, each an
//! oblique cuboid. A stack mimics a spine: axis-aligned boxes one above the
//! other with label 1 on top, jittered in pitch only.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxset::BoxSet;
use crate::error::{Error, Result};
use crate::geometry::{box_corners, contains, normalize_target_clamped, wrap_degrees, Pose9DoF};
use crate::matching::Prediction;
use crate::rng::{self, Op};
use crate::volume::{save_volume, LabelVolume, VolumeMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Ladder,
    Stack,
}

/// Uniform jitter half-widths applied to every canonical pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Jitter {
    pub translation_mm: f64,
    /// Relative scale change, e.g. 0.05 for ±5%.
    pub scale_fraction: f64,
    pub rotation_deg: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            translation_mm: 2.0,
            scale_fraction: 0.05,
            rotation_deg: 3.0,
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        translation_mm: 0.0,
        scale_fraction: 0.0,
        rotation_deg: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub instance_count: u16,
    pub layout: Layout,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub jitter: Jitter,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            instance_count: 24,
            layout: Layout::Ladder,
            dims: [128, 128, 160],
            spacing_mm: [1.5; 3],
            jitter: Jitter::default(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instance_count == 0 {
            return Err(Error::Config("instance_count must be >= 1".into()));
        }
        let j = self.jitter;
        if [j.translation_mm, j.scale_fraction, j.rotation_deg]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::Config(format!("jitter must be >= 0: {j:?}")));
        }
        if j.scale_fraction >= 1.0 {
            return Err(Error::Config("scale_fraction must be < 1".into()));
        }
        self.meta().map(|_| ())
    }

    pub fn meta(&self) -> Result<VolumeMeta> {
        VolumeMeta::axis_aligned(self.dims, self.spacing_mm)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub meta: VolumeMeta,
    /// Labels `1..=C` in ascending order.
    pub gt_poses: Vec<Pose9DoF>,
    pub labels: LabelVolume,
}

impl Scene {
    pub fn box_set(&self) -> BoxSet {
        BoxSet::new(&self.meta, self.gt_poses.clone())
    }

    /// Writes `labels.json` + `labels.raw` and `boxes.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_volume(&self.labels, dir.join("labels.json"))?;
        self.box_set().save(dir.join("boxes.json"))
    }
}

fn canonical_ladder(c: u16, meta: &VolumeMeta) -> Vec<Pose9DoF> {
    let levels = c.div_ceil(2);
    let extent = meta.extent_mm();
    let mid = meta.center_world();
    let pitch = extent[2] / (levels as f64 + 1.0);
    let top = mid[2] + pitch * (levels as f64 - 1.0) / 2.0;
    (1..=c)
        .map(|label| {
            let level = (label - 1) / 2;
            let t = level as f64 / levels.max(2).saturating_sub(1) as f64;
            let side = if label % 2 == 1 { -1.0 } else { 1.0 };
            // Longest ribs in the middle of the cage, with a shallower sweep lower down.
            let length = 50.0 + 20.0 * (std::f64::consts::PI * t).sin();
            let sweep = 15.0 + 10.0 * t;
            Pose9DoF {
                label,
                center: [mid[0] + side * 45.0, mid[1], top - pitch * level as f64],
                scale: [length, 18.0, 9.0],
                angles: [-side * sweep, -side * 5.0, 3.0],
            }
        })
        .collect()
}

fn canonical_stack(c: u16, meta: &VolumeMeta) -> Vec<Pose9DoF> {
    let extent = meta.extent_mm();
    let mid = meta.center_world();
    let pitch = extent[2] / (c as f64 + 1.0);
    let top = mid[2] + pitch * (c as f64 - 1.0) / 2.0;
    (1..=c)
        .map(|label| Pose9DoF {
            label,
            center: [mid[0], mid[1], top - pitch * (label - 1) as f64],
            scale: [40.0, 28.0, 0.6 * pitch],
            angles: [0.0; 3],
        })
        .collect()
}

/// Canonical layout for `config` perturbed by its seeded jitter, no raster.
pub fn gen_poses(config: &SceneConfig) -> Result<(VolumeMeta, Vec<Pose9DoF>)> {
    config.validate()?;
    let meta = config.meta()?;
    let canonical = match config.layout {
        Layout::Ladder => canonical_ladder(config.instance_count, &meta),
        Layout::Stack => canonical_stack(config.instance_count, &meta),
    };
    let mut rng = rng::stream(config.seed, 0, Op::Scene);
    let j = config.jitter;
    let sym = |rng: &mut ChaCha8Rng, h: f64| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
    let poses = canonical
        .into_iter()
        .map(|p| {
            let center = std::array::from_fn(|k| p.center[k] + sym(&mut rng, j.translation_mm));
            let scale =
                std::array::from_fn(|k| p.scale[k] * (1.0 + sym(&mut rng, j.scale_fraction)));
            let angles = match config.layout {
                Layout::Ladder => std::array::from_fn(|k| {
                    wrap_degrees(p.angles[k] + sym(&mut rng, j.rotation_deg))
                }),
                Layout::Stack => [
                    p.angles[0],
                    p.angles[1],
                    wrap_degrees(p.angles[2] + sym(&mut rng, j.rotation_deg)),
                ],
            };
            Pose9DoF {
                center,
                scale,
                angles,
                ..p
            }
            .canonicalized()
        })
        .collect::<Vec<_>>();

    for p in &poses {
        for corner in box_corners(p) {
            let idx = meta.world_to_index(&corner);
            if (0..3).any(|k| idx[k] < -0.5 || idx[k] > meta.dims[k] as f64 - 0.5) {
                return Err(Error::Scene(format!(
                    "box {} exceeds the volume bounds",
                    p.label
                )));
            }
        }
    }
    Ok((meta, poses))
}

/// Marks every voxel whose center lies in the box; earlier labels keep
/// contested voxels.
pub fn rasterize(poses: &[Pose9DoF], meta: &VolumeMeta) -> LabelVolume {
    let mut vol = LabelVolume::filled(meta.clone(), 0);
    for p in poses {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for c in box_corners(p) {
            let idx = meta.world_to_index(&c);
            lo = lo.inf(&idx);
            hi = hi.sup(&idx);
        }
        let range = |k: usize| {
            let a = lo[k].ceil().max(0.0) as usize;
            let b = (hi[k].floor().min(meta.dims[k] as f64 - 1.0)).max(-1.0);
            a..(b + 1.0) as usize
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let idx = [x, y, z];
                    let w = meta.index_to_world(&Vector3::new(x as f64, y as f64, z as f64));
                    if contains(p, &w, 0.0) {
                        let slot = meta.linear_index(idx);
                        if vol.voxels[slot] == 0 {
                            vol.voxels[slot] = p.label;
                        }
                    }
                }
            }
        }
    }
    vol
}

pub fn gen_scene(config: &SceneConfig) -> Result<Scene> {
    let (meta, gt_poses) = gen_poses(config)?;
    let labels = rasterize(&gt_poses, &meta);
    if let Some(p) = gt_poses.iter().find(|p| labels.count(p.label) == 0) {
        return Err(Error::Scene(format!(
            "box {} covers no voxel center",
            p.label
        )));
    }
    Ok(Scene {
        meta,
        gt_poses,
        labels,
    })
}

/// Gaussian standard deviations of the prediction noise model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNoise {
    pub position_mm: f64,
    pub scale_mm: f64,
    pub angle_deg: f64,
}

/// Smallest edge a perturbed box may shrink to.
pub const MIN_SCALE_MM: f64 = 0.1;

/// One noisy copy of every ground truth not in `drop`, in input order.
pub fn perturb_poses(
    gt: &[Pose9DoF],
    noise: &PoseNoise,
    drop: &BTreeSet<u16>,
    seed: u64,
) -> Result<Vec<Pose9DoF>> {
    let sigmas = [noise.position_mm, noise.scale_mm, noise.angle_deg];
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("noise must be >= 0: {noise:?}")));
    }
    let normals = sigmas.map(|s| Normal::new(0.0, s).expect("finite non-negative sigma"));
    let mut rng = rng::stream(seed, 0, Op::Perturb);
    let mut out = Vec::with_capacity(gt.len());
    for p in gt {
        // Draw for every instance so dropping one does not shift the others.
        let d: [f64; 9] = std::array::from_fn(|k| normals[k / 3].sample(&mut rng));
        if drop.contains(&p.label) {
            continue;
        }
        out.push(Pose9DoF {
            label: p.label,
            center: std::array::from_fn(|k| p.center[k] + d[k]),
            scale: std::array::from_fn(|k| (p.scale[k] + d[3 + k]).max(MIN_SCALE_MM)),
            angles: std::array::from_fn(|k| wrap_degrees(p.angles[k] + d[6 + k])),
        });
    }
    Ok(out)
}

/// Certain predictions (probability 1 on the true label, query = label)
/// from perturbed boxes, normalized to `meta` with clamping.
pub fn perturb_predictions(
    gt: &[Pose9DoF],
    noise: &PoseNoise,
    drop: &BTreeSet<u16>,
    num_classes: usize,
    meta: &VolumeMeta,
    seed: u64,
) -> Result<Vec<Prediction>> {
    Ok(perturb_poses(gt, noise, drop, seed)?
        .iter()
        .map(|p| Prediction::one_hot(p.label, num_classes, normalize_target_clamped(p, meta)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pca_parameterize;
    use crate::metrics::{identify, IdThresholds};

    fn small(layout: Layout, jitter: Jitter, seed: u64) -> SceneConfig {
        SceneConfig {
            layout,
            jitter,
            seed,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn deterministic_and_complete() {
        let cfg = small(Layout::Ladder, Jitter::default(), 11);
        let a = gen_scene(&cfg).unwrap();
        let b = gen_scene(&cfg).unwrap();
        assert_eq!(a.labels.voxels, b.labels.voxels);
        assert_eq!(a.gt_poses, b.gt_poses);
        assert_eq!(a.labels.labels(), (1..=24).collect::<Vec<u16>>());
        let z = gen_scene(&small(Layout::Ladder, Jitter::NONE, 1)).unwrap();
        let z2 = gen_scene(&small(Layout::Ladder, Jitter::NONE, 2)).unwrap();
        assert_eq!(z.labels.voxels, z2.labels.voxels);
    }

    #[test]
    fn ladder_ordering() {
        let s = gen_scene(&small(Layout::Ladder, Jitter::NONE, 0)).unwrap();
        let p = &s.gt_poses;
        assert!(
            p[0].center[0] < p[1].center[0],
            "odd labels on the right (negative x)"
        );
        assert!(p[0].center[2] > p[2].center[2], "labels descend in z");
    }

    #[test]
    fn rasterized_voxels_lie_in_their_box() {
        for layout in [Layout::Ladder, Layout::Stack] {
            let s = gen_scene(&small(layout, Jitter::default(), 5)).unwrap();
            for (idx, v) in s.labels.indexed() {
                if v != 0 {
                    let w = s.meta.voxel_to_world(idx).unwrap();
                    assert!(contains(&s.gt_poses[v as usize - 1], &w, 0.0));
                }
            }
        }
    }

    #[test]
    fn pca_recovers_generating_pose() {
        let s = gen_scene(&small(Layout::Ladder, Jitter::default(), 3)).unwrap();
        for g in &s.gt_poses {
            let p = pca_parameterize(&s.labels, g.label).unwrap();
            for k in 0..3 {
                assert!((p.angles[k] - g.angles[k]).abs() < 2.0, "{g:?} vs {p:?}");
                assert!((p.center[k] - g.center[k]).abs() < 3.0);
                assert!((p.scale[k] - g.scale[k]).abs() < 3.0);
            }
        }
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let cfg = SceneConfig {
            dims: [40, 40, 40],
            ..SceneConfig::default()
        };
        assert!(matches!(gen_scene(&cfg), Err(Error::Scene(_))));
    }

    #[test]
    fn perturbation_examples() {
        let s = gen_poses(&small(Layout::Ladder, Jitter::default(), 1))
            .unwrap()
            .1;
        let th = IdThresholds::default();
        let exact = perturb_poses(&s, &PoseNoise::default(), &BTreeSet::new(), 0).unwrap();
        assert_eq!(identify(&exact, &s, &th).unwrap().id_rate, 1.0);
        let dropped = perturb_poses(&s, &PoseNoise::default(), &BTreeSet::from([12]), 0).unwrap();
        assert_eq!(identify(&dropped, &s, &th).unwrap().num_identified, 23);
        let noisy = PoseNoise {
            position_mm: 30.0,
            ..PoseNoise::default()
        };
        let mean: f64 = (0..100)
            .map(|seed| {
                let p = perturb_poses(&s, &noisy, &BTreeSet::new(), seed).unwrap();
                identify(&p, &s, &th).unwrap().id_rate
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean < 1.0);
    }
}
