//! Oriented 9-DoF boxes: rotation conventions, PCA parameterization of
//! instance masks, target normalization and box-guided resampling.
//!
//! Euler angles `(α, β, γ)` are degrees about the world Z, Y and X axes,
//! composed extrinsically Z first: `R = Rx(γ) · Ry(β) · Rz(α)`. The columns
//! of `R` are the box's local x, y and z axes in world coordinates.

mod normalize;
mod pca;
mod resample;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::check_rotation;

pub use normalize::{
    denormalize_target, normalize_target, normalize_target_clamped, NormalizedTarget,
};
pub use pca::{
    canonical_frame, parameterize_all, parameterize_points, pca_parameterize, roi_from_foreground,
    Roi,
};
pub(crate) use resample::resample_onto;
pub use resample::{
    crop_geometry, crop_resample, grid_aligned_crop, merge_back, Interpolation, Submask,
};

/// Tolerance on `RᵀR = I` and `det R = 1` for [`RotationMatrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// `|β|` within this many degrees of 90 is treated as gimbal lock.
pub const GIMBAL_LOCK_DEG: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        check_rotation(&m, ROTATION_TOLERANCE).map_err(Error::NotRotation)?;
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn as_matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    /// Local axis `k` expressed in world coordinates.
    pub fn axis(&self, k: usize) -> Vector3<f64> {
        self.0.column(k).into_owned()
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }
}

fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `[α, β, γ]` in degrees to `Rx(γ) · Ry(β) · Rz(α)`.
pub fn euler_to_matrix(angles: [f64; 3]) -> RotationMatrix {
    let [alpha, beta, gamma] = angles;
    RotationMatrix(rot_x(gamma) * rot_y(beta) * rot_z(alpha))
}

/// Maps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w <= -180.0 {
        w += 360.0;
    } else if w > 180.0 {
        w -= 360.0;
    }
    // Adding zero turns -0 into +0.
    w + 0.0
}

/// Inverse of [`euler_to_matrix`], with `β ∈ [-90, 90]` and the other two
/// angles in `(-180, 180]`. At gimbal lock `γ = 0` and the free rotation is
/// carried by `α`.
pub fn matrix_to_euler(r: &RotationMatrix) -> [f64; 3] {
    let m = &r.0;
    // R = Rx(γ)Ry(β)Rz(α):
    //   row 0 = [cβ cα, -cβ sα, sβ]
    //   row 1 = [cγ sα + sγ sβ cα, cγ cα - sγ sβ sα, -sγ cβ]
    //   row 2 = [sγ sα - cγ sβ cα, sγ cα + cγ sβ sα,  cγ cβ]
    let cos_beta = m[(0, 0)].hypot(m[(0, 1)]);
    let beta = m[(0, 2)].atan2(cos_beta).to_degrees();
    let (alpha, gamma) = if 90.0 - beta.abs() < GIMBAL_LOCK_DEG {
        (m[(1, 0)].atan2(m[(1, 1)]).to_degrees(), 0.0)
    } else {
        (
            (-m[(0, 1)]).atan2(m[(0, 0)]).to_degrees(),
            (-m[(1, 2)]).atan2(m[(2, 2)]).to_degrees(),
        )
    };
    [wrap_degrees(alpha), beta, wrap_degrees(gamma)]
}

/// One anatomy instance as an oriented box in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose9DoF {
    pub label: u16,
    #[serde(rename = "center_mm")]
    pub center: [f64; 3],
    /// Full edge lengths along the local x, y, z axes.
    #[serde(rename = "scale_mm")]
    pub scale: [f64; 3],
    /// `[α, β, γ]` degrees about world Z, Y, X.
    #[serde(rename = "angles_deg")]
    pub angles: [f64; 3],
}

impl Pose9DoF {
    /// Builds a pose from a local frame, canonicalizing axis signs first.
    pub fn from_frame(
        label: u16,
        center: Vector3<f64>,
        scale: [f64; 3],
        frame: &Matrix3<f64>,
    ) -> Self {
        let frame = RotationMatrix(canonical_frame(frame));
        Self {
            label,
            center: center.into(),
            scale,
            angles: matrix_to_euler(&frame),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .center
            .iter()
            .chain(&self.scale)
            .chain(&self.angles)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(format!(
                "pose {} has non-finite parameters",
                self.label
            )));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config(format!(
                "pose {} has non-positive scale {:?}",
                self.label, self.scale
            )));
        }
        Ok(())
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn rotation(&self) -> RotationMatrix {
        euler_to_matrix(self.angles)
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::from(self.scale) / 2.0
    }

    /// Pose with the same box, axis signs canonicalized and angles re-derived.
    pub fn canonicalized(&self) -> Self {
        Self::from_frame(
            self.label,
            self.center_vec(),
            self.scale,
            self.rotation().as_matrix(),
        )
    }

    /// Point expressed in the box's local frame, relative to its center.
    pub fn to_local(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().as_matrix().transpose() * (point - self.center_vec())
    }
}

/// The eight corners `center + R · (±w/2, ±h/2, ±d/2)`, x-sign fastest.
pub fn box_corners(pose: &Pose9DoF) -> [Vector3<f64>; 8] {
    let r = pose.rotation();
    let half = pose.half_extents();
    let center = pose.center_vec();
    std::array::from_fn(|n| {
        let sign = |bit: usize| if n >> bit & 1 == 1 { 1.0 } else { -1.0 };
        let local = Vector3::new(sign(0) * half[0], sign(1) * half[1], sign(2) * half[2]);
        center + r.as_matrix() * local
    })
}

/// Whether `point` lies in the closed box grown by `expansion` mm on every side.
pub fn contains(pose: &Pose9DoF, point: &Vector3<f64>, expansion: f64) -> bool {
    let local = pose.to_local(point);
    let half = pose.half_extents();
    (0..3).all(|k| local[k].abs() <= half[k] + expansion)
}
