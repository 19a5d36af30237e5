//! Voxel grids with world-coordinate metadata.
//!
//! Voxel indices refer to voxel centers and the storage order is x-fastest:
//! the linear offset of `(i, j, k)` is `i + dims[0] * (j + dims[1] * k)`.
//! World coordinates follow `world = origin + direction * (index ∘ spacing)`.

mod container;
mod nifti;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub(crate) use container::direction_row_major;
pub use container::{read_container, write_container, ContainerHeader, DType};
pub use nifti::{read_nifti, write_nifti};

/// Tolerance for the orthonormality and determinant checks on direction matrices.
pub const DIRECTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing: Vector3<f64>,
    pub origin: Vector3<f64>,
    /// Columns are the world directions of the voxel i, j and k axes.
    pub direction: Matrix3<f64>,
}

impl VolumeMeta {
    pub fn new(
        dims: [usize; 3],
        spacing: Vector3<f64>,
        origin: Vector3<f64>,
        direction: Matrix3<f64>,
    ) -> Result<Self> {
        let meta = Self {
            dims,
            spacing,
            origin,
            direction,
        };
        meta.validate()?;
        Ok(meta)
    }

    /// Identity direction, zero origin.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(
            dims,
            Vector3::from(spacing),
            Vector3::zeros(),
            Matrix3::identity(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidMeta(format!(
                "dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidMeta(format!(
                "spacing must be positive, got {:?}",
                self.spacing.as_slice()
            )));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeta("origin must be finite".into()));
        }
        check_rotation(&self.direction, DIRECTION_TOLERANCE)
            .map_err(|msg| Error::InvalidMeta(format!("direction {msg}")))
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn linear_index(&self, index: [usize; 3]) -> usize {
        index[0] + self.dims[0] * (index[1] + self.dims[1] * index[2])
    }

    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn contains_index(&self, index: [usize; 3]) -> bool {
        index.iter().zip(self.dims.iter()).all(|(&i, &d)| i < d)
    }

    pub fn voxel_to_world(&self, index: [usize; 3]) -> Result<Vector3<f64>> {
        if !self.contains_index(index) {
            return Err(Error::IndexOutOfRange {
                index,
                dims: self.dims,
            });
        }
        Ok(self.index_to_world(&Vector3::new(
            index[0] as f64,
            index[1] as f64,
            index[2] as f64,
        )))
    }

    /// Continuous voxel coordinates to world millimetres.
    pub fn index_to_world(&self, index: &Vector3<f64>) -> Vector3<f64> {
        self.origin + self.direction * index.component_mul(&self.spacing)
    }

    /// Inverse of [`Self::index_to_world`].
    pub fn world_to_index(&self, world: &Vector3<f64>) -> Vector3<f64> {
        (self.direction.transpose() * (world - self.origin)).component_div(&self.spacing)
    }

    /// Physical size of the grid along each voxel axis, `dims ∘ spacing`.
    pub fn extent_mm(&self) -> Vector3<f64> {
        Vector3::new(
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        )
    }

    /// World point at the geometric center of the grid.
    pub fn center_world(&self) -> Vector3<f64> {
        let mid = Vector3::new(
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        );
        self.index_to_world(&mid)
    }

    /// Width of one voxel cell projected onto the unit direction `axis`.
    pub fn voxel_width_along(&self, axis: &Vector3<f64>) -> f64 {
        (0..3)
            .map(|j| (axis.dot(&self.direction.column(j)) * self.spacing[j]).abs())
            .sum()
    }

    /// Nearest voxel to a world point, if it falls inside the grid.
    pub fn nearest_index(&self, world: &Vector3<f64>) -> Option<[usize; 3]> {
        let idx = self.world_to_index(world);
        let mut out = [0usize; 3];
        for k in 0..3 {
            let r = idx[k].round();
            if r < 0.0 || r >= self.dims[k] as f64 {
                return None;
            }
            out[k] = r as usize;
        }
        Some(out)
    }
}

/// Returns a description of the failure when `m` is not a proper rotation.
pub(crate) fn check_rotation(m: &Matrix3<f64>, tol: f64) -> std::result::Result<(), String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("has non-finite entries".into());
    }
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if err > tol {
        return Err(format!("is not orthonormal (max |RᵀR - I| = {err:.3e})"));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > tol {
        return Err(format!("has determinant {det:.6}, expected +1"));
    }
    Ok(())
}

/// Element types a volume can hold.
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: DType;
    /// Whether trilinear resampling is meaningful for this type.
    const INTERPOLATES: bool;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Voxel for u16 {
    const DTYPE: DType = DType::U16;
    const INTERPOLATES: bool = false;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, u16::MAX as f64) as u16
    }
}

impl Voxel for f32 {
    const DTYPE: DType = DType::F32;
    const INTERPOLATES: bool = true;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub meta: VolumeMeta,
    pub voxels: Vec<T>,
}

/// Instance labels: 0 is background, k >= 1 an instance.
pub type LabelVolume = Volume<u16>;
pub type ScalarVolume = Volume<f32>;

impl<T: Voxel> Volume<T> {
    pub fn new(meta: VolumeMeta, voxels: Vec<T>) -> Result<Self> {
        meta.validate()?;
        if voxels.len() != meta.voxel_count() {
            return Err(Error::Inconsistent(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                meta.dims
            )));
        }
        Ok(Self { meta, voxels })
    }

    pub fn filled(meta: VolumeMeta, value: T) -> Self {
        let n = meta.voxel_count();
        Self {
            meta,
            voxels: vec![value; n],
        }
    }

    pub fn get(&self, index: [usize; 3]) -> T {
        self.voxels[self.meta.linear_index(index)]
    }

    pub fn set(&mut self, index: [usize; 3], value: T) {
        let i = self.meta.linear_index(index);
        self.voxels[i] = value;
    }

    /// Iterates `(index, value)` pairs in storage order.
    pub fn indexed(&self) -> impl Iterator<Item = ([usize; 3], T)> + '_ {
        self.voxels
            .iter()
            .enumerate()
            .map(|(n, &v)| (self.meta.unravel(n), v))
    }
}

impl LabelVolume {
    /// Sorted distinct non-zero labels.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &v in &self.voxels {
            seen[v as usize] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    pub fn count(&self, label: u16) -> usize {
        self.voxels.iter().filter(|&&v| v == label).count()
    }

    /// World coordinates of all voxel centers carrying `label`.
    pub fn world_points(&self, label: u16) -> Vec<Vector3<f64>> {
        self.indexed()
            .filter(|&(_, v)| v == label)
            .map(|(idx, _)| {
                self.meta
                    .index_to_world(&Vector3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Label,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Label(LabelVolume),
    Scalar(ScalarVolume),
}

fn is_nifti(path: &Path) -> bool {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Loads either a NIfTI-1 file (`.nii`, `.nii.gz`) or a raw+JSON container.
pub fn load_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<AnyVolume> {
    let path = path.as_ref();
    Ok(match kind {
        VolumeKind::Label => AnyVolume::Label(load_labels(path)?),
        VolumeKind::Scalar => AnyVolume::Scalar(load_scalars(path)?),
    })
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let raw = if is_nifti(path) {
        read_nifti(path)?
    } else {
        read_container(path)?
    };
    raw.into_labels()
}

pub fn load_scalars(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let raw = if is_nifti(path) {
        read_nifti(path)?
    } else {
        read_container(path)?
    };
    Ok(raw.into_scalars())
}

/// Writes `.nii`/`.nii.gz` as NIfTI-1, anything else as a raw+JSON container.
pub fn save_volume<T: Voxel>(volume: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_nifti(path) {
        write_nifti(volume, path)
    } else {
        write_container(volume, path)
    }
}

/// Decoded voxel payload before conversion to a typed volume.
#[derive(Debug, Clone)]
pub struct RawVolume {
    pub meta: VolumeMeta,
    pub data: RawData,
    /// Intensity rescaling `(slope, intercept)` applied to scalar reads.
    pub rescale: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub enum RawData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
}

impl RawData {
    pub fn len(&self) -> usize {
        match self {
            RawData::U8(v) => v.len(),
            RawData::U16(v) => v.len(),
            RawData::I16(v) => v.len(),
            RawData::I32(v) => v.len(),
            RawData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RawVolume {
    pub fn into_labels(self) -> Result<LabelVolume> {
        fn convert<I: Copy + Into<i64>>(v: &[I]) -> Result<Vec<u16>> {
            v.iter()
                .map(|&x| {
                    let x: i64 = x.into();
                    u16::try_from(x).map_err(|_| {
                        Error::UnsupportedDataType(format!("label value {x} does not fit in u16"))
                    })
                })
                .collect()
        }
        let voxels = match self.data {
            RawData::U8(v) => v.into_iter().map(u16::from).collect(),
            RawData::U16(v) => v,
            RawData::I16(v) => convert(&v)?,
            RawData::I32(v) => convert(&v)?,
            RawData::F32(_) => {
                return Err(Error::UnsupportedDataType(
                    "f32 data cannot hold instance labels".into(),
                ))
            }
        };
        Volume::new(self.meta, voxels)
    }

    pub fn into_scalars(self) -> ScalarVolume {
        let mut voxels: Vec<f32> = match self.data {
            RawData::U8(v) => v.into_iter().map(f32::from).collect(),
            RawData::U16(v) => v.into_iter().map(f32::from).collect(),
            RawData::I16(v) => v.into_iter().map(f32::from).collect(),
            RawData::I32(v) => v.into_iter().map(|x| x as f32).collect(),
            RawData::F32(v) => v,
        };
        if let Some((slope, inter)) = self.rescale {
            for v in &mut voxels {
                *v = (*v as f64 * slope + inter) as f32;
            }
        }
        Volume {
            meta: self.meta,
            voxels,
        }
    }
}
