//! Native raw+JSON container: a JSON header next to a little-endian raw voxel file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{RawData, RawVolume, Volume, VolumeMeta, Voxel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    I16,
    I32,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 | DType::I16 => 2,
            DType::I32 | DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    /// Row-major 3×3.
    pub direction: [f64; 9],
    pub dtype: DType,
    /// Raw file name, relative to the header's directory.
    pub data: String,
}

impl ContainerHeader {
    pub fn meta(&self) -> Result<VolumeMeta> {
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::MalformedHeader(format!(
                "non-positive spacing {:?}",
                self.spacing_mm
            )));
        }
        VolumeMeta::new(
            self.dims,
            Vector3::from(self.spacing_mm),
            Vector3::from(self.origin_mm),
            Matrix3::from_row_slice(&self.direction),
        )
        .map_err(|e| Error::MalformedHeader(e.to_string()))
    }
}

pub(crate) fn direction_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn raw_path_for(header_path: &Path, data: &str) -> PathBuf {
    header_path
        .parent()
        .map(|p| p.join(data))
        .unwrap_or_else(|| PathBuf::from(data))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: ContainerHeader = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", path.display())))?;
    let meta = header.meta()?;
    let raw_path = raw_path_for(path, &header.data);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;

    let n = meta.voxel_count();
    let expected = n * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::Inconsistent(format!(
            "{} holds {} bytes, dims {:?} with dtype {:?} need {expected}",
            raw_path.display(),
            bytes.len(),
            meta.dims,
            header.dtype
        )));
    }
    let data = match header.dtype {
        DType::U8 => RawData::U8(bytes),
        DType::U16 => {
            let mut v = vec![0u16; n];
            LittleEndian::read_u16_into(&bytes, &mut v);
            RawData::U16(v)
        }
        DType::I16 => {
            let mut v = vec![0i16; n];
            LittleEndian::read_i16_into(&bytes, &mut v);
            RawData::I16(v)
        }
        DType::I32 => {
            let mut v = vec![0i32; n];
            LittleEndian::read_i32_into(&bytes, &mut v);
            RawData::I32(v)
        }
        DType::F32 => {
            let mut v = vec![0f32; n];
            LittleEndian::read_f32_into(&bytes, &mut v);
            RawData::F32(v)
        }
    };
    Ok(RawVolume {
        meta,
        data,
        rescale: None,
    })
}

/// Writes `<stem>.json` plus `<stem>.raw` next to it. `path` names the JSON header.
pub fn write_container<T: Voxel>(volume: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
    let data_name = format!("{stem}.raw");
    let header = ContainerHeader {
        dims: volume.meta.dims,
        spacing_mm: volume.meta.spacing.into(),
        origin_mm: volume.meta.origin.into(),
        direction: direction_row_major(&volume.meta.direction),
        dtype: T::DTYPE,
        data: data_name.clone(),
    };

    let raw_path = raw_path_for(path, &data_name);
    let file = fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let mut w = BufWriter::new(file);
    write_voxels(&mut w, &volume.voxels).map_err(|e| Error::io(&raw_path, e))?;
    w.flush().map_err(|e| Error::io(&raw_path, e))?;

    let json = serde_json::to_string_pretty(&header)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_voxels<T: Voxel, W: Write>(w: &mut W, voxels: &[T]) -> std::io::Result<()> {
    match T::DTYPE {
        DType::U16 => {
            for v in voxels {
                w.write_u16::<LittleEndian>(v.to_f64() as u16)?;
            }
        }
        DType::F32 => {
            for v in voxels {
                w.write_f32::<LittleEndian>(v.to_f64() as f32)?;
            }
        }
        other => unreachable!("no Voxel impl stores {other:?}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{load_labels, load_scalars, save_volume, LabelVolume, ScalarVolume};
    use rand::{Rng, SeedableRng};

    #[test]
    fn label_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let meta = VolumeMeta::new(
            [8, 8, 8],
            Vector3::new(0.7, 1.3, 2.9),
            Vector3::new(-12.25, 3.0, 1e-3),
            crate::geometry::euler_to_matrix([12.0, -33.0, 71.0]).into_inner(),
        )
        .unwrap();
        let voxels = (0..512).map(|_| rng.gen_range(0..300u16)).collect();
        let vol = LabelVolume::new(meta, voxels).unwrap();
        let p = dir.path().join("labels.json");
        save_volume(&vol, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap(), vol);
    }

    #[test]
    fn scalar_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let meta = VolumeMeta::axis_aligned([5, 6, 7], [1.0, 1.0, 2.5]).unwrap();
        let voxels: Vec<f32> = (0..210).map(|_| rng.gen_range(-1000.0..3000.0)).collect();
        let vol = ScalarVolume::new(meta, voxels).unwrap();
        let p = dir.path().join("ct.json");
        save_volume(&vol, &p).unwrap();
        let back = load_scalars(&p).unwrap();
        let max_diff = back
            .voxels
            .iter()
            .zip(&vol.voxels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert_eq!(max_diff, 0.0);
        assert_eq!(back.meta, vol.meta);
    }

    #[test]
    fn four_cubed_container_loads_64_voxels() {
        let dir = tempfile::tempdir().unwrap();
        let vol = LabelVolume::filled(VolumeMeta::axis_aligned([4, 4, 4], [1.0; 3]).unwrap(), 3);
        let p = dir.path().join("small.json");
        save_volume(&vol, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap().voxels.len(), 64);
    }

    #[test]
    fn negative_spacing_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let header = ContainerHeader {
            dims: [2, 2, 2],
            spacing_mm: [1.0, -1.0, 1.0],
            origin_mm: [0.0; 3],
            direction: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            dtype: DType::U8,
            data: "x.raw".into(),
        };
        let p = dir.path().join("x.json");
        fs::write(&p, serde_json::to_string(&header).unwrap()).unwrap();
        fs::write(dir.path().join("x.raw"), [0u8; 8]).unwrap();
        let err = read_container(&p).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    #[test]
    fn truncated_raw_is_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        let header = ContainerHeader {
            dims: [2, 2, 2],
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
            direction: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            dtype: DType::I16,
            data: "x.raw".into(),
        };
        let p = dir.path().join("x.json");
        fs::write(&p, serde_json::to_string(&header).unwrap()).unwrap();
        fs::write(dir.path().join("x.raw"), [0u8; 15]).unwrap();
        assert!(matches!(read_container(&p), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn unwritable_location_is_io_error() {
        let vol = LabelVolume::filled(VolumeMeta::axis_aligned([2, 2, 2], [1.0; 3]).unwrap(), 0);
        let err = save_volume(&vol, "/nonexistent-dir/for/sure/out.json").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
