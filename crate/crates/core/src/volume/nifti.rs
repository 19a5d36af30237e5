//! Minimal single-file NIfTI-1 reader/writer.
//!
//! Data types: uint8, int16, uint16, int32, float32. The sform affine is
//! preferred over the qform when both are set; with neither, the grid is
//! axis-aligned at the origin with `pixdim` spacing.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::container::write_voxels;
use super::{DType, RawData, RawVolume, Volume, VolumeMeta, Voxel};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

mod datatype {
    pub const UINT8: i16 = 2;
    pub const INT16: i16 = 4;
    pub const INT32: i16 = 8;
    pub const FLOAT32: i16 = 16;
    pub const UINT16: i16 = 512;
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "{} bytes, header needs 348",
            bytes.len()
        )));
    }
    if LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        parse::<LittleEndian>(&bytes)
    } else if BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        parse::<BigEndian>(&bytes)
    } else {
        Err(Error::MalformedHeader("sizeof_hdr is not 348".into()))
    }
}

fn parse<E: ByteOrder>(bytes: &[u8]) -> Result<RawVolume> {
    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(Error::MalformedHeader(
            "magic is not \"n+1\" (only single-file NIfTI-1 is supported)".into(),
        ));
    }

    let i16_at = |off: usize| E::read_i16(&bytes[off..]);
    let f32_at = |off: usize| E::read_f32(&bytes[off..]) as f64;

    let ndim = i16_at(offsets::DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for (k, d) in dims.iter_mut().enumerate().take(ndim.min(3) as usize) {
        let v = i16_at(offsets::DIM + 2 * (k + 1));
        if v < 1 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {v}", k + 1)));
        }
        *d = v as usize;
    }
    for k in 4..=ndim as usize {
        let v = i16_at(offsets::DIM + 2 * k);
        if v > 1 {
            return Err(Error::Inconsistent(format!(
                "non-spatial dim[{k}] = {v}, expected 1"
            )));
        }
    }

    let pixdim: Vec<f64> = (0..4).map(|k| f32_at(offsets::PIXDIM + 4 * k)).collect();
    let spacing = Vector3::new(pixdim[1], pixdim[2], pixdim[3]);
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::MalformedHeader(format!(
            "pixdim spacing {:?} must be positive",
            spacing.as_slice()
        )));
    }

    let code = i16_at(offsets::DATATYPE);
    let dtype = match code {
        datatype::UINT8 => DType::U8,
        datatype::INT16 => DType::I16,
        datatype::UINT16 => DType::U16,
        datatype::INT32 => DType::I32,
        datatype::FLOAT32 => DType::F32,
        other => {
            return Err(Error::UnsupportedDataType(format!(
                "NIfTI datatype code {other}"
            )))
        }
    };
    let bitpix = i16_at(offsets::BITPIX);
    if bitpix as usize != 8 * dtype.size() {
        return Err(Error::MalformedHeader(format!(
            "bitpix {bitpix} for datatype {code}"
        )));
    }

    let (origin, direction, spacing) = if i16_at(offsets::SFORM_CODE) > 0 {
        sform_geometry::<E>(bytes)?
    } else if i16_at(offsets::QFORM_CODE) > 0 {
        qform_geometry::<E>(bytes, spacing, pixdim[0])?
    } else {
        (Vector3::zeros(), Matrix3::identity(), spacing)
    };
    let meta = VolumeMeta::new(dims, spacing, origin, direction)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;

    let vox_offset = f32_at(offsets::VOX_OFFSET);
    if !(vox_offset >= HEADER_SIZE as f64) || vox_offset.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = meta.voxel_count();
    let end = start + n * dtype.size();
    if bytes.len() < end {
        return Err(Error::Inconsistent(format!(
            "file holds {} data bytes, dims {:?} need {}",
            bytes.len().saturating_sub(start),
            dims,
            n * dtype.size()
        )));
    }
    let payload = &bytes[start..end];
    let data = match dtype {
        DType::U8 => RawData::U8(payload.to_vec()),
        DType::U16 => {
            let mut v = vec![0u16; n];
            E::read_u16_into(payload, &mut v);
            RawData::U16(v)
        }
        DType::I16 => {
            let mut v = vec![0i16; n];
            E::read_i16_into(payload, &mut v);
            RawData::I16(v)
        }
        DType::I32 => {
            let mut v = vec![0i32; n];
            E::read_i32_into(payload, &mut v);
            RawData::I32(v)
        }
        DType::F32 => {
            let mut v = vec![0f32; n];
            E::read_f32_into(payload, &mut v);
            RawData::F32(v)
        }
    };

    let slope = f32_at(offsets::SCL_SLOPE);
    let inter = f32_at(offsets::SCL_INTER);
    let rescale = (slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0))
        .then_some((slope, inter));
    Ok(RawVolume {
        meta,
        data,
        rescale,
    })
}

type Geometry = (Vector3<f64>, Matrix3<f64>, Vector3<f64>);

fn sform_geometry<E: ByteOrder>(bytes: &[u8]) -> Result<Geometry> {
    let mut affine = Matrix3::zeros();
    let mut origin = Vector3::zeros();
    for r in 0..3 {
        for c in 0..4 {
            let v = E::read_f32(&bytes[offsets::SROW_X + 16 * r + 4 * c..]) as f64;
            if c < 3 {
                affine[(r, c)] = v;
            } else {
                origin[r] = v;
            }
        }
    }
    let spacing = Vector3::new(
        affine.column(0).norm(),
        affine.column(1).norm(),
        affine.column(2).norm(),
    );
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::MalformedHeader("sform has a zero column".into()));
    }
    let mut direction = affine;
    for c in 0..3 {
        direction.set_column(c, &(affine.column(c) / spacing[c]));
    }
    Ok((origin, orthonormalize(&direction)?, spacing))
}

fn qform_geometry<E: ByteOrder>(
    bytes: &[u8],
    spacing: Vector3<f64>,
    qfac: f64,
) -> Result<Geometry> {
    let q: Vec<f64> = (0..3)
        .map(|k| E::read_f32(&bytes[offsets::QUATERN_B + 4 * k..]) as f64)
        .collect();
    let origin = Vector3::from_iterator(
        (0..3).map(|k| E::read_f32(&bytes[offsets::QOFFSET_X + 4 * k..]) as f64),
    );
    let a = (1.0 - (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]))
        .max(0.0)
        .sqrt();
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(a, q[0], q[1], q[2]));
    let mut direction = rot.to_rotation_matrix().into_inner();
    if qfac < 0.0 {
        let flipped = -direction.column(2);
        direction.set_column(2, &flipped);
    }
    Ok((origin, direction, spacing))
}

/// Projects a float32-precision direction onto the nearest rotation; rejects
/// reflections and matrices far from orthonormal.
fn orthonormalize(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    super::check_rotation(m, 1e-4).map_err(|msg| Error::MalformedHeader(format!("sform {msg}")))?;
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    Ok(u * v_t)
}

/// Writes a single-file NIfTI-1 (gzip-compressed for `.gz` paths) with an sform.
pub fn write_nifti<T: Voxel>(volume: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let meta = &volume.meta;
    if meta.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Config(format!(
            "dims {:?} exceed NIfTI-1 limits",
            meta.dims
        )));
    }
    let mut hdr = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut hdr[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dim = [
        3i16,
        meta.dims[0] as i16,
        meta.dims[1] as i16,
        meta.dims[2] as i16,
        1,
        1,
        1,
        1,
    ];
    for (k, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut hdr[offsets::DIM + 2 * k..], *d);
    }
    let (code, bitpix) = match T::DTYPE {
        DType::U16 => (datatype::UINT16, 16),
        DType::F32 => (datatype::FLOAT32, 32),
        other => unreachable!("no Voxel impl stores {other:?}"),
    };
    LittleEndian::write_i16(&mut hdr[offsets::DATATYPE..], code);
    LittleEndian::write_i16(&mut hdr[offsets::BITPIX..], bitpix);
    let pixdim = [
        1.0f32,
        meta.spacing[0] as f32,
        meta.spacing[1] as f32,
        meta.spacing[2] as f32,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut hdr[offsets::PIXDIM + 4 * k..], *p);
    }
    LittleEndian::write_f32(&mut hdr[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut hdr[offsets::SCL_SLOPE..], 1.0);
    hdr[offsets::XYZT_UNITS] = 2; // millimetres
    LittleEndian::write_i16(&mut hdr[offsets::SFORM_CODE..], 1);
    for r in 0..3 {
        for c in 0..4 {
            let v = if c < 3 {
                meta.direction[(r, c)] * meta.spacing[c]
            } else {
                meta.origin[r]
            };
            LittleEndian::write_f32(&mut hdr[offsets::SROW_X + 16 * r + 4 * c..], v as f32);
        }
    }
    hdr[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    let mut body = hdr;
    write_voxels(&mut body, &volume.voxels).map_err(|e| Error::io(path, e))?;

    let gz = path.extension().is_some_and(|e| e == "gz");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&body).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut file = file;
        file.write_all(&body)
    };
    result.map_err(|e| Error::io(path, e))
}
