//! Box-set JSON: image grid metadata plus a list of 9-DoF boxes.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose9DoF;
use crate::volume::{direction_row_major, VolumeMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageMeta {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    /// Row-major 3×3.
    pub direction: [f64; 9],
}

impl From<&VolumeMeta> for ImageMeta {
    fn from(m: &VolumeMeta) -> Self {
        Self {
            dims: m.dims,
            spacing_mm: m.spacing.into(),
            origin_mm: m.origin.into(),
            direction: direction_row_major(&m.direction),
        }
    }
}

impl ImageMeta {
    pub fn to_meta(&self) -> Result<VolumeMeta> {
        VolumeMeta::new(
            self.dims,
            Vector3::from(self.spacing_mm),
            Vector3::from(self.origin_mm),
            Matrix3::from_row_slice(&self.direction),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSet {
    pub image: ImageMeta,
    pub boxes: Vec<Pose9DoF>,
}

impl BoxSet {
    pub fn new(meta: &VolumeMeta, boxes: Vec<Pose9DoF>) -> Self {
        Self {
            image: meta.into(),
            boxes,
        }
    }

    pub fn meta(&self) -> Result<VolumeMeta> {
        self.image.to_meta()
    }

    pub fn validate(&self) -> Result<()> {
        self.meta()?;
        for b in &self.boxes {
            b.validate()?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::euler_to_matrix;

    #[test]
    fn round_trip() {
        let r = euler_to_matrix([30.0, 10.0, -5.0]).into_inner();
        let meta = VolumeMeta::new(
            [10, 12, 14],
            Vector3::new(1.0, 1.5, 2.0),
            Vector3::new(-3.0, 4.0, 5.0),
            r,
        )
        .unwrap();
        let set = BoxSet::new(
            &meta,
            vec![Pose9DoF {
                label: 3,
                center: [1.0, 2.0, 3.0],
                scale: [4.0, 5.0, 6.0],
                angles: [7.0, 8.0, 9.0],
            }],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.json");
        set.save(&path).unwrap();
        let back = BoxSet::load(&path).unwrap();
        assert_eq!(back, set);
        let m = back.meta().unwrap();
        assert!((m.direction - meta.direction).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"{"image":{"dims":[1,1,1],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],
            "direction":[1,0,0,0,1,0,0,0,1]},"boxes":[],"extra":1}"#;
        assert!(serde_json::from_str::<BoxSet>(text).is_err());
    }
}
