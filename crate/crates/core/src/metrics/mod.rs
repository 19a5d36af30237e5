//! Detection identification and segmentation quality metrics, plus the
//! per-instance CSV report shared by both.

mod detection;
mod segmentation;

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use detection::{angle_deviation, identify, DetectionReport, GtOutcome, IdThresholds};
pub use segmentation::{
    dice, evaluate_segmentation, percentile, surface_metrics, BinaryMask, InstanceSeg, SegReport,
    SurfaceDistances,
};

/// One CSV row per instance; columns not produced by an evaluation stay empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRow {
    pub case: String,
    pub label: u16,
    pub identified: Option<bool>,
    #[serde(rename = "dP")]
    pub d_p: Option<f64>,
    #[serde(rename = "dS")]
    pub d_s: Option<f64>,
    #[serde(rename = "dA")]
    pub d_a: Option<f64>,
    pub dsc: Option<f64>,
    pub hd95: Option<f64>,
    pub assd: Option<f64>,
}

impl InstanceRow {
    fn empty(case: &str, label: u16) -> Self {
        Self {
            case: case.to_string(),
            label,
            identified: None,
            d_p: None,
            d_s: None,
            d_a: None,
            dsc: None,
            hd95: None,
            assd: None,
        }
    }
}

impl DetectionReport {
    pub fn rows(&self, case: &str) -> Vec<InstanceRow> {
        self.per_gt
            .iter()
            .map(|o| InstanceRow {
                identified: Some(o.identified),
                d_p: o.position_dev,
                d_s: o.scale_dev,
                d_a: o.angle_dev,
                ..InstanceRow::empty(case, o.label)
            })
            .collect()
    }
}

impl SegReport {
    pub fn rows(&self, case: &str) -> Vec<InstanceRow> {
        self.per_instance
            .iter()
            .map(|s| InstanceRow {
                dsc: Some(s.dsc),
                hd95: s.hd95,
                assd: s.assd,
                ..InstanceRow::empty(case, s.label)
            })
            .collect()
    }
}

pub fn write_rows_csv(rows: &[InstanceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::Error::io(path.as_ref(), e))?;
    Ok(())
}
