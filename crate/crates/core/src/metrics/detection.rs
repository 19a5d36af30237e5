use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose9DoF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdThresholds {
    pub position_mm: f64,
    pub scale_mm: f64,
    pub angle_deg: f64,
}

impl Default for IdThresholds {
    fn default() -> Self {
        Self {
            position_mm: 20.0,
            scale_mm: 20.0,
            angle_deg: 10.0,
        }
    }
}

impl IdThresholds {
    pub fn validate(&self) -> Result<()> {
        if [self.position_mm, self.scale_mm, self.angle_deg]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::Config(format!(
                "identification thresholds must be > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-axis angular difference in degrees, taking the short way round.
pub fn angle_deviation(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtOutcome {
    pub label: u16,
    pub identified: bool,
    /// Index into the prediction list of the box carrying this label.
    pub prediction: Option<usize>,
    /// Center distance, mm.
    pub position_dev: Option<f64>,
    /// Mean per-axis absolute scale difference, mm.
    pub scale_dev: Option<f64>,
    /// Mean per-axis wrapped angle difference, degrees.
    pub angle_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub per_gt: Vec<GtOutcome>,
    /// Ground truths `N`.
    pub num_gt: usize,
    /// Predictions `M`.
    pub num_pred: usize,
    /// Identified `R`.
    pub num_identified: usize,
    pub id_rate: f64,
    /// Deviation means over identified anatomies; `None` when `R = 0`.
    pub p_mean: Option<f64>,
    pub s_mean: Option<f64>,
    pub a_mean: Option<f64>,
}

fn center_distance(a: &Pose9DoF, b: &Pose9DoF) -> f64 {
    (Vector3::from(a.center) - Vector3::from(b.center)).norm()
}

/// Identification of each ground-truth box.
///
/// GT `i` is identified when the prediction carrying its label is also the
/// prediction with the nearest center among all predictions, and its center
/// distance, mean scale difference and mean angle difference are all strictly
/// below the thresholds.
pub fn identify(
    preds: &[Pose9DoF],
    gts: &[Pose9DoF],
    thresholds: &IdThresholds,
) -> Result<DetectionReport> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    thresholds.validate()?;

    let per_gt: Vec<GtOutcome> = gts
        .iter()
        .map(|gt| {
            let nearest_any = preds
                .iter()
                .map(|p| center_distance(p, gt))
                .fold(f64::INFINITY, f64::min);
            let own = preds
                .iter()
                .enumerate()
                .filter(|(_, p)| p.label == gt.label)
                .min_by(|(_, a), (_, b)| center_distance(a, gt).total_cmp(&center_distance(b, gt)));
            match own {
                None => GtOutcome {
                    label: gt.label,
                    identified: false,
                    prediction: None,
                    position_dev: None,
                    scale_dev: None,
                    angle_dev: None,
                },
                Some((j, p)) => {
                    let dp = center_distance(p, gt);
                    let ds = (0..3)
                        .map(|k| (p.scale[k] - gt.scale[k]).abs())
                        .sum::<f64>()
                        / 3.0;
                    let da = (0..3)
                        .map(|k| angle_deviation(p.angles[k], gt.angles[k]))
                        .sum::<f64>()
                        / 3.0;
                    let identified = dp <= nearest_any
                        && dp < thresholds.position_mm
                        && ds < thresholds.scale_mm
                        && da < thresholds.angle_deg;
                    GtOutcome {
                        label: gt.label,
                        identified,
                        prediction: Some(j),
                        position_dev: Some(dp),
                        scale_dev: Some(ds),
                        angle_dev: Some(da),
                    }
                }
            }
        })
        .collect();

    let hits: Vec<&GtOutcome> = per_gt.iter().filter(|o| o.identified).collect();
    let r = hits.len();
    let mean = |f: fn(&GtOutcome) -> Option<f64>| {
        (r > 0).then(|| hits.iter().filter_map(|o| f(o)).sum::<f64>() / r as f64)
    };
    Ok(DetectionReport {
        num_gt: gts.len(),
        num_pred: preds.len(),
        num_identified: r,
        id_rate: r as f64 / gts.len() as f64,
        p_mean: mean(|o| o.position_dev),
        s_mean: mean(|o| o.scale_dev),
        a_mean: mean(|o| o.angle_dev),
        per_gt,
    })
}
