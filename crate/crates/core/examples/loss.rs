// Set loss on a fixed assignment and a finite-difference check of its gradient.

use anat9::geometry::NormalizedTarget;
use anat9::loss::{loss_gradients, set_loss, LossOptions, RawPrediction};
use anat9::matching::{build_index_cost, match_predictions, CostCoeffs, GroundTruth, Prediction};

fn loss_of(raw: &[RawPrediction], gts: &[GroundTruth], coeffs: &CostCoeffs) -> anat9::Result<f64> {
    let preds: Vec<Prediction> = raw.iter().map(RawPrediction::activate).collect();
    let m = match_predictions(&preds, gts, coeffs, &build_index_cost(raw.len())?)?;
    Ok(set_loss(&preds, gts, &m, coeffs, &LossOptions::default())?.total)
}

pub fn run_example() -> anat9::Result<()> {
    let raw: Vec<RawPrediction> = (1..=3u16)
        .map(|q| RawPrediction {
            query_index: q,
            logits: vec![0.0, 0.3 * q as f64, -0.2, 0.1],
            box_params: std::array::from_fn(|k| 0.1 * k as f64 - 0.2 * q as f64),
        })
        .collect();
    let gts = vec![
        GroundTruth { label: 1, target: NormalizedTarget([0.4; 9]) },
        GroundTruth { label: 3, target: NormalizedTarget([0.6; 9]) },
    ];
    let coeffs = CostCoeffs::default();
    let preds: Vec<Prediction> = raw.iter().map(RawPrediction::activate).collect();
    let m = match_predictions(&preds, &gts, &coeffs, &build_index_cost(3)?)?;
    let loss = set_loss(&preds, &gts, &m, &coeffs, &LossOptions::default())?;
    println!("total {:.6}, classification {:.6}, position {:.6}", loss.total, loss.classification, loss.position);

    let grads = loss_gradients(&raw, &gts, &m, &coeffs, &LossOptions::default())?;
    let h = 1e-6;
    let mut plus = raw.clone();
    plus[0].box_params[4] += h;
    let mut minus = raw.clone();
    minus[0].box_params[4] -= h;
    let numeric = (loss_of(&plus, &gts, &coeffs)? - loss_of(&minus, &gts, &coeffs)?) / (2.0 * h);
    println!("d loss / d box[0][4]: analytic {:.6}, numeric {:.6}", grads[0].box_params[4], numeric);
    assert!((grads[0].box_params[4] - numeric).abs() < 1e-5);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
