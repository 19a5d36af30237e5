// Hungarian assignment, the set-matching cost with the index term, and steering.

use std::collections::BTreeSet;

use anat9::geometry::NormalizedTarget;
use anat9::matching::{
    build_index_cost, hungarian, match_predictions, steer, CostCoeffs, CostMatrix, GroundTruth, Prediction,
};

pub fn run_example() -> anat9::Result<()> {
    let cost = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]);
    let a = hungarian(&cost)?;
    println!("rows -> cols {:?}, total {}", a.row_to_col, a.total);
    assert_eq!(a.total, 5.0);

    let c = 4;
    let index_cost = build_index_cost(c)?;
    let t = |v: f64| NormalizedTarget([v; 9]);
    // Query q sits on the box of label 5 - q: geometry alone rewards the swap.
    let preds: Vec<Prediction> = (1..=c as u16)
        .map(|q| Prediction::one_hot(q, c, t(0.1 * (5 - q) as f64)))
        .map(|mut p| {
            p.class_probs = vec![0.0, 0.25, 0.25, 0.25, 0.25];
            p
        })
        .collect();
    let gts: Vec<GroundTruth> = (1..=c as u16).map(|l| GroundTruth { label: l, target: t(0.1 * l as f64) }).collect();
    for lambda_m in [0.0, 50.0] {
        let coeffs = CostCoeffs::default().with_index(lambda_m);
        let m = match_predictions(&preds, &gts, &coeffs, &index_cost)?;
        println!("lambda_m {lambda_m:>4}: (query, label) {:?}", m.bindings(&preds, &gts));
    }

    let picked = steer(&preds, &BTreeSet::from([2, 4]), c)?;
    println!("steered queries {:?}", picked.iter().map(|p| p.query_index).collect::<Vec<_>>());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
