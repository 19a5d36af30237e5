// Detection identification and segmentation surface metrics.

use std::collections::BTreeSet;

use anat9::metrics::{evaluate_segmentation, identify, IdThresholds};
use anat9::synth::{gen_scene, perturb_poses, rasterize, PoseNoise, SceneConfig};

pub fn run_example() -> anat9::Result<()> {
    let scene = gen_scene(&SceneConfig { instance_count: 10, ..SceneConfig::default() })?;
    let noise = PoseNoise { position_mm: 1.0, scale_mm: 1.0, angle_deg: 2.0 };
    let preds = perturb_poses(&scene.gt_poses, &noise, &BTreeSet::from([4]), 11)?;
    let det = identify(&preds, &scene.gt_poses, &IdThresholds::default())?;
    println!("Id.Rate {:.2} ({} of {})", det.id_rate, det.num_identified, det.num_gt);

    let seg = evaluate_segmentation(&scene.labels, &rasterize(&preds, &scene.meta))?;
    println!(
        "mean DSC {:.3}, HD95 {:.2?} mm, ASSD {:.2?} mm, missing {:?}",
        seg.mean_dsc, seg.mean_hd95, seg.mean_assd, seg.missing
    );
    assert_eq!(seg.missing, vec![4]);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
