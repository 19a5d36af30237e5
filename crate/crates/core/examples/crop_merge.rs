// Crops every instance on the native voxel grid and merges the crops back.

use anat9::geometry::{crop_resample, grid_aligned_crop, merge_back, Interpolation, Submask};
use anat9::synth::{gen_scene, SceneConfig};

pub fn run_example() -> anat9::Result<()> {
    let scene = gen_scene(&SceneConfig { instance_count: 8, ..SceneConfig::default() })?;
    let mut subs = Vec::new();
    for pose in &scene.gt_poses {
        let (crop_pose, dims) = grid_aligned_crop(pose, &scene.meta, 2.0)?;
        let mut mask = crop_resample(&scene.labels, &crop_pose, 0.0, dims, Interpolation::Nearest)?;
        mask.voxels.iter_mut().for_each(|v| *v = if *v == pose.label { pose.label } else { 0 });
        println!("label {:>2}: crop {:?}, {} voxels", pose.label, dims, mask.count(pose.label));
        subs.push(Submask { label: pose.label, mask });
    }
    let merged = merge_back(&subs, &scene.meta)?;
    assert_eq!(merged.voxels, scene.labels.voxels);
    println!("merged volume equals the original");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
