// Rigid, z-crop and erase augmentations with their box updates.

use anat9::augment::{crop_z, random_erase_bottom_pair, rigid_augment, RigidDraw};
use anat9::geometry::Interpolation;
use anat9::rng::{stream, Op};
use anat9::synth::{gen_scene, SceneConfig};

pub fn run_example() -> anat9::Result<()> {
    let scene = gen_scene(&SceneConfig { instance_count: 8, ..SceneConfig::default() })?;
    let draw = RigidDraw { translation_mm: [4.0, -3.0, 2.0], scale: 1.05, rotation_deg: [10.0, 0.0, 0.0] };
    let (vol, poses) = rigid_augment(&scene.labels, &scene.gt_poses, &draw, Interpolation::Nearest)?;
    let (a, b) = (&scene.gt_poses[0], &poses[0]);
    println!("rigid: label {} center {:.2?} -> {:.2?}, alpha {:.2} -> {:.2}", a.label, a.center, b.center, a.angles[0], b.angles[0]);

    let (cropped, kept) = crop_z(&vol, &poses, 20, 70)?;
    println!("crop z 20..70: {} of {} boxes kept, dims {:?}", kept.len(), poses.len(), cropped.meta.dims);

    let mut rng = stream(7, 0, Op::Erase);
    let (erased, left, fired) = random_erase_bottom_pair(&cropped, &kept, 1.0, &mut rng)?;
    println!("erase fired {fired}: labels {:?} remain ({} boxes)", erased.labels(), left.len());
    assert!(fired && left.len() + 2 == kept.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
