// Synthetic scenes in both layouts, saved to disk.

use anat9::synth::{gen_scene, Layout, SceneConfig};

pub fn run_example() -> anat9::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| anat9::Error::io("tempdir", e))?;
    for layout in [Layout::Ladder, Layout::Stack] {
        let cfg = SceneConfig { instance_count: 6, layout, ..SceneConfig::default() };
        let scene = gen_scene(&cfg)?;
        println!("{layout:?}:");
        for p in &scene.gt_poses {
            println!("  label {:>2} center {:>7.2?} scale {:>6.2?} angles {:>7.2?}", p.label, p.center, p.scale, p.angles);
        }
        scene.save(dir.path())?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
