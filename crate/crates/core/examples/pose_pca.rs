// Euler conventions, PCA box fitting and target normalization.

use anat9::geometry::{
    denormalize_target, euler_to_matrix, matrix_to_euler, normalize_target, pca_parameterize, Pose9DoF,
};
use anat9::synth::rasterize;
use anat9::volume::VolumeMeta;

pub fn run_example() -> anat9::Result<()> {
    let angles = [30.0, -20.0, 10.0];
    let back = matrix_to_euler(&euler_to_matrix(angles));
    println!("euler {angles:?} -> matrix -> {back:.6?}");

    let meta = VolumeMeta::axis_aligned([64, 64, 64], [1.0, 1.0, 1.0])?;
    let truth = Pose9DoF { label: 3, center: [31.5, 30.0, 33.0], scale: [40.0, 20.0, 10.0], angles };
    let labels = rasterize(&[truth], &meta);
    let fit = pca_parameterize(&labels, 3)?;
    println!("true   {truth:?}");
    println!("fitted {fit:?}");
    for k in 0..3 {
        assert!((fit.center[k] - truth.center[k]).abs() < 2.0);
        assert!((fit.scale[k] - truth.scale[k]).abs() < 2.0);
    }

    let target = normalize_target(&fit, &meta)?;
    println!("normalized {:.4?}", target.as_array());
    let restored = denormalize_target(&target, fit.label, &meta);
    for k in 0..3 {
        assert!((restored.center[k] - fit.center[k]).abs() < 1e-9);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
