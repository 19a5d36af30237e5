// Writes a small oblique label volume in both supported formats and reads it back.

use anat9::volume::{load_labels, save_volume, LabelVolume, VolumeMeta};
use nalgebra::{Matrix3, Rotation3, Vector3};

pub fn run_example() -> anat9::Result<()> {
    let direction: Matrix3<f64> = Rotation3::from_euler_angles(0.0, 0.0, 0.3).into_inner();
    let meta = VolumeMeta::new([8, 6, 4], Vector3::new(1.0, 1.5, 2.5), Vector3::new(-10.0, 5.0, 0.0), direction)?;
    let mut vol = LabelVolume::filled(meta, 0);
    vol.set([2, 3, 1], 7);
    vol.set([5, 1, 2], 12);

    let dir = tempfile::tempdir().map_err(|e| anat9::Error::io("tempdir", e))?;
    for name in ["labels.json", "labels.nii.gz"] {
        let path = dir.path().join(name);
        save_volume(&vol, &path)?;
        let back = load_labels(&path)?;
        assert_eq!(back.voxels, vol.voxels);
        let world = back.meta.voxel_to_world([2, 3, 1])?;
        println!("{name}: labels {:?}, voxel (2,3,1) at {:.3?} mm", back.labels(), world.as_slice());
        assert!((world - vol.meta.voxel_to_world([2, 3, 1])?).norm() < 1e-4);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
