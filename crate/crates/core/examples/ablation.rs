// Effect of the index-cost weight on which query learns which label.

use anat9::synth::SceneConfig;
use anat9::toydetect::{ablate_lambda_m, DatasetConfig, TrainConfig};

pub fn run_example() -> anat9::Result<()> {
    let config = TrainConfig {
        epochs: 200,
        dataset: DatasetConfig { scene: SceneConfig { instance_count: 8, ..DatasetConfig::default().scene }, count: 2 },
        ..TrainConfig::default()
    };
    let (_, points) = ablate_lambda_m(&config, &[0.0, 1.0, 4.0], &[0, 1, 2])?;
    for p in &points {
        println!(
            "lambda_m {:>4}: identity binding in {:.0}% of runs, mean displacement {:.1}",
            p.lambda_m,
            100.0 * p.identity_fraction,
            p.mean_displacement
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
