// Trains the toy query detector and decodes only the requested labels.

use std::collections::BTreeSet;

use anat9::synth::{Jitter, SceneConfig};
use anat9::toydetect::{steerable_infer, train_toy, DatasetConfig, TrainConfig};

pub fn run_example() -> anat9::Result<()> {
    let config = TrainConfig {
        epochs: 300,
        dataset: DatasetConfig {
            scene: SceneConfig { instance_count: 8, jitter: Jitter::NONE, ..SceneConfig::default() },
            count: 2,
        },
        ..TrainConfig::default()
    };
    let out = train_toy(&config)?;
    let first = &out.log[0];
    let last = out.log.last().expect("epochs >= 1");
    println!("loss {:.4} -> {:.4} over {} epochs", first.total, last.total, out.log.len());
    let binding = out.bank.binding.as_ref().expect("binding recorded");
    println!("query -> label binding: {binding}");

    let meta = out.bank.image.to_meta()?;
    let inf = steerable_infer(&out.bank, &BTreeSet::from([1, 5]), &meta)?;
    for b in &inf.boxes {
        println!("label {} center {:.2?}", b.label, b.center);
    }
    println!("decoded outputs: {}", inf.work);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
