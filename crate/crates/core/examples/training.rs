//! Trains a predictor with temporal and spatial consistency, logging JSON lines, then evaluates
//! it and saves a checkpoint.

use trajcast::data::{generate, SyntheticSpec};
use trajcast::harness::{evaluate, jitter, train, TrainConfig, TrainInputs};

fn main() -> trajcast::Result<()> {
    let train_set = generate(&SyntheticSpec { scenario_count: 200, seed: 1, ..Default::default() })?;
    let val_set = generate(&SyntheticSpec { scenario_count: 40, seed: 2, ..Default::default() })?;
    let config = TrainConfig { epochs: 30, lr_decay_every: 20, ..TrainConfig::default() };

    let dir = std::env::temp_dir().join("trajcast-example-train");
    std::fs::create_dir_all(&dir)?;
    let mut log = std::fs::File::create(dir.join("train.jsonl"))?;
    let outcome = train(&config, TrainInputs { scenarios: &train_set, probe: &val_set, log: Some(&mut log), ..Default::default() })?;
    for e in &outcome.epochs {
        println!("epoch {:2}: lr {:.0e} loss {:.4} jitter {:?}", e.epoch, e.lr, e.loss.total, e.jitter);
    }

    let eval = evaluate(&outcome.predictor, &val_set, "example")?;
    println!("{}", serde_json::to_string_pretty(&eval.report).unwrap());
    println!("held-out jitter (s=1): {:.4} m", jitter(&outcome.predictor, &val_set, 1)?);

    let ckpt = dir.join("model.json");
    std::fs::write(&ckpt, serde_json::to_string(&outcome.checkpoint(config.seed)).unwrap())?;
    println!("checkpoint and log in {}", dir.display());
    Ok(())
}
