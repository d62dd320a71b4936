//! Trains a small ensemble, pools its predictions and clusters them into pseudo targets.

use trajcast::data::{generate, ModeMix, MotionMode, SyntheticSpec};
use trajcast::ensemble::{kmeans_trajectories, pool};
use trajcast::harness::{build_bank, pseudo_targets, train_members, TrainConfig};

fn main() -> trajcast::Result<()> {
    let scenarios = generate(&SyntheticSpec {
        scenario_count: 60,
        mode_mix: ModeMix::only(MotionMode::Junction),
        seed: 21,
        ..Default::default()
    })?;
    let base = TrainConfig { epochs: 4, channels: 16, ensemble_members: 3, seed: 21, ..TrainConfig::default() };

    let members = train_members(&base, &scenarios)?;
    let bank = build_bank(members.iter().map(|(t, o)| (t.as_str(), &o.predictor)), &scenarios)?;
    println!("bank holds {} scenarios from {} models", bank.len(), members.len());

    let id = scenarios[0].scenario_id.as_str();
    let pooled = pool(&bank, id)?;
    let clusters = kmeans_trajectories(&pooled, 6, base.seed, base.kmeans_iters)?;
    println!("{id}: {} pooled trajectories -> 6 clusters", pooled.len());
    println!("  scores {:?}", clusters.scores);
    println!("  counts {:?}, sse {:.3} after {} iterations", clusters.counts, clusters.sse, clusters.iterations);

    let targets = pseudo_targets(&bank, 6, base.seed, base.kmeans_iters)?;
    let first = &targets[id];
    for (t, c) in first.trajectories.iter().zip(&first.confidences) {
        let end = t.points().last().unwrap();
        println!("  endpoint ({:7.2}, {:7.2})  confidence {c:.3}", end.x, end.y);
    }
    Ok(())
}
