//! Measures temporal and spatial consistency of an untrained predictor on one scenario.

use trajcast::data::{generate, make_shift_pair, SyntheticSpec};
use trajcast::losses::{spatial_consistency, temporal_consistency, SpatialPermutation};
use trajcast::matching::{Criterion, MatchStrategy};
use trajcast::predictor::{Predictor, PredictorConfig};
use trajcast::PredictionSet;

fn main() -> trajcast::Result<()> {
    let cfg = PredictorConfig { channels: 16, history_len: 20, future_len: 30, modes: 6, use_goal: true, use_refine: true };
    let predictor = Predictor::new(cfg, 11)?;
    let scenario = &generate(&SyntheticSpec { scenario_count: 1, seed: 11, ..Default::default() })?[0];

    for shift in 1..=3 {
        let pair = make_shift_pair(scenario, shift)?;
        let a = predictor.predict(&pair.a)?;
        // re-express B's predictions in A's frame before comparing
        let (b_trajs, b_scores) = predictor.predict(&pair.b)?.into_parts();
        let b_in_a = b_trajs
            .iter()
            .map(|t| t.map_points(|p| pair.b.frame.reexpress(&pair.a.frame, p)))
            .collect::<trajcast::Result<Vec<_>>>()?;
        let b = PredictionSet::new(b_in_a, b_scores)?;
        for strategy in MatchStrategy::ALL {
            let v = temporal_consistency(&a, &b, shift, strategy, Criterion::Fde)?;
            println!("shift {shift} {strategy:?}: temporal {v:.4}");
        }
    }

    let pair = make_shift_pair(scenario, 1)?;
    let (out, _) = predictor.forward(&pair.a, None)?;
    let offsets = out.offsets.expect("refinement enabled");
    for (name, perm) in [
        ("identity", SpatialPermutation::identity(cfg.modes, cfg.future_len)),
        ("flip", SpatialPermutation::flip(cfg.modes, cfg.future_len)),
        ("flip + noise", SpatialPermutation::random(cfg.modes, cfg.future_len, 0.2, 1.0, 5)),
    ] {
        let v = spatial_consistency(&offsets, &out.anchors, &pair.a.history, &perm, |anchors, history| {
            predictor.refine(anchors, history).map(|(o, _)| o)
        })?;
        println!("spatial ({name}): {v:.4}");
    }
    Ok(())
}
