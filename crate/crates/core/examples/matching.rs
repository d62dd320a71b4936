//! Pairs two prediction sets, one shifted a step into the future, with each matching strategy.

use trajcast::matching::{match_with, similarity, Criterion, MatchStrategy};
use trajcast::Trajectory;

fn fan(len: usize, shift: usize, headings: &[f64]) -> Vec<Trajectory> {
    headings
        .iter()
        .map(|h| {
            let pts: Vec<(f64, f64)> =
                (1..=len).map(|t| ((t + shift) as f64 * h.cos(), (t + shift) as f64 * h.sin())).collect();
            Trajectory::from_xy(&pts).unwrap()
        })
        .collect()
}

fn main() -> trajcast::Result<()> {
    let shift = 1;
    let a = fan(10, 0, &[0.0, 0.4, -0.4, 1.2]);
    // b starts one step later and misses one of a's modes but duplicates another
    let b = fan(10, shift, &[0.02, 0.38, 0.41, -0.42]);
    for criterion in [Criterion::Ade, Criterion::Fde] {
        let s = similarity(&a, &b, criterion, shift)?;
        for strategy in MatchStrategy::ALL {
            let m = match_with(&s, strategy);
            println!("{criterion:?} {strategy:?}: pairs {:?}, cost {:.3}", m.pairs, m.total_cost(&s));
        }
    }
    Ok(())
}
