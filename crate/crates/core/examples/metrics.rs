//! Scores a hand-built six-mode prediction against a straight ground truth.

use trajcast::metrics::{min_metrics, report, MISS_THRESHOLD};
use trajcast::{PredictionSet, Trajectory};

fn line(dx: f64, dy: f64, len: usize) -> Trajectory {
    let pts: Vec<(f64, f64)> = (1..=len).map(|t| (dx * t as f64, dy * t as f64)).collect();
    Trajectory::from_xy(&pts).unwrap()
}

fn main() -> trajcast::Result<()> {
    let gt = line(1.0, 0.0, 30);
    let modes = vec![
        line(1.0, 0.2, 30),
        line(1.0, 0.0, 30),
        line(0.9, -0.1, 30),
        line(0.0, 1.0, 30),
        line(0.0, -1.0, 30),
        line(0.5, 0.5, 30),
    ];
    let set = PredictionSet::new(modes, vec![0.35, 0.25, 0.15, 0.1, 0.1, 0.05])?;

    for k in [1, 6] {
        let m = min_metrics(&set, &gt, k, MISS_THRESHOLD)?;
        println!("k={k}: {m:?}");
    }
    let table = report(&[(set, gt)])?;
    println!("{}", serde_json::to_string_pretty(&table).unwrap());
    Ok(())
}
