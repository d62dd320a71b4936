//! Runs the matching-strategy grid on a small dataset, writes it as CSV, and renders a training
//! log to SVG.

use trajcast::data::{generate, SyntheticSpec};
use trajcast::harness::{render_svg, run_grid, train, write_grid_csv, GridAxis, TrainConfig, TrainInputs};

fn main() -> trajcast::Result<()> {
    let train_set = generate(&SyntheticSpec { scenario_count: 60, seed: 31, ..Default::default() })?;
    let eval_set = generate(&SyntheticSpec { scenario_count: 20, seed: 32, ..Default::default() })?;
    let base = TrainConfig { epochs: 3, channels: 16, ..TrainConfig::default() };

    let results = run_grid(GridAxis::Matching, &base, &train_set, &eval_set, None)?;
    let mut csv = Vec::new();
    write_grid_csv(&mut csv, &results)?;
    print!("{}", String::from_utf8(csv).unwrap());

    let mut log = Vec::new();
    train(&base, TrainInputs { scenarios: &train_set, probe: &eval_set, log: Some(&mut log), ..Default::default() })?;
    let lines = trajcast::harness::report::read_log(log.as_slice())?;
    let path = std::env::temp_dir().join("trajcast-example-report.svg");
    std::fs::write(&path, render_svg(&lines)?)?;
    println!("chart written to {}", path.display());
    Ok(())
}
