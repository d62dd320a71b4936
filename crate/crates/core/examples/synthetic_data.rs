//! Generates synthetic scenarios of each motion mode and round-trips one through CSV.

use trajcast::data::{generate_labeled, load_csv_file, save_csv, CsvOptions, ModeMix, SyntheticSpec};

fn main() -> trajcast::Result<()> {
    let labeled = generate_labeled(&SyntheticSpec { scenario_count: 8, mode_mix: ModeMix::default(), seed: 4, ..Default::default() })?;
    for (scenario, label) in &labeled {
        let target = scenario.target()?;
        println!(
            "{}: {label:?}, {} agents, {} frames, {} branch futures",
            scenario.scenario_id,
            scenario.agents.len(),
            target.positions.len(),
            scenario.branch_futures.len()
        );
    }

    let dir = std::env::temp_dir().join("trajcast-example-csv");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("scenario.csv");
    let (scenario, _) = &labeled[0];
    save_csv(&path, scenario)?;
    let back = load_csv_file(&path, &CsvOptions::default())?;
    println!("wrote {}; reloaded {} agents", path.display(), back.agents.len());
    let head: String = std::fs::read_to_string(&path)?.lines().take(3).collect::<Vec<_>>().join("\n");
    println!("{head}");
    Ok(())
}
