//! Ablation grids: each row is one training configuration, trained and evaluated at a fixed seed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleBank, PseudoTargets};
use crate::error::{Error, Result};
use crate::matching::{Criterion, MatchStrategy};
use crate::metrics::MetricReport;
use crate::scenario::Scenario;

use super::config::TrainConfig;
use super::evaluate::{evaluate, jitter};
use super::pipeline::{build_bank, pseudo_targets, train_members};
use super::train::{train, TrainInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridAxis {
    /// The base configuration alone.
    Single,
    /// Goal / refinement / temporal / spatial / pseudo-target toggles, added progressively.
    Modules,
    /// Every matching strategy with each similarity criterion.
    Matching,
    /// Temporal shifts 1 to 4.
    Shift,
    /// Pseudo targets per scenario: 1, 3, 6.
    Pseudo,
}

impl GridAxis {
    pub const ALL: [GridAxis; 5] = [GridAxis::Single, GridAxis::Modules, GridAxis::Matching, GridAxis::Shift, GridAxis::Pseudo];
}

impl fmt::Display for GridAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridAxis::Single => "single",
            GridAxis::Modules => "modules",
            GridAxis::Matching => "matching",
            GridAxis::Shift => "shift",
            GridAxis::Pseudo => "pseudo",
        })
    }
}

impl FromStr for GridAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GridAxis::ALL
            .into_iter()
            .find(|a| a.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown grid axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub label: String,
    pub config: TrainConfig,
}

fn toggles(base: &TrainConfig, goal: bool, refine: bool, temp: bool, spatial: bool, mpt: bool) -> TrainConfig {
    TrainConfig { use_goal: goal, use_refine: refine, use_temp: temp, use_spatial: spatial, use_mpt: mpt, ..base.clone() }
}

/// The configurations of one grid, in table order.
pub fn grid_rows(axis: GridAxis, base: &TrainConfig) -> Vec<GridRow> {
    let row = |label: String, config| GridRow { label, config };
    match axis {
        GridAxis::Single => vec![row("base".into(), base.clone())],
        GridAxis::Modules => [
            ("baseline", [false, false, false, false, false]),
            ("goal", [true, false, false, false, false]),
            ("goal+ref", [true, true, false, false, false]),
            ("goal+ref+temp", [true, true, true, false, false]),
            ("goal+ref+temp+spatial", [true, true, true, true, false]),
            ("goal+ref+mpt", [true, true, false, false, true]),
            ("goal+ref+temp+spatial+mpt", [true, true, true, true, true]),
        ]
        .into_iter()
        .map(|(l, t)| row(l.into(), toggles(base, t[0], t[1], t[2], t[3], t[4])))
        .collect(),
        GridAxis::Matching => MatchStrategy::ALL
            .into_iter()
            .flat_map(|s| [Criterion::Ade, Criterion::Fde].map(move |c| (s, c)))
            .map(|(strategy, criterion)| {
                let cfg = TrainConfig { strategy, criterion, ..toggles(base, true, true, true, true, false) };
                row(format!("{strategy}/{criterion}"), cfg)
            })
            .collect(),
        GridAxis::Shift => (1..=4)
            .map(|shift| row(format!("s={shift}"), TrainConfig { shift, ..toggles(base, true, true, true, true, false) }))
            .collect(),
        GridAxis::Pseudo => [1, 3, 6]
            .into_iter()
            .map(|j| row(format!("J={j}"), TrainConfig { pseudo_targets: j, ..toggles(base, true, true, false, false, true) }))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub row: GridRow,
    pub report: MetricReport,
    pub jitter: f64,
    pub final_loss: f64,
}

/// Trains every row on `train_set` and evaluates it on `eval_set`. Rows with pseudo-target
/// supervision cluster `bank`, or a bank built from `base.ensemble_members` fresh models.
pub fn run_grid(
    axis: GridAxis,
    base: &TrainConfig,
    train_set: &[Scenario],
    eval_set: &[Scenario],
    bank: Option<&EnsembleBank>,
) -> Result<Vec<GridResult>> {
    let rows = grid_rows(axis, base);
    for r in &rows {
        r.config.validate()?;
    }
    let mut owned_bank = None;
    let mut pseudo_cache: BTreeMap<usize, BTreeMap<String, PseudoTargets>> = BTreeMap::new();
    let mut results = Vec::with_capacity(rows.len());
    for row in rows {
        let cfg = &row.config;
        log::info!("grid row {}", row.label);
        if cfg.use_mpt && !pseudo_cache.contains_key(&cfg.pseudo_targets) {
            let bank = match bank {
                Some(b) => b,
                None => {
                    if owned_bank.is_none() {
                        let members = train_members(base, train_set)?;
                        owned_bank = Some(build_bank(members.iter().map(|(t, o)| (t.as_str(), &o.predictor)), train_set)?);
                    }
                    owned_bank.as_ref().expect("bank built above")
                }
            };
            pseudo_cache.insert(cfg.pseudo_targets, pseudo_targets(bank, cfg.pseudo_targets, base.seed, base.kmeans_iters)?);
        }
        let pseudo = cfg.use_mpt.then(|| &pseudo_cache[&cfg.pseudo_targets]);
        let outcome = train(cfg, TrainInputs { scenarios: train_set, pseudo, ..Default::default() })?;
        let report = evaluate(&outcome.predictor, eval_set, &row.label)?.report;
        let jitter = jitter(&outcome.predictor, eval_set, cfg.shift)?;
        let final_loss = outcome.epochs.last().map_or(f64::NAN, |e| e.loss.total);
        results.push(GridResult { row, report, jitter, final_loss });
    }
    Ok(results)
}

pub const GRID_COLUMNS: [&str; 10] =
    ["row", "use_goal", "use_refine", "use_temp", "use_spatial", "use_mpt", "strategy", "criterion", "shift", "pseudo_targets"];

/// Writes one CSV line per row: the configuration columns, the seven metric columns, jitter
/// and the final training loss.
pub fn write_grid_csv(out: impl Write, results: &[GridResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> =
        GRID_COLUMNS.iter().copied().chain(MetricReport::COLUMNS).chain(["jitter", "final_loss"]).collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let c = &r.row.config;
        let mut rec = vec![
            r.row.label.clone(),
            c.use_goal.to_string(),
            c.use_refine.to_string(),
            c.use_temp.to_string(),
            c.use_spatial.to_string(),
            c.use_mpt.to_string(),
            c.strategy.to_string(),
            c.criterion.to_string(),
            c.shift.to_string(),
            c.pseudo_targets.to_string(),
        ];
        rec.extend(r.report.values().iter().map(|v| v.to_string()));
        rec.push(r.jitter.to_string());
        rec.push(r.final_loss.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
