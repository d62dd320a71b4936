//! Offline ensemble workflow: train members, pool their predictions, cluster into pseudo targets.

use std::collections::BTreeMap;

use crate::ensemble::{cluster_bank, EnsembleBank, PseudoTargets};
use crate::error::Result;
use crate::predictor::Predictor;
use crate::scenario::Scenario;

use super::config::TrainConfig;
use super::evaluate::predict_all;
use super::train::{train, TrainInputs, TrainOutcome};

/// Configuration of ensemble member `index`: pseudo-target supervision off, seed offset by `index`.
pub fn member_config(base: &TrainConfig, index: usize) -> TrainConfig {
    TrainConfig { use_mpt: false, seed: base.seed.wrapping_add(index as u64), ..base.clone() }
}

pub fn member_tag(config: &TrainConfig) -> String {
    format!("seed-{}", config.seed)
}

/// Trains `base.ensemble_members` models that differ only in seed.
pub fn train_members(base: &TrainConfig, scenarios: &[Scenario]) -> Result<Vec<(String, TrainOutcome)>> {
    (0..base.ensemble_members)
        .map(|i| {
            let cfg = member_config(base, i);
            log::info!("training ensemble member {} of {}", i + 1, base.ensemble_members);
            Ok((member_tag(&cfg), train(&cfg, TrainInputs { scenarios, ..Default::default() })?))
        })
        .collect()
}

/// Collects every member's predictions on `scenarios` into one bank.
pub fn build_bank<'a>(members: impl IntoIterator<Item = (&'a str, &'a Predictor)>, scenarios: &[Scenario]) -> Result<EnsembleBank> {
    let mut bank = EnsembleBank::new();
    for (tag, predictor) in members {
        for record in predict_all(predictor, scenarios, tag)? {
            bank.add_record(record)?;
        }
    }
    Ok(bank)
}

/// Clusters a bank into `j` pseudo targets per scenario, keyed by scenario id.
pub fn pseudo_targets(bank: &EnsembleBank, j: usize, seed: u64, max_iter: usize) -> Result<BTreeMap<String, PseudoTargets>> {
    Ok(cluster_bank(bank, j, seed, max_iter)?.into_iter().map(|p| (p.scenario_id.clone(), p)).collect())
}

/// Runs the whole workflow with `base.pseudo_targets` clusters.
pub fn ensemble_pseudo_targets(base: &TrainConfig, scenarios: &[Scenario]) -> Result<BTreeMap<String, PseudoTargets>> {
    let members = train_members(base, scenarios)?;
    let bank = build_bank(members.iter().map(|(t, o)| (t.as_str(), &o.predictor)), scenarios)?;
    pseudo_targets(&bank, base.pseudo_targets, base.seed, base.kmeans_iters)
}
