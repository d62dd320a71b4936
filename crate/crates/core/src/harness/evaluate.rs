//! Read-only evaluation: metrics, prediction dumps, temporal jitter and branch coverage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::make_shift_pair;
use crate::ensemble::PredictionRecord;
use crate::error::{Error, Result};
use crate::geometry::to_frame;
use crate::matching::{match_bidirectional, overlap_distance, similarity, Criterion};
use crate::metrics::{fde, report, MetricReport, MISS_THRESHOLD};
use crate::prediction::PredictionSet;
use crate::predictor::Predictor;
use crate::scenario::{Scenario, Window};

fn check_compatible(predictor: &Predictor, scenario: &Scenario) -> Result<()> {
    let cfg = predictor.config();
    if scenario.history_len != cfg.history_len || scenario.future_len != cfg.future_len {
        return Err(Error::ShapeMismatch(format!(
            "scenario {} has {}+{} frames, model expects {}+{}",
            scenario.scenario_id, scenario.history_len, scenario.future_len, cfg.history_len, cfg.future_len
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Predictions in each scenario's own agent frame at `t = 0`.
pub fn predict_all(predictor: &Predictor, scenarios: &[Scenario], model_tag: &str) -> Result<Vec<PredictionRecord>> {
    scenarios
        .par_iter()
        .map(|s| {
            check_compatible(predictor, s)?;
            Ok(PredictionRecord {
                scenario_id: s.scenario_id.clone(),
                model_tag: model_tag.to_string(),
                prediction: predictor.predict(&Window::current(s)?)?,
            })
        })
        .collect()
}

/// Metrics over every scenario plus the predictions they were computed from.
pub fn evaluate(predictor: &Predictor, scenarios: &[Scenario], model_tag: &str) -> Result<Evaluation> {
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predictions = predict_all(predictor, scenarios, model_tag)?;
    let entries = scenarios
        .iter()
        .zip(&predictions)
        .map(|(s, p)| {
            let gt = Window::current(s)?.future.ok_or_else(|| Error::InsufficientFrames {
                scenario_id: s.scenario_id.clone(),
                needed: s.history_len + s.future_len,
                available: s.total_frames(),
            })?;
            Ok((p.prediction.clone(), gt))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { report: report(&entries)?, predictions })
}

/// Mean overlap ADE between mutually nearest (by overlap FDE) trajectories of `a` and `b`,
/// with `b` predicted `shift` frames later and already expressed in `a`'s frame.
pub fn set_jitter(a: &PredictionSet, b: &PredictionSet, shift: usize) -> Result<f64> {
    let sim = similarity(a.trajectories(), b.trajectories(), Criterion::Fde, shift)?;
    let pairs = match_bidirectional(&sim).pairs;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &(m, n) in &pairs {
        sum += overlap_distance(&a.trajectories()[m], &b.trajectories()[n], shift, Criterion::Ade)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Temporal jitter: [`set_jitter`] between predictions from consecutive windows, averaged over
/// scenarios.
pub fn jitter(predictor: &Predictor, scenarios: &[Scenario], shift: usize) -> Result<f64> {
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per = scenarios
        .par_iter()
        .map(|s| {
            check_compatible(predictor, s)?;
            let pair = make_shift_pair(s, shift)?;
            let a = predictor.predict(&pair.a)?;
            let b = predictor.predict(&pair.b)?;
            let (trajs, scores) = b.into_parts();
            let moved = trajs
                .iter()
                .map(|t| t.map_points(|p| pair.b.frame.reexpress(&pair.a.frame, p)))
                .collect::<Result<Vec<_>>>()?;
            set_jitter(&a, &PredictionSet::new(moved, scores)?, shift)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub branches: usize,
    pub hit: usize,
    pub fraction: f64,
}

/// Fraction of alternative futures (over scenarios with at least two) reached within
/// `threshold` meters final displacement by at least one prediction.
pub fn branch_coverage(predictor: &Predictor, scenarios: &[Scenario], threshold: f64) -> Result<Coverage> {
    let per = scenarios
        .par_iter()
        .filter(|s| s.branch_futures.len() >= 2)
        .map(|s| {
            check_compatible(predictor, s)?;
            let w = Window::current(s)?;
            let preds = predictor.predict(&w)?;
            let mut hit = 0;
            for b in &s.branch_futures {
                let local = to_frame(b, &w.frame);
                let mut best = f64::INFINITY;
                for t in preds.trajectories() {
                    best = best.min(fde(t, &local)?);
                }
                if best <= threshold {
                    hit += 1;
                }
            }
            Ok((s.branch_futures.len(), hit))
        })
        .collect::<Result<Vec<_>>>()?;
    let branches: usize = per.iter().map(|p| p.0).sum();
    let hit: usize = per.iter().map(|p| p.1).sum();
    if branches == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(Coverage { branches, hit, fraction: hit as f64 / branches as f64 })
}

/// [`branch_coverage`] at the miss-rate threshold.
pub fn default_branch_coverage(predictor: &Predictor, scenarios: &[Scenario]) -> Result<Coverage> {
    branch_coverage(predictor, scenarios, MISS_THRESHOLD)
}
