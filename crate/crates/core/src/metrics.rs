//! Displacement-error metrics: ADE, FDE, their top-k minima, miss rate and brier-minFDE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::prediction::PredictionSet;

/// Final-position error above which a forecast counts as a miss, in meters.
pub const MISS_THRESHOLD: f64 = 2.0;

fn check_lengths(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    Ok(())
}

/// Mean Euclidean distance over all steps.
pub fn ade(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_lengths(pred, gt)?;
    let sum: f64 = pred.points().iter().zip(gt.points()).map(|(a, b)| a.distance(b)).sum();
    Ok(sum / pred.len() as f64)
}

/// Euclidean distance at the last step.
pub fn fde(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(pred.last().distance(&gt.last()))
}

/// Top-k summary for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
    /// `min_fde + (1 - p)^2` with `p` the score of the FDE-minimizing trajectory.
    pub brier_fde: f64,
    /// `min_ade + (1 - p)^2` with `p` the score of the ADE-minimizing trajectory.
    pub brier_ade: f64,
}

/// Minimum ADE/FDE over the `k` highest-scored predictions.
///
/// Ties in score keep index order; ties in error keep the better-ranked trajectory.
pub fn min_metrics(
    preds: &PredictionSet,
    gt: &Trajectory,
    k: usize,
    threshold: f64,
) -> Result<MinMetrics> {
    if k == 0 || k > preds.len() {
        return Err(Error::KTooLarge { k, available: preds.len() });
    }
    let ranked = preds.ranked();
    let mut best_ade = (f64::INFINITY, 0.0);
    let mut best_fde = (f64::INFINITY, 0.0);
    for &i in &ranked[..k] {
        let traj = &preds.trajectories()[i];
        let p = preds.scores()[i];
        let a = ade(traj, gt)?;
        let f = fde(traj, gt)?;
        if a < best_ade.0 {
            best_ade = (a, p);
        }
        if f < best_fde.0 {
            best_fde = (f, p);
        }
    }
    Ok(MinMetrics {
        min_ade: best_ade.0,
        min_fde: best_fde.0,
        miss: best_fde.0 > threshold,
        brier_fde: best_fde.0 + (1.0 - best_fde.1).powi(2),
        brier_ade: best_ade.0 + (1.0 - best_ade.1).powi(2),
    })
}

/// Dataset-level means in the usual leaderboard layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "minADE_1")]
    pub min_ade_1: f64,
    #[serde(rename = "minFDE_1")]
    pub min_fde_1: f64,
    #[serde(rename = "MR_1")]
    pub mr_1: f64,
    #[serde(rename = "minADE_6")]
    pub min_ade_6: f64,
    #[serde(rename = "minFDE_6")]
    pub min_fde_6: f64,
    #[serde(rename = "MR_6")]
    pub mr_6: f64,
    #[serde(rename = "b-FDE_6")]
    pub brier_min_fde_6: f64,
    pub n_scenarios: usize,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 7] =
        ["minADE_1", "minFDE_1", "MR_1", "minADE_6", "minFDE_6", "MR_6", "b-FDE_6"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.min_ade_1,
            self.min_fde_1,
            self.mr_1,
            self.min_ade_6,
            self.min_fde_6,
            self.mr_6,
            self.brier_min_fde_6,
        ]
    }
}

/// Averages k = 1 and k = 6 metrics across scenarios. Every prediction set needs at least six
/// trajectories.
pub fn report(entries: &[(PredictionSet, Trajectory)]) -> Result<MetricReport> {
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per: Vec<(MinMetrics, MinMetrics)> = entries
        .par_iter()
        .map(|(p, gt)| {
            Ok((min_metrics(p, gt, 1, MISS_THRESHOLD)?, min_metrics(p, gt, 6, MISS_THRESHOLD)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mean = |f: &dyn Fn(&(MinMetrics, MinMetrics)) -> f64| per.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        min_ade_1: mean(&|m| m.0.min_ade),
        min_fde_1: mean(&|m| m.0.min_fde),
        mr_1: mean(&|m| m.0.miss as u8 as f64),
        min_ade_6: mean(&|m| m.1.min_ade),
        min_fde_6: mean(&|m| m.1.min_fde),
        mr_6: mean(&|m| m.1.miss as u8 as f64),
        brier_min_fde_6: mean(&|m| m.1.brier_fde),
        n_scenarios: per.len(),
    })
}
