use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;

/// Tolerance on the score simplex constraint.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

/// K scored hypotheses for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPredictionSet")]
pub struct PredictionSet {
    trajectories: Vec<Trajectory>,
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPredictionSet {
    trajectories: Vec<Trajectory>,
    scores: Vec<f64>,
}

impl TryFrom<RawPredictionSet> for PredictionSet {
    type Error = Error;
    fn try_from(raw: RawPredictionSet) -> Result<Self> {
        PredictionSet::new(raw.trajectories, raw.scores)
    }
}

impl PredictionSet {
    pub fn new(trajectories: Vec<Trajectory>, scores: Vec<f64>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Invalid("prediction set needs at least one trajectory".into()));
        }
        if trajectories.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} trajectories but {} scores",
                trajectories.len(),
                scores.len()
            )));
        }
        let t = trajectories[0].len();
        if let Some(bad) = trajectories.iter().find(|tr| tr.len() != t) {
            return Err(Error::LengthMismatch { left: t, right: bad.len() });
        }
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Invalid("scores must be finite and nonnegative".into()));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return Err(Error::Invalid(format!("scores sum to {sum}, expected 1")));
        }
        Ok(Self { trajectories, scores })
    }

    /// Equal scores for every trajectory.
    pub fn uniform(trajectories: Vec<Trajectory>) -> Result<Self> {
        let k = trajectories.len().max(1) as f64;
        let scores = vec![1.0 / k; trajectories.len()];
        Self::new(trajectories, scores)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].len()
    }

    /// Indices ordered by descending score; equal scores keep index order.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    pub fn into_parts(self) -> (Vec<Trajectory>, Vec<f64>) {
        (self.trajectories, self.scores)
    }
}

/// Supervision targets: the ground truth at index 0 followed by weighted pseudo targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    targets: Vec<Trajectory>,
    confidences: Vec<f64>,
}

impl TargetSet {
    pub fn new(ground_truth: Trajectory, pseudo: Vec<(Trajectory, f64)>) -> Result<Self> {
        let t = ground_truth.len();
        let mut targets = vec![ground_truth];
        let mut confidences = vec![1.0];
        for (traj, conf) in pseudo {
            if traj.len() != t {
                return Err(Error::LengthMismatch { left: t, right: traj.len() });
            }
            if !(0.0..=1.0).contains(&conf) {
                return Err(Error::Invalid(format!("confidence {conf} not in [0, 1]")));
            }
            targets.push(traj);
            confidences.push(conf);
        }
        Ok(Self { targets, confidences })
    }

    pub fn ground_truth_only(ground_truth: Trajectory) -> Self {
        Self { targets: vec![ground_truth], confidences: vec![1.0] }
    }

    pub fn targets(&self) -> &[Trajectory] {
        &self.targets
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn ground_truth(&self) -> &Trajectory {
        &self.targets[0]
    }

    /// J + 1.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Trajectory, f64)> {
        self.targets.iter().zip(self.confidences.iter().copied())
    }
}
