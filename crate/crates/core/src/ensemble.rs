//! Pseudo targets from an ensemble of trained models: pool their predictions per scenario,
//! cluster with k-means and turn the centroids into weighted supervision.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::prediction::{PredictionSet, TargetSet};

/// Lloyd iterations allowed before giving up on convergence.
pub const DEFAULT_MAX_ITER: usize = 100;

/// One model's prediction for one scenario, as stored in prediction dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub model_tag: String,
    pub prediction: PredictionSet,
}

/// Predictions of several models, grouped by scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleBank {
    entries: BTreeMap<String, Vec<(String, PredictionSet)>>,
    horizon: Option<usize>,
}

impl EnsembleBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, scenario_id: impl Into<String>, model_tag: impl Into<String>, set: PredictionSet) -> Result<()> {
        match self.horizon {
            Some(t) if t != set.horizon() => return Err(Error::LengthMismatch { left: t, right: set.horizon() }),
            _ => self.horizon = Some(set.horizon()),
        }
        self.entries.entry(scenario_id.into()).or_default().push((model_tag.into(), set));
        Ok(())
    }

    pub fn add_record(&mut self, record: PredictionRecord) -> Result<()> {
        self.add(record.scenario_id, record.model_tag, record.prediction)
    }

    /// Reads a JSON-lines prediction dump into the bank.
    pub fn load_dump(&mut self, path: impl AsRef<Path>) -> Result<()> {
        for record in read_jsonl::<PredictionRecord>(path.as_ref())? {
            self.add_record(record)?;
        }
        Ok(())
    }

    pub fn scenario_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self, scenario_id: &str) -> Result<&[(String, PredictionSet)]> {
        self.entries.get(scenario_id).map(Vec::as_slice).ok_or_else(|| Error::UnknownScenario(scenario_id.to_string()))
    }

    pub fn model_tags(&self, scenario_id: &str) -> Result<BTreeSet<&str>> {
        Ok(self.entries(scenario_id)?.iter().map(|(t, _)| t.as_str()).collect())
    }
}

/// Every trajectory of every model for `scenario_id`, with its probability.
pub fn pool(bank: &EnsembleBank, scenario_id: &str) -> Result<Vec<(Trajectory, f64)>> {
    let entries = bank.entries(scenario_id)?;
    Ok(entries
        .iter()
        .flat_map(|(_, set)| set.trajectories().iter().cloned().zip(set.scores().iter().copied()))
        .collect())
}

/// Result of clustering pooled trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub centroids: Vec<Trajectory>,
    /// Share of the pooled probability mass in each cluster.
    pub scores: Vec<f64>,
    pub counts: Vec<usize>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances after each assignment step.
    pub sse_history: Vec<f64>,
    pub sse: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut sse = 0.0;
    let assign = points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centers.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            sse += best.0;
            best.1
        })
        .collect();
    (assign, sse)
}

fn means(points: &[Vec<f64>], assign: &[usize], centers: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    for j in 0..centers.len() {
        if counts[j] > 0 {
            centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        } else {
            // re-seed from the point farthest from its own center
            let mut best = (-1.0, 0);
            for (i, (p, &a)) in points.iter().zip(assign).enumerate() {
                let d = sq_dist(p, &centers[a]);
                if !taken.contains(&i) && d > best.0 {
                    best = (d, i);
                }
            }
            taken.insert(best.1);
            centers[j] = points[best.1].clone();
        }
    }
}

fn seed_centers(points: &[Vec<f64>], j: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < j {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).expect("positive mass"))
        } else {
            // every remaining point coincides with a center; any unused index will do
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// k-means over flattened `2T`-dimensional trajectory vectors with k-means++ seeding.
pub fn kmeans_trajectories(pooled: &[(Trajectory, f64)], j: usize, seed: u64, max_iter: usize) -> Result<ClusterResult> {
    if pooled.len() < j || (j > 0 && pooled.is_empty()) {
        return Err(Error::TooFewTrajectories { needed: j, clusters: j, got: pooled.len() });
    }
    if j == 0 {
        return Ok(ClusterResult {
            centroids: vec![],
            scores: vec![],
            counts: vec![],
            assignments: vec![],
            sse_history: vec![],
            sse: 0.0,
            iterations: 0,
        });
    }
    let t = pooled[0].0.len();
    if let Some((bad, _)) = pooled.iter().find(|(tr, _)| tr.len() != t) {
        return Err(Error::LengthMismatch { left: t, right: bad.len() });
    }
    let dt = pooled[0].0.dt();
    let points: Vec<Vec<f64>> = pooled.iter().map(|(tr, _)| tr.to_flat()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(&points, j, &mut rng);
    let (mut assign, sse) = nearest(&points, &centers);
    let mut history = vec![sse];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        means(&points, &assign, &mut centers);
        let (next, sse) = nearest(&points, &centers);
        history.push(sse);
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }
    if !converged {
        means(&points, &assign, &mut centers);
    }
    let sse = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centers[a])).sum();

    let mut counts = vec![0usize; j];
    let mut mass = vec![0.0; j];
    for ((_, prob), &a) in pooled.iter().zip(&assign) {
        counts[a] += 1;
        mass[a] += prob;
    }
    let total: f64 = mass.iter().sum();
    let scores = if total > 0.0 {
        mass.iter().map(|m| m / total).collect()
    } else {
        counts.iter().map(|&c| c as f64 / pooled.len() as f64).collect()
    };
    let centroids = centers.iter().map(|c| Trajectory::from_flat(c, dt)).collect::<Result<Vec<_>>>()?;
    Ok(ClusterResult { centroids, scores, counts, assignments: assign, sse_history: history, sse, iterations })
}

/// Ground truth first with confidence 1, then one pseudo target per cluster.
pub fn build_target_set(cluster: &ClusterResult, gt: Trajectory) -> Result<TargetSet> {
    TargetSet::new(gt, cluster.centroids.iter().cloned().zip(cluster.scores.iter().copied()).collect())
}

/// Pseudo targets for one scenario, in the scenario's un-augmented agent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTargets {
    pub scenario_id: String,
    pub trajectories: Vec<Trajectory>,
    pub confidences: Vec<f64>,
}

impl PseudoTargets {
    pub fn target_set(&self, gt: Trajectory) -> Result<TargetSet> {
        if self.trajectories.len() != self.confidences.len() {
            return Err(Error::ShapeMismatch("pseudo targets and confidences differ in length".into()));
        }
        TargetSet::new(gt, self.trajectories.iter().cloned().zip(self.confidences.iter().copied()).collect())
    }
}

/// Clusters every scenario in the bank into `j` pseudo targets. Each scenario needs predictions
/// from at least two distinct model tags.
pub fn cluster_bank(bank: &EnsembleBank, j: usize, seed: u64, max_iter: usize) -> Result<Vec<PseudoTargets>> {
    let ids: Vec<&str> = bank.scenario_ids().collect();
    ids.par_iter()
        .enumerate()
        .map(|(i, id)| {
            if bank.model_tags(id)?.len() < 2 {
                return Err(Error::InsufficientDiversity(id.to_string()));
            }
            let pooled = pool(bank, id)?;
            let c = kmeans_trajectories(&pooled, j, seed.wrapping_add(i as u64), max_iter)?;
            Ok(PseudoTargets { scenario_id: id.to_string(), trajectories: c.centroids, confidences: c.scores })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path.as_ref())
}

pub fn write_pseudo_targets(path: impl AsRef<Path>, targets: &[PseudoTargets]) -> Result<()> {
    write_jsonl(path.as_ref(), targets)
}

/// Reads a pseudo-target file keyed by scenario id.
pub fn read_pseudo_targets(path: impl AsRef<Path>) -> Result<BTreeMap<String, PseudoTargets>> {
    Ok(read_jsonl::<PseudoTargets>(path.as_ref())?.into_iter().map(|p| (p.scenario_id.clone(), p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Waypoint;

    fn line(y: f64) -> Trajectory {
        Trajectory::from_xy(&[(0.0, y), (1.0, y), (2.0, y)]).unwrap()
    }

    fn set(ys: &[f64]) -> PredictionSet {
        PredictionSet::uniform(ys.iter().map(|y| line(*y)).collect()).unwrap()
    }

    #[test]
    fn pooling() {
        let mut bank = EnsembleBank::new();
        bank.add("s", "m1", set(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        bank.add("s", "m2", set(&[0.5, 1.5, 2.5, 3.5, 4.5, 5.5])).unwrap();
        bank.add("t", "m1", set(&[0.0])).unwrap();
        bank.add("t", "m1", set(&[0.0])).unwrap();
        assert_eq!(pool(&bank, "s").unwrap().len(), 12);
        assert_eq!(pool(&bank, "t").unwrap().len(), 2);
        assert!(matches!(pool(&bank, "u"), Err(Error::UnknownScenario(_))));
        let short = PredictionSet::uniform(vec![Trajectory::from_xy(&[(0.0, 0.0)]).unwrap()]).unwrap();
        assert!(bank.add("s", "m3", short).is_err());
    }

    #[test]
    fn distinct_inputs_are_their_own_centroids() {
        let pooled: Vec<_> = [0.0, 10.0, 20.0].iter().map(|y| (line(*y), 1.0 / 3.0)).collect();
        let c = kmeans_trajectories(&pooled, 3, 5, DEFAULT_MAX_ITER).unwrap();
        let mut got: Vec<f64> = c.centroids.iter().map(|t| t.first().y).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 10.0, 20.0]);
        assert_eq!(c.counts, vec![1, 1, 1]);
        assert_eq!(c.sse, 0.0);
    }

    #[test]
    fn identical_inputs_single_cluster() {
        let pooled = vec![(line(2.0), 0.2); 5];
        let c = kmeans_trajectories(&pooled, 1, 0, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(c.centroids[0], line(2.0));
        assert_eq!(c.scores, vec![1.0]);
        let c3 = kmeans_trajectories(&pooled, 3, 0, DEFAULT_MAX_ITER).unwrap();
        assert!((c3.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few() {
        let pooled = vec![(line(0.0), 1.0)];
        assert!(matches!(kmeans_trajectories(&pooled, 2, 0, 10), Err(Error::TooFewTrajectories { .. })));
    }

    #[test]
    fn target_sets() {
        let empty = kmeans_trajectories(&[(line(0.0), 1.0)], 0, 0, 10).unwrap();
        let ts = build_target_set(&empty, line(0.0)).unwrap();
        assert_eq!((ts.len(), ts.confidences()[0]), (1, 1.0));
        let pooled: Vec<_> = (0..12).map(|i| (line(i as f64), 1.0 / 12.0)).collect();
        let c = kmeans_trajectories(&pooled, 6, 1, DEFAULT_MAX_ITER).unwrap();
        let ts = build_target_set(&c, line(0.5)).unwrap();
        assert_eq!(ts.len(), 7);
        assert_eq!(ts.confidences()[0], 1.0);
        assert!((ts.confidences()[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let short = Trajectory::from_xy(&[(0.0, 0.0)]).unwrap();
        assert!(matches!(build_target_set(&c, short), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn diversity_required() {
        let mut bank = EnsembleBank::new();
        bank.add("s", "m1", set(&[0.0, 1.0])).unwrap();
        bank.add("s", "m1", set(&[2.0, 3.0])).unwrap();
        assert!(matches!(cluster_bank(&bank, 2, 0, 10), Err(Error::InsufficientDiversity(_))));
        bank.add("s", "m2", set(&[4.0, 5.0])).unwrap();
        let out = cluster_bank(&bank, 2, 0, 10).unwrap();
        assert_eq!(out[0].trajectories.len(), 2);
    }

    #[test]
    fn pseudo_target_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pt.jsonl");
        let items = vec![PseudoTargets {
            scenario_id: "a".into(),
            trajectories: vec![line(0.1), line(-0.3).translated(Waypoint::new(1.0 / 3.0, 0.0))],
            confidences: vec![0.25, 0.75],
        }];
        write_pseudo_targets(&p, &items).unwrap();
        assert_eq!(read_pseudo_targets(&p).unwrap()["a"], items[0]);
    }
}
