//! Independent reference implementations and helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajcast::geometry::{Trajectory, Waypoint};
use trajcast::PredictionSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_traj(rng: &mut ChaCha8Rng, len: usize, spread: f64) -> Trajectory {
    let pts: Vec<(f64, f64)> =
        (0..len).map(|_| (rng.random_range(-spread..spread), rng.random_range(-spread..spread))).collect();
    Trajectory::from_xy(&pts).unwrap()
}

pub fn random_scores(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| r / s).collect()
}

pub fn random_set(rng: &mut ChaCha8Rng, k: usize, len: usize, spread: f64) -> PredictionSet {
    let trajs = (0..k).map(|_| random_traj(rng, len, spread)).collect();
    PredictionSet::new(trajs, random_scores(rng, k)).unwrap()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn pts(t: &Trajectory) -> Vec<(f64, f64)> {
    t.points().iter().map(|p| (p.x, p.y)).collect()
}

/// Reference top-k metrics: `(minADE, minFDE, miss, brier-minFDE)`.
pub fn brute_min_metrics(set: &PredictionSet, gt: &Trajectory, k: usize, threshold: f64) -> (f64, f64, bool, f64) {
    let mut order: Vec<usize> = (0..set.len()).collect();
    // stable: equal scores keep index order
    order.sort_by(|&a, &b| set.scores()[b].partial_cmp(&set.scores()[a]).unwrap());
    let g = pts(gt);
    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    let mut p_fde = 0.0;
    for &i in &order[..k] {
        let p = pts(&set.trajectories()[i]);
        let mut s = 0.0;
        for t in 0..g.len() {
            s += dist(p[t], g[t]);
        }
        let ade = s / g.len() as f64;
        let fde = dist(p[g.len() - 1], g[g.len() - 1]);
        if ade < min_ade {
            min_ade = ade;
        }
        if fde < min_fde {
            min_fde = fde;
            p_fde = set.scores()[i];
        }
    }
    (min_ade, min_fde, min_fde > threshold, min_fde + (1.0 - p_fde) * (1.0 - p_fde))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum total cost over all injective assignments of the smaller side into the larger.
pub fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost[0].len();
    let (small, large) = (rows.min(cols), rows.max(cols));
    let mut best = f64::INFINITY;
    for perm in permutations(large) {
        // (row, col) pairs summed in row order
        let mut pairs: Vec<(usize, usize)> =
            (0..small).map(|s| if rows <= cols { (s, perm[s]) } else { (perm[s], s) }).collect();
        pairs.sort_unstable();
        let total: f64 = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        best = best.min(total);
    }
    best
}

/// Lowest within-cluster sum of squares over every partition of `points` into two nonempty
/// groups, with the labels of one optimal partition (point 0 always in group 0).
pub fn brute_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let sse_of = |idx: &[usize]| -> f64 {
        let dim = points[0].len();
        let mut mean = vec![0.0; dim];
        for &i in idx {
            for d in 0..dim {
                mean[d] += points[i][d] / idx.len() as f64;
            }
        }
        idx.iter().map(|&i| (0..dim).map(|d| (points[i][d] - mean[d]).powi(2)).sum::<f64>()).sum()
    };
    let mut best = (f64::INFINITY, vec![]);
    for mask in 0..(1u32 << (n - 1)) {
        let labels: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        let g0: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        let g1: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        if g1.is_empty() {
            continue;
        }
        let s = sse_of(&g0) + sse_of(&g1);
        if s < best.0 {
            best = (s, labels);
        }
    }
    best
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_with_floor(analytic, numeric, FD_FLOOR)
}

fn rel_err_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Rounding error of a central difference whose endpoints have magnitude up to `f`.
pub fn fd_roundoff(f: f64) -> f64 {
    f64::EPSILON * f / FD_STEP
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    /// Coordinates whose stencil crossed a kink (activation, winner or matching change).
    pub skipped: usize,
    pub failed: usize,
    pub worst: f64,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.failed += o.failed;
        self.worst = self.worst.max(o.worst);
    }
}

/// Central differences of `f` at `x` along the listed coordinates. `f` returns the value and a
/// fingerprint of its discrete choices; coordinates whose `x ± h` fingerprints differ from the
/// one at `x` are skipped.
pub fn fd_check<D: PartialEq>(
    x: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    f: impl Fn(&[f64]) -> (f64, D),
) -> FdStats {
    fd_check_scaled(x, analytic, coords, 0.0, f)
}

/// [`fd_check`] for a value computed as a sum of terms whose absolute values add up to
/// `magnitude`, which bounds its rounding error better than the value itself.
pub fn fd_check_scaled<D: PartialEq>(
    x: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    magnitude: f64,
    f: impl Fn(&[f64]) -> (f64, D),
) -> FdStats {
    let (_, d0) = f(x);
    let mut stats = FdStats::default();
    let mut xp = x.to_vec();
    for i in coords {
        xp[i] = x[i] + FD_STEP;
        let (fp, dp) = f(&xp);
        xp[i] = x[i] - FD_STEP;
        let (fm, dm) = f(&xp);
        xp[i] = x[i];
        if dp != d0 || dm != d0 {
            stats.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        // below this magnitude the difference quotient is dominated by rounding in f
        let floor = FD_FLOOR.max(fd_roundoff(fp.abs().max(fm.abs()).max(magnitude)) / FD_TOLERANCE);
        let e = rel_err_with_floor(analytic[i], numeric, floor);
        stats.checked += 1;
        stats.worst = stats.worst.max(e);
        if e >= FD_TOLERANCE {
            stats.failed += 1;
        }
    }
    stats
}

pub fn wp(x: f64, y: f64) -> Waypoint {
    Waypoint::new(x, y)
}

/// Prints and returns one acceptance line.
pub fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
