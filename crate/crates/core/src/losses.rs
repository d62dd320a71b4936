//! Training objectives and their input gradients.
//!
//! Every loss comes in two flavours: a plain value function on the public types, and a
//! `*_terms` function returning the value together with gradients with respect to the
//! trajectories and scores that produced it. The training loop chains the latter into
//! [`crate::predictor::Predictor::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Trajectory, Waypoint};
use crate::matching::{match_with, similarity, Criterion, MatchStrategy};
use crate::metrics::fde;
use crate::prediction::{PredictionSet, TargetSet};

/// Transition point of the smooth-L1 loss, in meters.
pub const HUBER_DELTA: f64 = 1.0;

/// Per-step `[d/dx, d/dy]` gradients for one trajectory.
pub type TrajGrad = Vec<[f64; 2]>;

fn zero_grads(k: usize, t: usize) -> Vec<TrajGrad> {
    vec![vec![[0.0; 2]; t]; k]
}

/// Smooth L1: `0.5 d^2` for `|d| < 1`, `|d| - 0.5` beyond.
pub fn huber(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d < HUBER_DELTA {
        0.5 * d * d / HUBER_DELTA
    } else {
        d - 0.5 * HUBER_DELTA
    }
}

/// Derivative of [`huber`] with respect to `a`.
pub fn huber_grad(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() < HUBER_DELTA {
        d / HUBER_DELTA
    } else {
        d.signum()
    }
}

/// Smooth L1 summed over both coordinates.
pub fn huber_point(a: Waypoint, b: Waypoint) -> f64 {
    huber(a.x, b.x) + huber(a.y, b.y)
}

fn huber_point_grad(a: Waypoint, b: Waypoint) -> [f64; 2] {
    [huber_grad(a.x, b.x), huber_grad(a.y, b.y)]
}

/// `exp(-d_k / tau) / sum_j exp(-d_j / tau)`, shifted by the minimum for stability.
pub fn softmin_with_temperature(d: &[f64], tau: f64) -> Vec<f64> {
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d.iter().map(|v| (-(v - lo) / tau).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

pub fn softmin(d: &[f64]) -> Vec<f64> {
    softmin_with_temperature(d, 1.0)
}

/// Vector-Jacobian product of [`softmin`] (unit temperature): maps `dL/dp` to `dL/dd`.
pub fn softmin_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(p, g)| p * g).sum();
    p.iter().zip(dp).map(|(p, g)| -p * (g - dot)).collect()
}

/// One term of the per-target winner-takes-all supervision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WtaTerm {
    pub l_cls: f64,
    pub l_reg: f64,
    pub winner: usize,
}

/// Index of the trajectory whose final point is closest to `target`; ties go to the lowest index.
pub fn wta_winner(trajs: &[Trajectory], target: &Trajectory) -> Result<usize> {
    let mut best = (f64::INFINITY, 0);
    for (k, t) in trajs.iter().enumerate() {
        let d = fde(t, target)?;
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best.1)
}

/// Soft classification targets: softmin over each trajectory's final displacement to `target`.
pub fn score_targets(trajs: &[Trajectory], target: &Trajectory) -> Result<Vec<f64>> {
    let d = trajs.iter().map(|t| fde(t, target)).collect::<Result<Vec<_>>>()?;
    Ok(softmin(&d))
}

fn regression(traj: &Trajectory, target: &Trajectory, weight: f64, grad: Option<&mut TrajGrad>) -> f64 {
    let t = traj.len() as f64;
    let mut loss = 0.0;
    let mut grad = grad;
    for (i, (a, b)) in traj.points().iter().zip(target.points()).enumerate() {
        loss += huber_point(*a, *b);
        if let Some(g) = grad.as_deref_mut() {
            let d = huber_point_grad(*a, *b);
            g[i][0] += weight * d[0] / t;
            g[i][1] += weight * d[1] / t;
        }
    }
    weight * loss / t
}

/// Mean smooth-L1 gap between `scores` and fixed soft `targets`, scaled by `weight`. The targets
/// are constants: no gradient flows into the trajectories they were computed from.
pub fn classification_loss(scores: &[f64], targets: &[f64], weight: f64) -> f64 {
    classification(scores, targets, weight, None)
}

fn classification(scores: &[f64], targets: &[f64], weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let k = scores.len() as f64;
    let loss: f64 = scores.iter().zip(targets).map(|(p, q)| huber(*p, *q)).sum();
    if let Some(g) = grad {
        for ((g, p), q) in g.iter_mut().zip(scores).zip(targets) {
            *g += weight * huber_grad(*p, *q) / k;
        }
    }
    weight * loss / k
}

/// Winner-takes-all regression and soft classification against one target with confidence
/// `confidence`.
pub fn wta_target_loss(preds: &PredictionSet, target: &Trajectory, confidence: f64) -> Result<WtaTerm> {
    if preds.horizon() != target.len() {
        return Err(Error::LengthMismatch { left: preds.horizon(), right: target.len() });
    }
    let trajs = preds.trajectories();
    let winner = wta_winner(trajs, target)?;
    let l_reg = regression(&trajs[winner], target, confidence, None);
    let l_cls = classification(preds.scores(), &score_targets(trajs, target)?, confidence, None);
    Ok(WtaTerm { l_cls, l_reg, winner })
}

/// Supervised losses summed over all targets, with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedTerms {
    pub l_reg: f64,
    pub l_cls: f64,
    pub winners: Vec<usize>,
    /// Soft classification target of every supervision target, in target order.
    pub cls_targets: Vec<Vec<f64>>,
    pub d_anchors: Vec<TrajGrad>,
    pub d_refined: Vec<TrajGrad>,
    pub d_scores: Vec<f64>,
}

/// Loops over the targets: the winner is picked on the final trajectories, then both the
/// first-stage anchor and (when present) the refined trajectory of that winner are regressed
/// onto the target, and the scores are pulled toward the target's soft assignment.
pub fn supervised_terms(
    anchors: &[Trajectory],
    refined: Option<&[Trajectory]>,
    scores: &[f64],
    targets: &TargetSet,
) -> Result<SupervisedTerms> {
    let k = anchors.len();
    if k == 0 || scores.len() != k || refined.is_some_and(|r| r.len() != k) {
        return Err(Error::ShapeMismatch("anchors, refined and scores must agree on K".into()));
    }
    let t = anchors[0].len();
    if let Some(tgt) = targets.targets().iter().find(|x| x.len() != t) {
        return Err(Error::LengthMismatch { left: t, right: tgt.len() });
    }
    let finals = refined.unwrap_or(anchors);
    let mut out = SupervisedTerms {
        l_reg: 0.0,
        l_cls: 0.0,
        winners: Vec::with_capacity(targets.len()),
        cls_targets: Vec::with_capacity(targets.len()),
        d_anchors: zero_grads(k, t),
        d_refined: zero_grads(k, t),
        d_scores: vec![0.0; k],
    };
    for (target, conf) in targets.iter() {
        let w = wta_winner(finals, target)?;
        out.winners.push(w);
        out.l_reg += regression(&anchors[w], target, conf, Some(&mut out.d_anchors[w]));
        if let Some(r) = refined {
            out.l_reg += regression(&r[w], target, conf, Some(&mut out.d_refined[w]));
        }
        let q = score_targets(finals, target)?;
        out.l_cls += classification(scores, &q, conf, Some(&mut out.d_scores));
        out.cls_targets.push(q);
    }
    Ok(out)
}

/// Temporal consistency value with gradients for both prediction sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTerms {
    pub value: f64,
    pub pairs: Vec<(usize, usize)>,
    pub d_a: Vec<TrajGrad>,
    pub d_b: Vec<TrajGrad>,
}

/// Matches `a` (from the unshifted window) with `b` (from the window `shift` steps later,
/// already in `a`'s frame) over their overlap and averages the smooth-L1 gap between matched
/// waypoints: step `t` of `a` against step `t - shift` of `b`. Unmatched trajectories do not
/// contribute; the sum is normalized by `pairs x (T - shift)`.
pub fn temporal_consistency_terms(
    a: &[Trajectory],
    b: &[Trajectory],
    shift: usize,
    strategy: MatchStrategy,
    criterion: Criterion,
) -> Result<TemporalTerms> {
    let horizon = a.first().map_or(0, Trajectory::len);
    if shift == 0 || shift >= horizon {
        return Err(Error::InvalidShift { shift, horizon });
    }
    if let Some(bad) = a.iter().chain(b).find(|t| t.len() != horizon) {
        return Err(Error::LengthMismatch { left: horizon, right: bad.len() });
    }
    let sim = similarity(a, b, criterion, shift)?;
    let pairs = match_with(&sim, strategy).pairs;
    let overlap = horizon - shift;
    let mut d_a = zero_grads(a.len(), horizon);
    let mut d_b = zero_grads(b.len(), horizon);
    if pairs.is_empty() {
        return Ok(TemporalTerms { value: 0.0, pairs, d_a, d_b });
    }
    let norm = (pairs.len() * overlap) as f64;
    let mut sum = 0.0;
    for &(m, n) in &pairs {
        for t in shift..horizon {
            let pa = a[m].points()[t];
            let pb = b[n].points()[t - shift];
            sum += huber_point(pa, pb);
            let g = huber_point_grad(pa, pb);
            d_a[m][t][0] += g[0] / norm;
            d_a[m][t][1] += g[1] / norm;
            d_b[n][t - shift][0] -= g[0] / norm;
            d_b[n][t - shift][1] -= g[1] / norm;
        }
    }
    Ok(TemporalTerms { value: sum / norm, pairs, d_a, d_b })
}

pub fn temporal_consistency(
    a: &PredictionSet,
    b: &PredictionSet,
    shift: usize,
    strategy: MatchStrategy,
    criterion: Criterion,
) -> Result<f64> {
    temporal_consistency_terms(a.trajectories(), b.trajectories(), shift, strategy, criterion).map(|t| t.value)
}

/// Invertible disturbance of the refinement inputs: an optional reflection about the x-axis and
/// per-waypoint noise on the anchors.
///
/// `Z` maps anchors `p -> F(p + e)` and history `h -> F(h)`; the inverse maps a returned offset
/// `d -> F(d) + e`, so the identity disturbance leaves offsets unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialPermutation {
    pub flip: bool,
    modes: usize,
    horizon: usize,
    /// `modes x horizon` row-major.
    noise: Vec<Waypoint>,
}

impl SpatialPermutation {
    pub fn identity(modes: usize, horizon: usize) -> Self {
        Self { flip: false, modes, horizon, noise: vec![Waypoint::ORIGIN; modes * horizon] }
    }

    pub fn flip(modes: usize, horizon: usize) -> Self {
        Self { flip: true, ..Self::identity(modes, horizon) }
    }

    pub fn with_noise(modes: usize, horizon: usize, noise: Vec<Waypoint>, flip: bool) -> Result<Self> {
        if noise.len() != modes * horizon {
            return Err(Error::ShapeMismatch(format!("{} noise points for {modes}x{horizon}", noise.len())));
        }
        if noise.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("non-finite noise".into()));
        }
        Ok(Self { flip, modes, horizon, noise })
    }

    /// Uniform noise in `[-amplitude, amplitude]` per coordinate, flipped with probability `flip_prob`.
    pub fn random(modes: usize, horizon: usize, amplitude: f64, flip_prob: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random::<f64>() < flip_prob;
        let noise = (0..modes * horizon)
            .map(|_| {
                if amplitude > 0.0 {
                    Waypoint::new(rng.random_range(-amplitude..=amplitude), rng.random_range(-amplitude..=amplitude))
                } else {
                    Waypoint::ORIGIN
                }
            })
            .collect();
        Self { flip, modes, horizon, noise }
    }

    pub fn check(&self, modes: usize, horizon: usize) -> Result<()> {
        if self.modes != modes || self.horizon != horizon {
            return Err(Error::ShapeMismatch(format!(
                "permutation for {}x{} applied to {modes}x{horizon}",
                self.modes, self.horizon
            )));
        }
        Ok(())
    }

    fn reflect(&self, p: Waypoint) -> Waypoint {
        if self.flip {
            Waypoint::new(p.x, -p.y)
        } else {
            p
        }
    }

    fn noise_at(&self, k: usize, t: usize) -> Waypoint {
        self.noise[k * self.horizon + t]
    }

    pub fn apply_anchors(&self, anchors: &[Trajectory]) -> Result<Vec<Trajectory>> {
        self.check(anchors.len(), anchors.first().map_or(0, Trajectory::len))?;
        anchors
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let pts = a.points().iter().enumerate().map(|(t, p)| self.reflect(*p + self.noise_at(k, t))).collect();
                Trajectory::new(pts, a.dt())
            })
            .collect()
    }

    pub fn apply_history(&self, history: &Trajectory) -> Trajectory {
        history.map_points(|p| self.reflect(p)).expect("reflection keeps points finite")
    }

    pub fn invert_offsets(&self, offsets: &[Trajectory]) -> Result<Vec<Trajectory>> {
        self.check(offsets.len(), offsets.first().map_or(0, Trajectory::len))?;
        offsets
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let pts = d.points().iter().enumerate().map(|(t, p)| self.reflect(*p) + self.noise_at(k, t)).collect();
                Trajectory::new(pts, d.dt())
            })
            .collect()
    }

    pub(crate) fn apply_anchors_flat(&self, flat: &[f64]) -> Vec<f64> {
        let mut out = flat.to_vec();
        for (i, c) in out.chunks_exact_mut(2).enumerate() {
            let p = self.reflect(Waypoint::new(c[0], c[1]) + self.noise[i]);
            c[0] = p.x;
            c[1] = p.y;
        }
        out
    }

    pub(crate) fn apply_history_flat(&self, flat: &[f64]) -> Vec<f64> {
        let mut out = flat.to_vec();
        if self.flip {
            for c in out.chunks_exact_mut(2) {
                c[1] = -c[1];
            }
        }
        out
    }

    /// Transposed Jacobian of [`Self::apply_anchors_flat`].
    pub(crate) fn anchors_vjp_flat(&self, d: &[f64]) -> Vec<f64> {
        self.apply_history_flat(d)
    }
}

/// Spatial consistency value with gradients for the original and perturbed offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTerms {
    pub value: f64,
    pub d_offsets: Vec<TrajGrad>,
    pub d_perturbed: Vec<TrajGrad>,
}

/// Smooth-L1 gap between the offsets on the original anchors and the inverse-permuted offsets
/// on the permuted anchors, matched one to one and averaged over `K x T` waypoints.
pub fn spatial_consistency_terms(
    offsets: &[Trajectory],
    perturbed: &[Trajectory],
    perm: &SpatialPermutation,
) -> Result<SpatialTerms> {
    let k = offsets.len();
    let t = offsets.first().map_or(0, Trajectory::len);
    if perturbed.len() != k || perturbed.iter().chain(offsets).any(|p| p.len() != t) {
        return Err(Error::ShapeMismatch("offset sets disagree".into()));
    }
    let back = perm.invert_offsets(perturbed)?;
    let norm = (k * t) as f64;
    let mut value = 0.0;
    let mut d_offsets = zero_grads(k, t);
    let mut d_perturbed = zero_grads(k, t);
    for m in 0..k {
        for i in 0..t {
            let a = offsets[m].points()[i];
            let b = back[m].points()[i];
            value += huber_point(a, b);
            let g = huber_point_grad(a, b);
            d_offsets[m][i] = [g[0] / norm, g[1] / norm];
            // back = F(perturbed) + e, F its own transpose
            let gb = Waypoint::new(-g[0] / norm, -g[1] / norm);
            let gp = perm.reflect(gb);
            d_perturbed[m][i] = [gp.x, gp.y];
        }
    }
    Ok(SpatialTerms { value: value / norm, d_offsets, d_perturbed })
}

/// Runs `refine_fn` on the permuted anchors and history and compares its inverse-permuted
/// offsets with `offsets`.
pub fn spatial_consistency<F>(
    offsets: &[Trajectory],
    anchors: &[Trajectory],
    history: &Trajectory,
    perm: &SpatialPermutation,
    refine_fn: F,
) -> Result<f64>
where
    F: FnOnce(&[Trajectory], &Trajectory) -> Result<Vec<Trajectory>>,
{
    let perturbed = refine_fn(&perm.apply_anchors(anchors)?, &perm.apply_history(history))?;
    spatial_consistency_terms(offsets, &perturbed, perm).map(|t| t.value)
}

/// Per-step training objective. `total = l_reg + l_cls + l_temp + l_spa`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_reg: f64,
    pub l_cls: f64,
    pub l_temp: f64,
    pub l_spa: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_reg: f64, l_cls: f64, l_temp: f64, l_spa: f64) -> Self {
        Self { l_reg, l_cls, l_temp, l_spa, total: l_reg + l_cls + (l_temp + l_spa) }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_reg, self.l_cls, self.l_temp, self.l_spa, self.total].iter().all(|v| v.is_finite())
    }

    /// Component-wise sum.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.l_reg += other.l_reg;
        self.l_cls += other.l_cls;
        self.l_temp += other.l_temp;
        self.l_spa += other.l_spa;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            l_reg: self.l_reg * factor,
            l_cls: self.l_cls * factor,
            l_temp: self.l_temp * factor,
            l_spa: self.l_spa * factor,
            total: self.total * factor,
        }
    }
}

/// Outputs of one forward pass plus already evaluated consistency terms.
#[derive(Debug, Clone, Copy)]
pub struct LossComponents<'a> {
    pub anchors: &'a [Trajectory],
    pub refined: Option<&'a [Trajectory]>,
    pub scores: &'a [f64],
    pub l_temp: f64,
    pub l_spa: f64,
}

pub fn total_loss(components: &LossComponents<'_>, targets: &TargetSet) -> Result<LossBreakdown> {
    let sup = supervised_terms(components.anchors, components.refined, components.scores, targets)?;
    Ok(LossBreakdown::new(sup.l_reg, sup.l_cls, components.l_temp, components.l_spa))
}
