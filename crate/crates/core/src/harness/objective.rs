//! The per-scenario training objective and its exact parameter gradient.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_with_draw, AugmentSpec};
use crate::data::make_shift_pair_with_heading;
use crate::ensemble::PseudoTargets;
use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::losses::{
    spatial_consistency_terms, supervised_terms, temporal_consistency_terms, LossBreakdown, SpatialPermutation,
    TrajGrad,
};
use crate::matching::{Criterion, MatchStrategy};
use crate::prediction::TargetSet;
use crate::predictor::{OutputGrad, Predictor};
use crate::scenario::{Scenario, Window};

use super::config::TrainConfig;

/// Loss settings that do not live in the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    pub use_temp: bool,
    pub use_spatial: bool,
    pub use_mpt: bool,
    pub shift: usize,
    pub strategy: MatchStrategy,
    pub criterion: Criterion,
    pub augment: AugmentSpec,
    pub spatial_noise: f64,
    pub spatial_flip_prob: f64,
}

impl From<&TrainConfig> for ObjectiveOptions {
    fn from(c: &TrainConfig) -> Self {
        Self {
            use_temp: c.use_temp,
            use_spatial: c.use_spatial,
            use_mpt: c.use_mpt,
            shift: c.shift,
            strategy: c.strategy,
            criterion: c.criterion,
            augment: c.augment(),
            spatial_noise: c.spatial_noise,
            spatial_flip_prob: c.spatial_flip_prob,
        }
    }
}

/// One training example with the seeds that fix its random draws.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub scenario: &'a Scenario,
    pub pseudo: Option<&'a PseudoTargets>,
    pub augment_seed: u64,
    pub perm_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    None,
    Total,
    /// Separate gradients for `l_reg`, `l_cls`, `l_temp` and `l_spa`.
    PerTerm,
}

/// Discrete choices made while evaluating the objective. Finite differences are only
/// meaningful between parameter points that agree on all of them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiscreteState {
    pub activations: Vec<bool>,
    pub winners: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    pub grad: Option<Vec<f64>>,
    /// `[reg, cls, temp, spa]` in [`GradMode::PerTerm`].
    pub term_grads: Option<[Vec<f64>; 4]>,
    pub discrete: DiscreteState,
    /// Scores of the unshifted window.
    pub scores: Vec<f64>,
    /// Frozen soft classification targets with their confidences.
    pub cls_targets: Vec<(Vec<f64>, f64)>,
}

fn add_all(field: &mut [f64], grads: &[TrajGrad]) {
    for (k, g) in grads.iter().enumerate() {
        OutputGrad::add_traj(field, k, g);
    }
}

/// Builds the supervision for the augmented window: ground truth plus, with pseudo-target
/// supervision on, the stored pseudo targets mapped through the same augmentation.
fn targets_for(
    gt: Trajectory,
    pseudo: Option<&PseudoTargets>,
    opts: &ObjectiveOptions,
    map: impl Fn(crate::geometry::Waypoint) -> crate::geometry::Waypoint,
) -> Result<TargetSet> {
    match (opts.use_mpt, pseudo) {
        (true, Some(p)) => {
            let mapped = p.trajectories.iter().map(|t| t.map_points(&map)).collect::<Result<Vec<_>>>()?;
            let mapped = PseudoTargets { scenario_id: p.scenario_id.clone(), trajectories: mapped, confidences: p.confidences.clone() };
            mapped.target_set(gt)
        }
        _ => Ok(TargetSet::ground_truth_only(gt)),
    }
}

/// Evaluates `l_reg + l_cls + l_temp + l_spa` for one sample and, on request, its gradient
/// with respect to the predictor parameters.
pub fn objective(predictor: &Predictor, sample: &Sample<'_>, opts: &ObjectiveOptions, mode: GradMode) -> Result<Objective> {
    let cfg = *predictor.config();
    let id = &sample.scenario.scenario_id;
    let (scenario, draw) = augment_with_draw(sample.scenario, &opts.augment, sample.augment_seed)?;
    let (win_a, win_b) = if opts.use_temp {
        let pair = make_shift_pair_with_heading(&scenario, opts.shift, draw.heading_offset)?;
        (pair.a, Some(pair.b))
    } else {
        (Window::cut(&scenario, scenario.current_frame(), draw.heading_offset, true)?, None)
    };
    let gt = win_a.future.clone().ok_or_else(|| Error::InsufficientFrames {
        scenario_id: id.clone(),
        needed: scenario.history_len + cfg.future_len,
        available: scenario.total_frames(),
    })?;
    if gt.len() != cfg.future_len {
        return Err(Error::ShapeMismatch(format!("scenario {id} has {} future frames, model predicts {}", gt.len(), cfg.future_len)));
    }
    let targets = targets_for(gt, sample.pseudo, opts, |p| draw.apply_local(p))?;

    let perm = (opts.use_spatial && cfg.use_refine).then(|| {
        SpatialPermutation::random(cfg.modes, cfg.future_len, opts.spatial_noise, opts.spatial_flip_prob, sample.perm_seed)
    });
    let (out_a, trace_a) = predictor.forward(&win_a, perm.as_ref())?;
    let sup = supervised_terms(&out_a.anchors, cfg.use_refine.then_some(&out_a.refined[..]), &out_a.scores, &targets)?;

    let mut discrete = DiscreteState { activations: trace_a.activation_pattern(), winners: sup.winners.clone(), pairs: vec![] };

    let temporal = match &win_b {
        Some(wb) => {
            let (out_b, trace_b) = predictor.forward(wb, None)?;
            let b_in_a = out_b
                .refined
                .iter()
                .map(|t| t.map_points(|p| wb.frame.reexpress(&win_a.frame, p)))
                .collect::<Result<Vec<_>>>()?;
            let terms = temporal_consistency_terms(&out_a.refined, &b_in_a, opts.shift, opts.strategy, opts.criterion)?;
            discrete.activations.extend(trace_b.activation_pattern());
            discrete.pairs = terms.pairs.clone();
            // gradients in A's frame map back to B's frame by the inverse rotation
            let back = wb.frame.rotation - win_a.frame.rotation;
            let d_b: Vec<TrajGrad> = terms
                .d_b
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|d| {
                            let r = crate::geometry::Waypoint::new(d[0], d[1]).rotated(back);
                            [r.x, r.y]
                        })
                        .collect()
                })
                .collect();
            Some((trace_b, terms.value, terms.d_a, d_b))
        }
        None => None,
    };

    let spatial = match (&perm, &out_a.offsets, &out_a.perturbed_offsets) {
        (Some(z), Some(o), Some(po)) => Some(spatial_consistency_terms(o, po, z)?),
        _ => None,
    };

    let breakdown = LossBreakdown::new(
        sup.l_reg,
        sup.l_cls,
        temporal.as_ref().map_or(0.0, |t| t.1),
        spatial.as_ref().map_or(0.0, |s| s.value),
    );
    if !breakdown.is_finite() {
        return Err(Error::NonFiniteLoss(id.clone()));
    }

    let zeros = || OutputGrad::zeros(&cfg);
    let mut up = [zeros(), zeros(), zeros(), zeros()];
    let mut up_b = zeros();
    add_all(&mut up[0].anchors, &sup.d_anchors);
    if cfg.use_refine {
        add_all(&mut up[0].refined, &sup.d_refined);
    }
    for (d, s) in up[1].scores.iter_mut().zip(&sup.d_scores) {
        *d += s;
    }
    if let Some((_, _, d_a, d_b)) = &temporal {
        add_all(&mut up[2].refined, d_a);
        add_all(&mut up_b.refined, d_b);
    }
    if let Some(s) = &spatial {
        add_all(&mut up[3].offsets, &s.d_offsets);
        add_all(&mut up[3].perturbed_offsets, &s.d_perturbed);
    }

    let n = predictor.num_params();
    let (grad, term_grads) = match mode {
        GradMode::None => (None, None),
        GradMode::Total => {
            let mut total = zeros();
            for u in &up {
                for (dst, src) in [
                    (&mut total.goals, &u.goals),
                    (&mut total.anchors, &u.anchors),
                    (&mut total.offsets, &u.offsets),
                    (&mut total.refined, &u.refined),
                    (&mut total.raw_scores, &u.raw_scores),
                    (&mut total.scores, &u.scores),
                    (&mut total.perturbed_offsets, &u.perturbed_offsets),
                ] {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            let mut g = vec![0.0; n];
            predictor.backward_into(&trace_a, &total, &mut g)?;
            if let Some((trace_b, ..)) = &temporal {
                predictor.backward_into(trace_b, &up_b, &mut g)?;
            }
            (Some(g), None)
        }
        GradMode::PerTerm => {
            let mut grads: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
            for (g, u) in grads.iter_mut().zip(&up) {
                predictor.backward_into(&trace_a, u, g)?;
            }
            if let Some((trace_b, ..)) = &temporal {
                predictor.backward_into(trace_b, &up_b, &mut grads[2])?;
            }
            let total = (0..n).map(|i| grads.iter().map(|g| g[i]).sum()).collect();
            (Some(total), Some(grads))
        }
    };
    if grad.as_ref().is_some_and(|g: &Vec<f64>| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss(id.clone()));
    }
    let cls_targets = sup.cls_targets.iter().cloned().zip(targets.confidences().iter().copied()).collect();
    Ok(Objective { breakdown, grad, term_grads, discrete, scores: out_a.scores, cls_targets })
}
