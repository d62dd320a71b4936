//! Two-stage trajectory predictor with exact reverse-mode gradients.
//!
//! Stage one pools per-point features of the target history, neighbour histories and lane
//! centerlines into an instance feature, regresses K goal positions from it and completes a full
//! trajectory per goal. Stage two treats those trajectories as anchors and regresses an offset
//! and a score for each one from the anchor and the target history.
//!
//! All parameters live in one flat vector; [`Layout`] records where each affine layer sits in
//! it. That keeps the optimizer, checkpoints and finite-difference checks shape-agnostic.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Trajectory, Waypoint, DEFAULT_DT};
use crate::losses::{softmin, softmin_backward, SpatialPermutation};
use crate::prediction::PredictionSet;
use crate::scenario::Window;

/// Coordinates enter and leave the network in units of this many meters.
pub const COORD_SCALE: f64 = 10.0;
/// Constant factor applied to the pooled feature sum.
pub const POOL_SCALE: f64 = 1.0 / 32.0;
/// Per-point input features: position, step, time, three type flags, padding flag.
pub const POINT_FEATURES: usize = 9;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub channels: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub modes: usize,
    /// Goal head plus goal-conditioned completion; otherwise all K trajectories are regressed
    /// directly from the instance feature.
    pub use_goal: bool,
    /// Anchor refinement stage; otherwise scores come from a linear head on the instance feature.
    pub use_refine: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { channels: 64, history_len: 20, future_len: 30, modes: 6, use_goal: true, use_refine: true }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.history_len == 0 || self.future_len == 0 || self.modes == 0 {
            return Err(Error::Invalid(format!("predictor sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One affine layer `y = W x + b` stored at `offset` (row-major `W`, then `b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Linear {
    pub fn len(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.input * self.output]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.input * self.output;
        &p[start..start + self.output]
    }

    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(y.len(), self.output);
        let w = self.weights(p);
        for ((yo, row), b) in y.iter_mut().zip(w.chunks_exact(self.input)).zip(self.bias(p)) {
            *yo = b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn forward_vec(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output];
        self.forward(p, x, &mut y);
        y
    }

    /// Accumulates parameter gradients and, if requested, the input gradient.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(self.input * self.output);
        for ((row, g), d) in gw.chunks_exact_mut(self.input).zip(gb.iter_mut()).zip(dy) {
            if *d == 0.0 {
                continue;
            }
            *g += d;
            for (gw, x) in row.iter_mut().zip(x) {
                *gw += d * x;
            }
        }
        if let Some(dx) = dx {
            let w = self.weights(p);
            for (row, d) in w.chunks_exact(self.input).zip(dy) {
                if *d == 0.0 {
                    continue;
                }
                for (dxi, w) in dx.iter_mut().zip(row) {
                    *dxi += d * w;
                }
            }
        }
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `d` wherever the rectified activation was inactive.
fn relu_mask(d: &mut [f64], activation: &[f64]) {
    for (d, a) in d.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Positions of every layer in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub enc1: Linear,
    pub enc2: Linear,
    pub goal: Option<Linear>,
    pub comp1: Linear,
    pub comp2: Linear,
    pub ref_in: Option<Linear>,
    pub ref_res: Option<Linear>,
    pub reg: Option<Linear>,
    pub cls: Linear,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &PredictorConfig) -> Self {
        let c = cfg.channels;
        let t2 = 2 * cfg.future_len;
        let mut offset = 0;
        let mut layer = |input: usize, output: usize| {
            let l = Linear { input, output, offset };
            offset += l.len();
            l
        };
        let enc1 = layer(POINT_FEATURES, c);
        let enc2 = layer(c, c);
        let (goal, comp1, comp2) = if cfg.use_goal {
            (Some(layer(c, 2 * cfg.modes)), layer(c + 2, c), layer(c, t2))
        } else {
            (None, layer(c, c), layer(c, t2 * cfg.modes))
        };
        let (ref_in, ref_res, reg, cls) = if cfg.use_refine {
            (
                Some(layer(t2 + 2 * cfg.history_len, c)),
                Some(layer(c, c)),
                Some(layer(c, t2)),
                layer(c, 1),
            )
        } else {
            (None, None, None, layer(c, cfg.modes))
        };
        Self { enc1, enc2, goal, comp1, comp2, ref_in, ref_res, reg, cls, total: offset }
    }

    /// `(name, layer)` for every present layer, in storage order.
    pub fn layers(&self) -> Vec<(&'static str, Linear)> {
        let mut out = vec![("enc1", self.enc1), ("enc2", self.enc2)];
        if let Some(g) = self.goal {
            out.push(("goal", g));
        }
        out.push(("comp1", self.comp1));
        out.push(("comp2", self.comp2));
        if let (Some(a), Some(b), Some(c)) = (self.ref_in, self.ref_res, self.reg) {
            out.push(("ref_in", a));
            out.push(("ref_res", b));
            out.push(("reg", c));
        }
        out.push(("cls", self.cls));
        out.sort_by_key(|(_, l)| l.offset);
        out
    }
}

/// Everything stage one and stage two produced for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub goals: Option<Vec<Waypoint>>,
    /// Completed first-stage trajectories.
    pub anchors: Vec<Trajectory>,
    /// Refinement offsets, when the refinement stage is enabled.
    pub offsets: Option<Vec<Trajectory>>,
    /// `anchors + offsets`, or the anchors themselves without refinement.
    pub refined: Vec<Trajectory>,
    /// Predicted displacement scores; lower means more likely.
    pub raw_scores: Vec<f64>,
    /// `softmin(raw_scores)`.
    pub scores: Vec<f64>,
    /// Refinement offsets for the spatially permuted anchors, before the inverse permutation.
    pub perturbed_offsets: Option<Vec<Trajectory>>,
}

impl PredictorOutput {
    pub fn prediction_set(&self) -> Result<PredictionSet> {
        PredictionSet::new(self.refined.clone(), self.scores.clone())
    }
}

#[derive(Debug, Clone)]
struct RefineTrace {
    inputs: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

/// Activations cached by [`Predictor::forward`] for [`Predictor::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    generation: u64,
    features: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    phi: Vec<f64>,
    comp_in: Vec<f64>,
    comp_hidden: Vec<f64>,
    refine: Option<RefineTrace>,
    perturbed: Option<(SpatialPermutation, RefineTrace)>,
    scores: Vec<f64>,
}

impl ForwardTrace {
    /// On/off state of every rectifier, in a fixed order. Two parameter points with the same
    /// pattern lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out: Vec<bool> = Vec::new();
        let mut push = |v: &[f64]| out.extend(v.iter().map(|&x| x > 0.0));
        push(&self.h1);
        push(&self.h2);
        push(&self.comp_hidden);
        for r in self.refine.iter().chain(self.perturbed.as_ref().map(|p| &p.1)) {
            push(&r.a);
            push(&r.b);
        }
        out
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// Upstream gradients for every differentiable output. Flat layouts: trajectories are
/// `K x T x 2` interleaved, goals `K x 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub goals: Vec<f64>,
    pub anchors: Vec<f64>,
    pub offsets: Vec<f64>,
    pub refined: Vec<f64>,
    pub raw_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub perturbed_offsets: Vec<f64>,
}

impl OutputGrad {
    pub fn zeros(cfg: &PredictorConfig) -> Self {
        let kt2 = cfg.modes * cfg.future_len * 2;
        Self {
            goals: vec![0.0; cfg.modes * 2],
            anchors: vec![0.0; kt2],
            offsets: vec![0.0; kt2],
            refined: vec![0.0; kt2],
            raw_scores: vec![0.0; cfg.modes],
            scores: vec![0.0; cfg.modes],
            perturbed_offsets: vec![0.0; kt2],
        }
    }

    /// Adds `g` (one `[dx, dy]` per step) into the block of mode `k` in `field`.
    pub fn add_traj(field: &mut [f64], k: usize, g: &[[f64; 2]]) {
        let base = k * g.len() * 2;
        for (t, d) in g.iter().enumerate() {
            field[base + 2 * t] += d[0];
            field[base + 2 * t + 1] += d[1];
        }
    }
}

/// Per-point encoder inputs for a window.
pub fn point_features(window: &Window) -> Vec<f64> {
    let s = COORD_SCALE;
    let mut out = Vec::new();
    let mut push_seq = |pts: &[Waypoint], present: Option<&[bool]>, kind: usize, timed: bool| {
        let n = pts.len();
        for (i, p) in pts.iter().enumerate() {
            let d = if i == 0 { Waypoint::ORIGIN } else { *p - pts[i - 1] };
            let tau = if timed { (i + 1) as f64 / n as f64 - 1.0 } else { 0.0 };
            let padded = present.map_or(false, |m| !m[i]);
            let mut f = [0.0; POINT_FEATURES];
            f[0] = p.x / s;
            f[1] = p.y / s;
            f[2] = d.x / s;
            f[3] = d.y / s;
            f[4] = tau;
            f[5 + kind] = 1.0;
            f[8] = padded as u8 as f64;
            out.extend_from_slice(&f);
        }
    };
    push_seq(window.history.points(), Some(&window.history_present), 0, true);
    for (traj, present) in &window.neighbors {
        push_seq(traj.points(), Some(present), 1, true);
    }
    for lane in &window.map {
        push_seq(lane.points(), None, 2, false);
    }
    out
}

fn traj_from_flat(flat: &[f64]) -> Result<Trajectory> {
    Trajectory::from_flat(flat, DEFAULT_DT)
}

#[derive(Debug, Clone)]
pub struct Predictor {
    config: PredictorConfig,
    layout: Layout,
    params: Vec<f64>,
    generation: u64,
}

impl Predictor {
    /// Uniform initialization in `[-a, a]`, `a = sqrt(1 / fan_in)`, for weights and biases.
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for (_, l) in layout.layers() {
            let a = (1.0 / l.input as f64).sqrt();
            for p in &mut params[l.offset..l.offset + l.len()] {
                *p = rng.random_range(-a..=a);
            }
        }
        Ok(Self { config, layout, params, generation: 0 })
    }

    pub fn from_params(config: PredictorConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(Self { config, layout, params, generation: 0 })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Bumped on every parameter change; traces from older generations are rejected.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn update_params(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.params);
        self.generation += 1;
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                self.params.len()
            )));
        }
        self.update_params(|p| p.copy_from_slice(params));
        Ok(())
    }

    fn check_window(&self, window: &Window) -> Result<()> {
        if window.history.len() != self.config.history_len {
            return Err(Error::ShapeMismatch(format!(
                "window history has {} frames, predictor expects {}",
                window.history.len(),
                self.config.history_len
            )));
        }
        Ok(())
    }

    fn encode_traced(&self, window: &Window) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_window(window)?;
        let features = point_features(window);
        let n = features.len() / POINT_FEATURES;
        if n == 0 {
            return Err(Error::EmptyHistory);
        }
        let c = self.config.channels;
        let p = &self.params;
        let mut h1 = vec![0.0; n * c];
        let mut h2 = vec![0.0; n * c];
        let mut phi = vec![0.0; c];
        for i in 0..n {
            let f = &features[i * POINT_FEATURES..(i + 1) * POINT_FEATURES];
            let a = &mut h1[i * c..(i + 1) * c];
            self.layout.enc1.forward(p, f, a);
            relu(a);
            let b = &mut h2[i * c..(i + 1) * c];
            self.layout.enc2.forward(p, &h1[i * c..(i + 1) * c], b);
            relu(b);
            for (acc, v) in phi.iter_mut().zip(b.iter()) {
                *acc += v * POOL_SCALE;
            }
        }
        Ok((features, h1, h2, phi))
    }

    /// Instance feature of the target agent: sum-pooled point features.
    pub fn encode(&self, window: &Window) -> Result<Vec<f64>> {
        self.encode_traced(window).map(|(_, _, _, phi)| phi)
    }

    /// K goal positions regressed from the instance feature.
    pub fn predict_goals(&self, phi: &[f64]) -> Result<Vec<Waypoint>> {
        let goal = self
            .layout
            .goal
            .ok_or_else(|| Error::Config("goal prediction is disabled".into()))?;
        let raw = goal.forward_vec(&self.params, phi);
        Ok(raw.chunks_exact(2).map(|g| Waypoint::new(g[0] * COORD_SCALE, g[1] * COORD_SCALE)).collect())
    }

    /// Returns `(comp_in, comp_hidden, anchors_flat)`.
    fn complete_traced(&self, phi: &[f64], goal_raw: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let (c, k, t2) = (cfg.channels, cfg.modes, 2 * cfg.future_len);
        let p = &self.params;
        let mut anchors = vec![0.0; k * t2];
        if cfg.use_goal {
            let mut comp_in = Vec::with_capacity(k * (c + 2));
            let mut hidden = vec![0.0; k * c];
            for m in 0..k {
                comp_in.extend_from_slice(phi);
                comp_in.extend_from_slice(&goal_raw[2 * m..2 * m + 2]);
                let h = &mut hidden[m * c..(m + 1) * c];
                self.layout.comp1.forward(p, &comp_in[m * (c + 2)..(m + 1) * (c + 2)], h);
                relu(h);
                self.layout.comp2.forward(p, h, &mut anchors[m * t2..(m + 1) * t2]);
            }
            for a in &mut anchors {
                *a *= COORD_SCALE;
            }
            (comp_in, hidden, anchors)
        } else {
            let mut hidden = self.layout.comp1.forward_vec(p, phi);
            relu(&mut hidden);
            self.layout.comp2.forward(p, &hidden, &mut anchors);
            for a in &mut anchors {
                *a *= COORD_SCALE;
            }
            (phi.to_vec(), hidden, anchors)
        }
    }

    /// Completes one trajectory per goal (or K trajectories directly when goals are disabled).
    pub fn complete_trajectories(&self, phi: &[f64], goals: &[Waypoint]) -> Result<Vec<Trajectory>> {
        let goal_raw: Vec<f64> = if self.config.use_goal {
            if goals.len() != self.config.modes {
                return Err(Error::ShapeMismatch(format!(
                    "{} goals for {} modes",
                    goals.len(),
                    self.config.modes
                )));
            }
            goals.iter().flat_map(|g| [g.x / COORD_SCALE, g.y / COORD_SCALE]).collect()
        } else {
            Vec::new()
        };
        let (_, _, anchors) = self.complete_traced(phi, &goal_raw);
        anchors.chunks_exact(2 * self.config.future_len).map(traj_from_flat).collect()
    }

    /// Builds refinement inputs `[anchor / S, history / S]` for every mode.
    fn refine_inputs(&self, anchors: &[f64], history: &[f64]) -> Vec<f64> {
        let t2 = 2 * self.config.future_len;
        let mut x = Vec::with_capacity(self.config.modes * (t2 + history.len()));
        for a in anchors.chunks_exact(t2) {
            x.extend(a.iter().map(|v| v / COORD_SCALE));
            x.extend(history.iter().map(|v| v / COORD_SCALE));
        }
        x
    }

    /// Residual block plus Reg/Cls heads. Returns the trace, flat offsets and raw scores.
    fn refine_traced(&self, inputs: Vec<f64>) -> (RefineTrace, Vec<f64>, Vec<f64>) {
        let (ref_in, ref_res, reg) = match (self.layout.ref_in, self.layout.ref_res, self.layout.reg) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => unreachable!("refine_traced without a refinement stage"),
        };
        let cfg = &self.config;
        let (c, k, t2) = (cfg.channels, cfg.modes, 2 * cfg.future_len);
        let width = ref_in.input;
        let p = &self.params;
        let mut a = vec![0.0; k * c];
        let mut b = vec![0.0; k * c];
        let mut r = vec![0.0; k * c];
        let mut offsets = vec![0.0; k * t2];
        let mut raw = vec![0.0; k];
        for m in 0..k {
            let am = &mut a[m * c..(m + 1) * c];
            ref_in.forward(p, &inputs[m * width..(m + 1) * width], am);
            relu(am);
            let bm = &mut b[m * c..(m + 1) * c];
            ref_res.forward(p, &a[m * c..(m + 1) * c], bm);
            relu(bm);
            for i in 0..c {
                r[m * c + i] = a[m * c + i] + b[m * c + i];
            }
            let rm = &r[m * c..(m + 1) * c];
            reg.forward(p, rm, &mut offsets[m * t2..(m + 1) * t2]);
            self.layout.cls.forward(p, rm, &mut raw[m..m + 1]);
        }
        for o in &mut offsets {
            *o *= COORD_SCALE;
        }
        (RefineTrace { inputs, a, b, r }, offsets, raw)
    }

    /// Refinement offsets and raw scores for arbitrary anchors and history.
    pub fn refine(&self, anchors: &[Trajectory], history: &Trajectory) -> Result<(Vec<Trajectory>, Vec<f64>)> {
        if !self.config.use_refine {
            return Err(Error::Config("refinement is disabled".into()));
        }
        if anchors.len() != self.config.modes {
            return Err(Error::ShapeMismatch(format!("{} anchors for {} modes", anchors.len(), self.config.modes)));
        }
        if let Some(a) = anchors.iter().find(|a| a.len() != self.config.future_len) {
            return Err(Error::LengthMismatch { left: self.config.future_len, right: a.len() });
        }
        if history.len() != self.config.history_len {
            return Err(Error::LengthMismatch { left: self.config.history_len, right: history.len() });
        }
        let flat: Vec<f64> = anchors.iter().flat_map(|a| a.to_flat()).collect();
        let (_, offsets, raw) = self.refine_traced(self.refine_inputs(&flat, &history.to_flat()));
        let offsets = offsets.chunks_exact(2 * self.config.future_len).map(traj_from_flat).collect::<Result<_>>()?;
        Ok((offsets, raw))
    }

    /// Full forward pass. With `perm`, the refinement stage is run a second time on the
    /// permuted anchors and history for the spatial consistency term.
    pub fn forward(
        &self,
        window: &Window,
        perm: Option<&SpatialPermutation>,
    ) -> Result<(PredictorOutput, ForwardTrace)> {
        let cfg = self.config;
        let t2 = 2 * cfg.future_len;
        let (features, h1, h2, phi) = self.encode_traced(window)?;
        let goal_raw = match self.layout.goal {
            Some(g) => g.forward_vec(&self.params, &phi),
            None => Vec::new(),
        };
        let (comp_in, comp_hidden, anchors) = self.complete_traced(&phi, &goal_raw);
        let history = window.history.to_flat();

        let (refine, offsets, raw_scores) = if cfg.use_refine {
            let (tr, off, raw) = self.refine_traced(self.refine_inputs(&anchors, &history));
            (Some(tr), Some(off), raw)
        } else {
            (None, None, self.layout.cls.forward_vec(&self.params, &phi))
        };

        let perturbed = match (perm, cfg.use_refine) {
            (Some(z), true) => {
                z.check(cfg.modes, cfg.future_len)?;
                let permuted_anchors = z.apply_anchors_flat(&anchors);
                let permuted_history = z.apply_history_flat(&history);
                let (tr, off, _) = self.refine_traced(self.refine_inputs(&permuted_anchors, &permuted_history));
                Some((z.clone(), tr, off))
            }
            _ => None,
        };

        let refined_flat: Vec<f64> = match &offsets {
            Some(o) => anchors.iter().zip(o).map(|(a, d)| a + d).collect(),
            None => anchors.clone(),
        };
        let scores = softmin(&raw_scores);
        let to_trajs = |flat: &[f64]| -> Result<Vec<Trajectory>> {
            flat.chunks_exact(t2).map(traj_from_flat).collect()
        };
        let output = PredictorOutput {
            goals: cfg.use_goal.then(|| {
                goal_raw.chunks_exact(2).map(|g| Waypoint::new(g[0] * COORD_SCALE, g[1] * COORD_SCALE)).collect()
            }),
            anchors: to_trajs(&anchors)?,
            offsets: offsets.as_deref().map(to_trajs).transpose()?,
            refined: to_trajs(&refined_flat)?,
            raw_scores,
            scores: scores.clone(),
            perturbed_offsets: perturbed.as_ref().map(|(_, _, o)| to_trajs(o)).transpose()?,
        };
        let trace = ForwardTrace {
            generation: self.generation,
            features,
            h1,
            h2,
            phi,
            comp_in,
            comp_hidden,
            refine,
            perturbed: perturbed.map(|(z, tr, _)| (z, tr)),
            scores,
        };
        Ok((output, trace))
    }

    /// Final trajectories and probabilities for one window.
    pub fn predict(&self, window: &Window) -> Result<PredictionSet> {
        self.forward(window, None)?.0.prediction_set()
    }

    /// Backpropagates through a refinement pass; accumulates parameter gradients and returns the
    /// gradient with respect to the (scaled-back) anchor inputs.
    fn refine_backward(&self, tr: &RefineTrace, d_offsets: &[f64], d_raw: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (ref_in, ref_res, reg) = match (self.layout.ref_in, self.layout.ref_res, self.layout.reg) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => unreachable!(),
        };
        let cfg = &self.config;
        let (c, k, t2) = (cfg.channels, cfg.modes, 2 * cfg.future_len);
        let width = ref_in.input;
        let p = &self.params;
        let mut d_anchors = vec![0.0; k * t2];
        let mut dr = vec![0.0; c];
        let mut db = vec![0.0; c];
        let mut da = vec![0.0; c];
        let mut dx = vec![0.0; width];
        for m in 0..k {
            let rm = &tr.r[m * c..(m + 1) * c];
            let d_out: Vec<f64> = d_offsets[m * t2..(m + 1) * t2].iter().map(|d| d * COORD_SCALE).collect();
            dr.iter_mut().for_each(|v| *v = 0.0);
            reg.backward(p, rm, &d_out, grad, Some(&mut dr));
            self.layout.cls.backward(p, rm, &d_raw[m..m + 1], grad, Some(&mut dr));
            // r = a + relu(W a + b)
            db.copy_from_slice(&dr);
            relu_mask(&mut db, &tr.b[m * c..(m + 1) * c]);
            da.copy_from_slice(&dr);
            ref_res.backward(p, &tr.a[m * c..(m + 1) * c], &db, grad, Some(&mut da));
            relu_mask(&mut da, &tr.a[m * c..(m + 1) * c]);
            dx.iter_mut().for_each(|v| *v = 0.0);
            ref_in.backward(p, &tr.inputs[m * width..(m + 1) * width], &da, grad, Some(&mut dx));
            for (d, x) in d_anchors[m * t2..(m + 1) * t2].iter_mut().zip(&dx[..t2]) {
                *d += x / COORD_SCALE;
            }
        }
        d_anchors
    }

    /// Exact parameter gradient of `<upstream, outputs>` at the point the trace was recorded.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &OutputGrad) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(trace, upstream, &mut grad)?;
        Ok(grad)
    }

    pub fn backward_into(&self, trace: &ForwardTrace, upstream: &OutputGrad, grad: &mut [f64]) -> Result<()> {
        if trace.generation != self.generation {
            return Err(Error::StaleTrace { trace: trace.generation, current: self.generation });
        }
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffer size".into()));
        }
        let cfg = self.config;
        let (c, k, t2) = (cfg.channels, cfg.modes, 2 * cfg.future_len);
        let p = &self.params;

        // scores = softmin(raw)
        let mut d_raw = upstream.raw_scores.clone();
        for (d, s) in d_raw.iter_mut().zip(softmin_backward(&trace.scores, &upstream.scores)) {
            *d += s;
        }

        let mut d_anchors: Vec<f64> = upstream.anchors.iter().zip(&upstream.refined).map(|(a, r)| a + r).collect();
        let mut d_phi = vec![0.0; c];

        if cfg.use_refine {
            let d_offsets: Vec<f64> = upstream.offsets.iter().zip(&upstream.refined).map(|(a, r)| a + r).collect();
            let tr = trace.refine.as_ref().expect("refine trace");
            for (d, x) in d_anchors.iter_mut().zip(self.refine_backward(tr, &d_offsets, &d_raw, grad)) {
                *d += x;
            }
            if let Some((z, ptr)) = &trace.perturbed {
                let zero = vec![0.0; k];
                let d_perm = self.refine_backward(ptr, &upstream.perturbed_offsets, &zero, grad);
                for (d, x) in d_anchors.iter_mut().zip(z.anchors_vjp_flat(&d_perm)) {
                    *d += x;
                }
            }
        } else {
            self.layout.cls.backward(p, &trace.phi, &d_raw, grad, Some(&mut d_phi));
        }

        // completion
        for d in &mut d_anchors {
            *d *= COORD_SCALE;
        }
        if cfg.use_goal {
            let goal = self.layout.goal.expect("goal layer");
            let mut d_goal_raw: Vec<f64> = upstream.goals.iter().map(|g| g * COORD_SCALE).collect();
            let mut dh = vec![0.0; c];
            let mut dz = vec![0.0; c + 2];
            for m in 0..k {
                let h = &trace.comp_hidden[m * c..(m + 1) * c];
                dh.iter_mut().for_each(|v| *v = 0.0);
                self.layout.comp2.backward(p, h, &d_anchors[m * t2..(m + 1) * t2], grad, Some(&mut dh));
                relu_mask(&mut dh, h);
                dz.iter_mut().for_each(|v| *v = 0.0);
                self.layout.comp1.backward(p, &trace.comp_in[m * (c + 2)..(m + 1) * (c + 2)], &dh, grad, Some(&mut dz));
                for (dp, z) in d_phi.iter_mut().zip(&dz[..c]) {
                    *dp += z;
                }
                d_goal_raw[2 * m] += dz[c];
                d_goal_raw[2 * m + 1] += dz[c + 1];
            }
            goal.backward(p, &trace.phi, &d_goal_raw, grad, Some(&mut d_phi));
        } else {
            let h = &trace.comp_hidden;
            let mut dh = vec![0.0; c];
            self.layout.comp2.backward(p, h, &d_anchors, grad, Some(&mut dh));
            relu_mask(&mut dh, h);
            self.layout.comp1.backward(p, &trace.phi, &dh, grad, Some(&mut d_phi));
        }

        // encoder
        let n = trace.features.len() / POINT_FEATURES;
        let mut dh2 = vec![0.0; c];
        let mut dh1 = vec![0.0; c];
        for i in 0..n {
            let h2 = &trace.h2[i * c..(i + 1) * c];
            let h1 = &trace.h1[i * c..(i + 1) * c];
            for j in 0..c {
                dh2[j] = d_phi[j] * POOL_SCALE;
            }
            relu_mask(&mut dh2, h2);
            if dh2.iter().all(|v| *v == 0.0) {
                continue;
            }
            dh1.iter_mut().for_each(|v| *v = 0.0);
            self.layout.enc2.backward(p, h1, &dh2, grad, Some(&mut dh1));
            relu_mask(&mut dh1, h1);
            self.layout.enc1.backward(p, &trace.features[i * POINT_FEATURES..(i + 1) * POINT_FEATURES], &dh1, grad, None);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config,
            layers: self
                .layout
                .layers()
                .into_iter()
                .map(|(name, l)| LayerShape { name: name.to_string(), input: l.input, output: l.output })
                .collect(),
            params: self.params.clone(),
            seed,
            epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

/// Serialized predictor state. Parameters are written with round-trip precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: PredictorConfig,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn predictor(&self) -> Result<Predictor> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::ShapeMismatch(format!("checkpoint version {}", self.version)));
        }
        let predictor = Predictor::from_params(self.config, self.params.clone())?;
        let expected = predictor.to_checkpoint(self.seed, self.epoch).layers;
        if expected != self.layers {
            return Err(Error::ShapeMismatch("checkpoint layer shapes do not match its config".into()));
        }
        Ok(predictor)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
