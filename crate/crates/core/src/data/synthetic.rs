//! Procedural driving scenarios with known multi-modal futures.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Frame, Trajectory, Waypoint, DEFAULT_DT};
use crate::scenario::{AgentTrack, ObjectType, Scenario, FUTURE_LEN, HISTORY_LEN};

const LANE_WIDTH: f64 = 3.5;
const ARC_STEP: f64 = 0.2;
const MAP_SPACING: f64 = 5.0;
const RUN_OUT: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionMode {
    Straight,
    TurnLeft,
    TurnRight,
    LaneChange,
    Junction,
}

impl MotionMode {
    pub const ALL: [MotionMode; 5] =
        [Self::Straight, Self::TurnLeft, Self::TurnRight, Self::LaneChange, Self::Junction];
}

/// Relative frequency of each motion mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMix {
    pub straight: f64,
    pub turn_left: f64,
    pub turn_right: f64,
    pub lane_change: f64,
    pub junction: f64,
}

impl ModeMix {
    pub fn only(mode: MotionMode) -> Self {
        let mut m = Self { straight: 0.0, turn_left: 0.0, turn_right: 0.0, lane_change: 0.0, junction: 0.0 };
        *m.weight_mut(mode) = 1.0;
        m
    }

    pub fn weight(&self, mode: MotionMode) -> f64 {
        match mode {
            MotionMode::Straight => self.straight,
            MotionMode::TurnLeft => self.turn_left,
            MotionMode::TurnRight => self.turn_right,
            MotionMode::LaneChange => self.lane_change,
            MotionMode::Junction => self.junction,
        }
    }

    pub fn weight_mut(&mut self, mode: MotionMode) -> &mut f64 {
        match mode {
            MotionMode::Straight => &mut self.straight,
            MotionMode::TurnLeft => &mut self.turn_left,
            MotionMode::TurnRight => &mut self.turn_right,
            MotionMode::LaneChange => &mut self.lane_change,
            MotionMode::Junction => &mut self.junction,
        }
    }
}

impl Default for ModeMix {
    fn default() -> Self {
        Self { straight: 0.2, turn_left: 0.15, turn_right: 0.15, lane_change: 0.2, junction: 0.3 }
    }
}

/// One exit of a junction: a turn of `turn_deg` degrees (positive is left) taken with
/// probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionBranch {
    pub turn_deg: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub scenario_count: usize,
    pub mode_mix: ModeMix,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Standard deviation of the observation noise, meters.
    pub noise_sigma: f64,
    pub seed: u64,
    pub junction_branches: Vec<JunctionBranch>,
    pub history_len: usize,
    pub future_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            scenario_count: 100,
            mode_mix: ModeMix::default(),
            speed_min: 5.0,
            speed_max: 12.0,
            noise_sigma: 0.05,
            seed: 0,
            junction_branches: vec![
                JunctionBranch { turn_deg: 90.0, prob: 1.0 / 3.0 },
                JunctionBranch { turn_deg: 0.0, prob: 1.0 / 3.0 },
                JunctionBranch { turn_deg: -90.0, prob: 1.0 / 3.0 },
            ],
            history_len: HISTORY_LEN,
            future_len: FUTURE_LEN,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let weights: Vec<f64> = MotionMode::ALL.iter().map(|m| self.mode_mix.weight(*m)).collect();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("mode mix must be nonnegative and sum to 1".into()));
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return Err(Error::Invalid("speed range must be positive and ordered".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Invalid("noise sigma must be nonnegative".into()));
        }
        if self.mode_mix.junction > 0.0 {
            let total: f64 = self.junction_branches.iter().map(|b| b.prob).sum();
            if self.junction_branches.is_empty()
                || self.junction_branches.iter().any(|b| !(b.prob >= 0.0 && b.turn_deg.abs() <= 150.0))
                || (total - 1.0).abs() > 1e-9
            {
                return Err(Error::Invalid("junction branch probabilities must sum to 1".into()));
            }
        }
        if self.history_len < 2 || self.future_len == 0 {
            return Err(Error::Invalid("need at least two history frames and one future frame".into()));
        }
        Ok(())
    }
}

/// What the generator chose for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticLabel {
    pub mode: MotionMode,
    /// Index into the junction branches; `None` outside junctions.
    pub branch: Option<usize>,
}

enum Piece {
    Straight(f64),
    /// Radius and signed turn angle (positive is counter-clockwise).
    Arc(f64, f64),
}

/// A dense centerline with arc-length lookup.
struct Path {
    points: Vec<Waypoint>,
    cumulative: Vec<f64>,
}

impl Path {
    fn build(pieces: &[Piece]) -> Self {
        let mut points = vec![Waypoint::ORIGIN];
        let mut heading: f64 = 0.0;
        let mut pos = Waypoint::ORIGIN;
        for piece in pieces {
            match *piece {
                Piece::Straight(len) => {
                    pos = pos + Waypoint::new(heading.cos(), heading.sin()) * len;
                    points.push(pos);
                }
                Piece::Arc(radius, angle) => {
                    let side = angle.signum();
                    let center = pos + Waypoint::new(-heading.sin(), heading.cos()) * (side * radius);
                    let steps = ((radius * angle.abs()) / ARC_STEP).ceil().max(1.0) as usize;
                    let start = pos - center;
                    for i in 1..=steps {
                        let p = center + start.rotated(angle * i as f64 / steps as f64);
                        points.push(p);
                    }
                    pos = *points.last().unwrap();
                    heading += angle;
                }
            }
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            cumulative.push(cumulative.last().unwrap() + w[0].distance(&w[1]));
        }
        Self { points, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn at(&self, s: f64) -> Waypoint {
        let s = s.clamp(0.0, self.length());
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.points.len() - 1);
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let u = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        self.points[i - 1] + (self.points[i] - self.points[i - 1]) * u
    }

    fn polyline(&self, spacing: f64) -> Vec<Waypoint> {
        let n = (self.length() / spacing).floor() as usize;
        let mut out: Vec<Waypoint> = (0..=n).map(|i| self.at(i as f64 * spacing)).collect();
        if self.length() - n as f64 * spacing > 1e-9 {
            out.push(self.at(self.length()));
        }
        out
    }
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Generates `spec.scenario_count` scenarios; identical specs give identical output.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Scenario>> {
    Ok(generate_labeled(spec)?.into_iter().map(|(s, _)| s).collect())
}

pub fn generate_labeled(spec: &SyntheticSpec) -> Result<Vec<(Scenario, SyntheticLabel)>> {
    spec.validate()?;
    (0..spec.scenario_count).into_par_iter().map(|i| generate_one(spec, i)).collect()
}

fn observe(rng: &mut ChaCha8Rng, world: &Frame, noise: Option<&Normal<f64>>, p: Waypoint) -> Waypoint {
    let p = world.to_world(p);
    match noise {
        Some(n) => Waypoint::new(p.x + n.sample(rng), p.y + n.sample(rng)),
        None => p,
    }
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<(Scenario, SyntheticLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let m = spec.history_len;
    let frames = m + spec.future_len;
    let weights: Vec<f64> = MotionMode::ALL.iter().map(|md| spec.mode_mix.weight(*md)).collect();
    let mode = MotionMode::ALL[sample_index(&mut rng, &weights)];
    let speed_draw = |rng: &mut ChaCha8Rng| {
        if spec.speed_max > spec.speed_min {
            rng.random_range(spec.speed_min..=spec.speed_max)
        } else {
            spec.speed_min
        }
    };
    let speed = speed_draw(&mut rng);
    let step = speed * DEFAULT_DT;
    let now = step * (m - 1) as f64;
    let horizon = step * frames as f64;
    let radius = rng.random_range(8.0..=15.0);

    // Local-frame centerlines. `driven` is followed by the target; `lanes` are every centerline
    // drawn on the map; `branches` are the futures the target could have taken.
    let mut branch = None;
    let (driven, lanes, branches): (usize, Vec<Path>, Vec<usize>) = match mode {
        MotionMode::Straight => (0, vec![Path::build(&[Piece::Straight(horizon + RUN_OUT)])], vec![0]),
        MotionMode::TurnLeft | MotionMode::TurnRight => {
            let sign = if mode == MotionMode::TurnLeft { 1.0 } else { -1.0 };
            let lead = (now + rng.random_range(-10.0..=15.0)).max(0.0);
            let p = Path::build(&[Piece::Straight(lead), Piece::Arc(radius, sign * PI / 2.0), Piece::Straight(RUN_OUT)]);
            (0, vec![p], vec![0])
        }
        MotionMode::LaneChange => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let r = 40.0;
            let a = (1.0 - LANE_WIDTH / (2.0 * r)).acos();
            let lead = (now + rng.random_range(-8.0..=12.0)).max(0.0);
            let p = Path::build(&[
                Piece::Straight(lead),
                Piece::Arc(r, sign * a),
                Piece::Arc(r, -sign * a),
                Piece::Straight(RUN_OUT),
            ]);
            let original = Path::build(&[Piece::Straight(p.length())]);
            (0, vec![p, original], vec![0])
        }
        MotionMode::Junction => {
            let lead = now + rng.random_range(0.0..=6.0);
            let probs: Vec<f64> = spec.junction_branches.iter().map(|b| b.prob).collect();
            let chosen = sample_index(&mut rng, &probs);
            branch = Some(chosen);
            let paths: Vec<Path> = spec
                .junction_branches
                .iter()
                .map(|b| match b.turn_deg.to_radians() {
                    0.0 => Path::build(&[Piece::Straight(lead + radius * PI / 2.0 + RUN_OUT)]),
                    turn => Path::build(&[Piece::Straight(lead), Piece::Arc(radius, turn), Piece::Straight(RUN_OUT)]),
                })
                .collect();
            let all = (0..paths.len()).collect();
            (chosen, paths, all)
        }
    };

    let world = Frame::new(
        Waypoint::new(rng.random_range(-100.0..=100.0), rng.random_range(-100.0..=100.0)),
        rng.random_range(-PI..PI),
    );
    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let noise = (spec.noise_sigma > 0.0).then_some(&normal);

    let target: Vec<Waypoint> =
        (0..frames).map(|i| observe(&mut rng, &world, noise, lanes[driven].at(step * i as f64))).collect();

    // a vehicle in an adjacent lane, same direction
    let av_side = if rng.random::<bool>() { LANE_WIDTH } else { -LANE_WIDTH };
    let av_speed = speed_draw(&mut rng);
    let av_start = rng.random_range(-15.0..=15.0);
    let av: Vec<Waypoint> = (0..frames)
        .map(|i| observe(&mut rng, &world, noise, Waypoint::new(av_start + av_speed * DEFAULT_DT * i as f64, av_side)))
        .collect();
    // oncoming traffic that shows up part-way through the history
    let other_start = rng.random_range(0..=m / 2);
    let other_x = rng.random_range(30.0..=70.0);
    let other_speed = speed_draw(&mut rng);
    let other: Vec<Option<Waypoint>> = (0..frames)
        .map(|i| {
            let p = Waypoint::new(other_x - other_speed * DEFAULT_DT * i as f64, -2.0 * av_side);
            (i >= other_start).then(|| observe(&mut rng, &world, noise, p))
        })
        .collect();

    let reach = horizon + 40.0;
    let map_polylines = lanes
        .iter()
        .map(|p| {
            let pts: Vec<Waypoint> =
                p.polyline(MAP_SPACING).into_iter().take_while(|q| q.norm() <= reach).map(|q| world.to_world(q)).collect();
            Trajectory::new(pts, DEFAULT_DT)
        })
        .collect::<Result<Vec<_>>>()?;
    let branch_futures = branches
        .iter()
        .map(|&b| Trajectory::new((m..frames).map(|i| world.to_world(lanes[b].at(step * i as f64))).collect(), DEFAULT_DT))
        .collect::<Result<Vec<_>>>()?;

    let agents = vec![
        AgentTrack::observed("agent", ObjectType::Agent, target),
        AgentTrack::observed("av", ObjectType::Av, av),
        AgentTrack::from_observations("other", ObjectType::Other, &other)?,
    ];
    let mut scenario = Scenario::new(format!("syn-{}-{index:05}", spec.seed), agents, map_polylines, m, spec.future_len)?;
    scenario.city = "SYN".into();
    scenario.branch_futures = branch_futures;
    Ok((scenario, SyntheticLabel { mode, branch }))
}
