//! Scenarios (multi-agent tracks plus map) and the agent-centric model windows cut from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{to_frame, Frame, Trajectory, Waypoint, DEFAULT_DT};

/// Observed frames before and including `t = 0`.
pub const HISTORY_LEN: usize = 20;
/// Frames to forecast after `t = 0`.
pub const FUTURE_LEN: usize = 30;
pub const TOTAL_FRAMES: usize = HISTORY_LEN + FUTURE_LEN;

/// Displacements shorter than this leave the heading undefined; the frame then uses rotation 0.
pub const MIN_HEADING_DISPLACEMENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectType {
    Agent,
    Av,
    Other,
}

impl ObjectType {
    /// The tag used in Argoverse-style CSV files.
    pub fn csv_tag(self) -> &'static str {
        match self {
            ObjectType::Agent => "AGENT",
            ObjectType::Av => "AV",
            ObjectType::Other => "OTHERS",
        }
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.csv_tag())
    }
}

impl FromStr for ObjectType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "AGENT" | "agent" => Ok(ObjectType::Agent),
            "AV" | "av" => Ok(ObjectType::Av),
            "OTHERS" | "OTHER" | "others" | "other" => Ok(ObjectType::Other),
            other => Err(Error::Invalid(format!("unknown object type {other:?}"))),
        }
    }
}

/// One track sampled on the scenario's frame grid.
///
/// Frames where the object was not observed hold a copy of the nearest earlier observation
/// (or the first observation, before the track starts) and are flagged in `present`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub track_id: String,
    pub object_type: ObjectType,
    pub positions: Vec<Waypoint>,
    pub present: Vec<bool>,
}

impl AgentTrack {
    /// Builds a track from sparse observations, padding gaps.
    pub fn from_observations(
        track_id: impl Into<String>,
        object_type: ObjectType,
        observations: &[Option<Waypoint>],
    ) -> Result<Self> {
        let track_id = track_id.into();
        let first = observations
            .iter()
            .flatten()
            .next()
            .copied()
            .ok_or_else(|| Error::Invalid(format!("track {track_id} has no observations")))?;
        let mut last = first;
        let mut positions = Vec::with_capacity(observations.len());
        let mut present = Vec::with_capacity(observations.len());
        for obs in observations {
            match obs {
                Some(p) => {
                    last = *p;
                    positions.push(*p);
                    present.push(true);
                }
                None => {
                    positions.push(last);
                    present.push(false);
                }
            }
        }
        Ok(Self { track_id, object_type, positions, present })
    }

    /// A fully observed track.
    pub fn observed(
        track_id: impl Into<String>,
        object_type: ObjectType,
        positions: Vec<Waypoint>,
    ) -> Self {
        let present = vec![true; positions.len()];
        Self { track_id: track_id.into(), object_type, positions, present }
    }

    pub fn is_present(&self, frame: usize) -> bool {
        self.present.get(frame).copied().unwrap_or(false)
    }

    /// Number of leading frames observed without a gap.
    pub fn observed_prefix(&self) -> usize {
        self.present.iter().take_while(|&&p| p).count()
    }
}

/// One prediction problem in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    #[serde(default)]
    pub city: String,
    pub agents: Vec<AgentTrack>,
    /// Lane centerlines in world coordinates.
    #[serde(default)]
    pub map_polylines: Vec<Trajectory>,
    pub target_track_id: String,
    pub history_len: usize,
    pub future_len: usize,
    /// Alternative futures the target could have taken (world frame), when the generator knows
    /// them. Empty for recorded data.
    #[serde(default)]
    pub branch_futures: Vec<Trajectory>,
}

impl Scenario {
    /// Validates and assembles a scenario.
    pub fn new(
        scenario_id: impl Into<String>,
        agents: Vec<AgentTrack>,
        map_polylines: Vec<Trajectory>,
        history_len: usize,
        future_len: usize,
    ) -> Result<Self> {
        let scenario_id = scenario_id.into();
        let target_track_id = {
            let mut targets = agents.iter().filter(|a| a.object_type == ObjectType::Agent);
            let target = targets.next().ok_or_else(|| {
                Error::Invalid(format!("scenario {scenario_id} has no agent track"))
            })?;
            if targets.next().is_some() {
                return Err(Error::Invalid(format!(
                    "scenario {scenario_id} has more than one agent track"
                )));
            }
            target.track_id.clone()
        };
        let scenario = Self {
            scenario_id,
            city: String::new(),
            agents,
            map_polylines,
            target_track_id,
            history_len,
            future_len,
            branch_futures: Vec::new(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len < 2 {
            return Err(Error::Invalid("history must span at least two frames".into()));
        }
        let frames = self.total_frames();
        for a in &self.agents {
            if a.positions.len() != frames || a.present.len() != frames {
                return Err(Error::Invalid(format!(
                    "track {} has {} frames, expected {frames}",
                    a.track_id,
                    a.positions.len()
                )));
            }
            if a.positions.iter().any(|p| !p.is_finite()) {
                return Err(Error::Invalid(format!("track {} has non-finite positions", a.track_id)));
            }
        }
        if frames < self.history_len {
            return Err(Error::Invalid(format!(
                "scenario {} has {frames} frames, fewer than the {} history frames",
                self.scenario_id, self.history_len
            )));
        }
        let agents = self.agents.iter().filter(|a| a.object_type == ObjectType::Agent).count();
        if agents != 1 {
            return Err(Error::Invalid(format!(
                "scenario {} has {agents} agent tracks",
                self.scenario_id
            )));
        }
        let target = self.target()?;
        if target.object_type != ObjectType::Agent {
            return Err(Error::Invalid("target track must be the agent".into()));
        }
        for frame in [self.history_len - 2, self.history_len - 1] {
            if !target.is_present(frame) {
                return Err(Error::MissingTargetFrame { track_id: target.track_id.clone(), frame });
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.agents.first().map_or(0, |a| a.positions.len())
    }

    pub fn target(&self) -> Result<&AgentTrack> {
        self.agents
            .iter()
            .find(|a| a.track_id == self.target_track_id)
            .ok_or_else(|| Error::Invalid(format!("target track {} missing", self.target_track_id)))
    }

    /// Index of `t = 0` on the frame grid.
    pub fn current_frame(&self) -> usize {
        self.history_len - 1
    }

    /// Ground-truth future of the target in world coordinates, if the scenario carries one.
    pub fn future(&self) -> Result<Option<Trajectory>> {
        let target = self.target()?;
        let start = self.history_len;
        let end = start + self.future_len;
        if self.future_len == 0 || target.positions.len() < end {
            return Ok(None);
        }
        Trajectory::new(target.positions[start..end].to_vec(), DEFAULT_DT).map(Some)
    }

    /// Applies `f` to every coordinate the scenario holds.
    pub fn map_points(&self, f: impl Fn(Waypoint) -> Waypoint) -> Result<Scenario> {
        let mut out = self.clone();
        for a in &mut out.agents {
            for p in &mut a.positions {
                *p = f(*p);
            }
        }
        out.map_polylines =
            self.map_polylines.iter().map(|t| t.map_points(&f)).collect::<Result<_>>()?;
        out.branch_futures =
            self.branch_futures.iter().map(|t| t.map_points(&f)).collect::<Result<_>>()?;
        Ok(out)
    }
}

/// Agent frame at `t = 0`: origin at the target's current position, +x along its last displacement.
pub fn agent_frame(scenario: &Scenario) -> Result<Frame> {
    agent_frame_at(scenario, scenario.current_frame())
}

/// Agent frame anchored at an arbitrary frame index (used for time-shifted windows).
pub fn agent_frame_at(scenario: &Scenario, frame: usize) -> Result<Frame> {
    let target = scenario.target()?;
    if frame == 0 {
        return Err(Error::MissingTargetFrame { track_id: target.track_id.clone(), frame });
    }
    for f in [frame - 1, frame] {
        if !target.is_present(f) {
            return Err(Error::MissingTargetFrame { track_id: target.track_id.clone(), frame: f });
        }
    }
    let current = target.positions[frame];
    let step = current - target.positions[frame - 1];
    let rotation = if step.norm() < MIN_HEADING_DISPLACEMENT { 0.0 } else { -step.y.atan2(step.x) };
    Ok(Frame::new(current, rotation))
}

/// Everything the predictor sees for one forecast, expressed in the window's agent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub scenario_id: String,
    /// World-to-window transform.
    pub frame: Frame,
    /// Frame index of the window's `t = 0`.
    pub end_frame: usize,
    pub history: Trajectory,
    pub history_present: Vec<bool>,
    pub neighbors: Vec<(Trajectory, Vec<bool>)>,
    pub map: Vec<Trajectory>,
    /// Target future over the `future_len` frames after `end_frame`, when available.
    pub future: Option<Trajectory>,
}

impl Window {
    /// Cuts the `history_len` frames ending at `end_frame` and expresses them in the agent frame
    /// at that point, rotated by an extra `heading_offset` radians.
    pub fn cut(
        scenario: &Scenario,
        end_frame: usize,
        heading_offset: f64,
        with_future: bool,
    ) -> Result<Self> {
        let m = scenario.history_len;
        let target = scenario.target()?;
        if end_frame + 1 < m || end_frame >= scenario.total_frames() {
            return Err(Error::InsufficientFrames {
                scenario_id: scenario.scenario_id.clone(),
                needed: end_frame + 1,
                available: scenario.total_frames(),
            });
        }
        let base = agent_frame_at(scenario, end_frame)?;
        let frame = Frame::new(base.origin, base.rotation + heading_offset);
        let start = end_frame + 1 - m;
        let cut = |track: &AgentTrack| -> Result<(Trajectory, Vec<bool>)> {
            let t = Trajectory::new(track.positions[start..=end_frame].to_vec(), DEFAULT_DT)?;
            Ok((to_frame(&t, &frame), track.present[start..=end_frame].to_vec()))
        };
        let (history, history_present) = cut(target)?;
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let neighbors = scenario
            .agents
            .iter()
            .filter(|a| a.track_id != scenario.target_track_id)
            .filter(|a| a.present[start..=end_frame].iter().any(|&p| p))
            .map(cut)
            .collect::<Result<Vec<_>>>()?;
        let map = scenario.map_polylines.iter().map(|p| to_frame(p, &frame)).collect();
        let future_end = end_frame + 1 + scenario.future_len;
        let future = if with_future && scenario.future_len > 0 && future_end <= scenario.total_frames()
        {
            let t = Trajectory::new(
                target.positions[end_frame + 1..future_end].to_vec(),
                DEFAULT_DT,
            )?;
            Some(to_frame(&t, &frame))
        } else {
            None
        };
        Ok(Self {
            scenario_id: scenario.scenario_id.clone(),
            frame,
            end_frame,
            history,
            history_present,
            neighbors,
            map,
            future,
        })
    }

    /// The standard forecasting window ending at `t = 0`.
    pub fn current(scenario: &Scenario) -> Result<Self> {
        Self::cut(scenario, scenario.current_frame(), 0.0, true)
    }
}
