//! Planar primitives: waypoints, fixed-rate trajectories and rigid frames.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds between successive frames (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

/// A 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub const ORIGIN: Waypoint = Waypoint { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Waypoint) -> f64 {
        (*self - *other).norm()
    }

    /// Rotates counter-clockwise about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Waypoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Waypoint> for [f64; 2] {
    fn from(p: Waypoint) -> Self {
        [p.x, p.y]
    }
}

impl Add for Waypoint {
    type Output = Waypoint;
    fn add(self, rhs: Waypoint) -> Waypoint {
        Waypoint::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Waypoint {
    type Output = Waypoint;
    fn sub(self, rhs: Waypoint) -> Waypoint {
        Waypoint::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Waypoint {
    type Output = Waypoint;
    fn mul(self, rhs: f64) -> Waypoint {
        Waypoint::new(self.x * rhs, self.y * rhs)
    }
}

/// Ordered waypoints sampled every `dt` seconds.
///
/// Always non-empty with finite coordinates and a positive step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    points: Vec<Waypoint>,
    dt: f64,
}

#[derive(Deserialize)]
struct RawTrajectory {
    points: Vec<Waypoint>,
    dt: f64,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;
    fn try_from(raw: RawTrajectory) -> Result<Self> {
        Trajectory::new(raw.points, raw.dt)
    }
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>, dt: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("trajectory must have at least one waypoint".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Invalid(format!("trajectory step must be positive, got {dt}")));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Invalid(format!("non-finite waypoint at index {i}")));
        }
        Ok(Self { points, dt })
    }

    /// Builds a 10 Hz trajectory from `(x, y)` pairs.
    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(xy.iter().map(|&(x, y)| Waypoint::new(x, y)).collect(), DEFAULT_DT)
    }

    /// Builds a trajectory from interleaved `x0, y0, x1, y1, ...` values.
    pub fn from_flat(flat: &[f64], dt: f64) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Invalid("odd number of coordinates".into()));
        }
        Self::new(flat.chunks_exact(2).map(|c| Waypoint::new(c[0], c[1])).collect(), dt)
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Never true; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Waypoint {
        self.points[0]
    }

    pub fn last(&self) -> Waypoint {
        self.points[self.points.len() - 1]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn to_array(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|&p| p.into()).collect()
    }

    /// Applies `f` to every waypoint, keeping `dt`.
    pub fn map_points(&self, f: impl Fn(Waypoint) -> Waypoint) -> Result<Self> {
        Self::new(self.points.iter().map(|&p| f(p)).collect(), self.dt)
    }

    pub fn translated(&self, offset: Waypoint) -> Self {
        Self { points: self.points.iter().map(|&p| p + offset).collect(), dt: self.dt }
    }

    /// Steps `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Invalid(format!(
                "slice {start}..{end} out of range for length {}",
                self.len()
            )));
        }
        Ok(Self { points: self.points[start..end].to_vec(), dt: self.dt })
    }
}

/// Normalizes an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A scenario-local coordinate system.
///
/// `to_local` subtracts `origin` then rotates by `rotation`; `to_world` undoes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Waypoint,
    pub rotation: f64,
}

impl Default for Frame {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Frame {
    pub const IDENTITY: Frame = Frame { origin: Waypoint::ORIGIN, rotation: 0.0 };

    pub fn new(origin: Waypoint, rotation: f64) -> Self {
        Self { origin, rotation: wrap_angle(rotation) }
    }

    pub fn to_local(&self, p: Waypoint) -> Waypoint {
        (p - self.origin).rotated(self.rotation)
    }

    pub fn to_world(&self, p: Waypoint) -> Waypoint {
        p.rotated(-self.rotation) + self.origin
    }

    /// Re-expresses a point given in `self` coordinates in `other` coordinates.
    pub fn reexpress(&self, other: &Frame, p: Waypoint) -> Waypoint {
        other.to_local(self.to_world(p))
    }
}

/// Expresses a world-frame trajectory in `frame` coordinates.
pub fn to_frame(traj: &Trajectory, frame: &Frame) -> Trajectory {
    Trajectory { points: traj.points.iter().map(|&p| frame.to_local(p)).collect(), dt: traj.dt }
}

/// Inverse of [`to_frame`].
pub fn from_frame(traj: &Trajectory, frame: &Frame) -> Trajectory {
    Trajectory { points: traj.points.iter().map(|&p| frame.to_world(p)).collect(), dt: traj.dt }
}
