//! Training-time scene augmentation: mirror flips, global scaling and heading jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Waypoint;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Half-width of the uniform heading disturbance, in degrees. Zero disables it.
    pub max_heading_jitter_deg: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { flip_prob: 0.5, scale_min: 0.8, scale_max: 1.25, max_heading_jitter_deg: 0.0 }
    }
}

impl AugmentSpec {
    /// No-op augmentation.
    pub const NONE: AugmentSpec =
        AugmentSpec { flip_prob: 0.0, scale_min: 1.0, scale_max: 1.0, max_heading_jitter_deg: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Invalid(format!("flip probability {} not in [0, 1]", self.flip_prob)));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::Invalid(format!(
                "scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            )));
        }
        if !(self.max_heading_jitter_deg >= 0.0 && self.max_heading_jitter_deg < 180.0) {
            return Err(Error::Invalid("heading jitter must be in [0, 180) degrees".into()));
        }
        Ok(())
    }

    /// Samples one concrete augmentation; identical seeds give identical draws.
    pub fn draw(&self, seed: u64) -> AugmentDraw {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random::<f64>() < self.flip_prob;
        let scale = if self.scale_max > self.scale_min {
            rng.random_range(self.scale_min..=self.scale_max)
        } else {
            self.scale_min
        };
        let heading_offset = if self.max_heading_jitter_deg > 0.0 {
            let h = self.max_heading_jitter_deg.to_radians();
            rng.random_range(-h..=h)
        } else {
            0.0
        };
        AugmentDraw { flip, scale, heading_offset }
    }
}

/// A sampled augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub flip: bool,
    pub scale: f64,
    /// Extra rotation added to the agent frame when windows are cut.
    pub heading_offset: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw { flip: false, scale: 1.0, heading_offset: 0.0 };

    /// Reflects about the x-axis (if drawn) then scales about the origin.
    pub fn apply(&self, p: Waypoint) -> Waypoint {
        let y = if self.flip { -p.y } else { p.y };
        Waypoint::new(p.x * self.scale, y * self.scale)
    }

    /// Maps a point expressed in the original scenario's agent frame to the agent frame of the
    /// augmented scenario's window.
    pub fn apply_local(&self, p: Waypoint) -> Waypoint {
        self.apply(p).rotated(self.heading_offset)
    }
}

/// Flips and scales every coordinate of `scenario` according to a draw from `spec`.
///
/// The heading disturbance is not a property of the world coordinates; it is returned in the
/// draw and applied when windows are cut.
pub fn augment_with_draw(
    scenario: &Scenario,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<(Scenario, AugmentDraw)> {
    spec.validate()?;
    let draw = spec.draw(seed);
    Ok((scenario.map_points(|p| draw.apply(p))?, draw))
}

pub fn augment(scenario: &Scenario, spec: &AugmentSpec, seed: u64) -> Result<Scenario> {
    augment_with_draw(scenario, spec, seed).map(|(s, _)| s)
}
