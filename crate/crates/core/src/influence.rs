//! User-steered influence circles and the per-step action arbitration.
//!
//! Each circle contributes a preference toward itself:
//!
//! ```text
//! w_loc = max(0, (reach - d) / reach) ^ distance_exponent
//! w_spd = max(DELTA, 1 + inertia_gain * x_dot * sign(cx - x) / (1 + |x_dot|))
//! res   = sqrt(direction * w_loc) * w_spd * intensity
//! ```
//!
//! where `direction` is 1 on the action moving the cart toward the circle and
//! `DELTA` on the other. The two contributions are summed onto a neutral floor,
//! and the action is the argmax of the elementwise product with the model
//! preference, unless the epsilon draw fires.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::CartpoleState;
use crate::policy::{Action, PreferenceVector};

/// Off-direction component of a circle's direction vector, and the lower bound
/// of the speed weight.
pub const DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleId {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub id: CircleId,
    pub center_x: f64,
    pub center_y: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSet {
    pub left: Influence,
    pub right: Influence,
}

impl InfluenceSet {
    pub fn get(&self, id: CircleId) -> &Influence {
        match id {
            CircleId::Left => &self.left,
            CircleId::Right => &self.right,
        }
    }

    fn get_mut(&mut self, id: CircleId) -> &mut Influence {
        match id {
            CircleId::Left => &mut self.left,
            CircleId::Right => &mut self.right,
        }
    }

    /// Reflection through `x = 0`: positions negated, circles swapped.
    pub fn mirrored(&self) -> Self {
        let flip = |c: &Influence, id| Influence {
            id,
            center_x: -c.center_x,
            ..*c
        };
        Self {
            left: flip(&self.right, CircleId::Left),
            right: flip(&self.left, CircleId::Right),
        }
    }

    pub fn is_within(&self, bounds: &ScreenBounds, intensity_max: f64) -> bool {
        [&self.left, &self.right].iter().all(|c| {
            (0.0..=intensity_max).contains(&c.intensity)
                && (bounds.x_min..=bounds.x_max).contains(&c.center_x)
                && (bounds.y_min..=bounds.y_max).contains(&c.center_y)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl ScreenBounds {
    pub fn for_track(x_limit: f64) -> Self {
        Self {
            x_min: -x_limit,
            x_max: x_limit,
            y_min: -0.5,
            y_max: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationConfig {
    /// Probability of a uniformly random action on each step.
    pub epsilon: f64,
    /// Distance (m) at which a circle's location weight reaches zero.
    pub reach_radius: f64,
    pub distance_exponent: f64,
    pub inertia_gain: f64,
    /// Baseline added to both components of the influence vector. With both
    /// circles at zero intensity the vector is exactly `(floor, floor)`.
    pub neutral_floor: f64,
}

/// Calibrated values; see `analytics::calibrate`.
impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            reach_radius: 2.4414827039696103,
            distance_exponent: 1.3675191574771164,
            inertia_gain: 0.3963363423618772,
            neutral_floor: 0.027959697860803535,
        }
    }
}

impl ArbitrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(
                "arbitration.epsilon",
                format!("must lie in [0, 1], got {}", self.epsilon),
            ));
        }
        for (field, v) in [
            ("arbitration.reach_radius", self.reach_radius),
            ("arbitration.distance_exponent", self.distance_exponent),
            ("arbitration.neutral_floor", self.neutral_floor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    field,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if !(self.inertia_gain.is_finite() && self.inertia_gain >= 0.0) {
            return Err(Error::config(
                "arbitration.inertia_gain",
                format!("must be finite and >= 0, got {}", self.inertia_gain),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Model,
    Influence,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub action: Action,
    pub source: ActionSource,
    pub m: PreferenceVector,
    pub inf: PreferenceVector,
}

fn circle_contribution(
    circle: &Influence,
    state: &CartpoleState,
    config: &ArbitrationConfig,
) -> PreferenceVector {
    let dx = circle.center_x - state.x;
    let distance = dx.hypot(circle.center_y);
    let w_loc = ((config.reach_radius - distance) / config.reach_radius)
        .max(0.0)
        .powf(config.distance_exponent);
    if w_loc == 0.0 || circle.intensity == 0.0 {
        return PreferenceVector::new(0.0, 0.0);
    }
    let toward = dx.signum();
    let direction = if dx > 0.0 {
        PreferenceVector::new(DELTA, 1.0)
    } else if dx < 0.0 {
        PreferenceVector::new(1.0, DELTA)
    } else {
        PreferenceVector::new(DELTA, DELTA)
    };
    let w_spd =
        (1.0 + config.inertia_gain * state.x_dot * toward / (1.0 + state.x_dot.abs())).max(DELTA);
    let scale = w_spd * circle.intensity;
    PreferenceVector::new(
        (direction.left * w_loc).sqrt() * scale,
        (direction.right * w_loc).sqrt() * scale,
    )
}

/// The influences' preference over the two actions for the current state.
pub fn influence_vector(
    influences: &InfluenceSet,
    state: &CartpoleState,
    config: &ArbitrationConfig,
) -> PreferenceVector {
    let a = circle_contribution(&influences.left, state, config);
    let b = circle_contribution(&influences.right, state, config);
    // Circles are summed before the floor so the mirrored configuration
    // produces the swapped vector bit-for-bit.
    PreferenceVector::new(
        config.neutral_floor + (a.left + b.left),
        config.neutral_floor + (a.right + b.right),
    )
}

/// Picks the action for one step. Consumes one uniform draw from `rng`, plus
/// one more when the random branch fires.
pub fn arbitrate<R: Rng + ?Sized>(
    m: PreferenceVector,
    inf: PreferenceVector,
    config: &ArbitrationConfig,
    rng: &mut R,
) -> ActionDecision {
    let draw: f64 = rng.gen();
    if draw < config.epsilon {
        let action = if rng.gen::<bool>() {
            Action::Right
        } else {
            Action::Left
        };
        return ActionDecision {
            action,
            source: ActionSource::Stochastic,
            m,
            inf,
        };
    }
    let action = m.elementwise(&inf).argmax();
    let source = if action == m.argmax() {
        ActionSource::Model
    } else {
        ActionSource::Influence
    };
    ActionDecision {
        action,
        source,
        m,
        inf,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Grow,
    Shrink,
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::Grow,
        CommandKind::Shrink,
        CommandKind::MoveLeft,
        CommandKind::MoveRight,
        CommandKind::MoveUp,
        CommandKind::MoveDown,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub circle: CircleId,
    pub op: CommandKind,
}

impl Command {
    pub const fn new(circle: CircleId, op: CommandKind) -> Self {
        Self { circle, op }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandSteps {
    pub intensity_step: f64,
    pub position_step: f64,
    pub intensity_max: f64,
}

impl Default for CommandSteps {
    fn default() -> Self {
        Self {
            intensity_step: 0.05,
            position_step: 0.1,
            intensity_max: 1.0,
        }
    }
}

/// Nudges one circle. Out-of-range results are clamped, never rejected.
pub fn apply_command(
    influences: &InfluenceSet,
    command: Command,
    steps: &CommandSteps,
    bounds: &ScreenBounds,
) -> InfluenceSet {
    let mut out = *influences;
    let c = out.get_mut(command.circle);
    match command.op {
        CommandKind::Grow => c.intensity += steps.intensity_step,
        CommandKind::Shrink => c.intensity -= steps.intensity_step,
        CommandKind::MoveLeft => c.center_x -= steps.position_step,
        CommandKind::MoveRight => c.center_x += steps.position_step,
        CommandKind::MoveUp => c.center_y += steps.position_step,
        CommandKind::MoveDown => c.center_y -= steps.position_step,
    }
    c.intensity = c.intensity.clamp(0.0, steps.intensity_max);
    c.center_x = c.center_x.clamp(bounds.x_min, bounds.x_max);
    c.center_y = c.center_y.clamp(bounds.y_min, bounds.y_max);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetSize {
    None,
    Small,
    Medium,
    Big,
}

impl PresetSize {
    pub const ALL: [PresetSize; 4] = [
        PresetSize::None,
        PresetSize::Small,
        PresetSize::Medium,
        PresetSize::Big,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetSize::None => "none",
            PresetSize::Small => "small",
            PresetSize::Medium => "medium",
            PresetSize::Big => "big",
        }
    }
}

impl std::str::FromStr for PresetSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PresetSize::None),
            "small" => Ok(PresetSize::Small),
            "medium" => Ok(PresetSize::Medium),
            "big" => Ok(PresetSize::Big),
            other => Err(Error::config(
                "preset",
                format!("unknown preset '{other}' (none|small|medium|big)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetIntensities {
    pub small: f64,
    pub medium: f64,
    pub big: f64,
    /// Circle centres sit at `-/+ x_fraction * x_limit`.
    pub x_fraction: f64,
    pub height: f64,
}

impl Default for PresetIntensities {
    fn default() -> Self {
        Self {
            small: 0.125,
            medium: 0.25,
            big: 1.0,
            x_fraction: 0.75,
            height: 0.3,
        }
    }
}

impl PresetIntensities {
    pub fn intensity(&self, size: PresetSize) -> f64 {
        match size {
            PresetSize::None => 0.0,
            PresetSize::Small => self.small,
            PresetSize::Medium => self.medium,
            PresetSize::Big => self.big,
        }
    }
}

/// The canonical symmetric circle layout for `size`.
pub fn preset(size: PresetSize, presets: &PresetIntensities, x_limit: f64) -> InfluenceSet {
    let intensity = presets.intensity(size);
    let offset = presets.x_fraction * x_limit;
    InfluenceSet {
        left: Influence {
            id: CircleId::Left,
            center_x: -offset,
            center_y: presets.height,
            intensity,
        },
        right: Influence {
            id: CircleId::Right,
            center_x: offset,
            center_y: presets.height,
            intensity,
        },
    }
}
