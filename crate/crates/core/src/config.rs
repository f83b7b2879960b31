//! The repository configuration file: every tunable of the simulation in one
//! human-readable JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{
    ArbitrationConfig, CommandSteps, PresetIntensities, PresetSize, ScreenBounds,
};
use crate::physics::PhysicsParams;
use crate::policy::PolicySpec;
use crate::rules::{default_levels, LevelSpec};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Environment variable naming the config file when `--config` is not given.
pub const CONFIG_ENV: &str = "SLALOM_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateParams {
    /// Seconds of cumulative in-zone time needed to pass a gate.
    pub pass_time: f64,
    /// Gate lines are drawn from `[-line_fraction, line_fraction] * x_limit`.
    pub line_fraction: f64,
    /// Minimum correct-zone width as a fraction of `x_limit`.
    pub min_zone_fraction: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            pass_time: 1.5,
            line_fraction: 0.5,
            min_zone_fraction: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionParams {
    pub hands_free_games: u32,
    /// Circles shown during the hands-free demo.
    pub demo_preset: PresetSize,
    /// Circles the influencer starts from when play begins.
    pub play_preset: PresetSize,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            hands_free_games: 3,
            demo_preset: PresetSize::Medium,
            play_preset: PresetSize::Medium,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeParams {
    /// Trials are cut off here and reported as `capped`.
    pub cap_seconds: f64,
    pub trials: u32,
    /// Trial `i` runs with seeds derived from `base_seed + i`.
    pub base_seed: u64,
}

impl Default for LifetimeParams {
    fn default() -> Self {
        Self {
            cap_seconds: 120.0,
            trials: 10,
            base_seed: 0,
        }
    }
}

/// Provenance of the calibrated values in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationStamp {
    pub search_seed: u64,
    /// Candidates evaluated before the winner was found.
    pub evaluations: u32,
    pub targets_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub format_version: u32,
    pub physics: PhysicsParams,
    pub policy: PolicySpec,
    pub arbitration: ArbitrationConfig,
    pub presets: PresetIntensities,
    pub commands: CommandSteps,
    pub gates: GateParams,
    pub levels: Vec<LevelSpec>,
    pub session: SessionParams,
    pub lifetime: LifetimeParams,
    #[serde(default)]
    pub calibration: Option<CalibrationStamp>,
}

/// Output of `slalom calibrate --search-seed 1` against the default physics.
fn calibrated_policy() -> PolicySpec {
    PolicySpec::AnalyticBalancer {
        k_theta: 11.336062136115846,
        k_theta_dot: 2.82438161260479,
        sharpness: 0.1722546646237532,
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            physics: PhysicsParams::default(),
            policy: calibrated_policy(),
            arbitration: ArbitrationConfig::default(),
            presets: PresetIntensities::default(),
            commands: CommandSteps::default(),
            gates: GateParams::default(),
            levels: default_levels(),
            session: SessionParams::default(),
            lifetime: LifetimeParams::default(),
            calibration: Some(CalibrationStamp {
                search_seed: 1,
                evaluations: 746,
                targets_met: true,
            }),
        }
    }
}

impl Config {
    pub fn bounds(&self) -> ScreenBounds {
        ScreenBounds::for_track(self.physics.x_limit)
    }

    pub fn level(&self, level: u32) -> Result<&LevelSpec> {
        self.levels
            .iter()
            .find(|l| l.level == level)
            .ok_or_else(|| Error::config("levels", format!("no level {level} defined")))
    }

    pub fn require_calibrated(&self) -> Result<&CalibrationStamp> {
        match &self.calibration {
            Some(stamp) if stamp.targets_met => Ok(stamp),
            Some(_) => Err(Error::Uncalibrated(
                "the stored calibration did not meet its targets".into(),
            )),
            None => Err(Error::Uncalibrated(
                "run `slalom calibrate` to produce a calibrated config".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::config(
                "format_version",
                format!(
                    "unsupported config format {} (expected {CONFIG_FORMAT_VERSION})",
                    self.format_version
                ),
            ));
        }
        self.physics.validate()?;
        self.policy.validate()?;
        self.arbitration.validate()?;

        let p = &self.presets;
        for (field, v) in [
            ("presets.small", p.small),
            ("presets.medium", p.medium),
            ("presets.big", p.big),
        ] {
            if !(v.is_finite() && (0.0..=self.commands.intensity_max).contains(&v)) {
                return Err(Error::config(
                    field,
                    format!("must lie in [0, {}], got {v}", self.commands.intensity_max),
                ));
            }
        }
        if !(p.x_fraction.is_finite() && p.x_fraction > 0.0 && p.x_fraction <= 1.0) {
            return Err(Error::config("presets.x_fraction", "must lie in (0, 1]"));
        }
        let bounds = self.bounds();
        if !(bounds.y_min..=bounds.y_max).contains(&p.height) {
            return Err(Error::config(
                "presets.height",
                "must lie within the screen bounds",
            ));
        }

        let c = &self.commands;
        for (field, v) in [
            ("commands.intensity_step", c.intensity_step),
            ("commands.position_step", c.position_step),
            ("commands.intensity_max", c.intensity_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    field,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }

        let g = &self.gates;
        if !(g.pass_time.is_finite() && g.pass_time > 0.0) {
            return Err(Error::config(
                "gates.pass_time",
                "must be positive and finite",
            ));
        }
        if !(g.line_fraction.is_finite() && (0.0..1.0).contains(&g.line_fraction)) {
            return Err(Error::config("gates.line_fraction", "must lie in [0, 1)"));
        }
        if !(g.min_zone_fraction.is_finite()
            && g.min_zone_fraction > 0.0
            && g.min_zone_fraction <= 1.0 + g.line_fraction)
        {
            return Err(Error::config(
                "gates.min_zone_fraction",
                "must lie in (0, 1 + line_fraction]",
            ));
        }

        if self.levels.is_empty() {
            return Err(Error::config("levels", "at least one level is required"));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.level != i as u32 + 1 {
                return Err(Error::config(
                    format!("levels[{i}].level"),
                    format!(
                        "levels must be numbered 1, 2, ... in order, got {}",
                        level.level
                    ),
                ));
            }
            if level.gate_count == 0 {
                return Err(Error::config(
                    format!("levels[{i}].gate_count"),
                    "must be at least 1",
                ));
            }
            level
                .disturbances
                .validate(&format!("levels[{i}].disturbances"))?;
        }

        let l = &self.lifetime;
        if !(l.cap_seconds.is_finite() && l.cap_seconds > 0.0) {
            return Err(Error::config(
                "lifetime.cap_seconds",
                "must be positive and finite",
            ));
        }
        if l.trials == 0 {
            return Err(Error::config("lifetime.trials", "must be at least 1"));
        }
        Ok(())
    }

    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Config =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// The explicit path if given, else `$SLALOM_CONFIG`, else the built-in default.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match config_path(explicit) {
            Some(path) => Self::load(path),
            None => Ok(Self::default()),
        }
    }
}

pub fn config_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    })
}
