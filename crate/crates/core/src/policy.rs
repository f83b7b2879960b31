//! The balancing agent's per-step action preferences.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{CartpoleState, PhysicsParams};

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub fn force(self, params: &PhysicsParams) -> f64 {
        match self {
            Action::Left => -params.force_mag,
            Action::Right => params.force_mag,
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

/// Nonnegative preference for each of the two actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub left: f64,
    pub right: f64,
}

impl PreferenceVector {
    pub const fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn get(&self, action: Action) -> f64 {
        match action {
            Action::Left => self.left,
            Action::Right => self.right,
        }
    }

    /// Exact ties go to `Left`.
    pub fn argmax(&self) -> Action {
        if self.right > self.left {
            Action::Right
        } else {
            Action::Left
        }
    }

    pub fn elementwise(&self, other: &PreferenceVector) -> PreferenceVector {
        PreferenceVector::new(self.left * other.left, self.right * other.right)
    }

    pub fn is_valid(&self) -> bool {
        self.left.is_finite()
            && self.right.is_finite()
            && self.left >= 0.0
            && self.right >= 0.0
            && (self.left > 0.0 || self.right > 0.0)
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.right, self.left)
    }
}

/// How the model preference is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Logistic pair over `s = k_theta * theta + k_theta_dot * theta_dot`.
    /// Reads only the pole, never the cart, so it has no notion of the screen edges.
    AnalyticBalancer {
        k_theta: f64,
        k_theta_dot: f64,
        sharpness: f64,
    },
    /// Per action, `max(0, w . [x, x_dot, theta, theta_dot] + bias)`; ten numbers,
    /// left row first, bias last in each row.
    LinearWeights { weights: Vec<f64> },
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::AnalyticBalancer {
            k_theta: 8.0,
            k_theta_dot: 2.0,
            sharpness: 3.0,
        }
    }
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PolicySpec::AnalyticBalancer {
                k_theta,
                k_theta_dot,
                sharpness,
            } => {
                for (field, v) in [
                    ("policy.k_theta", k_theta),
                    ("policy.k_theta_dot", k_theta_dot),
                ] {
                    if !v.is_finite() {
                        return Err(Error::config(field, format!("must be finite, got {v}")));
                    }
                }
                if !(sharpness.is_finite() && *sharpness > 0.0) {
                    return Err(Error::config(
                        "policy.sharpness",
                        format!("must be positive and finite, got {sharpness}"),
                    ));
                }
            }
            PolicySpec::LinearWeights { weights } => {
                if weights.len() != 10 {
                    return Err(Error::config(
                        "policy.weights",
                        format!("expected 10 weights (2 actions x [x, x_dot, theta, theta_dot, bias]), got {}", weights.len()),
                    ));
                }
                if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
                    return Err(Error::config(
                        format!("policy.weights[{i}]"),
                        "must be finite",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn model_preference(state: &CartpoleState, spec: &PolicySpec) -> PreferenceVector {
    match spec {
        PolicySpec::AnalyticBalancer {
            k_theta,
            k_theta_dot,
            sharpness,
        } => {
            let score = k_theta * state.theta + k_theta_dot * state.theta_dot;
            // exp(-a s) / (exp(-a s) + exp(a s)) written so that negating s swaps
            // the pair bit-for-bit.
            let z = 2.0 * sharpness * score;
            PreferenceVector::new(logistic(-z), logistic(z))
        }
        PolicySpec::LinearWeights { weights } => {
            let features = [state.x, state.x_dot, state.theta, state.theta_dot, 1.0];
            let row = |offset: usize| {
                let v: f64 = features
                    .iter()
                    .zip(&weights[offset..offset + 5])
                    .map(|(f, w)| f * w)
                    .sum();
                v.max(0.0)
            };
            let pref = PreferenceVector::new(row(0), row(5));
            if pref.is_valid() {
                pref
            } else {
                PreferenceVector::new(0.5, 0.5)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format_version: u32,
    pub policy: PolicySpec,
}

pub fn parse_policy(text: &str) -> Result<PolicySpec> {
    let file: PolicyFile =
        serde_json::from_str(text).map_err(|e| Error::config("policy", e.to_string()))?;
    if file.format_version != POLICY_FORMAT_VERSION {
        return Err(Error::config(
            "format_version",
            format!(
                "unsupported policy format {} (expected {POLICY_FORMAT_VERSION})",
                file.format_version
            ),
        ));
    }
    file.policy.validate()?;
    Ok(file.policy)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicySpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_policy(&text)
}

pub fn save_policy(path: impl AsRef<Path>, spec: &PolicySpec) -> Result<()> {
    let path = path.as_ref();
    spec.validate()?;
    let file = PolicyFile {
        format_version: POLICY_FORMAT_VERSION,
        policy: spec.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(theta: f64, theta_dot: f64) -> CartpoleState {
        CartpoleState::new(0.0, 0.0, theta, theta_dot)
    }

    #[test]
    fn balanced_pole_is_indifferent() {
        let m = model_preference(&at(0.0, 0.0), &PolicySpec::default());
        assert_eq!(m, PreferenceVector::new(0.5, 0.5));
        assert_eq!(m.argmax(), Action::Left);
    }

    #[test]
    fn leaning_right_prefers_right() {
        let m = model_preference(&at(0.2, 0.0), &PolicySpec::default());
        assert!(m.right > m.left);
    }

    #[test]
    fn screen_blind() {
        let spec = PolicySpec::default();
        let a = model_preference(&at(0.1, -0.3), &spec);
        let mut s = at(0.1, -0.3);
        s.x = 2.0;
        s.x_dot = -5.0;
        assert_eq!(a, model_preference(&s, &spec));
    }

    #[test]
    fn negative_sharpness_rejected_on_load() {
        let text = r#"{"format_version":1,"policy":{"kind":"analytic_balancer","k_theta":8.0,"k_theta_dot":2.0,"sharpness":-1.0}}"#;
        let err = parse_policy(text).unwrap_err();
        assert!(err.to_string().contains("policy.sharpness"), "{err}");
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        let text = r#"{"format_version":1,"policy":{"kind":"discrete_sac","path":"x"}}"#;
        assert!(matches!(parse_policy(text), Err(Error::Config { .. })));
    }

    #[test]
    fn wrong_weight_count_rejected() {
        let spec = PolicySpec::LinearWeights {
            weights: vec![1.0; 9],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let spec = PolicySpec::AnalyticBalancer {
            k_theta: 7.25,
            k_theta_dot: 1.5,
            sharpness: 2.0,
        };
        save_policy(&path, &spec).unwrap();
        assert_eq!(load_policy(&path).unwrap(), spec);
    }

    #[test]
    fn fully_clamped_linear_policy_is_neutral() {
        let spec = PolicySpec::LinearWeights {
            weights: vec![0.0; 10],
        };
        assert_eq!(
            model_preference(&at(0.3, 0.0), &spec),
            PreferenceVector::new(0.5, 0.5)
        );
    }
}
