//! How long the cartpole survives under each static circle preset.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::engine::Seeds;
use crate::error::Result;
use crate::influence::{preset, InfluenceSet, PresetSize};
use crate::physics::{CartpoleState, DisturbanceSet, Outcome};
use crate::rules::{tick, GameState, LevelSpec, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeEnd {
    Fall,
    Exit,
    /// Still running at the cap.
    Capped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeReport {
    pub condition: PresetSize,
    pub base_seed: u64,
    pub lifetimes: Vec<f64>,
    pub ends: Vec<LifetimeEnd>,
    /// Entry `k` is the mean of the first `k + 1` lifetimes.
    pub cumulative_averages: Vec<f64>,
}

impl LifetimeReport {
    pub fn mean(&self) -> f64 {
        self.cumulative_averages.last().copied().unwrap_or(0.0)
    }

    pub fn count(&self, end: LifetimeEnd) -> usize {
        self.ends.iter().filter(|e| **e == end).count()
    }
}

/// One undisturbed, gateless game from a jittered start, run until the cart
/// falls, exits or reaches `cap_seconds`.
pub fn lifetime_trial(
    config: &Config,
    influences: &InfluenceSet,
    seeds: Seeds,
    cap_seconds: f64,
) -> Result<(f64, LifetimeEnd)> {
    let mut streams = Streams::new(&seeds);
    let level = LevelSpec {
        level: 1,
        gate_count: 0,
        disturbances: DisturbanceSet::none(),
    };
    let mut game = GameState::new(level, Vec::new());
    let mut state = CartpoleState::jittered(&mut streams.gate);
    let cap_steps = (cap_seconds / config.physics.dt).round() as u64;
    while state.step_index < cap_steps {
        let result = tick(&game, &state, influences, config, &mut streams)?;
        state = result.state;
        game = result.game;
        match game.outcome {
            Outcome::Running | Outcome::Won => {}
            Outcome::Fall => return Ok((state.elapsed, LifetimeEnd::Fall)),
            Outcome::ExitLeft | Outcome::ExitRight => {
                return Ok((state.elapsed, LifetimeEnd::Exit))
            }
        }
    }
    Ok((state.elapsed, LifetimeEnd::Capped))
}

/// Runs trials `0..n_trials` with seeds derived from `base_seed + i`, without
/// checking for a calibration stamp.
pub fn lifetime_experiment_unchecked(
    config: &Config,
    condition: PresetSize,
    n_trials: u32,
    base_seed: u64,
) -> Result<LifetimeReport> {
    let influences = preset(condition, &config.presets, config.physics.x_limit);
    let mut lifetimes = Vec::with_capacity(n_trials as usize);
    let mut ends = Vec::with_capacity(n_trials as usize);
    for i in 0..n_trials {
        let seeds = Seeds::from_base(base_seed.wrapping_add(u64::from(i)));
        let (lifetime, end) =
            lifetime_trial(config, &influences, seeds, config.lifetime.cap_seconds)?;
        lifetimes.push(lifetime);
        ends.push(end);
    }
    let mut sum = 0.0;
    let cumulative_averages = lifetimes
        .iter()
        .enumerate()
        .map(|(k, l)| {
            sum += l;
            sum / (k + 1) as f64
        })
        .collect();
    Ok(LifetimeReport {
        condition,
        base_seed,
        lifetimes,
        ends,
        cumulative_averages,
    })
}

/// The lifetime experiment for one condition. Refuses uncalibrated configs.
pub fn lifetime_experiment(
    config: &Config,
    condition: PresetSize,
    n_trials: u32,
    base_seed: u64,
) -> Result<LifetimeReport> {
    config.require_calibrated()?;
    lifetime_experiment_unchecked(config, condition, n_trials, base_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCheck {
    pub name: String,
    pub met: bool,
    pub detail: String,
}

/// Qualitative lifetime targets over the four presets.
pub fn check_lifetime_targets(
    none: &LifetimeReport,
    small: &LifetimeReport,
    medium: &LifetimeReport,
    big: &LifetimeReport,
) -> Vec<TargetCheck> {
    let n = |r: &LifetimeReport| r.lifetimes.len();
    let all_exit = |r: &LifetimeReport| r.count(LifetimeEnd::Exit) == n(r);
    let medium_exits = medium.count(LifetimeEnd::Exit);
    let medium_greatest = [none, small, big].iter().all(|r| medium.mean() > r.mean());
    vec![
        TargetCheck {
            name: "none: every trial exits".into(),
            met: all_exit(none),
            detail: format!("{}/{} exits", none.count(LifetimeEnd::Exit), n(none)),
        },
        TargetCheck {
            name: "none: mean lifetime in [11, 23] s".into(),
            met: (11.0..=23.0).contains(&none.mean()),
            detail: format!("{:.2} s", none.mean()),
        },
        TargetCheck {
            name: "small: every trial exits".into(),
            met: all_exit(small),
            detail: format!("{}/{} exits", small.count(LifetimeEnd::Exit), n(small)),
        },
        TargetCheck {
            name: "big: every trial falls".into(),
            met: big.count(LifetimeEnd::Fall) == n(big),
            detail: format!("{}/{} falls", big.count(LifetimeEnd::Fall), n(big)),
        },
        TargetCheck {
            name: "medium: 6 +/- 2 exits".into(),
            met: (4..=8).contains(&medium_exits),
            detail: format!("{medium_exits}/{} exits", n(medium)),
        },
        TargetCheck {
            name: "medium: greatest mean lifetime".into(),
            met: medium_greatest,
            detail: format!(
                "none {:.2}, small {:.2}, medium {:.2}, big {:.2}",
                none.mean(),
                small.mean(),
                medium.mean(),
                big.mean()
            ),
        },
    ]
}
