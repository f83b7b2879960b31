//! Slalom gates, levels and the per-tick game orchestration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, GateParams};
use crate::error::{Error, Result};
use crate::influence::{arbitrate, influence_vector, ActionDecision, InfluenceSet};
use crate::physics::{
    self, check_termination, Bumps, CartpoleState, DisturbanceSet, DisturbanceStream, Outcome,
    Slope, Wind,
};
use crate::policy::model_preference;

/// Progress within this distance of 1 counts as complete, so accumulating
/// `dt / pass_time` for exactly `pass_time` seconds passes the gate.
const PROGRESS_EPS: f64 = 1e-9;

pub const WINS_TO_ADVANCE: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateColor {
    /// Passed while the cart is to the right of the line.
    Blue,
    /// Passed while the cart is to the left of the line.
    Red,
}

impl GateColor {
    pub fn other(self) -> Self {
        match self {
            GateColor::Blue => GateColor::Red,
            GateColor::Red => GateColor::Blue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    Pending,
    Active,
    Passed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub color: GateColor,
    pub line_x: f64,
    pub progress: f64,
    pub status: GateStatus,
}

impl Gate {
    pub fn new(color: GateColor, line_x: f64) -> Self {
        Self {
            color,
            line_x,
            progress: 0.0,
            status: GateStatus::Pending,
        }
    }

    pub fn in_zone(&self, cart_x: f64) -> bool {
        match self.color {
            GateColor::Blue => cart_x > self.line_x,
            GateColor::Red => cart_x < self.line_x,
        }
    }

    pub fn zone_width(&self, x_limit: f64) -> f64 {
        match self.color {
            GateColor::Blue => x_limit - self.line_x,
            GateColor::Red => self.line_x + x_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub level: u32,
    pub gate_count: u32,
    pub disturbances: DisturbanceSet,
}

/// Three levels: 4 gates undisturbed, 8 gates with slope and wind, 12 gates
/// with slope, wind and bumps.
pub fn default_levels() -> Vec<LevelSpec> {
    let slope = Some(Slope { angle: 0.02 });
    let wind = Some(Wind {
        gust_rate: 0.3,
        gust_impulse: 0.5,
        gust_duration: 0.25,
    });
    let bumps = Some(Bumps {
        amplitude: 0.03,
        wavelength: 1.2,
    });
    vec![
        LevelSpec {
            level: 1,
            gate_count: 4,
            disturbances: DisturbanceSet::none(),
        },
        LevelSpec {
            level: 2,
            gate_count: 8,
            disturbances: DisturbanceSet {
                slope,
                wind,
                bumps: None,
            },
        },
        LevelSpec {
            level: 3,
            gate_count: 12,
            disturbances: DisturbanceSet { slope, wind, bumps },
        },
    ]
}

/// Alternating-colour gate list for one game. Each line is uniform over the
/// part of `[-line_fraction, +line_fraction] * x_limit` that leaves the correct
/// zone at least `min_zone_fraction * x_limit` wide.
pub fn generate_gates<R: Rng + ?Sized>(
    spec: &LevelSpec,
    params: &GateParams,
    x_limit: f64,
    rng: &mut R,
) -> Vec<Gate> {
    let mut color = if rng.gen::<bool>() {
        GateColor::Blue
    } else {
        GateColor::Red
    };
    let span = params.line_fraction * x_limit;
    let slack = x_limit - params.min_zone_fraction * x_limit;
    (0..spec.gate_count)
        .map(|_| {
            let (lo, hi) = match color {
                GateColor::Blue => (-span, span.min(slack)),
                GateColor::Red => ((-span).max(-slack), span),
            };
            let line_x = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let gate = Gate::new(color, line_x);
            color = color.other();
            gate
        })
        .collect()
}

/// Accumulates in-zone dwell time on an active gate. Progress never decreases.
pub fn update_gate(gate: &Gate, cart_x: f64, dt: f64, pass_time: f64) -> Gate {
    let mut next = *gate;
    if gate.status != GateStatus::Active || !gate.in_zone(cart_x) {
        return next;
    }
    next.progress = (gate.progress + dt / pass_time).min(1.0);
    if next.progress >= 1.0 - PROGRESS_EPS {
        next.progress = 1.0;
        next.status = GateStatus::Passed;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCause {
    Fall,
    ExitLeft,
    ExitRight,
}

impl LossCause {
    pub fn from_outcome(outcome: Outcome) -> Option<Self> {
        match outcome {
            Outcome::Fall => Some(LossCause::Fall),
            Outcome::ExitLeft => Some(LossCause::ExitLeft),
            Outcome::ExitRight => Some(LossCause::ExitRight),
            Outcome::Running | Outcome::Won => None,
        }
    }

    pub fn outcome(self) -> Outcome {
        match self {
            LossCause::Fall => Outcome::Fall,
            LossCause::ExitLeft => Outcome::ExitLeft,
            LossCause::ExitRight => Outcome::ExitRight,
        }
    }

    pub fn is_exit(self) -> bool {
        !matches!(self, LossCause::Fall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GameEvent {
    GatePassed { gate: u32, color: GateColor },
    GateFailed { gate: u32, color: GateColor },
    GameWon,
    GameLost { cause: LossCause },
}

impl GameEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(self, GameEvent::GameWon | GameEvent::GameLost { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub level_spec: LevelSpec,
    pub gates: Vec<Gate>,
    pub active_index: usize,
    pub consecutive_wins: u32,
    /// Gates passed over the whole session.
    pub score: u32,
    /// Most gates passed within a single game.
    pub best_score: u32,
    pub outcome: Outcome,
    pub paused: bool,
}

impl GameState {
    pub fn new(level_spec: LevelSpec, mut gates: Vec<Gate>) -> Self {
        if let Some(first) = gates.first_mut() {
            first.status = GateStatus::Active;
        }
        Self {
            level_spec,
            gates,
            active_index: 0,
            consecutive_wins: 0,
            score: 0,
            best_score: 0,
            outcome: Outcome::Running,
            paused: false,
        }
    }

    pub fn level(&self) -> u32 {
        self.level_spec.level
    }

    pub fn active_gate(&self) -> Option<&Gate> {
        self.gates
            .get(self.active_index)
            .filter(|g| g.status == GateStatus::Active)
    }

    pub fn passed_this_game(&self) -> u32 {
        self.gates
            .iter()
            .filter(|g| g.status == GateStatus::Passed)
            .count() as u32
    }

    pub fn status_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for g in &self.gates {
            counts[g.status as usize] += 1;
        }
        counts
    }
}

/// Everything random in a session, as three independent streams.
#[derive(Debug, Clone)]
pub struct Streams {
    pub disturbance: DisturbanceStream,
    pub decision: rand_chacha::ChaCha8Rng,
    /// Gate layouts and per-game initial cart jitter.
    pub gate: rand_chacha::ChaCha8Rng,
}

impl Streams {
    pub fn new(seeds: &crate::engine::Seeds) -> Self {
        use rand::SeedableRng;
        Self {
            disturbance: DisturbanceStream::new(seeds.disturbance),
            decision: rand_chacha::ChaCha8Rng::seed_from_u64(seeds.decision),
            gate: rand_chacha::ChaCha8Rng::seed_from_u64(seeds.gate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickResult {
    pub state: CartpoleState,
    pub decision: ActionDecision,
    pub gate_events: Vec<GameEvent>,
    pub game: GameState,
}

/// One simulation step: model preference, influence preference, arbitration,
/// physics, then gate progress and termination.
pub fn tick(
    game: &GameState,
    state: &CartpoleState,
    influences: &InfluenceSet,
    config: &Config,
    streams: &mut Streams,
) -> Result<TickResult> {
    if game.outcome.is_terminal() {
        return Err(Error::GameState(format!(
            "tick on a finished game ({:?})",
            game.outcome
        )));
    }
    if game.paused {
        return Err(Error::GameState("tick on a paused game".into()));
    }

    let m = model_preference(state, &config.policy);
    let inf = influence_vector(influences, state, &config.arbitration);
    let decision = arbitrate(m, inf, &config.arbitration, &mut streams.decision);
    let next = physics::step(
        state,
        decision.action.force(&config.physics),
        &config.physics,
        &game.level_spec.disturbances,
        &mut streams.disturbance,
    )?;

    let mut game = game.clone();
    let mut events = Vec::new();
    let outcome = check_termination(&next, &config.physics);
    if let Some(cause) = LossCause::from_outcome(outcome) {
        if let Some(gate) = game.gates.get_mut(game.active_index) {
            if gate.status == GateStatus::Active {
                gate.status = GateStatus::Failed;
                events.push(GameEvent::GateFailed {
                    gate: game.active_index as u32,
                    color: gate.color,
                });
            }
        }
        game.outcome = outcome;
        events.push(GameEvent::GameLost { cause });
    } else if let Some(gate) = game.gates.get(game.active_index).copied() {
        let updated = update_gate(&gate, next.x, config.physics.dt, config.gates.pass_time);
        game.gates[game.active_index] = updated;
        if updated.status == GateStatus::Passed {
            events.push(GameEvent::GatePassed {
                gate: game.active_index as u32,
                color: updated.color,
            });
            game.score += 1;
            game.active_index += 1;
            match game.gates.get_mut(game.active_index) {
                Some(g) => g.status = GateStatus::Active,
                None => {
                    game.outcome = Outcome::Won;
                    events.push(GameEvent::GameWon);
                }
            }
        }
    }

    Ok(TickResult {
        state: next,
        decision,
        gate_events: events,
        game,
    })
}

/// Applies the win/loss bookkeeping of a finished game and deals a fresh one.
/// Returns the new state and whether the level advanced.
pub fn resolve_game_end<R: Rng + ?Sized>(
    game: &GameState,
    outcome: Outcome,
    levels: &[LevelSpec],
    params: &GateParams,
    x_limit: f64,
    rng: &mut R,
) -> (GameState, bool) {
    debug_assert!(outcome.is_terminal());
    let best_score = game.best_score.max(game.passed_this_game());
    let mut consecutive_wins = game.consecutive_wins;
    let mut level_spec = game.level_spec.clone();
    let mut advanced = false;
    if outcome == Outcome::Won {
        consecutive_wins += 1;
        if consecutive_wins >= WINS_TO_ADVANCE {
            consecutive_wins = 0;
            if let Some(next) = levels.iter().find(|l| l.level == game.level() + 1) {
                level_spec = next.clone();
                advanced = true;
            }
        }
    } else {
        consecutive_wins = 0;
    }
    let gates = generate_gates(&level_spec, params, x_limit, rng);
    let mut next = GameState::new(level_spec, gates);
    next.consecutive_wins = consecutive_wins;
    next.score = game.score;
    next.best_score = best_score;
    next.paused = game.paused;
    (next, advanced)
}
