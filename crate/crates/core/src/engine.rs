//! The session engine: a sequence of games driven one tick at a time, with the
//! hands-free demo, pauses and step/event record emission.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::influence::{apply_command, preset, Command, InfluenceSet, PresetSize};
use crate::log::{EventKind, EventRecord, GateSnapshot, PauseSource, StepRecord};
use crate::physics::CartpoleState;
use crate::rules::{generate_gates, resolve_game_end, tick, GameState, Streams};

/// Identifies the simulation semantics. Replays refuse logs written by a
/// different engine.
pub const ENGINE_VERSION: &str = "slalom-engine/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seeds {
    pub disturbance: u64,
    pub decision: u64,
    pub gate: u64,
}

impl Seeds {
    /// Three independent stream seeds expanded from one number.
    pub fn from_base(base: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        Self {
            disturbance: rng.next_u64(),
            decision: rng.next_u64(),
            gate: rng.next_u64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub hands_free_games: u32,
    pub start_level: u32,
    /// Circles in place when play (not the demo) begins.
    pub play_influences: InfluenceSet,
}

impl EngineOptions {
    pub fn from_config(config: &Config) -> Self {
        Self {
            hands_free_games: config.session.hands_free_games,
            start_level: 1,
            play_influences: preset(
                config.session.play_preset,
                &config.presets,
                config.physics.x_limit,
            ),
        }
    }

    /// Straight into play at `level` with `preset` circles, no demo.
    pub fn headless(config: &Config, level: u32, size: PresetSize) -> Self {
        Self {
            hands_free_games: 0,
            start_level: level,
            play_influences: preset(size, &config.presets, config.physics.x_limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum EnginePhase {
    HandsFree { remaining: u32 },
    Playing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub record: StepRecord,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: Config,
    options: EngineOptions,
    streams: Streams,
    game: GameState,
    cart: CartpoleState,
    influences: InfluenceSet,
    phase: EnginePhase,
    step_index: u64,
    paused_by: Option<PauseSource>,
    paused_ticks: u64,
}

impl Engine {
    /// Builds the engine and returns the events that open the session.
    pub fn new(
        config: Config,
        seeds: Seeds,
        options: EngineOptions,
    ) -> Result<(Self, Vec<EventRecord>)> {
        config.validate()?;
        let start = config.level(options.start_level)?.clone();
        let bounds = config.bounds();
        if !options
            .play_influences
            .is_within(&bounds, config.commands.intensity_max)
        {
            return Err(Error::config(
                "play_influences",
                "circles must lie within the screen and intensity bounds",
            ));
        }
        let mut streams = Streams::new(&seeds);
        let gates = generate_gates(
            &start,
            &config.gates,
            config.physics.x_limit,
            &mut streams.gate,
        );
        let game = GameState::new(start, gates);
        let cart = CartpoleState::jittered(&mut streams.gate);
        let (phase, influences) = if options.hands_free_games > 0 {
            (
                EnginePhase::HandsFree {
                    remaining: options.hands_free_games,
                },
                preset(
                    config.session.demo_preset,
                    &config.presets,
                    config.physics.x_limit,
                ),
            )
        } else {
            (EnginePhase::Playing, options.play_influences)
        };
        let mut events = Vec::new();
        if options.hands_free_games > 0 {
            events.push(EventRecord::new(
                0,
                EventKind::HandsFreeStarted {
                    games: options.hands_free_games,
                },
            ));
        }
        let engine = Self {
            config,
            options,
            streams,
            game,
            cart,
            influences,
            phase,
            step_index: 0,
            paused_by: None,
            paused_ticks: 0,
        };
        events.push(engine.game_started(0));
        Ok((engine, events))
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    pub fn game(&self) -> &GameState {
        &self.game
    }

    pub fn cart(&self) -> &CartpoleState {
        &self.cart
    }

    pub fn influences(&self) -> &InfluenceSet {
        &self.influences
    }

    pub fn phase(&self) -> EnginePhase {
        self.phase
    }

    pub fn in_demo(&self) -> bool {
        matches!(self.phase, EnginePhase::HandsFree { .. })
    }

    pub fn is_paused(&self) -> bool {
        self.paused_by.is_some()
    }

    /// Index of the last step taken (0 before the first).
    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    fn game_started(&self, step_index: u64) -> EventRecord {
        EventRecord::new(
            step_index,
            EventKind::GameStarted {
                level: self.game.level(),
                gates: self.game.gates.clone(),
                hands_free: self.in_demo(),
            },
        )
    }

    pub fn pause(&mut self, by: PauseSource) -> Result<EventRecord> {
        if self.paused_by.is_some() {
            return Err(Error::GameState("already paused".into()));
        }
        self.paused_by = Some(by);
        self.paused_ticks = 0;
        self.game.paused = true;
        Ok(EventRecord::new(self.step_index, EventKind::Paused { by }))
    }

    /// Counts one tick of wall-clock time spent paused. Consumes no randomness.
    pub fn idle_tick(&mut self) {
        if self.paused_by.is_some() {
            self.paused_ticks += 1;
        }
    }

    pub fn resume(&mut self, by: PauseSource) -> Result<EventRecord> {
        if self.paused_by.take().is_none() {
            return Err(Error::GameState("not paused".into()));
        }
        self.game.paused = false;
        Ok(EventRecord::new(
            self.step_index,
            EventKind::Resumed {
                by,
                paused_ticks: self.paused_ticks,
            },
        ))
    }

    /// Applies `command` (if any) to the circles, then advances one tick.
    pub fn step(&mut self, command: Option<Command>) -> Result<StepOutput> {
        if self.paused_by.is_some() {
            return Err(Error::GameState("step while paused".into()));
        }
        if command.is_some() && self.in_demo() {
            return Err(Error::GameState(
                "commands are disabled during the hands-free demo".into(),
            ));
        }
        if let Some(cmd) = command {
            self.influences = apply_command(
                &self.influences,
                cmd,
                &self.config.commands,
                &self.config.bounds(),
            );
        }

        let gate_index = self.game.active_index;
        let result = tick(
            &self.game,
            &self.cart,
            &self.influences,
            &self.config,
            &mut self.streams,
        )?;
        self.step_index += 1;
        let step_index = self.step_index;

        let gate = result.game.gates.get(gate_index).map(|g| GateSnapshot {
            index: gate_index as u32,
            color: g.color,
            line_x: g.line_x,
            progress: g.progress,
            status: g.status,
        });
        let record = StepRecord {
            step_index,
            elapsed: step_index as f64 * self.config.physics.dt,
            state: result.state,
            influences: self.influences,
            gate,
            decision: result.decision,
            command,
        };
        let mut events: Vec<EventRecord> = result
            .gate_events
            .iter()
            .map(|e| EventRecord::new(step_index, EventKind::from(*e)))
            .collect();

        self.cart = result.state;
        self.game = result.game;
        if self.game.outcome.is_terminal() {
            self.finish_game(step_index, &mut events);
        }
        Ok(StepOutput { record, events })
    }

    fn finish_game(&mut self, step_index: u64, events: &mut Vec<EventRecord>) {
        let x_limit = self.config.physics.x_limit;
        let (next, advanced) = resolve_game_end(
            &self.game,
            self.game.outcome,
            &self.config.levels,
            &self.config.gates,
            x_limit,
            &mut self.streams.gate,
        );
        self.game = next;
        if advanced {
            events.push(EventRecord::new(
                step_index,
                EventKind::LevelAdvanced {
                    level: self.game.level(),
                },
            ));
        }
        if let EnginePhase::HandsFree { remaining } = self.phase {
            if remaining <= 1 {
                events.push(EventRecord::new(step_index, EventKind::HandsFreeEnded));
                self.phase = EnginePhase::Playing;
                // Play starts from scratch: first level, no score, the influencer's circles.
                let start = self
                    .config
                    .level(self.options.start_level)
                    .expect("start level checked at construction")
                    .clone();
                let gates =
                    generate_gates(&start, &self.config.gates, x_limit, &mut self.streams.gate);
                self.game = GameState::new(start, gates);
                self.influences = self.options.play_influences;
            } else {
                self.phase = EnginePhase::HandsFree {
                    remaining: remaining - 1,
                };
            }
        }
        self.cart = CartpoleState::jittered(&mut self.streams.gate);
        events.push(self.game_started(step_index));
    }

    pub fn session_ended(&self) -> EventRecord {
        EventRecord::new(self.step_index, EventKind::SessionEnded)
    }
}
