//! Scripted influencers and the headless session driver.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{attribution_of, AttributionSummary};
use crate::config::Config;
use crate::engine::{Engine, EngineOptions, Seeds};
use crate::error::{Error, Result};
use crate::influence::{preset, CircleId, Command, CommandKind, InfluenceSet, PresetSize};
use crate::log::{EventKind, LogHeader, LogWriter, StepRecord};
use crate::physics::CartpoleState;
use crate::rules::{Gate, GateColor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BotSpec {
    /// Sets a preset and never touches it again.
    Static { preset: PresetSize },
    /// Resizes the circles to push the cart toward the gate zone; never moves them.
    SizeBalancer { period_s: f64 },
    /// Keeps both circles at `cart_x -/+ offset`; only moves them.
    Escort { offset: f64, tolerance: f64 },
    /// Random commands at `rate` per tick.
    Random { seed: u64, rate: f64 },
}

impl BotSpec {
    pub fn size_balancer() -> Self {
        BotSpec::SizeBalancer { period_s: 0.2 }
    }

    pub fn escort() -> Self {
        BotSpec::Escort {
            offset: 0.6,
            tolerance: 0.1,
        }
    }

    pub fn name(&self) -> String {
        match self {
            BotSpec::Static { preset } => format!("static-{}", preset.name()),
            BotSpec::SizeBalancer { .. } => "size-balancer".into(),
            BotSpec::Escort { .. } => "escort".into(),
            BotSpec::Random { .. } => "random".into(),
        }
    }

    /// Circles in place when play begins.
    pub fn initial_influences(&self, config: &Config) -> InfluenceSet {
        let size = match self {
            BotSpec::Static { preset } => *preset,
            _ => config.session.play_preset,
        };
        preset(size, &config.presets, config.physics.x_limit)
    }

    pub fn build(&self, config: &Config) -> Result<Box<dyn Bot + Send>> {
        Ok(match *self {
            BotSpec::Static { .. } => Box::new(StaticBot),
            BotSpec::SizeBalancer { period_s } => {
                if !(period_s.is_finite() && period_s > 0.0) {
                    return Err(Error::config("bot.period_s", "must be positive"));
                }
                let period = ((period_s / config.physics.dt).round() as u64).max(1);
                Box::new(SizeBalancer {
                    period,
                    rest: config.presets.intensity(config.session.play_preset),
                    flip: false,
                })
            }
            BotSpec::Escort { offset, tolerance } => {
                if !(offset.is_finite()
                    && offset > 0.0
                    && tolerance.is_finite()
                    && tolerance >= 0.0)
                {
                    return Err(Error::config(
                        "bot",
                        "escort offset must be positive and tolerance non-negative",
                    ));
                }
                Box::new(Escort { offset, tolerance })
            }
            BotSpec::Random { seed, rate } => {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::config("bot.rate", "must lie in [0, 1]"));
                }
                Box::new(RandomBot {
                    rng: ChaCha8Rng::seed_from_u64(seed),
                    rate,
                })
            }
        })
    }
}

impl std::str::FromStr for BotSpec {
    type Err = Error;

    /// `static:<preset>`, `size-balancer`, `escort` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match (kind, arg) {
            ("static", p) => Ok(BotSpec::Static {
                preset: if p.is_empty() {
                    PresetSize::Medium
                } else {
                    p.parse()?
                },
            }),
            ("size-balancer", "") => Ok(BotSpec::size_balancer()),
            ("escort", "") => Ok(BotSpec::escort()),
            ("random", seed) => Ok(BotSpec::Random {
                seed: if seed.is_empty() {
                    0
                } else {
                    seed.parse()
                        .map_err(|_| Error::config("bot", format!("bad random seed '{seed}'")))?
                },
                rate: 0.2,
            }),
            _ => Err(Error::config(
                "bot",
                format!("unknown bot '{s}' (static:<preset>|size-balancer|escort|random:<seed>)"),
            )),
        }
    }
}

/// What a scripted influencer sees each tick. Bots play both roles, so the
/// active gate is visible.
#[derive(Debug, Clone, Copy)]
pub struct BotView<'a> {
    pub step_index: u64,
    pub cart: &'a CartpoleState,
    pub influences: &'a InfluenceSet,
    pub gate: Option<&'a Gate>,
    pub x_limit: f64,
    pub pending: usize,
}

pub trait Bot {
    /// Commands to enqueue this tick.
    fn decide(&mut self, view: &BotView<'_>) -> Vec<Command>;
}

pub struct StaticBot;

impl Bot for StaticBot {
    fn decide(&mut self, _view: &BotView<'_>) -> Vec<Command> {
        Vec::new()
    }
}

pub struct SizeBalancer {
    period: u64,
    /// Intensity both circles return to while the cart sits in the zone.
    rest: f64,
    flip: bool,
}

impl Bot for SizeBalancer {
    fn decide(&mut self, view: &BotView<'_>) -> Vec<Command> {
        if view.step_index % self.period != 0 || view.pending > 0 {
            return Vec::new();
        }
        let Some(gate) = view.gate else {
            return Vec::new();
        };
        let (left, right) = (
            view.influences.left.intensity,
            view.influences.right.intensity,
        );
        if gate.in_zone(view.cart.x) {
            // Back toward the symmetric resting sizes, largest deviation first.
            let dl = left - self.rest;
            let dr = right - self.rest;
            let (circle, d) = if dl.abs() >= dr.abs() {
                (CircleId::Left, dl)
            } else {
                (CircleId::Right, dr)
            };
            if d.abs() < 1e-9 {
                return Vec::new();
            }
            let op = if d > 0.0 {
                CommandKind::Shrink
            } else {
                CommandKind::Grow
            };
            return vec![Command::new(circle, op)];
        }
        // The cart drifts toward the smaller circle: grow the far one, shrink the near one.
        let (grow, shrink) = match gate.color {
            GateColor::Blue => (CircleId::Left, CircleId::Right),
            GateColor::Red => (CircleId::Right, CircleId::Left),
        };
        self.flip = !self.flip;
        let command = if self.flip {
            Command::new(grow, CommandKind::Grow)
        } else {
            Command::new(shrink, CommandKind::Shrink)
        };
        vec![command]
    }
}

pub struct Escort {
    offset: f64,
    tolerance: f64,
}

impl Bot for Escort {
    fn decide(&mut self, view: &BotView<'_>) -> Vec<Command> {
        if view.pending > 0 {
            return Vec::new();
        }
        let x = view.cart.x;
        let targets = [
            (CircleId::Left, (x - self.offset).max(-view.x_limit)),
            (CircleId::Right, (x + self.offset).min(view.x_limit)),
        ];
        let drift = targets
            .iter()
            .map(|&(id, target)| (id, target - view.influences.get(id).center_x))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        match drift {
            Some((id, d)) if d.abs() > self.tolerance => {
                let op = if d > 0.0 {
                    CommandKind::MoveRight
                } else {
                    CommandKind::MoveLeft
                };
                vec![Command::new(id, op)]
            }
            _ => Vec::new(),
        }
    }
}

pub struct RandomBot {
    rng: ChaCha8Rng,
    rate: f64,
}

impl Bot for RandomBot {
    fn decide(&mut self, _view: &BotView<'_>) -> Vec<Command> {
        if self.rng.gen::<f64>() >= self.rate {
            return Vec::new();
        }
        let circle = if self.rng.gen::<bool>() {
            CircleId::Left
        } else {
            CircleId::Right
        };
        let op = CommandKind::ALL[self.rng.gen_range(0..CommandKind::ALL.len())];
        vec![Command::new(circle, op)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub base_seed: u64,
    pub level: u32,
    pub duration_s: f64,
    pub hands_free_games: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub bot: String,
    pub base_seed: u64,
    pub steps: u64,
    pub games: u32,
    pub won: u32,
    pub lost: u32,
    pub passed: u32,
    pub failed: u32,
    pub best_score: u32,
    pub final_level: u32,
    pub attribution: Option<AttributionSummary>,
}

/// Plays a whole session headless with `bot` as the influencer, writing every
/// record to `log`. Runs for `duration_s` of simulated play after the demo.
pub fn simulate<W: Write>(
    config: &Config,
    bot: &BotSpec,
    options: &SimulationOptions,
    log: &mut LogWriter<W>,
) -> Result<SimulationSummary> {
    let seeds = Seeds::from_base(options.base_seed);
    let engine_options = EngineOptions {
        hands_free_games: options.hands_free_games,
        start_level: options.level,
        play_influences: bot.initial_influences(config),
    };
    let (mut engine, opening) = Engine::new(config.clone(), seeds, engine_options)?;
    for e in &opening {
        log.append_event(e)?;
    }
    let mut driver = bot.build(config)?;
    let mut queue: VecDeque<Command> = VecDeque::new();
    let play_steps = (options.duration_s / config.physics.dt).round() as u64;
    let mut played = 0u64;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut summary = SimulationSummary {
        bot: bot.name(),
        base_seed: options.base_seed,
        steps: 0,
        games: 0,
        won: 0,
        lost: 0,
        passed: 0,
        failed: 0,
        best_score: 0,
        final_level: options.level,
        attribution: None,
    };
    while played < play_steps {
        let demo = engine.in_demo();
        let command = if demo {
            None
        } else {
            let view = BotView {
                step_index: engine.step_index(),
                cart: engine.cart(),
                influences: engine.influences(),
                gate: engine.game().active_gate(),
                x_limit: config.physics.x_limit,
                pending: queue.len(),
            };
            queue.extend(driver.decide(&view));
            queue.pop_front()
        };
        let out = engine.step(command)?;
        log.append_step(&out.record)?;
        if !demo {
            played += 1;
            steps.push(out.record);
        }
        for e in &out.events {
            log.append_event(e)?;
            if demo || e.event == EventKind::HandsFreeEnded {
                continue;
            }
            match e.event {
                EventKind::GatePassed { .. } => summary.passed += 1,
                EventKind::GateFailed { .. } => summary.failed += 1,
                EventKind::GameWon => {
                    summary.won += 1;
                    summary.games += 1;
                }
                EventKind::GameLost { .. } => {
                    summary.lost += 1;
                    summary.games += 1;
                }
                _ => {}
            }
        }
    }
    log.append_event(&engine.session_ended())?;
    log.flush()?;
    summary.steps = played;
    summary.best_score = engine.game().best_score;
    summary.final_level = engine.game().level();
    summary.attribution = attribution_of(&steps);
    Ok(summary)
}

/// The header matching what `simulate` will run. It carries no wall-clock
/// timestamp, so reruns produce byte-identical logs.
pub fn simulation_header(
    config: &Config,
    bot: &BotSpec,
    options: &SimulationOptions,
    session_id: &str,
) -> LogHeader {
    let header = LogHeader::from_base(
        session_id,
        options.base_seed,
        EngineOptions {
            hands_free_games: options.hands_free_games,
            start_level: options.level,
            play_influences: bot.initial_influences(config),
        },
        config.clone(),
    );
    LogHeader {
        created_unix_ms: 0,
        ..header
    }
}

/// `simulate` into an in-memory log; returns the log text alongside.
pub fn simulate_in_memory(
    config: &Config,
    bot: &BotSpec,
    options: &SimulationOptions,
    session_id: &str,
) -> Result<(SimulationSummary, String)> {
    let header = simulation_header(config, bot, options, session_id);
    let mut writer = LogWriter::new(Vec::new(), &header)?;
    let summary = simulate(config, bot, options, &mut writer)?;
    let text = String::from_utf8(writer.into_inner()).expect("logs are utf-8");
    Ok((summary, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(seed: u64) -> SimulationOptions {
        SimulationOptions {
            base_seed: seed,
            level: 1,
            duration_s: 20.0,
            hands_free_games: 0,
        }
    }

    fn collect(bot: BotSpec) -> Vec<Command> {
        let config = Config::default();
        let (_, text) = simulate_in_memory(&config, &bot, &opts(3), "t").unwrap();
        crate::log::parse(&text)
            .unwrap()
            .steps()
            .filter_map(|s| s.command)
            .collect()
    }

    #[test]
    fn static_bot_never_commands() {
        assert!(collect(BotSpec::Static {
            preset: PresetSize::Medium
        })
        .is_empty());
    }

    #[test]
    fn size_balancer_only_resizes() {
        let cmds = collect(BotSpec::size_balancer());
        assert!(!cmds.is_empty());
        assert!(cmds
            .iter()
            .all(|c| matches!(c.op, CommandKind::Grow | CommandKind::Shrink)));
    }

    #[test]
    fn escort_only_moves_and_flanks() {
        let config = Config::default();
        let (_, text) = simulate_in_memory(&config, &BotSpec::escort(), &opts(3), "t").unwrap();
        let log = crate::log::parse(&text).unwrap();
        let cmds: Vec<_> = log.steps().filter_map(|s| s.command).collect();
        assert!(!cmds.is_empty());
        assert!(cmds
            .iter()
            .all(|c| matches!(c.op, CommandKind::MoveLeft | CommandKind::MoveRight)));
        let late: Vec<_> = log.steps().skip(200).collect();
        let flanked = late
            .iter()
            .filter(|s| {
                s.influences.left.center_x <= s.state.x && s.influences.right.center_x >= s.state.x
            })
            .count();
        assert!(flanked * 10 >= late.len() * 9, "{flanked}/{}", late.len());
    }

    #[test]
    fn simulation_is_deterministic() {
        let config = Config::default();
        let bot = BotSpec::Static {
            preset: PresetSize::Medium,
        };
        let a = simulate_in_memory(&config, &bot, &opts(7), "t").unwrap();
        let b = simulate_in_memory(&config, &bot, &opts(7), "t").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bot_names_parse() {
        for s in [
            "static:none",
            "static:big",
            "size-balancer",
            "escort",
            "random:4",
        ] {
            s.parse::<BotSpec>().unwrap();
        }
        assert!("teleport".parse::<BotSpec>().is_err());
    }
}
