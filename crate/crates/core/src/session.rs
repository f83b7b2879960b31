//! Two-role live sessions and their wire protocol, independent of any transport.
//!
//! A [`Session`] owns the engine and the log writer. Connection handlers feed it
//! decoded client messages; every effect is deferred to [`Session::tick`], so
//! the log depends only on which tick a message arrived before.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::Config;
use crate::engine::{Engine, EngineOptions, EnginePhase};
use crate::error::Result;
use crate::influence::{CircleId, Command, CommandKind, InfluenceSet};
use crate::log::{EventKind, EventRecord, LogHeader, LogWriter, PauseSource};
use crate::rules::GateColor;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Influencer,
    Coach,
    /// Read-only; receives the coach's view.
    Observer,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Influencer => "influencer",
            Role::Coach => "coach",
            Role::Observer => "observer",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "influencer" => Ok(Role::Influencer),
            "coach" => Ok(Role::Coach),
            "observer" => Ok(Role::Observer),
            other => Err(format!(
                "unknown role `{other}` (expected influencer, coach or observer)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum SessionPhase {
    Lobby,
    HandsFreeDemo { remaining: u32 },
    Playing,
    Paused,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartView {
    pub x: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluencerView {
    pub cart: CartView,
    pub influences: InfluenceSet,
    pub level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CartCorrectness {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveGateView {
    pub index: u32,
    pub color: GateColor,
    pub line_x: f64,
    pub progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoachView {
    pub cart: CartView,
    pub gate: Option<ActiveGateView>,
    pub score: u32,
    pub best_score: u32,
    pub level: u32,
    pub cart_correctness: CartCorrectness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum View {
    Influencer(InfluencerView),
    Coach(CoachView),
}

pub fn influencer_view(engine: &Engine) -> InfluencerView {
    InfluencerView {
        cart: cart_view(engine),
        influences: *engine.influences(),
        level: engine.game().level(),
    }
}

pub fn coach_view(engine: &Engine) -> CoachView {
    let game = engine.game();
    let cart = engine.cart();
    let gate = game.active_gate();
    let correct = gate.is_some_and(|g| g.in_zone(cart.x));
    CoachView {
        cart: cart_view(engine),
        gate: gate.map(|g| ActiveGateView {
            index: game.active_index as u32,
            color: g.color,
            line_x: g.line_x,
            progress: g.progress,
        }),
        score: game.score,
        best_score: game.best_score,
        level: game.level(),
        cart_correctness: if correct {
            CartCorrectness::Correct
        } else {
            CartCorrectness::Incorrect
        },
    }
}

fn cart_view(engine: &Engine) -> CartView {
    CartView {
        x: engine.cart().x,
        theta: engine.cart().theta,
    }
}

/// The view `role` is entitled to. Observers see what the coach sees.
pub fn project_view(engine: &Engine, role: Role) -> View {
    match role {
        Role::Influencer => View::Influencer(influencer_view(engine)),
        Role::Coach | Role::Observer => View::Coach(coach_view(engine)),
    }
}

/// Events as the influencer receives them: nothing that reveals gates or score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InfluencerEvent {
    GameStarted {
        level: u32,
        hands_free: bool,
    },
    /// A game ended, by any outcome.
    GameEnded,
    LevelAdvanced {
        level: u32,
    },
    Paused {
        by: PauseSource,
    },
    Resumed {
        by: PauseSource,
        paused_ticks: u64,
    },
    HandsFreeStarted {
        games: u32,
    },
    HandsFreeEnded,
    SessionEnded,
}

impl InfluencerEvent {
    pub fn from_event(event: &EventKind) -> Option<Self> {
        Some(match *event {
            EventKind::GameStarted {
                level, hands_free, ..
            } => Self::GameStarted { level, hands_free },
            EventKind::GameWon | EventKind::GameLost { .. } => Self::GameEnded,
            EventKind::LevelAdvanced { level } => Self::LevelAdvanced { level },
            EventKind::Paused { by } => Self::Paused { by },
            EventKind::Resumed { by, paused_ticks } => Self::Resumed { by, paused_ticks },
            EventKind::HandsFreeStarted { games } => Self::HandsFreeStarted { games },
            EventKind::HandsFreeEnded => Self::HandsFreeEnded,
            EventKind::SessionEnded => Self::SessionEnded,
            EventKind::GatePassed { .. } | EventKind::GateFailed { .. } => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventPayload {
    Full(EventKind),
    Influencer(InfluencerEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientRequest {
    Command,
    Pause,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckPayload {
    pub request: ClientRequest,
    /// The tick on which the request takes effect.
    pub effective_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Unparseable message, unknown type or bad field.
    Protocol,
    /// The sender's role may not make this request.
    RoleViolation,
    /// The request is not valid in the current phase.
    InvalidPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("protocol error in `{field}`: {message}")]
    Protocol { field: String, message: String },
    #[error("the {role} role may not send {request}")]
    RoleViolation {
        role: &'static str,
        request: &'static str,
    },
    #[error("{0}")]
    InvalidPhase(String),
}

impl ClientError {
    fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        ClientError::Protocol {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn payload(&self) -> ErrorPayload {
        let (code, field) = match self {
            ClientError::Protocol { field, .. } => (ErrorCode::Protocol, Some(field.clone())),
            ClientError::RoleViolation { .. } => (ErrorCode::RoleViolation, None),
            ClientError::InvalidPhase(_) => (ErrorCode::InvalidPhase, None),
        };
        ErrorPayload {
            code,
            field,
            message: self.to_string(),
        }
    }
}

/// Every server-to-client frame: `{"v", "type", "tick", "payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    View {
        v: u32,
        tick: u64,
        payload: View,
    },
    Event {
        v: u32,
        tick: u64,
        payload: EventPayload,
    },
    Ack {
        v: u32,
        tick: u64,
        payload: AckPayload,
    },
    Error {
        v: u32,
        tick: u64,
        payload: ErrorPayload,
    },
}

impl ServerMessage {
    pub fn view(tick: u64, view: View) -> Self {
        ServerMessage::View {
            v: PROTOCOL_VERSION,
            tick,
            payload: view,
        }
    }

    pub fn ack(tick: u64, payload: AckPayload) -> Self {
        ServerMessage::Ack {
            v: PROTOCOL_VERSION,
            tick,
            payload,
        }
    }

    pub fn error(tick: u64, err: &ClientError) -> Self {
        ServerMessage::Error {
            v: PROTOCOL_VERSION,
            tick,
            payload: err.payload(),
        }
    }

    /// The event as `role` may see it, or `None` if it must be withheld.
    pub fn event_for(role: Role, record: &EventRecord) -> Option<Self> {
        let payload = match role {
            Role::Influencer => {
                EventPayload::Influencer(InfluencerEvent::from_event(&record.event)?)
            }
            Role::Coach | Role::Observer => EventPayload::Full(record.event.clone()),
        };
        Some(ServerMessage::Event {
            v: PROTOCOL_VERSION,
            tick: record.step_index,
            payload,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// A decoded client-to-server message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientMessage {
    Command(Command),
    Pause,
    Resume,
}

impl ClientMessage {
    pub fn request(&self) -> ClientRequest {
        match self {
            ClientMessage::Command(_) => ClientRequest::Command,
            ClientMessage::Pause => ClientRequest::Pause,
            ClientMessage::Resume => ClientRequest::Resume,
        }
    }

    pub fn to_json(&self) -> String {
        let mut obj = Map::new();
        obj.insert("v".into(), PROTOCOL_VERSION.into());
        match self {
            ClientMessage::Command(c) => {
                obj.insert("type".into(), "command".into());
                obj.insert(
                    "circle".into(),
                    serde_json::to_value(c.circle).expect("enum"),
                );
                obj.insert("op".into(), serde_json::to_value(c.op).expect("enum"));
            }
            ClientMessage::Pause => {
                obj.insert("type".into(), "pause".into());
            }
            ClientMessage::Resume => {
                obj.insert("type".into(), "resume".into());
            }
        }
        Value::Object(obj).to_string()
    }
}

fn take_field<'a>(
    obj: &'a Map<String, Value>,
    name: &str,
) -> std::result::Result<&'a Value, ClientError> {
    obj.get(name)
        .ok_or_else(|| ClientError::protocol(name, "missing field"))
}

fn enum_field<T: serde::de::DeserializeOwned>(
    obj: &Map<String, Value>,
    name: &str,
) -> std::result::Result<T, ClientError> {
    serde_json::from_value(take_field(obj, name)?.clone())
        .map_err(|e| ClientError::protocol(name, e.to_string()))
}

/// Decodes one client frame. Errors name the offending field.
pub fn parse_client_message(text: &str) -> std::result::Result<ClientMessage, ClientError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ClientError::protocol("$", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ClientError::protocol("$", "expected a JSON object"));
    };
    match take_field(&obj, "v")?.as_u64() {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        _ => {
            return Err(ClientError::protocol(
                "v",
                format!("unsupported protocol version (this server speaks {PROTOCOL_VERSION})"),
            ))
        }
    }
    let kind = take_field(&obj, "type")?
        .as_str()
        .ok_or_else(|| ClientError::protocol("type", "expected a string"))?;
    let (message, allowed): (ClientMessage, &[&str]) = match kind {
        "command" => {
            let circle: CircleId = enum_field(&obj, "circle")?;
            let op: CommandKind = enum_field(&obj, "op")?;
            (
                ClientMessage::Command(Command::new(circle, op)),
                &["v", "type", "circle", "op"],
            )
        }
        "pause" => (ClientMessage::Pause, &["v", "type"]),
        "resume" => (ClientMessage::Resume, &["v", "type"]),
        other => {
            return Err(ClientError::protocol(
                "type",
                format!("unknown message type `{other}` (expected command, pause or resume)"),
            ))
        }
    };
    if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(ClientError::protocol(extra.as_str(), "unexpected field"));
    }
    Ok(message)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Control {
    Pause(PauseSource),
    Resume(PauseSource),
}

/// What one tick produced, for broadcasting.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub events: Vec<EventRecord>,
    pub influencer: InfluencerView,
    pub coach: CoachView,
}

impl TickOutput {
    /// Every frame `role` receives for this tick, events first.
    pub fn messages_for(&self, role: Role) -> Vec<ServerMessage> {
        let mut out: Vec<ServerMessage> = self
            .events
            .iter()
            .filter_map(|e| ServerMessage::event_for(role, e))
            .collect();
        let view = match role {
            Role::Influencer => View::Influencer(self.influencer),
            Role::Coach | Role::Observer => View::Coach(self.coach),
        };
        out.push(ServerMessage::view(self.tick, view));
        out
    }
}

/// One live session: the authoritative engine, its log, and the role slots.
pub struct Session<W: Write> {
    id: String,
    engine: Engine,
    log: LogWriter<W>,
    started: bool,
    ended: bool,
    influencer: bool,
    coach: bool,
    queue: VecDeque<Command>,
    control: Option<Control>,
}

impl<W: Write> Session<W> {
    /// Validates the config before anything is written, then writes the header
    /// and the opening events. `open` is called only once the config is known
    /// good.
    pub fn create(
        id: impl Into<String>,
        config: Config,
        base_seed: u64,
        open: impl FnOnce() -> Result<W>,
    ) -> Result<Self> {
        let id = id.into();
        config.validate()?;
        let options = EngineOptions::from_config(&config);
        let header = LogHeader::from_base(id.clone(), base_seed, options, config.clone());
        let (engine, opening) = Engine::new(config, header.seeds, options)?;
        let mut log = LogWriter::new(open()?, &header)?;
        for event in &opening {
            log.append_event(event)?;
        }
        log.flush()?;
        Ok(Self {
            id,
            engine,
            log,
            started: false,
            ended: false,
            influencer: false,
            coach: false,
            queue: VecDeque::new(),
            control: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn log(&self) -> &LogWriter<W> {
        &self.log
    }

    /// The simulated step index; views and acks are stamped with it.
    pub fn tick_index(&self) -> u64 {
        self.engine.step_index()
    }

    pub fn phase(&self) -> SessionPhase {
        if self.ended {
            SessionPhase::Ended
        } else if !self.started {
            SessionPhase::Lobby
        } else if self.engine.is_paused() {
            SessionPhase::Paused
        } else {
            match self.engine.phase() {
                EnginePhase::HandsFree { remaining } => SessionPhase::HandsFreeDemo { remaining },
                EnginePhase::Playing => SessionPhase::Playing,
            }
        }
    }

    pub fn queued_commands(&self) -> usize {
        self.queue.len()
    }

    /// Assigns a role. A requested primary role that is already taken (and
    /// any request once both are taken) yields `Observer`. The session starts
    /// once both primary roles are present.
    pub fn join(&mut self, requested: Role) -> Role {
        let role = match requested {
            Role::Influencer if !self.influencer => {
                self.influencer = true;
                Role::Influencer
            }
            Role::Coach if !self.coach => {
                self.coach = true;
                Role::Coach
            }
            _ => Role::Observer,
        };
        if self.influencer && self.coach {
            self.started = true;
        }
        role
    }

    /// Frees the role's slot. An influencer leaving a running game pauses it.
    pub fn leave(&mut self, role: Role) {
        match role {
            Role::Influencer => {
                self.influencer = false;
                if self.started && !self.ended {
                    self.control = if self.engine.is_paused() {
                        None
                    } else {
                        Some(Control::Pause(PauseSource::Disconnect))
                    };
                }
            }
            Role::Coach => self.coach = false,
            Role::Observer => {}
        }
    }

    fn pause_source(role: Role) -> PauseSource {
        match role {
            Role::Coach => PauseSource::Coach,
            _ => PauseSource::Influencer,
        }
    }

    /// Queues a client request for the next tick and acknowledges it.
    pub fn handle(
        &mut self,
        role: Role,
        message: ClientMessage,
    ) -> std::result::Result<AckPayload, ClientError> {
        let request = message.request();
        if role == Role::Observer {
            return Err(ClientError::RoleViolation {
                role: role.name(),
                request: "any message",
            });
        }
        if self.ended {
            return Err(ClientError::InvalidPhase("the session has ended".into()));
        }
        let step = self.engine.step_index();
        // Whether the engine will be paused after pending control is applied.
        let will_pause = match self.control {
            Some(Control::Pause(_)) => true,
            Some(Control::Resume(_)) => false,
            None => self.engine.is_paused(),
        };
        match message {
            ClientMessage::Command(command) => {
                if role != Role::Influencer {
                    return Err(ClientError::RoleViolation {
                        role: role.name(),
                        request: "influence commands",
                    });
                }
                if !self.started {
                    return Err(ClientError::InvalidPhase(
                        "the session has not started".into(),
                    ));
                }
                if self.engine.in_demo() {
                    return Err(ClientError::InvalidPhase(
                        "commands are disabled during the hands-free demo".into(),
                    ));
                }
                self.queue.push_back(command);
                Ok(AckPayload {
                    request,
                    effective_tick: step + self.queue.len() as u64,
                })
            }
            ClientMessage::Pause => {
                if !self.started {
                    return Err(ClientError::InvalidPhase(
                        "the session has not started".into(),
                    ));
                }
                if will_pause {
                    return Err(ClientError::InvalidPhase("already paused".into()));
                }
                self.control = match self.control {
                    Some(Control::Resume(_)) => None,
                    _ => Some(Control::Pause(Self::pause_source(role))),
                };
                Ok(AckPayload {
                    request,
                    effective_tick: step,
                })
            }
            ClientMessage::Resume => {
                if !will_pause {
                    return Err(ClientError::InvalidPhase("not paused".into()));
                }
                self.control = match self.control {
                    Some(Control::Pause(_)) => None,
                    _ => Some(Control::Resume(Self::pause_source(role))),
                };
                Ok(AckPayload {
                    request,
                    effective_tick: step + 1,
                })
            }
        }
    }

    /// Advances one tick period: pending pause/resume first, then either an
    /// idle paused tick or one simulation step with at most one queued command.
    /// Does nothing in the lobby or after the session ended.
    pub fn tick(&mut self) -> Result<Option<TickOutput>> {
        if !self.started || self.ended {
            return Ok(None);
        }
        let mut events = Vec::new();
        match self.control.take() {
            Some(Control::Pause(by)) => events.push(self.engine.pause(by)?),
            Some(Control::Resume(by)) => events.push(self.engine.resume(by)?),
            None => {}
        }
        if self.engine.is_paused() {
            self.engine.idle_tick();
            for event in &events {
                self.log.append_event(event)?;
            }
        } else {
            let command = if self.engine.in_demo() {
                None
            } else {
                self.queue.pop_front()
            };
            for event in &events {
                self.log.append_event(event)?;
            }
            let out = self.engine.step(command)?;
            self.log.append_step(&out.record)?;
            for event in &out.events {
                self.log.append_event(event)?;
            }
            events.extend(out.events);
        }
        Ok(Some(TickOutput {
            tick: self.engine.step_index(),
            events,
            influencer: influencer_view(&self.engine),
            coach: coach_view(&self.engine),
        }))
    }

    /// Writes the end marker and flushes. Idempotent.
    pub fn close(&mut self) -> Result<Option<EventRecord>> {
        if self.ended {
            return Ok(None);
        }
        self.ended = true;
        let event = self.engine.session_ended();
        self.log.append_event(&event)?;
        self.log.flush()?;
        Ok(Some(event))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.log.flush()
    }
}

/// Field names that must never reach the influencer.
pub const COACH_ONLY_FIELDS: &[&str] = &[
    "gate",
    "gates",
    "line_x",
    "progress",
    "score",
    "best_score",
    "cart_correctness",
    "color",
];
/// Field names that must never reach the coach or observers.
pub const INFLUENCER_ONLY_FIELDS: &[&str] = &["influences", "intensity", "center_x", "center_y"];

/// Object keys anywhere in a serialized frame that `role` must not receive.
pub fn leaked_fields(role: Role, frame: &str) -> Vec<String> {
    let forbidden = match role {
        Role::Influencer => COACH_ONLY_FIELDS,
        Role::Coach | Role::Observer => INFLUENCER_ONLY_FIELDS,
    };
    let Ok(value) = serde_json::from_str::<Value>(frame) else {
        return vec!["<unparseable frame>".into()];
    };
    let mut found = Vec::new();
    let mut stack = vec![&value];
    while let Some(v) = stack.pop() {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    if forbidden.contains(&k.as_str()) {
                        found.push(k.clone());
                    }
                    stack.push(child);
                }
            }
            Value::Array(items) => stack.extend(items),
            _ => {}
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::parse;

    fn session(hands_free: u32) -> Session<Vec<u8>> {
        let mut config = Config::default();
        config.session.hands_free_games = hands_free;
        Session::create("t", config, 3, || Ok(Vec::new())).unwrap()
    }

    fn log_text(s: &Session<Vec<u8>>) -> String {
        String::from_utf8(s.log().get_ref().clone()).unwrap()
    }

    #[test]
    fn lobby_until_both_roles_join() {
        let mut s = session(3);
        assert_eq!(s.phase(), SessionPhase::Lobby);
        assert_eq!(s.join(Role::Influencer), Role::Influencer);
        assert!(s.tick().unwrap().is_none());
        assert_eq!(s.join(Role::Coach), Role::Coach);
        assert_eq!(s.phase(), SessionPhase::HandsFreeDemo { remaining: 3 });
        assert_eq!(s.join(Role::Coach), Role::Observer);
        assert_eq!(s.join(Role::Influencer), Role::Observer);
    }

    #[test]
    fn demo_rejects_commands() {
        let mut s = session(1);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        let grow = ClientMessage::Command(Command::new(CircleId::Left, CommandKind::Grow));
        assert!(matches!(
            s.handle(Role::Influencer, grow),
            Err(ClientError::InvalidPhase(_))
        ));
    }

    #[test]
    fn coach_command_is_role_violation() {
        let mut s = session(0);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        let before = *s.engine().influences();
        let grow = ClientMessage::Command(Command::new(CircleId::Left, CommandKind::Grow));
        let err = s.handle(Role::Coach, grow).unwrap_err();
        assert_eq!(err.payload().code, ErrorCode::RoleViolation);
        s.tick().unwrap();
        assert_eq!(*s.engine().influences(), before);
        assert_eq!(
            s.handle(Role::Observer, ClientMessage::Pause)
                .unwrap_err()
                .payload()
                .code,
            ErrorCode::RoleViolation
        );
    }

    #[test]
    fn pause_takes_effect_next_tick_and_buffers_commands() {
        let mut s = session(0);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        s.tick().unwrap();
        let ack = s.handle(Role::Influencer, ClientMessage::Pause).unwrap();
        assert_eq!(ack.effective_tick, 1);
        assert_eq!(s.phase(), SessionPhase::Playing);
        let out = s.tick().unwrap().unwrap();
        assert!(matches!(
            out.events[0].event,
            EventKind::Paused {
                by: PauseSource::Influencer
            }
        ));
        assert_eq!(s.phase(), SessionPhase::Paused);

        let grow = Command::new(CircleId::Right, CommandKind::Grow);
        let ack = s
            .handle(Role::Influencer, ClientMessage::Command(grow))
            .unwrap();
        assert_eq!(ack.effective_tick, 2);
        for _ in 0..5 {
            assert_eq!(s.tick().unwrap().unwrap().tick, 1);
        }
        assert_eq!(s.queued_commands(), 1);
        s.handle(Role::Coach, ClientMessage::Resume).unwrap();
        let out = s.tick().unwrap().unwrap();
        assert_eq!(out.tick, 2);
        assert!(matches!(
            out.events[0].event,
            EventKind::Resumed {
                by: PauseSource::Coach,
                paused_ticks: 6
            }
        ));
        let log = parse(&log_text(&s)).unwrap();
        assert_eq!(log.steps().last().unwrap().command, Some(grow));
    }

    #[test]
    fn double_pause_is_invalid() {
        let mut s = session(0);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        s.handle(Role::Coach, ClientMessage::Pause).unwrap();
        assert!(matches!(
            s.handle(Role::Influencer, ClientMessage::Pause),
            Err(ClientError::InvalidPhase(_))
        ));
        assert!(matches!(
            s.handle(Role::Influencer, ClientMessage::Resume),
            Ok(_)
        ));
    }

    #[test]
    fn influencer_disconnect_auto_pauses() {
        let mut s = session(0);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        s.tick().unwrap();
        s.leave(Role::Influencer);
        let out = s.tick().unwrap().unwrap();
        assert!(matches!(
            out.events[0].event,
            EventKind::Paused {
                by: PauseSource::Disconnect
            }
        ));
        assert_eq!(s.join(Role::Influencer), Role::Influencer);
    }

    #[test]
    fn close_writes_end_marker_once() {
        let mut s = session(0);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        for _ in 0..10 {
            s.tick().unwrap();
        }
        assert!(s.close().unwrap().is_some());
        assert!(s.close().unwrap().is_none());
        assert!(s.tick().unwrap().is_none());
        let log = parse(&log_text(&s)).unwrap();
        assert!(!log.session_truncated());
    }

    #[test]
    fn blue_gate_right_of_line_is_correct() {
        let mut s = session(0);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        let view = coach_view(s.engine());
        let gate = s.engine().game().active_gate().unwrap();
        let expected = gate.in_zone(s.engine().cart().x);
        assert_eq!(view.cart_correctness == CartCorrectness::Correct, expected);
        assert_eq!(project_view(s.engine(), Role::Observer), View::Coach(view));
    }

    #[test]
    fn client_messages_round_trip() {
        for msg in [
            ClientMessage::Pause,
            ClientMessage::Resume,
            ClientMessage::Command(Command::new(CircleId::Left, CommandKind::MoveUp)),
        ] {
            assert_eq!(parse_client_message(&msg.to_json()).unwrap(), msg);
        }
    }

    #[test]
    fn malformed_messages_name_the_field() {
        let field = |text: &str| match parse_client_message(text) {
            Err(ClientError::Protocol { field, .. }) => field,
            other => panic!("{text}: {other:?}"),
        };
        assert_eq!(
            field(r#"{"v":1,"type":"command","circle":"middle","op":"grow"}"#),
            "circle"
        );
        assert_eq!(field(r#"{"v":1,"type":"command","circle":"left"}"#), "op");
        assert_eq!(field(r#"{"v":1,"type":"jump"}"#), "type");
        assert_eq!(field(r#"{"v":2,"type":"pause"}"#), "v");
        assert_eq!(field(r#"{"v":1,"type":"pause","score":3}"#), "score");
        assert_eq!(field("[1]"), "$");
        assert_eq!(field("{"), "$");
    }

    #[test]
    fn server_messages_round_trip() {
        let mut s = session(1);
        s.join(Role::Influencer);
        s.join(Role::Coach);
        for _ in 0..300 {
            let out = s.tick().unwrap().unwrap();
            for role in [Role::Influencer, Role::Coach] {
                for msg in out.messages_for(role) {
                    let text = msg.to_json();
                    let back: ServerMessage = serde_json::from_str(&text).unwrap();
                    assert_eq!(back.to_json(), text);
                }
            }
        }
    }

    #[test]
    fn leak_detector_fires_on_contaminated_frames() {
        let bad = r#"{"type":"view","v":1,"tick":3,"payload":{"role":"influencer","score":2}}"#;
        assert_eq!(
            leaked_fields(Role::Influencer, bad),
            vec!["score".to_string()]
        );
        let bad =
            r#"{"type":"view","v":1,"tick":3,"payload":{"role":"coach","x":{"intensity":1}}}"#;
        assert_eq!(
            leaked_fields(Role::Coach, bad),
            vec!["intensity".to_string()]
        );
    }
}
