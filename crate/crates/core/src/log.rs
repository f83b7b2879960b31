//! Session logs: one JSON object per line, a header first, then step and
//! event records in the order they happened.
//!
//! ```text
//! {"kind":"header","format_version":1,...}
//! {"kind":"event","step_index":0,"event":{"type":"game_started",...}}
//! {"kind":"step","step_index":1,"elapsed":0.02,...}
//! ```
//!
//! Each record is written with a single `write` call including its newline,
//! so a crash leaves at most one partial line at the end. The parser drops such
//! a line and reports it.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Config;
use crate::engine::{Engine, EngineOptions, Seeds, ENGINE_VERSION};
use crate::error::{Error, Result};
use crate::influence::{ActionDecision, Command, InfluenceSet};
use crate::physics::CartpoleState;
use crate::rules::{GameEvent, Gate, GateColor, GateStatus, LossCause};

pub const LOG_FORMAT_VERSION: u32 = 1;
pub const LOG_EXTENSION: &str = "paclog";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub engine_version: String,
    pub session_id: String,
    pub created_unix_ms: u64,
    /// The number the stream seeds were expanded from, when they were.
    #[serde(default)]
    pub base_seed: Option<u64>,
    pub seeds: Seeds,
    pub options: EngineOptions,
    pub config: Config,
    pub roles: Vec<String>,
}

impl LogHeader {
    pub fn new(
        session_id: impl Into<String>,
        seeds: Seeds,
        options: EngineOptions,
        config: Config,
    ) -> Self {
        let created_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            format_version: LOG_FORMAT_VERSION,
            engine_version: ENGINE_VERSION.to_string(),
            session_id: session_id.into(),
            created_unix_ms,
            base_seed: None,
            seeds,
            options,
            config,
            roles: vec!["influencer".into(), "coach".into()],
        }
    }

    /// A header whose seeds are derived from `base_seed`.
    pub fn from_base(
        session_id: impl Into<String>,
        base_seed: u64,
        options: EngineOptions,
        config: Config,
    ) -> Self {
        Self {
            base_seed: Some(base_seed),
            ..Self::new(session_id, Seeds::from_base(base_seed), options, config)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSnapshot {
    pub index: u32,
    pub color: GateColor,
    pub line_x: f64,
    pub progress: f64,
    pub status: GateStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Session-wide tick counter, starting at 1.
    pub step_index: u64,
    /// Session simulated time, `step_index * dt`.
    pub elapsed: f64,
    /// Cart after this tick; its own `step_index` and `elapsed` count within the game.
    pub state: CartpoleState,
    /// Circles in effect during this tick, after `command`.
    pub influences: InfluenceSet,
    /// The gate that was active when the tick started.
    pub gate: Option<GateSnapshot>,
    pub decision: ActionDecision,
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseSource {
    Influencer,
    Coach,
    /// The influencer's connection dropped.
    Disconnect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    GameStarted {
        level: u32,
        gates: Vec<Gate>,
        hands_free: bool,
    },
    GatePassed {
        gate: u32,
        color: GateColor,
    },
    GateFailed {
        gate: u32,
        color: GateColor,
    },
    GameWon,
    GameLost {
        cause: LossCause,
    },
    LevelAdvanced {
        level: u32,
    },
    Paused {
        by: PauseSource,
    },
    /// `paused_ticks` counts tick periods spent paused.
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

impl EventKind {
    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::GameWon | EventKind::GameLost { .. })
    }
}

impl From<GameEvent> for EventKind {
    fn from(e: GameEvent) -> Self {
        match e {
            GameEvent::GatePassed { gate, color } => EventKind::GatePassed { gate, color },
            GameEvent::GateFailed { gate, color } => EventKind::GateFailed { gate, color },
            GameEvent::GameWon => EventKind::GameWon,
            GameEvent::GameLost { cause } => EventKind::GameLost { cause },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// The tick the event happened on; 0 for events before the first tick.
    pub step_index: u64,
    pub event: EventKind,
}

impl EventRecord {
    pub fn new(step_index: u64, event: EventKind) -> Self {
        Self { step_index, event }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Step(StepRecord),
    Event(EventRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Step(StepRecord),
    Event(EventRecord),
}

impl Record {
    pub fn step_index(&self) -> u64 {
        match self {
            Record::Step(s) => s.step_index,
            Record::Event(e) => e.step_index,
        }
    }
}

fn encode<T: Serialize>(line: &T) -> Result<String> {
    let mut text = serde_json::to_string(line)?;
    text.push('\n');
    Ok(text)
}

/// Single-writer appender enforcing record ordering.
#[derive(Debug)]
pub struct LogWriter<W: Write> {
    out: W,
    last_step: u64,
    last_event: u64,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> Result<Self> {
        out.write_all(encode(&LogLine::Header(header.clone()))?.as_bytes())?;
        Ok(Self {
            out,
            last_step: 0,
            last_event: 0,
        })
    }

    /// Step indices must strictly increase.
    pub fn append_step(&mut self, record: &StepRecord) -> Result<()> {
        if record.step_index <= self.last_step || record.step_index < self.last_event {
            return Err(Error::OutOfOrder {
                got: record.step_index,
                last: self.last_step.max(self.last_event),
            });
        }
        self.out
            .write_all(encode(&LogLine::Step(*record))?.as_bytes())?;
        self.last_step = record.step_index;
        Ok(())
    }

    /// Events may share the index of the step they belong to, never precede it.
    pub fn append_event(&mut self, record: &EventRecord) -> Result<()> {
        let floor = self.last_step.max(self.last_event);
        if record.step_index < floor {
            return Err(Error::OutOfOrder {
                got: record.step_index,
                last: floor,
            });
        }
        self.out
            .write_all(encode(&LogLine::Event(record.clone()))?.as_bytes())?;
        self.last_event = record.step_index;
        Ok(())
    }

    pub fn append(&mut self, record: &Record) -> Result<()> {
        match record {
            Record::Step(s) => self.append_step(s),
            Record::Event(e) => self.append_event(e),
        }
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn get_ref(&self) -> &W {
        &self.out
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl LogWriter<File> {
    /// Creates `path`, refusing to overwrite an existing log.
    pub fn create(path: impl AsRef<Path>, header: &LogHeader) -> Result<Self> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Self::new(file, header)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub header: LogHeader,
    pub records: Vec<Record>,
    /// The file ended in a partial record, which was dropped.
    pub truncated_record: bool,
}

impl ParsedLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Step(s) => Some(s),
            Record::Event(_) => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Event(e) => Some(e),
            Record::Step(_) => None,
        })
    }

    /// No `session_ended` event: the writer stopped before closing the session.
    pub fn session_truncated(&self) -> bool {
        !self.events().any(|e| e.event == EventKind::SessionEnded)
    }

    /// Steps run after the hands-free demo.
    pub fn play_steps(&self) -> impl Iterator<Item = &StepRecord> {
        let start = self.play_start();
        self.steps().filter(move |s| s.step_index > start)
    }

    /// Events from the point play began (after any demo).
    pub fn play_events(&self) -> impl Iterator<Item = &EventRecord> {
        let demo_end = self
            .events()
            .position(|e| e.event == EventKind::HandsFreeEnded);
        self.events().skip(demo_end.map_or(0, |i| i + 1))
    }

    /// Last step index belonging to the demo (0 if there was none).
    pub fn play_start(&self) -> u64 {
        self.events()
            .find(|e| e.event == EventKind::HandsFreeEnded)
            .map_or(0, |e| e.step_index)
    }

    pub fn serialize(&self) -> Result<String> {
        let mut out = encode(&LogLine::Header(self.header.clone()))?;
        for r in &self.records {
            match r {
                Record::Step(s) => out.push_str(&encode(&LogLine::Step(*s))?),
                Record::Event(e) => out.push_str(&encode(&LogLine::Event(e.clone()))?),
            }
        }
        Ok(out)
    }
}

fn parse_header(line: &str) -> Result<LogHeader> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::LogParse {
        line: 1,
        message: e.to_string(),
    })?;
    if value.get("kind").and_then(Value::as_str) != Some("header") {
        return Err(Error::LogParse {
            line: 1,
            message: "first line must be the header".into(),
        });
    }
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::LogParse {
            line: 1,
            message: "header has no numeric format_version".into(),
        })?;
    if version != u64::from(LOG_FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: LOG_FORMAT_VERSION,
        });
    }
    match serde_json::from_str::<LogLine>(line) {
        Ok(LogLine::Header(h)) => Ok(h),
        Ok(_) => unreachable!("kind checked above"),
        Err(e) => Err(Error::LogParse {
            line: 1,
            message: e.to_string(),
        }),
    }
}

/// Parses a whole log. A final line without its newline is treated as a
/// partial write: dropped and flagged, never an error.
pub fn parse(text: &str) -> Result<ParsedLog> {
    let complete = text.ends_with('\n');
    let mut lines: Vec<&str> = text.split('\n').collect();
    // `split` yields a trailing "" after the final newline; otherwise the last
    // element is the partial record.
    let tail = lines.pop().unwrap_or("");
    let truncated_record = !complete && !tail.is_empty();

    let Some(first) = lines.first() else {
        return Err(Error::LogParse {
            line: 1,
            message: if truncated_record {
                "header line is incomplete".into()
            } else {
                "empty log".into()
            },
        });
    };
    let header = parse_header(first)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut last_step = 0;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| Error::LogParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = match parsed {
            LogLine::Header(_) => {
                return Err(Error::LogParse {
                    line: line_no,
                    message: "second header".into(),
                })
            }
            LogLine::Step(s) => {
                if s.step_index <= last_step {
                    return Err(Error::LogParse {
                        line: line_no,
                        message: format!("step_index {} does not follow {last_step}", s.step_index),
                    });
                }
                last_step = s.step_index;
                Record::Step(s)
            }
            LogLine::Event(e) => Record::Event(e),
        };
        records.push(record);
    }
    Ok(ParsedLog {
        header,
        records,
        truncated_record,
    })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<ParsedLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub step_index: u64,
    /// JSON pointer to the first differing field of the step record.
    pub field: String,
    pub expected: String,
    pub actual: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "diverged at step {} in {}: logged {} but replay produced {}",
            self.step_index, self.field, self.expected, self.actual
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub regenerated: Vec<StepRecord>,
    pub divergence: Option<Divergence>,
}

fn first_difference(path: &str, a: &Value, b: &Value) -> Option<(String, String, String)> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, va) in x {
                let child = format!("{path}/{k}");
                match y.get(k) {
                    Some(vb) => {
                        if let Some(d) = first_difference(&child, va, vb) {
                            return Some(d);
                        }
                    }
                    None => return Some((child, va.to_string(), "<missing>".into())),
                }
            }
            y.keys()
                .find(|k| !x.contains_key(*k))
                .map(|k| (format!("{path}/{k}"), "<missing>".into(), y[k].to_string()))
        }
        _ if a == b => None,
        _ => Some((
            if path.is_empty() {
                "/".into()
            } else {
                path.into()
            },
            a.to_string(),
            b.to_string(),
        )),
    }
}

fn diverge(logged: &StepRecord, replayed: &StepRecord) -> Option<Divergence> {
    if logged == replayed {
        return None;
    }
    let a = serde_json::to_value(logged).ok()?;
    let b = serde_json::to_value(replayed).ok()?;
    let (field, expected, actual) = first_difference("", &a, &b)
        .unwrap_or_else(|| ("/".into(), format!("{logged:?}"), format!("{replayed:?}")));
    Some(Divergence {
        step_index: logged.step_index,
        field,
        expected,
        actual,
    })
}

/// Re-runs the engine from the header's seeds and configuration, feeding each
/// logged command at its tick, and compares every regenerated step record
/// against the logged one. Stops at the first divergence.
pub fn replay(header: &LogHeader, logged: &[StepRecord]) -> Result<ReplayOutcome> {
    if header.engine_version != ENGINE_VERSION {
        return Err(Error::ReplayRefused(format!(
            "log written by engine '{}', this build is '{ENGINE_VERSION}'",
            header.engine_version
        )));
    }
    if header.format_version != LOG_FORMAT_VERSION {
        return Err(Error::ReplayRefused(format!(
            "log format {} differs from {LOG_FORMAT_VERSION}",
            header.format_version
        )));
    }
    header
        .config
        .validate()
        .map_err(|e| Error::ReplayRefused(format!("header config rejected: {e}")))?;
    let (mut engine, _) = Engine::new(header.config.clone(), header.seeds, header.options)?;
    let mut regenerated = Vec::with_capacity(logged.len());
    for record in logged {
        if record.step_index != engine.step_index() + 1 {
            return Err(Error::ReplayRefused(format!(
                "step records are not contiguous: expected {}, found {}",
                engine.step_index() + 1,
                record.step_index
            )));
        }
        let replayed = match engine.step(record.command) {
            Ok(out) => out.record,
            Err(e) => {
                return Ok(ReplayOutcome {
                    regenerated,
                    divergence: Some(Divergence {
                        step_index: record.step_index,
                        field: "/".into(),
                        expected: "a step".into(),
                        actual: e.to_string(),
                    }),
                })
            }
        };
        let divergence = diverge(record, &replayed);
        regenerated.push(replayed);
        if divergence.is_some() {
            return Ok(ReplayOutcome {
                regenerated,
                divergence,
            });
        }
    }
    Ok(ReplayOutcome {
        regenerated,
        divergence: None,
    })
}

pub fn replay_log(log: &ParsedLog) -> Result<ReplayOutcome> {
    let steps: Vec<StepRecord> = log.steps().copied().collect();
    replay(&log.header, &steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::PresetSize;

    fn sample(steps: usize) -> (LogHeader, Vec<Record>) {
        let config = Config::default();
        let options = EngineOptions::headless(&config, 1, PresetSize::Medium);
        let seeds = Seeds::from_base(3);
        let header = LogHeader::new("sample", seeds, options, config.clone());
        let (mut engine, opening) = Engine::new(config, seeds, options).unwrap();
        let mut records: Vec<Record> = opening.into_iter().map(Record::Event).collect();
        for _ in 0..steps {
            let out = engine.step(None).unwrap();
            records.push(Record::Step(out.record));
            records.extend(out.events.into_iter().map(Record::Event));
        }
        records.push(Record::Event(engine.session_ended()));
        (header, records)
    }

    fn write(header: &LogHeader, records: &[Record]) -> String {
        let mut w = LogWriter::new(Vec::new(), header).unwrap();
        for r in records {
            w.append(r).unwrap();
        }
        String::from_utf8(w.into_inner()).unwrap()
    }

    #[test]
    fn append_and_read_back_in_order() {
        let (header, records) = sample(3);
        let log = parse(&write(&header, &records)).unwrap();
        assert_eq!(log.steps().count(), 3);
        assert_eq!(log.records, records);
        assert!(!log.session_truncated());
    }

    #[test]
    fn duplicate_step_rejected() {
        let (header, records) = sample(2);
        let mut w = LogWriter::new(Vec::new(), &header).unwrap();
        let step = records
            .iter()
            .find_map(|r| {
                if let Record::Step(s) = r {
                    Some(*s)
                } else {
                    None
                }
            })
            .unwrap();
        w.append_step(&step).unwrap();
        assert!(matches!(
            w.append_step(&step),
            Err(Error::OutOfOrder { .. })
        ));
    }

    #[test]
    fn truncated_tail_is_dropped_and_flagged() {
        let (header, records) = sample(20);
        let text = write(&header, &records);
        let cut = &text[..text.len() - 25];
        let log = parse(cut).unwrap();
        assert!(log.truncated_record);
        assert!(log.session_truncated());
        assert_eq!(log.records.len(), records.len() - 1);
    }

    #[test]
    fn future_version_names_both() {
        let (mut header, _) = sample(0);
        header.format_version = 9;
        let text = encode(&LogLine::Header(header)).unwrap();
        let err = parse(&text).unwrap_err();
        assert!(matches!(
            err,
            Error::UnsupportedVersion {
                found: 9,
                supported: 1
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains('9') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let (header, records) = sample(5);
        let text = write(&header, &records);
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{\"kind\":\"step\",\"step_index\":\"x\"}";
        let broken = lines.join("\n") + "\n";
        assert!(matches!(
            parse(&broken),
            Err(Error::LogParse { line: 4, .. })
        ));
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let (header, records) = sample(500);
        let text = write(&header, &records);
        assert_eq!(parse(&text).unwrap().serialize().unwrap(), text);
    }

    #[test]
    fn replay_matches_and_reports_divergence() {
        let (header, records) = sample(400);
        let log = parse(&write(&header, &records)).unwrap();
        assert_eq!(replay_log(&log).unwrap().divergence, None);

        let mut bad = log.header.clone();
        bad.seeds.decision ^= 1;
        let steps: Vec<StepRecord> = log.steps().copied().collect();
        let d = replay(&bad, &steps).unwrap().divergence.expect("diverges");
        assert!(d.step_index >= 1);
        assert!(
            d.field.starts_with("/decision") || d.field.starts_with("/state"),
            "{d}"
        );
    }

    #[test]
    fn replay_refuses_other_engines() {
        let (mut header, _) = sample(0);
        header.engine_version = "other/2".into();
        assert!(matches!(replay(&header, &[]), Err(Error::ReplayRefused(_))));
    }
}
