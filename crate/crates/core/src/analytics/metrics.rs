//! Per-session performance metrics computed from logs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::influence::ActionSource;
use crate::log::{EventKind, ParsedLog, StepRecord};
use crate::rules::LossCause;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    /// A trial runs from one lost game to the next; won games inside it add
    /// their gates to the running count.
    #[default]
    MergeWins,
    /// Won games also close a trial.
    SplitAtWins,
}

impl std::str::FromStr for Segmentation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merge-wins" => Ok(Segmentation::MergeWins),
            "split-at-wins" => Ok(Segmentation::SplitAtWins),
            other => Err(crate::Error::config(
                "segmentation",
                format!("unknown mode '{other}' (merge-wins|split-at-wins)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialEnd {
    Fall,
    Exit,
    Won,
    /// The session stopped mid-trial.
    Unfinished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub gates_passed: u32,
    pub end: TrialEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBreakdown {
    pub trials: Vec<Trial>,
    /// `None` when there are no trials.
    pub average_consgates: Option<f64>,
    pub total_passed: u32,
    pub total_failed: u32,
    /// `passed / (passed + failed)`, `None` with no gates resolved.
    pub ratio: Option<f64>,
}

/// Splits an event stream into trials and counts the gates passed in each.
///
/// Each lost game closes a trial. A trailing unfinished stretch counts as a
/// trial only if it passed at least one gate.
pub fn cons_gates_of<'a>(
    events: impl IntoIterator<Item = &'a EventKind>,
    mode: Segmentation,
) -> TrialBreakdown {
    let mut trials = Vec::new();
    let (mut current, mut passed, mut failed) = (0u32, 0u32, 0u32);
    for event in events {
        match event {
            EventKind::GatePassed { .. } => {
                current += 1;
                passed += 1;
            }
            EventKind::GateFailed { .. } => failed += 1,
            EventKind::GameLost { cause } => {
                let end = match cause {
                    LossCause::Fall => TrialEnd::Fall,
                    LossCause::ExitLeft | LossCause::ExitRight => TrialEnd::Exit,
                };
                trials.push(Trial {
                    gates_passed: current,
                    end,
                });
                current = 0;
            }
            EventKind::GameWon if mode == Segmentation::SplitAtWins => {
                trials.push(Trial {
                    gates_passed: current,
                    end: TrialEnd::Won,
                });
                current = 0;
            }
            _ => {}
        }
    }
    if current > 0 {
        trials.push(Trial {
            gates_passed: current,
            end: TrialEnd::Unfinished,
        });
    }
    let average_consgates = (!trials.is_empty()).then(|| f64::from(passed) / trials.len() as f64);
    let resolved = passed + failed;
    TrialBreakdown {
        trials,
        average_consgates,
        total_passed: passed,
        total_failed: failed,
        ratio: (resolved > 0).then(|| f64::from(passed) / f64::from(resolved)),
    }
}

/// Trial breakdown of the played part of a session (the demo is excluded).
pub fn cons_gates(log: &ParsedLog, mode: Segmentation) -> TrialBreakdown {
    cons_gates_of(log.play_events().map(|e| &e.event), mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub influence_pct: f64,
    pub model_pct: f64,
    pub stochastic_pct: f64,
    pub steps: u64,
}

pub fn attribution_of<'a>(
    steps: impl IntoIterator<Item = &'a StepRecord>,
) -> Option<AttributionSummary> {
    let mut counts = [0u64; 3];
    for s in steps {
        let slot = match s.decision.source {
            ActionSource::Influence => 0,
            ActionSource::Model => 1,
            ActionSource::Stochastic => 2,
        };
        counts[slot] += 1;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let pct = |n: u64| 100.0 * n as f64 / total as f64;
    Some(AttributionSummary {
        influence_pct: pct(counts[0]),
        model_pct: pct(counts[1]),
        stochastic_pct: pct(counts[2]),
        steps: total,
    })
}

pub fn attribution(log: &ParsedLog) -> Option<AttributionSummary> {
    attribution_of(log.play_steps())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceTier {
    Low,
    Intermediate,
    High,
}

impl PerformanceTier {
    pub fn name(self) -> &'static str {
        match self {
            PerformanceTier::Low => "low",
            PerformanceTier::Intermediate => "intermediate",
            PerformanceTier::High => "high",
        }
    }
}

/// Below 1 is low, above 3 is high, both bounds inclusive for intermediate.
pub fn classify(avg_consgates: f64) -> PerformanceTier {
    if avg_consgates < 1.0 {
        PerformanceTier::Low
    } else if avg_consgates <= 3.0 {
        PerformanceTier::Intermediate
    } else {
        PerformanceTier::High
    }
}

/// One session's row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub base_seed: Option<u64>,
    /// Simulated seconds of play; excludes pauses and the hands-free demo.
    pub played_seconds: f64,
    pub failed: u32,
    pub passed: u32,
    pub total: u32,
    pub ratio: Option<f64>,
    pub average_consgates: Option<f64>,
    pub influence_pct: Option<f64>,
    pub model_pct: Option<f64>,
    pub stochastic_pct: Option<f64>,
    pub tier: Option<PerformanceTier>,
}

pub fn summarize(log: &ParsedLog, mode: Segmentation) -> SessionSummary {
    let breakdown = cons_gates(log, mode);
    let attribution = attribution(log);
    let played_steps = log.play_steps().count() as f64;
    SessionSummary {
        session_id: log.header.session_id.clone(),
        base_seed: log.header.base_seed,
        played_seconds: played_steps * log.header.config.physics.dt,
        failed: breakdown.total_failed,
        passed: breakdown.total_passed,
        total: breakdown.total_failed + breakdown.total_passed,
        ratio: breakdown.ratio,
        average_consgates: breakdown.average_consgates,
        influence_pct: attribution.map(|a| a.influence_pct),
        model_pct: attribution.map(|a| a.model_pct),
        stochastic_pct: attribution.map(|a| a.stochastic_pct),
        tier: breakdown.average_consgates.map(classify),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SessionSummary>,
}

const HEADERS: [&str; 12] = [
    "session",
    "seed",
    "time_s",
    "failed",
    "passed",
    "total",
    "ratio_pct",
    "avg_consgates",
    "influence_pct",
    "model_pct",
    "stochastic_pct",
    "tier",
];

fn opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * scale))
}

impl SessionSummary {
    fn cells(&self) -> [String; 12] {
        [
            self.session_id.clone(),
            self.base_seed
                .map_or_else(|| "-".to_string(), |s| s.to_string()),
            format!("{:.2}", self.played_seconds),
            self.failed.to_string(),
            self.passed.to_string(),
            self.total.to_string(),
            opt(self.ratio, 100.0),
            opt(self.average_consgates, 1.0),
            opt(self.influence_pct, 1.0),
            opt(self.model_pct, 1.0),
            opt(self.stochastic_pct, 1.0),
            self.tier.map_or("-", PerformanceTier::name).to_string(),
        ]
    }
}

pub fn summary_table<'a>(
    logs: impl IntoIterator<Item = &'a ParsedLog>,
    mode: Segmentation,
) -> SummaryTable {
    SummaryTable {
        rows: logs.into_iter().map(|l| summarize(l, mode)).collect(),
    }
}

impl SummaryTable {
    /// Space-aligned columns; the session column is left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 12]> = self.rows.iter().map(SessionSummary::cells).collect();
        let mut widths = HEADERS.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let mut out = String::new();
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    out.push_str(&format!("{cell:<w$}"));
                } else {
                    out.push_str(&format!("  {cell:>w$}"));
                }
            }
            out.push('\n');
            out
        };
        let mut out = line(&HEADERS.map(String::from));
        for row in &rows {
            out.push_str(&line(row));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADERS)?;
        for row in &self.rows {
            w.write_record(row.cells())?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| crate::Error::IoRaw(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::GateColor;

    fn pass() -> EventKind {
        EventKind::GatePassed {
            gate: 0,
            color: GateColor::Blue,
        }
    }

    fn lost(cause: LossCause) -> [EventKind; 2] {
        [
            EventKind::GateFailed {
                gate: 0,
                color: GateColor::Red,
            },
            EventKind::GameLost { cause },
        ]
    }

    #[test]
    fn pass_pass_fall_pass_exit() {
        let mut events = vec![pass(), pass()];
        events.extend(lost(LossCause::Fall));
        events.push(pass());
        events.extend(lost(LossCause::ExitLeft));
        let b = cons_gates_of(&events, Segmentation::MergeWins);
        assert_eq!(
            b.trials.iter().map(|t| t.gates_passed).collect::<Vec<_>>(),
            vec![2, 1]
        );
        assert_eq!(b.average_consgates, Some(1.5));
        assert_eq!((b.total_passed, b.total_failed), (3, 2));
    }

    #[test]
    fn five_fails_no_passes() {
        let events: Vec<_> = (0..5).flat_map(|_| lost(LossCause::Fall)).collect();
        assert_eq!(
            cons_gates_of(&events, Segmentation::MergeWins).average_consgates,
            Some(0.0)
        );
    }

    #[test]
    fn empty_has_no_average() {
        let b = cons_gates_of(&[], Segmentation::MergeWins);
        assert_eq!(b.average_consgates, None);
        assert_eq!(b.ratio, None);
    }

    #[test]
    fn wins_merge_or_split() {
        let mut events = vec![pass(), pass(), EventKind::GameWon, pass()];
        events.extend(lost(LossCause::Fall));
        let merged = cons_gates_of(&events, Segmentation::MergeWins);
        assert_eq!(merged.trials.len(), 1);
        assert_eq!(merged.average_consgates, Some(3.0));
        let split = cons_gates_of(&events, Segmentation::SplitAtWins);
        assert_eq!(split.trials.len(), 2);
        assert_eq!(split.trials[0].end, TrialEnd::Won);
        assert_eq!(split.average_consgates, Some(1.5));
    }

    #[test]
    fn tiers() {
        assert_eq!(classify(0.34), PerformanceTier::Low);
        assert_eq!(classify(2.36), PerformanceTier::Intermediate);
        assert_eq!(classify(3.69), PerformanceTier::High);
        assert_eq!(classify(11.29), PerformanceTier::High);
        assert_eq!(classify(1.0 - 1e-9), PerformanceTier::Low);
        assert_eq!(classify(1.0), PerformanceTier::Intermediate);
        assert_eq!(classify(3.0), PerformanceTier::Intermediate);
        assert_eq!(classify(3.0 + 1e-9), PerformanceTier::High);
    }
}
