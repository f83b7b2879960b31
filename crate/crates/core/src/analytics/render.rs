//! Static SVG renderings of session logs.
//!
//! Output depends only on the logs, with every coordinate printed at two
//! decimals, so renders are stable enough to compare byte-for-byte.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::influence::Influence;
use crate::log::{EventKind, ParsedLog, Record};
use crate::rules::{GateColor, LossCause};

use super::metrics::{classify, cons_gates, PerformanceTier, Segmentation};

/// Upper bound on points per polyline; longer sessions are strided.
const MAX_ROUTE_POINTS: usize = 2000;
/// Upper bound on influence markers drawn per circle.
const MAX_INFLUENCE_MARKS: usize = 240;

const BLUE: &str = "#1f5fd6";
const RED: &str = "#d62728";
const LEFT_CIRCLE: &str = "#ff9f1c";
const RIGHT_CIRCLE: &str = "#8e44ad";
const PAUSE: &str = "#9e9e9e";

fn gate_color(c: GateColor) -> &'static str {
    match c {
        GateColor::Blue => BLUE,
        GateColor::Red => RED,
    }
}

fn open(width: u32, height: u32, title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n\
         <title>{}</title>\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n",
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn legend(out: &mut String, x: f64, y: f64, entries: &[(&str, &str, &str)]) {
    out.push_str("<g id=\"legend\" font-size=\"12\">\n");
    for (i, (shape, color, label)) in entries.iter().enumerate() {
        let row = y + 18.0 * i as f64;
        match *shape {
            "line" => {
                let _ = writeln!(
                    out,
                    "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>",
                    x,
                    row - 4.0,
                    x + 16.0,
                    row - 4.0
                );
            }
            "dot" => {
                let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{color}\" fill-opacity=\"0.6\"/>", x + 8.0, row - 4.0);
            }
            _ => {
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"16\" height=\"10\" fill=\"{color}\"/>",
                    x,
                    row - 9.0
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            x + 22.0,
            row,
            escape(label)
        );
    }
    out.push_str("</g>\n");
}

struct Ring {
    cx: f64,
    cy: f64,
    r_in: f64,
    r_out: f64,
    x_limit: f64,
    total: f64,
}

impl Ring {
    /// Track position to radius: the left screen edge is the inner rim.
    fn radius(&self, x: f64) -> f64 {
        let t = ((x + self.x_limit) / (2.0 * self.x_limit)).clamp(0.0, 1.0);
        self.r_in + t * (self.r_out - self.r_in)
    }

    /// Timeline position to angle, clockwise from twelve o'clock.
    fn angle(&self, t: f64) -> f64 {
        2.0 * PI * t / self.total - PI / 2.0
    }

    fn point(&self, t: f64, r: f64) -> (f64, f64) {
        let a = self.angle(t);
        (self.cx + r * a.cos(), self.cy + r * a.sin())
    }

    fn arc(&self, t0: f64, t1: f64, r: f64) -> String {
        let (x0, y0) = self.point(t0, r);
        let (x1, y1) = self.point(t1, r);
        let large = u8::from(t1 - t0 > self.total / 2.0);
        format!("M {x0:.2} {y0:.2} A {r:.2} {r:.2} 0 {large} 1 {x1:.2} {y1:.2}")
    }
}

/// The whole session on a circular timeline: the ring is the screen (inner rim
/// is the left edge), the black route is the cart, dots are the circles sized
/// by intensity, coloured arcs are gate lines and grey blocks are pauses.
pub fn render_session_circle(log: &ParsedLog) -> String {
    let (w, h) = (760u32, 560u32);
    let mut out = open(w, h, &format!("session {}", log.header.session_id));

    // Timeline: one unit per step plus one per paused tick, so pauses take space.
    let mut timeline = Vec::new();
    let mut pauses = Vec::new();
    let mut offset = 0.0;
    for r in &log.records {
        match r {
            Record::Step(s) => timeline.push((s.step_index as f64 + offset, s)),
            Record::Event(e) => {
                if let EventKind::Resumed { paused_ticks, .. } = e.event {
                    let start = e.step_index as f64 + offset;
                    offset += paused_ticks as f64;
                    pauses.push((start, start + paused_ticks as f64));
                }
            }
        }
    }
    let total = timeline.last().map_or(0.0, |(t, _)| *t).max(1.0);
    let ring = Ring {
        cx: 270.0,
        cy: 280.0,
        r_in: 120.0,
        r_out: 240.0,
        x_limit: log.header.config.physics.x_limit,
        total,
    };

    let _ = writeln!(
        out,
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#f4f4f4\" stroke=\"#cccccc\"/>\n<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#ffffff\" stroke=\"#cccccc\"/>",
        ring.cx, ring.cy, ring.r_out, ring.cx, ring.cy, ring.r_in
    );

    if !timeline.is_empty() {
        out.push_str("<g id=\"pauses\">\n");
        for (t0, t1) in &pauses {
            let _ = writeln!(
                out,
                "<path d=\"{}\" fill=\"none\" stroke=\"{PAUSE}\" stroke-width=\"{:.2}\" stroke-opacity=\"0.7\"/>",
                ring.arc(*t0, t1.max(t0 + 0.5), (ring.r_in + ring.r_out) / 2.0),
                ring.r_out - ring.r_in
            );
        }
        out.push_str("</g>\n<g id=\"gates\">\n");
        let mut span: Option<(u32, usize, GateColor, f64, f64)> = None;
        let mut game = 0usize;
        let emit = |out: &mut String, s: (u32, usize, GateColor, f64, f64), t_end: f64| {
            let r = ring.radius(s.3);
            let _ = writeln!(
                out,
                "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
                ring.arc(s.4, t_end.max(s.4 + 0.5), r),
                gate_color(s.2)
            );
        };
        let mut timeline_iter = timeline.iter().peekable();
        for r in &log.records {
            match r {
                Record::Event(e) if matches!(e.event, EventKind::GameStarted { .. }) => game += 1,
                Record::Step(_) => {
                    let (t, s) = timeline_iter.next().expect("one timeline entry per step");
                    if let Some(g) = s.gate {
                        match span {
                            Some(cur) if cur.0 == g.index && cur.1 == game => {}
                            _ => {
                                if let Some(cur) = span.take() {
                                    emit(&mut out, cur, *t);
                                }
                                span = Some((g.index, game, g.color, g.line_x, *t));
                            }
                        }
                    }
                }
                Record::Event(_) => {}
            }
        }
        if let Some(cur) = span {
            emit(&mut out, cur, total);
        }
        out.push_str("</g>\n<g id=\"influences\">\n");
        let stride = timeline.len().div_ceil(MAX_INFLUENCE_MARKS).max(1);
        for (t, s) in timeline.iter().step_by(stride) {
            for (c, color) in [
                (&s.influences.left, LEFT_CIRCLE),
                (&s.influences.right, RIGHT_CIRCLE),
            ] {
                mark(&mut out, &ring, *t, c, color);
            }
        }
        out.push_str("</g>\n");
        let stride = timeline.len().div_ceil(MAX_ROUTE_POINTS).max(1);
        let mut points = String::new();
        for (i, (t, s)) in timeline.iter().enumerate() {
            if i % stride == 0 || i + 1 == timeline.len() {
                let (x, y) = ring.point(*t, ring.radius(s.state.x));
                let _ = write!(points, "{x:.2},{y:.2} ");
            }
        }
        let _ = writeln!(
            out,
            "<polyline id=\"route\" points=\"{}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>",
            points.trim_end()
        );
    }

    legend(
        &mut out,
        560.0,
        60.0,
        &[
            ("line", "#000000", "cart position"),
            ("dot", LEFT_CIRCLE, "left influence"),
            ("dot", RIGHT_CIRCLE, "right influence"),
            ("line", BLUE, "blue gate"),
            ("line", RED, "red gate"),
            ("block", PAUSE, "pause"),
        ],
    );
    let _ = writeln!(
        out,
        "<text x=\"560\" y=\"190\" font-size=\"11\" fill=\"#555555\">inner rim: left edge</text>\n<text x=\"560\" y=\"206\" font-size=\"11\" fill=\"#555555\">outer rim: right edge</text>\n<text x=\"560\" y=\"222\" font-size=\"11\" fill=\"#555555\">time runs clockwise from the top</text>"
    );
    out.push_str("</svg>\n");
    out
}

fn mark(out: &mut String, ring: &Ring, t: f64, c: &Influence, color: &str) {
    if c.intensity <= 0.0 {
        return;
    }
    let (x, y) = ring.point(t, ring.radius(c.center_x));
    let _ = writeln!(
        out,
        "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.25\"/>",
        1.0 + 8.0 * c.intensity
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GateOutcome {
    Passed,
    Fall,
    Exit,
}

fn gate_outcomes(log: &ParsedLog) -> Vec<GateOutcome> {
    let mut out = Vec::new();
    let mut failed_pending = false;
    for e in log.play_events() {
        match e.event {
            EventKind::GatePassed { .. } => out.push(GateOutcome::Passed),
            EventKind::GateFailed { .. } => failed_pending = true,
            EventKind::GameLost { cause } if failed_pending => {
                failed_pending = false;
                out.push(match cause {
                    LossCause::Fall => GateOutcome::Fall,
                    LossCause::ExitLeft | LossCause::ExitRight => GateOutcome::Exit,
                });
            }
            _ => {}
        }
    }
    out
}

/// One row per session, one cell per resolved gate: passed, failed by a fall,
/// or failed by an exit.
pub fn render_sequence(logs: &[ParsedLog]) -> String {
    let rows: Vec<(String, Vec<GateOutcome>)> = logs
        .iter()
        .map(|l| (l.header.session_id.clone(), gate_outcomes(l)))
        .collect();
    let longest = rows.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
    let cell = 10.0;
    let label_w = 140.0;
    let w = (label_w + cell * longest as f64 + 180.0).ceil() as u32;
    let h = (40.0 + 20.0 * rows.len() as f64 + 80.0).ceil() as u32;
    let mut out = open(w, h, "gate outcome sequences");
    for (i, (id, outcomes)) in rows.iter().enumerate() {
        let y = 30.0 + 20.0 * i as f64;
        let _ = writeln!(
            out,
            "<text x=\"10\" y=\"{:.2}\" font-size=\"12\">{}</text>",
            y + 10.0,
            escape(id)
        );
        for (j, o) in outcomes.iter().enumerate() {
            let color = match o {
                GateOutcome::Passed => "#2ca02c",
                GateOutcome::Fall => "#ff7f0e",
                GateOutcome::Exit => "#7f3fbf",
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"14\" fill=\"{color}\"/>",
                label_w + cell * j as f64,
                y,
                cell - 1.0
            );
        }
    }
    legend(
        &mut out,
        label_w + cell * longest as f64 + 20.0,
        40.0,
        &[
            ("block", "#2ca02c", "success"),
            ("block", "#ff7f0e", "fall"),
            ("block", "#7f3fbf", "exit"),
        ],
    );
    out.push_str("</svg>\n");
    out
}

/// Gates passed per trial for each session, coloured by performance tier.
pub fn render_tiers(logs: &[ParsedLog], mode: Segmentation) -> String {
    let series: Vec<(String, Vec<u32>, Option<PerformanceTier>)> = logs
        .iter()
        .map(|l| {
            let b = cons_gates(l, mode);
            (
                l.header.session_id.clone(),
                b.trials.iter().map(|t| t.gates_passed).collect(),
                b.average_consgates.map(classify),
            )
        })
        .collect();
    let max_trials = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(1);
    let max_gates = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1);
    let (w, h) = (720u32, 420u32);
    let (x0, y0, pw, ph) = (60.0, 30.0, 480.0, 330.0);
    let mut out = open(w, h, "consecutive gates per trial by tier");
    let _ = writeln!(
        out,
        "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#999999\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">trial</text>\n<text x=\"15\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 15 {:.2})\" text-anchor=\"middle\">gates passed</text>",
        x0 + pw / 2.0,
        y0 + ph + 30.0,
        y0 + ph / 2.0,
        y0 + ph / 2.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{max_gates}</text>\n<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">0</text>\n<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{max_trials}</text>",
        x0 - 4.0,
        y0 + 4.0,
        x0 - 4.0,
        y0 + ph,
        x0 + pw,
        y0 + ph + 14.0
    );
    let tier_color = |t: Option<PerformanceTier>| match t {
        Some(PerformanceTier::Low) => "#d62728",
        Some(PerformanceTier::Intermediate) => "#ff7f0e",
        Some(PerformanceTier::High) => "#2ca02c",
        None => "#999999",
    };
    for (id, gates, tier) in &series {
        let pts: Vec<String> = gates
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let x = x0 + pw * (i + 1) as f64 / max_trials as f64;
                let y = y0 + ph - ph * f64::from(*g) / f64::from(max_gates);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"><title>{}</title></polyline>",
            pts.join(" "),
            tier_color(*tier),
            escape(id)
        );
    }
    legend(
        &mut out,
        560.0,
        60.0,
        &[
            ("line", "#d62728", "low (avg < 1)"),
            ("line", "#ff7f0e", "intermediate (1 to 3)"),
            ("line", "#2ca02c", "high (avg > 3)"),
        ],
    );
    out.push_str("</svg>\n");
    out
}
