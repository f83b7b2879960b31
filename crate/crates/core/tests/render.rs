use slalom_core::analytics::{render_sequence, render_session_circle, render_tiers, Segmentation};
use slalom_core::config::Config;
use slalom_core::influence::{CircleId, Command, CommandKind};
use slalom_core::log::{parse, ParsedLog};
use slalom_core::session::{ClientMessage, Role, Session};

const GOLDEN: &str = "tests/golden/session_circle.svg";

/// 500 steps with a few resizes and a 40-tick pause at step 200.
fn fixed_log() -> ParsedLog {
    let mut config = Config::default();
    config.session.hands_free_games = 0;
    let mut s = Session::create("golden", config, 42, || Ok(Vec::new())).unwrap();
    s.join(Role::Influencer);
    s.join(Role::Coach);
    while s.tick_index() < 500 {
        let t = s.tick_index();
        if t % 25 == 0 {
            let op = if t % 50 == 0 {
                CommandKind::Grow
            } else {
                CommandKind::Shrink
            };
            let circle = if t % 100 < 50 {
                CircleId::Right
            } else {
                CircleId::Left
            };
            s.handle(
                Role::Influencer,
                ClientMessage::Command(Command::new(circle, op)),
            )
            .unwrap();
        }
        if t == 200 && !s.engine().is_paused() {
            s.handle(Role::Coach, ClientMessage::Pause).unwrap();
            s.tick().unwrap();
            for _ in 0..40 {
                s.tick().unwrap();
            }
            s.handle(Role::Coach, ClientMessage::Resume).unwrap();
        }
        s.tick().unwrap();
    }
    s.close().unwrap();
    parse(std::str::from_utf8(s.log().get_ref()).unwrap()).unwrap()
}

#[test]
fn session_circle_matches_golden() {
    let log = fixed_log();
    assert_eq!(log.steps().count(), 500);
    let svg = render_session_circle(&log);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(GOLDEN, &svg).unwrap();
    }
    let golden = std::fs::read_to_string(GOLDEN)
        .expect("golden file missing; run with UPDATE_GOLDEN=1 to create it");
    assert!(svg == golden, "render differs from {GOLDEN}");
}

#[test]
fn render_is_a_function_of_the_log() {
    let log = fixed_log();
    let mut shifted = log.clone();
    shifted.header.created_unix_ms += 1234;
    assert_eq!(render_session_circle(&log), render_session_circle(&shifted));
}

fn group<'a>(svg: &'a str, id: &str) -> &'a str {
    let start = svg
        .find(&format!("<g id=\"{id}\">"))
        .unwrap_or_else(|| panic!("no group {id}"));
    let end = start + svg[start..].find("</g>").unwrap();
    &svg[start..end]
}

#[test]
fn pause_draws_a_grey_arc() {
    let svg = render_session_circle(&fixed_log());
    let pauses = group(&svg, "pauses");
    assert_eq!(pauses.matches("<path").count(), 1);
    assert!(pauses.contains("#9e9e9e"));
}

#[test]
fn empty_session_renders_legend_only() {
    let config = Config::default();
    let s = Session::create("empty", config, 1, || Ok(Vec::new())).unwrap();
    let log = parse(std::str::from_utf8(s.log().get_ref()).unwrap()).unwrap();
    let svg = render_session_circle(&log);
    assert!(svg.contains("<g id=\"legend\""));
    assert!(!svg.contains("id=\"route\""));
    assert!(!svg.contains("id=\"pauses\""));
    assert!(svg.ends_with("</svg>\n"));

    for other in [
        render_sequence(&[log.clone()]),
        render_tiers(&[log], Segmentation::MergeWins),
        render_sequence(&[]),
    ] {
        assert!(other.contains("<g id=\"legend\""));
        assert!(other.ends_with("</svg>\n"));
    }
}

#[test]
fn elements_are_balanced() {
    let svg = render_session_circle(&fixed_log());
    for tag in ["g", "svg", "title", "text"] {
        let open =
            svg.matches(&format!("<{tag} ")).count() + svg.matches(&format!("<{tag}>")).count();
        assert_eq!(open, svg.matches(&format!("</{tag}>")).count(), "{tag}");
    }
    assert!(!svg.contains("NaN"));
}
