use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use futures_util::StreamExt;
use slalom_core::config::Config;
use slalom_core::log::{read_log, EventKind};
use tokio_tungstenite::connect_async;

const EXIT_INVALID: i32 = 2;
const EXIT_UNCALIBRATED: i32 = 3;
const EXIT_ADDR_IN_USE: i32 = 4;

fn slalom(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slalom"))
        .current_dir(dir)
        .env_remove("SLALOM_CONFIG")
        .env_remove("SLALOM_LOG_DIR")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_is_byte_deterministic_and_prints_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--bot",
        "static",
        "--preset",
        "medium",
        "--level",
        "1",
        "--seed",
        "7",
        "--duration",
        "20",
    ];
    let a = stdout(&slalom(dir.path(), &[&args[..], &["--out", "a"]].concat()));
    let b = stdout(&slalom(dir.path(), &[&args[..], &["--out", "b"]].concat()));
    assert!(a.starts_with("seed 7 "), "{a}");
    let name = "static-medium-level1-seed7.paclog";
    let la = std::fs::read(dir.path().join("a").join(name)).unwrap();
    let lb = std::fs::read(dir.path().join("b").join(name)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.replace("a/", "b/"), b);
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "simulate",
        "--bot",
        "escort",
        "--seed",
        "3",
        "--trials",
        "4",
        "--duration",
        "10",
    ];
    let one = stdout(&slalom(
        dir.path(),
        &[&common[..], &["--out", "one", "--jobs", "1"]].concat(),
    ));
    let four = stdout(&slalom(
        dir.path(),
        &[&common[..], &["--out", "four", "--jobs", "4"]].concat(),
    ));
    assert_eq!(one.replace("one/", ""), four.replace("four/", ""));
}

#[test]
fn analyze_matches_golden_table() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&slalom(
        dir.path(),
        &[
            "simulate",
            "--bot",
            "size-balancer",
            "--seed",
            "1",
            "--trials",
            "3",
            "--duration",
            "30",
            "--out",
            "logs",
        ],
    ));
    let table = stdout(&slalom(
        dir.path(),
        &["analyze", "logs", "--out", "table.csv"],
    ));
    let golden = include_str!("golden/analyze.txt");
    assert_eq!(table, golden);
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("session,seed,time_s,"));
}

#[test]
fn render_writes_svg_files() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&slalom(
        dir.path(),
        &[
            "simulate",
            "--bot",
            "random:2",
            "--seed",
            "5",
            "--duration",
            "10",
            "--out",
            "logs",
        ],
    ));
    let out = stdout(&slalom(
        dir.path(),
        &[
            "render",
            "logs/random-level1-seed5.paclog",
            "--out",
            "c.svg",
        ],
    ));
    assert!(out.contains("seeds 5"));
    for kind in ["sequence", "tiers"] {
        stdout(&slalom(
            dir.path(),
            &[
                "render",
                "logs",
                "--kind",
                kind,
                "--out",
                &format!("{kind}.svg"),
            ],
        ));
    }
    for f in ["c.svg", "sequence.svg", "tiers.svg"] {
        let svg = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"), "{f}");
        assert!(svg.trim_end().ends_with("</svg>"), "{f}");
    }
    let replay = stdout(&slalom(
        dir.path(),
        &["replay", "logs/random-level1-seed5.paclog"],
    ));
    assert!(replay.contains("replay identically"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        slalom(dir.path(), &["simulate", "--bot", "warp"])
            .status
            .code(),
        Some(EXIT_INVALID)
    );
    assert_eq!(
        slalom(dir.path(), &["simulate", "--level", "9"])
            .status
            .code(),
        Some(EXIT_INVALID)
    );
    assert_eq!(
        slalom(dir.path(), &["analyze", "--segmentation", "halves", "x"])
            .status
            .code(),
        Some(EXIT_INVALID)
    );

    std::fs::write(dir.path().join("broken.json"), "{\"format_version\": 1}").unwrap();
    assert_eq!(
        slalom(dir.path(), &["--config", "broken.json", "lifetime"])
            .status
            .code(),
        Some(EXIT_INVALID)
    );

    std::fs::write(dir.path().join("garbage.paclog"), "not a log\n").unwrap();
    assert_eq!(
        slalom(dir.path(), &["analyze", "garbage.paclog"])
            .status
            .code(),
        Some(EXIT_INVALID)
    );

    let uncalibrated = Config {
        calibration: None,
        ..Config::default()
    };
    uncalibrated.save(dir.path().join("raw.json")).unwrap();
    assert_eq!(
        slalom(dir.path(), &["--config", "raw.json", "simulate"])
            .status
            .code(),
        Some(EXIT_UNCALIBRATED)
    );
    assert_eq!(
        slalom(dir.path(), &["--config", "raw.json", "lifetime"])
            .status
            .code(),
        Some(EXIT_UNCALIBRATED)
    );

    let zero = slalom(
        dir.path(),
        &["calibrate", "--budget", "0", "--out", "cal.json"],
    );
    assert_eq!(zero.status.code(), Some(EXIT_UNCALIBRATED));
    assert!(String::from_utf8_lossy(&zero.stdout).contains("search seed 1"));
    assert!(!dir.path().join("cal.json").exists());
}

#[test]
fn config_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let uncalibrated = Config {
        calibration: None,
        ..Config::default()
    };
    uncalibrated.save(dir.path().join("env.json")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_slalom"))
        .current_dir(dir.path())
        .env("SLALOM_CONFIG", "env.json")
        .args(["lifetime", "--preset", "none"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_UNCALIBRATED));
}

#[test]
fn lifetime_reports_all_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&slalom(dir.path(), &["lifetime"]));
    assert_eq!(
        out.lines().filter(|l| l.starts_with("[ok]")).count(),
        6,
        "{out}"
    );
    assert!(out.contains("seed 0"));
}

#[test]
fn port_in_use_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = holder.local_addr().unwrap().to_string();
    let out = slalom(dir.path(), &["serve", "--bind", &addr, "--log-dir", "logs"]);
    assert_eq!(out.status.code(), Some(EXIT_ADDR_IN_USE));
}

struct Served {
    child: Child,
    addr: SocketAddr,
}

fn serve(dir: &Path) -> Served {
    let mut child = Command::new(env!("CARGO_BIN_EXE_slalom"))
        .current_dir(dir)
        .env_remove("SLALOM_CONFIG")
        .env("SLALOM_LOG_DIR", "envlogs")
        .env("RUST_LOG", "warn")
        .args(["serve", "--bind", "127.0.0.1:0", "--tick-rate", "1000"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    Served { child, addr }
}

fn post(addr: SocketAddr, body: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "POST /session HTTP/1.1\r\nHost: t\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    raw
}

fn sigterm(child: &mut Child) {
    let status = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let status = child.wait().unwrap();
    assert!(status.success(), "{status:?}");
}

#[test]
fn serve_play_then_sigterm_leaves_a_complete_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut served = serve(dir.path());
    let mut config = Config::default();
    config.session.hands_free_games = 0;
    let body = serde_json::json!({ "id": "cli", "config": config }).to_string();
    let response = post(served.addr, &body);
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");

    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let base = format!("ws://{}/session/cli", served.addr);
        let (mut influencer, _) = connect_async(format!("{base}/join?role=influencer"))
            .await
            .unwrap();
        let (_coach, _) = connect_async(format!("{base}/join?role=coach"))
            .await
            .unwrap();
        // 10 simulated seconds at 50 ticks per second.
        loop {
            let frame = tokio::time::timeout(Duration::from_secs(5), influencer.next())
                .await
                .unwrap()
                .unwrap()
                .unwrap();
            let text = frame.into_text().unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            if v["tick"].as_u64().unwrap() >= 500 {
                break;
            }
        }
    });
    sigterm(&mut served.child);

    let text = std::fs::read_to_string(dir.path().join("envlogs/cli.paclog")).unwrap();
    assert!(text.ends_with('\n'));
    let log = read_log(dir.path().join("envlogs/cli.paclog")).unwrap();
    assert!(!log.truncated_record);
    assert!(log.steps().count() >= 500);
    assert!(matches!(
        log.events().last().unwrap().event,
        EventKind::SessionEnded
    ));
}

#[test]
fn sigterm_with_idle_session_still_finalizes() {
    let dir = tempfile::tempdir().unwrap();
    let mut served = serve(dir.path());
    let response = post(served.addr, r#"{"seed": 4}"#);
    assert!(response.contains("\"seed\":4"), "{response}");
    std::thread::sleep(Duration::from_millis(50));
    sigterm(&mut served.child);
    let logs: Vec<_> = std::fs::read_dir(dir.path().join("envlogs"))
        .unwrap()
        .collect();
    assert_eq!(logs.len(), 1);
    let log = read_log(logs[0].as_ref().unwrap().path()).unwrap();
    assert!(!log.session_truncated());
    assert_eq!(log.header.base_seed, Some(4));
}
