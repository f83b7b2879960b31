use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slalom_core::analytics::{attribution_of, cons_gates_of, Segmentation};
use slalom_core::bots::{simulate_in_memory, BotSpec, SimulationOptions};
use slalom_core::config::Config;
use slalom_core::engine::{Engine, EngineOptions, Seeds};
use slalom_core::influence::{
    apply_command, arbitrate, influence_vector, ArbitrationConfig, CircleId, Command, CommandKind,
    Influence, InfluenceSet, PresetSize,
};
use slalom_core::log::{parse, EventKind, Record};
use slalom_core::physics::{self, CartpoleState, DisturbanceSet, DisturbanceStream, PhysicsParams};
use slalom_core::policy::{model_preference, parse_policy, Action, PolicySpec, PreferenceVector};
use slalom_core::rules::{GateColor, LossCause};
use slalom_core::session::{parse_client_message, ClientMessage, Role, Session};

fn state() -> impl Strategy<Value = CartpoleState> {
    (-2.4..2.4f64, -3.0..3.0f64, -1.3..1.3f64, -3.0..3.0f64)
        .prop_map(|(x, v, t, w)| CartpoleState::new(x, v, t, w))
}

fn circle(id: CircleId) -> impl Strategy<Value = Influence> {
    (-2.4..2.4f64, -0.5..1.5f64, 0.0..1.0f64).prop_map(move |(x, y, i)| Influence {
        id,
        center_x: x,
        center_y: y,
        intensity: i,
    })
}

fn influences() -> impl Strategy<Value = InfluenceSet> {
    (circle(CircleId::Left), circle(CircleId::Right))
        .prop_map(|(left, right)| InfluenceSet { left, right })
}

fn preference() -> impl Strategy<Value = PreferenceVector> {
    (1e-6..1.0f64, 1e-6..1.0f64).prop_map(|(l, r)| PreferenceVector::new(l, r))
}

fn command() -> impl Strategy<Value = Command> {
    (any::<bool>(), 0..6usize).prop_map(|(left, op)| {
        Command::new(
            if left {
                CircleId::Left
            } else {
                CircleId::Right
            },
            CommandKind::ALL[op],
        )
    })
}

fn greedy() -> ArbitrationConfig {
    ArbitrationConfig {
        epsilon: 0.0,
        ..ArbitrationConfig::default()
    }
}

fn decide(m: PreferenceVector, inf: PreferenceVector) -> Action {
    arbitrate(m, inf, &greedy(), &mut ChaCha8Rng::seed_from_u64(0)).action
}

proptest! {
    #[test]
    fn mirrored_world_mirrors_the_action(s in state(), set in influences()) {
        let config = Config::default();
        let inf = influence_vector(&set, &s, &config.arbitration);
        let inf_m = influence_vector(&set.mirrored(), &s.mirrored(), &config.arbitration);
        prop_assert_eq!(inf_m, inf.swapped());
        let m = model_preference(&s, &config.policy);
        let m_m = model_preference(&s.mirrored(), &config.policy);
        prop_assert_eq!(m_m, m.swapped());
        // Exact ties break to the left on both sides, so skip them.
        let p = m.elementwise(&inf);
        prop_assume!(p.left != p.right);
        prop_assert_eq!(decide(m_m, inf_m), decide(m, inf).mirrored());
    }

    #[test]
    fn positive_scaling_never_changes_the_choice(m in preference(), inf in preference(), a in 1e-3..1e3f64, b in 1e-3..1e3f64) {
        let scaled = |v: PreferenceVector, k: f64| PreferenceVector::new(v.left * k, v.right * k);
        let p = m.elementwise(&inf);
        prop_assume!((p.left - p.right).abs() > 1e-9 * p.left.max(p.right));
        prop_assert_eq!(decide(scaled(m, a), scaled(inf, b)), decide(m, inf));
    }

    #[test]
    fn growing_a_circle_pulls_harder_toward_it(s in state(), set in influences(), extra in 0.0..1.0f64) {
        let config = ArbitrationConfig::default();
        let before = influence_vector(&set, &s, &config);
        let mut bigger = set;
        bigger.right.intensity += extra;
        let after = influence_vector(&bigger, &s, &config);
        let toward = |v: PreferenceVector| v.right - v.left;
        let dx = set.right.center_x - s.x;
        if dx > 0.0 {
            prop_assert!(toward(after) >= toward(before) - 1e-12);
        } else if dx < 0.0 {
            prop_assert!(toward(after) <= toward(before) + 1e-12);
        }
    }

    #[test]
    fn influence_vector_is_positive_and_floored(s in state(), set in influences()) {
        let config = ArbitrationConfig::default();
        let inf = influence_vector(&set, &s, &config);
        prop_assert!(inf.is_valid());
        prop_assert!(inf.left >= config.neutral_floor && inf.right >= config.neutral_floor);
    }

    #[test]
    fn analytic_policy_is_antisymmetric_and_normalised(s in state()) {
        let spec = Config::default().policy;
        let m = model_preference(&s, &spec);
        prop_assert!((m.left + m.right - 1.0).abs() < 1e-15);
        prop_assert!(m.left > 0.0 && m.right > 0.0);
        prop_assert_eq!(model_preference(&s.mirrored(), &spec), m.swapped());
        let mut moved = s;
        moved.x = -s.x;
        moved.x_dot = 0.5;
        prop_assert_eq!(model_preference(&moved, &spec), m);
    }

    #[test]
    fn commands_keep_circles_on_screen(start in influences(), cmds in proptest::collection::vec(command(), 0..200)) {
        let config = Config::default();
        let bounds = config.bounds();
        let mut set = start;
        for c in cmds {
            let before = set;
            set = apply_command(&set, c, &config.commands, &bounds);
            prop_assert!(set.is_within(&bounds, config.commands.intensity_max));
            let untouched = match c.circle {
                CircleId::Left => (set.right, before.right),
                CircleId::Right => (set.left, before.left),
            };
            prop_assert_eq!(untouched.0, untouched.1);
        }
    }

    #[test]
    fn physics_mirror_holds_along_trajectories(s in state(), forces in proptest::collection::vec(-10.0..10.0f64, 1..100)) {
        let p = PhysicsParams::default();
        let none = DisturbanceSet::none();
        let mut stream = DisturbanceStream::new(0);
        let (mut a, mut b) = (s, s.mirrored());
        for f in forces {
            a = physics::step(&a, f, &p, &none, &mut stream).unwrap();
            b = physics::step(&b, -f, &p, &none, &mut stream).unwrap();
            prop_assert_eq!(b, a.mirrored());
        }
    }

    #[test]
    fn trials_account_for_every_passed_gate(codes in proptest::collection::vec(0..6u8, 0..80)) {
        let events: Vec<EventKind> = codes.iter().map(|c| match c {
            0 | 1 => EventKind::GatePassed { gate: 0, color: GateColor::Blue },
            2 => EventKind::GateFailed { gate: 0, color: GateColor::Red },
            3 => EventKind::GameWon,
            4 => EventKind::GameLost { cause: LossCause::ExitRight },
            _ => EventKind::GameLost { cause: LossCause::Fall },
        }).collect();
        let passed = events.iter().filter(|e| matches!(e, EventKind::GatePassed { .. })).count() as u32;
        let merged = cons_gates_of(&events, Segmentation::MergeWins);
        let split = cons_gates_of(&events, Segmentation::SplitAtWins);
        for b in [&merged, &split] {
            prop_assert_eq!(b.trials.iter().map(|t| t.gates_passed).sum::<u32>(), passed);
            prop_assert_eq!(b.total_passed, passed);
        }
        prop_assert!(split.trials.len() >= merged.trials.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attribution_partitions_every_step(seed in any::<u64>(), bot in 0..3usize) {
        let bot = [BotSpec::size_balancer(), BotSpec::escort(), BotSpec::Random { seed, rate: 0.3 }][bot];
        let options = SimulationOptions { base_seed: seed, level: 1, duration_s: 4.0, hands_free_games: 0 };
        let (_, text) = simulate_in_memory(&Config::default(), &bot, &options, "attr").unwrap();
        let log = parse(&text).unwrap();
        let a = attribution_of(log.play_steps()).unwrap();
        prop_assert_eq!(a.steps, 200);
        prop_assert!((a.influence_pct + a.model_pct + a.stochastic_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn pauses_are_transparent(seed in any::<u64>(), cmds in proptest::collection::vec(proptest::option::of(command()), 50..300), pauses in proptest::collection::vec((0..300usize, 1..20u32), 0..5)) {
        let config = Config::default();
        let run = |paused: bool| {
            let options = EngineOptions::headless(&config, 1, PresetSize::Medium);
            let (mut engine, _) = Engine::new(config.clone(), Seeds::from_base(seed), options).unwrap();
            let mut records = Vec::new();
            for (i, c) in cmds.iter().enumerate() {
                if paused {
                    for (_, idle) in pauses.iter().filter(|(at, _)| *at == i) {
                        engine.pause(slalom_core::log::PauseSource::Coach).unwrap();
                        for _ in 0..*idle {
                            engine.idle_tick();
                        }
                        engine.resume(slalom_core::log::PauseSource::Coach).unwrap();
                    }
                }
                records.push(engine.step(*c).unwrap().record);
            }
            records
        };
        prop_assert_eq!(run(true), run(false));
    }

    /// The log depends on the tick each message lands in, never on how the
    /// messages were spread inside that tick or on idle wall-clock time.
    #[test]
    fn same_timeline_same_log(seed in any::<u64>(), timeline in proptest::collection::vec((0..400u64, command()), 0..60)) {
        let mut config = Config::default();
        config.session.hands_free_games = 0;
        let play = |jitter: bool| {
            let mut s = Session::create("t", config.clone(), seed, || Ok(Vec::new())).unwrap();
            s.join(Role::Influencer);
            s.join(Role::Coach);
            for tick in 0..400u64 {
                for (_, c) in timeline.iter().filter(|(at, _)| *at == tick) {
                    if jitter {
                        s.flush().unwrap();
                    }
                    s.handle(Role::Influencer, ClientMessage::Command(*c)).unwrap();
                }
                s.tick().unwrap();
            }
            while s.queued_commands() > 0 {
                s.tick().unwrap();
            }
            s.close().unwrap();
            let log = parse(std::str::from_utf8(s.log().get_ref()).unwrap()).unwrap();
            log.records
        };
        let a: Vec<Record> = play(false);
        prop_assert_eq!(&a, &play(true));
        prop_assert_eq!(a.iter().filter(|r| matches!(r, Record::Step(s) if s.command.is_some())).count(), timeline.len());
    }

    #[test]
    fn arbitrary_text_never_panics_the_decoders(text in ".{0,400}") {
        let _ = parse(&text);
        let _ = parse_client_message(&text);
        let _ = parse_policy(&text);
        let _ = Config::from_json(&text);
    }
}

proptest! {
    #[test]
    fn mutated_client_frames_are_rejected_or_valid(cmd in command(), cut in 0..60usize, junk in "[ -~]{0,6}") {
        let frame = ClientMessage::Command(cmd).to_json();
        let at = cut.min(frame.len());
        let mutated = format!("{}{}{}", &frame[..at], junk, &frame[at..]);
        if let Ok(msg) = parse_client_message(&mutated) {
            prop_assert_eq!(parse_client_message(&msg.to_json()), Ok(msg));
        }
    }

    #[test]
    fn mutated_logs_never_panic(seed in 0..50u64, cut in 0..4000usize, junk in "[ -~\n]{0,12}") {
        let options = SimulationOptions { base_seed: seed, level: 1, duration_s: 0.2, hands_free_games: 0 };
        let (_, text) = simulate_in_memory(&Config::default(), &BotSpec::size_balancer(), &options, "m").unwrap();
        let at = cut.min(text.len());
        let mutated = format!("{}{}{}", &text[..at], junk, &text[at..]);
        if let Ok(log) = parse(&mutated) {
            let again = parse(&log.serialize().unwrap()).unwrap();
            prop_assert_eq!(again.records, log.records);
        }
    }
}

/// A non-negative linear policy built from the analytic gains picks the same
/// action as the logistic one on a 100 x 100 grid of pole states.
#[test]
fn linear_weights_reproduce_the_analytic_argmax() {
    let analytic = Config::default().policy;
    let PolicySpec::AnalyticBalancer {
        k_theta,
        k_theta_dot,
        ..
    } = analytic
    else {
        panic!("default policy is analytic");
    };
    let linear = PolicySpec::LinearWeights {
        weights: vec![
            0.0,
            0.0,
            -k_theta,
            -k_theta_dot,
            0.0,
            0.0,
            0.0,
            k_theta,
            k_theta_dot,
            0.0,
        ],
    };
    linear.validate().unwrap();
    let mut disagreements = 0;
    for i in 0..100 {
        for j in 0..100 {
            let theta = -0.5 + f64::from(i) / 99.0;
            let theta_dot = -2.0 + 4.0 * f64::from(j) / 99.0;
            let s = CartpoleState::new(0.3, -0.1, theta, theta_dot);
            let a = model_preference(&s, &analytic).argmax();
            let b = model_preference(&s, &linear).argmax();
            disagreements += usize::from(a != b);
        }
    }
    assert_eq!(disagreements, 0);
}
