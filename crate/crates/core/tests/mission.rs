//! Closed-loop missions on small worlds: completion, determinism, operator commands and logs.

use sylva_core::autonomy::Phase;
use sylva_core::geom::Extent;
use sylva_core::metrics::InterventionCause;
use sylva_core::mission::{
    forest_world, parse_client_message, read_event_log, replay_messages, run_mission,
    run_mission_with, AutoPolicy, ClientCommand, ClientMessage, EventMsg, MissionConfig,
    MissionRunner, ScriptedCommand, ServerBody, ServerMessage, SurveyConfig, LOCAL_CLIENT,
};
use sylva_core::par::Execution;
use sylva_core::sim::{generate_world, Patch, PatchKind, VelocityCommand};

fn small(seed: u64, trees: usize) -> MissionConfig {
    let extent = Extent::new(0.0, 0.0, 30.0, 20.0);
    let mut world = forest_world(extent, trees, seed);
    world.obstacles.clear();
    MissionConfig {
        name: "small".into(),
        world: Some(world),
        survey: Some(SurveyConfig::rectangle(&extent)),
        seed,
        max_time: 900.0,
        ..MissionConfig::default()
    }
}

fn events(msgs: &[ServerMessage]) -> impl Iterator<Item = &EventMsg> {
    msgs.iter().filter_map(|m| match &m.body {
        ServerBody::Event(e) => Some(e),
        _ => None,
    })
}

fn run_collect(runner: &mut MissionRunner) -> Vec<ServerMessage> {
    let mut all = Vec::new();
    runner
        .run_to_end(|m| {
            all.extend(m);
            Ok(())
        })
        .unwrap();
    all
}

#[test]
fn small_mission_completes_and_finds_trees() {
    let out = run_mission(small(2, 6)).unwrap();
    assert_eq!(out.report.outcome, "completed");
    assert_eq!(out.report.interventions, 0);
    assert!(out.report.tree_count >= 5, "{}", out.report.tree_count);
    assert!(out.report.area_ha > 0.05);
    assert!(out.loop_closures > 0);
    let plan = out.plan.unwrap();
    assert_eq!(out.mission.unwrap().status.len(), plan.waypoints.len());
}

#[test]
fn treeless_world_gives_empty_inventory() {
    let out = run_mission(small(5, 0)).unwrap();
    assert_eq!(out.report.outcome, "completed");
    assert_eq!(out.report.tree_count, 0);
    assert_eq!(out.report.trees_with_dbh, 0);
}

#[test]
fn reports_are_byte_identical_across_runs_and_execution_modes() {
    let dir = tempfile::tempdir().unwrap();
    let mut a_cfg = small(9, 4);
    a_cfg.output = Some(dir.path().join("a"));
    let mut b_cfg = a_cfg.clone();
    b_cfg.output = Some(dir.path().join("b"));
    let a = run_mission_with(a_cfg, Execution::Parallel).unwrap();
    let b = run_mission_with(b_cfg, Execution::Sequential).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    for f in [
        "report.json",
        "events.jsonl",
        "marteloscope.csv",
        "pose_graph.g2o",
    ] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn event_log_replays_to_the_same_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(4, 3);
    cfg.output = Some(dir.path().to_path_buf());
    let out = run_mission(cfg).unwrap();
    let log = read_event_log(&dir.path().join("events.jsonl")).unwrap();
    assert!(log.truncated.is_none());
    assert!(matches!(
        log.messages.last().unwrap().body,
        ServerBody::Event(EventMsg::MissionEnded { .. })
    ));
    assert!(log
        .messages
        .windows(2)
        .all(|w| w[0].seq < w[1].seq && w[0].t <= w[1].t));
    assert_eq!(replay_messages(&log, 1.0).unwrap(), log.messages);
    let fast = replay_messages(&log, 10.0).unwrap();
    assert!((fast.last().unwrap().t - out.report.mission_time_s / 10.0).abs() < 1e-9);
}

#[test]
fn rescue_policy_frees_a_trapped_robot() {
    let cfg = small(3, 0);
    let mut world = generate_world(&cfg.world_spec().unwrap()).unwrap();
    // A soft-ground patch halfway along the first row.
    let plan = sylva_core::autonomy::plan_survey_with(
        &sylva_core::geom::Polygon::new(cfg.survey.as_ref().unwrap().polygon.clone()),
        &cfg.survey.as_ref().unwrap().params(),
    )
    .unwrap();
    let (a, b) = (&plan.waypoints[0], &plan.waypoints[1]);
    world.patches.push(Patch {
        id: 99,
        center: [0.5 * (a.x + b.x), 0.5 * (a.y + b.y)],
        radius: 0.8,
        kind: PatchKind::Damp,
    });
    let mut runner = MissionRunner::with_world(cfg, world).unwrap();
    runner.submit_local(ClientCommand::Start {});
    let msgs = run_collect(&mut runner);
    let out = runner.finish().unwrap();
    assert_eq!(out.report.outcome, "completed");
    assert!(out.report.interventions >= 1);
    assert!(out
        .record
        .interventions
        .iter()
        .all(|i| i.cause == InterventionCause::Trapped));
    let ev: Vec<_> = events(&msgs).collect();
    assert!(ev.iter().any(|e| matches!(e, EventMsg::Trapped { .. })));
    assert!(ev
        .iter()
        .any(|e| matches!(e, EventMsg::InterventionExtended { trapped: false, .. })));
    // The wait before the push is part of the intervention.
    let first = out.record.interventions[0];
    assert!(first.end - first.start >= 15.0 - 1e-9);
}

#[test]
fn interrupt_holds_the_robot_until_resume() {
    let mut runner = MissionRunner::new(small(6, 2)).unwrap();
    runner.submit_local(ClientCommand::Start {});
    while runner.time() < 20.0 {
        runner.step().unwrap();
    }
    runner.submit_local(ClientCommand::Interrupt { cause: None });
    runner.step().unwrap();
    assert_eq!(runner.phase(), Phase::Paused);
    let held = runner.robot().pose4();
    let t = runner.time();
    for _ in 0..50 {
        runner.step().unwrap();
        assert_eq!(runner.robot().cmd, VelocityCommand::ZERO);
    }
    assert_eq!(runner.robot().pose4(), held);
    assert!(
        (runner.time() - t - 5.0).abs() < 1e-9,
        "time runs while paused"
    );
    let goal = runner
        .drain_outbox()
        .iter()
        .rev()
        .find_map(|m| match &m.body {
            ServerBody::State(s) => s.goal,
            _ => None,
        })
        .unwrap();
    runner.submit_local(ClientCommand::Resume { goal });
    let rest = run_collect(&mut runner);
    let out = runner.finish().unwrap();
    assert_eq!(out.report.outcome, "completed");
    assert_eq!(out.report.interventions, 1);
    assert_eq!(out.record.interventions[0].cause, InterventionCause::Safety);
    assert!(events(&rest).any(|e| matches!(e, EventMsg::InterventionClosed { .. })));
}

#[test]
fn command_lock_belongs_to_the_first_commanding_client() {
    let mut runner = MissionRunner::new(small(1, 0)).unwrap();
    let msg = |seq, text: &str| -> ClientMessage {
        let mut m = parse_client_message(text).unwrap();
        m.seq = seq;
        m
    };
    runner.submit(1, msg(1, r#"{"seq":1,"type":"start"}"#));
    runner.submit(2, msg(1, r#"{"seq":1,"type":"interrupt"}"#));
    runner.step().unwrap();
    let out = runner.drain_outbox();
    let acks: Vec<_> = events(&out)
        .filter_map(|e| match e {
            EventMsg::Ack {
                client, command, ..
            } => Some((*client, command.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(acks, vec![(1, "start".to_string())]);
    let rej = out
        .iter()
        .find(|m| matches!(m.body, ServerBody::Event(EventMsg::Reject { .. })))
        .unwrap();
    assert_eq!(rej.to, Some(2));
    assert_eq!(runner.controller(), Some(1));
    assert_eq!(runner.phase(), Phase::Executing);

    // The on-site stand-in is never locked out.
    runner.submit_local(ClientCommand::Interrupt { cause: None });
    runner.step().unwrap();
    assert_eq!(runner.phase(), Phase::Paused);
    assert_eq!(runner.controller(), Some(1));

    runner.submit(
        1,
        msg(
            2,
            r#"{"seq":2,"type":"set_params","payload":{"release_control":true}}"#,
        ),
    );
    runner.submit(
        2,
        msg(2, r#"{"seq":2,"type":"resume","payload":{"goal":0}}"#),
    );
    runner.step().unwrap();
    assert_eq!(runner.controller(), Some(2));
    assert_eq!(runner.phase(), Phase::Executing);

    runner.disconnect(2);
    assert_eq!(runner.controller(), None);
}

#[test]
fn malformed_and_invalid_commands_are_rejected_without_side_effects() {
    let mut runner = MissionRunner::new(small(1, 0)).unwrap();
    runner.reject_malformed(3, 7, "malformed JSON".into());
    runner.submit(
        3,
        parse_client_message(r#"{"seq":8,"type":"push","payload":{"distance":1,"heading":0}}"#)
            .unwrap(),
    );
    runner.step().unwrap();
    let out = runner.drain_outbox();
    let rejects: Vec<_> = out
        .iter()
        .filter(|m| matches!(m.body, ServerBody::Event(EventMsg::Reject { .. })))
        .collect();
    assert_eq!(rejects.len(), 2);
    assert!(rejects.iter().all(|m| m.to == Some(3)));
    assert_eq!(runner.phase(), Phase::Idle);
    assert_eq!(runner.time(), 0.0);
}

#[test]
fn scripted_and_wire_commands_give_identical_reports() {
    let script = vec![
        ScriptedCommand {
            t: 12.0,
            command: ClientCommand::Interrupt { cause: None },
        },
        ScriptedCommand {
            t: 20.0,
            command: ClientCommand::Push {
                distance: 0.5,
                heading: 1.0,
            },
        },
        ScriptedCommand {
            t: 25.0,
            command: ClientCommand::Resume { goal: 1 },
        },
    ];
    let mut headless = small(8, 3);
    headless.policy = AutoPolicy::Scripted {
        commands: script.clone(),
    };
    let a = run_mission(headless).unwrap();

    // The same commands as JSON frames from a remote client at the same mission times.
    let mut cfg = small(8, 3);
    cfg.policy = AutoPolicy::Off;
    let mut runner = MissionRunner::new(cfg).unwrap();
    runner.submit(
        5,
        parse_client_message(r#"{"seq":1,"type":"start"}"#).unwrap(),
    );
    let frames: Vec<(f64, String)> = script
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let m = ClientMessage {
                seq: i as u64 + 2,
                command: c.command.clone(),
            };
            (c.t, serde_json::to_string(&m).unwrap())
        })
        .collect();
    let mut next = 0;
    while !runner.is_finished() {
        while next < frames.len() && frames[next].0 <= runner.time() + 1e-9 {
            runner.submit(5, parse_client_message(&frames[next].1).unwrap());
            next += 1;
        }
        runner.step().unwrap();
        let msgs = runner.drain_outbox();
        assert!(!msgs
            .iter()
            .any(|m| matches!(m.body, ServerBody::Event(EventMsg::Reject { .. }))));
    }
    let b = runner.finish().unwrap();
    assert_eq!(a.report.interventions, 1);
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(LOCAL_CLIENT, 0);
}
