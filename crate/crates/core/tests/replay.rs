use wgtrack::adversary::{cumulative_flow, z_stream};
use wgtrack::engine::{random_initial_state, replay, run, LambdaSchedule, Mode, RunOptions, Scenario, StepSizes, Transcript};
use wgtrack::graph::DirectedGraph;
use wgtrack::objective::make_sensor_scenario;
use wgtrack::weights::{ScheduleMode, Scheme, WeightSchedule};

fn scenario(mode: Mode) -> Scenario {
    Scenario {
        weights: WeightSchedule::new(DirectedGraph::cycle(5).unwrap(), Scheme::Dithered { jitter: 0.5 }, ScheduleMode::TimeVarying, 21)
            .unwrap(),
        ensemble: make_sensor_scenario(5, 3, 2, 0.05, 8).unwrap(),
        mode,
        steps: StepSizes::new(vec![0.05, 0.08, 0.1, 0.06, 0.07]).unwrap(),
        lambda: LambdaSchedule::decaying(0.9, 5.0).unwrap(),
        x1: random_initial_state(5, 2, 8),
    }
}

#[test]
fn heterogeneous_wgt_on_time_varying_weights_converges() {
    let out = run(&scenario(Mode::Wgt), 20000, RunOptions::default()).unwrap();
    assert!(out.report.terminal_residual() < 1e-8, "{:e}", out.report.terminal_residual());
}

#[test]
fn transcript_survives_json_and_replays() {
    let sc = scenario(Mode::Wgt);
    let out = run(&sc, 150, RunOptions { record_transcript: true, record_states: true, ..Default::default() }).unwrap();
    let t = out.transcript.unwrap();
    let back: Transcript = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, t);
    assert_eq!(replay(&back, &sc).unwrap(), out.states);
}

#[test]
fn flows_sum_to_zero_across_agents() {
    // every y-message leaves one agent and enters another
    let sc = scenario(Mode::Wgt);
    let out = run(&sc, 60, RunOptions { record_transcript: true, ..Default::default() }).unwrap();
    let t = out.transcript.unwrap();
    let zs: Vec<_> = (1..=5).map(|i| z_stream(&t, i).unwrap()).collect();
    for k in 0..t.len() {
        for c in 0..2 {
            let s: f64 = zs.iter().map(|z| z[k][c]).sum();
            assert!(s.abs() < 1e-12);
        }
    }
    let cum = cumulative_flow(&t, 3).unwrap();
    assert_eq!(cum.len(), 60);
}

#[test]
fn replay_rejects_foreign_transcripts() {
    let sc = scenario(Mode::Wgt);
    let mut other = sc.clone();
    other.weights = WeightSchedule::uniform(DirectedGraph::new(5, &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (1, 3)]).unwrap()).unwrap();
    let out = run(&other, 5, RunOptions { record_transcript: true, ..Default::default() }).unwrap();
    assert!(replay(&out.transcript.unwrap(), &sc).is_err());
}
