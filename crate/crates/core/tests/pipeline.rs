use std::f64::consts::PI;

use adaptrack::harness::config::InitialEstimate;
use adaptrack::harness::pipeline::{self, perturbed_estimate};
use adaptrack::harness::{run_experiment, run_pipeline, sweep_delta, ExperimentConfig};
use adaptrack::mpc::{optimality_gap, run_receding_horizon, ModelEstimate};
use adaptrack::msac::ideal_gains;
use adaptrack::plant::ExoSignal;
use adaptrack::simlog::{Phase, SimLog};

fn short() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::shipped();
    cfg.schedule.t_adapt = 4.0 * PI;
    cfg.schedule.t_mpc = 2.0;
    cfg
}

#[test]
fn phases_hand_over_the_same_state() {
    let exp = run_experiment(&short()).unwrap();
    let last = exp.msac.last().unwrap();
    let first = exp.mpc.first().unwrap();
    assert_eq!(last.t, first.t);
    assert_eq!(last.x_p, first.x_p);
    assert_eq!(exp.oracle.first().unwrap().x_p, first.x_p);
    assert!(exp.msac.rows().iter().all(|r| r.phase == Phase::Msac));
    assert!(exp.mpc.rows().iter().all(|r| r.phase == Phase::Mpc && r.lyapunov.is_nan()));
    assert!(exp.mpc.rows().iter().all(|r| r.theta_err == exp.theta_err_switch));
}

#[test]
fn pure_tracking_run_with_exact_estimates_has_no_gap() {
    let mut cfg = short();
    cfg.schedule.t_adapt = 0.0;
    cfg.tuner.init = InitialEstimate::Scale(1.0);
    let exp = run_experiment(&cfg).unwrap();
    assert_eq!(exp.msac.len(), 1);
    assert!(exp.pe.is_none());
    assert!(!exp.pe_verdict());
    assert!(exp.gap.abs() <= 1e-6, "gap {}", exp.gap);
    assert!(exp.theta_err_switch < 1e-12);
}

#[test]
fn constant_target_is_flagged_but_completes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short();
    cfg.exo = ExoSignal::constant(&[0.5, -0.5]).unwrap();
    cfg.output.dir = dir.path().to_path_buf();
    cfg.output.plots = false;
    let report = run_pipeline(&cfg).unwrap();
    assert!(!report.pe_verdict);
    assert!(!report.learning_guaranteed);
    assert!(report.pe_level.unwrap() < cfg.tuner.pe_alpha);
    assert!(report.gap.is_finite());
}

#[test]
fn pipeline_writes_logs_report_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short();
    cfg.output.dir = dir.path().join("nested");
    let report = run_pipeline(&cfg).unwrap();
    for name in [
        "msac.csv",
        "mpc.csv",
        "oracle.csv",
        "pe.csv",
        "gap.csv",
        "report.json",
        "states.svg",
        "inputs.svg",
        "theta_error.svg",
        "mpc_states.svg",
        "mpc_inputs.svg",
    ] {
        let path = cfg.output.dir.join(name);
        assert!(path.is_file(), "{name} missing");
        assert!(report.artifacts.contains(&path), "{name} not reported");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.output.dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["gap"].as_f64().unwrap(), report.gap);

    let mpc = SimLog::load(&cfg.output.dir.join("mpc.csv")).unwrap();
    let oracle = SimLog::load(&cfg.output.dir.join("oracle.csv")).unwrap();
    let gap = optimality_gap(&mpc, &oracle, &cfg.weights, &cfg.exo).unwrap();
    assert!((gap - report.gap).abs() <= 1e-9);
}

#[test]
fn exact_model_reproduces_the_oracle() {
    let cfg = short();
    let t0 = cfg.schedule.t_adapt;
    let span = (t0, t0 + cfg.schedule.t_mpc);
    let mpc_cfg = pipeline::mpc_config(&cfg, span.1).unwrap();
    let gains = ideal_gains(&cfg.plant, &cfg.reference).unwrap();
    let exact = ModelEstimate::exact(&cfg.plant).unwrap();
    let recovered = perturbed_estimate(&cfg, &gains, 0.0).unwrap();
    let a = run_receding_horizon(&exact, &mpc_cfg, &cfg.plant, span, &cfg.plant.x0, &cfg.exo, 0.0).unwrap();
    let b = run_receding_horizon(&recovered, &mpc_cfg, &cfg.plant, span, &cfg.plant.x0, &cfg.exo, 0.0).unwrap();
    let dev = a
        .rows()
        .iter()
        .zip(b.rows())
        .map(|(r, s)| (&r.x_p - &s.x_p).norm())
        .fold(0.0, f64::max);
    assert!(dev <= 1e-6, "deviation {dev}");
}

#[test]
fn injected_error_sits_at_the_requested_distance() {
    let cfg = short();
    let gains = ideal_gains(&cfg.plant, &cfg.reference).unwrap();
    let est = perturbed_estimate(&cfg, &gains, 0.1).unwrap();
    let scale = 1.0 - 0.1 / gains.theta_a().norm();
    for (l, t) in est.lambda_hat.iter().zip(cfg.plant.lambda.iter()) {
        assert!((l - scale * t).abs() < 1e-12);
    }
}

#[test]
fn gap_shrinks_with_model_error_and_stays_non_negative() {
    let mut cfg = ExperimentConfig::shipped();
    cfg.schedule.t_mpc = 4.0;
    let sweep = sweep_delta(&cfg, &[0.2, 0.1, 0.05, 0.025]).unwrap();
    for p in &sweep.points {
        assert!(p.gap >= -1e-6, "gap {} at {}", p.gap, p.delta);
        assert!((p.v_mpc - p.v_star - p.gap).abs() < 1e-9 * p.v_star.max(1.0));
    }
    for w in sweep.points.windows(2) {
        assert!(w[1].gap < w[0].gap);
    }
    assert!(sweep.slope > 1.0);
}

#[test]
fn sweep_rejects_negative_delta() {
    assert!(sweep_delta(&short(), &[0.1, -0.1]).is_err());
}

#[test]
fn adaptive_signals_stay_bounded() {
    let mut cfg = ExperimentConfig::shipped();
    cfg.schedule.t_adapt = 8.0 * PI;
    let (run, _) = pipeline::adapt(&cfg).unwrap();
    let rows = run.log.rows();
    // transient: the first period of the slowest tone
    let split = rows.iter().position(|r| r.t > 2.0 * PI).unwrap();
    let peak = |rs: &[adaptrack::simlog::LogRow]| {
        rs.iter().map(|r| (&r.x_p - &r.x_m).norm().max(r.theta_err)).fold(0.0, f64::max)
    };
    assert!(peak(&rows[split..]) <= 10.0 * peak(&rows[..split]));
    assert!(run.tuner.xi.iter().all(|x| x.is_finite()));
}

#[test]
fn riccati_table_covers_the_tracking_phase() {
    let cfg = short();
    let table = pipeline::riccati_table(&cfg).unwrap();
    assert_eq!(table.grid().t_start(), cfg.schedule.t_adapt);
    let last = table.grid().len() - 1;
    assert_eq!(table.s2(last), &cfg.weights.q_f);
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,s2_11,s2_12,s2_22,s1_1,s1_2,s0\n"));
    assert_eq!(text.lines().count(), table.grid().len() + 1);
}
