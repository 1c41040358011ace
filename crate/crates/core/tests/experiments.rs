use std::path::Path;

use uavirs::agent::{train, AgentHparams};
use uavirs::experiment::{evaluate, mean_std, sweep, ExperimentConfig, PolicySpec, SweepAxis};
use uavirs::SystemConfig;

fn shipped(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn shipped_configs_match_profiles() {
    let desk = shipped("desk.toml");
    assert_eq!(desk.system, SystemConfig::desk());
    assert_eq!(desk.agent, AgentHparams::default());
    let full = shipped("full.toml");
    assert_eq!(full.system, SystemConfig::full());
    assert!(!full.system.full_beamformers());
}

#[test]
fn random_sum_rate_grows_with_power() {
    let cfg = SystemConfig::desk().resolved().unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    let rows = sweep(&cfg, SweepAxis::PMaxDbm, &[10.0, 20.0, 30.0], &[PolicySpec::Random], &seeds).unwrap();
    assert_eq!(rows.len(), 30);
    let means: Vec<f64> = [10.0, 20.0, 30.0]
        .iter()
        .map(|&v| mean_std(&rows.iter().filter(|r| r.value == v).map(|r| r.sum_rate).collect::<Vec<_>>()).0)
        .collect();
    assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
}

#[test]
fn longer_missions_fly_more_slots() {
    let cfg = SystemConfig { num_slots: 4, ..SystemConfig::desk() }.resolved().unwrap();
    let rows = sweep(&cfg, SweepAxis::MissionSeconds, &[4.0, 8.0], &[PolicySpec::NoIrs], &[1]).unwrap();
    assert_eq!(rows.len(), 2);
    let long = SweepAxis::MissionSeconds.apply(&cfg, 8.0).unwrap();
    let res = evaluate(&long, &PolicySpec::NoIrs, &[1]).unwrap();
    assert_eq!(res[0].1.trace.len(), 8);
}

#[test]
fn trained_agent_is_paired_with_baselines() {
    let cfg = SystemConfig { num_slots: 5, ..SystemConfig::desk() }.resolved().unwrap();
    let hp = AgentHparams { batch_size: 8, encoder_hidden: vec![16], head_hidden: vec![16], buffer_capacity: 500, ..AgentHparams::default() };
    let ckpt = train(cfg.clone(), hp, 3, 9).unwrap().checkpoint();
    let seeds = [3, 4];
    let agent = evaluate(&cfg, &PolicySpec::Agent(Box::new(ckpt)), &seeds).unwrap();
    let random = evaluate(&cfg, &PolicySpec::Random, &seeds).unwrap();
    for (a, r) in agent.iter().zip(&random) {
        assert_eq!(a.0.seed, r.0.seed);
        let (sa, sr) = (a.1.trajectory[0], r.1.trajectory[0]);
        assert_eq!((sa.q, sa.v), (sr.q, sr.v));
        assert!(a.0.ee_lb.is_finite() && a.0.ee_lb >= 0.0);
    }
}
