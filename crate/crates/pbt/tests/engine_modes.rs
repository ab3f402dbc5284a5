//! Execution-mode behaviour: async and partial-sync scheduling, member
//! failure handling, and lineage analysis on full engine runs.

use std::collections::BTreeMap;

use pbt::analysis::{build_phylogeny, extract_lineages, EventKind};
use pbt::core::{best, ExploitMask, HyperValue, HyperparamVector, MemberId};
use pbt::engine::{run_experiment, EngineError, ExecMode, ExperimentConfig};
use pbt::strategies::{ExploitConfig, ExploreConfig};
use pbt::tasks::{LogisticParams, LogisticRegressionTask, QuadraticTask};

fn toy_h(h0: f64, h1: f64) -> HyperparamVector {
    HyperparamVector::from_pairs([
        ("h0".to_string(), HyperValue::Num(h0)),
        ("h1".to_string(), HyperValue::Num(h1)),
    ])
}

fn fig2_config(seed: u64, total_steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(2, total_steps);
    cfg.ready_interval = 4;
    cfg.exploit = ExploitConfig::Truncation { fraction: 0.5 };
    cfg.explore = ExploreConfig::DirectionNoise { sigma: 0.1 };
    cfg.exploit_mask = ExploitMask::WeightsOnly;
    cfg.seed = seed;
    cfg.initial_h = Some(vec![toy_h(1.0, 0.0), toy_h(0.0, 1.0)]);
    cfg
}

#[test]
fn async_and_serial_both_converge_on_the_toy_task() {
    let task = QuadraticTask::new(0.01);
    let mut cfg = fig2_config(3, 400);
    let serial = run_experiment(&cfg, &task, None).unwrap();
    assert!(serial.best.p > 1.1, "serial Q = {}", serial.best.p);

    cfg.mode = ExecMode::Async;
    let parallel = run_experiment(&cfg, &task, None).unwrap();
    assert!(parallel.best.p > 1.1, "async Q = {}", parallel.best.p);
    assert!(parallel.final_population.iter().all(|m| m.t == 400));
    assert_eq!(parallel.total_step_calls, 2 * 400);
}

#[test]
fn partial_sync_converges_and_sees_coherent_snapshots() {
    let task = QuadraticTask::new(0.01);
    let mut cfg = fig2_config(5, 400);
    cfg.mode = ExecMode::PartialSync;
    cfg.quantum = Some(cfg.ready_interval);
    let report = run_experiment(&cfg, &task, None).unwrap();
    assert!(report.best.p > 1.1, "partial-sync Q = {}", report.best.p);
    assert!(report.final_population.iter().all(|m| m.t == 400));
    assert_eq!(report.total_step_calls, 2 * 400);

    // with quantum = ready_interval every exploit happens at the barrier,
    // where all members have published the same step: the decision sees a
    // fully coherent snapshot
    let mut last_eval_t: BTreeMap<MemberId, u64> = BTreeMap::new();
    for ev in &report.events {
        match ev.kind {
            EventKind::Eval => {
                last_eval_t.insert(ev.member_id, ev.t_at_event);
            }
            EventKind::Exploit => {
                assert_eq!(ev.t_at_event % 4, 0, "exploit off the barrier");
                assert!(
                    last_eval_t.values().all(|&t| t == ev.t_at_event),
                    "exploit at t={} saw members at {:?}",
                    ev.t_at_event,
                    last_eval_t
                );
            }
            _ => {}
        }
    }
}

#[test]
fn diverging_member_is_marked_failed_and_the_rest_continue() {
    let task = LogisticRegressionTask::new(LogisticParams {
        n_train: 400,
        n_val: 100,
        ..LogisticParams::default()
    });
    let sane = |_: usize| {
        HyperparamVector::from_pairs([
            ("l2".to_string(), HyperValue::Num(1e-4)),
            ("lr".to_string(), HyperValue::Num(0.1)),
        ])
    };
    // member 3 draws an explosive (lr, l2) pair: lr*l2 = 100 oscillates to
    // overflow within a few hundred steps
    let bad = HyperparamVector::from_pairs([
        ("l2".to_string(), HyperValue::Num(0.1)),
        ("lr".to_string(), HyperValue::Num(1e3)),
    ]);
    let mut cfg = ExperimentConfig::new(4, 400);
    cfg.seed = 1;
    cfg.eval_every = 10;
    cfg.ready_interval = 1000; // never exploit: isolate the failure path
    cfg.exploit = ExploitConfig::None;
    cfg.explore = ExploreConfig::None;
    cfg.initial_h = Some(vec![sane(0), sane(1), sane(2), bad]);

    let report = run_experiment(&cfg, &task, None).unwrap();
    assert_eq!(report.failed.len(), 1);
    assert_eq!(report.failed[0].0, 3);
    assert!(report.failed[0].1.contains("non-finite"));
    assert_eq!(report.final_population.len(), 3);
    assert!(report.final_population.iter().all(|m| m.t == 400));
    // dead members never show up as a best member
    assert_ne!(report.best.id, 3);
}

#[test]
fn experiment_aborts_when_more_than_half_the_population_fails() {
    let task = LogisticRegressionTask::new(LogisticParams {
        n_train: 200,
        n_val: 100,
        ..LogisticParams::default()
    });
    let bad = || {
        HyperparamVector::from_pairs([
            ("l2".to_string(), HyperValue::Num(0.1)),
            ("lr".to_string(), HyperValue::Num(1e3)),
        ])
    };
    let mut cfg = ExperimentConfig::new(2, 400);
    cfg.seed = 2;
    cfg.eval_every = 10;
    cfg.exploit = ExploitConfig::None;
    cfg.explore = ExploreConfig::None;
    cfg.initial_h = Some(vec![bad(), bad()]);

    match run_experiment(&cfg, &task, None) {
        Err(EngineError::TooManyFailures { failed, population }) => {
            assert_eq!((failed, population), (2, 2));
        }
        other => panic!("expected TooManyFailures, got {other:?}"),
    }
}

#[test]
fn async_mode_varies_by_interleaving_but_keeps_the_schema() {
    let task = QuadraticTask::new(0.01);
    let mut cfg = fig2_config(8, 200);
    cfg.mode = ExecMode::Async;
    let a = run_experiment(&cfg, &task, None).unwrap();
    // event counters stay strictly increasing under arbitrary interleavings
    let counters: Vec<u64> = a.events.iter().map(|e| e.event_counter).collect();
    assert!(counters.windows(2).all(|w| w[0] < w[1]));
    build_phylogeny(&a.events).expect("async logs stay well-formed");
}

#[test]
fn winning_lineage_discovers_both_directions_under_full_copy() {
    // h is copied along with the solution here (mask=all), so the surviving
    // lineage's update direction ratchets toward [1, 1]
    let task = QuadraticTask::new(0.01);
    let mut finals = Vec::new();
    for seed in 0..11 {
        let mut cfg = fig2_config(seed, 200);
        cfg.exploit_mask = ExploitMask::All;
        let report = run_experiment(&cfg, &task, None).unwrap();
        let winner = best(&report.final_population).unwrap().id;
        let lineages =
            extract_lineages(&report.events, &[winner]).expect("well-formed log");
        let lineage = &lineages[&winner];
        assert!(!lineage.is_empty());
        let ts: Vec<u64> = lineage.iter().map(|(t, _)| *t).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]), "t not strictly increasing");

        let coord_min = |h: &HyperparamVector| -> f64 {
            f64::min(h.num("h0").unwrap(), h.num("h1").unwrap())
        };
        let first = coord_min(&lineage.first().unwrap().1);
        let last = coord_min(&lineage.last().unwrap().1);
        assert_eq!(first, 0.0, "lineages start on a one-hot direction");
        finals.push(last);
    }
    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = finals[finals.len() / 2];
    assert!(
        median >= 0.3,
        "median final min(h0, h1) on winning lineages = {median}"
    );
}

#[test]
fn replay_of_final_hyperparams_underperforms_adaptive_pbt_on_logistic() {
    // retraining from scratch with the discovered final h, fixed for the
    // whole run, loses to the adaptive schedule wherever minibatch noise
    // makes annealing valuable
    let task = LogisticRegressionTask::new(LogisticParams::default());
    let mut cfg = ExperimentConfig::new(20, 600);
    cfg.ready_interval = 50;
    cfg.eval_every = 10;
    cfg.exploit = ExploitConfig::Truncation { fraction: 0.2 };
    cfg.explore = ExploreConfig::Perturb;
    let mut wins = 0;
    for seed in 0..4 {
        cfg.seed = seed;
        let runs = pbt::engine::run_ablation(
            &cfg,
            &task,
            pbt::engine::AblationVariant::FinalHReplay,
        )
        .unwrap();
        assert_eq!(runs[0].0, "pbt");
        assert_eq!(runs[1].0, "final-h-replay");
        if runs[0].1.best.p >= runs[1].1.best.p {
            wins += 1;
        }
    }
    assert!(wins >= 3, "pbt >= replay on only {wins}/4 seeds");
}

#[test]
fn toy_exploits_splice_lineages_at_exploit_events() {
    let task = QuadraticTask::new(0.01);
    let report = run_experiment(&fig2_config(0, 100), &task, None).unwrap();
    let ids: Vec<MemberId> = report.final_population.iter().map(|m| m.id).collect();
    let lineages = extract_lineages(&report.events, &ids).unwrap();
    assert_eq!(lineages.len(), 2);
    // every lineage starts at t=0 with one of the two grid directions
    for lineage in lineages.values() {
        let (t0, h0) = &lineage[0];
        assert_eq!(*t0, 0);
        let pair = (h0.num("h0").unwrap(), h0.num("h1").unwrap());
        assert!(pair == (1.0, 0.0) || pair == (0.0, 1.0));
    }
}
