mod common;

use common::experiment;
use mmal::alloop::{initial_pool, run_experiment, run_suite, DatasetSource};
use mmal::datagen::SynthConfig;
use mmal::eval::{classwise_delta, metrics_to_csv};
use mmal::model::evaluate;
use mmal::strategies::{write_selection_log, Strategy};
use mmal::Bundle64;

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n: 600,
        seed,
        ..SynthConfig::default()
    }
}

fn small(strategy: Strategy, master: u64) -> mmal::alloop::ExperimentConfig {
    let mut cfg = experiment(strategy, small_synth(1), master);
    cfg.initial_budget = 40;
    cfg.round_budget = 20;
    cfg.rounds = 3;
    cfg.train.epochs = 10;
    cfg
}

fn bytes(bundle: &Bundle64) -> (String, Vec<u8>) {
    let mut log = Vec::new();
    write_selection_log(&mut log, &bundle.selection_records()).unwrap();
    (metrics_to_csv(&bundle.metric_records()), log)
}

#[test]
fn suite_is_byte_reproducible() {
    let cfgs: Vec<_> = Strategy::ALL.iter().map(|&s| small(s, 11)).collect();
    let a: Bundle64 = run_suite(&cfgs, 3).unwrap();
    let b: Bundle64 = run_suite(&cfgs, 3).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let other: Bundle64 = run_suite(
        &cfgs
            .iter()
            .map(|c| small(c.strategy, 12))
            .collect::<Vec<_>>(),
        3,
    )
    .unwrap();
    assert_ne!(bytes(&a).1, bytes(&other).1);
}

#[test]
fn labeled_size_grows_by_the_round_budget() {
    let cfg = small(Strategy::Bmmal, 2);
    let run = run_experiment::<f64>(&cfg, 0).unwrap();
    assert_eq!(run.reports.len(), cfg.rounds + 1);
    for (t, rep) in run.reports.iter().enumerate() {
        assert_eq!(rep.round, t);
        assert_eq!(rep.labeled, cfg.initial_budget + t * cfg.round_budget);
        let phi = rep.phi_mean[0] + rep.phi_mean[1];
        assert!((phi - 1.0).abs() < 1e-9);
    }
    let mut all = run.final_labeled.clone();
    all.sort_unstable();
    all.dedup();
    assert_eq!(
        all.len(),
        cfg.initial_budget + cfg.rounds * cfg.round_budget
    );
}

#[test]
fn every_strategy_records_selected_attributions() {
    for s in Strategy::ALL {
        let run = run_experiment::<f64>(&small(s, 3), 0).unwrap();
        for rep in &run.reports[1..] {
            assert_eq!(rep.selected.len(), 20);
            assert_eq!(rep.selected_attributions.len(), 20);
            assert_eq!(rep.scores.len(), 20);
        }
        assert!(run.reports[0].selected_attributions.is_empty());
    }
}

#[test]
fn repetitions_draw_distinct_initial_pools() {
    let train: Vec<usize> = (0..500).collect();
    let pools: Vec<Vec<usize>> = (0..5).map(|r| initial_pool(&train, 40, 7, r)).collect();
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(pools[i], pools[j]);
        }
    }
    assert_eq!(initial_pool(&train, 40, 7, 2), pools[2]);
}

#[test]
fn classwise_deltas_decompose_overall_accuracy() {
    let cfg_a = small(Strategy::Random, 4);
    let cfg_b = small(Strategy::Bmmal, 4);
    let ds = cfg_a.dataset.load::<f64>().unwrap();
    let a = run_experiment::<f64>(&cfg_a, 0).unwrap().final_model;
    let b = run_experiment::<f64>(&cfg_b, 0).unwrap().final_model;
    let test = ds.test_indices();
    let delta = classwise_delta(&a, &b, &ds, test).unwrap();
    let (acc_a, acc_b) = (
        evaluate(&a, &ds, test).unwrap(),
        evaluate(&b, &ds, test).unwrap(),
    );
    let weighted: f64 = delta
        .classes
        .iter()
        .map(|c| c.mm * c.count as f64)
        .sum::<f64>()
        / test.len() as f64;
    assert!((weighted - (acc_a.mm - acc_b.mm)).abs() < 1e-12);
    for w in delta.classes.windows(2) {
        assert!(w[0].mm >= w[1].mm);
    }
}

#[test]
fn file_source_matches_saved_dataset() {
    let ds = DatasetSource::Synthetic(small_synth(5))
        .load::<f64>()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    mmal::datagen::save_dataset(&ds, &path).unwrap();
    let back = DatasetSource::File {
        path,
        split_seed: 0,
    }
    .load::<f64>()
    .unwrap();
    assert_eq!(back, ds);
}

#[test]
fn single_precision_pipeline_runs() {
    let cfg = small(Strategy::Bmmal, 6);
    let run = run_experiment::<f32>(&cfg, 0).unwrap();
    assert_eq!(run.reports.len(), cfg.rounds + 1);
    let acc = run.reports.last().unwrap().accuracy;
    assert!(acc.mm > 0.25, "f32 accuracy {}", acc.mm);
}
