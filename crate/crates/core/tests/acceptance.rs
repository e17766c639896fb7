//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p mmal --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use common::{
    dominant_synth, experiment, mirrored_fixture, random_dims, random_model, random_sample, rel_err,
};
use mmal::alloop::{run_experiment_on, run_suite};
use mmal::attribution::{model_outcome, shapley_exact, shapley_two, BOTH, NONE};
use mmal::datagen::{generate_synthetic, SynthConfig};
use mmal::embedding::{embed_pool, gradient_embedding, modulated_embedding};
use mmal::eval::{
    attributions, dominated_subset_stats, metrics_to_csv, pairwise_matrix, welch_ttest, Metric,
    MetricRecord,
};
use mmal::model::{cross_entropy, init_model, train, Fusion, ModelDims, TrainConfig};
use mmal::scalar::argmax;
use mmal::seeds;
use mmal::strategies::{
    query, select_badge, select_bmmal, write_selection_log, QueryRequest, Strategy,
};
use mmal::{Bundle64, Dataset64};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seeds::rng(101);
    let mut max_diff = 0.0f64;
    let mut max_eff = 0.0f64;
    for i in 0..1000 {
        let fusion = if i % 4 == 3 {
            Fusion::Sum
        } else {
            Fusion::Concat
        };
        let dims = random_dims(&mut rng, fusion, true);
        let model = random_model(&mut rng, dims, fusion, 1.0);
        let s = random_sample(&mut rng, dims.input_m1, dims.input_m2, dims.num_classes);
        let y = model.forward(&s).unwrap().pseudo_label;
        let v = |c| model_outcome(&model, c, &s, y).unwrap();
        let exact = shapley_exact(v, 2).unwrap();
        let closed = shapley_two(&model, &s).unwrap();
        max_diff = max_diff
            .max((exact[0] - closed[0]).abs())
            .max((exact[1] - closed[1]).abs());
        max_eff = max_eff.max((closed[0] + closed[1] - (v(BOTH) - v(NONE))).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        max_diff <= 1e-12 && max_eff <= 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "max |closed - exact| {max_diff:.2e}, max efficiency gap {max_eff:.2e}, {elapsed:.2?}"
        ),
    )
}

fn criterion_2() -> Outcome {
    const H: f64 = 1e-5;
    let mut rng = seeds::rng(102);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let dims = random_dims(&mut rng, Fusion::Concat, true);
        let model = random_model(&mut rng, dims, Fusion::Concat, 0.8);
        let s = random_sample(&mut rng, dims.input_m1, dims.input_m2, dims.num_classes);
        let y = model.forward(&s).unwrap().pseudo_label;
        let emb = gradient_embedding(&model, &s, 0).unwrap();
        for (e, &a) in emb.values.iter().enumerate() {
            let loss_at = |delta: f64| {
                let mut m = model.clone();
                m.head_mm.weight.as_mut_slice()[e] += delta;
                cross_entropy(&m.forward(&s).unwrap().f_mm, y)
            };
            let numeric = (loss_at(H) - loss_at(-H)) / (2.0 * H);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over 10 instances"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = seeds::rng(103);
    let mut failures = Vec::new();
    let mut balanced = 0;
    for i in 0..1000 {
        // every tenth instance mirrors the modalities so rho = 0 is exercised
        let (model, s) = if i % 10 == 0 {
            let (ds, model) = mirrored_fixture(5, 3, 3, i as u64);
            (model, ds.sample(0).clone())
        } else {
            let dims = random_dims(&mut rng, Fusion::Concat, false);
            let model = random_model(&mut rng, dims, Fusion::Concat, 1.0);
            let s = random_sample(&mut rng, dims.input_m1, dims.input_m2, dims.num_classes);
            (model, s)
        };
        let g = gradient_embedding(&model, &s, 0).unwrap();
        let (gm, a) = modulated_embedding(&model, &s, 0).unwrap();
        let sum = a.contribution[0] + a.contribution[1];
        let dominant = argmax(&a.contribution).unwrap();
        let checks = [
            (sum - 1.0).abs() <= 1e-9,
            gm.norm <= g.norm,
            if a.rho <= 1e-12 {
                balanced += 1;
                gm.norm == g.norm
            } else {
                gm.norm < g.norm
            },
            a.weights[dominant] == 1.0,
            argmax(&a.weights) == argmax(&a.contribution),
        ];
        if checks.iter().any(|ok| !ok) {
            failures.push(i);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} violations in 1000 attributions ({balanced} with rho = 0)",
            failures.len()
        ),
    )
}

struct DirectionalRuns {
    badge_rho: Vec<f64>,
    bmmal_rho: Vec<f64>,
    badge_gap: f64,
    bmmal_gap: f64,
}

fn directional_runs() -> DirectionalRuns {
    let seeds = 5;
    let mut out = DirectionalRuns {
        badge_rho: vec![0.0; 5],
        bmmal_rho: vec![0.0; 5],
        badge_gap: 0.0,
        bmmal_gap: 0.0,
    };
    for seed in 0..seeds {
        let synth = dominant_synth(100 + seed);
        let ds: Dataset64 = generate_synthetic(&synth).unwrap();
        for strategy in [Strategy::Badge, Strategy::Bmmal] {
            let cfg = experiment(strategy, synth.clone(), seed);
            let run = run_experiment_on(&cfg, &ds, 0).unwrap();
            let (rho, gap) = match strategy {
                Strategy::Badge => (&mut out.badge_rho, &mut out.badge_gap),
                _ => (&mut out.bmmal_rho, &mut out.bmmal_gap),
            };
            for (r, slot) in rho.iter_mut().enumerate() {
                *slot += run.reports[r + 1].mean_selected_rho().unwrap() / seeds as f64;
            }
            let last = run.reports.last().unwrap();
            *gap += (last.phi_mean[0] - last.phi_mean[1]).abs() / seeds as f64;
        }
    }
    out
}

fn criterion_4(runs: &DirectionalRuns) -> Outcome {
    let pass = runs
        .bmmal_rho
        .iter()
        .zip(&runs.badge_rho)
        .all(|(m, b)| m <= b);
    let rounds: Vec<String> = runs
        .bmmal_rho
        .iter()
        .zip(&runs.badge_rho)
        .enumerate()
        .map(|(r, (m, b))| format!("r{} {m:.4}/{b:.4}", r + 1))
        .collect();
    outcome(
        pass,
        format!("mean selected rho BMMAL/BADGE: {}", rounds.join(", ")),
    )
}

fn criterion_5() -> Outcome {
    let mut strong = 0.0;
    let mut weak = 0.0;
    for seed in 0..5u64 {
        let ds: Dataset64 = generate_synthetic(&dominant_synth(100 + seed)).unwrap();
        let init = init_model(ModelDims::identity(16, 16, 4), Fusion::Concat, seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let model = train(&init, &ds, ds.train_indices(), &cfg).unwrap().params;
        let stats = dominated_subset_stats(&attributions(&model, &ds, ds.train_indices()).unwrap());
        let rho = |m: usize| stats.subsets[m].map_or(0.0, |s| s.mean_rho);
        strong += rho(stats.stronger()) / 5.0;
        weak += rho(stats.weaker()) / 5.0;
    }
    outcome(
        strong > weak,
        format!("mean rho stronger-dominated {strong:.4} vs weaker-dominated {weak:.4}"),
    )
}

fn criterion_6(runs: &DirectionalRuns) -> Outcome {
    outcome(
        runs.bmmal_gap <= runs.badge_gap,
        format!(
            "final-round |mean phi_m1 - mean phi_m2|: BMMAL {:.4}, BADGE {:.4}",
            runs.bmmal_gap, runs.badge_gap
        ),
    )
}

fn criterion_7() -> Outcome {
    let (ds, model) = mirrored_fixture(500, 6, 4, 107);
    let train = ds.train_indices();
    let attrs = embed_pool(&model, &ds, train, true)
        .unwrap()
        .attributions
        .unwrap();
    let all_zero = attrs.iter().all(|a| a.rho == 0.0);
    let mut identical = true;
    for seed in 0..10 {
        let req = QueryRequest::new(
            Strategy::Bmmal,
            train[20..].to_vec(),
            train[..20].to_vec(),
            50,
            seed,
        );
        let a = select_badge(&req, &model, &ds).unwrap();
        let b = select_bmmal(&req, &model, &ds).unwrap();
        let bits = |r: &mmal::Query64| {
            r.diagnostics
                .iter()
                .map(|d| d.score.to_bits())
                .collect::<Vec<_>>()
        };
        identical &= a.selected == b.selected && bits(&a) == bits(&b);
    }
    outcome(
        all_zero && identical,
        format!("all rho = 0: {all_zero}; selections bit-identical over 10 seeds: {identical}"),
    )
}

fn criterion_8() -> Outcome {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    // means 3 and 4; sample variances 2.5; standard error sqrt(2.5/5 + 2.5/5) = 1
    let (t_hand, df_hand) = (-1.0, (0.5f64 + 0.5).powi(2) / (0.25 / 4.0 + 0.25 / 4.0));
    let test = welch_ttest(&a, &b, 0.9).unwrap();
    let hand_ok = (test.t - t_hand).abs() <= 1e-6 && (test.df - df_hand).abs() <= 1e-6;
    let same_ok = !welch_ttest(&a, &a, 0.9).unwrap().significant;

    let rounds = 4usize;
    let mut records = Vec::new();
    let mut rng = seeds::rng(108);
    for (k, strategy) in ["random", "badge", "bmmal"].iter().enumerate() {
        for rep in 0..5 {
            for round in 0..rounds {
                let acc = 0.4 + 0.05 * k as f64 + rand::Rng::random_range(&mut rng, 0.0..0.04);
                records.push(MetricRecord {
                    setting: "s".into(),
                    strategy: strategy.to_string(),
                    repetition: rep,
                    round,
                    labeled: 100 + 50 * round,
                    mm_top1: acc,
                    m1_top1: acc,
                    m2_top1: acc,
                    phi_m1: 0.5,
                    phi_m2: 0.5,
                });
            }
        }
    }
    let m = pairwise_matrix(&records, Metric::Mm, 0.9).unwrap();
    let mut matrix_ok = true;
    for i in 0..m.p.len() {
        matrix_ok &= m.p[i][i] == 0.0;
        for v in &m.p[i] {
            let scaled = v * rounds as f64;
            matrix_ok &= (scaled - scaled.round()).abs() < 1e-12;
        }
    }
    outcome(
        hand_ok && same_ok && matrix_ok,
        format!(
            "t {:.6} df {:.6} (hand {t_hand}, {df_hand}); identical not significant: {same_ok}; matrix 1/L grid with zero diagonal: {matrix_ok}",
            test.t, test.df
        ),
    )
}

fn bmmal_query_time(n: usize) -> Duration {
    let synth = SynthConfig {
        n,
        ..dominant_synth(109)
    };
    let ds: Dataset64 = generate_synthetic(&synth).unwrap();
    let init = init_model(ModelDims::identity(16, 16, 4), Fusion::Concat, 9).unwrap();
    let labeled = ds.train_indices()[..100].to_vec();
    let model = train(&init, &ds, &labeled, &TrainConfig::default())
        .unwrap()
        .params;
    let req = QueryRequest::new(
        Strategy::Bmmal,
        ds.train_indices()[100..].to_vec(),
        labeled,
        50,
        9,
    );
    (0..7)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(query(&req, &model, &ds).unwrap());
            start.elapsed()
        })
        .min()
        .unwrap()
}

fn criterion_9() -> Outcome {
    let small = bmmal_query_time(2000);
    let large = bmmal_query_time(4000);
    let ratio = large.as_secs_f64() / small.as_secs_f64();

    let ds: Dataset64 = generate_synthetic(&dominant_synth(110)).unwrap();
    let model = init_model(ModelDims::identity(16, 16, 4), Fusion::Concat, 10).unwrap();
    // S must divide B, so the split check uses B = 48
    let mut req = QueryRequest::new(Strategy::Bmmal, ds.train_indices().to_vec(), vec![], 48, 10);
    let whole = query(&req, &model, &ds).unwrap();
    req.split = 4;
    let split = query(&req, &model, &ds).unwrap();
    let mut unique = split.selected.clone();
    unique.sort_unstable();
    unique.dedup();
    let reduction = whole.peak_buffer as f64 / split.peak_buffer as f64;
    outcome(
        ratio < 2.5 && split.selected.len() == 48 && unique.len() == 48 && reduction >= 3.0,
        format!(
            "time N=2000 {small:.2?}, N=4000 {large:.2?} (x{ratio:.2}); S=4 returned {} picks, peak buffer reduced x{reduction:.2}",
            split.selected.len()
        ),
    )
}

fn suite_bytes(bundle: &Bundle64) -> Vec<u8> {
    let mut out = metrics_to_csv(&bundle.metric_records()).into_bytes();
    write_selection_log(&mut out, &bundle.selection_records()).unwrap();
    out
}

fn criterion_10() -> Outcome {
    let cfgs: Vec<_> = Strategy::ALL
        .iter()
        .map(|&s| experiment(s, dominant_synth(2024), 2024))
        .collect();
    let start = Instant::now();
    let first: Bundle64 = run_suite(&cfgs, 5).unwrap();
    let elapsed = start.elapsed();
    let second: Bundle64 = run_suite(&cfgs, 5).unwrap();
    let same = suite_bytes(&first) == suite_bytes(&second);
    outcome(
        same && elapsed < Duration::from_secs(300),
        format!("5 strategies x 5 rounds x 5 seeds in {elapsed:.2?}; byte-identical rerun: {same}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        println!(
            "criterion {n:>2}: {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    let runs = directional_runs();
    report(4, criterion_4(&runs));
    report(5, criterion_5());
    report(6, criterion_6(&runs));
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9());
    report(10, criterion_10());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
