//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible under `cargo test -- --nocapture`).
//!
//! The gradient criteria compare analytic gradients against central finite
//! differences using the vector-level relative L2 error
//! `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)`. The training criteria run the full
//! pruning loop on separable synthetic blobs and check the two qualitative
//! claims the engine exists for: pruning at a high ratio costs (almost) no
//! accuracy, and the dual signal filters injected label noise where a pure
//! loss signal amplifies it.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualprune::dataset::{generate_gaussian_blobs, inject_label_noise, Dataset};
use dualprune::embeddings::{synthesize_embeddings, EmbeddingTable};
use dualprune::harness::{
    cost_savings, refresh_losses, run_experiment, run_experiment_with_state, RunReport, Strategy,
    TrainConfig,
};
use dualprune::scorer::{init_scores, score_gradient, score_loss, select_median_band};
use dualprune::trainer::{
    batch_gradient, init_model, ClassifierModel, CostCounters,
};
use dualprune::xmodal::{
    apply_adapter, infonce_grad, infonce_loss, scaled_cosine, AdapterPair,
};
use dualprune::linalg::Mat;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn rel_l2_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let err: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| a.powi(2).max(b.powi(2)))
        .sum::<f64>()
        .sqrt();
    err / scale.max(1e-12)
}

#[test]
fn criterion_1_score_gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let n = 32;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let magnitude = rng.gen_range(0.25..2.0);
                if rng.gen_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        let s_t: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s_c: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lambda = rng.gen_range(0.1..2.0);

        let analytic = score_gradient(&s, &s_t, &s_c, lambda).unwrap();
        let mut fd = Vec::with_capacity(n);
        for i in 0..n {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus[i] += h;
            minus[i] -= h;
            fd.push(
                (score_loss(&plus, &s_t, &s_c, lambda).unwrap()
                    - score_loss(&minus, &s_t, &s_c, lambda).unwrap())
                    / (2.0 * h),
            );
        }
        worst = worst.max(rel_l2_error(&analytic, &fd));
    }
    let elapsed = start.elapsed();
    report(
        "1 (score gradient oracle)",
        worst < 1e-6 && elapsed < Duration::from_secs(1),
        &format!("worst relative error {worst:.2e} over 100 instances in {elapsed:.2?}"),
    );
}

fn flatten_gradient(model: &ClassifierModel, ds: &Dataset, ids: &[usize]) -> Vec<f64> {
    let grad = batch_gradient(model, ds, ids).unwrap();
    let mut flat = Vec::new();
    if let Some(w) = &grad.w_hidden {
        flat.extend_from_slice(w.data());
    }
    if let Some(b) = &grad.b_hidden {
        flat.extend_from_slice(b);
    }
    flat.extend_from_slice(grad.w_out.data());
    flat.extend_from_slice(&grad.b_out);
    flat
}

fn fd_gradient(model: &ClassifierModel, ds: &Dataset, ids: &[usize], h: f64) -> Vec<f64> {
    let batch_loss = |m: &ClassifierModel| -> f64 {
        ids.iter()
            .map(|&i| m.sample_loss(ds.features(i), ds.observed_label(i)))
            .sum::<f64>()
            / ids.len() as f64
    };
    let mut fd = Vec::new();
    let probe = |set: &dyn Fn(&mut ClassifierModel, f64), base: f64| {
        let mut plus = model.clone();
        set(&mut plus, base + h);
        let mut minus = model.clone();
        set(&mut minus, base - h);
        (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * h)
    };
    if let Some(h_dim) = model.hidden {
        for r in 0..h_dim {
            for c in 0..model.feature_dim {
                let base = model.w_hidden.as_ref().unwrap().get(r, c);
                fd.push(probe(
                    &|m, v| m.w_hidden.as_mut().unwrap().set(r, c, v),
                    base,
                ));
            }
        }
        for i in 0..h_dim {
            let base = model.b_hidden.as_ref().unwrap()[i];
            fd.push(probe(&|m, v| m.b_hidden.as_mut().unwrap()[i] = v, base));
        }
    }
    for r in 0..model.w_out.rows() {
        for c in 0..model.w_out.cols() {
            let base = model.w_out.get(r, c);
            fd.push(probe(&|m, v| m.w_out.set(r, c, v), base));
        }
    }
    for i in 0..model.b_out.len() {
        let base = model.b_out[i];
        fd.push(probe(&|m, v| m.b_out[i] = v, base));
    }
    fd
}

#[test]
fn criterion_2_classifier_gradient_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (arch_idx, hidden) in [None, Some(5)].into_iter().enumerate() {
        for trial in 0..20u64 {
            let seed = 2000 + 40 * arch_idx as u64 + trial;
            let ds = generate_gaussian_blobs(4, 4, 7, 3.0, 1.5, seed).unwrap();
            let ids: Vec<usize> = (0..ds.len()).collect();
            let model = init_model(7, 4, hidden, 0.5, seed + 1).unwrap();
            let analytic = flatten_gradient(&model, &ds, &ids);
            let fd = fd_gradient(&model, &ds, &ids, 1e-5);
            worst = worst.max(rel_l2_error(&analytic, &fd));
        }
    }
    let elapsed = start.elapsed();
    report(
        "2 (classifier gradient oracle)",
        worst < 1e-4 && elapsed < Duration::from_secs(5),
        &format!(
            "worst relative error {worst:.2e} over 20 instances per architecture in {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_3_selection_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3001);
    let mut checked = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=64usize);
        // Half the vectors draw from a coarse grid to force distance ties.
        let s: Vec<f64> = if trial % 2 == 0 {
            (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect()
        } else {
            (0..n)
                .map(|_| f64::from(rng.gen_range(-4i32..=4)) * 0.25)
                .collect()
        };
        let k = rng.gen_range(1..=n);

        let got = select_median_band(&s, k, 0).unwrap();

        // Brute-force reference: full sort of (|s - median|, index) pairs,
        // with the median itself from a full sort.
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let m = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mut pairs: Vec<(f64, usize)> =
            s.iter().enumerate().map(|(i, &v)| ((v - m).abs(), i)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut expect: Vec<usize> = pairs[..k].iter().map(|&(_, i)| i).collect();
        expect.sort_unstable();

        assert_eq!(got.selected_ids, expect, "trial {trial}, n={n}, k={k}");
        checked += 1;
    }
    let elapsed = start.elapsed();
    report(
        "3 (selection oracle)",
        checked == 1000 && elapsed < Duration::from_secs(1),
        &format!("{checked} random vectors matched the brute-force reference in {elapsed:.2?}"),
    );
}

#[test]
fn criterion_4_temperature_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4001);
    let expect = (1.0f64 / 0.07).ln();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=8usize);
        let mut u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        if u.iter().all(|v| v.abs() < 1e-3) {
            u[0] = 1.0;
        }
        let got = scaled_cosine(&u, &u).unwrap();
        worst = worst.max((got - expect).abs());
    }
    report(
        "4 (temperature constant)",
        worst < 1e-9 && (expect - 2.65926).abs() < 1e-5,
        &format!("self-similarity deviates from ln(1/0.07) by at most {worst:.2e}"),
    );
}

#[test]
fn criterion_5_cost_arithmetic() {
    let closed = cost_savings(50_000, 35_000, 100, 128).unwrap();
    let closed_ok = closed.forward_saved == 1_500_000 && closed.backward_saved == 11_719;

    // Measured cross-check on a 500-sample dataset with the batch size
    // dividing both N and k, so the per-epoch backward counts subtract
    // exactly. Warmup is disabled for the pruned run by handing it a score
    // state whose loss cache is already populated.
    let ds = generate_gaussian_blobs(50, 10, 16, 6.0, 1.0, 5001).unwrap();
    let table = synthesize_embeddings(&ds, 16, 1.0, 0.1, 5002).unwrap();
    let adapters = AdapterPair::identity(16);
    let base = TrainConfig {
        selection_ratio: 0.5,
        epochs: 4,
        batch_size: 50,
        learn_rate: 0.5,
        refresh_every: 0,
        warmup_epochs: 0,
        rng_seed: 5003,
        ..TrainConfig::default()
    };

    let full = TrainConfig {
        strategy: Strategy::FullData,
        ..base.clone()
    };
    let full_report = run_experiment(&full, &ds, &table, &adapters).unwrap();

    let dual = TrainConfig {
        strategy: Strategy::Dual,
        ..base
    };
    let seed_model = init_model(ds.feature_dim(), ds.num_classes(), None, 0.1, 5003).unwrap();
    let mut scratch = CostCounters::default();
    let labels = ds.observed_labels();
    let scores =
        dualprune::xmodal::consistency_scores(&table, &labels, &adapters).unwrap();
    let state = init_scores(ds.len(), scores.values().to_vec(), 1.0, 0.1, 1).unwrap();
    let prefilled = refresh_losses(&seed_model, &ds, &state, 0, &mut scratch).unwrap();
    let dual_report =
        run_experiment_with_state(&dual, &ds, &table, &adapters, Some(prefilled)).unwrap();

    let k = dual.subset_size(ds.len());
    let expect = cost_savings(ds.len(), k, base.epochs, base.batch_size).unwrap();
    let fwd_diff =
        full_report.summary.total_forward_passes - dual_report.summary.total_forward_passes;
    let bwd_diff =
        full_report.summary.total_backward_updates - dual_report.summary.total_backward_updates;
    let measured_ok = fwd_diff == expect.forward_saved && bwd_diff == expect.backward_saved;

    report(
        "5 (cost arithmetic)",
        closed_ok && measured_ok,
        &format!(
            "closed form ({}, {}), measured difference ({fwd_diff}, {bwd_diff}) vs expected ({}, {})",
            closed.forward_saved, closed.backward_saved, expect.forward_saved, expect.backward_saved
        ),
    );
}

const ACCEPTANCE_SEEDS: [u64; 3] = [11, 12, 13];

fn acceptance_config(strategy: Strategy, ratio: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        selection_ratio: ratio,
        epochs: 30,
        batch_size: 64,
        learn_rate: 0.5,
        lr_decay: 0.98,
        lambda: 1.0,
        score_learn_rate: 0.1,
        steps_per_epoch: 1,
        refresh_every: 10,
        warmup_epochs: 1,
        strategy,
        hidden: None,
        init_scale: 0.1,
        rng_seed: seed,
    }
}

fn median3(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn timed_run(
    config: &TrainConfig,
    ds: &Dataset,
    table: &EmbeddingTable,
    adapters: &AdapterPair,
) -> RunReport {
    let start = Instant::now();
    let run = run_experiment(config, ds, table, adapters).unwrap();
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "run exceeded its 60 s budget: {elapsed:.2?}"
    );
    run
}

#[test]
fn criterion_6_lossless_pruning_analog() {
    let mut dual_accs = Vec::new();
    let mut full_accs = Vec::new();
    for &seed in &ACCEPTANCE_SEEDS {
        let ds = generate_gaussian_blobs(500, 10, 32, 6.0, 1.0, 1000 + seed).unwrap();
        let table = synthesize_embeddings(&ds, 32, 1.0, 0.1, 2000 + seed).unwrap();
        let adapters = AdapterPair::identity(32);
        let dual = timed_run(
            &acceptance_config(Strategy::Dual, 0.7, seed),
            &ds,
            &table,
            &adapters,
        );
        let full = timed_run(
            &acceptance_config(Strategy::FullData, 1.0, seed),
            &ds,
            &table,
            &adapters,
        );
        dual_accs.push(dual.summary.final_accuracy);
        full_accs.push(full.summary.final_accuracy);
    }
    let dual_median = median3(dual_accs.clone());
    let full_median = median3(full_accs.clone());
    report(
        "6 (lossless-pruning analog)",
        dual_median >= full_median - 0.015,
        &format!(
            "median accuracy at ratio 0.7: {dual_median:.4} vs full-data {full_median:.4} \
             (per-seed dual {dual_accs:?}, full {full_accs:?})"
        ),
    );
}

struct NoisySeedRuns {
    dual_02: RunReport,
    dual_05: RunReport,
    random_02: RunReport,
    random_05: RunReport,
    loss_only_05: RunReport,
}

fn noisy_runs() -> &'static Vec<NoisySeedRuns> {
    static RUNS: OnceLock<Vec<NoisySeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        ACCEPTANCE_SEEDS
            .iter()
            .map(|&seed| {
                let clean = generate_gaussian_blobs(500, 10, 32, 6.0, 1.0, 3000 + seed).unwrap();
                let ds = inject_label_noise(&clean, 0.20, 4000 + seed).unwrap();
                let table = synthesize_embeddings(&ds, 32, 1.0, 0.1, 5000 + seed).unwrap();
                let adapters = AdapterPair::identity(32);
                let run = |strategy, ratio| {
                    timed_run(
                        &acceptance_config(strategy, ratio, seed),
                        &ds,
                        &table,
                        &adapters,
                    )
                };
                NoisySeedRuns {
                    dual_02: run(Strategy::Dual, 0.2),
                    dual_05: run(Strategy::Dual, 0.5),
                    random_02: run(Strategy::RandomDynamic, 0.2),
                    random_05: run(Strategy::RandomDynamic, 0.5),
                    loss_only_05: run(Strategy::LossOnly, 0.5),
                }
            })
            .collect()
    })
}

#[test]
fn criterion_7_noise_filtering_analog() {
    let runs = noisy_runs();
    let dual_02 = median3(
        runs.iter()
            .map(|r| r.dual_02.mean_post_warmup_noisy_fraction())
            .collect(),
    );
    let dual_05 = median3(
        runs.iter()
            .map(|r| r.dual_05.mean_post_warmup_noisy_fraction())
            .collect(),
    );
    let random_in_band = runs.iter().all(|r| {
        let f02 = r.random_02.mean_post_warmup_noisy_fraction();
        let f05 = r.random_05.mean_post_warmup_noisy_fraction();
        (0.17..=0.23).contains(&f02) && (0.17..=0.23).contains(&f05)
    });
    report(
        "7 (noise-filtering analog)",
        dual_02 < 0.10 && dual_05 < 0.10 && random_in_band,
        &format!(
            "median selected-noise fraction under dual: {dual_02:.4} at ratio 0.2, \
             {dual_05:.4} at ratio 0.5 (base rate 0.20); random baseline within 0.20±0.03: \
             {random_in_band}"
        ),
    );
}

#[test]
fn criterion_8_dual_beats_loss_only_under_noise() {
    let runs = noisy_runs();
    let mut pairs = Vec::new();
    let every_seed = runs.iter().all(|r| {
        let dual = r.dual_05.summary.final_accuracy;
        let loss_only = r.loss_only_05.summary.final_accuracy;
        pairs.push((dual, loss_only));
        dual >= loss_only
    });
    report(
        "8 (dual beats loss-only under noise)",
        every_seed,
        &format!("per-seed (dual, loss_only) ground-truth accuracy: {pairs:?}"),
    );
}

#[test]
fn criterion_9_infonce_anchors() {
    let singleton = infonce_loss(&[vec![0.3, 0.4]], &[vec![0.1, 0.9]]).unwrap();

    // Identical rows make every pairwise similarity equal, so both softmax
    // directions are uniform over B and the loss is ln B.
    let b = 3;
    let rows: Vec<Vec<f64>> = (0..b).map(|_| vec![2.0, 1.0, 0.5]).collect();
    let uniform = infonce_loss(&rows, &rows).unwrap();
    let ln_b = (b as f64).ln();

    // Finite-difference check of the adapter gradients on 3x3 maps.
    let mut rng = ChaCha8Rng::seed_from_u64(9001);
    let dim = 3;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..4)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let map = |rng: &mut ChaCha8Rng| -> Mat {
            let mut m = Mat::identity(dim);
            for v in m.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
            m
        };
        let images = rows(&mut rng);
        let texts = rows(&mut rng);
        let w_img = map(&mut rng);
        let w_txt = map(&mut rng);
        let (_, g_img, g_txt) = infonce_grad(&images, &texts, &w_img, &w_txt).unwrap();

        let loss_at = |wi: &Mat, wt: &Mat| -> f64 {
            infonce_loss(
                &apply_adapter(wi, &images).unwrap(),
                &apply_adapter(wt, &texts).unwrap(),
            )
            .unwrap()
        };
        let h = 1e-6;
        for which_image in [true, false] {
            let analytic = if which_image { &g_img } else { &g_txt };
            let mut fd = Vec::with_capacity(dim * dim);
            for i in 0..dim {
                for j in 0..dim {
                    let mut plus = if which_image {
                        w_img.clone()
                    } else {
                        w_txt.clone()
                    };
                    let mut minus = plus.clone();
                    plus.set(i, j, plus.get(i, j) + h);
                    minus.set(i, j, minus.get(i, j) - h);
                    fd.push(if which_image {
                        (loss_at(&plus, &w_txt) - loss_at(&minus, &w_txt)) / (2.0 * h)
                    } else {
                        (loss_at(&w_img, &plus) - loss_at(&w_img, &minus)) / (2.0 * h)
                    });
                }
            }
            worst = worst.max(rel_l2_error(analytic.data(), &fd));
        }
    }

    report(
        "9 (InfoNCE anchors)",
        singleton.abs() < 1e-12 && (uniform - ln_b).abs() < 1e-9 && worst < 1e-5,
        &format!(
            "singleton loss {singleton:.2e}, uniform-batch loss deviates from ln 3 by \
             {:.2e}, worst adapter-gradient relative error {worst:.2e}",
            (uniform - ln_b).abs()
        ),
    );
}

#[test]
fn criterion_10_cli_determinism() {
    use std::process::Command;

    let bin = env!("CARGO_BIN_EXE_dualprune");
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("acc");
    let status = Command::new(bin)
        .args([
            "gen",
            "--n-per-class",
            "30",
            "--classes",
            "4",
            "--dim",
            "8",
            "--embed-dim",
            "8",
            "--label-noise",
            "0.2",
            "--seed",
            "9",
            "--out-prefix",
        ])
        .arg(&prefix)
        .status()
        .unwrap();
    assert!(status.success());

    let run = |out: &std::path::Path, seed: &str| {
        let status = Command::new(bin)
            .args(["run", "--epochs", "6", "--ratio", "0.5", "--seed", seed])
            .arg("--data")
            .arg(prefix.with_extension("dpds"))
            .arg("--image-emb")
            .arg(prefix.with_extension("dpem"))
            .arg("--text-emb")
            .arg(prefix.with_extension("dpte"))
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    run(&a, "3");
    run(&b, "3");
    run(&c, "4");

    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    let bytes_c = std::fs::read(&c).unwrap();
    report(
        "10 (CLI determinism)",
        bytes_a == bytes_b && bytes_a != bytes_c,
        &format!(
            "identical flags reproduce {} bytes exactly; changing the seed changes the stream",
            bytes_a.len()
        ),
    );
}
