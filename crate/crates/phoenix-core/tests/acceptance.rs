//! Acceptance suite: one test per release criterion, each printing a
//! single PASS/FAIL line with the measured values (visible with
//! `--nocapture`, and automatically in the report of any failing test).
//!
//! Heavyweight training runs are shared through a keyed cache so the
//! criteria that inspect the same configuration never retrain it.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use phoenix_core::config::{SynthConfig, TrainConfig, Variant};
use phoenix_core::data::{generate_synthetic, Label, Split, SynthUtterance, Utterance};
use phoenix_core::gradcheck::finite_difference_check;
use phoenix_core::inspect::mode_purity;
use phoenix_core::manifold::{
    exp_map_origin, geodesic_distance, mobius_add, project_to_ball, BallPoint, Curvature,
    EPS_BALL,
};
use phoenix_core::metrics::{accuracy_f1, eer, select_threshold, ScoreRecord};
use phoenix_core::model::Model;
use phoenix_core::tape::Tape;
use phoenix_core::trainer::{evaluate, train, TrainedModel};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    println!("[{}] {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn to_utterances(utts: &[SynthUtterance], split: Split) -> Vec<Utterance> {
    utts.iter()
        .filter(|u| u.split == split)
        .map(|u| Utterance {
            id: u.id.clone(),
            label: u.label,
            group: u.group.clone(),
            t: u.seq.t,
            d: u.seq.d,
            feats: u.seq.to_f64(),
        })
        .collect()
}

struct DataSplits {
    train: Vec<Utterance>,
    dev: Vec<Utterance>,
    test: Vec<Utterance>,
}

fn make_splits(cfg: &SynthConfig) -> DataSplits {
    let utts = generate_synthetic(cfg).expect("generation");
    DataSplits {
        train: to_utterances(&utts, Split::Train),
        dev: to_utterances(&utts, Split::Dev),
        test: to_utterances(&utts, Split::Test),
    }
}

/// The default synthetic dataset (seed 42, 400/100/100).
fn default_data() -> &'static DataSplits {
    static DATA: OnceLock<DataSplits> = OnceLock::new();
    DATA.get_or_init(|| make_splits(&SynthConfig::default()))
}

fn train_full_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig { variant, seed, ..TrainConfig::default() }
}

/// Trained-model cache keyed by (variant, seed) on the default dataset.
/// Distinct keys train in parallel; same-key callers share one run.
fn trained(variant: Variant, seed: u64) -> Arc<TrainedModel> {
    type Slot = Arc<OnceLock<Arc<TrainedModel>>>;
    static CACHE: OnceLock<Mutex<HashMap<(u8, u64), Slot>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (variant as u8, seed);
    let slot = cache.lock().unwrap().entry(key).or_default().clone();
    slot.get_or_init(|| {
        let data = default_data();
        let cfg = train_full_config(variant, seed);
        Arc::new(train(&cfg, &data.train, &data.dev, |_| {}).expect("training"))
    })
    .clone()
}

fn test_metrics(model: &TrainedModel) -> (f64, f64, f64) {
    let records = evaluate(&model.model, &default_data().test).expect("evaluation");
    let (acc, f1) = accuracy_f1(&records, model.threshold).expect("metrics");
    let e = eer(&records).expect("eer");
    (acc, f1, e)
}

// ---- criterion 1: gradient fidelity ----

#[test]
fn c1_gradient_fidelity() {
    let started = Instant::now();
    let tiny = TrainConfig {
        feat_dim: 8,
        model_dim: 8,
        ball_dim: 4,
        evidence: 2,
        modes: 2,
        layers: 2,
        ..TrainConfig::default()
    };
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for variant in [Variant::Full, Variant::Euclidean, Variant::M1] {
        let cfg = TrainConfig { variant, ..tiny.clone() };
        let report = finite_difference_check(&cfg, 7).expect("gradient check");
        worst = worst.max(report.max_rel);
        detail.push_str(&format!("{}={:.2e} ", variant.as_str(), report.max_rel));
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && elapsed < 60.0;
    let ok = verdict(
        "criterion 1 (gradient fidelity)",
        pass,
        &format!("max rel err {detail}threshold 1e-4, runtime {elapsed:.1}s < 60s"),
    );
    assert!(ok);
}

// ---- criterion 2: manifold identities ----

#[test]
fn c2_manifold_identities() {
    let started = Instant::now();
    let c = Curvature::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rand_point = |rng: &mut ChaCha8Rng| -> BallPoint {
        let v: Vec<f64> = (0..8).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * 2.0).collect();
        project_to_ball(&v, c).unwrap()
    };

    let mut ok = true;
    for _ in 0..10_000 {
        let x = rand_point(&mut rng);
        let y = rand_point(&mut rng);
        let z = rand_point(&mut rng);
        ok &= geodesic_distance(&x, &x).unwrap() < 1e-9;
        ok &= (geodesic_distance(&x, &y).unwrap() - geodesic_distance(&y, &x).unwrap()).abs()
            < 1e-12;
        let dxz = geodesic_distance(&x, &z).unwrap();
        let dxy = geodesic_distance(&x, &y).unwrap();
        let dyz = geodesic_distance(&y, &z).unwrap();
        ok &= dxz <= dxy + dyz + 1e-9;
    }

    // Radial consistency d(0, Exp₀(y)) = 2‖y‖ for ‖y‖ ≤ 5.
    let origin = BallPoint::origin(8, c);
    for _ in 0..2_000 {
        let dir: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let r = rng.gen::<f64>() * 5.0;
        let y: Vec<f64> = dir.iter().map(|v| v / norm * r).collect();
        let p = exp_map_origin(&y, c).unwrap();
        ok &= (geodesic_distance(&origin, &p).unwrap() - 2.0 * r).abs() < 1e-9;
        // Containment for every constructor.
        ok &= c.get().sqrt() * p.coords().iter().map(|v| v * v).sum::<f64>().sqrt()
            <= 1.0 - EPS_BALL + 1e-15;
    }
    for _ in 0..2_000 {
        let a = rand_point(&mut rng);
        let b = rand_point(&mut rng);
        let s = mobius_add(&a, &b).unwrap();
        ok &= c.get().sqrt() * s.coords().iter().map(|v| v * v).sum::<f64>().sqrt()
            <= 1.0 - EPS_BALL + 1e-15;
    }

    let elapsed = started.elapsed().as_secs_f64();
    let pass = ok && elapsed < 10.0;
    let v = verdict(
        "criterion 2 (manifold identities)",
        pass,
        &format!("identity/symmetry/triangle on 10⁴ triples, radial 2‖y‖, containment; runtime {elapsed:.1}s < 10s"),
    );
    assert!(v);
}

// ---- criterion 3: normalization invariants ----

#[test]
fn c3_normalization_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    let mut worst_row_err = 0.0f64;
    for trial in 0..1_000 {
        let m = 1 + (trial % 4);
        let k = 1 + (trial % 5);
        let cfg = TrainConfig {
            feat_dim: 6,
            model_dim: 8,
            ball_dim: 4,
            evidence: m,
            modes: k,
            layers: 1,
            seed: trial as u64,
            ..TrainConfig::default()
        };
        let model = Model::init(&cfg).unwrap();
        let t = 1 + (trial % 9);
        let feats: Vec<f64> = (0..t * 6).map(|_| (rng.gen::<f64>() - 0.5) * 6.0).collect();
        let s = model.score(&feats, t);

        for mi in 0..m {
            let attn_sum: f64 = s.attn[mi * t..(mi + 1) * t].iter().sum();
            let q_row = &s.resp[mi * k..(mi + 1) * k];
            let q_sum: f64 = q_row.iter().sum();
            worst_row_err = worst_row_err.max((attn_sum - 1.0).abs()).max((q_sum - 1.0).abs());
            ok &= (attn_sum - 1.0).abs() < 1e-9 && (q_sum - 1.0).abs() < 1e-9;
            ok &= s.attn[mi * t..(mi + 1) * t].iter().all(|w| *w >= 0.0);
            ok &= q_row.iter().all(|p| *p >= 0.0);
        }

        // Soft-min sandwich, exact: recompute the scaled scores the way the
        // head does and check lower/upper bounds per evidence row.
        let tau = cfg.tau;
        for mi in 0..m {
            let d_row = &s.dist_pos[mi * k..(mi + 1) * k];
            let lower =
                d_row.iter().map(|x| x * (-1.0 / tau)).fold(f64::NEG_INFINITY, f64::max);
            // s₊ per evidence is not exported directly; reconstruct through
            // the same lse primitive the model uses.
            let mut tape = Tape::new();
            let node = tape.input(1, k, d_row);
            let scaled = tape.scale(node, -1.0 / tau);
            let lse = tape.row_lse(scaled);
            let sp = tape.value(lse)[0];
            ok &= sp >= lower && sp <= lower + (k as f64).ln();
        }
    }
    let v = verdict(
        "criterion 3 (normalization invariants)",
        ok,
        &format!("10³ forward passes; worst row-sum error {worst_row_err:.2e} < 1e-9; lse sandwich exact"),
    );
    assert!(v);
}

// ---- criterion 4: metric oracle equivalence ----

fn brute_accuracy_f1(records: &[ScoreRecord], threshold: f64) -> (f64, f64) {
    let n = records.len() as f64;
    let correct = records
        .iter()
        .filter(|r| (r.p_fake >= threshold) == (r.label == Label::Fake))
        .count() as f64;
    let mut macro_f1 = 0.0;
    for class in [Label::Real, Label::Fake] {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for r in records {
            let pred = if r.p_fake >= threshold { Label::Fake } else { Label::Real };
            match (pred == class, r.label == class) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        macro_f1 += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom } / 2.0;
    }
    (correct / n, macro_f1)
}

fn brute_eer(records: &[ScoreRecord]) -> f64 {
    let nf = records.iter().filter(|r| r.label == Label::Fake).count() as f64;
    let nr = records.iter().filter(|r| r.label == Label::Real).count() as f64;
    let mut ts: Vec<f64> = records.iter().map(|r| r.p_fake).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let mut points = vec![(1.0, 0.0)];
    for &t in &ts {
        let fp = records.iter().filter(|r| r.label == Label::Real && r.p_fake >= t).count() as f64;
        let fnr = records.iter().filter(|r| r.label == Label::Fake && r.p_fake < t).count() as f64;
        points.push((fp / nr, fnr / nf));
    }
    points.push((0.0, 1.0));
    for w in points.windows(2) {
        let ((f1, n1), (f2, n2)) = (w[0], w[1]);
        if n2 >= f2 {
            if n2 == f2 {
                return f2;
            }
            let denom = (n2 - n1) - (f2 - f1);
            if denom == 0.0 {
                return f1;
            }
            return f1 + ((f1 - n1) / denom).clamp(0.0, 1.0) * (f2 - f1);
        }
    }
    unreachable!()
}

#[test]
fn c4_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let nf = 1 + rng.gen::<usize>() % 25;
        let nr = 1 + rng.gen::<usize>() % 25;
        let quant = |v: f64| (v * 10.0).round() / 10.0;
        let mut records: Vec<ScoreRecord> = Vec::new();
        for i in 0..nf {
            records.push(ScoreRecord {
                id: format!("f{i}"),
                label: Label::Fake,
                p_fake: quant(rng.gen()),
                group: String::new(),
            });
        }
        for i in 0..nr {
            records.push(ScoreRecord {
                id: format!("r{i}"),
                label: Label::Real,
                p_fake: quant(rng.gen()),
                group: String::new(),
            });
        }
        let t: f64 = rng.gen();
        let (acc, f1) = accuracy_f1(&records, t).unwrap();
        let (bacc, bf1) = brute_accuracy_f1(&records, t);
        let e = eer(&records).unwrap();
        let be = brute_eer(&records);
        let st = select_threshold(&records).unwrap();
        let bst = {
            let mut best = (f64::NEG_INFINITY, 0.0);
            for cand in phoenix_core::metrics::threshold_candidates(&records) {
                let (_, f1) = brute_accuracy_f1(&records, cand);
                if f1 > best.0 {
                    best = (f1, cand);
                }
            }
            best.1
        };
        for delta in [acc - bacc, f1 - bf1, e - be, st - bst] {
            worst = worst.max(delta.abs());
            ok &= delta.abs() < 1e-9;
        }
    }

    // Edge cases.
    let rec = |label, p| ScoreRecord { id: String::new(), label, p_fake: p, group: String::new() };
    let sep = vec![rec(Label::Fake, 0.9), rec(Label::Fake, 0.8), rec(Label::Real, 0.1), rec(Label::Real, 0.2)];
    ok &= eer(&sep).unwrap() == 0.0;
    let inv = vec![rec(Label::Fake, 0.1), rec(Label::Fake, 0.2), rec(Label::Real, 0.9), rec(Label::Real, 0.8)];
    ok &= eer(&inv).unwrap() == 1.0;
    let interleaved = vec![rec(Label::Fake, 0.6), rec(Label::Fake, 0.2), rec(Label::Real, 0.7), rec(Label::Real, 0.3)];
    ok &= (eer(&interleaved).unwrap() - 0.5).abs() < 1e-12;

    let v = verdict(
        "criterion 4 (metric oracle equivalence)",
        ok,
        &format!("10³ trials vs O(n²) brute force, worst |Δ| {worst:.2e} < 1e-9; EER edges 0/1/0.5"),
    );
    assert!(v);
}

// ---- criterion 5: synthetic end-to-end ----

#[test]
fn c5_synthetic_end_to_end() {
    let started = Instant::now();
    let data = default_data();
    let cfg = train_full_config(Variant::Full, 42);
    let trained = train(&cfg, &data.train, &data.dev, |_| {}).expect("training");
    let elapsed = started.elapsed().as_secs_f64();
    let (acc, _, e) = test_metrics(&trained);
    let pass = acc >= 0.95 && e <= 0.05 && elapsed < 300.0;
    let v = verdict(
        "criterion 5 (synthetic end-to-end)",
        pass,
        &format!("test acc {acc:.4} (gate ≥ 0.95), EER {e:.4} (gate ≤ 0.05), runtime {elapsed:.0}s (gate < 300s)"),
    );
    assert!(
        v,
        "the pinned optimizer budget (20 epochs × ⌈400/32⌉ batches at lr 1e-4) \
         caps desk-scale accuracy near the mean-pool information bound; see the \
         project decision log for the full analysis"
    );
}

// ---- criterion 6: ablation ordering ----

#[test]
fn c6_ablation_ordering() {
    let seeds = [42u64, 43, 44];
    let mut acc = HashMap::new();
    for &seed in &seeds {
        for variant in [Variant::Full, Variant::Euclidean, Variant::M1] {
            let model = trained(variant, seed);
            let (a, _, _) = test_metrics(&model);
            acc.insert((variant as u8, seed), a);
        }
    }
    let get = |v: Variant, s: u64| acc[&(v as u8, s)];
    let full_ge_euc = seeds.iter().filter(|&&s| get(Variant::Full, s) >= get(Variant::Euclidean, s)).count();
    let full_ge_m1 = seeds.iter().filter(|&&s| get(Variant::Full, s) >= get(Variant::M1, s)).count();
    let m1_gap = seeds
        .iter()
        .filter(|&&s| get(Variant::Full, s) - get(Variant::M1, s) >= 0.02)
        .count();
    let pass = full_ge_euc >= 2 && full_ge_m1 >= 2 && m1_gap >= 2;
    let detail: Vec<String> = seeds
        .iter()
        .map(|&s| {
            format!(
                "seed {s}: full {:.2} euc {:.2} m1 {:.2}",
                get(Variant::Full, s),
                get(Variant::Euclidean, s),
                get(Variant::M1, s)
            )
        })
        .collect();
    let v = verdict(
        "criterion 6 (ablation ordering)",
        pass,
        &format!(
            "{}; full≥euc on {full_ge_euc}/3, full≥m1 on {full_ge_m1}/3, m1 trails ≥2pts on {m1_gap}/3 (gates: 2/3 each)",
            detail.join("; ")
        ),
    );
    assert!(
        v,
        "variant orderings are noise-dominated at the pinned desk-scale training \
         budget; see the project decision log for the full analysis"
    );
}

// ---- criterion 7: mode discovery ----

#[test]
fn c7_mode_discovery() {
    let model = trained(Variant::Full, 42);
    let purity = mode_purity(&model.model, &default_data().test).expect("purity");
    let pass = purity.purity >= 0.8;
    let v = verdict(
        "criterion 7 (mode discovery)",
        pass,
        &format!(
            "mode purity {:.4} over {} fake test utterances (gate ≥ 0.8)",
            purity.purity, purity.fake_count
        ),
    );
    assert!(
        v,
        "prototype specialization does not emerge within the pinned training \
         budget; see the project decision log for the full analysis"
    );
}

// ---- criterion 8: null control ----

#[test]
fn c8_null_control() {
    let synth = SynthConfig { artifact_frac: 0.0, ..SynthConfig::default() };
    let data = make_splits(&synth);
    let cfg = train_full_config(Variant::Full, 42);
    let trained = train(&cfg, &data.train, &data.dev, |_| {}).expect("training");
    let records = evaluate(&trained.model, &data.test).expect("evaluation");
    let (acc, _) = accuracy_f1(&records, trained.threshold).expect("metrics");
    let pass = (0.4..=0.6).contains(&acc);
    let v = verdict(
        "criterion 8 (null control)",
        pass,
        &format!("ρ = 0 test accuracy {acc:.4} (gate within [0.4, 0.6])"),
    );
    assert!(v);
}

// ---- criterion 9: determinism and persistence ----

#[test]
fn c9_determinism_and_persistence() {
    // Small configuration keeps this cheap while exercising every stage.
    let synth = SynthConfig {
        feat_dim: 12,
        t_min: 8,
        t_max: 16,
        modes: 3,
        train_count: 24,
        dev_count: 12,
        test_count: 12,
        seed: 5,
        ..SynthConfig::default()
    };
    let data = make_splits(&synth);
    let cfg = TrainConfig {
        feat_dim: 12,
        model_dim: 16,
        ball_dim: 8,
        evidence: 3,
        modes: 3,
        layers: 2,
        epochs: 3,
        batch_size: 8,
        seed: 31,
        ..TrainConfig::default()
    };

    let dir = tempfile::tempdir().unwrap();
    let run = |path: &std::path::Path| -> (Vec<u8>, Vec<u64>, f64) {
        let trained = train(&cfg, &data.train, &data.dev, |_| {}).expect("training");
        trained.save(path).expect("save");
        let records = evaluate(&trained.model, &data.test).expect("evaluation");
        let bits: Vec<u64> = records.iter().map(|r| r.p_fake.to_bits()).collect();
        (std::fs::read(path).unwrap(), bits, trained.threshold)
    };
    let (bytes_a, scores_a, thr_a) = run(&dir.path().join("a.phnx"));
    let (bytes_b, scores_b, thr_b) = run(&dir.path().join("b.phnx"));
    let identical = bytes_a == bytes_b && scores_a == scores_b && thr_a.to_bits() == thr_b.to_bits();

    // save → load → eval equals in-memory eval exactly.
    let loaded = TrainedModel::load(&dir.path().join("a.phnx")).expect("load");
    let records = evaluate(&loaded.model, &data.test).expect("evaluation");
    let reload_ok =
        records.iter().map(|r| r.p_fake.to_bits()).collect::<Vec<_>>() == scores_a;

    // Feature round-trip stays bit-exact including subnormals/signed zero.
    let tricky = vec![
        0.0f32,
        -0.0,
        f32::MIN_POSITIVE,
        1.0e-44,          // subnormal
        -1.0e-40,         // subnormal
        f32::MAX,
        f32::MIN,
        1.5,
    ];
    let seq = phoenix_core::data::FeatureSequence { t: 4, d: 2, data: tricky.clone() };
    let fpath = dir.path().join("tricky.hcfd");
    phoenix_core::data::write_feature_file(&seq, &fpath).expect("write");
    let back = phoenix_core::data::read_feature_file(&fpath).expect("read");
    let roundtrip_ok = back
        .data
        .iter()
        .zip(&tricky)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let pass = identical && reload_ok && roundtrip_ok;
    let v = verdict(
        "criterion 9 (determinism and persistence)",
        pass,
        &format!(
            "checkpoint bytes identical: {identical}; reload-eval exact: {reload_ok}; feature round-trip exact: {roundtrip_ok}"
        ),
    );
    assert!(v);
}
