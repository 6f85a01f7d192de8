//! Evaluation metrics over per-utterance score records: accuracy and
//! macro-F1 at a fixed decision threshold, and the equal error rate from
//! the score distributions.

use crate::data::Label;
use crate::error::{Error, Result};

/// One scored utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub label: Label,
    pub p_fake: f64,
    /// Free-form breakdown tag (synthetic mode, codec, condition).
    pub group: String,
}

/// Accuracy and macro-F1 with `predict fake ⇔ p_fake ≥ threshold`.
///
/// Per-class F1 uses the convention that a class with no true and no
/// predicted members contributes F1 = 0.
pub fn accuracy_f1(records: &[ScoreRecord], threshold: f64) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::structure("accuracy_f1 needs at least one record"));
    }
    let mut correct = 0usize;
    // Confusion counts with fake as positive.
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for r in records {
        let pred_fake = r.p_fake >= threshold;
        match (r.label, pred_fake) {
            (Label::Fake, true) => tp += 1,
            (Label::Fake, false) => fn_ += 1,
            (Label::Real, true) => fp += 1,
            (Label::Real, false) => tn += 1,
        }
        if (r.label == Label::Fake) == pred_fake {
            correct += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let f1_fake = f1(tp, fp, fn_);
    let f1_real = f1(tn, fn_, fp); // real as positive: FP/FN swap roles
    let accuracy = correct as f64 / records.len() as f64;
    Ok((accuracy, 0.5 * (f1_fake + f1_real)))
}

/// Equal error rate with fake as the positive class.
///
/// FPR(t) is the fraction of reals scored ≥ t, FNR(t) the fraction of
/// fakes scored < t. The sweep runs over the sorted unique scores; when no
/// threshold gives FPR = FNR exactly, the crossing is linearly
/// interpolated between the adjacent sweep points.
pub fn eer(records: &[ScoreRecord]) -> Result<f64> {
    let fakes: Vec<f64> =
        records.iter().filter(|r| r.label == Label::Fake).map(|r| r.p_fake).collect();
    let reals: Vec<f64> =
        records.iter().filter(|r| r.label == Label::Real).map(|r| r.p_fake).collect();
    if fakes.is_empty() || reals.is_empty() {
        return Err(Error::structure("eer needs both classes present"));
    }

    let mut thresholds: Vec<f64> = records.iter().map(|r| r.p_fake).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();

    let rates = |t: f64| -> (f64, f64) {
        let fpr = reals.iter().filter(|&&s| s >= t).count() as f64 / reals.len() as f64;
        let fnr = fakes.iter().filter(|&&s| s < t).count() as f64 / fakes.len() as f64;
        (fpr, fnr)
    };

    // Virtual starting point below every score: everything predicted fake.
    let mut prev = (1.0f64, 0.0f64);
    let mut sweep: Vec<(f64, f64)> = Vec::with_capacity(thresholds.len() + 1);
    sweep.push(prev);
    for &t in &thresholds {
        sweep.push(rates(t));
    }
    // Virtual end point above every score: everything predicted real.
    sweep.push((0.0, 1.0));

    for &(fpr, fnr) in &sweep {
        if fnr >= fpr {
            // Crossing lies between prev (fnr < fpr) and here.
            let (fpr_p, fnr_p) = prev;
            if fnr == fpr {
                return Ok(fpr);
            }
            let denom = (fnr - fnr_p) - (fpr - fpr_p);
            if denom == 0.0 {
                return Ok(fpr_p);
            }
            let alpha = ((fpr_p - fnr_p) / denom).clamp(0.0, 1.0);
            return Ok(fpr_p + alpha * (fpr - fpr_p));
        }
        prev = (fpr, fnr);
    }
    unreachable!("sweep always ends with FNR = 1 ≥ FPR = 0");
}

/// Candidate thresholds for selection: 0, 1, and the midpoints of adjacent
/// sorted unique scores.
pub fn threshold_candidates(records: &[ScoreRecord]) -> Vec<f64> {
    let mut scores: Vec<f64> = records.iter().map(|r| r.p_fake).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    scores.dedup();
    let mut cands = vec![0.0];
    for w in scores.windows(2) {
        cands.push(0.5 * (w[0] + w[1]));
    }
    cands.push(1.0);
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands
}

/// Exhaustive macro-F1-maximizing threshold selection with deterministic
/// tie-breaking toward the smaller threshold.
pub fn select_threshold(records: &[ScoreRecord]) -> Result<f64> {
    let has = |l: Label| records.iter().any(|r| r.label == l);
    if !has(Label::Fake) || !has(Label::Real) {
        return Err(Error::config("threshold selection needs both classes present"));
    }
    let mut best_t = 0.0;
    let mut best_f1 = f64::NEG_INFINITY;
    for t in threshold_candidates(records) {
        let (_, f1) = accuracy_f1(records, t)?;
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = t;
        }
    }
    Ok(best_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: Label, p: f64) -> ScoreRecord {
        ScoreRecord { id: String::new(), label, p_fake: p, group: String::new() }
    }

    fn recs(fakes: &[f64], reals: &[f64]) -> Vec<ScoreRecord> {
        let mut v: Vec<ScoreRecord> = fakes.iter().map(|&p| rec(Label::Fake, p)).collect();
        v.extend(reals.iter().map(|&p| rec(Label::Real, p)));
        v
    }

    #[test]
    fn accuracy_f1_values() {
        // All correct.
        let r = recs(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(accuracy_f1(&r, 0.5).unwrap(), (1.0, 1.0));

        // One of each class, both predicted fake → acc 0.5, macro-F1 1/3.
        let r = recs(&[0.9], &[0.8]);
        let (acc, f1) = accuracy_f1(&r, 0.5).unwrap();
        assert_eq!(acc, 0.5);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);

        // Threshold 0 → everything fake; accuracy = fake prevalence.
        let r = recs(&[0.7, 0.6, 0.5], &[0.4]);
        let (acc, _) = accuracy_f1(&r, 0.0).unwrap();
        assert_eq!(acc, 0.75);

        assert!(accuracy_f1(&[], 0.5).is_err());
    }

    #[test]
    fn ties_at_threshold_predict_fake() {
        let r = recs(&[0.5], &[0.5]);
        let (acc, _) = accuracy_f1(&r, 0.5).unwrap();
        assert_eq!(acc, 0.5); // both predicted fake: fake correct, real wrong
    }

    #[test]
    fn eer_edge_cases() {
        // Perfect separation → 0.
        assert_eq!(eer(&recs(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 0.0);
        // Total inversion → 1.
        assert_eq!(eer(&recs(&[0.1, 0.2], &[0.9, 0.8])).unwrap(), 1.0);
        // Interleaved 4-point case → 0.5.
        assert_eq!(eer(&recs(&[0.6, 0.2], &[0.7, 0.3])).unwrap(), 0.5);
        // Single class → structural error.
        assert!(eer(&recs(&[0.5], &[])).is_err());
    }

    #[test]
    fn eer_is_rank_invariant_and_bounded() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let nf = 1 + rng.gen::<usize>() % 20;
            let nr = 1 + rng.gen::<usize>() % 20;
            let fakes: Vec<f64> = (0..nf).map(|_| rng.gen()).collect();
            let reals: Vec<f64> = (0..nr).map(|_| rng.gen()).collect();
            let base = eer(&recs(&fakes, &reals)).unwrap();
            assert!((0.0..=1.0).contains(&base));

            // Strictly increasing transform (scaled sigmoid) preserves order.
            let squash = |v: f64| 1.0 / (1.0 + (-(3.0 * v - 1.0)).exp());
            let tf: Vec<f64> = fakes.iter().map(|&v| squash(v)).collect();
            let tr: Vec<f64> = reals.iter().map(|&v| squash(v)).collect();
            let transformed = eer(&recs(&tf, &tr)).unwrap();
            assert!((base - transformed).abs() < 1e-9, "{base} vs {transformed}");

            // Permutation invariance.
            let mut shuffled = recs(&fakes, &reals);
            shuffled.shuffle(&mut rng);
            assert_eq!(eer(&shuffled).unwrap(), base);
        }
    }

    #[test]
    fn eer_zero_iff_strict_separation() {
        let sep = recs(&[0.51, 0.6], &[0.5, 0.1]);
        assert_eq!(eer(&sep).unwrap(), 0.0);
        // Touching scores (min fake == max real) can no longer be zero.
        let touch = recs(&[0.5, 0.6], &[0.5, 0.1]);
        assert!(eer(&touch).unwrap() > 0.0);
    }

    #[test]
    fn threshold_selection_behavior() {
        // Perfectly separated → smallest midpoint in the gap, macro-F1 = 1.
        let r = recs(&[0.8, 0.9], &[0.1, 0.3]);
        let t = select_threshold(&r).unwrap();
        assert_eq!(t, 0.55); // midpoint of 0.3 and 0.8
        assert_eq!(accuracy_f1(&r, t).unwrap().1, 1.0);

        // All scores identical → threshold forces one class.
        let r = recs(&[0.5], &[0.5]);
        let t = select_threshold(&r).unwrap();
        let (acc, _) = accuracy_f1(&r, t).unwrap();
        assert_eq!(acc, 0.5);

        // Single class rejected.
        assert!(select_threshold(&recs(&[0.1], &[])).is_err());
    }

    // ---- independent O(n²) brute-force oracles ----

    fn brute_accuracy_f1(records: &[ScoreRecord], threshold: f64) -> (f64, f64) {
        let n = records.len() as f64;
        let mut correct = 0.0;
        for r in records {
            let pred = if r.p_fake >= threshold { Label::Fake } else { Label::Real };
            if pred == r.label {
                correct += 1.0;
            }
        }
        let mut macro_f1 = 0.0;
        for class in [Label::Real, Label::Fake] {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for r in records {
                let pred = if r.p_fake >= threshold { Label::Fake } else { Label::Real };
                if pred == class && r.label == class {
                    tp += 1.0;
                } else if pred == class {
                    fp += 1.0;
                } else if r.label == class {
                    fn_ += 1.0;
                }
            }
            let denom = 2.0 * tp + fp + fn_;
            macro_f1 += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom } / 2.0;
        }
        (correct / n, macro_f1)
    }

    fn brute_eer(records: &[ScoreRecord]) -> f64 {
        // Independent rewrite: walks every threshold, recounting from
        // scratch, then solves the crossing segment.
        let mut points: Vec<(f64, f64)> = vec![(1.0, 0.0)];
        let mut ts: Vec<f64> = records.iter().map(|r| r.p_fake).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        let nf = records.iter().filter(|r| r.label == Label::Fake).count() as f64;
        let nr = records.iter().filter(|r| r.label == Label::Real).count() as f64;
        for &t in &ts {
            let mut fp = 0.0;
            let mut fnr = 0.0;
            for r in records {
                match r.label {
                    Label::Real if r.p_fake >= t => fp += 1.0,
                    Label::Fake if r.p_fake < t => fnr += 1.0,
                    _ => {}
                }
            }
            points.push((fp / nr, fnr / nf));
        }
        points.push((0.0, 1.0));
        for w in points.windows(2) {
            let (f1, n1) = w[0];
            let (f2, n2) = w[1];
            if n2 >= f2 {
                if n2 == f2 {
                    return f2;
                }
                let denom = (n2 - n1) - (f2 - f1);
                if denom == 0.0 {
                    return f1;
                }
                let a = ((f1 - n1) / denom).clamp(0.0, 1.0);
                return f1 + a * (f2 - f1);
            }
        }
        unreachable!()
    }

    fn brute_select_threshold(records: &[ScoreRecord]) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in threshold_candidates(records) {
            let (_, f1) = brute_accuracy_f1(records, t);
            if f1 > best.0 {
                best = (f1, t);
            }
        }
        best.1
    }

    #[test]
    fn metrics_match_brute_force_on_random_inputs() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..1000 {
            let nf = 1 + rng.gen::<usize>() % 25;
            let nr = 1 + rng.gen::<usize>() % 25;
            // Quantized scores produce plenty of exact ties.
            let q = |v: f64| (v * 8.0).round() / 8.0;
            let fakes: Vec<f64> = (0..nf).map(|_| q(rng.gen())).collect();
            let reals: Vec<f64> = (0..nr).map(|_| q(rng.gen())).collect();
            let records = recs(&fakes, &reals);

            let t: f64 = rng.gen();
            let (acc, f1) = accuracy_f1(&records, t).unwrap();
            let (bacc, bf1) = brute_accuracy_f1(&records, t);
            assert!((acc - bacc).abs() < 1e-9, "trial {trial}");
            assert!((f1 - bf1).abs() < 1e-9, "trial {trial}");

            let e = eer(&records).unwrap();
            let be = brute_eer(&records);
            assert!((e - be).abs() < 1e-9, "trial {trial}: {e} vs {be}");

            let st = select_threshold(&records).unwrap();
            let bst = brute_select_threshold(&records);
            assert!((st - bst).abs() < 1e-12, "trial {trial}: {st} vs {bst}");
        }
    }
}
