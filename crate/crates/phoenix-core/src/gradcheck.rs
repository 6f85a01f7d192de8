//! Finite-difference verification of the analytic gradients.
//!
//! The oracle is independent of the backward path: it probes the batch
//! loss as a black-box scalar function of every parameter with central
//! differences and compares against the tape's accumulated gradients.

use rand::Rng;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::model::Model;
use crate::objective::{batch_loss, BatchItem, LossWeights};
use crate::rng::subseed;

pub const FD_STEP: f64 = 1e-5;
pub const REL_ERR_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub loss: f64,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel < self.threshold
    }

    /// One line per parameter group plus a verdict, as structured text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("group\tcount\tmax_rel_err\tmean_rel_err\n");
        for g in &self.groups {
            out.push_str(&format!(
                "{}\t{}\t{:.3e}\t{:.3e}\n",
                g.name, g.count, g.max_rel, g.mean_rel
            ));
        }
        out.push_str(&format!(
            "overall\tmax {:.3e}\tmean {:.3e}\tthreshold {:.1e}\tresult {}\n",
            self.max_rel,
            self.mean_rel,
            self.threshold,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Deterministic two-utterance probe batch (one real, one fake) at the
/// configured feature dimension.
fn probe_batch(feat_dim: usize, t: usize, seed: u64) -> Vec<(Vec<f64>, usize, bool)> {
    let mut rng = subseed(seed, "gradcheck-data", 0);
    let mut gen = |fake: bool| {
        let mut feats: Vec<f64> = (0..t * feat_dim)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * 1.5)
            .collect();
        if fake {
            // A crude localized offset so the two items differ in structure.
            for ti in (0..t).step_by(3) {
                feats[ti * feat_dim] += 2.0;
            }
        }
        (feats, t, fake)
    };
    vec![gen(false), gen(true)]
}

/// Runs the central-difference check (step [`FD_STEP`]) over every scalar
/// parameter of a model built from `cfg` with `seed` substituted in.
///
/// The relative error per scalar is |a−f| / max(|a|+|f|, 1e−3) so that
/// parameters with near-zero true gradient are compared absolutely.
pub fn finite_difference_check(cfg: &TrainConfig, seed: u64) -> Result<GradCheckReport> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let mut model = Model::init(&cfg)?;
    let weights = LossWeights::from(&cfg);
    let data = probe_batch(cfg.feat_dim, 6, seed);
    let batch: Vec<BatchItem> =
        data.iter().map(|(f, t, fake)| BatchItem { feats: f, t: *t, fake: *fake }).collect();

    model.store.zero_grads();
    let value = batch_loss(&mut model, &batch, &weights, true)?;
    let analytic: Vec<Vec<f64>> =
        model.store.tensors().iter().map(|t| t.grad.clone()).collect();

    let mut groups = Vec::new();
    let mut max_rel = 0.0f64;
    let mut rel_sum = 0.0;
    let mut total_count = 0usize;
    for ti in 0..model.store.tensors().len() {
        let (name, n) = {
            let t = &model.store.tensors()[ti];
            (t.name.clone(), t.len())
        };
        let mut g_max = 0.0f64;
        let mut g_sum = 0.0;
        for i in 0..n {
            let orig = model.store.tensors()[ti].values[i];
            model.store.tensors_mut()[ti].values[i] = orig + FD_STEP;
            let plus = batch_loss(&mut model, &batch, &weights, false)?.total;
            model.store.tensors_mut()[ti].values[i] = orig - FD_STEP;
            let minus = batch_loss(&mut model, &batch, &weights, false)?.total;
            model.store.tensors_mut()[ti].values[i] = orig;

            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[ti][i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-3);
            g_max = g_max.max(rel);
            g_sum += rel;
        }
        max_rel = max_rel.max(g_max);
        rel_sum += g_sum;
        total_count += n;
        groups.push(GroupReport { name, max_rel: g_max, mean_rel: g_sum / n as f64, count: n });
    }

    Ok(GradCheckReport {
        groups,
        max_rel,
        mean_rel: rel_sum / total_count as f64,
        loss: value.total,
        threshold: REL_ERR_THRESHOLD,
    })
}
