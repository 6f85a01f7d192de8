//! Model introspection: prototype geometry and mode-discovery purity.

use crate::data::{Label, Utterance};
use crate::error::{Error, Result};
use crate::manifold;
use crate::model::Model;

/// Pairwise prototype geometry of a trained model.
#[derive(Debug, Clone)]
pub struct PrototypeReport {
    pub modes: usize,
    /// K×K distances among the positive prototypes (zero diagonal).
    pub pos_pairwise: Vec<f64>,
    /// K distances from each positive prototype to the negative one.
    pub pos_to_neg: Vec<f64>,
    pub hyperbolic: bool,
}

impl PrototypeReport {
    pub fn render(&self) -> String {
        let k = self.modes;
        let mut out = String::new();
        out.push_str(&format!(
            "prototypes: K = {k} positive, 1 negative ({} metric)\n",
            if self.hyperbolic { "geodesic" } else { "euclidean" }
        ));
        out.push_str("pairwise distances among positive prototypes:\n");
        for i in 0..k {
            let row: Vec<String> =
                (0..k).map(|j| format!("{:.4}", self.pos_pairwise[i * k + j])).collect();
            out.push_str(&format!("  p+{i}: {}\n", row.join("  ")));
        }
        out.push_str("distance to negative prototype:\n");
        for (i, d) in self.pos_to_neg.iter().enumerate() {
            out.push_str(&format!("  p+{i} ↔ p−: {d:.4}\n"));
        }
        out
    }
}

/// Realizes the prototypes and tabulates their pairwise distances.
pub fn prototype_report(model: &Model) -> Result<PrototypeReport> {
    let head = model.prototype_head().ok_or_else(|| {
        Error::config("this checkpoint's variant has no prototypes to inspect (meanpool)")
    })?;
    let k = model.cfg.modes;
    let h = model.cfg.ball_dim;
    let neg_t = &model.store.get(head.neg).values;
    let pos_t = &model.store.get(head.pos).values;

    let realize = |v: &[f64]| -> Vec<f64> {
        if head.hyperbolic {
            let mut out = vec![0.0; v.len()];
            manifold::exp_map_origin_raw(v, head.curvature, &mut out);
            out
        } else {
            v.to_vec()
        }
    };
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        if head.hyperbolic {
            manifold::geodesic_distance_raw(a, b, head.curvature)
        } else {
            manifold::euclidean_distance_raw(a, b)
        }
    };

    let neg = realize(neg_t);
    let pos: Vec<Vec<f64>> = (0..k).map(|i| realize(&pos_t[i * h..(i + 1) * h])).collect();
    let mut pos_pairwise = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            pos_pairwise[i * k + j] = if i == j { 0.0 } else { dist(&pos[i], &pos[j]) };
        }
    }
    let pos_to_neg: Vec<f64> = (0..k).map(|i| dist(&pos[i], &neg)).collect();
    Ok(PrototypeReport { modes: k, pos_pairwise, pos_to_neg, hyperbolic: head.hyperbolic })
}

/// Outcome of matching discovered prototypes against generator modes.
#[derive(Debug, Clone)]
pub struct PurityReport {
    /// Fraction of fake utterances whose assigned prototype matches their
    /// generator mode under the best injective prototype→mode matching.
    pub purity: f64,
    pub fake_count: usize,
    /// Contingency counts, prototypes × modes (row-major).
    pub counts: Vec<usize>,
    pub mode_names: Vec<String>,
    pub modes: usize,
}

impl PurityReport {
    pub fn render(&self) -> String {
        let k = self.modes;
        let g = self.mode_names.len();
        let mut out = String::new();
        out.push_str(&format!("mode purity: {:.4} over {} fake utterances\n", self.purity, self.fake_count));
        out.push_str(&format!("assignment counts (rows: prototypes, cols: {}):\n", self.mode_names.join(", ")));
        for i in 0..k {
            let row: Vec<String> = (0..g).map(|j| self.counts[i * g + j].to_string()).collect();
            out.push_str(&format!("  p+{i}: {}\n", row.join("\t")));
        }
        out
    }
}

/// Best total agreement over injective prototype→mode assignments,
/// exact bitmask dynamic programming over the mode set.
fn best_matching(counts: &[usize], k: usize, g: usize) -> usize {
    let full = 1usize << g;
    let neg_inf = usize::MAX;
    // dp[mask] = best agreement using prototypes 0..popcount(mask) — we
    // instead iterate prototypes explicitly: dp over (prototype index,
    // used-mode mask) compressed to one vector per prototype round.
    let mut dp = vec![neg_inf; full];
    dp[0] = 0;
    for i in 0..k {
        let mut next = dp.clone(); // skipping prototype i (no mode assigned)
        for (mask, &val) in dp.iter().enumerate() {
            if val == neg_inf {
                continue;
            }
            for j in 0..g {
                if mask & (1 << j) == 0 {
                    let m2 = mask | (1 << j);
                    let cand = val + counts[i * g + j];
                    if next[m2] == neg_inf || cand > next[m2] {
                        next[m2] = cand;
                    }
                }
            }
        }
        dp = next;
    }
    dp.into_iter().filter(|&v| v != neg_inf).max().unwrap_or(0)
}

/// Assigns each fake utterance to the prototype with the highest mean
/// responsibility, then scores the agreement with the generator modes
/// recorded in the group tags under the best injective matching.
pub fn mode_purity(model: &Model, data: &[Utterance]) -> Result<PurityReport> {
    if model.prototype_head().is_none() {
        return Err(Error::config("mode purity requires a prototype head (not meanpool)"));
    }
    let fakes: Vec<&Utterance> = data.iter().filter(|u| u.label == Label::Fake).collect();
    if fakes.is_empty() {
        return Err(Error::config("mode purity needs fake-labelled utterances"));
    }
    let mut mode_names: Vec<String> = fakes.iter().map(|u| u.group.clone()).collect();
    mode_names.sort();
    mode_names.dedup();
    if mode_names.iter().all(|m| m.is_empty() || m == "-") {
        return Err(Error::config(
            "mode purity requires group tags carrying generator modes; this manifest has none",
        ));
    }

    let k = model.cfg.modes;
    let g = mode_names.len();
    let mut counts = vec![0usize; k * g];
    for u in &fakes {
        let s = model.score(&u.feats, u.t);
        let m = s.evidence;
        // Mean responsibility per prototype over the M evidence slots.
        let mut mean_q = vec![0.0; k];
        for mi in 0..m {
            for ki in 0..k {
                mean_q[ki] += s.resp[mi * k + ki] / m as f64;
            }
        }
        let assigned = mean_q
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let mode = mode_names.iter().position(|n| *n == u.group).unwrap();
        counts[assigned * g + mode] += 1;
    }

    let agree = best_matching(&counts, k, g);
    Ok(PurityReport {
        purity: agree as f64 / fakes.len() as f64,
        fake_count: fakes.len(),
        counts,
        mode_names,
        modes: k,
    })
}
