//! Feature-sequence file format, dataset manifest, deterministic batching,
//! and the synthetic multi-mode generator.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! offset 0   magic  "HCFD"
//! offset 4   u32    format version (1)
//! offset 8   u32    T  (frames, ≥ 1)
//! offset 12  u32    D  (feature dimension)
//! offset 16  f32[T·D]  row-major payload
//! ```
//!
//! The manifest is line-oriented text, one utterance per line with five
//! tab-separated fields: `id  path  label  split  group`. Paths are
//! relative to the manifest's directory.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;
use crate::error::{Error, Result};
use crate::rng::subseed;

pub const FEATURE_MAGIC: [u8; 4] = *b"HCFD";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::config(format!("unknown label '{other}'"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!(
                "unknown split '{other}' (expected train|dev|test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A T×D frame-level feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub t: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(t: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if t == 0 {
            return Err(Error::structure("feature sequence needs T ≥ 1"));
        }
        if data.len() != t * d {
            return Err(Error::structure(format!(
                "payload length {} does not match T·D = {}",
                data.len(),
                t * d
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("feature values must be finite"));
        }
        Ok(FeatureSequence { t, d, data })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn write_feature_file(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(seq.t as u32).to_le_bytes())?;
    w.write_all(&(seq.d as u32).to_le_bytes())?;
    for v in &seq.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(0, format!("{}: truncated header (need 16 bytes)", path.display())))?;
    if header[0..4] != FEATURE_MAGIC {
        return Err(Error::format(0, format!("{}: bad magic {:?}", path.display(), &header[0..4])));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::format(
            4,
            format!("{}: unsupported version {version} (expected {FEATURE_VERSION})", path.display()),
        ));
    }
    let t = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if t == 0 {
        return Err(Error::format(8, format!("{}: T must be ≥ 1", path.display())));
    }
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(8, format!("{}: T·D overflows", path.display())))?;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::format(
            FEATURE_HEADER_LEN + payload.len() as u64,
            format!(
                "{}: payload is {} bytes, expected {} (T={t}, D={d})",
                path.display(),
                payload.len(),
                expected
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("{}: non-finite feature value", path.display())));
    }
    Ok(FeatureSequence { t, d, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub group: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        let mut offset = 0u64;
        let mut seen = std::collections::HashSet::new();
        for line in text.lines() {
            let line_offset = offset;
            offset += line.len() as u64 + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::format(
                    line_offset,
                    format!("manifest line has {} fields, expected 5 (id\\tpath\\tlabel\\tsplit\\tgroup)", fields.len()),
                ));
            }
            let rec = ManifestRecord {
                id: fields[0].to_string(),
                path: fields[1].to_string(),
                label: Label::parse(fields[2])
                    .map_err(|e| Error::format(line_offset, e.to_string()))?,
                split: Split::parse(fields[3])
                    .map_err(|e| Error::format(line_offset, e.to_string()))?,
                group: fields[4].to_string(),
            };
            if !seen.insert(rec.id.clone()) {
                return Err(Error::format(line_offset, format!("duplicate utterance id '{}'", rec.id)));
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::format(0, "manifest contains no records"));
        }
        Ok(Manifest { records, base_dir })
    }

    pub fn save(records: &[ManifestRecord], path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in records {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.id, r.path, r.label, r.split, r.group)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn split_records(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn splits_present(&self) -> Vec<Split> {
        Split::ALL.into_iter().filter(|s| self.records.iter().any(|r| r.split == *s)).collect()
    }
}

/// A fully loaded utterance ready for the model.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub label: Label,
    pub group: String,
    pub t: usize,
    pub d: usize,
    pub feats: Vec<f64>,
}

/// Loads every utterance of one split into memory, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<Utterance>> {
    let records = manifest.split_records(split);
    if records.is_empty() {
        let available: Vec<&str> =
            manifest.splits_present().iter().map(|s| s.as_str()).collect();
        return Err(Error::structure(format!(
            "split '{split}' is empty; available splits: {}",
            available.join(", ")
        )));
    }
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let seq = read_feature_file(&manifest.base_dir.join(&rec.path))?;
        out.push(Utterance {
            id: rec.id.clone(),
            label: rec.label,
            group: rec.group.clone(),
            t: seq.t,
            d: seq.d,
            feats: seq.to_f64(),
        });
    }
    let d0 = out[0].d;
    if let Some(bad) = out.iter().find(|u| u.d != d0) {
        return Err(Error::structure(format!(
            "inconsistent feature dimension in split '{split}': {} has D={}, {} has D={}",
            out[0].id, d0, bad.id, bad.d
        )));
    }
    Ok(out)
}

/// Orthonormal artifact directions, one per fake mode.
fn mode_directions(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = subseed(cfg.seed, "synth-directions", 0);
    let d = cfg.feat_dim;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(cfg.modes);
    while dirs.len() < cfg.modes {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        // Gram-Schmidt against the accepted directions.
        for u in &dirs {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= proj * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // degenerate draw, resample
        }
        v.iter_mut().for_each(|x| *x /= norm);
        dirs.push(v);
    }
    dirs
}

/// Centered moving average over time, window 3, truncated at the edges.
fn smooth_time(frames: &mut [f64], t: usize, d: usize) {
    let src = frames.to_vec();
    for ti in 0..t {
        let lo = ti.saturating_sub(1);
        let hi = (ti + 1).min(t - 1);
        let n = (hi - lo + 1) as f64;
        for j in 0..d {
            let mut acc = 0.0;
            for k in lo..=hi {
                acc += src[k * d + j];
            }
            frames[ti * d + j] = acc / n;
        }
    }
}

/// One generated utterance plus its metadata (before any file I/O).
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub label: Label,
    pub split: Split,
    /// "real" for bona fide items, "modeN" for fakes.
    pub group: String,
    pub seq: FeatureSequence,
}

/// Deterministically generates the full synthetic dataset in memory.
///
/// Real utterances are temporally smoothed Gaussian noise; fake utterances
/// additionally receive `artifact_strength · δ_g` on a ρ-fraction of
/// randomly chosen frames, where g is the utterance's mode. Labels
/// alternate within each split so class balance is exact.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    cfg.validate()?;
    let dirs = mode_directions(cfg);
    let mut out = Vec::new();
    for split in Split::ALL {
        let count = match split {
            Split::Train => cfg.train_count,
            Split::Dev => cfg.dev_count,
            Split::Test => cfg.test_count,
        };
        for i in 0..count {
            let mut rng = subseed(cfg.seed, &format!("synth-{split}"), i as u64);
            let fake = i % 2 == 1;
            let t = rng.gen_range(cfg.t_min..=cfg.t_max);
            let d = cfg.feat_dim;
            let mut frames: Vec<f64> = (0..t * d)
                .map(|_| {
                    // Box-Muller from two uniforms keeps the draw count fixed.
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                        * cfg.noise_std
                })
                .collect();
            smooth_time(&mut frames, t, d);

            let group = if fake {
                let mode = rng.gen_range(0..cfg.modes);
                let n_art = (cfg.artifact_frac * t as f64).round() as usize;
                let mut order: Vec<usize> = (0..t).collect();
                order.shuffle(&mut rng);
                for &ti in order.iter().take(n_art.min(t)) {
                    for j in 0..d {
                        frames[ti * d + j] += cfg.artifact_strength * dirs[mode][j];
                    }
                }
                format!("mode{mode}")
            } else {
                "real".to_string()
            };

            let data: Vec<f32> = frames.iter().map(|&v| v as f32).collect();
            out.push(SynthUtterance {
                id: format!("{split}-{i:05}"),
                label: if fake { Label::Fake } else { Label::Real },
                split,
                group,
                seq: FeatureSequence::new(t, d, data)?,
            });
        }
    }
    Ok(out)
}

/// Per-split, per-label counts of a generated dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenSummary {
    pub counts: Vec<(Split, usize, usize)>, // (split, real, fake)
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "split\treal\tfake")?;
        for (s, r, k) in &self.counts {
            writeln!(f, "{s}\t{r}\t{k}")?;
        }
        Ok(())
    }
}

/// Generates the dataset and writes `features/*.hcfd` plus `manifest.tsv`
/// under `out_dir`.
pub fn write_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<GenSummary> {
    let utterances = generate_synthetic(cfg)?;
    let feat_dir = out_dir.join("features");
    fs::create_dir_all(&feat_dir)?;
    let mut records = Vec::with_capacity(utterances.len());
    for u in &utterances {
        let rel = format!("features/{}.hcfd", u.id);
        write_feature_file(&u.seq, &out_dir.join(&rel))?;
        records.push(ManifestRecord {
            id: u.id.clone(),
            path: rel,
            label: u.label,
            split: u.split,
            group: u.group.clone(),
        });
    }
    Manifest::save(&records, &out_dir.join("manifest.tsv"))?;

    let mut summary = GenSummary::default();
    for split in Split::ALL {
        let real = utterances.iter().filter(|u| u.split == split && u.label == Label::Real).count();
        let fake = utterances.iter().filter(|u| u.split == split && u.label == Label::Fake).count();
        summary.counts.push((split, real, fake));
    }
    Ok(summary)
}

/// Deterministic shuffled batch index sets for one epoch. The permutation
/// depends on (seed, epoch) only; the last partial batch is kept.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = subseed(seed, "batch-order", epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
