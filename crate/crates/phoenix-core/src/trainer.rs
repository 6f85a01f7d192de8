//! End-to-end optimization: AdamW with decoupled weight decay, global
//! gradient-norm clipping, deterministic seeded batching, validation-based
//! threshold selection, and checkpoint persistence.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use crate::config::TrainConfig;
use crate::data::{batch_indices, Label, Utterance};
use crate::error::{Error, Result};
use crate::metrics::{select_threshold, ScoreRecord};
use crate::model::Model;
use crate::objective::{batch_loss, BatchItem, LossWeights};
use crate::tape::ParamStore;

/// Adam moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        AdamW {
            m: store.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            v: store.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected update from the gradients currently held in the
    /// store. Decoupled weight decay θ ← θ − lr·wd·θ is applied separately
    /// from the gradient term and skipped for tensors in `no_decay`.
    pub fn apply(&mut self, store: &mut ParamStore, cfg: &TrainConfig, no_decay: &[usize]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (idx, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let decay = if no_decay.contains(&idx) { 0.0 } else { cfg.weight_decay };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..tensor.values.len() {
                let g = tensor.grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let theta = tensor.values[i];
                tensor.values[i] =
                    theta - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) - cfg.lr * decay * theta;
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cls: f64,
    pub cluster: f64,
    pub sep: f64,
    pub total: f64,
    pub wall_s: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\tloss_cls\tloss_cluster\tloss_sep\tloss_total\twall_s";

    pub fn render(&self) -> String {
        format!(
            "{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.3}",
            self.epoch, self.cls, self.cluster, self.sep, self.total, self.wall_s
        )
    }
}

/// A trained model with its selected threshold, optimizer state, and log.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub threshold: f64,
    pub opt: AdamW,
    pub log: Vec<EpochRecord>,
}

fn check_two_classes(data: &[Utterance], what: &str) -> Result<()> {
    let has = |l: Label| data.iter().any(|u| u.label == l);
    if !(has(Label::Real) && has(Label::Fake)) {
        return Err(Error::config(format!("{what} split must contain both classes")));
    }
    Ok(())
}

/// Scores every utterance in order with a read-only model.
pub fn evaluate(model: &Model, data: &[Utterance]) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(data.len());
    for u in data {
        model.check_feat_dim(u.d)?;
        let s = model.score(&u.feats, u.t);
        if !s.p_fake.is_finite() {
            return Err(Error::numeric(format!("non-finite score for utterance {}", u.id)));
        }
        out.push(ScoreRecord {
            id: u.id.clone(),
            label: u.label,
            p_fake: s.p_fake,
            group: u.group.clone(),
        });
    }
    Ok(out)
}

/// Runs the full training protocol and selects the decision threshold on
/// the validation scores after the final epoch. `on_epoch` sees each log
/// record as soon as the epoch finishes (so partial logs survive aborts).
pub fn train(
    cfg: &TrainConfig,
    train_data: &[Utterance],
    dev_data: &[Utterance],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_data.is_empty() || dev_data.is_empty() {
        return Err(Error::config("train and dev splits must be non-empty"));
    }
    check_two_classes(train_data, "train")?;
    check_two_classes(dev_data, "dev")?;

    let mut model = Model::init(cfg)?;
    for u in train_data.iter().chain(dev_data) {
        model.check_feat_dim(u.d)?;
    }

    let weights = LossWeights::from(cfg);
    let mut opt = AdamW::new(&model.store);
    let no_decay: Vec<usize> = model
        .prototype_head()
        .map(|h| vec![h.neg, h.pos])
        .unwrap_or_default();

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = batch_indices(train_data.len(), cfg.batch_size, cfg.seed, epoch as u64);
        let mut cls_sum = 0.0;
        let mut cluster_sum = 0.0;
        let mut fake_total = 0usize;
        let mut sep_sum = 0.0;
        let mut item_total = 0usize;
        for batch_ids in &batches {
            let items: Vec<BatchItem> = batch_ids
                .iter()
                .map(|&i| {
                    let u = &train_data[i];
                    BatchItem { feats: &u.feats, t: u.t, fake: u.label == Label::Fake }
                })
                .collect();
            model.store.zero_grads();
            let loss = batch_loss(&mut model, &items, &weights, true)?;
            model.store.clip_grad_norm(cfg.grad_clip);
            opt.apply(&mut model.store, cfg, &no_decay);

            let fakes = items.iter().filter(|i| i.fake).count();
            cls_sum += loss.cls * items.len() as f64;
            cluster_sum += loss.cluster * fakes as f64;
            fake_total += fakes;
            sep_sum += loss.sep;
            item_total += items.len();
        }
        let cls = cls_sum / item_total as f64;
        let cluster = if fake_total > 0 { cluster_sum / fake_total as f64 } else { 0.0 };
        let sep = sep_sum / batches.len() as f64;
        let record = EpochRecord {
            epoch,
            cls,
            cluster,
            sep,
            total: cls + weights.lambda * cluster + weights.beta * sep,
            wall_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
    }

    let dev_scores = evaluate(&model, dev_data)?;
    let threshold = select_threshold(&dev_scores)?;
    Ok(TrainedModel { model, threshold, opt, log })
}

// ---- checkpoint format ----
//
// Little-endian layout, version 1:
//   magic "PHNX" · u32 version · u32 config-JSON length · config JSON
//   f64 threshold (raw bits) · u64 seed · u64 epochs-consumed
//   u64 optimizer step · u32 tensor count · tensors
// Each tensor: u32 name length · name bytes · u32 rows · u32 cols ·
// rows·cols f64 values. Parameter tensors use their registry name;
// optimizer moments append "#m" / "#v".

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PHNX";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, rows: usize, cols: usize, values: &[f64]) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, rows as u32);
    put_u32(buf, cols as u32);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("checkpoint truncated reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION);
        let config_json = serde_json::to_string(&self.model.cfg)
            .map_err(|e| Error::config(format!("config serialization: {e}")))?;
        put_u32(&mut buf, config_json.len() as u32);
        buf.extend_from_slice(config_json.as_bytes());
        buf.extend_from_slice(&self.threshold.to_le_bytes());
        // RNG state under stateless derivation: the seed plus the number of
        // epochs already consumed fully determine any future stream.
        put_u64(&mut buf, self.model.cfg.seed);
        put_u64(&mut buf, self.log.len() as u64);
        put_u64(&mut buf, self.opt.step);

        let tensors = self.model.store.tensors();
        put_u32(&mut buf, (tensors.len() * 3) as u32);
        for (i, t) in tensors.iter().enumerate() {
            put_tensor(&mut buf, &t.name, t.rows, t.cols, &t.values);
            put_tensor(&mut buf, &format!("{}#m", t.name), t.rows, t.cols, &self.opt.m[i]);
            put_tensor(&mut buf, &format!("{}#v", t.name), t.rows, t.cols, &self.opt.v[i]);
        }

        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic (expected PHNX)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"),
            ));
        }
        let json_len = r.u32("config length")? as usize;
        let config_json = std::str::from_utf8(r.take(json_len, "config")?)
            .map_err(|_| Error::format(12, "config JSON is not UTF-8"))?;
        let cfg: TrainConfig = serde_json::from_str(config_json)
            .map_err(|e| Error::format(12, format!("config JSON: {e}")))?;
        let threshold = r.f64("threshold")?;
        let _seed = r.u64("seed")?;
        let epochs_done = r.u64("epochs consumed")?;
        let step = r.u64("optimizer step")?;

        let mut model = Model::init(&cfg)?;
        let mut opt = AdamW::new(&model.store);
        opt.step = step;

        let count = r.u32("tensor count")? as usize;
        let mut loaded = 0usize;
        for _ in 0..count {
            let name_pos = r.pos;
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::format(name_pos as u64, "tensor name is not UTF-8"))?
                .to_string();
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let n = rows * cols;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(r.f64("tensor data")?);
            }
            let (base, kind) = match name.rsplit_once('#') {
                Some((b, k)) if k == "m" || k == "v" => (b.to_string(), Some(k.to_string())),
                _ => (name.clone(), None),
            };
            let idx = model
                .store
                .tensors()
                .iter()
                .position(|t| t.name == base)
                .ok_or_else(|| {
                    Error::format(name_pos as u64, format!("unknown tensor '{name}' for this config"))
                })?;
            let expect = (model.store.get(idx).rows, model.store.get(idx).cols);
            if expect != (rows, cols) {
                return Err(Error::format(
                    name_pos as u64,
                    format!("tensor '{name}': shape {rows}×{cols} does not match config ({}×{})", expect.0, expect.1),
                ));
            }
            match kind.as_deref() {
                None => model.store.get_mut(idx).values = values,
                Some("m") => opt.m[idx] = values,
                Some("v") => opt.v[idx] = values,
                _ => unreachable!(),
            }
            loaded += 1;
        }
        if loaded != model.store.tensors().len() * 3 {
            return Err(Error::format(
                buf.len() as u64,
                format!(
                    "checkpoint holds {loaded} tensors, config needs {}",
                    model.store.tensors().len() * 3
                ),
            ));
        }
        if r.pos != buf.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after checkpoint payload"));
        }
        // The log is not persisted; keep the epoch count for provenance.
        let log = (0..epochs_done as usize)
            .map(|i| EpochRecord { epoch: i + 1, cls: f64::NAN, cluster: f64::NAN, sep: f64::NAN, total: f64::NAN, wall_s: 0.0 })
            .collect();
        Ok(TrainedModel { model, threshold, opt, log })
    }
}
