//! Model assembly: parameter registry, seeded initialization, and the
//! forward pass for every variant.

use crate::backbone::Backbone;
use crate::config::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::head::{p_fake_from_logits, MeanPoolHead, PrototypeHead, PrototypeNodes};
use crate::objective::{classification_loss, cluster_loss, LossWeights};
use crate::rng::subseed;
use crate::tape::{NodeId, ParamStore, Tape};

#[derive(Debug, Clone)]
pub enum HeadKind {
    Prototype { evidence: crate::evidence::EvidenceParams, head: PrototypeHead },
    MeanPool(MeanPoolHead),
}

/// All trainable state plus the structural configuration it was built for.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub cfg: TrainConfig,
    backbone: Backbone,
    head: HeadKind,
}

/// Tape handles for one utterance's forward pass.
pub struct Forward {
    pub s_neg: NodeId,
    pub s_pos: NodeId,
    /// Attention weights node (absent for the mean-pool variant).
    pub attn: Option<NodeId>,
    /// Prototype-head internals (absent for the mean-pool variant).
    pub proto: Option<PrototypeNodes>,
}

/// Plain-value scoring output for one utterance.
#[derive(Debug, Clone)]
pub struct ScoreOutput {
    pub p_fake: f64,
    pub s_neg: f64,
    pub s_pos: f64,
    /// M×K responsibilities, row-major (empty for mean-pool).
    pub resp: Vec<f64>,
    /// M×K distances to positive prototypes (empty for mean-pool).
    pub dist_pos: Vec<f64>,
    /// M distances to the negative prototype (empty for mean-pool).
    pub dist_neg: Vec<f64>,
    /// M×T attention weights (empty for mean-pool).
    pub attn: Vec<f64>,
    pub evidence: usize,
    pub modes: usize,
}

impl Model {
    /// Builds and seeds a model from the configuration. The RNG stream is
    /// derived from (seed, "model-init") only, so two models with the same
    /// seed and dims start identical regardless of training settings.
    pub fn init(cfg: &TrainConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = subseed(cfg.seed, "model-init", 0);
        let mut store = ParamStore::new();
        let backbone =
            Backbone::init(&mut store, &mut rng, cfg.feat_dim, cfg.model_dim, cfg.layers);
        let head = match cfg.variant {
            Variant::MeanPool => HeadKind::MeanPool(MeanPoolHead::init(&mut store, &mut rng, cfg.model_dim)),
            v => {
                let m = cfg.effective_evidence();
                let evidence =
                    crate::evidence::EvidenceParams::init(&mut store, &mut rng, m, cfg.model_dim);
                let head = PrototypeHead::init(
                    &mut store,
                    &mut rng,
                    cfg.model_dim,
                    cfg.ball_dim,
                    cfg.modes,
                    v != Variant::Euclidean,
                    cfg.curvature,
                    cfg.tau,
                );
                HeadKind::Prototype { evidence, head }
            }
        };
        Ok(Model { store, cfg: cfg.clone(), backbone, head })
    }

    pub fn head(&self) -> &HeadKind {
        &self.head
    }

    pub fn prototype_head(&self) -> Option<&PrototypeHead> {
        match &self.head {
            HeadKind::Prototype { head, .. } => Some(head),
            HeadKind::MeanPool(_) => None,
        }
    }

    /// Records the full forward pass for one utterance on `tape`.
    /// `feats` is row-major T×D.
    pub fn forward(&self, tape: &mut Tape, feats: &[f64], t: usize) -> Forward {
        assert_eq!(feats.len(), t * self.cfg.feat_dim, "feature buffer shape mismatch");
        assert!(t >= 1);
        let x = tape.input(t, self.cfg.feat_dim, feats);
        let z = self.backbone.forward(tape, &self.store, x);
        match &self.head {
            HeadKind::Prototype { evidence, head } => {
                let pooled = evidence.pool(tape, &self.store, z);
                let nodes = head.forward(tape, &self.store, pooled.evidence);
                Forward {
                    s_neg: nodes.s_neg,
                    s_pos: nodes.s_pos,
                    attn: Some(pooled.weights),
                    proto: Some(nodes),
                }
            }
            HeadKind::MeanPool(mp) => {
                let nodes = mp.forward(tape, &self.store, z);
                Forward { s_neg: nodes.s_neg, s_pos: nodes.s_pos, attn: None, proto: None }
            }
        }
    }

    /// Per-utterance loss node: cls_weight·L_cls + cluster_weight·L_cluster.
    /// The cluster term is built only for fake-labelled utterances under a
    /// prototype head; the caller supplies the batch-level weights.
    #[allow(clippy::too_many_arguments)]
    pub fn utterance_loss(
        &self,
        tape: &mut Tape,
        feats: &[f64],
        t: usize,
        fake: bool,
        weights: &LossWeights,
        cls_weight: f64,
        cluster_weight: f64,
    ) -> (NodeId, Forward) {
        let fwd = self.forward(tape, feats, t);
        let cls = classification_loss(tape, fwd.s_neg, fwd.s_pos, fake);
        let scaled_cls = tape.scale(cls, cls_weight);
        let total = match (&fwd.proto, fake) {
            (Some(nodes), true) if cluster_weight != 0.0 => {
                let cl = cluster_loss(tape, nodes.q, nodes.d_pos, weights.gamma, weights.entropy_sign);
                tape.add_scaled(scaled_cls, cl, cluster_weight)
            }
            _ => scaled_cls,
        };
        (total, fwd)
    }

    /// Forward-only scoring with plain-value outputs.
    pub fn score(&self, feats: &[f64], t: usize) -> ScoreOutput {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, feats, t);
        let s_neg = tape.scalar(fwd.s_neg);
        let s_pos = tape.scalar(fwd.s_pos);
        let (resp, dist_pos, dist_neg, attn, m, k) = match (&fwd.proto, &fwd.attn) {
            (Some(nodes), Some(attn)) => {
                let (m, k) = tape.shape(nodes.q);
                (
                    tape.value(nodes.q).to_vec(),
                    tape.value(nodes.d_pos).to_vec(),
                    tape.value(nodes.d_neg).to_vec(),
                    tape.value(*attn).to_vec(),
                    m,
                    k,
                )
            }
            _ => (Vec::new(), Vec::new(), Vec::new(), Vec::new(), 0, 0),
        };
        ScoreOutput {
            p_fake: p_fake_from_logits(s_neg, s_pos),
            s_neg,
            s_pos,
            resp,
            dist_pos,
            dist_neg,
            attn,
            evidence: m,
            modes: k,
        }
    }

    /// Checks that a dataset's feature dimension matches the model.
    pub fn check_feat_dim(&self, d: usize) -> Result<()> {
        if d != self.cfg.feat_dim {
            return Err(Error::structure(format!(
                "feature dimension mismatch: checkpoint expects D={}, data has D={d}",
                self.cfg.feat_dim
            )));
        }
        Ok(())
    }
}
