use alloc::vec::Vec;

use super::{EncoderModel, ModelVars, LAYER_NORM_EPS};
use crate::autodiff::{AttentionLayout, Graph, Var};
use crate::data::{special, Batch};
use crate::error::config_err;
use crate::rng::RunRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Encoder outputs for one batch.
#[derive(Clone, Copy, Debug)]
pub struct SequenceRepr {
    /// `batch × d_model`, the position-0 rows of `token_states`.
    pub cls: Var,
    /// `(batch·seq) × d_model`.
    pub token_states: Var,
    pub batch: usize,
    pub seq_len: usize,
}

/// Whether the domain head sees the `[CLS]` embedding through a gradient
/// reversal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainPath {
    Adversarial,
    Plain,
}

/// Loss nodes of one mixed-batch forward pass. `total` is what gets
/// backpropagated: `main + weight · domain`.
#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub main: Var,
    pub domain: Var,
    pub total: Var,
    pub main_value: f64,
    pub domain_value: f64,
    pub total_value: f64,
    pub weight: f64,
    pub path: DomainPath,
}

impl Losses {
    /// `L_main − λ·L_domain`, the value the encoder effectively minimizes
    /// when the domain path is adversarial.
    pub fn adversarial_objective(&self) -> f64 {
        self.main_value - self.weight * self.domain_value
    }
}

/// One define-by-run forward pass over a model. The model is copied into fresh
/// graph leaves, so gradients never touch it directly.
pub struct Forward<'m> {
    pub graph: Graph,
    pub vars: ModelVars,
    model: &'m EncoderModel,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m EncoderModel) -> Self {
        Self::with_grad(model, true)
    }

    /// No parameter collects gradients.
    pub fn frozen(model: &'m EncoderModel) -> Self {
        Self::with_grad(model, false)
    }

    fn with_grad(model: &'m EncoderModel, requires_grad: bool) -> Self {
        Self::on_graph(Graph::new(), model, requires_grad)
    }

    /// Binds the model onto an existing graph, after whatever it already holds.
    pub fn on_graph(mut graph: Graph, model: &'m EncoderModel, requires_grad: bool) -> Self {
        let vars = ModelVars::bind(&mut graph, model, requires_grad);
        Self { graph, vars, model }
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn model(&self) -> &EncoderModel {
        self.model
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.graph.value(v).item()
    }

    fn dropout(&mut self, x: Var, rng: &mut Option<&mut RunRng>) -> Result<Var> {
        match rng {
            Some(r) => self.graph.dropout(x, self.model.config.dropout_p, &mut **r),
            None => Ok(x),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let cfg = &self.model.config;
        let (b, s) = (batch.batch, batch.seq_len);
        if b == 0 || s == 0 {
            return Err(Error::Empty("batch"));
        }
        if s > cfg.max_len {
            return Err(Error::Input(alloc::format!(
                "sequence length {s} exceeds max_len {}",
                cfg.max_len
            )));
        }
        if batch.token_ids.len() != b * s || batch.pad_mask.len() != b * s {
            return Err(Error::LengthMismatch(batch.token_ids.len(), b * s));
        }
        if batch.task_labels.len() != b || batch.domain_labels.len() != b {
            return Err(Error::LengthMismatch(batch.task_labels.len(), b));
        }
        for row in 0..b {
            if batch.token_ids[row * s] != special::CLS || !batch.pad_mask[row * s] {
                return Err(Error::Input(alloc::format!("sequence {row} does not start with [CLS]")));
            }
        }
        if let Some(&id) = batch.token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::IndexOutOfRange {
                what: "token id",
                index: id,
                limit: cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Embeddings → pre-norm self-attention → pre-norm feed-forward. Dropout is
    /// applied only when an RNG is passed.
    pub fn encode(&mut self, batch: &Batch, dropout: Option<&mut RunRng>) -> Result<SequenceRepr> {
        self.check_batch(batch)?;
        let mut rng = dropout;
        let (b, s) = (batch.batch, batch.seq_len);
        let v = self.vars;
        let g = &mut self.graph;

        let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
        let tok = g.embedding_gather(v.token_embedding, &batch.token_ids)?;
        let pos = g.embedding_gather(v.position_embedding, &positions)?;
        let h = g.add(tok, pos)?;
        let h = self.dropout(h, &mut rng)?;

        let g = &mut self.graph;
        let a = g.layer_norm(h, v.ln1_gamma, v.ln1_beta, LAYER_NORM_EPS)?;
        let q = g.matmul(a, v.wq)?;
        let k = g.matmul(a, v.wk)?;
        let val = g.matmul(a, v.wv)?;
        let layout = AttentionLayout {
            batch: b,
            seq: s,
            heads: self.model.config.n_heads,
            key_mask: batch.pad_mask.clone(),
        };
        let att = g.masked_attention(q, k, val, layout)?;
        let o = g.matmul(att, v.wo)?;
        let o = self.dropout(o, &mut rng)?;
        let g = &mut self.graph;
        let h1 = g.add(h, o)?;

        let n = g.layer_norm(h1, v.ln2_gamma, v.ln2_beta, LAYER_NORM_EPS)?;
        let f = g.matmul(n, v.ff_w1)?;
        let f = g.add_bias(f, v.ff_b1)?;
        let f = g.gelu(f);
        let f = g.matmul(f, v.ff_w2)?;
        let f = g.add_bias(f, v.ff_b2)?;
        let f = self.dropout(f, &mut rng)?;
        let g = &mut self.graph;
        let token_states = g.add(h1, f)?;

        let cls_rows: Vec<usize> = (0..b).map(|i| i * s).collect();
        let cls = g.select_rows(token_states, &cls_rows)?;
        Ok(SequenceRepr {
            cls,
            token_states,
            batch: b,
            seq_len: s,
        })
    }

    pub fn task_logits(&mut self, repr: &SequenceRepr) -> Result<Var> {
        let l = self.graph.matmul(repr.cls, self.vars.task_w)?;
        self.graph.add_bias(l, self.vars.task_b)
    }

    /// Domain head behind a gradient reversal; same forward values as
    /// [`Forward::domain_logits_plain`].
    pub fn domain_logits_adversarial(&mut self, repr: &SequenceRepr) -> Result<Var> {
        let reversed = self.graph.grad_reverse(repr.cls);
        let l = self.graph.matmul(reversed, self.vars.domain_w)?;
        self.graph.add_bias(l, self.vars.domain_b)
    }

    pub fn domain_logits_plain(&mut self, repr: &SequenceRepr) -> Result<Var> {
        let l = self.graph.matmul(repr.cls, self.vars.domain_w)?;
        self.graph.add_bias(l, self.vars.domain_b)
    }

    pub fn domain_logits(&mut self, repr: &SequenceRepr, path: DomainPath) -> Result<Var> {
        match path {
            DomainPath::Adversarial => self.domain_logits_adversarial(repr),
            DomainPath::Plain => self.domain_logits_plain(repr),
        }
    }

    /// MLM logits at every position, `(batch·seq) × vocab`.
    pub fn mlm_logits(&mut self, repr: &SequenceRepr) -> Result<Var> {
        let l = self.graph.matmul(repr.token_states, self.vars.mlm_w)?;
        self.graph.add_bias(l, self.vars.mlm_b)
    }

    /// MLM logits at the given flat positions only.
    pub fn mlm_logits_at(&mut self, repr: &SequenceRepr, positions: &[usize]) -> Result<Var> {
        let rows = self.graph.select_rows(repr.token_states, positions)?;
        let l = self.graph.matmul(rows, self.vars.mlm_w)?;
        self.graph.add_bias(l, self.vars.mlm_b)
    }

    /// Task loss over labeled rows plus `weight ×` domain loss over all rows.
    /// No sign checks on `weight`; see [`Forward::after_losses`] and
    /// [`Forward::multitask_losses`] for the validated entry points.
    pub fn regularized_losses(
        &mut self,
        batch: &Batch,
        weight: f64,
        path: DomainPath,
        dropout: Option<&mut RunRng>,
    ) -> Result<Losses> {
        if batch.main_rows() == 0 {
            return Err(Error::EmptyLoss("main task loss"));
        }
        let repr = self.encode(batch, dropout)?;
        let task = self.task_logits(&repr)?;
        let targets: Vec<usize> = batch.task_labels.iter().map(|l| l.unwrap_or(0)).collect();
        let mask: Vec<bool> = batch.task_labels.iter().map(Option::is_some).collect();
        let main = self.graph.cross_entropy_logits(task, &targets, &mask)?;

        let dom = self.domain_logits(&repr, path)?;
        let dom_targets: Vec<usize> = batch.domain_labels.iter().map(|&d| usize::from(d)).collect();
        let all = alloc::vec![true; batch.batch];
        let domain = self.graph.cross_entropy_logits(dom, &dom_targets, &all)?;

        let scaled = self.graph.scale(domain, weight);
        let total = self.graph.add(main, scaled)?;
        Ok(Losses {
            main,
            domain,
            total,
            main_value: self.scalar(main)?,
            domain_value: self.scalar(domain)?,
            total_value: self.scalar(total)?,
            weight,
            path,
        })
    }

    /// Adversarial fine-tuning objective. Backpropagating `total` gives the
    /// encoder `∇L_main − λ∇L_domain` while the domain head descends `λ·L_domain`.
    pub fn after_losses(
        &mut self,
        batch: &Batch,
        lambda: f64,
        dropout: Option<&mut RunRng>,
    ) -> Result<Losses> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(config_err(alloc::format!(
                "adversarial lambda must be > 0, got {lambda}; use multitask_losses for the non-adversarial contrast"
            )));
        }
        self.regularized_losses(batch, lambda, DomainPath::Adversarial, dropout)
    }

    /// Multi-task contrast: both encoder and domain head descend the domain loss.
    pub fn multitask_losses(
        &mut self,
        batch: &Batch,
        weight: f64,
        dropout: Option<&mut RunRng>,
    ) -> Result<Losses> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(config_err(alloc::format!("multi-task weight must be > 0, got {weight}")));
        }
        self.regularized_losses(batch, weight, DomainPath::Plain, dropout)
    }

    /// Plain task cross-entropy; every row must be labeled.
    pub fn sft_loss(&mut self, batch: &Batch, dropout: Option<&mut RunRng>) -> Result<Var> {
        if let Some(i) = batch.task_labels.iter().position(Option::is_none) {
            return Err(Error::Input(alloc::format!("row {i} has no task label")));
        }
        let repr = self.encode(batch, dropout)?;
        let task = self.task_logits(&repr)?;
        let targets: Vec<usize> = batch.task_labels.iter().map(|l| l.unwrap_or(0)).collect();
        let all = alloc::vec![true; batch.batch];
        self.graph.cross_entropy_logits(task, &targets, &all)
    }

    /// Masked-LM cross-entropy over the selected flat positions of `batch`
    /// (whose ids are already corrupted). `targets` are the original ids.
    pub fn mlm_loss(
        &mut self,
        batch: &Batch,
        targets: &[usize],
        selected: &[bool],
        dropout: Option<&mut RunRng>,
    ) -> Result<Var> {
        if targets.len() != batch.token_ids.len() || selected.len() != targets.len() {
            return Err(Error::LengthMismatch(targets.len(), batch.token_ids.len()));
        }
        let positions: Vec<usize> = (0..selected.len()).filter(|&i| selected[i]).collect();
        if positions.is_empty() {
            return Err(Error::EmptyLoss("mlm loss"));
        }
        let repr = self.encode(batch, dropout)?;
        let logits = self.mlm_logits_at(&repr, &positions)?;
        let tgt: Vec<usize> = positions.iter().map(|&p| targets[p]).collect();
        let all = alloc::vec![true; positions.len()];
        self.graph.cross_entropy_logits(logits, &tgt, &all)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Gradient per parameter in manifest order; `None` where the backward
    /// pass never reached the parameter.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.vars.all().into_iter().map(|v| self.graph.grad(v).cloned()).collect()
    }
}
