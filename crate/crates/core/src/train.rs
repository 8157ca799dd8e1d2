//! Joint training of the stroke codec and the relational model.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ink::{augment_drawing, drawing_to_json_line, AugmentParams, Drawing, Stroke};
use crate::model::{CoseModel, ModelConfig};
use crate::params::ParamStore;
use crate::relational::{subset_indices, SubsetPair};
use crate::tape::{Gradients, Tape};
use crate::tensor::Mat;

/// Learning-rate schedule, evaluated at 1-based step numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
    TransformerWarmup { d_model: usize, warmup: usize },
    /// `lr0 · rate^(step / decay_steps)`.
    ExponentialDecay { lr0: f64, rate: f64, decay_steps: f64 },
    Constant { lr: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::TransformerWarmup { d_model: 64, warmup: 4000 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step as f64;
        match *self {
            LrSchedule::TransformerWarmup { d_model, warmup } => {
                let w = warmup as f64;
                (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
            }
            LrSchedule::ExponentialDecay { lr0, rate, decay_steps } => lr0 * rate.powf(s / decay_steps),
            LrSchedule::Constant { lr } => lr,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::TransformerWarmup { d_model, warmup } => d_model > 0 && warmup > 0,
            LrSchedule::ExponentialDecay { lr0, rate, decay_steps } => {
                lr0 >= 0.0 && rate > 0.0 && decay_steps > 0.0 && lr0.is_finite() && rate.is_finite()
            }
            LrSchedule::Constant { lr } => lr >= 0.0 && lr.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub adam: AdamConfig,
    pub total_steps: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub n_subsets: usize,
    /// Random affine augmentation; `None` trains on the data as given.
    pub augmentation: Option<AugmentParams>,
    /// Let relational-loss gradients reach the encoder (ablation).
    pub relational_grad_to_encoder: bool,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 128,
            lr_schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            total_steps: 100_000,
            seed: 0,
            eval_every: 1000,
            n_subsets: 32,
            augmentation: Some(AugmentParams::default()),
            relational_grad_to_encoder: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lr_schedule.validate()?;
        if self.batch_size == 0 || self.total_steps == 0 || self.n_subsets == 0 {
            return Err(Error::InvalidInput("batch_size, total_steps and n_subsets must be positive".into()));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidInput("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }

    /// One update. Parameters without a gradient are left alone, including
    /// their moments.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Which loss terms contribute to a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub reconstruction: bool,
    pub relational: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms { reconstruction: true, relational: true };
    pub const RELATIONAL_ONLY: LossTerms = LossTerms { reconstruction: false, relational: true };
}

/// One NDJSON metrics line. Terms with no contributing example are 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub recon_nll: f64,
    pub pos_nll: f64,
    pub emb_nll: f64,
    pub lr: f64,
}

/// Loss values and parameter gradients for one batch.
pub struct BatchLoss {
    pub recon_nll: Option<f64>,
    pub pos_nll: Option<f64>,
    pub emb_nll: Option<f64>,
    pub grads: Gradients,
}

/// Forward and backward pass over `batch` without touching the weights.
pub fn batch_loss(
    model: &CoseModel,
    params: &ParamStore,
    batch: &[Drawing],
    cfg: &TrainConfig,
    terms: LossTerms,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let strokes: Vec<&Stroke> = batch.iter().flat_map(|d| d.strokes()).collect();
    let mut tape = Tape::new(params);
    let (lambda, starts) = model.codec.encode_on_tape(&mut tape, &strokes)?;

    let recon = if terms.reconstruction {
        model.codec.recon_loss_on_tape(&mut tape, lambda, &strokes, rng)?
    } else {
        None
    };

    let mut pairs: Vec<SubsetPair> = Vec::new();
    let mut base = 0;
    for d in batch {
        for p in subset_indices(d.len(), cfg.n_subsets, rng) {
            pairs.push(SubsetPair { context: p.context.iter().map(|i| i + base).collect(), target: p.target + base });
        }
        base += d.len();
    }
    let relational = if terms.relational && !pairs.is_empty() {
        let lam = if cfg.relational_grad_to_encoder { lambda } else { tape.detach(lambda) };
        Some(model.relational.loss_on_tape(&mut tape, lam, &starts, &pairs))
    } else {
        None
    };

    let mut parts = Vec::new();
    parts.extend(recon);
    if let Some((p, e)) = relational {
        parts.push(p);
        parts.push(e);
    }
    if parts.is_empty() {
        return Err(Error::InvalidInput("batch yields no loss terms".into()));
    }
    let total = tape.sum(&parts);
    let grads = tape.backward(total);
    Ok(BatchLoss {
        recon_nll: recon.map(|v| tape.value(v).item()),
        pos_nll: relational.map(|(p, _)| tape.value(p).item()),
        emb_nll: relational.map(|(_, e)| tape.value(e).item()),
        grads,
    })
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: CoseModel,
    pub optimizer: AdamState,
    /// Number of completed steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = CoseModel::new(cfg.model.clone(), cfg.seed)?;
        let optimizer = AdamState::new(&model.params);
        Ok(Self { cfg, model, optimizer, step: 0 })
    }

    /// Random stream for step `step`; independent of how many steps ran
    /// before in this process, so resumed runs see the same draws.
    pub fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64);
        rng
    }

    /// One optimizer step on `batch` using every loss term.
    pub fn step(&mut self, batch: &[Drawing]) -> Result<StepMetrics> {
        self.step_on(batch, LossTerms::ALL)
    }

    pub fn step_on(&mut self, batch: &[Drawing], terms: LossTerms) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let step = self.step + 1;
        let mut rng = self.step_rng(step);
        let batch: Vec<Drawing> = match &self.cfg.augmentation {
            Some(a) => batch.iter().map(|d| augment_drawing(d, a, &mut rng)).collect(),
            None => batch.to_vec(),
        };
        let mut out = batch_loss(&self.model, &self.model.params, &batch, &self.cfg, terms, &mut rng)?;
        let values = [("recon_nll", out.recon_nll), ("pos_nll", out.pos_nll), ("emb_nll", out.emb_nll)];
        if let Some((name, v)) = values.iter().find_map(|(n, v)| v.filter(|v| !v.is_finite()).map(|v| (n, v))) {
            return Err(diverged(step, format!("{name} = {v}"), &batch));
        }
        if !out.grads.is_finite() {
            return Err(diverged(step, "non-finite gradient".into(), &batch));
        }
        if let Some(clip) = self.cfg.grad_clip {
            let norm = out.grads.global_norm();
            if norm > clip {
                out.grads.scale(clip / norm);
            }
        }
        let lr = self.cfg.lr_schedule.lr_at(step);
        self.optimizer.update(&mut self.model.params, &out.grads, lr, &self.cfg.adam);
        if !self.model.params.all_finite() {
            return Err(diverged(step, "non-finite parameter after update".into(), &batch));
        }
        self.step = step;
        Ok(StepMetrics {
            step,
            recon_nll: out.recon_nll.unwrap_or(0.0),
            pos_nll: out.pos_nll.unwrap_or(0.0),
            emb_nll: out.emb_nll.unwrap_or(0.0),
            lr,
        })
    }

    /// Draws the batch for the next step from `corpus`: the whole corpus
    /// when it fits, otherwise `batch_size` drawings without replacement.
    pub fn next_batch(&self, corpus: &[Drawing]) -> Vec<Drawing> {
        let n = corpus.len();
        if self.cfg.batch_size >= n {
            return corpus.to_vec();
        }
        let mut rng = self.step_rng(self.step + 1);
        rng.set_word_pos(1 << 40);
        let mut idx = sample_indices(&mut rng, n, self.cfg.batch_size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| corpus[i].clone()).collect()
    }

    /// Runs steps until `total_steps` is reached, calling `on_step` after
    /// each one.
    pub fn train(&mut self, corpus: &[Drawing], mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("empty training corpus".into()));
        }
        while self.step < self.cfg.total_steps {
            let batch = self.next_batch(corpus);
            let m = self.step(&batch)?;
            on_step(self, &m)?;
        }
        Ok(())
    }
}

fn diverged(step: usize, detail: String, batch: &[Drawing]) -> Error {
    let batch_dump = batch.iter().map(drawing_to_json_line).collect::<Vec<_>>().join("\n");
    tracing::error!(step, %detail, "training diverged");
    Error::Diverged { step, detail, batch_dump }
}
