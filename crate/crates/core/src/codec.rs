//! Stroke auto-encoder.
//!
//! The encoder translates a stroke so that it starts at the origin, lifts the
//! points to `d_model` channels, adds temporal positional encodings and runs
//! a causally masked transformer; the top-layer output at the last point is
//! projected to the latent code λ. The decoder is an MLP over `[t, λ]` whose
//! output parameterizes a 2-D mixture over the stroke point at curve
//! parameter `t`, relative to the stroke's start position.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{GmmLayout, GmmParams, ScaleKind};
use crate::ink::{curve_point, make_batch, Point, Stroke};
use crate::nn::{positional_encoding, Linear, Mlp, StackShape, TransformerStack};
use crate::params::ParamStore;
use crate::tape::{segments_from_lengths, Segment, Tape, Var};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionObjective {
    #[default]
    GmmNll,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub latent_dim: usize,
    pub enc_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub dec_layers: usize,
    pub dec_width: usize,
    pub dec_components: usize,
    pub dec_scales: ScaleKind,
    pub t_samples_per_stroke: usize,
    /// Curve-parameter samples per stroke under the `mse` objective.
    pub mse_t_samples: usize,
    pub positional_encoding: bool,
    pub causal_mask: bool,
    pub reconstruction_objective: ReconstructionObjective,
    /// Longer strokes are spatially resampled down to this many points
    /// before encoding.
    pub max_stroke_len: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            enc_layers: 6,
            d_model: 64,
            d_ff: 128,
            heads: 4,
            dec_layers: 4,
            dec_width: 512,
            dec_components: 20,
            dec_scales: ScaleKind::Diagonal,
            t_samples_per_stroke: 4,
            mse_t_samples: 100,
            positional_encoding: true,
            causal_mask: true,
            reconstruction_objective: ReconstructionObjective::GmmNll,
            max_stroke_len: 128,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("enc_layers", self.enc_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("dec_width", self.dec_width),
            ("dec_components", self.dec_components),
            ("t_samples_per_stroke", self.t_samples_per_stroke),
            ("mse_t_samples", self.mse_t_samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!("codec {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidInput("codec d_model must be divisible by heads".into()));
        }
        if self.max_stroke_len < 2 {
            return Err(Error::InvalidInput("codec max_stroke_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn decoder_layout(&self) -> GmmLayout {
        match self.reconstruction_objective {
            ReconstructionObjective::GmmNll => GmmLayout::new(self.dec_components, 2, self.dec_scales),
            ReconstructionObjective::Mse => GmmLayout::new(1, 2, ScaleKind::Isotropic),
        }
    }

    fn decoder_output_width(&self) -> usize {
        match self.reconstruction_objective {
            ReconstructionObjective::GmmNll => self.decoder_layout().raw_width(),
            ReconstructionObjective::Mse => 2,
        }
    }
}

/// Latent code of a stroke translated to the origin, plus where it started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeEmbedding {
    pub lambda: Vec<f64>,
    pub start: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Mean of the most probable component.
    Mean,
    /// A draw from the full mixture.
    Sample,
}

#[derive(Clone, Debug)]
pub struct StrokeCodec {
    cfg: CodecConfig,
    input: Linear,
    stack: TransformerStack,
    projection: Linear,
    decoder: Mlp,
}

impl StrokeCodec {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &CodecConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let input = Linear::new(params, "encoder.input", 2, d, rng);
        let shape = StackShape { layers: cfg.enc_layers, d_model: d, d_ff: cfg.d_ff, heads: cfg.heads };
        let stack = TransformerStack::new(params, "encoder", shape, rng);
        let projection = Linear::new(params, "encoder.projection", d, cfg.latent_dim, rng);
        let decoder = Mlp::new(
            params,
            "decoder",
            1 + cfg.latent_dim,
            cfg.dec_width,
            cfg.dec_layers,
            cfg.decoder_output_width(),
            rng,
        );
        Self { cfg: cfg.clone(), input, stack, projection, decoder }
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    /// Packs strokes (translated to their start) into rows and segments.
    fn pack(&self, strokes: &[&Stroke]) -> Result<(Mat, Vec<Segment>, Vec<[f64; 2]>)> {
        let batch = make_batch(strokes, self.cfg.max_stroke_len)?;
        let lengths = batch.lengths();
        let total: usize = lengths.iter().sum();
        let mut rows = Mat::zeros(total, 2);
        let mut r = 0;
        let mut starts = Vec::with_capacity(strokes.len());
        for (i, &len) in lengths.iter().enumerate() {
            let pts = batch.row(i);
            let s0 = pts[0];
            starts.push(s0);
            for p in &pts[..len] {
                let row = rows.row_mut(r);
                row[0] = p[0] - s0[0];
                row[1] = p[1] - s0[1];
                r += 1;
            }
        }
        Ok((rows, segments_from_lengths(&lengths), starts))
    }

    /// Top-layer transformer outputs for every point, `Σ T × d_model`.
    pub fn encoder_states(&self, tape: &mut Tape, strokes: &[&Stroke]) -> Result<(Var, Vec<Segment>, Vec<[f64; 2]>)> {
        let (rows, segments, starts) = self.pack(strokes)?;
        let n = rows.rows();
        let x = tape.constant(rows);
        let mut h = self.input.forward(tape, x);
        if self.cfg.positional_encoding {
            let pe = tape.constant(positional_encoding(&segments, n, self.cfg.d_model));
            h = tape.add(h, pe);
        }
        let segs: Rc<[Segment]> = segments.clone().into();
        let h = self.stack.forward(tape, h, &segs, self.cfg.causal_mask);
        Ok((h, segments, starts))
    }

    /// Latent codes `S × D` and start positions for a batch of strokes.
    pub fn encode_on_tape(&self, tape: &mut Tape, strokes: &[&Stroke]) -> Result<(Var, Vec<[f64; 2]>)> {
        let (h, segments, starts) = self.encoder_states(tape, strokes)?;
        let last = tape.gather_rows(h, segments.iter().map(Segment::last).collect());
        Ok((self.projection.forward(tape, last), starts))
    }

    pub fn encode_batch(&self, params: &ParamStore, strokes: &[&Stroke]) -> Result<Vec<StrokeEmbedding>> {
        if strokes.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(params);
        let (lambda, starts) = self.encode_on_tape(&mut tape, strokes)?;
        let lv = tape.value(lambda);
        Ok(starts
            .into_iter()
            .enumerate()
            .map(|(i, start)| StrokeEmbedding { lambda: lv.row(i).to_vec(), start })
            .collect())
    }

    /// Raw decoder outputs for rows of `[t, λ]`.
    pub fn decode_on_tape(&self, tape: &mut Tape, t_lambda: Var) -> Var {
        self.decoder.forward(tape, t_lambda)
    }

    fn decode_rows(&self, params: &ParamStore, inputs: Mat) -> Mat {
        let mut tape = Tape::new(params);
        let x = tape.constant(inputs);
        let raw = self.decode_on_tape(&mut tape, x);
        tape.value(raw).clone()
    }

    fn raw_to_gmm(&self, raw: &[f64], start: [f64; 2]) -> Result<GmmParams> {
        let g = match self.cfg.reconstruction_objective {
            ReconstructionObjective::GmmNll => GmmParams::from_raw_row(raw, &self.cfg.decoder_layout())?,
            ReconstructionObjective::Mse => {
                GmmParams { weights: vec![1.0], means: vec![raw.to_vec()], scales: vec![vec![1.0, 1.0]] }
            }
        };
        Ok(g.translated(&start))
    }

    fn check_latent(&self, emb: &StrokeEmbedding) -> Result<()> {
        if emb.lambda.len() != self.cfg.latent_dim {
            return Err(Error::InvalidInput(format!(
                "latent code has {} entries, model expects {}",
                emb.lambda.len(),
                self.cfg.latent_dim
            )));
        }
        Ok(())
    }

    /// Mixtures over the stroke point at each `t`, in absolute coordinates.
    pub fn decode_many(&self, params: &ParamStore, emb: &StrokeEmbedding, ts: &[f64]) -> Result<Vec<GmmParams>> {
        self.check_latent(emb)?;
        if let Some(&t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::CurveParameter(t));
        }
        let width = 1 + self.cfg.latent_dim;
        let mut inputs = Mat::zeros(ts.len(), width);
        for (i, &t) in ts.iter().enumerate() {
            let row = inputs.row_mut(i);
            row[0] = t;
            row[1..].copy_from_slice(&emb.lambda);
        }
        let raw = self.decode_rows(params, inputs);
        (0..ts.len()).map(|i| self.raw_to_gmm(raw.row(i), emb.start)).collect()
    }

    pub fn decode(&self, params: &ParamStore, emb: &StrokeEmbedding, t: f64) -> Result<GmmParams> {
        Ok(self.decode_many(params, emb, &[t])?.remove(0))
    }

    /// Evaluates the decoder on `n` evenly spaced curve parameters.
    pub fn reconstruct<R: Rng + ?Sized>(
        &self,
        params: &ParamStore,
        emb: &StrokeEmbedding,
        n: usize,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Stroke> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("reconstruct needs n >= 2, got {n}")));
        }
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let gmms = self.decode_many(params, emb, &ts)?;
        let points = gmms
            .iter()
            .map(|g| {
                let p = match mode {
                    DecodeMode::Mean => g.means[g.ranked_components()[0]].clone(),
                    DecodeMode::Sample => g.sample(rng, 1.0),
                };
                Point::new(p[0], p[1])
            })
            .collect();
        Stroke::new(points)
    }

    /// Builds the reconstruction loss for the strokes whose latent codes are
    /// the rows of `lambda`. Single-point strokes are skipped; returns `None`
    /// when nothing is left.
    pub fn recon_loss_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        lambda: Var,
        strokes: &[&Stroke],
        rng: &mut R,
    ) -> Result<Option<Var>> {
        let samples = match self.cfg.reconstruction_objective {
            ReconstructionObjective::GmmNll => self.cfg.t_samples_per_stroke,
            ReconstructionObjective::Mse => self.cfg.mse_t_samples,
        };
        let mut index = Vec::new();
        let mut ts = Vec::new();
        let mut targets = Vec::new();
        for (i, s) in strokes.iter().enumerate() {
            if s.len() < 2 {
                continue;
            }
            let s0 = s.start();
            for _ in 0..samples {
                let t: f64 = rng.random();
                let p = curve_point(s, t)?;
                index.push(i);
                ts.push(t);
                targets.push(p[0] - s0[0]);
                targets.push(p[1] - s0[1]);
            }
        }
        if index.is_empty() {
            return Ok(None);
        }
        let n = ts.len();
        let tcol = tape.constant(Mat::from_vec(n, 1, ts));
        let lam = tape.gather_rows(lambda, index);
        let input = tape.concat_cols(&[tcol, lam]);
        let raw = self.decode_on_tape(tape, input);
        let targets = Mat::from_vec(n, 2, targets);
        let per_row = match self.cfg.reconstruction_objective {
            ReconstructionObjective::GmmNll => tape.gmm_nll(raw, self.cfg.decoder_layout(), &targets),
            ReconstructionObjective::Mse => tape.squared_error(raw, &targets),
        };
        Ok(Some(tape.mean(per_row)))
    }

    /// Reconstruction loss of a single stroke under fresh curve samples.
    pub fn reconstruction_loss<R: Rng + ?Sized>(&self, params: &ParamStore, s: &Stroke, rng: &mut R) -> Result<f64> {
        if s.len() < 2 {
            return Err(Error::InvalidInput("reconstruction loss needs a stroke of at least 2 points".into()));
        }
        let mut tape = Tape::new(params);
        let (lambda, _) = self.encode_on_tape(&mut tape, &[s])?;
        let loss = self
            .recon_loss_on_tape(&mut tape, lambda, &[s], rng)?
            .expect("stroke with two points yields a loss");
        Ok(tape.value(loss).item())
    }
}
