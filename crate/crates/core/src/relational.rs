//! Order-invariant relational model over sets of stroke embeddings.
//!
//! Two separate transformers share one configuration. The position network
//! reads `[λ, ŝ]` per context stroke and predicts a 2-D mixture over the
//! next start position. The embedding network additionally appends the next
//! start position to every element and predicts a D-dimensional mixture over
//! the next latent code. Without positional encoding and masking the stacked
//! self-attention is permutation-equivariant, and the mean-pooled readout
//! makes the prediction invariant to the order of the context.

use std::rc::Rc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::StrokeEmbedding;
use crate::error::{Error, Result};
use crate::gmm::{GmmLayout, GmmParams, ScaleKind};
use crate::nn::{positional_encoding, Linear, StackShape, TransformerStack};
use crate::params::ParamStore;
use crate::tape::{segments_from_lengths, Segment, Tape, Var};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Mean over every element's top-layer output.
    #[default]
    Mean,
    /// Top-layer output of the last context element.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationalConfig {
    pub layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub gmm_components: usize,
    pub scales: ScaleKind,
    pub positional_encoding: bool,
    pub condition_on_start: bool,
    pub readout: Readout,
}

impl Default for RelationalConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            d_model: 64,
            d_ff: 256,
            heads: 4,
            gmm_components: 10,
            scales: ScaleKind::Diagonal,
            positional_encoding: false,
            condition_on_start: true,
            readout: Readout::Mean,
        }
    }
}

impl RelationalConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.layers, self.d_model, self.d_ff, self.heads, self.gmm_components].contains(&0) {
            return Err(Error::InvalidInput("relational counts must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidInput("relational d_model must be divisible by heads".into()));
        }
        Ok(())
    }
}

/// The set `{(λ_i, ŝ_i)}` of already drawn strokes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawingContext {
    embeddings: Vec<StrokeEmbedding>,
}

impl DrawingContext {
    pub fn new(embeddings: Vec<StrokeEmbedding>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptyContext);
        }
        let d = embeddings[0].lambda.len();
        if embeddings.iter().any(|e| e.lambda.len() != d) {
            return Err(Error::InvalidInput("context embeddings differ in dimensionality".into()));
        }
        Ok(Self { embeddings })
    }

    pub fn embeddings(&self) -> &[StrokeEmbedding] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn push(&mut self, e: StrokeEmbedding) {
        self.embeddings.push(e);
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { embeddings: order.iter().map(|&i| self.embeddings[i].clone()).collect() }
    }
}

/// A training example: context stroke indices and the index of the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetPair {
    pub context: Vec<usize>,
    pub target: usize,
}

/// Draws `n_subsets` (context, target) pairs from a drawing of `k` strokes:
/// the first half keep the drawing order (context = first H strokes, target =
/// stroke H+1), the rest take H random strokes and a random target from the
/// complement. `H` is uniform on `1..k`.
pub fn subset_indices<R: Rng + ?Sized>(k: usize, n_subsets: usize, rng: &mut R) -> Vec<SubsetPair> {
    if k < 2 {
        return Vec::new();
    }
    let ordered = n_subsets.div_ceil(2);
    let mut out = Vec::with_capacity(n_subsets);
    for i in 0..n_subsets {
        let h = rng.random_range(1..k);
        if i < ordered {
            out.push(SubsetPair { context: (0..h).collect(), target: h });
        } else {
            let context = sample_indices(rng, k, h).into_vec();
            let mut rest: Vec<usize> = (0..k).filter(|j| !context.contains(j)).collect();
            let target = rest.swap_remove(rng.random_range(0..rest.len()));
            out.push(SubsetPair { context, target });
        }
    }
    out
}

/// Same as [`subset_indices`] but materialized over embeddings.
pub fn make_training_subsets<R: Rng + ?Sized>(
    drawing: &[StrokeEmbedding],
    rng: &mut R,
    n_subsets: usize,
) -> Vec<(DrawingContext, StrokeEmbedding)> {
    subset_indices(drawing.len(), n_subsets, rng)
        .into_iter()
        .map(|p| {
            let ctx = DrawingContext { embeddings: p.context.iter().map(|&i| drawing[i].clone()).collect() };
            (ctx, drawing[p.target].clone())
        })
        .collect()
}

#[derive(Clone, Debug)]
struct SetNet {
    input: Linear,
    stack: TransformerStack,
    head: Linear,
    layout: GmmLayout,
}

impl SetNet {
    fn new<R: Rng + ?Sized>(params: &mut ParamStore, name: &str, cfg: &RelationalConfig, input: usize, layout: GmmLayout, rng: &mut R) -> Self {
        let shape = StackShape { layers: cfg.layers, d_model: cfg.d_model, d_ff: cfg.d_ff, heads: cfg.heads };
        Self {
            input: Linear::new(params, &format!("{name}.input"), input, cfg.d_model, rng),
            stack: TransformerStack::new(params, name, shape, rng),
            head: Linear::new(params, &format!("{name}.head"), cfg.d_model, layout.raw_width(), rng),
            layout,
        }
    }

    fn forward(&self, tape: &mut Tape, cfg: &RelationalConfig, elements: Var, segments: Vec<Segment>) -> Var {
        let n = tape.value(elements).rows();
        let mut h = self.input.forward(tape, elements);
        if cfg.positional_encoding {
            let pe = tape.constant(positional_encoding(&segments, n, cfg.d_model));
            h = tape.add(h, pe);
        }
        let segs: Rc<[Segment]> = segments.into();
        let h = self.stack.forward(tape, h, &segs, false);
        let pooled = match cfg.readout {
            Readout::Mean => tape.segment_mean(h, segs),
            Readout::Last => tape.gather_rows(h, segs.iter().map(Segment::last).collect()),
        };
        self.head.forward(tape, pooled)
    }
}

/// Raw head outputs for a batch of sets.
pub struct RelationalOutputs {
    pub position_raw: Var,
    pub embedding_raw: Var,
}

#[derive(Clone, Debug)]
pub struct RelationalModel {
    cfg: RelationalConfig,
    latent_dim: usize,
    position: SetNet,
    embedding: SetNet,
}

impl RelationalModel {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &RelationalConfig, latent_dim: usize, rng: &mut R) -> Self {
        let m = cfg.gmm_components;
        let position = SetNet::new(params, "position", cfg, latent_dim + 2, GmmLayout::new(m, 2, cfg.scales), rng);
        let extra = if cfg.condition_on_start { 2 } else { 0 };
        let embedding = SetNet::new(
            params,
            "embedding",
            cfg,
            latent_dim + 2 + extra,
            GmmLayout::new(m, latent_dim, cfg.scales),
            rng,
        );
        Self { cfg: cfg.clone(), latent_dim, position, embedding }
    }

    pub fn config(&self) -> &RelationalConfig {
        &self.cfg
    }

    pub fn position_layout(&self) -> GmmLayout {
        self.position.layout
    }

    pub fn embedding_layout(&self) -> GmmLayout {
        self.embedding.layout
    }

    /// Runs both networks over `sets`, each a list of row indices into
    /// `lambda` (`S × D`) with matching `starts`. `next_starts[i]` is the
    /// conditioning start position for set `i`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        lambda: Var,
        starts: &[[f64; 2]],
        sets: &[&[usize]],
        next_starts: &[[f64; 2]],
    ) -> RelationalOutputs {
        assert_eq!(sets.len(), next_starts.len());
        let lengths: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        let index: Vec<usize> = sets.iter().flat_map(|s| s.iter().copied()).collect();
        let n = index.len();
        let lam = tape.gather_rows(lambda, index.clone());

        let mut pos_cols = Mat::zeros(n, 2);
        for (r, &i) in index.iter().enumerate() {
            pos_cols.row_mut(r).copy_from_slice(&starts[i]);
        }
        let pos_cols = tape.constant(pos_cols);
        let pos_in = tape.concat_cols(&[lam, pos_cols]);
        let position_raw = self.position.forward(tape, &self.cfg, pos_in, segments_from_lengths(&lengths));

        let emb_in = if self.cfg.condition_on_start {
            let mut cond = Mat::zeros(n, 2);
            let mut r = 0;
            for (set, ns) in sets.iter().zip(next_starts) {
                for _ in 0..set.len() {
                    cond.row_mut(r).copy_from_slice(ns);
                    r += 1;
                }
            }
            let cond = tape.constant(cond);
            tape.concat_cols(&[pos_in, cond])
        } else {
            pos_in
        };
        let embedding_raw = self.embedding.forward(tape, &self.cfg, emb_in, segments_from_lengths(&lengths));
        RelationalOutputs { position_raw, embedding_raw }
    }

    /// Mean position NLL and mean embedding NLL over `pairs`, as two scalars.
    pub fn loss_on_tape(&self, tape: &mut Tape, lambda: Var, starts: &[[f64; 2]], pairs: &[SubsetPair]) -> (Var, Var) {
        let sets: Vec<&[usize]> = pairs.iter().map(|p| p.context.as_slice()).collect();
        let next: Vec<[f64; 2]> = pairs.iter().map(|p| starts[p.target]).collect();
        let out = self.forward_on_tape(tape, lambda, starts, &sets, &next);
        let pos_targets = Mat::from_vec(pairs.len(), 2, next.iter().flatten().copied().collect());
        let lv = tape.value(lambda);
        let d = self.latent_dim;
        let mut emb_targets = Mat::zeros(pairs.len(), d);
        for (r, p) in pairs.iter().enumerate() {
            emb_targets.row_mut(r).copy_from_slice(lv.row(p.target));
        }
        let pos = tape.gmm_nll(out.position_raw, self.position.layout, &pos_targets);
        let emb = tape.gmm_nll(out.embedding_raw, self.embedding.layout, &emb_targets);
        (tape.mean(pos), tape.mean(emb))
    }

    /// Packs contexts into a constant latent matrix plus per-set indices.
    fn pack_contexts(&self, contexts: &[&DrawingContext]) -> Result<(Mat, Vec<[f64; 2]>, Vec<Vec<usize>>)> {
        let mut rows = Vec::new();
        let mut starts = Vec::new();
        let mut sets = Vec::with_capacity(contexts.len());
        for ctx in contexts {
            if ctx.is_empty() {
                return Err(Error::EmptyContext);
            }
            let mut set = Vec::with_capacity(ctx.len());
            for e in ctx.embeddings() {
                if e.lambda.len() != self.latent_dim {
                    return Err(Error::InvalidInput(format!(
                        "context latent has {} entries, model expects {}",
                        e.lambda.len(),
                        self.latent_dim
                    )));
                }
                set.push(rows.len());
                rows.push(e.lambda.clone());
                starts.push(e.start);
            }
            sets.push(set);
        }
        Ok((Mat::from_rows(&rows), starts, sets))
    }

    /// Position and embedding mixtures for many contexts at once. Contexts
    /// are processed in one batched pass; `next_starts` conditions the
    /// embedding head.
    pub fn predict_batch(
        &self,
        params: &ParamStore,
        contexts: &[&DrawingContext],
        next_starts: &[[f64; 2]],
    ) -> Result<Vec<(GmmParams, GmmParams)>> {
        if contexts.len() != next_starts.len() {
            return Err(Error::InvalidInput("one next start per context required".into()));
        }
        if contexts.is_empty() {
            return Ok(Vec::new());
        }
        let (lam, starts, sets) = self.pack_contexts(contexts)?;
        let mut tape = Tape::new(params);
        let lam = tape.constant(lam);
        let set_refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
        let out = self.forward_on_tape(&mut tape, lam, &starts, &set_refs, next_starts);
        let pr = tape.value(out.position_raw);
        let er = tape.value(out.embedding_raw);
        (0..contexts.len())
            .map(|i| {
                Ok((
                    GmmParams::from_raw_row(pr.row(i), &self.position.layout)?,
                    GmmParams::from_raw_row(er.row(i), &self.embedding.layout)?,
                ))
            })
            .collect()
    }

    pub fn predict_position(&self, params: &ParamStore, ctx: &DrawingContext) -> Result<GmmParams> {
        Ok(self.predict_batch(params, &[ctx], &[[0.0, 0.0]])?.remove(0).0)
    }

    pub fn predict_embedding(&self, params: &ParamStore, ctx: &DrawingContext, next_start: [f64; 2]) -> Result<GmmParams> {
        Ok(self.predict_batch(params, &[ctx], &[next_start])?.remove(0).1)
    }

    /// Mean over pairs of position NLL plus embedding NLL. Targets are
    /// plain values, so no gradient can reach whatever produced them.
    pub fn relational_loss(&self, params: &ParamStore, pairs: &[(DrawingContext, StrokeEmbedding)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("relational loss needs at least one pair".into()));
        }
        let mut rows = Vec::new();
        let mut starts = Vec::new();
        let mut subset_pairs = Vec::with_capacity(pairs.len());
        for (ctx, target) in pairs {
            if ctx.is_empty() {
                return Err(Error::EmptyContext);
            }
            let mut context = Vec::with_capacity(ctx.len());
            for e in ctx.embeddings() {
                context.push(rows.len());
                rows.push(e.lambda.clone());
                starts.push(e.start);
            }
            subset_pairs.push(SubsetPair { context, target: rows.len() });
            rows.push(target.lambda.clone());
            starts.push(target.start);
        }
        if rows.iter().any(|r| r.len() != self.latent_dim) {
            return Err(Error::InvalidInput("latent dimensionality mismatch".into()));
        }
        let mut tape = Tape::new(params);
        let lam = tape.constant(Mat::from_rows(&rows));
        let (pos, emb) = self.loss_on_tape(&mut tape, lam, &starts, &subset_pairs);
        let total = tape.sum(&[pos, emb]);
        Ok(tape.value(total).item())
    }
}
