//! Interactive completion: ranked next-stroke suggestions and autoregressive
//! rollouts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{DecodeMode, StrokeEmbedding};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::ink::Stroke;
use crate::model::CoseModel;
use crate::relational::DrawingContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuggestOptions {
    pub top_positions: usize,
    pub top_strokes: usize,
    pub n_points: usize,
}

impl Default for SuggestOptions {
    fn default() -> Self {
        Self { top_positions: 2, top_strokes: 3, n_points: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateStroke {
    pub points: Vec<[f64; 2]>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub start: [f64; 2],
    pub start_weight: f64,
    pub strokes: Vec<CandidateStroke>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestions {
    pub suggestions: Vec<Suggestion>,
    /// The full start-position mixture, for density rendering.
    pub position_mixture: GmmParams,
}

fn context(model: &CoseModel, drawn: &[Stroke]) -> Result<DrawingContext> {
    if drawn.is_empty() {
        return Err(Error::EmptyContext);
    }
    DrawingContext::new(model.encode_strokes(drawn)?)
}

/// The `top_positions` most likely start positions, each with the
/// `top_strokes` most likely strokes decoded at that start.
pub fn suggest(model: &CoseModel, drawn: &[Stroke], opts: &SuggestOptions) -> Result<Suggestions> {
    if opts.top_positions == 0 || opts.top_strokes == 0 {
        return Err(Error::InvalidInput("top_positions and top_strokes must be positive".into()));
    }
    if opts.n_points < 2 {
        return Err(Error::InvalidInput("n_points must be at least 2".into()));
    }
    let ctx = context(model, drawn)?;
    let position = model.relational.predict_position(&model.params, &ctx)?;
    let picks: Vec<usize> = position.ranked_components().into_iter().take(opts.top_positions).collect();
    let starts: Vec<[f64; 2]> = picks.iter().map(|&m| [position.means[m][0], position.means[m][1]]).collect();
    let contexts: Vec<&DrawingContext> = vec![&ctx; starts.len()];
    let predictions = model.relational.predict_batch(&model.params, &contexts, &starts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut suggestions = Vec::with_capacity(picks.len());
    for ((&m, &start), (_, emb)) in picks.iter().zip(&starts).zip(&predictions) {
        let mut strokes = Vec::with_capacity(opts.top_strokes);
        for c in emb.ranked_components().into_iter().take(opts.top_strokes) {
            let e = StrokeEmbedding { lambda: emb.means[c].clone(), start };
            let s = model.codec.reconstruct(&model.params, &e, opts.n_points, DecodeMode::Mean, &mut rng)?;
            strokes.push(CandidateStroke { points: s.xy(), weight: emb.weights[c] });
        }
        suggestions.push(Suggestion { start, start_weight: position.weights[m], strokes });
    }
    Ok(Suggestions { suggestions, position_mixture: position })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub steps: usize,
    pub temperature: f64,
    pub seed: u64,
    pub n_points: usize,
    pub mode: DecodeMode,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { steps: 5, temperature: 1.0, seed: 0, n_points: 50, mode: DecodeMode::Mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStroke {
    pub points: Vec<[f64; 2]>,
    /// 0 for seed strokes, `1..=steps` for generated ones.
    pub step: usize,
}

/// Repeatedly samples a start position, then a latent code given that
/// start, decodes it, and adds it to the context.
pub fn rollout(model: &CoseModel, seed_strokes: &[Stroke], opts: &RolloutOptions) -> Result<Vec<RolloutStroke>> {
    if !(opts.temperature > 0.0 && opts.temperature.is_finite()) {
        return Err(Error::InvalidInput("temperature must be positive".into()));
    }
    if opts.n_points < 2 {
        return Err(Error::InvalidInput("n_points must be at least 2".into()));
    }
    let mut out: Vec<RolloutStroke> = seed_strokes.iter().map(|s| RolloutStroke { points: s.xy(), step: 0 }).collect();
    if opts.steps == 0 {
        return Ok(out);
    }
    let mut ctx = context(model, seed_strokes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for step in 1..=opts.steps {
        let position = model.relational.predict_position(&model.params, &ctx)?;
        let p = position.sample(&mut rng, opts.temperature);
        let start = [p[0], p[1]];
        let lambda = model.relational.predict_embedding(&model.params, &ctx, start)?.sample(&mut rng, opts.temperature);
        let emb = StrokeEmbedding { lambda, start };
        let s = model.codec.reconstruct(&model.params, &emb, opts.n_points, opts.mode, &mut rng)?;
        out.push(RolloutStroke { points: s.xy(), step });
        ctx.push(emb);
    }
    Ok(out)
}
