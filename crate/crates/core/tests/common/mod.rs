#![allow(dead_code)]

use cose_core::codec::CodecConfig;
use cose_core::ink::{Drawing, Point, Stroke};
use cose_core::relational::RelationalConfig;
use cose_core::synth::{synth_corpus_annotated, SynthConfig, SynthDrawing};
use cose_core::train::{LrSchedule, TrainConfig, Trainer};
use cose_core::{CoseModel, ModelConfig};

pub const CORPUS_SEED: u64 = 7;
pub const CORPUS_SIZE: usize = 32;
pub const OVERFIT_STEPS: usize = 2000;

pub fn annotated_corpus() -> Vec<SynthDrawing> {
    synth_corpus_annotated(&SynthConfig::default(), CORPUS_SIZE, CORPUS_SEED)
}

pub fn toy_corpus() -> Vec<Drawing> {
    annotated_corpus().into_iter().map(|d| d.drawing).collect()
}

/// Two equal boxes a fixed gap apart joined by an arrow, always drawn box,
/// box, shaft, head. Box height is fixed, so the first box determines where
/// the second starts after normalization.
pub fn two_box_corpus() -> Vec<Drawing> {
    let cfg = SynthConfig {
        min_nodes: 2,
        max_nodes: 2,
        box_prob: 1.0,
        interleave_prob: 0.0,
        gap: [0.45, 0.45],
        half_height: [0.25, 0.25],
        y_jitter: 0.0,
        same_size: true,
        ..SynthConfig::default()
    };
    synth_corpus_annotated(&cfg, CORPUS_SIZE, CORPUS_SEED).into_iter().map(|d| d.drawing).collect()
}

pub fn toy_codec() -> CodecConfig {
    CodecConfig {
        enc_layers: 2,
        d_model: 32,
        d_ff: 64,
        heads: 4,
        dec_layers: 3,
        dec_width: 64,
        dec_components: 5,
        ..CodecConfig::default()
    }
}

pub fn toy_relational() -> RelationalConfig {
    RelationalConfig { layers: 2, d_model: 32, d_ff: 64, heads: 4, ..RelationalConfig::default() }
}

/// Whole-corpus batches, no augmentation, decaying learning rate.
pub fn toy_config(steps: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { codec: toy_codec(), relational: toy_relational() },
        batch_size: CORPUS_SIZE,
        lr_schedule: LrSchedule::ExponentialDecay { lr0: 3e-3, rate: 0.5, decay_steps: 1000.0 },
        total_steps: steps,
        seed: 1,
        n_subsets: 16,
        augmentation: None,
        ..TrainConfig::default()
    }
}

pub fn train(cfg: TrainConfig, corpus: &[Drawing]) -> Trainer {
    let mut t = Trainer::new(cfg).expect("valid config");
    t.train(corpus, |_, _| Ok(())).expect("training runs");
    t
}

/// A non-closed 20-point curve.
pub fn s_curve() -> Stroke {
    let pts: Vec<Point> = (0..20)
        .map(|i| {
            let u = i as f64 / 19.0;
            Point::new(0.3 + 0.8 * u, 0.2 + 0.25 * (std::f64::consts::TAU * u).sin())
        })
        .collect();
    Stroke::new(pts).unwrap()
}

/// Overfits the toy codec to `s_curve` alone.
pub fn single_stroke_model() -> CoseModel {
    let mut cfg = toy_config(10_000);
    cfg.model.codec.t_samples_per_stroke = 32;
    cfg.batch_size = 1;
    cfg.lr_schedule = LrSchedule::ExponentialDecay { lr0: 3e-3, rate: 0.5, decay_steps: 1500.0 };
    train(cfg, &[Drawing::new(vec![s_curve()]).unwrap()]).model
}
