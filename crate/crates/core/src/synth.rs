//! Seeded generator for small flowchart-like drawings: boxes and circles
//! joined left to right by arrows (a shaft stroke followed by a head
//! stroke). Drawings are normalized to unit height.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ink::{normalize_drawing, spatial_resample, Drawing, Point, Stroke};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Points per box or circle stroke.
    pub shape_points: usize,
    /// Points per arrow shaft.
    pub shaft_points: usize,
    /// Probability of drawing each arrow right after its source node
    /// instead of after all nodes.
    pub interleave_prob: f64,
    /// Probability that a node is a box rather than a circle.
    pub box_prob: f64,
    /// Range of node half-widths.
    pub half_width: [f64; 2],
    /// Range of node half-heights.
    pub half_height: [f64; 2],
    /// Range of horizontal gaps between neighbouring nodes.
    pub gap: [f64; 2],
    /// Maximum vertical offset of a node centre.
    pub y_jitter: f64,
    /// Give every node in a drawing the size of the first one.
    pub same_size: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_nodes: 2,
            max_nodes: 3,
            shape_points: 16,
            shaft_points: 6,
            interleave_prob: 0.5,
            box_prob: 0.5,
            half_width: [0.2, 0.35],
            half_height: [0.2, 0.35],
            gap: [0.35, 0.55],
            y_jitter: 0.05,
            same_size: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeShape {
    Box,
    Circle,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    shape: NodeShape,
    cx: f64,
    cy: f64,
    hw: f64,
    hh: f64,
}

fn polyline(pts: &[[f64; 2]], n: usize) -> Stroke {
    let s = Stroke::from_xy(pts).expect("generator emits finite points");
    spatial_resample(&s, n).expect("generator strokes have length")
}

fn node_stroke(n: &Node, points: usize) -> Stroke {
    match n.shape {
        NodeShape::Box => {
            let (l, r, t, b) = (n.cx - n.hw, n.cx + n.hw, n.cy - n.hh, n.cy + n.hh);
            polyline(&[[l, t], [r, t], [r, b], [l, b], [l, t]], points)
        }
        NodeShape::Circle => {
            let pts: Vec<Point> = (0..points)
                .map(|i| {
                    let a = -std::f64::consts::FRAC_PI_2 - 2.0 * std::f64::consts::PI * i as f64 / (points - 1) as f64;
                    Point::new(n.cx + n.hw * a.cos(), n.cy + n.hh * a.sin())
                })
                .collect();
            Stroke::new(pts).expect("finite circle")
        }
    }
}

fn arrow(from: &Node, to: &Node, shaft_points: usize, head: f64) -> [Stroke; 2] {
    let y = 0.5 * (from.cy + to.cy);
    let x0 = from.cx + from.hw;
    let x1 = to.cx - to.hw;
    let shaft = polyline(&[[x0, y], [x1, y]], shaft_points);
    let head = Stroke::from_xy(&[[x1 - head, y - head], [x1, y], [x1 - head, y + head]]).expect("finite head");
    [shaft, head]
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

/// A generated drawing with the layout that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDrawing {
    pub drawing: Drawing,
    /// Node shapes from left to right.
    pub shapes: Vec<NodeShape>,
    /// Whether each arrow follows its source node directly.
    pub interleaved: bool,
}

/// One drawing from `rng`.
pub fn synth_drawing<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Drawing {
    synth_annotated(cfg, rng).drawing
}

pub fn synth_annotated<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> SynthDrawing {
    let k = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
    let mut nodes: Vec<Node> = Vec::with_capacity(k);
    let mut x = 0.0;
    for i in 0..k {
        let shape = if rng.random::<f64>() < cfg.box_prob { NodeShape::Box } else { NodeShape::Circle };
        let (hw, hh) = match nodes.first() {
            Some(n) if cfg.same_size => (n.hw, n.hh),
            _ => (uniform(rng, cfg.half_width), uniform(rng, cfg.half_height)),
        };
        if i > 0 {
            x += hw + uniform(rng, cfg.gap);
        }
        let cy = uniform(rng, [-cfg.y_jitter, cfg.y_jitter]);
        nodes.push(Node { shape, cx: x, cy, hw, hh });
        x += hw;
    }
    let head = rng.random_range(0.06..0.1);
    let arrows: Vec<[Stroke; 2]> = nodes.windows(2).map(|w| arrow(&w[0], &w[1], cfg.shaft_points, head)).collect();

    let mut strokes = Vec::with_capacity(3 * k);
    let interleaved = rng.random::<f64>() < cfg.interleave_prob;
    if interleaved {
        for (i, n) in nodes.iter().enumerate() {
            strokes.push(node_stroke(n, cfg.shape_points));
            if let Some(a) = arrows.get(i) {
                strokes.extend(a.iter().cloned());
            }
        }
    } else {
        strokes.extend(nodes.iter().map(|n| node_stroke(n, cfg.shape_points)));
        strokes.extend(arrows.into_iter().flatten());
    }
    SynthDrawing {
        drawing: normalize_drawing(&Drawing::new(strokes).expect("at least one node")),
        shapes: nodes.iter().map(|n| n.shape).collect(),
        interleaved,
    }
}

/// `n` drawings from a generator seeded with `seed`.
pub fn synth_corpus(cfg: &SynthConfig, n: usize, seed: u64) -> Vec<Drawing> {
    synth_corpus_annotated(cfg, n, seed).into_iter().map(|d| d.drawing).collect()
}

pub fn synth_corpus_annotated(cfg: &SynthConfig, n: usize, seed: u64) -> Vec<SynthDrawing> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synth_annotated(cfg, &mut rng)).collect()
}
