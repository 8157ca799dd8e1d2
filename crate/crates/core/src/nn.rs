//! Layers built on the tape: dense layers, post-norm transformer blocks and
//! sinusoidal positional encodings.

use std::rc::Rc;

use rand::Rng;

use crate::params::{ParamId, ParamStore};
use crate::tape::{Segment, Tape, Var};
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let weight = params.glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = params.constant(format!("{name}.bias"), 1, fan_out, 0.0);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }
}

#[derive(Clone, Debug)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn new(params: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: params.constant(format!("{name}.gain"), 1, width, 1.0),
            bias: params.constant(format!("{name}.bias"), 1, width, 0.0),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Shape of a transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackShape {
    pub layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
}

#[derive(Clone, Debug)]
struct Block {
    qkv: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

/// Transformer encoder blocks with residual connections followed by layer
/// normalization (post-norm, as in the original architecture).
#[derive(Clone, Debug)]
pub struct TransformerStack {
    shape: StackShape,
    blocks: Vec<Block>,
}

impl TransformerStack {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamStore, name: &str, shape: StackShape, rng: &mut R) -> Self {
        let d = shape.d_model;
        let blocks = (0..shape.layers)
            .map(|i| {
                let p = format!("{name}.layers.{i}");
                Block {
                    qkv: Linear::new(params, &format!("{p}.attn.qkv"), d, 3 * d, rng),
                    out: Linear::new(params, &format!("{p}.attn.out"), d, d, rng),
                    norm1: LayerNorm::new(params, &format!("{p}.norm1"), d),
                    ff1: Linear::new(params, &format!("{p}.ff1"), d, shape.d_ff, rng),
                    ff2: Linear::new(params, &format!("{p}.ff2"), shape.d_ff, d, rng),
                    norm2: LayerNorm::new(params, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        Self { shape, blocks }
    }

    pub fn shape(&self) -> StackShape {
        self.shape
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, segments: &Rc<[Segment]>, causal: bool) -> Var {
        let mut h = x;
        for b in &self.blocks {
            let qkv = b.qkv.forward(tape, h);
            let a = tape.attention(qkv, self.shape.heads, Rc::clone(segments), causal);
            let a = b.out.forward(tape, a);
            let r = tape.add(h, a);
            let h1 = b.norm1.forward(tape, r);
            let f = b.ff1.forward(tape, h1);
            let f = tape.relu(f);
            let f = b.ff2.forward(tape, f);
            let r = tape.add(h1, f);
            h = b.norm2.forward(tape, r);
        }
        h
    }
}

/// ReLU multilayer perceptron followed by a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    hidden: Vec<Linear>,
    output: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        layers: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let mut hidden = Vec::with_capacity(layers);
        let mut fan_in = input;
        for i in 0..layers {
            hidden.push(Linear::new(params, &format!("{name}.hidden.{i}"), fan_in, width, rng));
            fan_in = width;
        }
        let output = Linear::new(params, &format!("{name}.output"), fan_in, output, rng);
        Self { hidden, output }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for l in &self.hidden {
            let z = l.forward(tape, h);
            h = tape.relu(z);
        }
        self.output.forward(tape, h)
    }
}

/// Sinusoidal encoding of position `pos` into `width` channels.
pub fn positional_encoding_row(pos: usize, width: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate().take(width) {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / width as f64);
        *o = if j % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

/// Positional encodings for packed segments, restarting at 0 in each one.
pub fn positional_encoding(segments: &[Segment], rows: usize, width: usize) -> Mat {
    let mut pe = Mat::zeros(rows, width);
    for seg in segments {
        for i in 0..seg.len {
            positional_encoding_row(i, width, pe.row_mut(seg.start + i));
        }
    }
    pe
}
