//! Diagonal Gaussian mixtures used by every output head.
//!
//! Network heads emit a flat raw row laid out as
//! `[weight logits (M) | means (M·d) | log-scales (M·d or M)]`.
//! [`GmmParams::from_raw_row`] turns such a row into a normalized mixture and
//! [`nll_and_grad`] evaluates the negative log-likelihood together with its
//! analytic gradient with respect to the raw row.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const SIGMA_CEIL: f64 = 1e3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    /// One scale per component and dimension.
    #[default]
    Diagonal,
    /// One scale per component shared by all dimensions.
    Isotropic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GmmLayout {
    pub components: usize,
    pub dim: usize,
    pub scales: ScaleKind,
}

impl GmmLayout {
    pub fn new(components: usize, dim: usize, scales: ScaleKind) -> Self {
        Self { components, dim, scales }
    }

    pub fn scale_width(&self) -> usize {
        match self.scales {
            ScaleKind::Diagonal => self.dim,
            ScaleKind::Isotropic => 1,
        }
    }

    /// Width of the raw network output row.
    pub fn raw_width(&self) -> usize {
        self.components * (1 + self.dim + self.scale_width())
    }

    fn split<'a>(&self, raw: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let m = self.components;
        let (w, rest) = raw.split_at(m);
        let (mu, s) = rest.split_at(m * self.dim);
        (w, mu, s)
    }
}

fn log_sigma_bounds() -> (f64, f64) {
    (SIGMA_FLOOR.ln(), SIGMA_CEIL.ln())
}

fn scale_from_raw(r: f64) -> f64 {
    let (lo, hi) = log_sigma_bounds();
    r.clamp(lo, hi).exp()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A normalized mixture with diagonal covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

impl GmmParams {
    /// `π = softmax(raw_weights)`, `σ = exp(clamp(raw_scales))`, means passed
    /// through. `raw_means` and `raw_scales` are row-major `M × dim`.
    pub fn from_raw(raw_weights: &[f64], raw_means: &[f64], raw_scales: &[f64], dim: usize) -> Result<Self> {
        let m = raw_weights.len();
        if m == 0 || dim == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component and dimension".into()));
        }
        if raw_means.len() != m * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} raw means, got {}",
                m * dim,
                raw_means.len()
            )));
        }
        let scales = match raw_scales.len() {
            n if n == m * dim => ScaleKind::Diagonal,
            n if n == m => ScaleKind::Isotropic,
            n => return Err(Error::InvalidInput(format!("unexpected raw scale count {n}"))),
        };
        let mut row = Vec::with_capacity(m * (1 + dim) + raw_scales.len());
        row.extend_from_slice(raw_weights);
        row.extend_from_slice(raw_means);
        row.extend_from_slice(raw_scales);
        Self::from_raw_row(&row, &GmmLayout::new(m, dim, scales))
    }

    pub fn from_raw_row(raw: &[f64], layout: &GmmLayout) -> Result<Self> {
        if raw.len() != layout.raw_width() {
            return Err(Error::InvalidInput(format!(
                "raw mixture row has {} values, layout needs {}",
                raw.len(),
                layout.raw_width()
            )));
        }
        if raw.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("raw mixture parameters".into()));
        }
        let (w, mu, s) = layout.split(raw);
        let d = layout.dim;
        let sw = layout.scale_width();
        let weights: Vec<f64> = log_softmax(w).into_iter().map(f64::exp).collect();
        let means = mu.chunks(d).map(<[f64]>::to_vec).collect();
        let scales = s
            .chunks(sw)
            .map(|c| (0..d).map(|j| scale_from_raw(c[j.min(sw - 1)])).collect())
            .collect();
        Ok(Self { weights, means, scales })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `log Σ_m π_m N(x | μ_m, diag σ_m²)` via log-sum-exp.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|m| self.weights[m].ln() + self.component_log_density(m, x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn component_log_density(&self, m: usize, x: &[f64]) -> f64 {
        self.means[m]
            .iter()
            .zip(&self.scales[m])
            .zip(x)
            .map(|((mu, sigma), xi)| {
                let z = (xi - mu) / sigma;
                -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
            })
            .sum()
    }

    /// Component indices by descending weight; ties keep the lower index first.
    pub fn ranked_components(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.components()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
        idx
    }

    pub fn component_means(&self) -> Vec<Vec<f64>> {
        self.ranked_components().into_iter().map(|m| self.means[m].clone()).collect()
    }

    /// Draws a component from `π` sharpened by `temperature`, then a point
    /// from that component with scales multiplied by `√temperature`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, temperature: f64) -> Vec<f64> {
        let m = self.sample_component_index(rng, temperature);
        self.sample_component(m, rng, temperature)
    }

    pub fn sample_component_index<R: Rng + ?Sized>(&self, rng: &mut R, temperature: f64) -> usize {
        let tau = temperature.max(1e-12);
        let logits: Vec<f64> = self.weights.iter().map(|w| w.ln() / tau).collect();
        let probs: Vec<f64> = log_softmax(&logits).into_iter().map(f64::exp).collect();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return m;
            }
        }
        probs.len() - 1
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, m: usize, rng: &mut R, temperature: f64) -> Vec<f64> {
        let k = temperature.max(0.0).sqrt();
        self.means[m]
            .iter()
            .zip(&self.scales[m])
            .map(|(mu, sigma)| {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * k * z
            })
            .collect()
    }

    /// Shifts every component mean by `offset`.
    pub fn translated(mut self, offset: &[f64]) -> Self {
        for mean in &mut self.means {
            for (m, o) in mean.iter_mut().zip(offset) {
                *m += o;
            }
        }
        self
    }
}

/// Negative log-likelihood of `x` under the mixture encoded by `raw`, and its
/// gradient with respect to `raw` written into `grad`.
///
/// With responsibilities `γ_m` and standardized residuals `z = (x − μ)/σ`:
/// `∂L/∂w_m = γ_m − π_m`, `∂L/∂μ_mj = γ_m z_mj / σ_mj`,
/// `∂L/∂r_mj = γ_m (z_mj² − 1)` where `r` is the raw log-scale (zero outside
/// the clamp range). The returned gradient is that of `−L`.
pub fn nll_and_grad(raw: &[f64], layout: &GmmLayout, x: &[f64], grad: &mut [f64]) -> f64 {
    debug_assert_eq!(raw.len(), layout.raw_width());
    debug_assert_eq!(grad.len(), raw.len());
    debug_assert_eq!(x.len(), layout.dim);
    let m_count = layout.components;
    let d = layout.dim;
    let sw = layout.scale_width();
    let (w, mu, s) = layout.split(raw);
    let (lo, hi) = log_sigma_bounds();
    let log_pi = log_softmax(w);

    let mut joint = vec![0.0; m_count];
    for m in 0..m_count {
        let mut ld = 0.0;
        for j in 0..d {
            let r = s[m * sw + j.min(sw - 1)];
            let log_sigma = r.clamp(lo, hi);
            let z = (x[j] - mu[m * d + j]) * (-log_sigma).exp();
            ld += -0.5 * LN_2PI - log_sigma - 0.5 * z * z;
        }
        joint[m] = log_pi[m] + ld;
    }
    let ll = log_sum_exp(&joint);

    grad.iter_mut().for_each(|g| *g = 0.0);
    let (gw, rest) = grad.split_at_mut(m_count);
    let (gmu, gs) = rest.split_at_mut(m_count * d);
    for m in 0..m_count {
        let gamma = (joint[m] - ll).exp();
        gw[m] = -(gamma - log_pi[m].exp());
        for j in 0..d {
            let ri = m * sw + j.min(sw - 1);
            let r = s[ri];
            let inv_sigma = (-r.clamp(lo, hi)).exp();
            let z = (x[j] - mu[m * d + j]) * inv_sigma;
            gmu[m * d + j] = -gamma * z * inv_sigma;
            if (lo..=hi).contains(&r) {
                gs[ri] += -gamma * (z * z - 1.0);
            }
        }
    }
    -ll
}
