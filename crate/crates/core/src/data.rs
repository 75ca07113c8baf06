//! Datasets, hypothesis configuration and the PADR parameter vector.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config, dim, PadrError, Result};
use crate::rng::{RngHandle, Stream};

/// The sample set: `n` feature rows of length `p` and outcome rows of length `m`,
/// both stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    m: usize,
    features: Vec<f64>,
    outcomes: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major buffers. `n` is inferred from the
    /// outcome buffer, so `p = 0` (intercept-only rules) is allowed.
    pub fn new(p: usize, m: usize, features: Vec<f64>, outcomes: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(PadrError::Data("outcome dimension m must be positive".into()));
        }
        if outcomes.len() % m != 0 {
            return Err(dim(format!("outcome buffer length {} is not a multiple of m={m}", outcomes.len())));
        }
        let n = outcomes.len() / m;
        if n == 0 {
            return Err(PadrError::Data("n ≥ 1 violated".into()));
        }
        if features.len() != n * p {
            return Err(dim(format!("feature buffer has {} entries, expected n·p = {}", features.len(), n * p)));
        }
        if let Some(i) = features.iter().chain(&outcomes).position(|v| !v.is_finite()) {
            return Err(PadrError::Data(format!("non-finite entry at flat position {i}")));
        }
        Ok(Self { n, p, m, features, outcomes })
    }

    /// Builds a dataset from per-sample rows; rows must not be ragged.
    pub fn from_rows(features: &[Vec<f64>], outcomes: &[Vec<f64>]) -> Result<Self> {
        if features.len() != outcomes.len() {
            return Err(dim("feature and outcome row counts differ"));
        }
        if outcomes.is_empty() {
            return Err(PadrError::Data("n ≥ 1 violated".into()));
        }
        let p = features[0].len();
        let m = outcomes[0].len();
        if features.iter().any(|r| r.len() != p) || outcomes.iter().any(|r| r.len() != m) {
            return Err(dim("ragged rows"));
        }
        Self::new(p, m, features.concat(), outcomes.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn x(&self, s: usize) -> &[f64] {
        &self.features[s * self.p..(s + 1) * self.p]
    }

    pub fn y(&self, s: usize) -> &[f64] {
        &self.outcomes[s * self.m..(s + 1) * self.m]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Rows `ids` (repeats allowed) as a new dataset.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let mut f = Vec::with_capacity(ids.len() * self.p);
        let mut o = Vec::with_capacity(ids.len() * self.m);
        for &s in ids {
            if s >= self.n {
                return Err(dim(format!("row {s} out of range for n={}", self.n)));
            }
            f.extend_from_slice(self.x(s));
            o.extend_from_slice(self.y(s));
        }
        Self::new(self.p, self.m, f, o)
    }

    /// Largest squared feature norm, `max_s ‖x^s‖²`.
    pub fn max_sq_norm(&self) -> f64 {
        (0..self.n)
            .map(|s| self.x(s).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Returns a copy with every feature row mapped through `f`.
    pub fn map_features(&self, p_out: usize, mut f: impl FnMut(&[f64], &mut Vec<f64>)) -> Result<Self> {
        let mut out = Vec::with_capacity(self.n * p_out);
        for s in 0..self.n {
            let before = out.len();
            f(self.x(s), &mut out);
            if out.len() - before != p_out {
                return Err(dim("feature map produced the wrong row length"));
            }
        }
        Self::new(p_out, self.m, out, self.outcomes.clone())
    }
}

/// Shape of the hypothesis class PADR(K1, K2) with `d` outputs over `p` features.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct HypothesisConfig {
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub p: usize,
    pub mu: f64,
}

impl HypothesisConfig {
    pub fn new(d: usize, k1: usize, k2: usize, p: usize, mu: f64) -> Result<Self> {
        let cfg = Self { d, k1, k2, p, mu };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(config("d must be at least 1"));
        }
        if self.k1 == 0 {
            return Err(config("k1 must be at least 1"));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(config("mu must be positive and finite"));
        }
        Ok(())
    }

    /// Parameters per affine piece (`p` slopes plus an intercept).
    pub fn block_len(&self) -> usize {
        self.p + 1
    }

    /// Parameters per output coordinate.
    pub fn output_len(&self) -> usize {
        (self.k1 + self.k2) * self.block_len()
    }

    /// Total parameter count `q = d (K1 + K2) (p + 1)`.
    pub fn q(&self) -> usize {
        self.d * self.output_len()
    }

    /// Flat offset of piece `k` of the max-affine term `g` for output `i`.
    pub fn g_offset(&self, i: usize, k: usize) -> usize {
        i * self.output_len() + k * self.block_len()
    }

    /// Flat offset of piece `k` of the subtracted max-affine term `h` for output `i`.
    pub fn h_offset(&self, i: usize, k: usize) -> usize {
        i * self.output_len() + (self.k1 + k) * self.block_len()
    }
}

/// Parameters of one output coordinate in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams {
    /// `K1` slope rows of length `p`.
    pub alpha: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    /// `K2` slope rows of length `p`.
    pub beta: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// All PADR parameters, flattened as: for each output, the `K1` pieces of `g`
/// followed by the `K2` pieces of `h`, each piece stored as `[slopes.., intercept]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    cfg: HypothesisConfig,
    values: Vec<f64>,
}

impl Theta {
    pub fn zeros(cfg: HypothesisConfig) -> Self {
        Self { cfg, values: vec![0.0; cfg.q()] }
    }

    /// Wraps a flat vector after checking its length, finiteness and box membership.
    pub fn from_flat(cfg: HypothesisConfig, values: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if values.len() != cfg.q() {
            return Err(dim(format!("theta has {} entries, expected q = {}", values.len(), cfg.q())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PadrError::Data(format!("theta entry {i} is not finite")));
        }
        if let Some(i) = values.iter().position(|v| v.abs() > cfg.mu) {
            return Err(PadrError::Data(format!(
                "theta entry {i} = {} lies outside [-{mu}, {mu}]",
                values[i],
                mu = cfg.mu
            )));
        }
        Ok(Self { cfg, values })
    }

    /// Same as [`Theta::from_flat`] but clamps every entry into the box first.
    pub fn from_flat_clamped(cfg: HypothesisConfig, mut values: Vec<f64>) -> Result<Self> {
        for v in &mut values {
            if v.is_finite() {
                *v = v.clamp(-cfg.mu, cfg.mu);
            }
        }
        Self::from_flat(cfg, values)
    }

    pub fn from_parts(cfg: HypothesisConfig, parts: &[OutputParams]) -> Result<Self> {
        if parts.len() != cfg.d {
            return Err(dim("one OutputParams per output is required"));
        }
        let mut values = Vec::with_capacity(cfg.q());
        for part in parts {
            if part.alpha.len() != cfg.k1 || part.a.len() != cfg.k1 || part.beta.len() != cfg.k2 || part.b.len() != cfg.k2 {
                return Err(dim("piece counts do not match K1/K2"));
            }
            for (row, icpt) in part.alpha.iter().zip(&part.a).chain(part.beta.iter().zip(&part.b)) {
                if row.len() != cfg.p {
                    return Err(dim("slope row length differs from p"));
                }
                values.extend_from_slice(row);
                values.push(*icpt);
            }
        }
        Self::from_flat(cfg, values)
    }

    pub fn to_parts(&self) -> Vec<OutputParams> {
        let c = &self.cfg;
        let p = c.p;
        (0..c.d)
            .map(|i| {
                let piece = |off: usize| (self.values[off..off + p].to_vec(), self.values[off + p]);
                let (alpha, a) = (0..c.k1).map(|k| piece(c.g_offset(i, k))).unzip();
                let (beta, b) = (0..c.k2).map(|k| piece(c.h_offset(i, k))).unzip();
                OutputParams { alpha, a, beta, b }
            })
            .collect()
    }

    pub fn cfg(&self) -> &HypothesisConfig {
        &self.cfg
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn in_box(&self) -> bool {
        self.values.iter().all(|v| v.abs() <= self.cfg.mu)
    }

    /// Identity tag used to tie index mappings to the reference point they
    /// were drawn at (FNV-1a over the bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Every parameter i.i.d. uniform on `[-μ, μ]`, drawn from the handle's stream.
/// Callers pass a handle on [`Stream::Init`]; the stream label is not enforced.
pub fn random_init(cfg: &HypothesisConfig, rng: &RngHandle) -> Theta {
    let mut r = rng.rng();
    let values = (0..cfg.q()).map(|_| r.uniform_in(-cfg.mu, cfg.mu)).collect();
    Theta { cfg: *cfg, values }
}

/// Convenience: the init stream of `seed`.
pub fn init_handle(seed: u64) -> RngHandle {
    RngHandle::new(seed, Stream::Init)
}

/// Per-feature affine map `x ↦ (x − shift) / scale`, fitted on training data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FeatureScaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    /// Standardizes each column to zero mean and unit variance; constant
    /// columns keep scale 1.
    pub fn fit(data: &Dataset) -> Self {
        let (n, p) = (data.n() as f64, data.p());
        let mut shift = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for s in 0..data.n() {
            for (j, v) in data.x(s).iter().enumerate() {
                shift[j] += v / n;
            }
        }
        for s in 0..data.n() {
            for (j, v) in data.x(s).iter().enumerate() {
                scale[j] += (v - shift[j]) * (v - shift[j]) / n;
            }
        }
        for v in &mut scale {
            *v = if *v > 0.0 { libm::sqrt(*v) } else { 1.0 };
        }
        Self { shift, scale }
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.p() != self.shift.len() {
            return Err(dim("scaler fitted on a different feature dimension"));
        }
        data.map_features(data.p(), |x, out| self.apply(x, out))
    }
}
