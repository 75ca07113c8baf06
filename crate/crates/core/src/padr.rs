//! PADR evaluation `f = g − h`, ε-active sets, index mappings and the inner
//! convex/concave surrogates `f̂`, `f̌`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::data::{Dataset, HypothesisConfig, Theta};
use crate::error::{dim, PadrError, Result};
use crate::rng::RngHandle;

/// Affine function `Σ coef·v[idx] + constant` with sparse terms.
///
/// Surrogate pieces are stored relative to their reference point, i.e. they
/// are evaluated at `v = θ − θ′`; the constant is then the value at `θ′`,
/// which keeps touching exact in floating point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineForm {
    pub terms: Vec<(u32, f64)>,
    pub constant: f64,
}

impl AffineForm {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(i, c)| acc + c * theta[i as usize])
    }

    /// `grad += w · ∇(self)`.
    pub fn add_grad(&self, w: f64, grad: &mut [f64]) {
        for &(i, c) in &self.terms {
            grad[i as usize] += w * c;
        }
    }

    /// `scale · self + shift`.
    pub fn affine_map(&self, scale: f64, shift: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, scale * c)).collect(),
            constant: scale * self.constant + shift,
        }
    }

    /// Gradient of piece `[slopes.., intercept]` at `offset` (times `sign`),
    /// with `constant` as the value at the reference point.
    fn piece(offset: usize, x: &[f64], sign: f64, constant: f64) -> Self {
        let mut terms = Vec::with_capacity(x.len() + 1);
        for (j, v) in x.iter().enumerate() {
            if *v != 0.0 {
                terms.push(((offset + j) as u32, sign * v));
            }
        }
        terms.push(((offset + x.len()) as u32, sign));
        Self { terms, constant }
    }

    fn with_terms_of(mut self, other: &Self) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self
    }
}

#[inline]
fn piece_value(theta: &[f64], offset: usize, x: &[f64]) -> f64 {
    let p = x.len();
    theta[offset..offset + p].iter().zip(x).fold(theta[offset + p], |acc, (a, v)| acc + a * v)
}

/// Values of the `K1` pieces of `g` for output `i` at `x`.
pub fn g_values(theta: &Theta, i: usize, x: &[f64], out: &mut Vec<f64>) {
    let c = theta.cfg();
    out.clear();
    out.extend((0..c.k1).map(|k| piece_value(theta.as_slice(), c.g_offset(i, k), x)));
}

/// Values of the `K2` pieces of `h` for output `i` at `x`.
pub fn h_values(theta: &Theta, i: usize, x: &[f64], out: &mut Vec<f64>) {
    let c = theta.cfg();
    out.clear();
    out.extend((0..c.k2).map(|k| piece_value(theta.as_slice(), c.h_offset(i, k), x)));
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Output `i` of the rule at `x`, without dimension checks.
pub fn eval_output(theta: &Theta, i: usize, x: &[f64]) -> f64 {
    let c = theta.cfg();
    let t = theta.as_slice();
    let g = (0..c.k1).map(|k| piece_value(t, c.g_offset(i, k), x)).fold(f64::NEG_INFINITY, f64::max);
    if c.k2 == 0 {
        g
    } else {
        g - (0..c.k2).map(|k| piece_value(t, c.h_offset(i, k), x)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Decision vector `f(x; θ)` of length `d`.
pub fn eval_padr(theta: &Theta, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != theta.cfg().p {
        return Err(dim(format!("feature vector has length {}, expected p = {}", x.len(), theta.cfg().p)));
    }
    Ok((0..theta.cfg().d).map(|i| eval_output(theta, i, x)).collect())
}

/// Indices whose value is within `eps` of the maximum, in increasing order.
/// Every maximizer is included since `eps ≥ 0`.
pub fn active_indices(values: &[f64], eps: f64) -> Vec<usize> {
    let m = max_of(values);
    let thr = m - eps;
    values.iter().enumerate().filter(|(_, v)| **v >= thr).map(|(k, _)| k).collect()
}

/// Lowest index attaining the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let m = max_of(values);
    values.iter().position(|v| *v == m).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEntry {
    pub g: Vec<usize>,
    /// Empty when `K2 = 0`.
    pub h: Vec<usize>,
}

/// ε-active piece indices per (sample, output) at a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSets {
    pub epsilon: f64,
    pub reference: u64,
    pub d: usize,
    pub sample_ids: Vec<usize>,
    entries: Vec<ActiveEntry>,
}

impl ActiveSets {
    /// Entry for position `pos` in `sample_ids` and output `i`.
    pub fn get(&self, pos: usize, i: usize) -> &ActiveEntry {
        &self.entries[pos * self.d + i]
    }

    /// `|𝓘^ε|` as a product of set sizes (saturating).
    pub fn mapping_count(&self) -> u128 {
        self.entries.iter().fold(1u128, |acc, e| {
            acc.saturating_mul(e.g.len() as u128).saturating_mul(e.h.len().max(1) as u128)
        })
    }

    pub fn entries(&self) -> &[ActiveEntry] {
        &self.entries
    }
}

/// Active sets for every sample of `data`.
pub fn active_sets(theta_ref: &Theta, data: &Dataset, epsilon: f64) -> Result<ActiveSets> {
    let ids: Vec<usize> = (0..data.n()).collect();
    active_sets_for(theta_ref, data, epsilon, &ids)
}

/// Active sets restricted to `sample_ids`.
pub fn active_sets_for(theta_ref: &Theta, data: &Dataset, epsilon: f64, sample_ids: &[usize]) -> Result<ActiveSets> {
    if !(epsilon >= 0.0) {
        return Err(PadrError::Config("epsilon must be nonnegative".into()));
    }
    check_dims(theta_ref.cfg(), data)?;
    let c = theta_ref.cfg();
    let mut entries = Vec::with_capacity(sample_ids.len() * c.d);
    let mut buf = Vec::new();
    for &s in sample_ids {
        let x = data.x(s);
        for i in 0..c.d {
            g_values(theta_ref, i, x, &mut buf);
            let g = active_indices(&buf, epsilon);
            let h = if c.k2 == 0 {
                Vec::new()
            } else {
                h_values(theta_ref, i, x, &mut buf);
                active_indices(&buf, epsilon)
            };
            entries.push(ActiveEntry { g, h });
        }
    }
    Ok(ActiveSets {
        epsilon,
        reference: theta_ref.fingerprint(),
        d: c.d,
        sample_ids: sample_ids.to_vec(),
        entries,
    })
}

pub(crate) fn check_dims(cfg: &HypothesisConfig, data: &Dataset) -> Result<()> {
    if cfg.p != data.p() {
        return Err(dim(format!("rule expects p = {}, data has p = {}", cfg.p, data.p())));
    }
    Ok(())
}

/// One `(i1, i2)` choice per (sample, output); `i2 = 0` when `K2 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMapping {
    pub reference: u64,
    pub d: usize,
    pub sample_ids: Vec<usize>,
    pub choices: Vec<(usize, usize)>,
}

impl IndexMapping {
    pub fn position(&self, sample: usize) -> Option<usize> {
        self.sample_ids.iter().position(|&s| s == sample)
    }

    pub fn choice(&self, pos: usize, i: usize) -> (usize, usize) {
        self.choices[pos * self.d + i]
    }
}

/// Draws each coordinate uniformly from its active set. Sample `s` uses the
/// sub-stream `rng.child(s)`, so the draw for a sample does not depend on
/// which other samples are present (lazy and eager draws agree).
pub fn draw_index_mapping(sets: &ActiveSets, rng: &RngHandle) -> IndexMapping {
    let mut choices = Vec::with_capacity(sets.entries.len());
    for (pos, &s) in sets.sample_ids.iter().enumerate() {
        let mut r = rng.child(s as u64).rng();
        for i in 0..sets.d {
            let e = sets.get(pos, i);
            let i1 = e.g[r.index(e.g.len())];
            let i2 = if e.h.is_empty() { 0 } else { e.h[r.index(e.h.len())] };
            choices.push((i1, i2));
        }
    }
    IndexMapping {
        reference: sets.reference,
        d: sets.d,
        sample_ids: sets.sample_ids.clone(),
        choices,
    }
}

/// The touching mapping: lowest-index argmax of `g` and `h` per entry.
pub fn argmax_mapping(theta_ref: &Theta, data: &Dataset, sample_ids: &[usize]) -> Result<IndexMapping> {
    check_dims(theta_ref.cfg(), data)?;
    let c = theta_ref.cfg();
    let mut choices = Vec::with_capacity(sample_ids.len() * c.d);
    let mut buf = Vec::new();
    for &s in sample_ids {
        for i in 0..c.d {
            g_values(theta_ref, i, data.x(s), &mut buf);
            let i1 = argmax(&buf);
            let i2 = if c.k2 == 0 {
                0
            } else {
                h_values(theta_ref, i, data.x(s), &mut buf);
                argmax(&buf)
            };
            choices.push((i1, i2));
        }
    }
    Ok(IndexMapping {
        reference: theta_ref.fingerprint(),
        d: c.d,
        sample_ids: sample_ids.to_vec(),
        choices,
    })
}

/// Mapping built from explicit choices (used by exhaustive enumeration).
pub fn mapping_from_choices(sets: &ActiveSets, choices: Vec<(usize, usize)>) -> IndexMapping {
    IndexMapping {
        reference: sets.reference,
        d: sets.d,
        sample_ids: sets.sample_ids.clone(),
        choices,
    }
}

/// Per (sample, output): the affine pieces of `f̂` (convex, value = max) and
/// of `f̌` (concave, value = min).
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSurrogates {
    pub reference: u64,
    /// The reference point `θ′`; forms are evaluated at `θ − θ′`.
    pub center: Arc<[f64]>,
    pub d: usize,
    pub sample_ids: Vec<usize>,
    upper: Vec<Vec<AffineForm>>,
    lower: Vec<Vec<AffineForm>>,
}

impl InnerSurrogates {
    pub fn upper(&self, pos: usize, i: usize) -> &[AffineForm] {
        &self.upper[pos * self.d + i]
    }

    pub fn lower(&self, pos: usize, i: usize) -> &[AffineForm] {
        &self.lower[pos * self.d + i]
    }

    fn delta(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(self.center.iter()).map(|(t, c)| t - c).collect()
    }

    /// `f̂(θ)` for the entry.
    pub fn upper_value(&self, pos: usize, i: usize, theta: &[f64]) -> f64 {
        let v = self.delta(theta);
        self.upper(pos, i).iter().map(|a| a.eval(&v)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `f̌(θ)` for the entry.
    pub fn lower_value(&self, pos: usize, i: usize, theta: &[f64]) -> f64 {
        let v = self.delta(theta);
        self.lower(pos, i).iter().map(|a| a.eval(&v)).fold(f64::INFINITY, f64::min)
    }
}

/// Builds `f̂ = max_k g_k − h_{i2}` and `f̌ = g_{i1} − max_k h_k` for the
/// requested samples.
pub fn build_inner_surrogates(
    theta_ref: &Theta,
    data: &Dataset,
    mapping: &IndexMapping,
    sample_ids: &[usize],
) -> Result<InnerSurrogates> {
    if mapping.reference != theta_ref.fingerprint() {
        return Err(PadrError::MappingMismatch);
    }
    check_dims(theta_ref.cfg(), data)?;
    let c = theta_ref.cfg();
    let lookup: BTreeMap<usize, usize> = mapping.sample_ids.iter().enumerate().map(|(p, &s)| (s, p)).collect();
    let mut upper = Vec::with_capacity(sample_ids.len() * c.d);
    let mut lower = Vec::with_capacity(sample_ids.len() * c.d);
    let (mut gv, mut hv) = (Vec::new(), Vec::new());
    for &s in sample_ids {
        let pos = *lookup
            .get(&s)
            .ok_or_else(|| dim(format!("mapping has no entry for sample {s}")))?;
        let x = data.x(s);
        for i in 0..c.d {
            let (i1, i2) = mapping.choice(pos, i);
            g_values(theta_ref, i, x, &mut gv);
            let g: Vec<AffineForm> = (0..c.k1).map(|k| AffineForm::piece(c.g_offset(i, k), x, 1.0, gv[k])).collect();
            if c.k2 == 0 {
                lower.push(alloc::vec![g[i1].clone()]);
                upper.push(g);
            } else {
                h_values(theta_ref, i, x, &mut hv);
                let neg_h: Vec<AffineForm> = (0..c.k2).map(|k| AffineForm::piece(c.h_offset(i, k), x, -1.0, 0.0)).collect();
                upper.push(
                    (0..c.k1)
                        .map(|k| AffineForm { constant: gv[k] - hv[i2], ..g[k].clone() }.with_terms_of(&neg_h[i2]))
                        .collect(),
                );
                lower.push(
                    (0..c.k2)
                        .map(|k| AffineForm { constant: gv[i1] - hv[k], ..g[i1].clone() }.with_terms_of(&neg_h[k]))
                        .collect(),
                );
            }
        }
    }
    Ok(InnerSurrogates {
        reference: mapping.reference,
        center: Arc::from(theta_ref.as_slice()),
        d: c.d,
        sample_ids: sample_ids.to_vec(),
        upper,
        lower,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{init_handle, random_init};
    use crate::rng::Stream;

    #[test]
    fn linear_rule_value() {
        let cfg = HypothesisConfig::new(1, 1, 0, 2, 50.0).unwrap();
        let t = Theta::from_flat(cfg, alloc::vec![2.0, -1.0, 0.5]).unwrap();
        assert_eq!(eval_padr(&t, &[1.0, 1.0]).unwrap(), alloc::vec![1.5]);
        assert!(eval_padr(&t, &[1.0]).is_err());
    }

    #[test]
    fn threshold_active_set() {
        assert_eq!(active_indices(&[3.0, 5.0, 4.9], 0.2), alloc::vec![1, 2]);
        assert_eq!(active_indices(&[3.0, 5.0, 4.9], 0.0), alloc::vec![1]);
        assert_eq!(active_indices(&[3.0, 5.0, 4.9], 2.0), alloc::vec![0, 1, 2]);
        assert_eq!(argmax(&[1.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn touching_and_sandwich() {
        let cfg = HypothesisConfig::new(2, 3, 2, 2, 5.0).unwrap();
        let data = Dataset::new(2, 1, alloc::vec![0.3, -0.7, 1.0, 0.2], alloc::vec![0.0, 0.0]).unwrap();
        let t0 = random_init(&cfg, &init_handle(1));
        let ids = [0, 1];
        let map = argmax_mapping(&t0, &data, &ids).unwrap();
        let inner = build_inner_surrogates(&t0, &data, &map, &ids).unwrap();
        for pos in 0..2 {
            for i in 0..2 {
                let f = eval_output(&t0, i, data.x(ids[pos]));
                assert!((inner.upper_value(pos, i, t0.as_slice()) - f).abs() < 1e-12);
                assert!((inner.lower_value(pos, i, t0.as_slice()) - f).abs() < 1e-12);
            }
        }
        for k in 0..50 {
            let t = random_init(&cfg, &init_handle(100 + k));
            for pos in 0..2 {
                for i in 0..2 {
                    let f = eval_output(&t, i, data.x(ids[pos]));
                    assert!(inner.lower_value(pos, i, t.as_slice()) <= f + 1e-9);
                    assert!(f <= inner.upper_value(pos, i, t.as_slice()) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn mismatch_is_rejected() {
        let cfg = HypothesisConfig::new(1, 2, 0, 1, 5.0).unwrap();
        let data = Dataset::new(1, 1, alloc::vec![0.5], alloc::vec![1.0]).unwrap();
        let a = random_init(&cfg, &init_handle(1));
        let b = random_init(&cfg, &init_handle(2));
        let map = argmax_mapping(&a, &data, &[0]).unwrap();
        assert_eq!(build_inner_surrogates(&b, &data, &map, &[0]), Err(PadrError::MappingMismatch));
    }

    #[test]
    fn lazy_draw_matches_eager_restriction() {
        let cfg = HypothesisConfig::new(1, 3, 2, 1, 5.0).unwrap();
        let xs: Vec<f64> = (0..6).map(|s| s as f64 / 6.0 - 0.5).collect();
        let data = Dataset::new(1, 1, xs, alloc::vec![0.0; 6]).unwrap();
        let t = random_init(&cfg, &init_handle(4));
        let h = RngHandle::new(9, Stream::Index);
        let full = draw_index_mapping(&active_sets(&t, &data, 100.0).unwrap(), &h);
        let part = draw_index_mapping(&active_sets_for(&t, &data, 100.0, &[4, 1]).unwrap(), &h);
        assert_eq!(part.choice(0, 0), full.choice(4, 0));
        assert_eq!(part.choice(1, 0), full.choice(1, 0));
    }
}
