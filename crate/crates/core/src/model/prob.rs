//! Probability-vector primitives: softmax, centering, KL and TV.

use rand::Rng;

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

/// Numerically stable softmax (max-subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Log-softmax, stable.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log_softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - lse).collect())
}

/// Subtracts the mean. Non-finite entries (log 0) are rejected.
pub fn mean_center(log_probs: &[f64]) -> Result<Vec<f64>> {
    if let Some(token) = log_probs.iter().position(|x| !x.is_finite()) {
        return Err(Error::ZeroProbability { token });
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok(log_probs.iter().map(|x| x - mean).collect())
}

/// Probabilities to mean-centered logits with the [`PROB_FLOOR`] clamp.
pub fn probs_to_centered_logits(p: &[f64]) -> Result<Vec<f64>> {
    let logs: Vec<f64> = p.iter().map(|&x| x.max(PROB_FLOOR).ln()).collect();
    mean_center(&logs)
}

/// `KL(p || q)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "kl_divergence: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::NotAbsolutelyContinuous { index: i });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// `KL(softmax(a) || softmax(b))` computed in log space.
pub fn kl_of_logits(a: &[f64], b: &[f64]) -> Result<f64> {
    let la = log_softmax(a)?;
    let lb = log_softmax(b)?;
    let mut acc = 0.0;
    for (x, y) in la.iter().zip(&lb) {
        acc += x.exp() * (x - y);
    }
    Ok(acc.max(0.0))
}

/// Draws an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        cum += pi;
        if u < cum {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Half the L1 distance between two probability vectors.
pub fn tv_of_vectors(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
