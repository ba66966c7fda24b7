//! Generalization bounds for linear generation: coverage of one future
//! distribution by another, regression error, and the resulting KL bounds.
//!
//! Two future laws over `Σ^{<k}` are used throughout: the *uniform* law
//! (length uniform in `0..k`, then tokens uniform) and the *continuation*
//! law (length uniform, then the model's own continuation of the target).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lingen::{combined_logits, LinGenCoefficients};
use crate::model::{
    all_sequences, continue_sample_with, exact_continuations, prob, LogitOracle, Sequence, Token,
};
use crate::rng::substream;

/// Slack used when comparing measured KL to a bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutureLaw {
    Uniform,
    Continuation,
}

/// Futures with weights summing to one; duplicates allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedFutures {
    pub futures: Vec<Sequence>,
    pub weights: Vec<f64>,
}

impl WeightedFutures {
    pub fn len(&self) -> usize {
        self.futures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.futures.is_empty()
    }

    /// The first `n` entries, reweighted uniformly.
    pub fn head(&self, n: usize) -> WeightedFutures {
        let n = n.min(self.len());
        WeightedFutures {
            futures: self.futures[..n].to_vec(),
            weights: vec![1.0 / n as f64; n],
        }
    }
}

fn check_k<O: LogitOracle + ?Sized>(oracle: &O, h0: &[Token], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "generation length k must be positive".into(),
        ));
    }
    if h0.len() + k > oracle.horizon() {
        return Err(Error::HorizonOverflow {
            len: h0.len() + k,
            horizon: oracle.horizon(),
        });
    }
    Ok(())
}

/// The law enumerated exactly.
pub fn exact_law<O: LogitOracle + ?Sized>(
    oracle: &O,
    law: FutureLaw,
    h0: &[Token],
    k: usize,
    budget: u128,
) -> Result<WeightedFutures> {
    check_k(oracle, h0, k)?;
    let alphabet = oracle.alphabet();
    let mut futures = Vec::new();
    let mut weights = Vec::new();
    for t in 0..k {
        match law {
            FutureLaw::Uniform => {
                let all = all_sequences(alphabet, t, budget)?;
                let w = 1.0 / (k as f64 * all.len() as f64);
                weights.extend(std::iter::repeat_n(w, all.len()));
                futures.extend(all);
            }
            FutureLaw::Continuation => {
                let dist = exact_continuations(oracle, h0, t, budget)?;
                for (s, p) in dist.iter() {
                    if p > 0.0 {
                        futures.push(s);
                        weights.push(p / k as f64);
                    }
                }
            }
        }
    }
    Ok(WeightedFutures { futures, weights })
}

/// `n` draws from the law; draw `i` uses its own substream, so the first `m`
/// draws do not depend on `n`.
pub fn sampled_law<O: LogitOracle + ?Sized>(
    oracle: &O,
    law: FutureLaw,
    h0: &[Token],
    k: usize,
    n: usize,
    seed: u64,
) -> Result<WeightedFutures> {
    check_k(oracle, h0, k)?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let tag = match law {
        FutureLaw::Uniform => "bounds_uniform_law",
        FutureLaw::Continuation => "bounds_continuation_law",
    };
    let size = oracle.alphabet().size();
    let futures = (0..n)
        .map(|i| {
            let mut rng = substream(seed, tag, i as u64);
            let t = rng.random_range(0..k);
            match law {
                FutureLaw::Uniform => Ok(Sequence(
                    (0..t).map(|_| rng.random_range(0..size) as Token).collect(),
                )),
                FutureLaw::Continuation => {
                    let s = continue_sample_with(oracle, h0, t, &mut rng)?;
                    Ok(Sequence(s.0[h0.len()..].to_vec()))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedFutures {
        futures,
        weights: vec![1.0 / n as f64; n],
    })
}

/// `L(rows, {f})`, one row per history, one column per token.
fn block<O: LogitOracle + ?Sized>(
    oracle: &O,
    rows: &[Sequence],
    f: &[Token],
) -> Result<DMatrix<f64>> {
    let k = oracle.alphabet().size();
    let mut m = DMatrix::zeros(rows.len(), k);
    for (i, h) in rows.iter().enumerate() {
        let l = oracle.logits(&h.concat(f))?;
        for z in 0..k {
            m[(i, z)] = l.values[z];
        }
    }
    Ok(m)
}

fn pairwise_sum(terms: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    match terms.len() {
        0 => DMatrix::zeros(n, n),
        1 => terms[0].clone(),
        len => {
            let (a, b) = terms.split_at(len / 2);
            let (sa, sb) = rayon::join(|| pairwise_sum(a, n), || pairwise_sum(b, n));
            sa + sb
        }
    }
}

/// `Σ_f w_f L(rows, {f}) L(rows, {f})ᵀ`, summed pairwise.
pub fn second_moment<O: LogitOracle + ?Sized>(
    oracle: &O,
    rows: &[Sequence],
    law: &WeightedFutures,
) -> Result<DMatrix<f64>> {
    use rayon::prelude::*;
    let terms: Vec<DMatrix<f64>> = law
        .futures
        .par_iter()
        .zip(&law.weights)
        .map(|(f, &w)| {
            let b = block(oracle, rows, f)?;
            Ok(&b * b.transpose() * w)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&terms, rows.len()))
}

/// Smallest `α ≥ 0` with `m2 ⪯ α m1 + γ I`.
pub fn coverage_alpha(m1: &DMatrix<f64>, m2: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let n = m1.nrows();
    let w = linalg::sym_inv_sqrt(&(m1 + DMatrix::identity(n, n) * gamma))?;
    let s = &w * m2 * &w;
    let s = (&s + s.transpose()) * 0.5;
    let top = s.symmetric_eigen().eigenvalues.max();
    Ok(top.max(0.0))
}

/// Coverage parameter `α` for rows `H_0 = {h_targ} ∪ H`.
pub fn coverage_params<O: LogitOracle + ?Sized>(
    oracle: &O,
    h0_rows: &[Sequence],
    p1: &WeightedFutures,
    p2: &WeightedFutures,
    gamma: f64,
) -> Result<f64> {
    let m1 = second_moment(oracle, h0_rows, p1)?;
    let m2 = second_moment(oracle, h0_rows, p2)?;
    coverage_alpha(&m1, &m2, gamma)
}

/// Weighted mean of `‖L(h_targ, f) − vᵀ L(H, f)‖²`.
pub fn regression_error<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    law: &WeightedFutures,
) -> Result<f64> {
    use rayon::prelude::*;
    let terms: Vec<f64> = law
        .futures
        .par_iter()
        .zip(&law.weights)
        .map(|(f, &w)| {
            let truth = oracle.logits(&coeffs.target.concat(f))?;
            let lin = combined_logits(oracle, coeffs, f)?;
            let sq: f64 = truth
                .values
                .iter()
                .zip(&lin)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            Ok(w * sq)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_scalar(&terms))
}

fn pairwise_scalar(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        n => pairwise_scalar(&x[..n / 2]) + pairwise_scalar(&x[n / 2..]),
    }
}

/// `2k √(αΔ + γ(1 + ‖v‖²))`.
pub fn kl_bound(alpha: f64, delta: f64, gamma: f64, v_norm: f64, k: usize) -> f64 {
    2.0 * k as f64
        * (alpha * delta + gamma * (1.0 + v_norm * v_norm))
            .max(0.0)
            .sqrt()
}

/// `D(Q‖P) ≤ (1 + C′) √(2 D(P‖Q))` when every `−log p_i ≤ C′`.
pub fn flip_kl(c_prime: f64, kl_pq: f64) -> f64 {
    (1.0 + c_prime) * (2.0 * kl_pq.max(0.0)).sqrt()
}

/// Bound on `D(lingen ‖ truth)` over `k` tokens given a bound on
/// `D(truth ‖ lingen)`, when all true logits satisfy `|L| ≤ C`.
pub fn flipped_bound(c: f64, k: usize, sigma_size: usize, forward_kl: f64) -> f64 {
    flip_kl(k as f64 * ((sigma_size as f64).ln() + 2.0 * c), forward_kl)
}

/// Largest absolute logit at the given prefixes.
pub fn max_abs_logit<O: LogitOracle + ?Sized>(oracle: &O, prefixes: &[Sequence]) -> Result<f64> {
    prefixes.iter().try_fold(0.0f64, |acc, p| {
        let l = oracle.logits(p)?;
        Ok(l.values.iter().fold(acc, |a, x| a.max(x.abs())))
    })
}

/// Fails on the first prefix whose logits exceed `c` in magnitude.
pub fn check_logit_bound<O: LogitOracle + ?Sized>(
    oracle: &O,
    prefixes: &[Sequence],
    c: f64,
) -> Result<()> {
    for p in prefixes {
        let l = oracle.logits(p)?;
        if let Some(&x) = l.values.iter().find(|x| x.abs() > c) {
            return Err(Error::LogitBound {
                bound: c,
                value: x.abs(),
                prefix: p.0.clone(),
            });
        }
    }
    Ok(())
}

/// `flipped_bound` after checking the logit bound on `prefixes`.
pub fn flipped_bound_checked<O: LogitOracle + ?Sized>(
    oracle: &O,
    prefixes: &[Sequence],
    c: f64,
    k: usize,
    forward_kl: f64,
) -> Result<f64> {
    check_logit_bound(oracle, prefixes, c)?;
    Ok(flipped_bound(c, k, oracle.alphabet().size(), forward_kl))
}

/// Sequence-level `D(truth ‖ lingen)` and `D(lingen ‖ truth)` over `k`
/// tokens, plus the largest true logit seen along the way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredKl {
    pub forward: f64,
    pub reverse: f64,
    pub max_abs_logit: f64,
    pub exact: bool,
}

/// Walks the whole continuation tree of depth `k`.
pub fn measured_kl_exact<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    k: usize,
    budget: u128,
) -> Result<MeasuredKl> {
    check_k(oracle, &coeffs.target, k)?;
    crate::model::check_budget(oracle.alphabet(), k, budget)?;
    struct Walk<'a, O: ?Sized> {
        oracle: &'a O,
        coeffs: &'a LinGenCoefficients,
        k: usize,
        forward: f64,
        reverse: f64,
        c: f64,
    }
    impl<O: LogitOracle + ?Sized> Walk<'_, O> {
        fn visit(&mut self, f: &mut Vec<Token>, p_truth: f64, p_lin: f64) -> Result<()> {
            if f.len() == self.k {
                return Ok(());
            }
            let truth = self.oracle.logits(&self.coeffs.target.concat(f))?.values;
            let lin = combined_logits(self.oracle, self.coeffs, f)?;
            self.c = truth.iter().fold(self.c, |a, x| a.max(x.abs()));
            self.forward += p_truth * prob::kl_of_logits(&truth, &lin)?;
            self.reverse += p_lin * prob::kl_of_logits(&lin, &truth)?;
            let pt = prob::softmax(&truth)?;
            let pl = prob::softmax(&lin)?;
            for z in 0..pt.len() {
                f.push(z as Token);
                self.visit(f, p_truth * pt[z], p_lin * pl[z])?;
                f.pop();
            }
            Ok(())
        }
    }
    let mut w = Walk {
        oracle,
        coeffs,
        k,
        forward: 0.0,
        reverse: 0.0,
        c: 0.0,
    };
    w.visit(&mut Vec::with_capacity(k), 1.0, 1.0)?;
    Ok(MeasuredKl {
        forward: w.forward,
        reverse: w.reverse,
        max_abs_logit: w.c,
        exact: true,
    })
}

/// Monte Carlo estimate: `n` continuations from the model for the forward
/// direction, `n` linear generations for the reverse one.
pub fn measured_kl_sampled<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<MeasuredKl> {
    check_k(oracle, &coeffs.target, k)?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut forward = Vec::with_capacity(n);
    let mut c = 0.0f64;
    for i in 0..n {
        let mut rng = substream(seed, "bounds_forward_kl", i as u64);
        let mut f = Vec::with_capacity(k);
        let mut total = 0.0;
        for _ in 0..k {
            let truth = oracle.logits(&coeffs.target.concat(&f))?.values;
            let lin = combined_logits(oracle, coeffs, &f)?;
            c = truth.iter().fold(c, |a, x| a.max(x.abs()));
            total += prob::kl_of_logits(&truth, &lin)?;
            f.push(prob::sample_index(&prob::softmax(&truth)?, &mut rng) as Token);
        }
        forward.push(total / n as f64);
    }
    let rev = crate::lingen::eval_per_token_kl(oracle, oracle, coeffs, k, n, seed)?;
    Ok(MeasuredKl {
        forward: pairwise_scalar(&forward),
        reverse: rev.total_forward,
        max_abs_logit: c,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentSource {
    Exact,
    Sampled { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub k: usize,
    pub gamma: f64,
    pub moments: MomentSource,
    /// sample count for measured KL when the tree is too large to walk
    pub kl_samples: usize,
    pub seed: u64,
    pub budget: u128,
}

impl BoundConfig {
    pub fn exact(k: usize, gamma: f64) -> Self {
        BoundConfig {
            k,
            gamma,
            moments: MomentSource::Exact,
            kl_samples: 10_000,
            seed: 0,
            budget: 1 << 20,
        }
    }
}

/// Moments shared by every bound of one report.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub delta: f64,
    pub v_norm: f64,
}

pub fn bound_inputs<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    config: &BoundConfig,
) -> Result<BoundInputs> {
    let h0 = &coeffs.target;
    let (p1, p2) = match config.moments {
        MomentSource::Exact => (
            exact_law(oracle, FutureLaw::Uniform, h0, config.k, config.budget)?,
            exact_law(oracle, FutureLaw::Continuation, h0, config.k, config.budget)?,
        ),
        MomentSource::Sampled { n } => (
            sampled_law(oracle, FutureLaw::Uniform, h0, config.k, n, config.seed)?,
            sampled_law(
                oracle,
                FutureLaw::Continuation,
                h0,
                config.k,
                n,
                config.seed,
            )?,
        ),
    };
    let mut rows = vec![h0.clone()];
    rows.extend(coeffs.histories.iter().cloned());
    Ok(BoundInputs {
        m1: second_moment(oracle, &rows, &p1)?,
        m2: second_moment(oracle, &rows, &p2)?,
        delta: regression_error(oracle, coeffs, &p1)?,
        v_norm: coeffs.norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub v_norm: f64,
    pub k: usize,
    pub kl_bound: f64,
    /// `D(truth ‖ lingen)`
    pub measured_kl_forward: f64,
    /// `D(lingen ‖ truth)`
    pub measured_kl_reverse: f64,
    pub measured_exactly: bool,
    /// largest true logit along the continuation tree
    pub c: f64,
    pub flipped_bound: f64,
    pub violated: bool,
    pub flipped_violated: bool,
}

/// Computes every bound quantity and compares it with the measured KL.
pub fn bound_vs_measured<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    config: &BoundConfig,
) -> Result<BoundReport> {
    let inputs = bound_inputs(oracle, coeffs, config)?;
    let alpha = coverage_alpha(&inputs.m1, &inputs.m2, config.gamma)?;
    let bound = kl_bound(alpha, inputs.delta, config.gamma, inputs.v_norm, config.k);
    let measured = match measured_kl_exact(oracle, coeffs, config.k, config.budget) {
        Err(Error::EnumerationInfeasible { .. }) => {
            measured_kl_sampled(oracle, coeffs, config.k, config.kl_samples, config.seed)?
        }
        r => r?,
    };
    let flipped = flipped_bound(
        measured.max_abs_logit,
        config.k,
        oracle.alphabet().size(),
        bound,
    );
    Ok(BoundReport {
        alpha,
        gamma: config.gamma,
        delta: inputs.delta,
        v_norm: inputs.v_norm,
        k: config.k,
        kl_bound: bound,
        measured_kl_forward: measured.forward,
        measured_kl_reverse: measured.reverse,
        measured_exactly: measured.exact,
        c: measured.max_abs_logit,
        flipped_bound: flipped,
        violated: measured.forward > bound + BOUND_SLACK,
        flipped_violated: measured.reverse > flipped + BOUND_SLACK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub alpha: f64,
    pub kl_bound: f64,
}

/// The bound at each `γ`, from one set of moments.
pub fn gamma_sweep(inputs: &BoundInputs, gammas: &[f64], k: usize) -> Result<Vec<GammaPoint>> {
    gammas
        .iter()
        .map(|&gamma| {
            let alpha = coverage_alpha(&inputs.m1, &inputs.m2, gamma)?;
            Ok(GammaPoint {
                gamma,
                alpha,
                kl_bound: kl_bound(alpha, inputs.delta, gamma, inputs.v_norm, k),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub samples: usize,
    pub reference_samples: usize,
    /// spectral norm of the difference of the two second moments
    pub deviation: f64,
    pub epsilon_target: f64,
    pub within_target: bool,
    /// largest `‖L(H, {f})‖_F` over the reference draws
    pub max_sample_norm: f64,
    /// `C √(n |Σ|)` with `C` the largest logit seen
    pub sample_norm_bound: f64,
}

/// Second moment from the first `s` draws against one from
/// `factor · s` draws of the same stream.
#[allow(clippy::too_many_arguments)]
pub fn moment_concentration_check<O: LogitOracle + ?Sized>(
    oracle: &O,
    rows: &[Sequence],
    law: FutureLaw,
    h0: &[Token],
    k: usize,
    s: usize,
    factor: usize,
    epsilon_target: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    if s == 0 || factor == 0 {
        return Err(Error::InvalidArgument(
            "sample size and factor must be positive".into(),
        ));
    }
    let reference = sampled_law(oracle, law, h0, k, s * factor, seed)?;
    let small = reference.head(s);
    let deviation = linalg::sym_spectral_norm(
        &(second_moment(oracle, rows, &small)? - second_moment(oracle, rows, &reference)?),
    );
    let mut max_norm = 0.0f64;
    let mut c = 0.0f64;
    for f in &reference.futures {
        let b = block(oracle, rows, f)?;
        max_norm = max_norm.max(b.norm());
        c = c.max(b.amax());
    }
    Ok(ConcentrationReport {
        samples: s,
        reference_samples: s * factor,
        deviation,
        epsilon_target,
        within_target: deviation <= epsilon_target,
        max_sample_norm: max_norm,
        sample_norm_bound: c * ((rows.len() * oracle.alphabet().size()) as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::random_isan;
    use crate::lingen::fit_from_oracle;
    use crate::logit_matrix::full_future_closure;
    use crate::model::{Alphabet, TimeVaryingIsan};
    use proptest::prelude::{prop_assert, proptest};

    fn instance(seed: u64) -> (TimeVaryingIsan, LinGenCoefficients) {
        let a = Alphabet::new(2).unwrap();
        let m = random_isan(2, a, 6, seed, 1.0).unwrap();
        let target = Sequence(vec![1, 1]);
        let hs: Vec<Sequence> = all_sequences(a, 2, 16)
            .unwrap()
            .into_iter()
            .filter(|h| *h != target)
            .collect();
        let fs = full_future_closure(a, 3, 1 << 10).unwrap();
        let c = fit_from_oracle(&m, &hs, &fs, &target, 0.0).unwrap();
        (m, c)
    }

    #[test]
    fn kl_bound_examples() {
        assert_eq!(kl_bound(3.0, 0.0, 0.0, 7.0, 4), 0.0);
        assert!((kl_bound(1.0, 0.01, 0.0, 123.0, 5) - 1.0).abs() < 1e-12);
        assert!(kl_bound(1.0, 0.1, 0.1, 1.0, 2) < kl_bound(1.0, 0.2, 0.1, 1.0, 2));
    }

    #[test]
    fn flipping_explicit_pair() {
        let p = [0.9, 0.1];
        let q = [0.5, 0.5];
        let c = -(0.1f64).ln();
        let d_qp = prob::kl_divergence(&q, &p).unwrap();
        let d_pq = prob::kl_divergence(&p, &q).unwrap();
        assert!(d_qp <= flip_kl(c, d_pq));
        assert_eq!(flipped_bound(2.0, 3, 4, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn flipping_holds_for_random_softmax_pairs(
            a in proptest::collection::vec(-4.0f64..4.0, 3),
            b in proptest::collection::vec(-4.0f64..4.0, 3),
        ) {
            let p = prob::softmax(&a).unwrap();
            let q = prob::softmax(&b).unwrap();
            let c = p.iter().map(|x| -x.ln()).fold(0.0, f64::max);
            let lhs = prob::kl_divergence(&q, &p).unwrap();
            let rhs = flip_kl(c, prob::kl_divergence(&p, &q).unwrap());
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn shared_law_gives_alpha_at_most_one() {
        let (m, c) = instance(1);
        let p1 = exact_law(&m, FutureLaw::Uniform, &c.target, 4, 1 << 10).unwrap();
        let mut rows = vec![c.target.clone()];
        rows.extend(c.histories.clone());
        let alpha = coverage_params(&m, &rows, &p1, &p1, 0.1).unwrap();
        assert!(alpha <= 1.0 + 1e-12 && alpha > 0.0);
        assert!(coverage_params(&m, &rows, &p1, &p1, 1e9).unwrap() < 1e-6);
        assert!(coverage_params(&m, &rows, &p1, &p1, 0.0).is_err());
    }

    #[test]
    fn alpha_satisfies_the_ordering() {
        let (m, c) = instance(2);
        let cfg = BoundConfig::exact(4, 0.05);
        let inputs = bound_inputs(&m, &c, &cfg).unwrap();
        let alpha = coverage_alpha(&inputs.m1, &inputs.m2, cfg.gamma).unwrap();
        let n = inputs.m1.nrows();
        let gap = &inputs.m1 * alpha + DMatrix::identity(n, n) * cfg.gamma - &inputs.m2;
        let low = gap.symmetric_eigen().eigenvalues.min();
        assert!(low >= -1e-9, "min eigenvalue {low}");
    }

    #[test]
    fn regression_error_examples() {
        let (m, c) = instance(3);
        let p1 = exact_law(&m, FutureLaw::Uniform, &c.target, 4, 1 << 10).unwrap();
        assert!(regression_error(&m, &c, &p1).unwrap() <= 1e-12);
        let zero = LinGenCoefficients {
            v: vec![0.0; c.v.len()],
            ..c.clone()
        };
        let direct: f64 = p1
            .futures
            .iter()
            .zip(&p1.weights)
            .map(|(f, w)| {
                let l = m.next_logits(&c.target.concat(f)).unwrap();
                w * l.values.iter().map(|x| x * x).sum::<f64>()
            })
            .sum();
        assert!((regression_error(&m, &zero, &p1).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn sampled_regression_error_tracks_exact() {
        let (m, mut c) = instance(4);
        c.v.iter_mut().for_each(|x| *x *= 0.8);
        let exact = regression_error(
            &m,
            &c,
            &exact_law(&m, FutureLaw::Uniform, &c.target, 4, 1 << 10).unwrap(),
        )
        .unwrap();
        let n = 10_000;
        let law = sampled_law(&m, FutureLaw::Uniform, &c.target, 4, n, 5).unwrap();
        let vals: Vec<f64> = law
            .futures
            .iter()
            .map(|f| {
                regression_error(
                    &m,
                    &c,
                    &WeightedFutures {
                        futures: vec![f.clone()],
                        weights: vec![1.0],
                    },
                )
                .unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * sd / (n as f64).sqrt() + 1e-12);
    }

    #[test]
    fn exact_instance_has_no_measured_kl() {
        let (m, c) = instance(5);
        let r = bound_vs_measured(&m, &c, &BoundConfig::exact(4, 0.01)).unwrap();
        assert!(r.measured_kl_forward < 1e-10);
        assert!(!r.violated && !r.flipped_violated);
    }

    #[test]
    fn perturbed_coefficients_stay_under_the_bound() {
        let (m, c) = instance(6);
        let mut prev = 0.0;
        for scale in [0.0, 0.1, 0.3] {
            let mut p = c.clone();
            let mut rng = substream(6, "test_perturb", 0);
            p.v.iter_mut()
                .for_each(|x| *x += scale * rng.random_range(-1.0..1.0));
            let r = bound_vs_measured(&m, &p, &BoundConfig::exact(4, 0.01)).unwrap();
            assert!(!r.violated, "{r:?}");
            assert!(r.delta >= prev);
            prev = r.delta;
        }
    }

    #[test]
    fn sampled_kl_agrees_with_exact() {
        let (m, mut c) = instance(7);
        c.v.iter_mut().for_each(|x| *x *= 0.7);
        let e = measured_kl_exact(&m, &c, 4, 1 << 10).unwrap();
        let s = measured_kl_sampled(&m, &c, 4, 4000, 1).unwrap();
        assert!((e.forward - s.forward).abs() < 0.1 * e.forward.max(1e-3));
        assert!((e.reverse - s.reverse).abs() < 0.1 * e.reverse.max(1e-3));
    }

    #[test]
    fn logit_bound_scan_names_the_prefix() {
        let (m, c) = instance(8);
        let prefixes = vec![c.target.clone()];
        let top = max_abs_logit(&m, &prefixes).unwrap();
        assert!(flipped_bound_checked(&m, &prefixes, top, 4, 0.1).is_ok());
        match flipped_bound_checked(&m, &prefixes, top / 2.0, 4, 0.1) {
            Err(Error::LogitBound { prefix, .. }) => assert_eq!(prefix, c.target.0),
            other => panic!("expected a logit-bound error, got {other:?}"),
        }
    }

    #[test]
    fn concentration_shared_samples_and_norms() {
        let (m, c) = instance(9);
        let mut rows = vec![c.target.clone()];
        rows.extend(c.histories.clone());
        let r = moment_concentration_check(
            &m,
            &rows,
            FutureLaw::Uniform,
            &c.target,
            4,
            50,
            1,
            1e-12,
            0,
        )
        .unwrap();
        assert_eq!(r.deviation, 0.0);
        let r =
            moment_concentration_check(&m, &rows, FutureLaw::Uniform, &c.target, 4, 50, 20, 1.0, 0)
                .unwrap();
        assert!(r.max_sample_norm <= r.sample_norm_bound + 1e-12);
    }

    #[test]
    fn gamma_sweep_trades_alpha_for_gamma() {
        let (m, mut c) = instance(10);
        c.v.iter_mut().for_each(|x| *x *= 0.9);
        let inputs = bound_inputs(&m, &c, &BoundConfig::exact(4, 0.1)).unwrap();
        let pts = gamma_sweep(&inputs, &[1e-3, 1e-2, 1e-1, 1.0], 4).unwrap();
        assert!(pts.windows(2).all(|w| w[1].alpha <= w[0].alpha + 1e-12));
    }
}
