//! LinGen: continue a target prompt using a fixed linear combination of the
//! logits of other histories, without querying the model at the target.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::logit_matrix::{ColumnSelector, LogitMatrix};
use crate::model::{prob, LogitOracle, Sequence, Token};
use crate::rng::{substream, StreamRng};

/// Relative singular-value cutoff for the unregularized fit.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinGenCoefficients {
    pub histories: Vec<Sequence>,
    pub v: Vec<f64>,
    pub target: Sequence,
    pub ridge_lambda: f64,
    /// RMS of `target - vᵀ L` over the fitted columns
    pub fit_residual: f64,
}

impl LinGenCoefficients {
    pub fn norm(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Minimizes `‖t − Lᵀ v‖² + λ‖v‖²`. With `λ = 0` returns the minimum-norm
/// least-squares solution.
pub fn fit_coefficients(
    basis: &LogitMatrix,
    target_row: &LogitMatrix,
    ridge_lambda: f64,
) -> Result<LinGenCoefficients> {
    if target_row.nrows() != 1 {
        return Err(Error::InvalidArgument(format!(
            "target matrix must have one row, has {}",
            target_row.nrows()
        )));
    }
    if basis.columns() != target_row.columns() || basis.futures() != target_row.futures() {
        return Err(Error::InvalidArgument(
            "basis and target have different column sets".into(),
        ));
    }
    if !(ridge_lambda >= 0.0) || !ridge_lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be a nonnegative number, got {ridge_lambda}"
        )));
    }
    let l = basis.values();
    let t = target_row.values().row(0).transpose();
    let v: DVector<f64> = if ridge_lambda == 0.0 {
        linalg::pinv(&l.transpose(), PINV_CUTOFF) * &t
    } else {
        let n = l.nrows();
        let g = l * l.transpose() + DMatrix::<f64>::identity(n, n) * ridge_lambda;
        let rhs = l * &t;
        g.cholesky()
            .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))?
            .solve(&rhs)
    };
    let resid = &t - l.transpose() * &v;
    let fit_residual = if t.is_empty() {
        0.0
    } else {
        (resid.norm_squared() / t.len() as f64).sqrt()
    };
    Ok(LinGenCoefficients {
        histories: basis.histories().to_vec(),
        v: v.iter().copied().collect(),
        target: target_row.histories()[0].clone(),
        ridge_lambda,
        fit_residual,
    })
}

/// Builds `L(H, F)` and `L({h_targ}, F)` from `oracle` and fits.
pub fn fit_from_oracle<O: LogitOracle + ?Sized>(
    oracle: &O,
    histories: &[Sequence],
    futures: &[Sequence],
    target: &Sequence,
    ridge_lambda: f64,
) -> Result<LinGenCoefficients> {
    let basis = LogitMatrix::build(oracle, histories, futures, ColumnSelector::All)?;
    let row = LogitMatrix::build(
        oracle,
        std::slice::from_ref(target),
        futures,
        ColumnSelector::All,
    )?;
    fit_coefficients(&basis, &row, ridge_lambda)
}

/// Fit using next-token logits only (`F = {Null}`).
pub fn single_token_baseline<O: LogitOracle + ?Sized>(
    oracle: &O,
    histories: &[Sequence],
    target: &Sequence,
) -> Result<LinGenCoefficients> {
    fit_from_oracle(oracle, histories, &[Sequence::null()], target, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<Token>,
    /// logits used at each step, full alphabet
    pub logits: Vec<Vec<f64>>,
}

pub(crate) fn combined_logits<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    continuation: &[Token],
) -> Result<Vec<f64>> {
    let k = oracle.alphabet().size();
    let terms: Vec<Vec<f64>> = coeffs
        .histories
        .par_iter()
        .zip(&coeffs.v)
        .filter(|(_, &w)| w != 0.0)
        .map(|(h, &w)| {
            oracle
                .logits(&h.concat(continuation))
                .map(|l| l.values.into_iter().map(|x| w * x).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; k];
    for t in &terms {
        for (o, x) in out.iter_mut().zip(t) {
            *o += x;
        }
    }
    Ok(out)
}

fn check_lengths<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    m: usize,
) -> Result<()> {
    if coeffs.histories.len() != coeffs.v.len() {
        return Err(Error::Dimension(format!(
            "{} histories but {} coefficients",
            coeffs.histories.len(),
            coeffs.v.len()
        )));
    }
    let longest = coeffs
        .histories
        .iter()
        .zip(&coeffs.v)
        .filter(|(_, &w)| w != 0.0)
        .map(|(h, _)| h.len())
        .max()
        .unwrap_or(0);
    if m > 0 && longest + m - 1 >= oracle.horizon() {
        return Err(Error::HorizonOverflow {
            len: longest + m - 1,
            horizon: oracle.horizon(),
        });
    }
    Ok(())
}

/// Samples `m` tokens; step `i` uses `Σ_h v_h L[· | h ∘ z_{1:i-1}]`.
/// Histories with a zero coefficient are never queried.
pub fn generate_with<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    m: usize,
    rng: &mut StreamRng,
) -> Result<Generation> {
    check_lengths(oracle, coeffs, m)?;
    let mut tokens = Vec::with_capacity(m);
    let mut logits = Vec::with_capacity(m);
    for _ in 0..m {
        let l = combined_logits(oracle, coeffs, &tokens)?;
        let p = prob::softmax(&l)?;
        tokens.push(prob::sample_index(&p, rng) as Token);
        logits.push(l);
    }
    Ok(Generation { tokens, logits })
}

pub fn generate<O: LogitOracle + ?Sized>(
    oracle: &O,
    coeffs: &LinGenCoefficients,
    m: usize,
    seed: u64,
) -> Result<Generation> {
    generate_with(
        oracle,
        coeffs,
        m,
        &mut substream(seed, "lingen_generate", 0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    /// mean over generations of `KL(lingen ‖ true)` at each position
    pub forward: Vec<f64>,
    /// mean over generations of `KL(true ‖ lingen)` at each position
    pub reverse: Vec<f64>,
    pub total_forward: f64,
    pub total_reverse: f64,
    pub generations: Vec<Vec<Token>>,
}

/// Generates `n_generations` continuations with `lingen_oracle` and compares
/// every step to `true_oracle` at `h_targ ∘ z_{1:t-1}`.
pub fn eval_per_token_kl<O: LogitOracle + ?Sized, P: LogitOracle + ?Sized>(
    true_oracle: &P,
    lingen_oracle: &O,
    coeffs: &LinGenCoefficients,
    m: usize,
    n_generations: usize,
    seed: u64,
) -> Result<KlReport> {
    if n_generations == 0 {
        return Err(Error::InvalidArgument(
            "need at least one generation".into(),
        ));
    }
    let runs: Vec<(Vec<Token>, Vec<f64>, Vec<f64>)> = (0..n_generations)
        .into_par_iter()
        .map(|g| {
            let mut rng = substream(seed, "lingen_eval", g as u64);
            let gen = generate_with(lingen_oracle, coeffs, m, &mut rng)?;
            let mut fwd = Vec::with_capacity(m);
            let mut rev = Vec::with_capacity(m);
            for (i, l) in gen.logits.iter().enumerate() {
                let truth = true_oracle.logits(&coeffs.target.concat(&gen.tokens[..i]))?;
                fwd.push(prob::kl_of_logits(l, &truth.values)?);
                rev.push(prob::kl_of_logits(&truth.values, l)?);
            }
            Ok((gen.tokens, fwd, rev))
        })
        .collect::<Result<_>>()?;
    let n = n_generations as f64;
    let mut forward = vec![0.0; m];
    let mut reverse = vec![0.0; m];
    for (_, f, r) in &runs {
        for i in 0..m {
            forward[i] += f[i] / n;
            reverse[i] += r[i] / n;
        }
    }
    Ok(KlReport {
        total_forward: forward.iter().sum(),
        total_reverse: reverse.iter().sum(),
        forward,
        reverse,
        generations: runs.into_iter().map(|r| r.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::random_isan;
    use crate::logit_matrix::full_future_closure;
    use crate::model::{all_sequences, Alphabet, LogitVector};
    use std::sync::Mutex;

    struct Recording<'a, O> {
        inner: &'a O,
        seen: Mutex<Vec<Sequence>>,
    }

    impl<O: LogitOracle> LogitOracle for Recording<'_, O> {
        fn alphabet(&self) -> Alphabet {
            self.inner.alphabet()
        }
        fn horizon(&self) -> usize {
            self.inner.horizon()
        }
        fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
            self.seen.lock().unwrap().push(Sequence::from(prefix));
            self.inner.logits(prefix)
        }
    }

    fn setup() -> (crate::model::TimeVaryingIsan, Vec<Sequence>, Sequence) {
        let a = Alphabet::new(3).unwrap();
        let m = random_isan(2, a, 10, 21, 1.0).unwrap();
        let target = Sequence::from(vec![2, 1]);
        let h: Vec<Sequence> = all_sequences(a, 2, 100)
            .unwrap()
            .into_iter()
            .filter(|s| *s != target)
            .collect();
        (m, h, target)
    }

    #[test]
    fn target_in_basis_fits_exactly() {
        let (m, mut h, target) = setup();
        h.push(target.clone());
        let f = full_future_closure(m.alphabet(), 1, 100).unwrap();
        let c = fit_from_oracle(&m, &h, &f, &target, 0.0).unwrap();
        assert!(c.fit_residual < 1e-9);
    }

    #[test]
    fn exact_rank_fit_and_generation() {
        let (m, h, target) = setup();
        let f = full_future_closure(m.alphabet(), 2, 100).unwrap();
        let c = fit_from_oracle(&m, &h, &f, &target, 0.0).unwrap();
        assert!(c.fit_residual <= 1e-8);
        let rep = eval_per_token_kl(&m, &m, &c, 8, 4, 1).unwrap();
        assert!(rep.forward.iter().all(|&k| k <= 1e-6));
        assert!(rep.total_forward <= 1e-5);
        assert!(rep.total_reverse <= 1e-5);
    }

    #[test]
    fn ridge_limit_goes_to_zero() {
        let (m, h, target) = setup();
        let f = full_future_closure(m.alphabet(), 1, 100).unwrap();
        let c = fit_from_oracle(&m, &h, &f, &target, 1e12).unwrap();
        assert!(c.norm() < 1e-9);
    }

    #[test]
    fn one_hot_at_target_matches_truth() {
        let (m, _, target) = setup();
        let c = LinGenCoefficients {
            histories: vec![target.clone()],
            v: vec![1.0],
            target,
            ridge_lambda: 0.0,
            fit_residual: 0.0,
        };
        let rep = eval_per_token_kl(&m, &m, &c, 5, 3, 2).unwrap();
        assert!(rep.total_forward <= 1e-12 && rep.total_reverse <= 1e-12);
    }

    #[test]
    fn zero_coefficients_give_uniform_tokens() {
        let (m, h, target) = setup();
        let c = LinGenCoefficients {
            v: vec![0.0; h.len()],
            histories: h,
            target,
            ridge_lambda: 0.0,
            fit_residual: 0.0,
        };
        let g = generate(&m, &c, 4, 3).unwrap();
        assert!(g.logits.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn generation_never_touches_target() {
        let (m, h, target) = setup();
        let f = full_future_closure(m.alphabet(), 2, 100).unwrap();
        let c = fit_from_oracle(&m, &h, &f, &target, 0.0).unwrap();
        let rec = Recording {
            inner: &m,
            seen: Mutex::new(Vec::new()),
        };
        generate(&rec, &c, 8, 9).unwrap();
        let seen = rec.seen.into_inner().unwrap();
        assert!(!seen.is_empty());
        assert!(seen.iter().all(|p| !p.starts_with(&target)));
    }

    #[test]
    fn single_token_baseline_fits_first_step() {
        let (m, h, target) = setup();
        let c = single_token_baseline(&m, &h, &target).unwrap();
        let rep = eval_per_token_kl(&m, &m, &c, 3, 2, 4).unwrap();
        assert!(
            rep.forward[0] < 1e-10,
            "{:?} {}",
            rep.forward,
            c.fit_residual
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let (m, h, target) = setup();
        let f = full_future_closure(m.alphabet(), 1, 100).unwrap();
        let c = fit_from_oracle(&m, &h, &f, &target, 0.0).unwrap();
        assert_eq!(
            generate(&m, &c, 6, 5).unwrap(),
            generate(&m, &c, 6, 5).unwrap()
        );
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let (m, h, target) = setup();
        let f1 = full_future_closure(m.alphabet(), 1, 100).unwrap();
        let f0 = full_future_closure(m.alphabet(), 0, 100).unwrap();
        let b = LogitMatrix::build(&m, &h, &f1, ColumnSelector::All).unwrap();
        let t = LogitMatrix::build(&m, &[target], &f0, ColumnSelector::All).unwrap();
        assert!(fit_coefficients(&b, &t, 0.0).is_err());
    }
}
