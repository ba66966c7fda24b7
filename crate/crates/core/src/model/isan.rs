use nalgebra::{DMatrix, DVector};

use super::{
    check_budget, continue_sample_with, prob, Alphabet, ExactDistribution, LogitOracle,
    LogitVector, Sequence, Token,
};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Time-varying input-switched affine network.
///
/// Token `z_t` is drawn from `softmax(B_t x_{t-1})`, then the state moves to
/// `x_t = A_{z_t,t} x_{t-1}`. Steps are 1-based in the accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingIsan {
    alphabet: Alphabet,
    x0: DVector<f64>,
    /// `transitions[t-1][z]` for `t = 1..T-1`, plus an optional unused step `T`.
    transitions: Vec<Vec<DMatrix<f64>>>,
    /// `emissions[t-1]` for `t = 1..T`.
    emissions: Vec<DMatrix<f64>>,
}

impl TimeVaryingIsan {
    /// `transitions` must hold `T-1` or `T` steps; a step-`T` entry is kept but
    /// never applied.
    pub fn new(
        alphabet: Alphabet,
        x0: DVector<f64>,
        transitions: Vec<Vec<DMatrix<f64>>>,
        emissions: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = x0.len();
        let horizon = emissions.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "hidden dimension must be positive".into(),
            ));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if transitions.len() + 1 != horizon && transitions.len() != horizon {
            return Err(Error::Dimension(format!(
                "{} transition steps for horizon {horizon}",
                transitions.len()
            )));
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        for (t, step) in transitions.iter().enumerate() {
            if step.len() != alphabet.size() {
                return Err(Error::Dimension(format!(
                    "step {} has {} transition matrices, alphabet has {}",
                    t + 1,
                    step.len(),
                    alphabet.size()
                )));
            }
            for a in step {
                if a.shape() != (d, d) {
                    return Err(Error::Dimension(format!(
                        "transition at step {} is {:?}, expected {d}x{d}",
                        t + 1,
                        a.shape()
                    )));
                }
                crate::linalg::ensure_finite(a, "transition matrix")?;
            }
        }
        for (t, b) in emissions.iter().enumerate() {
            if b.shape() != (alphabet.size(), d) {
                return Err(Error::Dimension(format!(
                    "emission at step {} is {:?}, expected {}x{d}",
                    t + 1,
                    b.shape(),
                    alphabet.size()
                )));
            }
            crate::linalg::ensure_finite(b, "emission matrix")?;
        }
        Ok(TimeVaryingIsan {
            alphabet,
            x0,
            transitions,
            emissions,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn horizon(&self) -> usize {
        self.emissions.len()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// `A_{z,t}` for `t` in `1..=T-1` (or `T` if stored).
    pub fn transition(&self, t: usize, z: Token) -> &DMatrix<f64> {
        &self.transitions[t - 1][z as usize]
    }

    pub fn emission(&self, t: usize) -> &DMatrix<f64> {
        &self.emissions[t - 1]
    }

    pub fn has_final_transition(&self) -> bool {
        self.transitions.len() == self.horizon()
    }

    pub(crate) fn transitions_raw(&self) -> &[Vec<DMatrix<f64>>] {
        &self.transitions
    }

    pub(crate) fn emissions_raw(&self) -> &[DMatrix<f64>] {
        &self.emissions
    }

    /// True when every applied transition and every emission is the same
    /// across steps.
    pub fn is_time_invariant(&self) -> bool {
        let used = &self.transitions[..self.horizon() - 1];
        used.windows(2).all(|w| w[0] == w[1]) && self.emissions.windows(2).all(|w| w[0] == w[1])
    }

    /// Hidden state after consuming `prefix`.
    pub fn state_after(&self, prefix: &[Token]) -> Result<DVector<f64>> {
        self.check_prefix(prefix)?;
        Ok(self.fold(prefix))
    }

    fn fold(&self, prefix: &[Token]) -> DVector<f64> {
        prefix
            .iter()
            .enumerate()
            .fold(self.x0.clone(), |x, (i, &z)| self.transition(i + 1, z) * x)
    }

    /// Uncentered emission `B_{|prefix|+1} x_{|prefix|}`.
    pub fn raw_logits(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        let x = self.state_after(prefix)?;
        Ok((self.emission(prefix.len() + 1) * x)
            .iter()
            .copied()
            .collect())
    }

    pub fn next_logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        let raw = self.raw_logits(prefix)?;
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model logits"));
        }
        Ok(LogitVector::centered(prob::mean_center(&raw)?))
    }

    /// A full-length sample.
    pub fn sample(&self, seed: u64) -> Sequence {
        let mut rng = substream(seed, "isan_sample", 0);
        continue_sample_with(self, &[], self.horizon(), &mut rng)
            .expect("a valid model samples within its own horizon")
    }

    /// Exact distribution over all `|Σ|^T` sequences.
    pub fn exact_distribution(&self, budget: u128) -> Result<ExactDistribution> {
        let n = check_budget(self.alphabet, self.horizon(), budget)?;
        let mut probs = vec![0.0; n];
        self.enumerate(0, &self.x0, 0, 1.0, &mut probs)?;
        ExactDistribution::from_probs(self.alphabet, self.horizon(), probs)
    }

    fn enumerate(
        &self,
        depth: usize,
        x: &DVector<f64>,
        index: usize,
        mass: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if depth == self.horizon() {
            out[index] = mass;
            return Ok(());
        }
        let raw: Vec<f64> = (self.emission(depth + 1) * x).iter().copied().collect();
        let p = prob::softmax(&raw)?;
        let k = self.alphabet.size();
        for (z, pz) in p.into_iter().enumerate() {
            let child = index * k + z;
            if depth + 1 == self.horizon() {
                out[child] = mass * pz;
            } else {
                let next = self.transition(depth + 1, z as Token) * x;
                self.enumerate(depth + 1, &next, child, mass * pz, out)?;
            }
        }
        Ok(())
    }
}

impl LogitOracle for TimeVaryingIsan {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }
    fn horizon(&self) -> usize {
        self.emissions.len()
    }
    fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        self.next_logits(prefix)
    }
}

/// Time-invariant ISAN run for a fixed number of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Isan {
    pub alphabet: Alphabet,
    pub x0: DVector<f64>,
    /// `transitions[z]`
    pub transitions: Vec<DMatrix<f64>>,
    pub emission: DMatrix<f64>,
    pub horizon: usize,
}

impl Isan {
    pub fn hidden_dim(&self) -> usize {
        self.x0.len()
    }
}

impl LogitOracle for Isan {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        self.check_prefix(prefix)?;
        let x = prefix
            .iter()
            .fold(self.x0.clone(), |x, &z| &self.transitions[z as usize] * x);
        let raw: Vec<f64> = (&self.emission * x).iter().copied().collect();
        Ok(LogitVector::centered(prob::mean_center(&raw)?))
    }
}
