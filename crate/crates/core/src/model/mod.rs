//! Sequences, logit oracles, exact enumeration and sampling.

mod io;
mod isan;
pub mod prob;

use std::fmt;
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};

pub(crate) use io::sha256_hex;
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use isan::{Isan, TimeVaryingIsan};
pub use prob::{kl_divergence, mean_center, softmax, PROB_FLOOR};

pub type Token = u32;

/// Token alphabet `{0, .., size-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alphabet(usize);

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "alphabet size must be at least 2, got {size}"
            )));
        }
        Ok(Alphabet(size))
    }

    pub fn size(self) -> usize {
        self.0
    }

    pub fn tokens(self) -> impl Iterator<Item = Token> {
        0..self.0 as Token
    }

    pub fn check(self, seq: &[Token]) -> Result<()> {
        match seq.iter().find(|&&z| z as usize >= self.0) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                size: self.0,
            }),
            None => Ok(()),
        }
    }
}

/// A token sequence. The empty sequence is `Null`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<Token>);

impl Sequence {
    pub fn null() -> Self {
        Sequence(Vec::new())
    }

    pub fn is_null(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &[Token]) -> Sequence {
        let mut v = Vec::with_capacity(self.0.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(other);
        Sequence(v)
    }

    pub fn push(&self, z: Token) -> Sequence {
        self.concat(&[z])
    }

    pub fn starts_with(&self, prefix: &[Token]) -> bool {
        self.0.starts_with(prefix)
    }
}

impl Deref for Sequence {
    type Target = [Token];
    fn deref(&self) -> &[Token] {
        &self.0
    }
}

impl From<Vec<Token>> for Sequence {
    fn from(v: Vec<Token>) -> Self {
        Sequence(v)
    }
}

impl From<&[Token]> for Sequence {
    fn from(v: &[Token]) -> Self {
        Sequence(v.to_vec())
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "Null");
        }
        let parts: Vec<String> = self.0.iter().map(|z| z.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Next-token logits, mean-centered over the full alphabet unless stated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector {
    pub values: Vec<f64>,
    pub centered: bool,
}

impl LogitVector {
    pub fn centered(values: Vec<f64>) -> Self {
        LogitVector {
            values,
            centered: true,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        prob::softmax_unchecked(&self.values)
    }
}

/// Query access to the mean-centered next-token logits at any prefix.
///
/// Implementations must be deterministic.
pub trait LogitOracle: Sync {
    fn alphabet(&self) -> Alphabet;

    /// Length of the sequences the model generates; valid prefixes have
    /// length `< horizon()`.
    fn horizon(&self) -> usize;

    fn logits(&self, prefix: &[Token]) -> Result<LogitVector>;

    fn check_prefix(&self, prefix: &[Token]) -> Result<()> {
        if prefix.len() >= self.horizon() {
            return Err(Error::HorizonOverflow {
                len: prefix.len(),
                horizon: self.horizon(),
            });
        }
        self.alphabet().check(prefix)
    }
}

impl<O: LogitOracle + ?Sized> LogitOracle for &O {
    fn alphabet(&self) -> Alphabet {
        (**self).alphabet()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        (**self).logits(prefix)
    }
}

/// Wraps an oracle and counts every query that reaches it.
pub struct CountingOracle<O> {
    inner: O,
    count: AtomicU64,
}

impl<O: LogitOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: LogitOracle> LogitOracle for CountingOracle<O> {
    fn alphabet(&self) -> Alphabet {
        self.inner.alphabet()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.logits(prefix)
    }
}

/// Samples a length-`t` prefix token by token from an explicit stream.
pub fn prefix_sample_with<O: LogitOracle + ?Sized>(
    oracle: &O,
    t: usize,
    rng: &mut StreamRng,
) -> Result<Sequence> {
    continue_sample_with(oracle, &[], t, rng)
}

/// Samples `len` tokens continuing `prefix`.
pub fn continue_sample_with<O: LogitOracle + ?Sized>(
    oracle: &O,
    prefix: &[Token],
    len: usize,
    rng: &mut StreamRng,
) -> Result<Sequence> {
    if prefix.len() + len > oracle.horizon() {
        return Err(Error::HorizonOverflow {
            len: prefix.len() + len,
            horizon: oracle.horizon(),
        });
    }
    let mut seq = Sequence::from(prefix);
    for _ in 0..len {
        let p = oracle.logits(&seq)?.probabilities();
        let z = prob::sample_index(&p, rng) as Token;
        seq.0.push(z);
    }
    Ok(seq)
}

/// A sample from the length-`t` prefix distribution `M[:t]`.
pub fn prefix_sample<O: LogitOracle + ?Sized>(oracle: &O, t: usize, seed: u64) -> Result<Sequence> {
    let mut rng = substream(seed, "prefix_sample", t as u64);
    prefix_sample_with(oracle, t, &mut rng)
}

/// Exact distribution over fixed-length sequences, indexed lexicographically
/// (first token most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    alphabet: Alphabet,
    length: usize,
    probs: Vec<f64>,
}

/// `|Σ|^len`, or `None` on overflow.
pub fn universe_size(alphabet: Alphabet, len: usize) -> Option<u128> {
    (alphabet.size() as u128).checked_pow(len as u32)
}

pub(crate) fn check_budget(alphabet: Alphabet, len: usize, budget: u128) -> Result<usize> {
    match universe_size(alphabet, len) {
        Some(n) if n <= budget => Ok(n as usize),
        Some(n) => Err(Error::EnumerationInfeasible { needed: n, budget }),
        None => Err(Error::EnumerationInfeasible {
            needed: u128::MAX,
            budget,
        }),
    }
}

impl ExactDistribution {
    pub fn from_probs(alphabet: Alphabet, length: usize, probs: Vec<f64>) -> Result<Self> {
        let n = check_budget(alphabet, length, u128::MAX)?;
        if probs.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} probabilities, got {}",
                probs.len()
            )));
        }
        Ok(ExactDistribution {
            alphabet,
            length,
            probs,
        })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index_of(&self, seq: &[Token]) -> usize {
        seq.iter()
            .fold(0usize, |acc, &z| acc * self.alphabet.size() + z as usize)
    }

    pub fn sequence_at(&self, mut index: usize) -> Sequence {
        let k = self.alphabet.size();
        let mut v = vec![0; self.length];
        for slot in v.iter_mut().rev() {
            *slot = (index % k) as Token;
            index /= k;
        }
        Sequence(v)
    }

    pub fn prob(&self, seq: &[Token]) -> f64 {
        if seq.len() != self.length {
            return 0.0;
        }
        self.probs[self.index_of(seq)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Sequence, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.sequence_at(i), p))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Total variation distance between two exact distributions.
pub fn tv_distance(p: &ExactDistribution, q: &ExactDistribution) -> Result<f64> {
    if p.alphabet != q.alphabet || p.length != q.length {
        return Err(Error::UniverseMismatch);
    }
    Ok(prob::tv_of_vectors(&p.probs, &q.probs).clamp(0.0, 1.0))
}

/// Exact distribution of `len`-token continuations of `prefix`, for any oracle.
pub fn exact_continuations<O: LogitOracle + ?Sized>(
    oracle: &O,
    prefix: &[Token],
    len: usize,
    budget: u128,
) -> Result<ExactDistribution> {
    let n = check_budget(oracle.alphabet(), len, budget)?;
    if prefix.len() + len > oracle.horizon() {
        return Err(Error::HorizonOverflow {
            len: prefix.len() + len,
            horizon: oracle.horizon(),
        });
    }
    let mut probs = vec![0.0; n];
    let mut seq = prefix.to_vec();
    fn rec<O: LogitOracle + ?Sized>(
        oracle: &O,
        seq: &mut Vec<Token>,
        remaining: usize,
        index: usize,
        mass: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if remaining == 0 {
            out[index] = mass;
            return Ok(());
        }
        let p = oracle.logits(seq)?.probabilities();
        let k = p.len();
        for (z, pz) in p.into_iter().enumerate() {
            seq.push(z as Token);
            rec(oracle, seq, remaining - 1, index * k + z, mass * pz, out)?;
            seq.pop();
        }
        Ok(())
    }
    rec(oracle, &mut seq, len, 0, 1.0, &mut probs)?;
    ExactDistribution::from_probs(oracle.alphabet(), len, probs)
}

/// Every sequence of exactly `len` tokens, lexicographic.
pub fn all_sequences(alphabet: Alphabet, len: usize, budget: u128) -> Result<Vec<Sequence>> {
    let n = check_budget(alphabet, len, budget)?;
    let k = alphabet.size();
    Ok((0..n)
        .map(|mut idx| {
            let mut v = vec![0; len];
            for slot in v.iter_mut().rev() {
                *slot = (idx % k) as Token;
                idx /= k;
            }
            Sequence(v)
        })
        .collect())
}
