//! Extended logit matrices: rows are histories, columns are `(future, token)`
//! pairs, entries are mean-centered next-token logits at `h ∘ f`.

mod elm;

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_budget, Alphabet, LogitOracle, LogitVector, Sequence, Token};
use crate::rng::substream;

pub use elm::{load, read, save, write, ELM_MAGIC, ELM_VERSION};

/// Which tokens of each future become columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSelector {
    All,
    /// The `k` tokens most likely after the future alone; ties go to the
    /// smaller token id.
    TopK {
        k: usize,
    },
    /// `k` tokens per future drawn without replacement.
    RandomK {
        k: usize,
        seed: u64,
    },
}

impl ColumnSelector {
    fn validate(&self, alphabet: Alphabet) -> Result<()> {
        match *self {
            ColumnSelector::All => Ok(()),
            ColumnSelector::TopK { k } | ColumnSelector::RandomK { k, .. } => {
                if k == 0 || k > alphabet.size() {
                    Err(Error::InvalidArgument(format!(
                        "selector k = {k} outside 1..={}",
                        alphabet.size()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    alphabet: Alphabet,
    histories: Vec<Sequence>,
    futures: Vec<Sequence>,
    /// `(future index, token)`, contiguous per future, tokens ascending
    columns: Vec<(usize, Token)>,
    values: DMatrix<f64>,
    selector: ColumnSelector,
    model_id: String,
    extra: serde_json::Value,
}

fn has_duplicates(seqs: &[Sequence]) -> bool {
    let mut seen = HashSet::with_capacity(seqs.len());
    !seqs.iter().all(|s| seen.insert(s))
}

fn pick_columns(
    selector: ColumnSelector,
    alphabet: Alphabet,
    f_idx: usize,
    future_logits: Option<&LogitVector>,
) -> Vec<Token> {
    let mut tokens: Vec<Token> = match selector {
        ColumnSelector::All => alphabet.tokens().collect(),
        ColumnSelector::TopK { k } => {
            let l = future_logits.expect("top-k needs the future's own logits");
            let mut order: Vec<Token> = alphabet.tokens().collect();
            // logits are monotone in probability, so rank on them directly
            order.sort_by(|&a, &b| {
                l.values[b as usize]
                    .total_cmp(&l.values[a as usize])
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            order
        }
        ColumnSelector::RandomK { k, seed } => {
            let mut rng = substream(seed, "random_k_columns", f_idx as u64);
            index::sample(&mut rng, alphabet.size(), k)
                .into_iter()
                .map(|i| i as Token)
                .collect()
        }
    };
    tokens.sort_unstable();
    tokens
}

impl LogitMatrix {
    /// Queries `oracle` at every `h ∘ f`. Queries run in parallel; the result
    /// does not depend on scheduling.
    pub fn build<O: LogitOracle + ?Sized>(
        oracle: &O,
        histories: &[Sequence],
        futures: &[Sequence],
        selector: ColumnSelector,
    ) -> Result<Self> {
        let alphabet = oracle.alphabet();
        selector.validate(alphabet)?;
        let horizon = oracle.horizon();
        for h in histories {
            for f in futures {
                if h.len() + f.len() >= horizon {
                    return Err(Error::HorizonOverflow {
                        len: h.len() + f.len(),
                        horizon,
                    });
                }
            }
        }

        let future_logits: Vec<Option<LogitVector>> = match selector {
            ColumnSelector::TopK { .. } => futures
                .par_iter()
                .map(|f| oracle.logits(f).map(Some))
                .collect::<Result<_>>()?,
            _ => vec![None; futures.len()],
        };
        let mut columns = Vec::new();
        let mut groups = Vec::with_capacity(futures.len());
        for (fi, fl) in future_logits.iter().enumerate() {
            let toks = pick_columns(selector, alphabet, fi, fl.as_ref());
            groups.push(toks.clone());
            columns.extend(toks.into_iter().map(|z| (fi, z)));
        }

        let nf = futures.len();
        let cells: Vec<LogitVector> = (0..histories.len() * nf)
            .into_par_iter()
            .map(|c| oracle.logits(&histories[c / nf].concat(&futures[c % nf])))
            .collect::<Result<_>>()?;

        let mut values = DMatrix::zeros(histories.len(), columns.len());
        for (hi, row_cells) in cells.chunks(nf.max(1)).enumerate().take(histories.len()) {
            let mut col = 0;
            for (fi, cell) in row_cells.iter().enumerate() {
                for &z in &groups[fi] {
                    values[(hi, col)] = cell.values[z as usize];
                    col += 1;
                }
            }
        }

        Ok(LogitMatrix {
            alphabet,
            histories: histories.to_vec(),
            futures: futures.to_vec(),
            columns,
            values,
            selector,
            model_id: String::new(),
            extra: serde_json::Value::Null,
        })
    }

    /// Assembles a matrix from stored parts, checking every structural
    /// invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        alphabet: Alphabet,
        histories: Vec<Sequence>,
        futures: Vec<Sequence>,
        columns: Vec<(usize, Token)>,
        values: DMatrix<f64>,
        selector: ColumnSelector,
        model_id: String,
        extra: serde_json::Value,
    ) -> Result<Self> {
        if values.shape() != (histories.len(), columns.len()) {
            return Err(Error::Dimension(format!(
                "values are {:?}, metadata implies ({}, {})",
                values.shape(),
                histories.len(),
                columns.len()
            )));
        }
        selector.validate(alphabet)?;
        for s in histories.iter().chain(&futures) {
            alphabet.check(s)?;
        }
        let mut seen = HashSet::new();
        let mut closed = HashSet::new();
        let mut current = None;
        for &(fi, z) in &columns {
            if fi >= futures.len() {
                return Err(Error::Format(format!("column refers to future {fi}")));
            }
            alphabet.check(&[z])?;
            if !seen.insert((fi, z)) {
                return Err(Error::Format(format!("duplicate column ({fi}, {z})")));
            }
            if current != Some(fi) {
                if let Some(prev) = current {
                    closed.insert(prev);
                }
                if closed.contains(&fi) {
                    return Err(Error::Format(format!(
                        "columns of future {fi} are not contiguous"
                    )));
                }
                current = Some(fi);
            }
        }
        crate::linalg::ensure_finite(&values, "logit matrix values")?;
        Ok(LogitMatrix {
            alphabet,
            histories,
            futures,
            columns,
            values,
            selector,
            model_id,
            extra,
        })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn histories(&self) -> &[Sequence] {
        &self.histories
    }

    pub fn futures(&self) -> &[Sequence] {
        &self.futures
    }

    pub fn columns(&self) -> &[(usize, Token)] {
        &self.columns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn selector(&self) -> ColumnSelector {
        self.selector
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn extra(&self) -> &serde_json::Value {
        &self.extra
    }

    pub fn with_extra(mut self, extra: serde_json::Value) -> Self {
        self.extra = extra;
        self
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn duplicate_histories(&self) -> bool {
        has_duplicates(&self.histories)
    }

    pub fn duplicate_futures(&self) -> bool {
        has_duplicates(&self.futures)
    }

    /// Column ranges of each stored future, in storage order. Futures that
    /// own no columns are skipped.
    pub fn groups(&self) -> Vec<(usize, Range<usize>)> {
        let mut out: Vec<(usize, Range<usize>)> = Vec::new();
        for (c, &(fi, _)) in self.columns.iter().enumerate() {
            match out.last_mut() {
                Some((f, r)) if *f == fi => r.end = c + 1,
                _ => out.push((fi, c..c + 1)),
            }
        }
        out
    }

    /// Same rows and columns, new values (e.g. a low-rank approximation).
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::Dimension(format!(
                "replacement values are {:?}, matrix is {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        crate::linalg::ensure_finite(&values, "replacement values")?;
        Ok(LogitMatrix {
            values,
            ..self.clone()
        })
    }

    /// Keeps the given history and future indices, in the given order.
    pub fn restrict(&self, history_idx: &[usize], future_idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = history_idx.iter().find(|&&i| i >= self.histories.len()) {
            return Err(Error::InvalidArgument(format!(
                "history index {bad} out of range"
            )));
        }
        if let Some(&bad) = future_idx.iter().find(|&&i| i >= self.futures.len()) {
            return Err(Error::InvalidArgument(format!(
                "future index {bad} out of range"
            )));
        }
        let groups: HashMap<usize, Range<usize>> = self.groups().into_iter().collect();
        let mut columns = Vec::new();
        let mut src_cols = Vec::new();
        for (new_fi, &old_fi) in future_idx.iter().enumerate() {
            if let Some(r) = groups.get(&old_fi) {
                for c in r.clone() {
                    columns.push((new_fi, self.columns[c].1));
                    src_cols.push(c);
                }
            }
        }
        let values = DMatrix::from_fn(history_idx.len(), src_cols.len(), |i, j| {
            self.values[(history_idx[i], src_cols[j])]
        });
        Ok(LogitMatrix {
            alphabet: self.alphabet,
            histories: history_idx
                .iter()
                .map(|&i| self.histories[i].clone())
                .collect(),
            futures: future_idx
                .iter()
                .map(|&i| self.futures[i].clone())
                .collect(),
            columns,
            values,
            selector: self.selector,
            model_id: self.model_id.clone(),
            extra: self.extra.clone(),
        })
    }

    /// Leading `⌈|H|/factor⌉` histories and `⌈|F|/factor⌉` futures.
    pub fn downsize(&self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "downsizing factor {factor} < 1"
            )));
        }
        let keep = |n: usize| ((n as f64 / factor).ceil() as usize).clamp(1.min(n), n);
        let h: Vec<usize> = (0..keep(self.histories.len())).collect();
        let f: Vec<usize> = (0..keep(self.futures.len())).collect();
        self.restrict(&h, &f)
    }
}

/// Answers logit queries from a full-alphabet matrix at the prefixes it
/// stores (`h ∘ f` for every cell).
pub struct MatrixOracle {
    alphabet: Alphabet,
    horizon: usize,
    table: HashMap<Sequence, Vec<f64>>,
}

impl MatrixOracle {
    pub fn new(m: &LogitMatrix) -> Result<Self> {
        let k = m.alphabet.size();
        let mut table = HashMap::new();
        let mut longest = 0;
        for (fi, r) in m.groups() {
            if r.len() != k {
                return Err(Error::InvalidArgument(
                    "matrix oracle needs every token of every future".into(),
                ));
            }
            for (hi, h) in m.histories.iter().enumerate() {
                let prefix = h.concat(&m.futures[fi]);
                longest = longest.max(prefix.len());
                let row: Vec<f64> = r.clone().map(|c| m.values[(hi, c)]).collect();
                table.insert(prefix, row);
            }
        }
        Ok(MatrixOracle {
            alphabet: m.alphabet,
            horizon: longest + 1,
            table,
        })
    }

    pub fn contains(&self, prefix: &[Token]) -> bool {
        self.table.contains_key(&Sequence::from(prefix))
    }
}

impl LogitOracle for MatrixOracle {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        self.check_prefix(prefix)?;
        self.table
            .get(&Sequence::from(prefix))
            .map(|v| LogitVector::centered(v.clone()))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "prefix {} is not stored in the matrix",
                    Sequence::from(prefix)
                ))
            })
    }
}

/// `Σ^{≤max_len}` in length-then-lexicographic order, starting with `Null`.
pub fn full_future_closure(
    alphabet: Alphabet,
    max_len: usize,
    budget: u128,
) -> Result<Vec<Sequence>> {
    let mut total: u128 = 0;
    for len in 0..=max_len {
        total =
            total.saturating_add(crate::model::universe_size(alphabet, len).unwrap_or(u128::MAX));
    }
    if total > budget {
        return Err(Error::EnumerationInfeasible {
            needed: total,
            budget,
        });
    }
    let mut out = Vec::with_capacity(total as usize);
    for len in 0..=max_len {
        check_budget(alphabet, len, budget)?;
        out.extend(crate::model::all_sequences(alphabet, len, budget)?);
    }
    Ok(out)
}

/// Pools all tokens of `sequences`, shuffles them, and deals them back out
/// with the original lengths.
pub fn nonsense_permute(sequences: &[Sequence], seed: u64) -> Vec<Sequence> {
    let mut pool: Vec<Token> = sequences.iter().flat_map(|s| s.iter().copied()).collect();
    let mut rng = substream(seed, "nonsense_permute", 0);
    pool.shuffle(&mut rng);
    let mut it = pool.into_iter();
    sequences
        .iter()
        .map(|s| Sequence(it.by_ref().take(s.len()).collect()))
        .collect()
}
