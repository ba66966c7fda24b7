//! Learning a time-varying ISAN from logit queries: grow spanning sets of
//! histories and futures until their logit submatrices stop gaining rank,
//! then solve for transition matrices by least squares.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::model::{
    all_sequences, prefix_sample_with, Alphabet, CountingOracle, LogitOracle, LogitVector,
    Sequence, TimeVaryingIsan, Token,
};
use crate::rng::substream;

/// Relative least-squares residual above which a solve is declared
/// incomplete.
pub const SPAN_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub epsilon: f64,
    /// prefix samples per step and sweep; `None` uses `⌈(4T/ε) ln(dT/ε)⌉`
    /// with `d = d_max`
    pub samples: Option<usize>,
    pub rank_rel_tol: f64,
    pub d_max: usize,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(epsilon: f64, d_max: usize, seed: u64) -> Self {
        LearnerConfig {
            epsilon,
            samples: None,
            rank_rel_tol: DEFAULT_RANK_TOL,
            d_max,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.d_max == 0 {
            return Err(Error::InvalidArgument("d_max must be positive".into()));
        }
        if self.samples == Some(0) {
            return Err(Error::InvalidArgument(
                "sample count must be positive".into(),
            ));
        }
        if !(self.rank_rel_tol > 0.0 && self.rank_rel_tol < 1.0) {
            return Err(Error::InvalidArgument(
                "rank tolerance must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_count(&self, horizon: usize) -> usize {
        self.samples.unwrap_or_else(|| {
            let t = horizon as f64;
            let d = self.d_max as f64;
            ((4.0 * t / self.epsilon) * (d * t / self.epsilon).ln())
                .ceil()
                .max(1.0) as usize
        })
    }
}

/// Per-step history and future sets, `t = 0..T-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningSets {
    pub histories: Vec<Vec<Sequence>>,
    pub futures: Vec<Vec<Sequence>>,
    pub ranks: Vec<usize>,
}

impl SpanningSets {
    pub fn horizon(&self) -> usize {
        self.histories.len()
    }

    /// `max_t |H_t|`, the dimension of the learned model.
    pub fn dimension(&self) -> usize {
        self.histories.iter().map(Vec::len).max().unwrap_or(1)
    }
}

/// Memoizes logit queries. Missing prefixes are fetched in parallel; the set
/// of prefixes sent to the inner oracle does not depend on scheduling.
pub struct QueryCache<'a, O: ?Sized> {
    oracle: &'a O,
    table: Mutex<HashMap<Sequence, Vec<f64>>>,
}

impl<'a, O: LogitOracle + ?Sized> QueryCache<'a, O> {
    pub fn new(oracle: &'a O) -> Self {
        QueryCache {
            oracle,
            table: Mutex::new(HashMap::new()),
        }
    }

    fn prefetch(&self, prefixes: Vec<Sequence>) -> Result<()> {
        let missing: Vec<Sequence> = {
            let table = self.table.lock().expect("cache lock");
            let mut seen = HashSet::new();
            prefixes
                .into_iter()
                .filter(|p| !table.contains_key(p) && seen.insert(p.clone()))
                .collect()
        };
        let fetched: Vec<(Sequence, Vec<f64>)> = missing
            .into_par_iter()
            .map(|p| self.oracle.logits(&p).map(|l| (p, l.values)))
            .collect::<Result<_>>()?;
        self.table.lock().expect("cache lock").extend(fetched);
        Ok(())
    }

    /// `L(rows, futures)` with every token of every future as a column.
    pub fn block(&self, rows: &[Sequence], futures: &[Sequence]) -> Result<DMatrix<f64>> {
        let prefixes: Vec<Sequence> = rows
            .iter()
            .flat_map(|h| futures.iter().map(move |f| h.concat(f)))
            .collect();
        self.prefetch(prefixes)?;
        let k = self.oracle.alphabet().size();
        let table = self.table.lock().expect("cache lock");
        let mut m = DMatrix::zeros(rows.len(), futures.len() * k);
        for (i, h) in rows.iter().enumerate() {
            for (j, f) in futures.iter().enumerate() {
                let v = &table[&h.concat(f)];
                for z in 0..k {
                    m[(i, j * k + z)] = v[z];
                }
            }
        }
        Ok(m)
    }
}

impl<O: LogitOracle + ?Sized> LogitOracle for QueryCache<'_, O> {
    fn alphabet(&self) -> Alphabet {
        self.oracle.alphabet()
    }
    fn horizon(&self) -> usize {
        self.oracle.horizon()
    }
    fn logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        let key = Sequence::from(prefix);
        let mut table = self.table.lock().expect("cache lock");
        if let Some(v) = table.get(&key) {
            return Ok(LogitVector::centered(v.clone()));
        }
        let l = self.oracle.logits(prefix)?;
        table.insert(key, l.values.clone());
        Ok(l)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanDiagnostics {
    pub sweeps: usize,
    pub additions: usize,
    /// additions that could not bring a new future along
    pub history_only_additions: usize,
    /// additions whose rank gain was not exactly one
    pub non_unit_gains: usize,
    /// times `|H_t| - rank` or `|F_t| - rank` left `{0, 1}`
    pub off_by_one_violations: usize,
    pub samples_per_step: usize,
}

fn union(parts: &[&[Sequence]]) -> Vec<Sequence> {
    let mut seen = HashSet::new();
    parts
        .iter()
        .flat_map(|p| p.iter())
        .filter(|s| seen.insert((*s).clone()))
        .cloned()
        .collect()
}

fn extend_all(hs: &[Sequence], alphabet: Alphabet) -> Vec<Sequence> {
    hs.iter()
        .flat_map(|h| alphabet.tokens().map(move |z| h.push(z)))
        .collect()
}

fn prepend_all(fs: &[Sequence], alphabet: Alphabet) -> Vec<Sequence> {
    alphabet
        .tokens()
        .flat_map(|z| fs.iter().map(move |f| Sequence::from(vec![z]).concat(f)))
        .collect()
}

/// Component of each row of `m` orthogonal to the row space of `basis`.
fn row_residuals(m: &DMatrix<f64>, basis: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let d = linalg::svd(basis);
    let r = linalg::rank_of_spectrum(&d.singular_values, tol);
    let v = d.v_t.rows(0, r).transpose();
    m - (m * &v) * v.transpose()
}

struct Step<'s> {
    t: usize,
    h_t: &'s [Sequence],
    f_t: &'s [Sequence],
    h_prev: &'s [Sequence],
    f_next: &'s [Sequence],
}

enum Growth {
    None,
    Add {
        h: Sequence,
        f: Option<Sequence>,
        gain: usize,
    },
}

fn grow_step<O: LogitOracle + ?Sized>(
    cache: &QueryCache<O>,
    step: Step,
    samples: &[Sequence],
    tol: f64,
) -> Result<Growth> {
    let alphabet = cache.alphabet();
    let k = alphabet.size();
    let base = cache.block(step.h_t, step.f_t)?;
    let rank = linalg::numerical_rank(&base, tol);

    let candidates = union(&[step.h_t, &extend_all(step.h_prev, alphabet), samples]);
    let new_futures: Vec<Sequence> = union(&[&prepend_all(step.f_next, alphabet)])
        .into_iter()
        .filter(|f| !step.f_t.contains(f))
        .collect();
    let cols = union(&[step.f_t, &new_futures]);
    let big = cache.block(&candidates, &cols)?;
    if linalg::numerical_rank(&big, tol) <= rank {
        return Ok(Growth::None);
    }

    let current_rows: Vec<usize> = (0..step.h_t.len()).collect();
    let current = big.select_rows(current_rows.iter());
    let resid = row_residuals(&big, &current, tol);
    let mut h_order: Vec<(usize, f64)> = (0..candidates.len())
        .map(|i| (i, resid.row(i).norm()))
        .collect();
    h_order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let nf_t = step.f_t.len();
    for &(hi, _) in &h_order {
        let h = &candidates[hi];
        let mut rows = step.h_t.to_vec();
        if !rows.contains(h) {
            rows.push(h.clone());
        }
        // futures ordered by the size of h's residual inside their block
        let mut f_order: Vec<(usize, f64)> = (0..new_futures.len())
            .map(|j| {
                let c0 = (nf_t + j) * k;
                (j, resid.row(hi).columns(c0, k).norm())
            })
            .collect();
        f_order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(fj, _) in &f_order {
            let mut fs = step.f_t.to_vec();
            fs.push(new_futures[fj].clone());
            let r = linalg::numerical_rank(&cache.block(&rows, &fs)?, tol);
            if r == rank + 1 {
                return Ok(Growth::Add {
                    h: h.clone(),
                    f: Some(new_futures[fj].clone()),
                    gain: 1,
                });
            }
        }
    }
    // no (h, f) pair gains exactly one; fall back to a history alone, then to
    // the pair with the smallest positive gain
    let mut best: Option<(usize, Sequence, Option<Sequence>)> = None;
    for &(hi, _) in &h_order {
        let h = &candidates[hi];
        if step.h_t.contains(h) {
            continue;
        }
        let mut rows = step.h_t.to_vec();
        rows.push(h.clone());
        let r = linalg::numerical_rank(&cache.block(&rows, step.f_t)?, tol);
        if r == rank + 1 {
            return Ok(Growth::Add {
                h: h.clone(),
                f: None,
                gain: 1,
            });
        }
        for f in &new_futures {
            let mut fs = step.f_t.to_vec();
            fs.push(f.clone());
            let r = linalg::numerical_rank(&cache.block(&rows, &fs)?, tol);
            if r > rank && best.as_ref().is_none_or(|b| r - rank < b.0) {
                best = Some((r - rank, h.clone(), Some(f.clone())));
            }
        }
    }
    if let Some((gain, h, f)) = best {
        return Ok(Growth::Add { h, f, gain });
    }
    // the gap sits in the new futures alone: keep H_t, add the best column
    for f in &new_futures {
        let mut fs = step.f_t.to_vec();
        fs.push(f.clone());
        let r = linalg::numerical_rank(&cache.block(step.h_t, &fs)?, tol);
        if r > rank {
            return Ok(Growth::Add {
                h: step.h_t[0].clone(),
                f: Some(f.clone()),
                gain: r - rank,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "rank gap at step {} but no single history or future closes it",
        step.t
    )))
}

/// Grows `H_t`, `F_t` until a full sweep over `t = 1..T-1` finds no rank gap
/// against fresh prefix samples.
pub fn complete_span<O: LogitOracle + ?Sized>(
    cache: &QueryCache<O>,
    config: &LearnerConfig,
) -> Result<(SpanningSets, SpanDiagnostics)> {
    config.validate()?;
    let horizon = cache.horizon();
    let tol = config.rank_rel_tol;
    let n = config.sample_count(horizon);
    let mut hs: Vec<Vec<Sequence>> = (0..horizon).map(|t| vec![Sequence(vec![0; t])]).collect();
    let mut fs: Vec<Vec<Sequence>> = vec![vec![Sequence::null()]; horizon];
    let mut diag = SpanDiagnostics {
        samples_per_step: n,
        ..Default::default()
    };
    // each addition raises some rank, and ranks are capped by d_max
    let max_sweeps = config.d_max * horizon + 2;

    let mut incomplete = true;
    while incomplete {
        if diag.sweeps >= max_sweeps {
            return Err(Error::InvalidArgument(format!(
                "span completion did not settle within {max_sweeps} sweeps"
            )));
        }
        incomplete = false;
        let sweep = diag.sweeps as u64;
        diag.sweeps += 1;
        for t in 1..horizon {
            let mut rng = substream(
                config.seed,
                "complete_span_samples",
                sweep * horizon as u64 + t as u64,
            );
            let mut seen = HashSet::new();
            let mut samples = Vec::new();
            for _ in 0..n {
                let s = prefix_sample_with(cache, t, &mut rng)?;
                if seen.insert(s.clone()) {
                    samples.push(s);
                }
            }
            let empty = Vec::new();
            let f_next = if t + 1 < horizon { &fs[t + 1] } else { &empty };
            let growth = grow_step(
                cache,
                Step {
                    t,
                    h_t: &hs[t],
                    f_t: &fs[t],
                    h_prev: &hs[t - 1],
                    f_next,
                },
                &samples,
                tol,
            )?;
            if let Growth::Add { h, f, gain } = growth {
                incomplete = true;
                diag.additions += 1;
                if gain != 1 {
                    diag.non_unit_gains += 1;
                }
                if !hs[t].contains(&h) {
                    hs[t].push(h);
                }
                match f {
                    Some(f) => fs[t].push(f),
                    None => diag.history_only_additions += 1,
                }
                let rank = linalg::numerical_rank(&cache.block(&hs[t], &fs[t])?, tol);
                if rank > config.d_max {
                    return Err(Error::RankCap {
                        step: t,
                        rank,
                        d_max: config.d_max,
                    });
                }
                if hs[t].len() - rank > 1 || (t + 1 < horizon && fs[t].len() - rank > 1) {
                    diag.off_by_one_violations += 1;
                }
            }
        }
    }
    let ranks = (0..horizon)
        .map(|t| Ok(linalg::numerical_rank(&cache.block(&hs[t], &fs[t])?, tol)))
        .collect::<Result<_>>()?;
    Ok((
        SpanningSets {
            histories: hs,
            futures: fs,
            ranks,
        },
        diag,
    ))
}

/// Relative residual of each transition solve, `[t-1][z]`.
pub type SolveResiduals = Vec<Vec<f64>>;

/// Least-squares transitions `Âᵀ = L(H_{t-1}∘z, F_t) L(H_t, F_t)⁺`,
/// emissions `B̂_t = L(H_{t-1}, {Null})ᵀ`, `x̂_0 = e_1`, zero-padded to
/// `max_t |H_t|`.
pub fn solve_parameters<O: LogitOracle + ?Sized>(
    cache: &QueryCache<O>,
    spans: &SpanningSets,
    rank_rel_tol: f64,
) -> Result<(TimeVaryingIsan, SolveResiduals)> {
    let horizon = cache.horizon();
    if spans.horizon() != horizon {
        return Err(Error::Dimension(format!(
            "spanning sets cover {} steps, model has {horizon}",
            spans.horizon()
        )));
    }
    if spans.histories[0] != [Sequence::null()] {
        return Err(Error::InvalidArgument("H_0 must be {Null}".into()));
    }
    let alphabet = cache.alphabet();
    let k = alphabet.size();
    let dim = spans.dimension();
    let mut residuals = Vec::with_capacity(horizon.saturating_sub(1));
    let mut transitions = Vec::with_capacity(horizon.saturating_sub(1));
    for t in 1..horizon {
        let (h_prev, h_t, f_t) = (
            &spans.histories[t - 1],
            &spans.histories[t],
            &spans.futures[t],
        );
        let lt = cache.block(h_t, f_t)?;
        let lt_pinv = linalg::pinv(&lt, rank_rel_tol);
        let mut step = Vec::with_capacity(k);
        let mut step_res = Vec::with_capacity(k);
        for z in alphabet.tokens() {
            let rows: Vec<Sequence> = h_prev.iter().map(|h| h.push(z)).collect();
            let target = cache.block(&rows, f_t)?;
            let a_t = &target * &lt_pinv;
            let scale = target.norm();
            let err = (&target - &a_t * &lt).norm();
            let rel = if scale > 1e-12 { err / scale } else { err };
            if rel > SPAN_RESIDUAL_TOL {
                return Err(Error::SpanIncomplete {
                    step: t,
                    residual: rel,
                });
            }
            step_res.push(rel);
            let mut a = DMatrix::zeros(dim, dim);
            a.view_mut((0, 0), (h_t.len(), h_prev.len()))
                .copy_from(&a_t.transpose());
            step.push(a);
        }
        residuals.push(step_res);
        transitions.push(step);
    }
    let mut emissions = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let h_prev = &spans.histories[t - 1];
        let l = cache.block(h_prev, &[Sequence::null()])?;
        let mut b = DMatrix::zeros(k, dim);
        b.view_mut((0, 0), (k, h_prev.len()))
            .copy_from(&l.transpose());
        emissions.push(b);
    }
    let mut x0 = DVector::zeros(dim);
    x0[0] = 1.0;
    Ok((
        TimeVaryingIsan::new(alphabet, x0, transitions, emissions)?,
        residuals,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealDiagnostics {
    pub spans: SpanningSets,
    pub span: SpanDiagnostics,
    pub solve_residuals: SolveResiduals,
    pub queries: u64,
    pub learned_dim: usize,
}

pub struct StealResult {
    pub model: TimeVaryingIsan,
    pub queries: u64,
    pub diagnostics: StealDiagnostics,
}

/// Runs span completion and parameter recovery. `queries` counts every
/// distinct logit query that reaches `oracle`, sampling included.
pub fn steal<O: LogitOracle + ?Sized>(oracle: &O, config: &LearnerConfig) -> Result<StealResult> {
    let counting = CountingOracle::new(oracle);
    let cache = QueryCache::new(&counting);
    let (spans, span) = complete_span(&cache, config)?;
    let (model, solve_residuals) = solve_parameters(&cache, &spans, config.rank_rel_tol)?;
    let queries = counting.queries();
    Ok(StealResult {
        queries,
        diagnostics: StealDiagnostics {
            learned_dim: model.hidden_dim(),
            spans,
            span,
            solve_residuals,
            queries,
        },
        model,
    })
}

/// Spanning sets from exhaustive enumeration: `H_t` a greedy row basis of
/// `Σ^t` (starting from `0^t`), `F_t = Σ^{≤T-t-1}`.
pub fn exhaustive_spans<O: LogitOracle + ?Sized>(
    cache: &QueryCache<O>,
    rank_rel_tol: f64,
    budget: u128,
) -> Result<SpanningSets> {
    let horizon = cache.horizon();
    let alphabet = cache.alphabet();
    let mut histories = Vec::with_capacity(horizon);
    let mut futures = Vec::with_capacity(horizon);
    let mut ranks = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let fs = crate::logit_matrix::full_future_closure(alphabet, horizon - t - 1, budget)?;
        let all = all_sequences(alphabet, t, budget)?;
        let block = cache.block(&all, &fs)?;
        let mut chosen = vec![0usize];
        let mut rank = linalg::numerical_rank(&block.select_rows([0usize].iter()), rank_rel_tol);
        let full_rank = linalg::numerical_rank(&block, rank_rel_tol);
        for i in 1..all.len() {
            if rank == full_rank {
                break;
            }
            let mut trial = chosen.clone();
            trial.push(i);
            let r = linalg::numerical_rank(&block.select_rows(trial.iter()), rank_rel_tol);
            if r > rank {
                chosen = trial;
                rank = r;
            }
        }
        histories.push(chosen.iter().map(|&i| all[i].clone()).collect());
        futures.push(fs);
        ranks.push(rank);
    }
    Ok(SpanningSets {
        histories,
        futures,
        ranks,
    })
}

/// Rebuilds a model from its exact logit matrices over all histories and
/// futures.
pub fn reconstruct_exact<O: LogitOracle + ?Sized>(
    oracle: &O,
    rank_rel_tol: f64,
    budget: u128,
) -> Result<TimeVaryingIsan> {
    let cache = QueryCache::new(oracle);
    let spans = exhaustive_spans(&cache, rank_rel_tol, budget)?;
    Ok(solve_parameters(&cache, &spans, rank_rel_tol)?.0)
}
