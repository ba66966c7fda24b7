use serde::Serialize;

use logitrank::bounds::{bound_vs_measured, BoundConfig};
use logitrank::constructions::{random_isan, time_invariant_reduction};
use logitrank::learner::reconstruct_exact;
use logitrank::linalg::{self, DEFAULT_RANK_TOL};
use logitrank::lingen::fit_from_oracle;
use logitrank::logit_matrix::{full_future_closure, ColumnSelector, LogitMatrix};
use logitrank::model::{
    all_sequences, exact_continuations, load_model, tv_distance, Alphabet, Sequence,
    TimeVaryingIsan,
};
use logitrank::rng::{derive_seed, substream};
use logitrank::Error;
use rand::Rng;

use crate::args::VerifyArgs;
use crate::output::{CliError, CliResult, Run};

const BUDGET: u128 = 1 << 20;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// worst value of the checked quantity
    pub worst: f64,
    pub threshold: f64,
}

fn check(name: &str, threshold: f64, values: Vec<f64>) -> Check {
    let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Check {
        name: name.into(),
        passed: values.iter().all(|&v| v <= threshold),
        cases: values.len(),
        worst,
        threshold,
    }
}

/// Largest `σ_{d+1}/σ_1` of `L(Σ^t, Σ^{≤T-t-1})` over `t`.
pub fn rank_ratio(model: &TimeVaryingIsan) -> CliResult<f64> {
    let a = model.alphabet();
    let d = model.hidden_dim();
    let mut worst = 0.0f64;
    for t in 0..model.horizon() {
        let hs = all_sequences(a, t, BUDGET)?;
        let fs = full_future_closure(a, model.horizon() - t - 1, BUDGET)?;
        let l = LogitMatrix::build(model, &hs, &fs, ColumnSelector::All)?;
        let s = linalg::singular_values(l.values());
        if s.len() > d && s[0] > 0.0 {
            worst = worst.max(s[d] / s[0]);
        }
    }
    Ok(worst)
}

pub fn roundtrip_tv(model: &TimeVaryingIsan) -> CliResult<f64> {
    let r = reconstruct_exact(model, DEFAULT_RANK_TOL, BUDGET)?;
    Ok(tv_distance(
        &model.exact_distribution(BUDGET)?,
        &r.exact_distribution(BUDGET)?,
    )?)
}

pub fn reduction_tv(model: &TimeVaryingIsan) -> CliResult<f64> {
    let r = time_invariant_reduction(model);
    let q = exact_continuations(&r, &[], model.horizon(), BUDGET)?;
    Ok(tv_distance(&model.exact_distribution(BUDGET)?, &q)?)
}

/// `measured D(truth ‖ lingen) − bound` on a perturbed-coefficient instance
/// (`d = 2`, `|Σ| = 2`, `T = 6`, `k = 4`).
pub fn lemma_excess(seed: u64) -> CliResult<f64> {
    let a = Alphabet::new(2)?;
    let m = random_isan(2, a, 6, seed, 1.0)?;
    let target = Sequence(vec![1, 1]);
    let hs: Vec<Sequence> = all_sequences(a, 2, BUDGET)?
        .into_iter()
        .filter(|h| *h != target)
        .collect();
    let fs = full_future_closure(a, 3, BUDGET)?;
    let mut c = fit_from_oracle(&m, &hs, &fs, &target, 0.0)?;
    let mut rng = substream(seed, "verify_lemma_noise", 0);
    c.v.iter_mut()
        .for_each(|x| *x += 0.3 * rng.random_range(-1.0..1.0));
    let r = bound_vs_measured(&m, &c, &BoundConfig::exact(4, 0.01))?;
    Ok(r.measured_kl_forward - r.kl_bound)
}

fn seeds(base: u64, tag: &str, n: usize) -> impl Iterator<Item = u64> + '_ {
    (0..n as u64).map(move |i| derive_seed(base, tag, i))
}

fn load_checked(path: &std::path::Path) -> CliResult<TimeVaryingIsan> {
    crate::commands::ensure_exists(path)?;
    match load_model(path) {
        Ok((m, _)) => Ok(m),
        Err(Error::Checksum { stored, computed }) => Err(CliError::Invariant(format!(
            "payload checksum: header says {stored}, payload hashes to {computed}"
        ))),
        Err(Error::Format(msg)) => Err(CliError::Invariant(format!("file layout: {msg}"))),
        Err(Error::Version { found, expected }) => Err(CliError::Invariant(format!(
            "format version: found {found}, expected {expected}"
        ))),
        Err(Error::Dimension(msg)) => Err(CliError::Invariant(format!("matrix shapes: {msg}"))),
        Err(Error::NonFinite(what)) => Err(CliError::Invariant(format!("finite entries: {what}"))),
        Err(e) => Err(e.into()),
    }
}

pub fn verify(args: &VerifyArgs, run: &Run) -> CliResult<()> {
    let (n_rank, n_round, n_red, n_lemma) = if args.quick {
        (5, 2, 2, 3)
    } else {
        (50, 10, 10, 20)
    };
    let mut checks = Vec::new();

    let mut ratios = Vec::new();
    for (i, s) in seeds(args.seed, "verify_rank", n_rank).enumerate() {
        let d = 1 + i % 3;
        let a = Alphabet::new(2 + i % 2)?;
        let t = 3 + (i / 2) % 3;
        ratios.push(rank_ratio(&random_isan(d, a, t, s, 1.0)?)?);
    }
    checks.push(check(
        "logit rank bounded by hidden dimension",
        DEFAULT_RANK_TOL,
        ratios,
    ));

    let mut tvs = Vec::new();
    for s in seeds(args.seed, "verify_roundtrip", n_round) {
        tvs.push(roundtrip_tv(&random_isan(
            2,
            Alphabet::new(2)?,
            4,
            s,
            1.0,
        )?)?);
    }
    checks.push(check("reconstruction from exact logit matrices", 1e-8, tvs));

    let mut tvs = Vec::new();
    for s in seeds(args.seed, "verify_reduction", n_red) {
        tvs.push(reduction_tv(&random_isan(
            2,
            Alphabet::new(2)?,
            3,
            s,
            1.0,
        )?)?);
    }
    checks.push(check("time-invariant reduction", 1e-10, tvs));

    let excess: Vec<f64> = seeds(args.seed, "verify_lemma", n_lemma)
        .map(lemma_excess)
        .collect::<CliResult<_>>()?;
    checks.push(check("linear generation KL bound", 1e-9, excess));

    let mut model_error = None;
    if let Some(path) = &args.model {
        match load_checked(path) {
            Ok(m) => {
                checks.push(check(
                    "model: logit rank bounded by hidden dimension",
                    DEFAULT_RANK_TOL,
                    vec![rank_ratio(&m)?],
                ));
                match roundtrip_tv(&m) {
                    Ok(tv) => checks.push(check(
                        "model: reconstruction from exact logit matrices",
                        1e-8,
                        vec![tv],
                    )),
                    Err(CliError::Core(Error::EnumerationInfeasible { .. })) => {}
                    Err(e) => return Err(e),
                }
            }
            Err(e @ CliError::Invariant(_)) => model_error = Some(e),
            Err(e) => return Err(e),
        }
    }

    for c in &checks {
        println!(
            "{} {} ({} cases, worst {:.3e}, threshold {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.worst,
            c.threshold
        );
    }
    let error_text = model_error.as_ref().map(|e| e.to_string());
    if let Some(t) = &error_text {
        println!("FAIL model file: {t}");
    }
    run.write_json(
        "verify.json",
        &serde_json::json!({ "checks": checks, "model_error": error_text }),
    )?;
    if let Some(e) = model_error {
        return Err(e);
    }
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failed.join("; ")))
    }
}
