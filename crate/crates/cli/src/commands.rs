use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use logitrank::constructions::{
    build_copying, build_noisy_parity, embed_ssm, random_isan, random_rank_one_emission_isan,
    random_ssm, NoisyParitySpec,
};
use logitrank::learner::{steal, LearnerConfig};
use logitrank::lingen::{eval_per_token_kl, fit_from_oracle, single_token_baseline, KlReport};
use logitrank::logit_matrix::{self, full_future_closure, nonsense_permute, LogitMatrix};
use logitrank::model::{
    all_sequences, load_model, prefix_sample_with, save_model, tv_distance, Alphabet, LogitOracle,
    Sequence, TimeVaryingIsan,
};
use logitrank::rng::{derive_seed, substream};
use logitrank::spectral::{
    self, column_space, fit_power_law, kl_curve, principal_angles, random_subspace_baseline,
    randomized_svd, rank1_baseline, rank1_baseline_from_row,
};

use crate::args::{
    parse_tokens, sequence_of, AnalyzeArgs, BuildMatrixArgs, LingenArgs, MakeModelArgs, ModelKind,
    SeqSource, StealArgs,
};
use crate::output::{num, opt_num, CliError, CliResult, Run};

/// Fails with the path in the message when an input file is missing.
pub fn ensure_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )
        .into())
    }
}

pub fn load(path: &Path) -> CliResult<TimeVaryingIsan> {
    ensure_exists(path)?;
    Ok(load_model(path)?.0)
}

fn load_matrix(path: &Path) -> CliResult<LogitMatrix> {
    ensure_exists(path)?;
    Ok(logit_matrix::load(path)?)
}

/// Expands a source into sequences. Sampling uses one substream per draw.
pub fn expand(
    source: &SeqSource,
    oracle: &dyn LogitOracle,
    seed: u64,
    tag: &str,
    budget: u64,
) -> CliResult<Vec<Sequence>> {
    let alphabet = oracle.alphabet();
    let budget = budget as u128;
    Ok(match source {
        SeqSource::Null => vec![Sequence::null()],
        SeqSource::All(t) => all_sequences(alphabet, *t, budget)?,
        SeqSource::Closure(l) => full_future_closure(alphabet, *l, budget)?,
        SeqSource::Sample(t, n) => {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for i in 0..*n {
                let mut rng = substream(seed, tag, i as u64);
                let s = prefix_sample_with(oracle, *t, &mut rng)?;
                if seen.insert(s.clone()) {
                    out.push(s);
                }
            }
            out
        }
        SeqSource::File(path) => read_sequences(path, alphabet)?,
    })
}

/// One sequence per line; `null` for the empty sequence, `#` comments.
pub fn read_sequences(path: &Path, alphabet: Alphabet) -> CliResult<Vec<Sequence>> {
    ensure_exists(path)?;
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let seq = if line.eq_ignore_ascii_case("null") {
            Sequence::null()
        } else {
            sequence_of(
                &parse_tokens(line)
                    .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?,
            )
        };
        alphabet.check(&seq)?;
        out.push(seq);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds no sequences",
            path.display()
        )));
    }
    Ok(out)
}

pub fn make_model(args: &MakeModelArgs, run: &Run) -> CliResult<PathBuf> {
    let alphabet = Alphabet::new(args.alphabet)?;
    let model = match args.kind {
        ModelKind::Copying => build_copying(args.n, args.c)?,
        ModelKind::NoisyParity => {
            let y = args
                .y
                .as_ref()
                .ok_or_else(|| CliError::Usage("noisy-parity needs --y".into()))?;
            let y = y.0.iter().map(|&b| b as u8).collect();
            build_noisy_parity(&NoisyParitySpec::new(y, args.p)?)?
        }
        ModelKind::Random => random_isan(args.d, alphabet, args.horizon, args.seed, args.scale)?,
        ModelKind::RankOneEmission => {
            random_rank_one_emission_isan(args.d, alphabet, args.horizon, args.seed, args.scale)?
        }
        ModelKind::Ssm => {
            let dims = &args.ssm_dims.0;
            if dims.len() != 3 || dims.contains(&0) {
                return Err(CliError::Usage(
                    "--ssm-dims needs three positive numbers p,q,d".into(),
                ));
            }
            let (p, q, d) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
            embed_ssm(&random_ssm(
                alphabet,
                args.horizon,
                (p, q, d),
                args.seed,
                args.scale,
            ))?
        }
    };
    let path = run.path(&args.output)?;
    save_model(&model, &run.meta(), &path)?;
    println!(
        "wrote {} (d = {}, T = {}, |Σ| = {})",
        path.display(),
        model.hidden_dim(),
        model.horizon(),
        model.alphabet().size()
    );
    Ok(path)
}

pub fn build_matrix(args: &BuildMatrixArgs, run: &Run) -> CliResult<PathBuf> {
    let model = load(&args.model)?;
    let hs = expand(
        &args.histories,
        &model,
        args.seed,
        "cli_histories",
        args.budget,
    )?;
    let fs = expand(&args.futures, &model, args.seed, "cli_futures", args.budget)?;
    let l = LogitMatrix::build(&model, &hs, &fs, args.selector.resolve(args.seed))?
        .with_model_id(args.model.display().to_string())
        .with_extra(run.meta());
    let path = run.path(&args.output)?;
    logit_matrix::save(&l, &path)?;
    println!("wrote {} ({} x {})", path.display(), l.nrows(), l.ncols());
    Ok(path)
}

#[derive(Serialize)]
struct FitEntry {
    factor: usize,
    rows: usize,
    cols: usize,
    fit: Option<spectral::PowerLawFit>,
    error: Option<String>,
}

fn fit_entry(factor: usize, l: &LogitMatrix, s: &[f64]) -> FitEntry {
    let n = l.nrows().min(l.ncols());
    let (fit, error) = match fit_power_law(s, n) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    FitEntry {
        factor,
        rows: l.nrows(),
        cols: l.ncols(),
        fit,
        error,
    }
}

pub fn analyze(args: &AnalyzeArgs, run: &Run) -> CliResult<()> {
    let l = load_matrix(&args.matrix)?;
    let mut notes = Vec::new();

    let s = match args.randomized_rank {
        Some(r) => randomized_svd(l.values(), r, 10, 2, args.seed)?.singular_values,
        None => spectral::singular_values(l.values(), false)?,
    };
    let scale = ((l.nrows() * l.ncols()) as f64).sqrt();
    run.write_csv(
        "singvals.csv",
        &["index", "singular_value", "normalized"],
        s.iter()
            .enumerate()
            .map(|(i, &x)| vec![i.to_string(), num(x), num(x / scale)]),
    )?;

    let mut fits = vec![fit_entry(1, &l, &s)];
    let mut sweep_rows = Vec::new();
    for factor in [2usize, 4, 8, 16] {
        let small = l.downsize((factor as f64).sqrt())?;
        let ss = spectral::singular_values(small.values(), true)?;
        for (i, &x) in ss.iter().enumerate() {
            sweep_rows.push(vec![factor.to_string(), i.to_string(), num(x)]);
        }
        fits.push(fit_entry(factor, &small, &ss));
    }
    run.write_csv(
        "downsize.csv",
        &["factor", "index", "normalized_singular_value"],
        sweep_rows,
    )?;
    run.write_json("power_law.json", &fits)?;

    let baseline = match l.histories().iter().position(|h| h.is_null()) {
        Some(i) => {
            let row: Vec<f64> = l.values().row(i).iter().copied().collect();
            Some(rank1_baseline_from_row(&l, &row)?)
        }
        None => match &args.model {
            Some(p) => Some(rank1_baseline(&l, &load(p)?)?),
            None => {
                notes.push(
                    "rank-1 baseline skipped: no Null history row and no --model".to_string(),
                );
                None
            }
        },
    };
    let k = l.nrows().min(l.ncols());
    let mut ranks: Vec<usize> = args.ranks.iter().map(|&r| r.clamp(1, k)).collect();
    ranks.sort_unstable();
    ranks.dedup();
    let curve = kl_curve(&l, &ranks)?;
    run.write_csv(
        "kl_curve.csv",
        &["rank", "avg_kl", "frobenius_bound", "rank1_baseline"],
        curve.iter().map(|p| {
            vec![
                p.rank.to_string(),
                num(p.avg_kl),
                num(p.frobenius_bound),
                opt_num(baseline),
            ]
        }),
    )?;

    let (left, right) = match &args.compare {
        Some(p) => (l.clone(), load_matrix(p)?),
        None if l.futures().len() >= 2 => {
            notes.push("angles: first half of the futures against the second half".into());
            let half = l.futures().len() / 2;
            let hs: Vec<usize> = (0..l.nrows()).collect();
            (
                l.restrict(&hs, &(0..half).collect::<Vec<_>>())?,
                l.restrict(&hs, &(half..l.futures().len()).collect::<Vec<_>>())?,
            )
        }
        None => {
            notes.push("angles skipped: one future and no --compare".into());
            (l.clone(), l.clone())
        }
    };
    let mut angles = None;
    if !(args.compare.is_none() && l.futures().len() < 2) {
        let r = args.angle_rank;
        match (
            column_space(left.values(), r),
            column_space(right.values(), r),
        ) {
            (Ok(u), Ok(v)) => {
                let report = principal_angles(&u, &v)?;
                let seeds: Vec<u64> = (0..args.baseline_samples as u64)
                    .map(|i| derive_seed(args.seed, "analyze_angle_baseline", i))
                    .collect();
                let base = random_subspace_baseline(u.nrows(), r, &seeds)?;
                run.write_csv(
                    "angles.csv",
                    &["angle_index", "cosine", "random_baseline_mean"],
                    report
                        .cosines
                        .iter()
                        .zip(&base.mean)
                        .enumerate()
                        .map(|(i, (&c, &b))| vec![i.to_string(), num(c), num(b)]),
                )?;
                angles = Some(json!({ "cosines": report.cosines, "random_baseline": base }));
            }
            (Err(e), _) | (_, Err(e)) => notes.push(format!("angles skipped: {e}")),
        }
    }

    let rank = logitrank::linalg::numerical_rank(l.values(), logitrank::linalg::DEFAULT_RANK_TOL);
    run.write_json(
        "summary.json",
        &json!({
            "rows": l.nrows(),
            "cols": l.ncols(),
            "numerical_rank": rank,
            "power_law": fits[0],
            "rank1_baseline": baseline,
            "kl_curve": curve,
            "angles": angles,
            "notes": notes,
        }),
    )?;
    println!(
        "analyzed {} x {} matrix: numerical rank {rank}, {} singular values",
        l.nrows(),
        l.ncols(),
        s.len()
    );
    for n in &notes {
        println!("note: {n}");
    }
    Ok(())
}

/// Permutes until no sequence equals `target`, keeping the token multiset.
fn nonsense_avoiding(seqs: &[Sequence], target: &Sequence, seed: u64) -> CliResult<Vec<Sequence>> {
    for i in 0..1000u64 {
        let p = nonsense_permute(seqs, derive_seed(seed, "cli_nonsense", i));
        if !p.contains(target) {
            return Ok(p);
        }
    }
    Err(CliError::Usage(
        "could not permute histories away from the target".into(),
    ))
}

#[derive(Serialize)]
struct LingenResult<'a> {
    target: &'a Sequence,
    histories: &'a [Sequence],
    futures: &'a [Sequence],
    coefficients: Vec<f64>,
    coefficient_norm: f64,
    fit_residual: f64,
    /// per position, `KL(lingen ‖ true)` and `KL(true ‖ lingen)`
    kl: KlSummary,
    baseline: Option<KlSummary>,
}

#[derive(Serialize)]
struct KlSummary {
    forward: Vec<f64>,
    reverse: Vec<f64>,
    total_forward: f64,
    total_reverse: f64,
}

impl From<&KlReport> for KlSummary {
    fn from(r: &KlReport) -> Self {
        KlSummary {
            forward: r.forward.clone(),
            reverse: r.reverse.clone(),
            total_forward: r.total_forward,
            total_reverse: r.total_reverse,
        }
    }
}

pub fn lingen(args: &LingenArgs, run: &Run) -> CliResult<()> {
    let model = load(&args.model)?;
    let target = sequence_of(&args.target);
    model.alphabet().check(&target)?;
    let mut hs: Vec<Sequence> = expand(
        &args.histories,
        &model,
        args.seed,
        "cli_histories",
        args.budget,
    )?
    .into_iter()
    .filter(|h| *h != target)
    .collect();
    if hs.is_empty() {
        return Err(CliError::Usage(
            "no histories left after removing the target".into(),
        ));
    }
    if args.nonsense_histories {
        hs = nonsense_avoiding(&hs, &target, args.seed)?;
    }
    let mut fs = expand(&args.futures, &model, args.seed, "cli_futures", args.budget)?;
    if args.nonsense_futures {
        fs = nonsense_permute(&fs, derive_seed(args.seed, "cli_nonsense_futures", 0));
    }
    let coeffs = fit_from_oracle(&model, &hs, &fs, &target, args.ridge)?;
    let report = eval_per_token_kl(&model, &model, &coeffs, args.m, args.generations, args.seed)?;
    let baseline = if args.no_baseline {
        None
    } else {
        let b = single_token_baseline(&model, &hs, &target)?;
        Some(eval_per_token_kl(
            &model,
            &model,
            &b,
            args.m,
            args.generations,
            args.seed,
        )?)
    };
    run.write_csv(
        "kl.csv",
        &[
            "position",
            "kl_lingen_true",
            "kl_true_lingen",
            "baseline_kl_lingen_true",
            "baseline_kl_true_lingen",
        ],
        (0..args.m).map(|i| {
            vec![
                (i + 1).to_string(),
                num(report.forward[i]),
                num(report.reverse[i]),
                opt_num(baseline.as_ref().map(|b| b.forward[i])),
                opt_num(baseline.as_ref().map(|b| b.reverse[i])),
            ]
        }),
    )?;
    run.write_json(
        "lingen.json",
        &LingenResult {
            target: &target,
            histories: &hs,
            futures: &fs,
            coefficient_norm: coeffs.norm(),
            fit_residual: coeffs.fit_residual,
            coefficients: coeffs.v.clone(),
            kl: (&report).into(),
            baseline: baseline.as_ref().map(Into::into),
        },
    )?;
    println!(
        "lingen: total KL(lingen ‖ true) = {:.3e} over {} tokens",
        report.total_forward, args.m
    );
    if let Some(b) = &baseline {
        println!("single-token baseline: total KL = {:.3e}", b.total_forward);
    }
    Ok(())
}

pub fn steal_cmd(args: &StealArgs, run: &Run) -> CliResult<()> {
    let model = load(&args.model)?;
    let mut cfg = LearnerConfig::new(args.epsilon, args.d_max, args.seed);
    cfg.samples = args.samples;
    let res = steal(&model, &cfg)?;
    let path = run.path("learned.lrk")?;
    save_model(&res.model, &run.meta(), &path)?;
    let budget = args.budget as u128;
    let tv = match (
        model.exact_distribution(budget),
        res.model.exact_distribution(budget),
    ) {
        (Ok(p), Ok(q)) => Some(tv_distance(&p, &q)?),
        _ => None,
    };
    run.write_json(
        "steal.json",
        &json!({
            "queries": res.queries,
            "tv": tv,
            "learned_dim": res.model.hidden_dim(),
            "diagnostics": res.diagnostics,
        }),
    )?;
    println!("queries: {}", res.queries);
    println!("learned dimension: {}", res.model.hidden_dim());
    match tv {
        Some(tv) => println!("exact TV to the queried model: {tv:.3e}"),
        None => println!("exact TV skipped: enumeration over budget"),
    }
    Ok(())
}
