use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};

use logitrank::logit_matrix::ColumnSelector;
use logitrank::model::{Sequence, Token};

#[derive(Debug, Parser)]
#[command(
    name = "logitrank",
    version,
    about = "Low-rank logit analysis, linear generation and logit-query learning"
)]
pub struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, env = "LOGITRANK_OUT", default_value = ".", global = true)]
    pub out_dir: PathBuf,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a model file from a construction.
    MakeModel(MakeModelArgs),
    /// Query a model and save an extended logit matrix (.elm).
    BuildMatrix(BuildMatrixArgs),
    /// Spectrum, power-law fit, low-rank KL curve and principal angles of a matrix.
    Analyze(AnalyzeArgs),
    /// Generate from a linear combination of other histories' logits.
    Lingen(LingenArgs),
    /// Learn a model from logit queries to another model.
    Steal(StealArgs),
    /// Run the theorem checks, optionally against a model file.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Copying,
    NoisyParity,
    Random,
    RankOneEmission,
    Ssm,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeModelArgs {
    #[arg(long, value_enum)]
    pub kind: ModelKind,
    /// copying: number of bits
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// copying: logit scale
    #[arg(long, default_value_t = 30.0)]
    pub c: f64,
    /// noisy parity: comma-separated 0/1 mask
    #[arg(long, value_parser = parse_tokens)]
    pub y: Option<TokenList>,
    /// noisy parity: flip probability
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub alphabet: usize,
    #[arg(long, default_value_t = 4)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// ssm: input, readout and state dimensions as p,q,d
    #[arg(long, value_parser = parse_tokens, default_value = "2,2,2")]
    pub ssm_dims: TokenList,
    #[arg(short, long, default_value = "model.lrk")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildMatrixArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// all:T | closure:L | sample:T:N | file:PATH | null
    #[arg(long)]
    pub histories: SeqSource,
    #[arg(long)]
    pub futures: SeqSource,
    /// all | top-k:K | random-k:K
    #[arg(long, default_value = "all")]
    pub selector: SelectorArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// largest enumeration allowed when expanding sources
    #[arg(long, default_value_t = 1 << 22)]
    pub budget: u64,
    #[arg(short, long, default_value = "matrix.elm")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    /// model used for the rank-1 baseline when the matrix has no Null row
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// second matrix (same histories) for principal angles
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub ranks: Vec<usize>,
    /// subspace dimension for principal angles
    #[arg(long, default_value_t = 2)]
    pub angle_rank: usize,
    /// random subspace pairs for the angle baseline
    #[arg(long, default_value_t = 100)]
    pub baseline_samples: usize,
    /// compute only the top R singular values with a randomized SVD
    #[arg(long)]
    pub randomized_rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long, default_value = "analysis")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LingenArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// target history, comma-separated tokens
    #[arg(long, value_parser = parse_tokens)]
    pub target: TokenList,
    #[arg(long)]
    pub histories: SeqSource,
    #[arg(long, default_value = "closure:2")]
    pub futures: SeqSource,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// tokens to generate
    #[arg(short, long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    #[arg(long)]
    pub nonsense_histories: bool,
    #[arg(long)]
    pub nonsense_futures: bool,
    /// skip the single-token baseline
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1 << 22)]
    pub budget: u64,
    #[arg(short, long, default_value = "lingen")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StealArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 4)]
    pub d_max: usize,
    /// prefix samples per step; default from epsilon, d_max and T
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// enumeration budget for the TV report
    #[arg(long, default_value_t = 1 << 20)]
    pub budget: u64,
    #[arg(short, long, default_value = "steal")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// small subset of each check
    #[arg(long)]
    pub quick: bool,
    /// also check this model file
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long, default_value = "verify")]
    pub output: PathBuf,
}

/// Comma- or space-separated tokens; empty means `Null`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenList(pub Vec<Token>);

impl Serialize for TokenList {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

pub fn parse_tokens(s: &str) -> Result<TokenList, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<Token>()
                .map_err(|e| format!("bad token {p:?}: {e}"))
        })
        .collect::<Result<_, _>>()
        .map(TokenList)
}

/// Where a list of sequences comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SeqSource {
    /// every sequence of length `t`
    All(usize),
    /// every sequence of length `0..=l`
    Closure(usize),
    /// `n` prefix samples of length `t` from the model, deduplicated
    Sample(usize, usize),
    /// one sequence per line
    File(PathBuf),
    Null,
}

impl FromStr for SeqSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |x: &str| x.parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
        let parts: Vec<&str> = s.splitn(2, ':').collect();
        match parts.as_slice() {
            ["null"] => Ok(SeqSource::Null),
            ["all", t] => Ok(SeqSource::All(num(t)?)),
            ["closure", l] => Ok(SeqSource::Closure(num(l)?)),
            ["file", p] => Ok(SeqSource::File(PathBuf::from(p))),
            ["sample", rest] => match rest.split_once(':') {
                Some((t, n)) => Ok(SeqSource::Sample(num(t)?, num(n)?)),
                None => Err(format!("{s:?}: expected sample:T:N")),
            },
            _ => Err(format!(
                "{s:?}: expected all:T, closure:L, sample:T:N, file:PATH or null"
            )),
        }
    }
}

impl fmt::Display for SeqSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqSource::All(t) => write!(f, "all:{t}"),
            SeqSource::Closure(l) => write!(f, "closure:{l}"),
            SeqSource::Sample(t, n) => write!(f, "sample:{t}:{n}"),
            SeqSource::File(p) => write!(f, "file:{}", p.display()),
            SeqSource::Null => write!(f, "null"),
        }
    }
}

impl Serialize for SeqSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectorArg {
    All,
    TopK(usize),
    RandomK(usize),
}

impl SelectorArg {
    pub fn resolve(self, seed: u64) -> ColumnSelector {
        match self {
            SelectorArg::All => ColumnSelector::All,
            SelectorArg::TopK(k) => ColumnSelector::TopK { k },
            SelectorArg::RandomK(k) => ColumnSelector::RandomK { k, seed },
        }
    }
}

impl FromStr for SelectorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let k = |x: &str| x.parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
        match s.split_once(':') {
            None if s == "all" => Ok(SelectorArg::All),
            Some(("top-k", n)) => Ok(SelectorArg::TopK(k(n)?)),
            Some(("random-k", n)) => Ok(SelectorArg::RandomK(k(n)?)),
            _ => Err(format!("{s:?}: expected all, top-k:K or random-k:K")),
        }
    }
}

impl fmt::Display for SelectorArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectorArg::All => write!(f, "all"),
            SelectorArg::TopK(k) => write!(f, "top-k:{k}"),
            SelectorArg::RandomK(k) => write!(f, "random-k:{k}"),
        }
    }
}

impl Serialize for SelectorArg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn sequence_of(tokens: &TokenList) -> Sequence {
    Sequence(tokens.0.clone())
}
