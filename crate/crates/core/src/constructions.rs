//! Explicit ISAN instances: copying, noisy parity, linear-in-state SSMs,
//! the time-invariant reduction and random fixtures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Alphabet, ExactDistribution, Isan, TimeVaryingIsan, Token};
use crate::rng::substream;

/// ISAN that samples `n` uniform bits and then repeats them.
///
/// Hidden dimension `n + 1`: coordinate `j` stores bit `j`, the last
/// coordinate is the constant 1. Each copied bit is wrong with probability
/// `1 / (1 + e^{C/2})`.
pub fn build_copying(n: usize, c: f64) -> Result<TimeVaryingIsan> {
    if n == 0 {
        return Err(Error::InvalidArgument("copying needs n >= 1".into()));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "copying needs C > 0, got {c}"
        )));
    }
    let d = n + 1;
    let alphabet = Alphabet::new(2)?;
    let mut x0 = DVector::zeros(d);
    x0[n] = 1.0;

    let mut transitions = Vec::with_capacity(2 * n - 1);
    for t in 1..=n {
        let step = (0..2)
            .map(|z| {
                let mut a = DMatrix::identity(d, d);
                // coordinate t-1 picks up z times the constant coordinate
                a[(t - 1, n)] = z as f64;
                a
            })
            .collect();
        transitions.push(step);
    }
    for _ in n + 1..2 * n {
        transitions.push(vec![DMatrix::identity(d, d); 2]);
    }

    let mut emissions = vec![DMatrix::zeros(2, d); n];
    for j in 0..n {
        let mut b = DMatrix::zeros(2, d);
        b[(0, n)] = c / 2.0;
        b[(1, j)] = c;
        emissions.push(b);
    }
    TimeVaryingIsan::new(alphabet, x0, transitions, emissions)
}

/// The ideal `n`-bit copying distribution over `{0,1}^{2n}`.
pub fn copying_reference(n: usize) -> Result<ExactDistribution> {
    let alphabet = Alphabet::new(2)?;
    let mut probs = vec![0.0; 1 << (2 * n)];
    for a in 0..(1usize << n) {
        probs[(a << n) | a] = 1.0 / (1u64 << n) as f64;
    }
    ExactDistribution::from_probs(alphabet, 2 * n, probs)
}

/// Noisy parity over `{0,1}^{n+1}`: `n` uniform bits `z`, then `<y,z> mod 2`
/// flipped with probability `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyParitySpec {
    pub y: Vec<u8>,
    pub p: f64,
}

impl NoisyParitySpec {
    pub fn new(y: Vec<u8>, p: f64) -> Result<Self> {
        let spec = NoisyParitySpec { y, p };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::InvalidArgument(
                "parity vector must be nonempty".into(),
            ));
        }
        if self.y.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument(
                "parity vector must be binary".into(),
            ));
        }
        if !(self.p > 0.0 && self.p < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must lie in (0, 1/2), got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Dimension-2 ISAN whose state is the one-hot parity of `<y_{1:t}, z_{1:t}>`.
pub fn build_noisy_parity(spec: &NoisyParitySpec) -> Result<TimeVaryingIsan> {
    spec.validate()?;
    let n = spec.y.len();
    let alphabet = Alphabet::new(2)?;
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let id = DMatrix::identity(2, 2);
    let transitions = spec
        .y
        .iter()
        .map(|&yt| vec![id.clone(), if yt == 1 { swap.clone() } else { id.clone() }])
        .collect();
    let mut emissions = vec![DMatrix::zeros(2, 2); n];
    let (keep, flip) = ((1.0 - spec.p).ln(), spec.p.ln());
    // column 0: parity 0, column 1: parity 1; rows are output tokens
    emissions.push(DMatrix::from_row_slice(2, 2, &[keep, flip, flip, keep]));
    TimeVaryingIsan::new(alphabet, x0, transitions, emissions)
}

/// Closed-form noisy parity distribution, straight from its definition.
pub fn noisy_parity_reference(spec: &NoisyParitySpec) -> Result<ExactDistribution> {
    spec.validate()?;
    let n = spec.y.len();
    let alphabet = Alphabet::new(2)?;
    let mut probs = vec![0.0; 1 << (n + 1)];
    let base = 1.0 / (1u64 << n) as f64;
    for z in 0..(1usize << n) {
        // bit i of the sequence (first token most significant)
        let parity = (0..n)
            .filter(|&i| spec.y[i] == 1 && (z >> (n - 1 - i)) & 1 == 1)
            .count()
            % 2;
        for b in 0..2 {
            let p = if b == parity { 1.0 - spec.p } else { spec.p };
            probs[(z << 1) | b] = base * p;
        }
    }
    ExactDistribution::from_probs(alphabet, n + 1, probs)
}

/// Input-dependent maps of a selective state-space layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmMaps {
    /// d x d
    pub a: DMatrix<f64>,
    /// d x p
    pub b: DMatrix<f64>,
    /// q x d
    pub c: DMatrix<f64>,
    /// q x p
    pub d: DMatrix<f64>,
}

/// Linear-in-state SSM with a softmax readout over tokens.
///
/// `x_t = A(u_t) x_{t-1} + B(u_t) u_t`, `y_t = C(u_t) x_{t-1} + D(u_t) u_t`,
/// `z_t ~ softmax(U y_t)`, `u_{t+1} = V e(z_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmSpec {
    pub alphabet: Alphabet,
    pub horizon: usize,
    /// p x |Σ|
    pub embedding: DMatrix<f64>,
    /// |Σ| x q
    pub readout: DMatrix<f64>,
    pub u1: DVector<f64>,
    pub x0: DVector<f64>,
    /// maps used when the input is `u1`
    pub initial_maps: SsmMaps,
    /// `token_maps[z]` is used when the input is `V e(z)`
    pub token_maps: Vec<SsmMaps>,
}

impl SsmSpec {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.embedding.nrows(), self.readout.ncols(), self.x0.len())
    }

    pub fn input_for(&self, z: Token) -> DVector<f64> {
        self.embedding.column(z as usize).into_owned()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q, d) = self.dims();
        let k = self.alphabet.size();
        let mut problems = Vec::new();
        if self.embedding.ncols() != k {
            problems.push(format!(
                "embedding has {} columns, alphabet {k}",
                self.embedding.ncols()
            ));
        }
        if self.readout.nrows() != k {
            problems.push(format!(
                "readout has {} rows, alphabet {k}",
                self.readout.nrows()
            ));
        }
        if self.u1.len() != p {
            problems.push(format!("u1 has length {}, input dim {p}", self.u1.len()));
        }
        if self.token_maps.len() != k {
            problems.push(format!(
                "{} token maps for alphabet {k}",
                self.token_maps.len()
            ));
        }
        for (i, m) in std::iter::once(&self.initial_maps)
            .chain(&self.token_maps)
            .enumerate()
        {
            let shapes = [
                ("A", m.a.shape(), (d, d)),
                ("B", m.b.shape(), (d, p)),
                ("C", m.c.shape(), (q, d)),
                ("D", m.d.shape(), (q, p)),
            ];
            for (name, got, want) in shapes {
                if got != want {
                    problems.push(format!("map set {i}: {name} is {got:?}, expected {want:?}"));
                }
            }
        }
        if self.horizon == 0 {
            problems.push("horizon must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Dimension(problems.join("; ")))
        }
    }
}

/// Embeds a linear-in-state SSM as a time-invariant ISAN of dimension
/// `d + 2q + 1`, with state `(x_t, C(u_t) x_{t-1}, D(u_t) u_t, 1)`.
pub fn embed_ssm(spec: &SsmSpec) -> Result<TimeVaryingIsan> {
    spec.validate()?;
    let (_, q, d) = spec.dims();
    let k = spec.alphabet.size();
    let dim = d + 2 * q + 1;
    let one = dim - 1;

    let m1 = &spec.initial_maps;
    let x1 = &m1.a * &spec.x0 + &m1.b * &spec.u1;
    let mut h0 = DVector::zeros(dim);
    h0.rows_mut(0, d).copy_from(&x1);
    h0.rows_mut(d, q).copy_from(&(&m1.c * &spec.x0));
    h0.rows_mut(d + q, q).copy_from(&(&m1.d * &spec.u1));
    h0[one] = 1.0;

    let per_token: Vec<DMatrix<f64>> = (0..k)
        .map(|z| {
            let u = spec.input_for(z as Token);
            let m = &spec.token_maps[z];
            let mut a = DMatrix::zeros(dim, dim);
            a.view_mut((0, 0), (d, d)).copy_from(&m.a);
            a.view_mut((0, one), (d, 1)).copy_from(&(&m.b * &u));
            a.view_mut((d, 0), (q, d)).copy_from(&m.c);
            a.view_mut((d + q, one), (q, 1)).copy_from(&(&m.d * &u));
            a[(one, one)] = 1.0;
            a
        })
        .collect();

    let mut b = DMatrix::zeros(k, dim);
    b.view_mut((0, d), (k, q)).copy_from(&spec.readout);
    b.view_mut((0, d + q), (k, q)).copy_from(&spec.readout);

    let steps = spec.horizon.saturating_sub(1);
    TimeVaryingIsan::new(
        spec.alphabet,
        h0,
        vec![per_token; steps],
        vec![b; spec.horizon],
    )
}

/// Random SSM spec with Gaussian maps scaled by `scale`.
pub fn random_ssm(
    alphabet: Alphabet,
    horizon: usize,
    (p, q, d): (usize, usize, usize),
    seed: u64,
    scale: f64,
) -> SsmSpec {
    let mut rng = substream(seed, "random_ssm", 0);
    let mut g = |r: usize, c: usize, s: f64| {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal) * s)
    };
    let k = alphabet.size();
    let sd = scale / (d as f64).sqrt();
    let embedding = g(p, k, 1.0);
    let readout = g(k, q, scale);
    let u1 = DVector::from_column_slice(g(p, 1, 1.0).as_slice());
    let x0 = DVector::from_column_slice(g(d, 1, 1.0).as_slice());
    let mut maps = |_: usize| SsmMaps {
        a: g(d, d, sd),
        b: g(d, p, scale),
        c: g(q, d, scale),
        d: g(q, p, scale),
    };
    let initial_maps = maps(0);
    let token_maps = (0..k).map(&mut maps).collect();
    SsmSpec {
        alphabet,
        horizon,
        embedding,
        readout,
        u1,
        x0,
        initial_maps,
        token_maps,
    }
}

/// Block-structured time-invariant ISAN of dimension `T d` generating the
/// same length-`T` distribution. Block `t` holds the state after `t` tokens.
pub fn time_invariant_reduction(model: &TimeVaryingIsan) -> Isan {
    let d = model.hidden_dim();
    let t_max = model.horizon();
    let k = model.alphabet().size();
    let dim = t_max * d;

    let transitions = (0..k as Token)
        .map(|z| {
            let mut a = DMatrix::zeros(dim, dim);
            for t in 1..t_max {
                a.view_mut((t * d, (t - 1) * d), (d, d))
                    .copy_from(model.transition(t, z));
            }
            a
        })
        .collect();
    let mut emission = DMatrix::zeros(k, dim);
    for t in 1..=t_max {
        emission
            .view_mut((0, (t - 1) * d), (k, d))
            .copy_from(model.emission(t));
    }
    let mut x0 = DVector::zeros(dim);
    x0.rows_mut(0, d).copy_from(model.x0());
    Isan {
        alphabet: model.alphabet(),
        x0,
        transitions,
        emission,
        horizon: t_max,
    }
}

/// Random fixture: `A` entries `N(0,1) * scale/sqrt(d)`, `B` entries
/// `N(0,1) * scale`, `x0 = e_1`.
pub fn random_isan(
    d: usize,
    alphabet: Alphabet,
    horizon: usize,
    seed: u64,
    scale: f64,
) -> Result<TimeVaryingIsan> {
    if d == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("random_isan needs d, T >= 1".into()));
    }
    let mut rng = substream(seed, "random_isan", 0);
    let k = alphabet.size();
    let sa = scale / (d as f64).sqrt();
    let transitions = (1..horizon)
        .map(|_| {
            (0..k)
                .map(|_| DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) * sa))
                .collect()
        })
        .collect();
    let emissions = (0..horizon)
        .map(|_| DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale))
        .collect();
    let mut x0 = DVector::zeros(d);
    x0[0] = 1.0;
    TimeVaryingIsan::new(alphabet, x0, transitions, emissions)
}

/// Random ISAN whose emissions all have rank one (`B_t = b cᵀ`), so that
/// single-token logit matrices have rank at most one while extended ones do
/// not.
pub fn random_rank_one_emission_isan(
    d: usize,
    alphabet: Alphabet,
    horizon: usize,
    seed: u64,
    scale: f64,
) -> Result<TimeVaryingIsan> {
    let base = random_isan(d, alphabet, horizon, seed, scale)?;
    let mut rng = substream(seed, "rank_one_emission", 0);
    let k = alphabet.size();
    let b = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    let c = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let emission = &b * c.transpose();
    let transitions = (1..horizon)
        .map(|t| {
            (0..k as Token)
                .map(|z| base.transition(t, z).clone())
                .collect()
        })
        .collect();
    // x0 is generic so that c'x0 is not special
    let x0 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    TimeVaryingIsan::new(alphabet, x0, transitions, vec![emission; horizon])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{exact_continuations, tv_distance};

    const BUDGET: u128 = 1 << 20;

    #[test]
    fn copying_one_bit_error_matches_logistic_tail() {
        let m = build_copying(1, 30.0).unwrap();
        let tv = tv_distance(
            &m.exact_distribution(BUDGET).unwrap(),
            &copying_reference(1).unwrap(),
        )
        .unwrap();
        let per_bit = 1.0 / (1.0 + 15f64.exp());
        assert!((tv - per_bit).abs() < 1e-12, "tv = {tv}");
        assert!((tv - 3.06e-7).abs() < 1e-9);
    }

    #[test]
    fn copying_shape() {
        let m = build_copying(3, 30.0).unwrap();
        assert_eq!(m.hidden_dim(), 4);
        assert_eq!(m.horizon(), 6);
        let tv = tv_distance(
            &m.exact_distribution(BUDGET).unwrap(),
            &copying_reference(3).unwrap(),
        )
        .unwrap();
        assert!(tv <= 1e-5);
    }

    #[test]
    fn copying_with_tiny_c_is_nearly_uniform() {
        let m = build_copying(2, 1e-9).unwrap();
        let d = m.exact_distribution(BUDGET).unwrap();
        for first in 0..4usize {
            let row: Vec<f64> = (0..4)
                .map(|second| d.probs()[(first << 2) | second])
                .collect();
            let total: f64 = row.iter().sum();
            for p in row {
                assert!((p / total - 0.25).abs() < 0.02);
            }
        }
    }

    #[test]
    fn copying_rejects_bad_args() {
        assert!(build_copying(0, 1.0).is_err());
        assert!(build_copying(2, 0.0).is_err());
        assert!(build_copying(2, -1.0).is_err());
    }

    #[test]
    fn noisy_parity_matches_definition() {
        let spec = NoisyParitySpec::new(vec![1, 0, 1], 0.1).unwrap();
        let m = build_noisy_parity(&spec).unwrap();
        assert_eq!(m.hidden_dim(), 2);
        assert_eq!(m.horizon(), 4);
        let d = m.exact_distribution(BUDGET).unwrap();
        let reference = noisy_parity_reference(&spec).unwrap();
        assert!(tv_distance(&d, &reference).unwrap() <= 1e-12);
        // z = (1,1,0): <y,z> = 1
        assert!((d.prob(&[1, 1, 0, 1]) - 0.125 * 0.9).abs() < 1e-15);
        assert!((d.prob(&[1, 1, 0, 0]) - 0.125 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn noisy_parity_all_zero_vector() {
        let spec = NoisyParitySpec::new(vec![0, 0, 0], 0.2).unwrap();
        let d = build_noisy_parity(&spec)
            .unwrap()
            .exact_distribution(BUDGET)
            .unwrap();
        for (seq, p) in d.iter() {
            let want = 0.125 * if seq[3] == 0 { 0.8 } else { 0.2 };
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn noisy_parity_near_half() {
        let spec = NoisyParitySpec::new(vec![1, 1], 0.499).unwrap();
        let d = build_noisy_parity(&spec)
            .unwrap()
            .exact_distribution(BUDGET)
            .unwrap();
        let tv: f64 = 0.5 * d.probs().iter().map(|p| (p - 0.125).abs()).sum::<f64>();
        assert!(tv <= 0.002);
    }

    #[test]
    fn noisy_parity_rejects_bad_p() {
        assert!(NoisyParitySpec::new(vec![1], 0.5).is_err());
        assert!(NoisyParitySpec::new(vec![1], 0.0).is_err());
        assert!(NoisyParitySpec::new(vec![2], 0.1).is_err());
    }

    #[test]
    fn reduction_initial_state_and_distribution() {
        let a = Alphabet::new(2).unwrap();
        let m = random_isan(2, a, 3, 5, 1.0).unwrap();
        let r = time_invariant_reduction(&m);
        assert_eq!(r.hidden_dim(), 6);
        assert_eq!(r.x0.rows(0, 2), m.x0().rows(0, 2));
        assert!(r.x0.rows(2, 4).iter().all(|&x| x == 0.0));
        let p = m.exact_distribution(BUDGET).unwrap();
        let q = exact_continuations(&r, &[], 3, BUDGET).unwrap();
        assert!(tv_distance(&p, &q).unwrap() <= 1e-10);
    }

    #[test]
    fn random_isan_is_deterministic_and_scales() {
        let a = Alphabet::new(3).unwrap();
        assert_eq!(
            random_isan(2, a, 4, 9, 1.0).unwrap(),
            random_isan(2, a, 4, 9, 1.0).unwrap()
        );
        assert_ne!(
            random_isan(2, a, 4, 9, 1.0).unwrap(),
            random_isan(2, a, 4, 10, 1.0).unwrap()
        );
        let flat = random_isan(2, a, 4, 9, 0.0).unwrap();
        for (_, p) in flat.exact_distribution(BUDGET).unwrap().iter() {
            assert!((p - 1.0 / 81.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ssm_embedding_with_zero_readout_maps_is_uniform() {
        let a = Alphabet::new(2).unwrap();
        let mut spec = random_ssm(a, 3, (2, 2, 2), 1, 1.0);
        for m in std::iter::once(&mut spec.initial_maps).chain(spec.token_maps.iter_mut()) {
            m.c.fill(0.0);
            m.d.fill(0.0);
        }
        let e = embed_ssm(&spec).unwrap();
        assert_eq!(e.hidden_dim(), 2 + 2 * 2 + 1);
        for (_, p) in e.exact_distribution(BUDGET).unwrap().iter() {
            assert!((p - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn ssm_embedding_is_time_invariant() {
        let a = Alphabet::new(3).unwrap();
        let spec = random_ssm(a, 4, (2, 3, 2), 2, 1.0);
        assert!(embed_ssm(&spec).unwrap().is_time_invariant());
    }

    #[test]
    fn ssm_spec_shape_errors() {
        let a = Alphabet::new(2).unwrap();
        let mut spec = random_ssm(a, 3, (2, 2, 2), 1, 1.0);
        spec.token_maps[1].c = DMatrix::zeros(3, 2);
        assert!(matches!(embed_ssm(&spec), Err(Error::Dimension(_))));
    }
}
