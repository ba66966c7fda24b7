//! Spectra, truncation, power-law fits, average KL and principal angles.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::logit_matrix::LogitMatrix;
use crate::model::{prob, LogitOracle};
use crate::rng::substream;

/// Full spectrum, nonincreasing. With `normalized`, divided by
/// `sqrt(rows * cols)`.
pub fn singular_values(m: &DMatrix<f64>, normalized: bool) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::InvalidArgument(
            "empty matrix has no spectrum".into(),
        ));
    }
    linalg::ensure_finite(m, "matrix entries")?;
    let mut s = linalg::singular_values(m);
    if normalized {
        let scale = ((m.nrows() * m.ncols()) as f64).sqrt();
        s.iter_mut().for_each(|x| *x /= scale);
    }
    Ok(s)
}

/// Best rank-`r` approximation in Frobenius norm (exact SVD).
pub fn truncate_rank(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let k = m.nrows().min(m.ncols());
    if r == 0 || r > k {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={k}")));
    }
    linalg::ensure_finite(m, "matrix entries")?;
    let d = linalg::svd(m);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..r {
        out += d.u.column(i) * d.v_t.row(i) * d.singular_values[i];
    }
    Ok(out)
}

/// `sigma_i ≈ C i^{-alpha}` with a second covariate `log((n-i)/n)` whose
/// coefficient is `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    /// weighted RMS of the log-space residuals
    pub residual: f64,
    pub n: usize,
    /// fit indices dropped because the singular value was zero
    pub skipped: Vec<usize>,
}

/// Weighted least squares on `log sigma_i` against
/// `(log(i/n), log((n-i)/n))`, weights `1/i`, for `i = 1..n-1`, where the
/// largest singular value is dropped and the rest are re-indexed from 1.
/// `n` is the number of rows (the smaller dimension).
pub fn fit_power_law(singvals: &[f64], n_rows: usize) -> Result<PowerLawFit> {
    if singvals.len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "power-law fit needs at least 8 singular values, got {}",
            singvals.len()
        )));
    }
    if n_rows < singvals.len() {
        return Err(Error::InvalidArgument(format!(
            "n = {n_rows} is smaller than the spectrum length {}",
            singvals.len()
        )));
    }
    if singvals.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::NonFinite("singular values"));
    }
    let n = n_rows as f64;
    let mut pts = Vec::new();
    let mut skipped = Vec::new();
    for (i, &s) in singvals.iter().enumerate().skip(1) {
        if i >= n_rows {
            break;
        }
        if s <= 0.0 {
            skipped.push(i);
            continue;
        }
        let fi = i as f64;
        pts.push(((fi / n).ln(), ((n - fi) / n).ln(), s.ln(), 1.0 / fi));
    }
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(
            "too few positive singular values to fit".into(),
        ));
    }
    let wsum: f64 = pts.iter().map(|p| p.3).sum();
    let mean = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| {
        pts.iter().map(|p| p.3 * f(p)).sum::<f64>() / wsum
    };
    let (m1, m2, my) = (mean(&|p| p.0), mean(&|p| p.1), mean(&|p| p.2));
    let mut xtx = Matrix2::zeros();
    let mut xty = Vector2::zeros();
    for &(a, b, y, w) in &pts {
        let x = Vector2::new(a - m1, b - m2);
        xtx += x * x.transpose() * w;
        xty += x * ((y - my) * w);
    }
    let slopes = xtx
        .lu()
        .solve(&xty)
        .ok_or_else(|| Error::InvalidArgument("power-law covariates are collinear".into()))?;
    let intercept = my - slopes[0] * m1 - slopes[1] * m2;
    let alpha = -slopes[0];
    let beta = slopes[1];
    let rss: f64 = pts
        .iter()
        .map(|&(a, b, y, w)| w * (y - intercept - slopes[0] * a - slopes[1] * b).powi(2))
        .sum();
    Ok(PowerLawFit {
        c: (intercept + alpha * n.ln()).exp(),
        alpha,
        beta,
        residual: (rss / wsum).sqrt(),
        n: n_rows,
        skipped,
    })
}

/// Relative Frobenius error of the best rank-`r` approximation, from a
/// spectrum.
pub fn error_curve_from_spectrum(s: &[f64], ranks: &[usize]) -> Vec<(usize, f64)> {
    let total: f64 = s.iter().map(|x| x * x).sum();
    // suffix sums so each rank is O(1)
    let mut tail = vec![0.0; s.len() + 1];
    for i in (0..s.len()).rev() {
        tail[i] = tail[i + 1] + s[i] * s[i];
    }
    ranks
        .iter()
        .map(|&r| {
            let t = tail[r.min(s.len())];
            let e = if total > 0.0 { (t / total).sqrt() } else { 0.0 };
            (r, e)
        })
        .collect()
}

pub fn low_rank_error_curve(m: &DMatrix<f64>, ranks: &[usize]) -> Result<Vec<(usize, f64)>> {
    Ok(error_curve_from_spectrum(
        &singular_values(m, false)?,
        ranks,
    ))
}

/// Mean over `(history, future)` blocks of
/// `KL(softmax(L_{h,f}) || softmax(A_{h,f}))`, each softmax taken over the
/// stored columns of that future.
pub fn avg_kl(l: &LogitMatrix, a: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != l.values().shape() {
        return Err(Error::Dimension(format!(
            "approximation is {:?}, matrix is {:?}",
            a.shape(),
            l.values().shape()
        )));
    }
    let groups = l.groups();
    let blocks = l.nrows() * groups.len();
    if blocks == 0 {
        return Ok(0.0);
    }
    let v = l.values();
    let kls: Vec<f64> = (0..l.nrows())
        .into_par_iter()
        .map(|i| {
            groups
                .iter()
                .map(|(_, r)| {
                    let p: Vec<f64> = r.clone().map(|c| v[(i, c)]).collect();
                    let q: Vec<f64> = r.clone().map(|c| a[(i, c)]).collect();
                    prob::kl_of_logits(&p, &q)
                })
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok(kls.iter().sum::<f64>() / blocks as f64)
}

/// `½‖L − A‖_F² / (|H| |F|)`, an upper bound on [`avg_kl`].
pub fn frobenius_kl_bound(l: &LogitMatrix, a: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != l.values().shape() {
        return Err(Error::Dimension("shape mismatch".into()));
    }
    let blocks = l.nrows() * l.groups().len();
    if blocks == 0 {
        return Ok(0.0);
    }
    Ok(0.5 * (l.values() - a).norm_squared() / blocks as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub rank: usize,
    pub avg_kl: f64,
    pub frobenius_bound: f64,
}

/// Average KL and its Frobenius bound for the rank-`r` truncation at each
/// requested rank. Ranks beyond the smaller dimension are clamped.
pub fn kl_curve(l: &LogitMatrix, ranks: &[usize]) -> Result<Vec<KlPoint>> {
    let k = l.nrows().min(l.ncols());
    if k == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let d = linalg::svd(l.values());
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let r = r.clamp(1, k);
        let mut a = DMatrix::zeros(l.nrows(), l.ncols());
        for i in 0..r {
            a += d.u.column(i) * d.v_t.row(i) * d.singular_values[i];
        }
        out.push(KlPoint {
            rank: r,
            avg_kl: avg_kl(l, &a)?,
            frobenius_bound: frobenius_kl_bound(l, &a)?,
        });
    }
    Ok(out)
}

/// Logits of each stored column at the future alone (`L({Null}, F)`).
pub fn null_history_row<O: LogitOracle + ?Sized>(l: &LogitMatrix, oracle: &O) -> Result<Vec<f64>> {
    let per_future: Vec<Vec<f64>> = l
        .futures()
        .par_iter()
        .map(|f| oracle.logits(f).map(|v| v.values))
        .collect::<Result<_>>()?;
    Ok(l.columns()
        .iter()
        .map(|&(fi, z)| per_future[fi][z as usize])
        .collect())
}

/// [`avg_kl`] of `L` against the matrix whose rows all equal `row`.
pub fn rank1_baseline_from_row(l: &LogitMatrix, row: &[f64]) -> Result<f64> {
    if row.len() != l.ncols() {
        return Err(Error::Dimension(format!(
            "baseline row has {} entries, matrix has {} columns",
            row.len(),
            l.ncols()
        )));
    }
    let a = DMatrix::from_fn(l.nrows(), l.ncols(), |_, j| row[j]);
    avg_kl(l, &a)
}

/// Predicts every history with the future's own next-token distribution.
pub fn rank1_baseline<O: LogitOracle + ?Sized>(l: &LogitMatrix, oracle: &O) -> Result<f64> {
    rank1_baseline_from_row(l, &null_history_row(l, oracle)?)
}

/// Cosines of the principal angles, nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub cosines: Vec<f64>,
}

impl AngleReport {
    pub fn mean(&self) -> f64 {
        if self.cosines.is_empty() {
            return 0.0;
        }
        self.cosines.iter().sum::<f64>() / self.cosines.len() as f64
    }
}

const ORTHONORMAL_TOL: f64 = 1e-8;

pub fn principal_angles(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<AngleReport> {
    if u.nrows() != v.nrows() {
        return Err(Error::Dimension(format!(
            "ambient dimensions differ: {} vs {}",
            u.nrows(),
            v.nrows()
        )));
    }
    for b in [u, v] {
        let dev = linalg::gram_deviation(b);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal { deviation: dev });
        }
    }
    let cosines = linalg::singular_values(&(u.transpose() * v))
        .into_iter()
        .map(|c| c.clamp(0.0, 1.0))
        .collect();
    Ok(AngleReport { cosines })
}

/// Top-`r` left singular vectors. Errors when `r` exceeds the numerical rank.
pub fn column_space(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    linalg::ensure_finite(m, "matrix entries")?;
    let d = linalg::svd(m);
    let rank = linalg::rank_of_spectrum(&d.singular_values, DEFAULT_RANK_TOL);
    if r > rank || r == 0 {
        return Err(Error::RankDeficient { requested: r, rank });
    }
    Ok(d.u.columns(0, r).into_owned())
}

/// Orthonormal basis of a uniformly random `r`-dimensional subspace.
pub fn random_subspace(ambient: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, "random_subspace", 0);
    let g = DMatrix::from_fn(ambient, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    linalg::orthonormalize(&g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBaseline {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
    pub samples: usize,
}

/// Principal-angle cosines between pairs of independent random
/// `r`-subspaces, summarized per angle index.
pub fn random_subspace_baseline(
    ambient: usize,
    r: usize,
    seeds: &[u64],
) -> Result<SubspaceBaseline> {
    if r == 0 || r > ambient {
        return Err(Error::InvalidArgument(format!(
            "subspace dimension {r} outside 1..={ambient}"
        )));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let profiles: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = substream(s, "subspace_pair", 0);
            let a: u64 = rng.random();
            let b: u64 = rng.random();
            principal_angles(
                &random_subspace(ambient, r, a),
                &random_subspace(ambient, r, b),
            )
            .map(|rep| rep.cosines)
        })
        .collect::<Result<_>>()?;
    let n = profiles.len() as f64;
    let quantile =
        |sorted: &[f64], q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    let mut out = SubspaceBaseline {
        mean: Vec::with_capacity(r),
        std: Vec::with_capacity(r),
        q05: Vec::with_capacity(r),
        q50: Vec::with_capacity(r),
        q95: Vec::with_capacity(r),
        samples: profiles.len(),
    };
    for j in 0..r {
        let mut col: Vec<f64> = profiles.iter().map(|p| p[j]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        col.sort_by(f64::total_cmp);
        out.mean.push(mean);
        out.std.push(var.sqrt());
        out.q05.push(quantile(&col, 0.05));
        out.q50.push(quantile(&col, 0.5));
        out.q95.push(quantile(&col, 0.95));
    }
    Ok(out)
}

/// Randomized range-finder SVD returning the top `r` triplets.
pub fn randomized_svd(
    m: &DMatrix<f64>,
    r: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<linalg::SortedSvd> {
    let k = m.nrows().min(m.ncols());
    if r == 0 || r > k {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={k}")));
    }
    linalg::ensure_finite(m, "matrix entries")?;
    let l = (r + oversample).min(k);
    let mut rng = substream(seed, "randomized_svd", 0);
    let omega = DMatrix::from_fn(m.ncols(), l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = linalg::orthonormalize(&(m * omega));
    for _ in 0..power_iters {
        let z = linalg::orthonormalize(&(m.transpose() * &q));
        q = linalg::orthonormalize(&(m * z));
    }
    let small = q.transpose() * m;
    let d = linalg::svd(&small);
    Ok(linalg::SortedSvd {
        u: (&q * d.u).columns(0, r).into_owned(),
        singular_values: d.singular_values[..r].to_vec(),
        v_t: d.v_t.rows(0, r).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::random_isan;
    use crate::logit_matrix::{full_future_closure, ColumnSelector};
    use crate::model::{all_sequences, Alphabet, Sequence};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest};

    fn power_spectrum(alpha: f64, scale: f64, n: usize) -> Vec<f64> {
        // the leading value is dropped by the fit; the rest are re-indexed from 1
        let mut s = vec![100.0 * scale];
        s.extend((1..n).map(|i| scale * (i as f64).powf(-alpha)));
        s
    }

    #[test]
    fn identity_spectrum() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(singular_values(&i3, false).unwrap(), vec![1.0; 3]);
        for s in singular_values(&i3, true).unwrap() {
            assert_abs_diff_eq!(s, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rank_one_spectrum() {
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let v = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let s = singular_values(&(&u * v.transpose()), false).unwrap();
        assert_abs_diff_eq!(s[0], 15.0, epsilon = 1e-12);
        assert!(s[1] < 1e-12);
    }

    #[test]
    fn random_isan_spectrum_has_rank_two() {
        let a = Alphabet::new(2).unwrap();
        let m = random_isan(2, a, 5, 3, 1.0).unwrap();
        let l = LogitMatrix::build(
            &m,
            &all_sequences(a, 2, 100).unwrap(),
            &full_future_closure(a, 2, 100).unwrap(),
            ColumnSelector::All,
        )
        .unwrap();
        let s = singular_values(l.values(), false).unwrap();
        assert!(s[2] / s[0] <= 1e-8);
    }

    #[test]
    fn truncation_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let t = truncate_rank(&d, 2).unwrap();
        assert_abs_diff_eq!((&d - &t).norm(), 1.0, epsilon = 1e-12);
        assert!((&d - truncate_rank(&d, 3).unwrap()).norm() < 1e-9);
        assert!(truncate_rank(&d, 0).is_err());
        assert!(truncate_rank(&d, 4).is_err());
    }

    #[test]
    fn power_law_recovers_exponents() {
        for (alpha, scale) in [(0.6, 2.0), (1.0, 1.0)] {
            let s = power_spectrum(alpha, scale, 200);
            let fit = fit_power_law(&s, 200).unwrap();
            assert_abs_diff_eq!(fit.alpha, alpha, epsilon = 1e-6);
            assert_abs_diff_eq!(fit.beta, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(fit.c, scale, epsilon = 1e-6);
            assert!(fit.residual < 1e-9);
        }
    }

    #[test]
    fn power_law_skips_zeros_and_rejects_short() {
        let mut s = power_spectrum(0.6, 2.0, 50);
        s[49] = 0.0;
        let fit = fit_power_law(&s, 50).unwrap();
        assert_eq!(fit.skipped, vec![49]);
        assert_abs_diff_eq!(fit.alpha, 0.6, epsilon = 1e-6);
        assert!(fit_power_law(&s[..7], 7).is_err());
    }

    #[test]
    fn error_curve_tail_sums() {
        let s: Vec<f64> = (1..=1000).map(|i| 1.0 / i as f64).collect();
        let curve = error_curve_from_spectrum(&s, &[10, 1000]);
        let tail: f64 = (11..=1000).map(|i| (i as f64).powi(-2)).sum();
        let total: f64 = (1..=1000).map(|i| (i as f64).powi(-2)).sum();
        assert_abs_diff_eq!(curve[0].1, (tail / total).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(curve[0].1, 0.2393, epsilon = 1e-3);
        assert_eq!(curve[1].1, 0.0);

        let flat: Vec<f64> = (1..=1000).map(|i| (i as f64).powf(-0.3)).collect();
        assert!(error_curve_from_spectrum(&flat, &[250])[0].1 >= 0.3);
    }

    fn toy_matrix(seed: u64) -> LogitMatrix {
        let a = Alphabet::new(3).unwrap();
        let m = random_isan(3, a, 4, seed, 1.5).unwrap();
        LogitMatrix::build(
            &m,
            &all_sequences(a, 1, 100)
                .unwrap()
                .into_iter()
                .chain([Sequence::from(vec![0, 1])])
                .collect::<Vec<_>>(),
            &[Sequence::null(), Sequence::from(vec![2])],
            ColumnSelector::All,
        )
        .unwrap()
    }

    #[test]
    fn avg_kl_single_cell() {
        let l = toy_matrix(1);
        assert_eq!(avg_kl(&l, l.values()).unwrap(), 0.0);
        let mut a = l.values().clone();
        a[(2, 4)] += 0.1;
        let p: Vec<f64> = (3..6).map(|c| l.values()[(2, c)]).collect();
        let q: Vec<f64> = (3..6).map(|c| a[(2, c)]).collect();
        let (sp, sq) = (prob::softmax(&p).unwrap(), prob::softmax(&q).unwrap());
        let hand: f64 = sp.iter().zip(&sq).map(|(x, y)| x * (x / y).ln()).sum();
        assert_abs_diff_eq!(avg_kl(&l, &a).unwrap(), hand / 8.0, epsilon = 1e-9);
        assert!(avg_kl(&l, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn kl_curve_is_bounded_and_hits_zero() {
        let l = toy_matrix(2);
        let curve = kl_curve(&l, &[1, 2, 4]).unwrap();
        for p in &curve {
            assert!(p.avg_kl <= p.frobenius_bound + 1e-12);
        }
        assert!(curve[2].avg_kl < 1e-12);
    }

    #[test]
    fn rank1_baseline_examples() {
        let a = Alphabet::new(2).unwrap();
        let flat = random_isan(2, a, 4, 0, 0.0).unwrap();
        let h = all_sequences(a, 1, 100).unwrap();
        let f = full_future_closure(a, 1, 100).unwrap();
        let l = LogitMatrix::build(&flat, &h, &f, ColumnSelector::All).unwrap();
        assert_eq!(rank1_baseline(&l, &flat).unwrap(), 0.0);

        let m = random_isan(2, a, 5, 4, 1.0).unwrap();
        let h = all_sequences(a, 2, 100).unwrap();
        let f = full_future_closure(a, 2, 100).unwrap();
        let l = LogitMatrix::build(&m, &h, &f, ColumnSelector::All).unwrap();
        let base = rank1_baseline(&l, &m).unwrap();
        let at2 = kl_curve(&l, &[2]).unwrap()[0].avg_kl;
        assert!(base + 1e-9 >= at2);
    }

    #[test]
    fn angle_examples() {
        let e = DMatrix::<f64>::identity(4, 4);
        let u = e.columns(0, 2).into_owned();
        let w = e.columns(2, 2).into_owned();
        for c in principal_angles(&u, &u).unwrap().cosines {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-10);
        }
        for c in principal_angles(&u, &w).unwrap().cosines {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-10);
        }
        let bad = DMatrix::from_element(4, 1, 1.0);
        assert!(matches!(
            principal_angles(&bad, &u),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn column_space_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let b = column_space(&d, 2).unwrap();
        assert_abs_diff_eq!(b[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[(2, 1)].abs(), 1.0, epsilon = 1e-12);

        let r2 = DMatrix::from_fn(5, 4, |i, j| (i + j) as f64 + (i * j) as f64);
        let b = column_space(&r2, 2).unwrap();
        let proj = &b * b.transpose() * &r2;
        assert!((proj - &r2).amax() < 1e-9);
        assert!(matches!(
            column_space(&r2, 3),
            Err(Error::RankDeficient { rank: 2, .. })
        ));
    }

    #[test]
    fn subspace_baseline_examples() {
        let full = random_subspace_baseline(6, 6, &[1, 2, 3]).unwrap();
        for m in full.mean {
            assert_abs_diff_eq!(m, 1.0, epsilon = 1e-10);
        }
        let seeds: Vec<u64> = (0..50).collect();
        let wide = random_subspace_baseline(10_000, 1, &seeds).unwrap();
        assert!(wide.mean[0] <= 0.03);
        assert_eq!(
            random_subspace_baseline(20, 3, &seeds).unwrap(),
            random_subspace_baseline(20, 3, &seeds).unwrap()
        );
    }

    #[test]
    fn randomized_svd_matches_exact_on_low_rank() {
        let l = toy_matrix(3);
        let exact = singular_values(l.values(), false).unwrap();
        let approx = randomized_svd(l.values(), 3, 10, 2, 1).unwrap();
        for (a, b) in approx.singular_values.iter().zip(&exact) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * exact[0]);
        }
    }

    proptest! {
        #[test]
        fn eckart_young(seed in 0u64..1000, r in 1usize..4) {
            let mut rng = substream(seed, "eckart_young", 0);
            let m = DMatrix::from_fn(6, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let best = (&m - truncate_rank(&m, r).unwrap()).norm();
            for _ in 0..20 {
                let x = DMatrix::from_fn(6, r, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = DMatrix::from_fn(r, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
                prop_assert!(best <= (&m - x * y).norm() + 1e-12);
            }
        }

        #[test]
        fn angles_are_symmetric(seed in 0u64..1000) {
            let u = random_subspace(12, 3, seed);
            let v = random_subspace(12, 3, seed + 7919);
            let a = principal_angles(&u, &v).unwrap().cosines;
            let b = principal_angles(&v, &u).unwrap().cosines;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
