//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// A thin SVD with singular values sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Thin SVD, sorted. Empty matrices yield empty factors.
pub fn svd(m: &DMatrix<f64>) -> SortedSvd {
    let (r, c) = m.shape();
    if r < c {
        // nalgebra loses accuracy on wide inputs; factor the transpose instead
        let t = svd(&m.transpose());
        return SortedSvd {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        };
    }
    let k = r.min(c);
    if k == 0 {
        return SortedSvd {
            u: DMatrix::zeros(r, 0),
            singular_values: Vec::new(),
            v_t: DMatrix::zeros(0, c),
        };
    }
    let dec = m.clone().svd(true, true);
    let u = dec.u.expect("u requested");
    let v_t = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let mut su = DMatrix::zeros(r, k);
    let mut sv = DMatrix::zeros(k, c);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_row(dst, &v_t.row(src));
        s.push(dec.singular_values[src]);
    }
    SortedSvd {
        u: su,
        singular_values: s,
        v_t: sv,
    }
}

/// Singular values only, nonincreasing.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows().min(m.ncols()) == 0 {
        return Vec::new();
    }
    let tall = if m.nrows() < m.ncols() {
        m.transpose()
    } else {
        m.clone()
    };
    let mut s: Vec<f64> = tall.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Count of singular values above `rel_tol * sigma_1`. A zero matrix has rank 0.
pub fn rank_of_spectrum(s: &[f64], rel_tol: f64) -> usize {
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > rel_tol * top).count(),
        _ => 0,
    }
}

pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    rank_of_spectrum(&singular_values(m), rel_tol)
}

/// Moore-Penrose pseudoinverse, discarding singular values at or below
/// `rel_cutoff * sigma_1`.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let dec = svd(m);
    let mut out = DMatrix::zeros(c, r);
    let top = dec.singular_values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return out;
    }
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s > rel_cutoff * top {
            let vi = dec.v_t.row(i).transpose();
            let ui = dec.u.column(i).transpose();
            out += (vi * ui) / s;
        }
    }
    out
}

/// Orthonormal basis for the column span of `m` via thin QR.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let q = qr.q();
    q.columns(0, m.ncols().min(m.nrows())).into_owned()
}

/// Largest deviation of `basisᵀ basis` from the identity.
pub fn gram_deviation(basis: &DMatrix<f64>) -> f64 {
    let g = basis.transpose() * basis;
    let n = g.nrows();
    (&g - DMatrix::<f64>::identity(n, n)).amax()
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidArgument(
            "matrix is not positive definite".into(),
        ));
    }
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// Stacks rows of equal length into a matrix.
pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}
