//! Dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Pseudo-inverse together with the condition number of the retained
/// spectrum. Singular values below `rel_tol * sigma_max` are truncated.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: Mat,
    pub condition: f64,
    pub rank: usize,
}

pub fn pinv(m: &Mat, rel_tol: f64) -> Result<PseudoInverse> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("pseudo-inverse of a non-finite matrix"));
    }
    let svd = m.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Factorization("svd did not converge".into())),
    };
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_tol * smax;
    let mut rank = 0;
    let mut smin = f64::INFINITY;
    let mut inv = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &sv) in s.iter().enumerate() {
        if sv > cutoff && sv > 0.0 {
            rank += 1;
            smin = smin.min(sv);
            inv += (vt.row(i).transpose() / sv) * u.column(i).transpose();
        }
    }
    let condition = if rank == 0 {
        f64::INFINITY
    } else {
        smax / smin
    };
    Ok(PseudoInverse {
        matrix: inv,
        condition,
        rank,
    })
}

/// Numerical rank with the same relative cutoff as [`pinv`].
pub fn rank(m: &Mat, rel_tol: f64) -> usize {
    let s = m.clone().singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|&&x| x > rel_tol * smax && x > 0.0).count()
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// `||a - b||_F / max(||a||_F, ||b||_F)`, zero when both vanish.
pub fn relative_residual(a: &Mat, b: &Mat) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Gaussian matrix with zero mean and the given variance.
pub fn gaussian<R: Rng>(rows: usize, cols: usize, variance: f64, rng: &mut R) -> Mat {
    let normal = Normal::new(0.0, variance.sqrt()).expect("variance must be finite and >= 0");
    // column-major fill order is part of the determinism contract
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian draw,
/// with the sign convention fixed so the distribution is Haar.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Mat {
    let g = gaussian(n, n, 1.0, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in logits.iter_mut() {
        *x /= total;
    }
}

/// Neumaier-compensated sum; order-deterministic for a fixed input order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
