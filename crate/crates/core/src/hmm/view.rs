use super::Hmm;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Rank cutoff relative to the largest singular value.
const RANK_TOL: f64 = 1e-10;

/// Linear language model equivalent to an HMM: contextual vectors
/// `c(prefix) = R1 alpha(prefix) / P(prefix)` and embeddings
/// `e_o = R2 p(o)`, with `R1^T R2 = I_n`.
#[derive(Debug, Clone)]
pub struct LmView {
    hmm: Hmm,
    r1: Mat,
    r2: Mat,
    e: Mat,
}

/// Builds the view with the default projections `R2 = R1 = I_n`.
/// Requires the emission matrix to have rank n.
pub fn build_lm_view(hmm: &Hmm) -> Result<LmView> {
    let n = hmm.states();
    LmView::with_projection(hmm, Mat::identity(n, n), true)
}

impl LmView {
    /// Builds the view for an arbitrary full-column-rank `r2` (d x n, d >= n)
    /// with `R1 = R2 (R2^T R2)^-1`. `require_emission_rank` enforces
    /// rank(B) = n; the switch construction does not need it.
    pub fn with_projection(hmm: &Hmm, r2: Mat, require_emission_rank: bool) -> Result<Self> {
        let n = hmm.states();
        if r2.ncols() != n || r2.nrows() < n {
            return Err(Error::input(format!(
                "R2 must be d x {n} with d >= {n}, got {:?}",
                r2.shape()
            )));
        }
        if require_emission_rank {
            let r = linalg::rank(hmm.emissions(), RANK_TOL);
            if r < n {
                return Err(Error::Factorization(format!(
                    "emission matrix has rank {r} < {n} states"
                )));
            }
        }
        let gram = r2.tr_mul(&r2);
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Factorization("R2 is not full column rank".into()))?;
        let r1 = &r2 * inv;
        let e = &r2 * hmm.emissions();
        Ok(Self {
            hmm: hmm.clone(),
            r1,
            r2,
            e,
        })
    }

    /// Rebuilds the view around the same projections for another initial
    /// distribution.
    pub fn with_initial(&self, pi: Vector) -> Result<Self> {
        Ok(Self {
            hmm: self.hmm.with_initial(pi)?,
            r1: self.r1.clone(),
            r2: self.r2.clone(),
            e: self.e.clone(),
        })
    }

    pub fn hmm(&self) -> &Hmm {
        &self.hmm
    }

    pub fn r1(&self) -> &Mat {
        &self.r1
    }

    pub fn r2(&self) -> &Mat {
        &self.r2
    }

    /// d x m embedding matrix.
    pub fn embeddings(&self) -> &Mat {
        &self.e
    }

    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.e.ncols()
    }

    /// `||R1^T R2 - I_n||_F`.
    pub fn projection_defect(&self) -> f64 {
        let n = self.hmm.states();
        (self.r1.tr_mul(&self.r2) - Mat::identity(n, n)).norm()
    }

    pub fn context(&self, prefix: &[usize]) -> Result<Vector> {
        let alpha = self.hmm.forward(prefix)?;
        let total = alpha.sum();
        if !(total > 0.0) {
            return Err(Error::DegeneratePrefix {
                prefix: prefix.to_vec(),
            });
        }
        Ok(&self.r1 * (alpha / total))
    }

    /// Raw scores `c^T e_o`; they already sum to one up to rounding.
    pub fn scores(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let c = self.context(prefix)?;
        Ok(self.e.tr_mul(&c).iter().cloned().collect())
    }

    /// Normalized `c^T e_o`.
    pub fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let scores = self.scores(prefix)?;
        let clamped: Vec<f64> = scores.iter().map(|&x| x.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegeneratePrefix {
                prefix: prefix.to_vec(),
            });
        }
        Ok(clamped.into_iter().map(|x| x / total).collect())
    }
}
