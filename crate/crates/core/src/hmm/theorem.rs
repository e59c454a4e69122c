//! Switching the initial condition of a conditioned HMM by a linear map on
//! the language-model embeddings, with numerical certification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConditionedHmm, LmView};
use crate::enumerate::{all_prefixes, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Singular values below this fraction of the largest are truncated.
pub const PINV_TOL: f64 = 1e-10;
/// Condition numbers above this attach a warning to the construction.
pub const CONDITION_WARN: f64 = 1e8;
/// Normalized switched scores above this (negative) floor count as noise.
pub const CLAMP_FLOOR: f64 = -1e-8;

/// `W' = diag(I_ds, Lambda)` with `W' phi_pi = phi_pi_prime`.
pub fn build_helper_wprime(
    chmm: &ConditionedHmm,
    phi_pi: &Vector,
    phi_pi_prime: &Vector,
) -> Result<Mat> {
    let d = chmm.dim();
    if phi_pi.len() != d || phi_pi_prime.len() != d {
        return Err(Error::input(format!(
            "initial representations must have length {d}"
        )));
    }
    if (0..chmm.d_s).any(|i| phi_pi[i] != phi_pi_prime[i]) {
        return Err(Error::input(
            "initial representations differ in their semantic block",
        ));
    }
    let mut w = Mat::identity(d, d);
    for k in chmm.d_s..d {
        if phi_pi[k] == 0.0 {
            return Err(Error::DegenerateCondition { index: k });
        }
        w[(k, k)] = phi_pi_prime[k] / phi_pi[k];
    }
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct SwitchConstruction {
    /// Acts on the view's embeddings: switched scores are `c^T W E`.
    pub w: Mat,
    pub condition: f64,
    pub warning: Option<String>,
}

/// `W = (R1^+)^T Phi^T W' Phi R2^+`, so that `c^T W E = alpha^T Phi^T W' Phi B^T`.
pub fn construct_switch(
    chmm: &ConditionedHmm,
    view: &LmView,
    wprime: &Mat,
) -> Result<SwitchConstruction> {
    let d = chmm.dim();
    if wprime.shape() != (d, d) {
        return Err(Error::input(format!("W' must be {d}x{d}")));
    }
    if chmm.states() != view.hmm().states() {
        return Err(Error::input(
            "view and factorization disagree on state count",
        ));
    }
    let k = chmm.phi.transpose() * wprime * &chmm.phi;
    let p1 = linalg::pinv(view.r1(), PINV_TOL)?;
    let p2 = linalg::pinv(view.r2(), PINV_TOL)?;
    let w = p1.matrix.transpose() * k * p2.matrix;
    let condition = p1.condition.max(p2.condition);
    let warning = (condition > CONDITION_WARN)
        .then(|| format!("pseudo-inverse condition number {condition:.3e}"));
    Ok(SwitchConstruction {
        w,
        condition,
        warning,
    })
}

/// Normalized `c(prefix)^T W E`. The second value is the most negative
/// normalized score when it fell below [`CLAMP_FLOOR`] (left unclamped).
pub fn switched_view_conditional(
    view: &LmView,
    w: &Mat,
    prefix: &[usize],
) -> Result<(Vec<f64>, Option<f64>)> {
    let c = view.context(prefix)?;
    let raw = view.embeddings().tr_mul(&w.tr_mul(&c));
    let total = raw.sum();
    if !(total.abs() > 0.0) {
        return Err(Error::DegeneratePrefix {
            prefix: prefix.to_vec(),
        });
    }
    let normalized: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let min = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < CLAMP_FLOOR {
        return Ok((normalized, Some(min)));
    }
    let clamped: Vec<f64> = normalized.iter().map(|x| x.max(0.0)).collect();
    let s: f64 = clamped.iter().sum();
    Ok((clamped.into_iter().map(|x| x / s).collect(), None))
}

/// Relative Frobenius residuals of the commutation identities behind the
/// switch construction. The second and third are evaluated on the row space of
/// Phi, where every forward vector of the factorized chain lives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `T K - K T` with `K = Phi^T W' Phi`.
    pub lemma1: f64,
    /// max over o of `Phi D_o Phi^T W' Phi - W' Phi D_o Phi^T Phi`.
    pub lemma2: f64,
    /// max over o of `Phi D_o T K - Phi K D_o T`.
    pub lemma3: f64,
}

impl LemmaReport {
    pub fn max(&self) -> f64 {
        self.lemma1.max(self.lemma2).max(self.lemma3)
    }
}

pub fn verify_lemmas(chmm: &ConditionedHmm, wprime: &Mat) -> Result<LemmaReport> {
    let d = chmm.dim();
    if wprime.shape() != (d, d) {
        return Err(Error::input(format!("W' must be {d}x{d}")));
    }
    let phi = &chmm.phi;
    let t = chmm.derived_t();
    let b = chmm.derived_b();
    let k = phi.transpose() * wprime * phi;
    let lemma1 = linalg::relative_residual(&(&t * &k), &(&k * &t));
    let projector = phi.transpose() * phi;
    let mut lemma2 = 0.0_f64;
    let mut lemma3 = 0.0_f64;
    for o in 0..b.ncols() {
        let p = b.column(o);
        // Phi diag(p)
        let mut phi_d = phi.clone();
        for (s, mut col) in phi_d.column_iter_mut().enumerate() {
            col *= p[s];
        }
        let lhs2 = &phi_d * phi.transpose() * wprime * phi;
        let rhs2 = wprime * &phi_d * &projector;
        lemma2 = lemma2.max(linalg::relative_residual(&lhs2, &rhs2));
        let lhs3 = &phi_d * &t * &k;
        let mut k_d = phi * &k;
        for (s, mut col) in k_d.column_iter_mut().enumerate() {
            col *= p[s];
        }
        let rhs3 = k_d * &t;
        lemma3 = lemma3.max(linalg::relative_residual(&lhs3, &rhs3));
    }
    Ok(LemmaReport {
        lemma1,
        lemma2,
        lemma3,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    /// Max over prefixes of the L1 distance between the switched conditional
    /// and the conditional of the re-initialized chain.
    pub max_l1: f64,
    pub prefixes: usize,
    /// Prefixes with zero probability under either chain.
    pub skipped: usize,
    /// Prefixes whose switched scores went materially negative.
    pub fidelity_warnings: usize,
}

/// Enumerates every prefix of length `0..=max_len` and compares the
/// switched view against the chain started from `pi_prime`.
pub fn verify_theorem1(
    view: &LmView,
    w: &Mat,
    pi_prime: &Vector,
    max_len: usize,
) -> Result<Theorem1Report> {
    let target = view.hmm().with_initial(pi_prime.clone())?;
    let prefixes = all_prefixes(view.vocab_size(), max_len, DEFAULT_BUDGET)?;
    let outcomes: Vec<Result<Option<(f64, bool)>>> = prefixes
        .par_iter()
        .map(|prefix| {
            let expected = match target.next_token_dist(prefix) {
                Ok(d) => d,
                Err(Error::DegeneratePrefix { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let (got, warn) = match switched_view_conditional(view, w, prefix) {
                Ok(r) => r,
                Err(Error::DegeneratePrefix { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(Some((linalg::l1_distance(&got, &expected), warn.is_some())))
        })
        .collect();
    let mut report = Theorem1Report {
        max_l1: 0.0,
        prefixes: prefixes.len(),
        skipped: 0,
        fidelity_warnings: 0,
    };
    for outcome in outcomes {
        match outcome? {
            Some((dev, warn)) => {
                report.max_l1 = report.max_l1.max(dev);
                report.fidelity_warnings += warn as usize;
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}
