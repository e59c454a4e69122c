//! Moving a switch between models through a linear map of embedding spaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::enumerate::{all_prefixes, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::hmm::PINV_TOL;
use crate::linalg::{gaussian, l1_distance, pinv, Mat};
use crate::lm::{LanguageModel, SoftmaxLm, Vocab};
use crate::optim::{Adam, AdamConfig};
use crate::switch::{SwitchMatrix, SwitchedLm};

/// Decode-time scale recommended for transferred switches.
pub const TRANSFER_SCALE: f64 = 0.1;

/// Tokens present in both vocabularies, ranked by the sum of their ids
/// (ids follow corpus frequency order), ties lexicographic, truncated to `k`.
/// Fails when fewer than `needed` tokens are shared.
pub fn anchor_vocab(v1: &Vocab, v2: &Vocab, k: usize, needed: usize) -> Result<Vec<String>> {
    let mut shared: Vec<(usize, &String)> = v1
        .tokens()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| v2.id(t).map(|j| (i + j, t)))
        .collect();
    if shared.len() < needed {
        return Err(Error::InsufficientAnchors {
            needed,
            found: shared.len(),
        });
    }
    shared.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(shared.into_iter().take(k).map(|(_, t)| t.clone()).collect())
}

/// Columns of `e` for `tokens`, in order.
pub fn anchor_columns(e: &Mat, vocab: &Vocab, tokens: &[String]) -> Result<Mat> {
    let ids: Vec<usize> = tokens
        .iter()
        .map(|t| {
            vocab
                .id(t)
                .ok_or_else(|| Error::input(format!("anchor {t:?} missing from vocabulary")))
        })
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(e.nrows(), ids.len(), |r, c| e[(r, ids[c])]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFitConfig {
    pub lr: f64,
    pub steps: usize,
    pub init_var: f64,
    pub seed: u64,
}

impl Default for MapFitConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            steps: 5000,
            init_var: 1e-3,
            seed: 0,
        }
    }
}

/// `H` with `H e_tgt ≈ e_src` over the anchors.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingMap {
    #[serde(skip)]
    pub h: Mat,
    pub anchor_count: usize,
    /// `||H E_tgt - E_src||_F` for the fitted `H`.
    pub fit_residual: f64,
    /// Relative Frobenius distance to the least-squares minimizer.
    pub oracle_gap: f64,
    /// Residual of the least-squares minimizer.
    pub oracle_residual: f64,
}

/// Least-squares `H` minimizing `||H E_tgt - E_src||_F`, minimum-norm when
/// the anchors are rank deficient.
pub fn least_squares_map(e_src: &Mat, e_tgt: &Mat) -> Result<Mat> {
    Ok(e_src * pinv(e_tgt, PINV_TOL)?.matrix)
}

/// Fits `H` by Adam on the squared Frobenius loss (mean over anchors) and
/// compares the result with the closed-form minimizer.
pub fn fit_embedding_map(e_src: &Mat, e_tgt: &Mat, cfg: &MapFitConfig) -> Result<EmbeddingMap> {
    let k = e_src.ncols();
    if e_tgt.ncols() != k || k == 0 {
        return Err(Error::input(format!(
            "anchor matrices must have the same non-zero column count, got {k} and {}",
            e_tgt.ncols()
        )));
    }
    let (ds, dt) = (e_src.nrows(), e_tgt.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut h = gaussian(ds, dt, cfg.init_var, &mut rng);
    let mut opt = Adam::new(ds * dt, AdamConfig::with_lr(cfg.lr));
    let scale = 2.0 / k as f64;
    for step in 0..cfg.steps {
        let resid = &h * e_tgt - e_src;
        let grad = resid * e_tgt.transpose() * scale;
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step });
        }
        opt.step(h.as_mut_slice(), grad.as_slice());
    }
    let oracle = least_squares_map(e_src, e_tgt)?;
    let fit_residual = (&h * e_tgt - e_src).norm();
    if !fit_residual.is_finite() {
        return Err(Error::Divergence { step: cfg.steps });
    }
    let denom = oracle.norm();
    Ok(EmbeddingMap {
        oracle_gap: if denom > 0.0 {
            (&h - &oracle).norm() / denom
        } else {
            h.norm()
        },
        oracle_residual: (&oracle * e_tgt - e_src).norm(),
        h,
        anchor_count: k,
        fit_residual,
    })
}

/// `H^T W H` (and likewise for the dummy) with the decode scale reduced by
/// [`TRANSFER_SCALE`].
pub fn transfer_switch(sw: &SwitchMatrix, map: &EmbeddingMap) -> Result<SwitchMatrix> {
    if map.h.nrows() != sw.dim() {
        return Err(Error::input(format!(
            "map has {} source dimensions but the switch is {}x{}",
            map.h.nrows(),
            sw.dim(),
            sw.dim()
        )));
    }
    let h = &map.h;
    let mut out = SwitchMatrix::new(
        h.transpose() * &sw.w * h,
        h.transpose() * &sw.w_dummy * h,
        sw.eps0,
    )?;
    out.decode_scale = sw.decode_scale * TRANSFER_SCALE;
    Ok(out)
}

/// Largest L1 gap between source and target switched conditionals at switch
/// value `eps` over all prefixes up to `max_len`. Both models must share a
/// vocabulary.
pub fn transfer_fidelity(
    src: &SoftmaxLm,
    src_sw: &SwitchMatrix,
    tgt: &SoftmaxLm,
    tgt_sw: &SwitchMatrix,
    eps: f64,
    max_len: usize,
) -> Result<f64> {
    if src.vocab() != tgt.vocab() {
        return Err(Error::input(
            "fidelity needs models over the same vocabulary",
        ));
    }
    let a = SwitchedLm::new(src, src_sw.w.clone(), eps)?;
    let b = SwitchedLm::new(tgt, tgt_sw.w.clone(), eps)?;
    let mut worst: f64 = 0.0;
    for prefix in all_prefixes(src.vocab_size(), max_len, DEFAULT_BUDGET)? {
        worst = worst.max(l1_distance(
            &a.conditional(&prefix)?,
            &b.conditional(&prefix)?,
        ));
    }
    Ok(worst)
}
