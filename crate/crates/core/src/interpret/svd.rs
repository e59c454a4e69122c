use serde::Serialize;

use super::scorer::{classify_group, Group, Scorer};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::lm::Vocab;

/// `W = U diag(s) Vt` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdDecomposition {
    pub u: Mat,
    pub s: Vector,
    pub vt: Mat,
}

impl SvdDecomposition {
    pub fn reconstruct(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.s) * &self.vt
    }
}

pub fn svd_directions(w: &Mat) -> Result<SvdDecomposition> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("cannot decompose a non-finite matrix"));
    }
    let svd = w.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Factorization("svd did not converge".into())),
    };
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    Ok(SvdDecomposition {
        u: Mat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        s: Vector::from_iterator(order.len(), order.iter().map(|&i| s[i])),
        vt: Mat::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]),
    })
}

/// Token ids with the `k` largest and `k` smallest `direction . e_o`,
/// ties broken by lower id.
pub fn top_influenced_tokens(
    direction: &Vector,
    e: &Mat,
    k: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if direction.len() != e.nrows() {
        return Err(Error::input(
            "direction length must equal the embedding dimension",
        ));
    }
    if k > e.ncols() {
        return Err(Error::input(format!(
            "k = {k} exceeds the vocabulary size {}",
            e.ncols()
        )));
    }
    let scores = e.tr_mul(direction);
    let mut ids: Vec<usize> = (0..e.ncols()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = ids[..k].to_vec();
    ids.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Ok((top, ids[..k].to_vec()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionReport {
    pub index: usize,
    pub singular_value: f64,
    pub top: Vec<String>,
    pub bottom: Vec<String>,
    /// Group judged to be the keyword side by the scorer.
    pub keyword: Group,
    pub tie: bool,
    /// False when more than half of the top tokens are special or unknown.
    pub retained: bool,
}

impl DirectionReport {
    pub fn keywords(&self) -> &[String] {
        match self.keyword {
            Group::A => &self.top,
            Group::B => &self.bottom,
        }
    }
}

/// Inspects the leading `rows` right-singular directions of `w` against the
/// output embeddings `e`.
pub fn interpret_switch(
    w: &Mat,
    e: &Mat,
    vocab: &Vocab,
    scorer: &Scorer,
    rows: usize,
    k: usize,
) -> Result<Vec<DirectionReport>> {
    let svd = svd_directions(w)?;
    let names = |ids: &[usize]| {
        ids.iter()
            .map(|&i| vocab.token(i).to_string())
            .collect::<Vec<_>>()
    };
    (0..rows.min(svd.s.len()))
        .map(|i| {
            let dir = svd.vt.row(i).transpose();
            let (top, bottom) = top_influenced_tokens(&dir, e, k)?;
            let special = top
                .iter()
                .filter(|&&t| t >= vocab.len() || vocab.is_special(t))
                .count();
            let choice = classify_group(scorer, &names(&top), &names(&bottom))?;
            Ok(DirectionReport {
                index: i,
                singular_value: svd.s[i],
                top: names(&top),
                bottom: names(&bottom),
                keyword: choice.keyword,
                tie: choice.tie,
                retained: 2 * special <= k,
            })
        })
        .collect()
}
