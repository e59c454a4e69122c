//! The switch `e -> (I + eps W) e` on output embeddings: conditionals,
//! likelihood gradients and training with a shared dummy switch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gaussian, softmax_in_place, spectral_norm, Mat, Vector};
use crate::lm::{aggregate, LanguageModel, SoftmaxLm, Transitions};
use crate::optim::{Adam, AdamConfig};

mod bounds;
mod decode;

pub use bounds::{compose, theorem2_check, theorem3_check, BoundCheck};
pub use decode::{
    ablation_sweep, decode, decode_prompts, nucleus_sample, sweep_csv, DecodeConfig, SweepRow,
};

/// Default training magnitude of the switch value.
pub const EPS0: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchMatrix {
    pub w: Mat,
    pub w_dummy: Mat,
    pub eps0: f64,
    /// Extra factor applied at decode time; 1 except for transferred switches.
    pub decode_scale: f64,
}

impl SwitchMatrix {
    pub fn new(w: Mat, w_dummy: Mat, eps0: f64) -> Result<Self> {
        let d = w.nrows();
        if w.ncols() != d || w_dummy.shape() != (d, d) {
            return Err(Error::input(format!(
                "switch matrices must be square and equal-sized, got {:?} and {:?}",
                w.shape(),
                w_dummy.shape()
            )));
        }
        if !(eps0 > 0.0) || !eps0.is_finite() {
            return Err(Error::input(format!("eps0 must be positive, got {eps0}")));
        }
        if w.iter().chain(w_dummy.iter()).any(|x| !x.is_finite()) {
            return Err(Error::input("switch matrices must be finite"));
        }
        Ok(Self {
            w,
            w_dummy,
            eps0,
            decode_scale: 1.0,
        })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w: Mat::zeros(d, d),
            w_dummy: Mat::zeros(d, d),
            eps0: EPS0,
            decode_scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Spectral norm of `W`, used as the operative maximum eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        spectral_norm(&self.w)
    }
}

fn check_dims(lm: &SoftmaxLm, w: &Mat) -> Result<()> {
    if w.shape() != (lm.dim(), lm.dim()) {
        return Err(Error::input(format!(
            "switch is {}x{} but the model dimension is {}",
            w.nrows(),
            w.ncols(),
            lm.dim()
        )));
    }
    Ok(())
}

/// `c + eps W^T c`, so that `c'^T e = c^T (I + eps W) e`.
pub fn switch_context(c: &Vector, w: &Mat, eps: f64) -> Vector {
    if eps == 0.0 {
        return c.clone();
    }
    c + w.tr_mul(c) * eps
}

/// Base LM with every output embedding replaced by `(I + eps W) e`.
#[derive(Debug, Clone)]
pub struct SwitchedLm<'a> {
    lm: &'a SoftmaxLm,
    w: Mat,
    eps: f64,
}

impl<'a> SwitchedLm<'a> {
    pub fn new(lm: &'a SoftmaxLm, w: Mat, eps: f64) -> Result<Self> {
        check_dims(lm, &w)?;
        Ok(Self { lm, w, eps })
    }
}

impl LanguageModel for SwitchedLm<'_> {
    fn vocab_size(&self) -> usize {
        self.lm.vocab_size()
    }

    fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let c = switch_context(&self.lm.context(prefix), &self.w, self.eps);
        Ok(self.lm.conditional_from_context(&c))
    }
}

/// `P(. | prefix)` under `M(eps W)`; `W_dummy` is a training-time device and
/// is not applied here.
pub fn switched_conditional(
    lm: &SoftmaxLm,
    sw: &SwitchMatrix,
    eps: f64,
    prefix: &[usize],
) -> Result<Vec<f64>> {
    SwitchedLm::new(lm, sw.w.clone(), eps)?.conditional(prefix)
}

/// Log-likelihood of `targets` given `c'`, and the residual
/// `sum_t n_t e_t - n E p` whose outer product with `c` is the gradient.
fn slot_terms(e: &Mat, c_switched: &Vector, targets: &[(usize, f64)], n: f64) -> (f64, Vector) {
    let logits = e.tr_mul(c_switched);
    let max = logits.max();
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let mut p: Vec<f64> = logits.iter().cloned().collect();
    softmax_in_place(&mut p);
    let mut weights = Vector::from_iterator(p.len(), p.iter().map(|x| -n * x));
    let mut ll = 0.0;
    for &(t, count) in targets {
        ll += count * (logits[t] - lse);
        weights[t] += count;
    }
    (ll, e * weights)
}

/// `log P(seq | eps W)` and its gradient `eps sum_i c_i (e_{o_i} - E_p[e])^T`
/// with respect to `W`. Every token of `seq` is a target; callers append EOS
/// if sentence closure should count.
pub fn loglik_and_grad(lm: &SoftmaxLm, w: &Mat, eps: f64, seq: &[usize]) -> Result<(f64, Mat)> {
    check_dims(lm, w)?;
    if seq.is_empty() {
        return Err(Error::input("sequence must be non-empty"));
    }
    let v = lm.vocab_size();
    let d = lm.dim();
    let mut grad = Mat::zeros(d, d);
    let mut ll = 0.0;
    for (i, &t) in seq.iter().enumerate() {
        if t >= v {
            return Err(Error::input(format!("token id {t} outside the vocabulary")));
        }
        let c = lm.context(&seq[..i]);
        let (l, r) = slot_terms(
            lm.embeddings(),
            &switch_context(&c, w, eps),
            &[(t, 1.0)],
            1.0,
        );
        ll += l;
        grad.ger(eps, &c, &r, 1.0);
    }
    Ok((ll, grad))
}

/// Gradient of `log P(seq | eps W)` with respect to `W`.
pub fn loglik_grad_w(lm: &SoftmaxLm, w: &Mat, eps: f64, seq: &[usize]) -> Result<Mat> {
    Ok(loglik_and_grad(lm, w, eps, seq)?.1)
}

/// Same quantity summed over aggregated transitions.
fn aggregated_loglik_grad(lm: &SoftmaxLm, data: &Transitions, w: &Mat, eps: f64) -> (f64, Mat) {
    let d = lm.dim();
    let mut grad = Mat::zeros(d, d);
    let mut ll = 0.0;
    for (slot, targets, n) in &data.slots {
        let c = lm.contexts().column(*slot).into_owned();
        let (l, r) = slot_terms(lm.embeddings(), &switch_context(&c, w, eps), targets, *n);
        ll += l;
        grad.ger(eps, &c, &r, 1.0);
    }
    (ll, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub init_var: f64,
    pub seed: u64,
    /// Sentences per polarity per step; 0 means full batch.
    pub batch: usize,
    pub eps0: f64,
}

impl Default for SwitchTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 1000,
            init_var: 1e-3,
            seed: 0,
            batch: 0,
            eps0: EPS0,
        }
    }
}

/// Draws deterministic mini-batches by reshuffling at each pass.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    size: usize,
}

impl Batcher {
    fn new(len: usize, size: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
            size: if size == 0 { len } else { size.min(len) },
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.size == self.order.len() {
            return self.order.clone();
        }
        let mut out = Vec::with_capacity(self.size);
        while out.len() < self.size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Outcome of switch training: the matrices plus the per-step objective
/// (mean log-likelihood per sentence over both polarities).
#[derive(Debug, Clone)]
pub struct SwitchTraining {
    pub switch: SwitchMatrix,
    pub objective: Vec<f64>,
}

/// Maximizes `sum_pos log P(s | eps0 (W + Wd)) + sum_neg log P(s | eps0 (-W + Wd))`
/// with Adam. The negative term is dropped when `neg` is empty.
pub fn train_switch(
    lm: &SoftmaxLm,
    pos: &[Vec<usize>],
    neg: &[Vec<usize>],
    cfg: &SwitchTrainConfig,
) -> Result<SwitchTraining> {
    if pos.is_empty() {
        return Err(Error::input("positive corpus must be non-empty"));
    }
    if !(cfg.lr > 0.0) || !(cfg.init_var >= 0.0) || !(cfg.eps0 > 0.0) {
        return Err(Error::input(
            "switch training needs lr > 0, init_var >= 0, eps0 > 0",
        ));
    }
    let d = lm.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = gaussian(d, d, cfg.init_var, &mut rng);
    let mut wd = gaussian(d, d, cfg.init_var, &mut rng);
    let mut opt_w = Adam::new(d * d, AdamConfig::with_lr(cfg.lr));
    let mut opt_d = Adam::new(d * d, AdamConfig::with_lr(cfg.lr));
    let mut pos_batches = Batcher::new(pos.len(), cfg.batch);
    let mut neg_batches = Batcher::new(neg.len(), cfg.batch);
    let full = cfg.batch == 0;
    let pick = |corpus: &[Vec<usize>], idx: &[usize]| -> Vec<Vec<usize>> {
        idx.iter().map(|&i| corpus[i].clone()).collect()
    };
    let full_pos = aggregate(lm, pos);
    let full_neg = aggregate(lm, neg);
    let mut objective = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (pos_data, neg_data) = if full {
            (full_pos.clone(), full_neg.clone())
        } else {
            let p = aggregate(lm, &pick(pos, &pos_batches.next(&mut rng)));
            let n = if neg.is_empty() {
                aggregate(lm, &[])
            } else {
                aggregate(lm, &pick(neg, &neg_batches.next(&mut rng)))
            };
            (p, n)
        };
        let sentences =
            (pos_batches.size + if neg.is_empty() { 0 } else { neg_batches.size }) as f64;
        let (ll_pos, g_pos) = aggregated_loglik_grad(lm, &pos_data, &(&w + &wd), cfg.eps0);
        let (ll_neg, g_neg) = if neg.is_empty() {
            (0.0, Mat::zeros(d, d))
        } else {
            aggregated_loglik_grad(lm, &neg_data, &(&wd - &w), cfg.eps0)
        };
        let obj = (ll_pos + ll_neg) / sentences;
        if !obj.is_finite() {
            return Err(Error::Divergence { step });
        }
        objective.push(obj);
        // Adam minimizes, so feed the negated ascent direction
        let grad_w: Vec<f64> = (&g_neg - &g_pos).iter().map(|x| x / sentences).collect();
        let grad_d: Vec<f64> = (-(&g_pos + &g_neg)).iter().map(|x| x / sentences).collect();
        opt_w.step(w.as_mut_slice(), &grad_w);
        opt_d.step(wd.as_mut_slice(), &grad_d);
        if w.iter().chain(wd.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    Ok(SwitchTraining {
        switch: SwitchMatrix::new(w, wd, cfg.eps0)?,
        objective,
    })
}
