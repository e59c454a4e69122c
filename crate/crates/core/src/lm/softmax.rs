use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LanguageModel, Vocab};
use crate::error::{Error, Result};
use crate::linalg::{gaussian, softmax_in_place, Mat, Vector};

/// Slack on the unit-norm bound for stored embeddings and contexts.
pub const NORM_SLACK: f64 = 1e-12;

/// Tabular-context softmax LM: `P(o | prefix) = softmax_o(c(prefix)^T e_o)`
/// where `c` is looked up from the last `order` tokens (BOS-padded).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLm {
    vocab: Vocab,
    order: usize,
    embeddings: Mat,
    contexts: Mat,
    trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLmConfig {
    pub order: usize,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub init_std: f64,
}

impl Default for BaseLmConfig {
    fn default() -> Self {
        Self {
            order: 1,
            dim: 16,
            epochs: 300,
            lr: 50.0,
            seed: 0,
            init_std: 0.1,
        }
    }
}

fn context_slots(vocab: usize, order: usize) -> Result<usize> {
    match order {
        1 => Ok(vocab),
        2 => Ok(vocab * vocab),
        _ => Err(Error::input(format!(
            "context order must be 1 or 2, got {order}"
        ))),
    }
}

/// Rescales columns with norm above one back onto the unit sphere.
fn project_columns(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > 1.0 {
            col /= n;
        }
    }
}

fn max_column_norm(m: &Mat) -> f64 {
    m.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

impl SoftmaxLm {
    pub fn new(vocab: Vocab, order: usize, embeddings: Mat, contexts: Mat) -> Result<Self> {
        let v = vocab.len();
        let slots = context_slots(v, order)?;
        let d = embeddings.nrows();
        if d == 0 || embeddings.ncols() != v {
            return Err(Error::input(format!(
                "embedding matrix must be d x {v}, got {} x {}",
                embeddings.nrows(),
                embeddings.ncols()
            )));
        }
        if contexts.nrows() != d || contexts.ncols() != slots {
            return Err(Error::input(format!(
                "context table must be {d} x {slots}, got {} x {}",
                contexts.nrows(),
                contexts.ncols()
            )));
        }
        if embeddings
            .iter()
            .chain(contexts.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::input("model parameters must be finite"));
        }
        let lm = Self {
            vocab,
            order,
            embeddings,
            contexts,
            trained: false,
        };
        let (e, c) = lm.max_norms();
        if e > 1.0 + NORM_SLACK || c > 1.0 + NORM_SLACK {
            return Err(Error::input(format!(
                "embedding norms must not exceed 1 (embeddings {e}, contexts {c})"
            )));
        }
        Ok(lm)
    }

    /// Small Gaussian initialization, close to uniform.
    pub fn init(vocab: Vocab, order: usize, dim: usize, init_std: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::input("embedding dimension must be at least 2"));
        }
        let slots = context_slots(vocab.len(), order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let var = init_std * init_std;
        let mut e = gaussian(dim, vocab.len(), var, &mut rng);
        let mut c = gaussian(dim, slots, var, &mut rng);
        project_columns(&mut e);
        project_columns(&mut c);
        Self::new(vocab, order, e, c)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    pub fn contexts(&self) -> &Mat {
        &self.contexts
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(mut self) -> Self {
        self.trained = true;
        self
    }

    /// Largest column norms of `(E, context table)`.
    pub fn max_norms(&self) -> (f64, f64) {
        (
            max_column_norm(&self.embeddings),
            max_column_norm(&self.contexts),
        )
    }

    /// Context-table column for a prefix. Unknown ids and EOS fall back to BOS.
    pub fn context_slot(&self, prefix: &[usize]) -> usize {
        let v = self.vocab.len();
        let bos = self.vocab.bos();
        let at = |back: usize| -> usize {
            if prefix.len() < back {
                return bos;
            }
            let id = prefix[prefix.len() - back];
            if id >= v {
                bos
            } else {
                id
            }
        };
        match self.order {
            1 => at(1),
            _ => at(2) * v + at(1),
        }
    }

    pub fn context(&self, prefix: &[usize]) -> Vector {
        self.contexts.column(self.context_slot(prefix)).into_owned()
    }

    /// `softmax(E^T c)`.
    pub fn conditional_from_context(&self, c: &Vector) -> Vec<f64> {
        let mut logits: Vec<f64> = self.embeddings.tr_mul(c).iter().cloned().collect();
        softmax_in_place(&mut logits);
        logits
    }
}

impl LanguageModel for SoftmaxLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.conditional_from_context(&self.context(prefix)))
    }
}

/// `(context slot, target counts, slot total)`.
pub(crate) type SlotCounts = (usize, Vec<(usize, f64)>, f64);

/// Slot counts aggregated from a corpus, each sentence closed by EOS.
/// Unknown targets are dropped.
#[derive(Debug, Clone)]
pub(crate) struct Transitions {
    pub slots: Vec<SlotCounts>,
    pub total: f64,
}

pub(crate) fn aggregate(lm: &SoftmaxLm, sentences: &[Vec<usize>]) -> Transitions {
    let v = lm.vocab.len();
    let eos = lm.vocab.eos();
    let mut table: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for s in sentences {
        for i in 0..=s.len() {
            let target = if i == s.len() { eos } else { s[i] };
            if target >= v {
                continue;
            }
            *table
                .entry(lm.context_slot(&s[..i]))
                .or_default()
                .entry(target)
                .or_default() += 1.0;
        }
    }
    let mut total = 0.0;
    let slots = table
        .into_iter()
        .map(|(slot, targets)| {
            let n: f64 = targets.values().sum();
            total += n;
            (slot, targets.into_iter().collect(), n)
        })
        .collect();
    Transitions { slots, total }
}

/// Full-batch gradient ascent on the mean corpus log-likelihood, with a norm
/// projection after every step. Returns the per-step mean log-likelihood
/// alongside the model. Single-threaded and deterministic for a fixed seed.
pub fn train_base_lm(
    vocab: &Vocab,
    sentences: &[Vec<usize>],
    cfg: &BaseLmConfig,
) -> Result<(SoftmaxLm, Vec<f64>)> {
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::input(
            "learning rate must be finite and non-negative",
        ));
    }
    let mut lm = SoftmaxLm::init(vocab.clone(), cfg.order, cfg.dim, cfg.init_std, cfg.seed)?;
    let data = aggregate(&lm, sentences);
    if data.total == 0.0 {
        return Err(Error::input("training corpus has no in-vocabulary tokens"));
    }
    let (d, v) = (lm.dim(), vocab.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for step in 0..cfg.epochs {
        let mut grad_e = Mat::zeros(d, v);
        let mut grad_c = Vec::with_capacity(data.slots.len());
        let mut ll = 0.0;
        for (slot, targets, n) in &data.slots {
            let c = lm.contexts.column(*slot);
            let logits = lm.embeddings.tr_mul(&c);
            let mut p: Vec<f64> = logits.iter().cloned().collect();
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            softmax_in_place(&mut p);
            let mut r = Vector::from_iterator(v, p.iter().map(|x| -n * x));
            for &(t, count) in targets {
                ll += count * (logits[t] - lse);
                r[t] += count;
            }
            grad_e.ger(1.0, &c, &r, 1.0);
            grad_c.push(&lm.embeddings * &r);
        }
        let mean_ll = ll / data.total;
        if !mean_ll.is_finite() {
            return Err(Error::Divergence { step });
        }
        history.push(mean_ll);
        let scale = cfg.lr / data.total;
        lm.embeddings += grad_e * scale;
        for ((slot, _, _), g) in data.slots.iter().zip(&grad_c) {
            let mut col = lm.contexts.column_mut(*slot);
            col.axpy(scale, g, 1.0);
        }
        if lm
            .embeddings
            .iter()
            .chain(lm.contexts.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::Divergence { step });
        }
        project_columns(&mut lm.embeddings);
        project_columns(&mut lm.contexts);
    }
    lm.trained = cfg.epochs > 0;
    Ok((lm, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::perplexity;

    fn corpus_ids(vocab: &Vocab, lines: &[&str]) -> Vec<Vec<usize>> {
        lines.iter().map(|l| vocab.tokenize(l)).collect()
    }

    #[test]
    fn zero_embeddings_give_uniform() {
        let vocab = Vocab::build(&["a b"], 10).unwrap();
        let lm = SoftmaxLm::new(vocab, 1, Mat::zeros(3, 4), Mat::zeros(3, 4)).unwrap();
        assert_eq!(lm.conditional(&[0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn repeated_token_becomes_most_likely() {
        let vocab = Vocab::build(&["a a a"], 10).unwrap();
        let data = corpus_ids(&vocab, &["a a a"]);
        let cfg = BaseLmConfig {
            dim: 4,
            epochs: 500,
            lr: 2.0,
            ..Default::default()
        };
        let (lm, history) = train_base_lm(&vocab, &data, &cfg).unwrap();
        let p = lm.conditional(&[0]).unwrap();
        let a = vocab.id("a").unwrap();
        assert!(p.iter().enumerate().all(|(i, &x)| i == a || x < p[a]));
        // the empirical P(a|a) is 2/3 and unit-norm logits cap how far it can go
        assert!(p[a] > 0.6, "P(a|a) = {}", p[a]);
        assert!(history.last().unwrap() > history.first().unwrap());
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let vocab = Vocab::build(&["a b c"], 10).unwrap();
        let data = corpus_ids(&vocab, &["a b c", "c b"]);
        let cfg = BaseLmConfig {
            lr: 0.0,
            epochs: 5,
            ..Default::default()
        };
        let (lm, _) = train_base_lm(&vocab, &data, &cfg).unwrap();
        let init = SoftmaxLm::init(vocab, 1, cfg.dim, cfg.init_std, cfg.seed).unwrap();
        assert_eq!(lm.embeddings(), init.embeddings());
    }

    #[test]
    fn untrained_perplexity_is_near_vocab_size() {
        let vocab = Vocab::build(&["a b c d e"], 10).unwrap();
        let data = corpus_ids(&vocab, &["a b c", "d e a b"]);
        let cfg = BaseLmConfig {
            epochs: 0,
            ..Default::default()
        };
        let (lm, _) = train_base_lm(&vocab, &data, &cfg).unwrap();
        let ppl = perplexity(&lm, &data, Some(vocab.eos())).unwrap();
        assert!((ppl / vocab.len() as f64 - 1.0).abs() < 0.05, "ppl {ppl}");
    }

    #[test]
    fn norms_stay_bounded_and_training_is_deterministic() {
        let vocab = Vocab::build(&["x y z w"], 10).unwrap();
        let data = corpus_ids(&vocab, &["x y z", "x y w", "z z z z", "w x"]);
        let cfg = BaseLmConfig {
            order: 2,
            dim: 3,
            epochs: 200,
            lr: 5.0,
            ..Default::default()
        };
        let (a, _) = train_base_lm(&vocab, &data, &cfg).unwrap();
        let (b, _) = train_base_lm(&vocab, &data, &cfg).unwrap();
        assert_eq!(a, b);
        let (e, c) = a.max_norms();
        assert!(e <= 1.0 + NORM_SLACK && c <= 1.0 + NORM_SLACK);
        for prefix in [vec![], vec![0], vec![3, 1], vec![9]] {
            let s: f64 = a.conditional(&prefix).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_context_falls_back_to_bos() {
        let vocab = Vocab::build(&["a b"], 10).unwrap();
        let lm = SoftmaxLm::init(vocab.clone(), 1, 2, 0.1, 3).unwrap();
        assert_eq!(lm.context_slot(&[vocab.unk()]), vocab.bos());
        assert_eq!(lm.context_slot(&[]), vocab.bos());
    }

    #[test]
    fn rejects_bad_shapes_and_norms() {
        let vocab = Vocab::build(&["a"], 10).unwrap();
        assert!(SoftmaxLm::new(vocab.clone(), 1, Mat::zeros(2, 2), Mat::zeros(2, 3)).is_err());
        assert!(SoftmaxLm::new(vocab.clone(), 3, Mat::zeros(2, 3), Mat::zeros(2, 3)).is_err());
        let big = Mat::from_element(2, 3, 1.0);
        assert!(SoftmaxLm::new(vocab, 1, big, Mat::zeros(2, 3)).is_err());
    }
}
