//! Base language models exposing contextual vectors and output embeddings.

use rayon::prelude::*;

use crate::enumerate::count_checked;
use crate::error::{Error, Result};
use crate::hmm::LmView;
use crate::linalg::compensated_sum;

mod softmax;
mod vocab;

pub(crate) use softmax::{aggregate, Transitions};
pub use softmax::{train_base_lm, BaseLmConfig, SoftmaxLm};
pub use vocab::{words, Vocab, BOS, EOS};

/// Autoregressive next-token distribution over a dense vocabulary.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// `P(. | prefix)`; sums to one.
    fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Linear LM `P(o | prefix) ∝ c^T e_o` backed by an HMM view.
#[derive(Debug, Clone)]
pub struct LinearLm {
    view: LmView,
}

impl LinearLm {
    pub fn new(view: LmView) -> Self {
        Self { view }
    }

    pub fn view(&self) -> &LmView {
        &self.view
    }
}

impl LanguageModel for LinearLm {
    fn vocab_size(&self) -> usize {
        self.view.vocab_size()
    }

    fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.view.conditional(prefix)
    }
}

/// Exact probabilities of all `|V|^len` sequences in lexicographic order,
/// built level by level so each prefix conditional is evaluated once.
pub fn enumerate_seq_dist<M: LanguageModel + ?Sized>(
    lm: &M,
    len: usize,
    budget: u128,
) -> Result<Vec<f64>> {
    let v = lm.vocab_size();
    count_checked(v, len, budget)?;
    let mut probs = vec![1.0];
    for level in 0..len {
        let next: Result<Vec<Vec<f64>>> = probs
            .par_iter()
            .enumerate()
            .map(|(i, &p)| {
                let prefix = crate::enumerate::decode_index(i, v, level);
                let cond = lm.conditional(&prefix)?;
                Ok(cond.into_iter().map(|q| p * q).collect())
            })
            .collect();
        probs = next?.concat();
    }
    Ok(probs)
}

/// `exp` of the mean negative log-likelihood per predicted token. When `eos`
/// is given it is appended as a final target of every sentence. A target with
/// zero probability (including unknown ids) yields `+inf`.
pub fn perplexity<M: LanguageModel + ?Sized>(
    lm: &M,
    sentences: &[Vec<usize>],
    eos: Option<usize>,
) -> Result<f64> {
    let v = lm.vocab_size();
    let per_sentence: Result<Vec<(f64, usize)>> = sentences
        .par_iter()
        .map(|s| {
            let mut targets = s.clone();
            targets.extend(eos);
            let mut nll = Vec::with_capacity(targets.len());
            for (i, &t) in targets.iter().enumerate() {
                if t >= v {
                    return Ok((f64::INFINITY, targets.len()));
                }
                let p = lm.conditional(&targets[..i])?[t];
                if !(p > 0.0) {
                    return Ok((f64::INFINITY, targets.len()));
                }
                nll.push(-p.ln());
            }
            Ok((compensated_sum(nll), targets.len()))
        })
        .collect();
    let per_sentence = per_sentence?;
    let count: usize = per_sentence.iter().map(|x| x.1).sum();
    if count == 0 {
        return Err(Error::input("perplexity of an empty corpus"));
    }
    if per_sentence.iter().any(|x| x.0.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    let total = compensated_sum(per_sentence.iter().map(|x| x.0));
    Ok((total / count as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_lm_view, Hmm};
    use crate::linalg::{Mat, Vector};

    struct Uniform(usize);

    impl LanguageModel for Uniform {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn conditional(&self, _: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![1.0 / self.0 as f64; self.0])
        }
    }

    /// Fixed table over {a=0, b=1, eos=2}.
    struct Table;

    impl LanguageModel for Table {
        fn vocab_size(&self) -> usize {
            3
        }
        fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            Ok(match prefix.last() {
                None => vec![0.5, 0.5, 0.0],
                Some(0) => vec![0.75, 0.25, 0.0],
                _ => vec![0.0, 0.0, 1.0],
            })
        }
    }

    #[test]
    fn uniform_two_symbols_length_one() {
        assert_eq!(
            enumerate_seq_dist(&Uniform(2), 1, 1_000_000).unwrap(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn enumeration_normalizes() {
        let d = enumerate_seq_dist(&Uniform(5), 3, 1_000_000).unwrap();
        assert_eq!(d.len(), 125);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn enumeration_budget() {
        assert!(matches!(
            enumerate_seq_dist(&Uniform(50), 5, 1_000_000),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn perplexity_of_uniform_is_vocab_size() {
        let corpus = vec![vec![0, 1, 3], vec![2]];
        let p = perplexity(&Uniform(4), &corpus, Some(3)).unwrap();
        assert!((p - 4.0).abs() < 1e-12);
    }

    #[test]
    fn perplexity_hand_example() {
        let p = perplexity(&Table, &[vec![0, 1]], Some(2)).unwrap();
        assert!((p - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perplexity_certain_corpus_is_one() {
        // "b" then eos: P(b)=0.5 so use a corpus the table predicts with certainty
        struct Sure;
        impl LanguageModel for Sure {
            fn vocab_size(&self) -> usize {
                2
            }
            fn conditional(&self, _: &[usize]) -> Result<Vec<f64>> {
                Ok(vec![1.0, 0.0])
            }
        }
        assert_eq!(perplexity(&Sure, &[vec![0, 0, 0]], None).unwrap(), 1.0);
    }

    #[test]
    fn perplexity_zero_probability_is_infinite() {
        let p = perplexity(&Table, &[vec![0, 2]], Some(2)).unwrap();
        assert!(p.is_infinite());
        let unk = perplexity(&Table, &[vec![7]], Some(2)).unwrap();
        assert!(unk.is_infinite());
    }

    #[test]
    fn linear_lm_two_state_example() {
        let hmm = Hmm::new(
            Vector::from_vec(vec![1.0, 0.0]),
            Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            Mat::identity(2, 2),
        )
        .unwrap();
        let lm = LinearLm::new(build_lm_view(&hmm).unwrap());
        let p = lm.conditional(&[0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_lm_matches_hmm_example() {
        let hmm = Hmm::new(
            Vector::from_vec(vec![0.5, 0.5]),
            Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            Mat::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7]),
        )
        .unwrap();
        let lm = LinearLm::new(build_lm_view(&hmm).unwrap());
        for prefix in [vec![], vec![0], vec![1, 0]] {
            let got = lm.conditional(&prefix).unwrap();
            let want = hmm.next_token_dist(&prefix).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
