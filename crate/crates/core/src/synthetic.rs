//! Synthetic corpora with a planted toxic lexicon.
//!
//! Neutral words follow a sparse Markov chain; toxic sentences additionally
//! insert lexicon words in bursts. All draws come from one seeded stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DetoxConfig {
    pub neutral_words: usize,
    pub toxic_words: usize,
    pub base_sentences: usize,
    pub toxic_share: f64,
    pub labeled_sentences: usize,
    pub prompts: usize,
    pub seed: u64,
}

impl Default for DetoxConfig {
    fn default() -> Self {
        Self {
            neutral_words: 180,
            toxic_words: 20,
            base_sentences: 3000,
            toxic_share: 0.25,
            labeled_sentences: 1000,
            prompts: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetoxCorpus {
    pub lexicon: Vec<String>,
    /// Unlabeled mix used to train the base model.
    pub base: Vec<String>,
    /// Half clean (+1), half toxic (-1), interleaved.
    pub labeled: Vec<(String, i8)>,
    /// Short clean prefixes for generation.
    pub prompts: Vec<String>,
}

impl DetoxCorpus {
    /// `token<TAB>1` lines for the lexicon scorer.
    pub fn lexicon_file(&self) -> String {
        self.lexicon.iter().map(|t| format!("{t}\t1\n")).collect()
    }
}

struct Generator<'a> {
    cfg: &'a DetoxConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn neutral_after(&mut self, prev: Option<usize>) -> usize {
        let n = self.cfg.neutral_words;
        match prev {
            Some(p) if self.rng.gen::<f64>() < 0.8 => (p * 17 + self.rng.gen_range(1..5)) % n,
            _ => {
                // skew starts toward low ids so frequencies differ
                let u: f64 = self.rng.gen();
                ((u * u) * n as f64) as usize
            }
        }
    }

    fn sentence(&mut self, toxic: bool) -> String {
        let len = self.rng.gen_range(6..=12);
        let mut out = Vec::with_capacity(len);
        let mut prev_neutral = None;
        let mut prev_toxic = false;
        for _ in 0..len {
            let p_toxic = if !toxic {
                0.0
            } else if prev_toxic {
                0.6
            } else {
                0.4
            };
            if self.rng.gen::<f64>() < p_toxic {
                out.push(format!(
                    "tox{:02}",
                    self.rng.gen_range(0..self.cfg.toxic_words)
                ));
                prev_toxic = true;
            } else {
                let w = self.neutral_after(prev_neutral);
                out.push(format!("w{w:03}"));
                prev_neutral = Some(w);
                prev_toxic = false;
            }
        }
        out.join(" ")
    }
}

pub fn detox_corpus(cfg: &DetoxConfig) -> DetoxCorpus {
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let base = (0..cfg.base_sentences)
        .map(|_| {
            let toxic = g.rng.gen::<f64>() < cfg.toxic_share;
            g.sentence(toxic)
        })
        .collect();
    let labeled = (0..cfg.labeled_sentences)
        .map(|i| {
            let toxic = i % 2 == 1;
            (g.sentence(toxic), if toxic { -1 } else { 1 })
        })
        .collect();
    let prompts = (0..cfg.prompts)
        .map(|_| {
            g.sentence(false)
                .split(' ')
                .take(2)
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    DetoxCorpus {
        lexicon: (0..cfg.toxic_words).map(|i| format!("tox{i:02}")).collect(),
        base,
        labeled,
        prompts,
    }
}
