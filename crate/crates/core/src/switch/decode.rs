use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{SwitchMatrix, SwitchedLm};
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::lm::{LanguageModel, SoftmaxLm};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// Switch multiplier: decoding uses `M(k eps0 W)`.
    pub k: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            k: 5.0,
            top_p: 0.9,
            max_tokens: 20,
            num_samples: 1,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::input(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::input("max_tokens must be at least 1"));
        }
        if !self.k.is_finite() {
            return Err(Error::input("switch multiplier must be finite"));
        }
        Ok(())
    }
}

/// Samples from the smallest high-probability set with mass >= `top_p`.
/// Candidates are ordered by probability, then by id, so ties are stable.
pub fn nucleus_sample<R: Rng>(probs: &[f64], top_p: f64, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        mass += probs[i];
        kept += 1;
        if mass >= top_p {
            break;
        }
    }
    let u = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &order[..kept] {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    order[kept - 1]
}

fn sample_one(
    lm: &dyn LanguageModel,
    prompt: &[usize],
    eos: usize,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(cfg.max_tokens);
    for _ in 0..cfg.max_tokens {
        let t = nucleus_sample(&lm.conditional(&seq)?, cfg.top_p, &mut rng);
        out.push(t);
        if t == eos {
            break;
        }
        seq.push(t);
    }
    Ok(out)
}

/// Continuations for each prompt under `M(k eps0 s W)`, where `s` is the
/// switch's decode scale. Sample `j` of prompt `i` is seeded with
/// `seed + i * num_samples + j`; a sampled EOS is kept as the final token.
pub fn decode_prompts(
    lm: &SoftmaxLm,
    sw: &SwitchMatrix,
    prompts: &[Vec<usize>],
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<Vec<usize>>>> {
    cfg.validate()?;
    let eps = cfg.k * sw.eps0 * sw.decode_scale;
    let switched = SwitchedLm::new(lm, sw.w.clone(), eps)?;
    let eos = lm.vocab().eos();
    let n = cfg.num_samples;
    let flat: Result<Vec<Vec<usize>>> = (0..prompts.len() * n)
        .into_par_iter()
        .map(|idx| {
            let seed = cfg.seed.wrapping_add(idx as u64);
            sample_one(&switched, &prompts[idx / n], eos, cfg, seed)
        })
        .collect();
    let mut flat = flat?.into_iter();
    Ok(prompts
        .iter()
        .map(|_| flat.by_ref().take(n).collect())
        .collect())
}

/// Unprompted samples (generation starts from BOS).
pub fn decode(lm: &SoftmaxLm, sw: &SwitchMatrix, cfg: &DecodeConfig) -> Result<Vec<Vec<usize>>> {
    Ok(decode_prompts(lm, sw, &[Vec::new()], cfg)?.remove(0))
}

/// Perplexity of generated continuations under the base model, conditioned
/// on their prompts.
pub fn continuation_perplexity(
    lm: &SoftmaxLm,
    prompts: &[Vec<usize>],
    samples: &[Vec<Vec<usize>>],
) -> Result<f64> {
    let mut nll = Vec::new();
    for (prompt, outs) in prompts.iter().zip(samples) {
        for out in outs {
            let mut seq = prompt.clone();
            for &t in out {
                let p = lm.conditional(&seq)?[t];
                if !(p > 0.0) {
                    return Ok(f64::INFINITY);
                }
                nll.push(-p.ln());
                seq.push(t);
            }
        }
    }
    if nll.is_empty() {
        return Err(Error::input("no generated tokens to score"));
    }
    let n = nll.len() as f64;
    Ok((compensated_sum(nll) / n).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: f64,
    pub metric: f64,
    pub perplexity: f64,
}

/// Decodes `prompts` once per switch multiplier (same seeds for every `k`)
/// and reports `metric` over the samples next to the base-model perplexity.
pub fn ablation_sweep<F>(
    lm: &SoftmaxLm,
    sw: &SwitchMatrix,
    ks: &[f64],
    prompts: &[Vec<usize>],
    cfg: &DecodeConfig,
    metric: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(&[Vec<Vec<usize>>]) -> Result<f64>,
{
    ks.iter()
        .map(|&k| {
            let run = DecodeConfig { k, ..cfg.clone() };
            let samples = decode_prompts(lm, sw, prompts, &run)?;
            Ok(SweepRow {
                k,
                metric: metric(&samples)?,
                perplexity: continuation_perplexity(lm, prompts, &samples)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,metric,perplexity\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.k, r.metric, r.perplexity));
    }
    out
}
