//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fail.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lmswitch::enumerate::{all_prefixes, map_sequences, DEFAULT_BUDGET};
use lmswitch::hmm::{build_lm_view, random::random_hmm};
use lmswitch::interpret::{dist_k, interpret_switch, svd_directions, toxicity_metrics, Scorer};
use lmswitch::linalg::{gaussian, l1_distance, random_orthogonal, Mat};
use lmswitch::lm::{train_base_lm, BaseLmConfig, SoftmaxLm, Vocab};
use lmswitch::persist::{corpus_line, decode_mat1, encode_mat1};
use lmswitch::search::{certify, export_chmm, gradient_check, search, ExportConfig, SearchConfig};
use lmswitch::switch::{
    ablation_sweep, loglik_and_grad, theorem2_check, theorem3_check, train_switch, DecodeConfig,
    SwitchMatrix, SwitchTrainConfig, EPS0,
};
use lmswitch::synthetic::{detox_corpus, DetoxConfig, DetoxCorpus};
use lmswitch::transfer::{fit_embedding_map, transfer_fidelity, transfer_switch, MapFitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_forward_chain_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut chain, mut total) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=6);
        let h = random_hmm(n, m, &mut rng);
        for prefix in all_prefixes(m, 3, DEFAULT_BUDGET)
            .unwrap()
            .iter()
            .filter(|p| !p.is_empty())
        {
            let mut p = 1.0;
            for t in 0..prefix.len() {
                p *= h.next_token_dist(&prefix[..t]).unwrap()[prefix[t]];
            }
            chain = chain.max((h.seq_prob(prefix).unwrap() - p).abs());
        }
        let sum: f64 = map_sequences(m, 3, DEFAULT_BUDGET, |s| h.seq_prob(s).unwrap())
            .unwrap()
            .iter()
            .sum();
        total = total.max((sum - 1.0).abs());
    }
    check(
        chain < 1e-12 && total < 1e-9,
        format!("chain rule err {chain:.2e}, total err {total:.2e}"),
    )
}

fn c2_projection_view() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(n..=6);
        let h = random_hmm(n, m, &mut rng);
        let view = match build_lm_view(&h) {
            Ok(v) => v,
            Err(e) => return Err(format!("view construction failed: {e}")),
        };
        for prefix in all_prefixes(m, 3, DEFAULT_BUDGET).unwrap() {
            let d = l1_distance(
                &view.conditional(&prefix).unwrap(),
                &h.next_token_dist(&prefix).unwrap(),
            );
            worst = worst.max(d);
        }
    }
    check(worst < 1e-9, format!("max L1 {worst:.2e}"))
}

fn c3_c4_search_and_certify() -> (Outcome, Outcome) {
    let cfg = SearchConfig::default();
    let results = match search(&cfg) {
        Ok(r) => r,
        Err(e) => {
            return (
                Err(format!("search failed: {e}")),
                Err("no search results".into()),
            )
        }
    };
    let converged: Vec<_> = results.iter().filter(|r| r.converged).collect();
    let start_min = results
        .iter()
        .map(|r| r.initial_loss)
        .fold(f64::INFINITY, f64::min);
    let losses: Vec<String> = results
        .iter()
        .map(|r| format!("{:.1e}", r.final_loss))
        .collect();
    let c3 = check(
        !converged.is_empty() && start_min > 1.0,
        format!(
            "{}/{} seeds below {:.0e}; final losses [{}]; min initial loss {start_min:.2}",
            converged.len(),
            results.len(),
            cfg.target_loss,
            losses.join(", ")
        ),
    );
    if converged.is_empty() {
        return (c3, Err("no converged export to certify".into()));
    }
    let (mut t1, mut lem) = (0.0f64, 0.0f64);
    for r in &converged {
        let cert = export_chmm(
            r,
            &ExportConfig {
                seed: r.seed,
                ..Default::default()
            },
        )
        .and_then(|e| certify(&e.chmm, 3));
        match cert {
            Ok(c) => {
                t1 = t1.max(c.theorem1.max_l1);
                lem = lem.max(c.lemmas.max());
            }
            Err(e) => return (c3, Err(format!("seed {}: {e}", r.seed))),
        }
    }
    let c4 = check(
        t1 < 1e-6 && lem < 1e-5,
        format!(
            "{} exports; max L1 {t1:.2e}, lemma residual {lem:.2e}",
            converged.len()
        ),
    );
    (c3, c4)
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_w = 0.0f64;
    for i in 0..20 {
        let words = rng.gen_range(2..6);
        let d = rng.gen_range(2..5);
        let tokens: Vec<String> = (0..words)
            .map(|j| format!("t{j}"))
            .chain(["<s>".into(), "</s>".into()])
            .collect();
        let lm = SoftmaxLm::init(
            Vocab::from_tokens(tokens).unwrap(),
            1 + i % 2,
            d,
            0.3,
            i as u64,
        )
        .unwrap();
        let w = gaussian(d, d, 1.0, &mut rng);
        let eps = 0.5;
        let seq: Vec<usize> = (0..rng.gen_range(1..6))
            .map(|_| rng.gen_range(0..words + 1))
            .collect();
        let (_, g) = loglik_and_grad(&lm, &w, eps, &seq).unwrap();
        let h = 1e-5;
        let mut fd = Mat::zeros(d, d);
        for idx in 0..d * d {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let lp = loglik_and_grad(&lm, &plus, eps, &seq).unwrap().0;
            let lm_ = loglik_and_grad(&lm, &minus, eps, &seq).unwrap().0;
            fd[idx] = (lp - lm_) / (2.0 * h);
        }
        worst_w = worst_w.max((&g - &fd).norm() / fd.norm().max(1e-12));
    }
    let mut worst_phi = 0.0f64;
    for i in 0..20 {
        let d_s = rng.gen_range(2..5);
        let d = d_s + 1;
        let n = d + rng.gen_range(2..6);
        let phi = gaussian(d, n, 0.3, &mut rng);
        let mut inner = ChaCha8Rng::seed_from_u64(i);
        worst_phi = worst_phi.max(gradient_check(&phi, d_s, 30, 1e-6, &mut inner));
    }
    check(
        worst_w < 1e-6 && worst_phi < 1e-5,
        format!(
            "switch grad rel err {worst_w:.2e}, representation loss grad rel err {worst_phi:.2e}"
        ),
    )
}

/// |V| = 5: three words plus sentence markers.
fn small_lm() -> (SoftmaxLm, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let vocab = Vocab::build(&["a b c"], 3).unwrap();
    let sentence = |rng: &mut ChaCha8Rng, bias: usize| -> Vec<usize> {
        (0..rng.gen_range(1..5))
            .map(|_| {
                if rng.gen::<f64>() < 0.6 {
                    bias
                } else {
                    rng.gen_range(0..3)
                }
            })
            .collect()
    };
    let base: Vec<Vec<usize>> = (0..200).map(|i| sentence(&mut rng, i % 3)).collect();
    let cfg = BaseLmConfig {
        dim: 4,
        epochs: 200,
        ..Default::default()
    };
    let lm = train_base_lm(&vocab, &base, &cfg).unwrap().0;
    let pos = (0..60).map(|_| sentence(&mut rng, 0)).collect();
    let neg = (0..60).map(|_| sentence(&mut rng, 2)).collect();
    (lm, pos, neg)
}

fn switch_cfg(seed: u64) -> SwitchTrainConfig {
    SwitchTrainConfig {
        steps: 300,
        seed,
        ..Default::default()
    }
}

fn c6_interpolation_bound(lm: &SoftmaxLm, sw: &SwitchMatrix) -> Outcome {
    let mut worst_ratio = 0.0f64;
    for k in [-1.0, -0.5, 0.25, 0.5, 0.75, 1.5, 2.0] {
        let c = theorem2_check(lm, &sw.w, sw.eps0, k, 3).map_err(|e| e.to_string())?;
        if !c.pass {
            return Err(format!("k={k}: lhs {:.3e} > bound {:.3e}", c.lhs, c.bound));
        }
        worst_ratio = worst_ratio.max(c.lhs / c.bound);
    }
    let mut endpoints = 0.0f64;
    for k in [0.0, 1.0] {
        endpoints = endpoints.max(
            theorem2_check(lm, &sw.w, sw.eps0, k, 3)
                .map_err(|e| e.to_string())?
                .lhs,
        );
    }
    check(
        endpoints < 1e-12,
        format!("max lhs/bound {worst_ratio:.3e}; endpoint lhs {endpoints:.1e}"),
    )
}

fn c7_composition_bound(lm: &SoftmaxLm, a: &SwitchMatrix, b: &SwitchMatrix) -> Outcome {
    let full = theorem3_check(lm, &a.w, &b.w, EPS0, 3).map_err(|e| e.to_string())?;
    let half = theorem3_check(lm, &a.w, &b.w, EPS0 / 2.0, 3).map_err(|e| e.to_string())?;
    check(
        full.pass && half.pass && half.lhs <= full.lhs,
        format!(
            "eps0: {:.3e} <= {:.3e}; eps0/2: {:.3e} <= {:.3e}",
            full.lhs, full.bound, half.lhs, half.bound
        ),
    )
}

struct DetoxRun {
    corpus: DetoxCorpus,
    lm: SoftmaxLm,
    switch: SwitchMatrix,
    scorer: Scorer,
}

fn detox_run() -> DetoxRun {
    let corpus = detox_corpus(&DetoxConfig {
        prompts: 100,
        ..Default::default()
    });
    let vocab = Vocab::build(&corpus.base, 200).unwrap();
    let base: Vec<Vec<usize>> = corpus.base.iter().map(|s| vocab.tokenize(s)).collect();
    let lm = train_base_lm(&vocab, &base, &BaseLmConfig::default())
        .unwrap()
        .0;
    let pick = |label: i8| -> Vec<Vec<usize>> {
        corpus
            .labeled
            .iter()
            .filter(|x| x.1 == label)
            .map(|x| vocab.tokenize(&x.0))
            .collect()
    };
    let cfg = SwitchTrainConfig {
        steps: 3000,
        ..Default::default()
    };
    let switch = train_switch(&lm, &pick(1), &pick(-1), &cfg).unwrap().switch;
    let scorer = Scorer::lexicon(corpus.lexicon.iter().map(|t| (t.clone(), 1.0)).collect());
    DetoxRun {
        corpus,
        lm,
        switch,
        scorer,
    }
}

fn c8_detox_direction(run: &DetoxRun) -> Outcome {
    let vocab = run.lm.vocab();
    let prompts: Vec<Vec<usize>> = run
        .corpus
        .prompts
        .iter()
        .map(|p| vocab.tokenize(p))
        .collect();
    let cfg = DecodeConfig {
        num_samples: 25,
        ..Default::default()
    };
    let metric = |samples: &[Vec<Vec<usize>>]| {
        let scores: Vec<Vec<f64>> = samples
            .iter()
            .map(|outs| {
                outs.iter()
                    .map(|o| {
                        let kept: Vec<usize> =
                            o.iter().copied().filter(|&t| t != vocab.eos()).collect();
                        run.scorer.score_text(&vocab.detokenize(&kept))
                    })
                    .collect::<lmswitch::Result<Vec<f64>>>()
            })
            .collect::<lmswitch::Result<_>>()?;
        Ok(toxicity_metrics(&scores, 0.5)?.0)
    };
    let ks = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let rows = ablation_sweep(&run.lm, &run.switch, &ks, &prompts, &cfg, metric)
        .map_err(|e| e.to_string())?;
    let tox: Vec<f64> = rows.iter().map(|r| r.metric).collect();
    let rises: Vec<f64> = tox
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .collect();
    let ppl_ratio = rows[5].perplexity / rows[0].perplexity;
    let column: Vec<String> = tox.iter().map(|t| format!("{t:.3}")).collect();
    check(
        tox[5] < tox[0] && rises.len() <= 1 && rises.iter().all(|&d| d <= 0.01) && ppl_ratio <= 1.5,
        format!(
            "toxicity [{}], perplexity ratio {ppl_ratio:.3}",
            column.join(", ")
        ),
    )
}

/// 30 words, dimension 8: enough anchors for a well-posed alignment.
fn transfer_source() -> (SoftmaxLm, SwitchMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let words: Vec<String> = (0..30).map(|i| format!("v{i:02}")).collect();
    let vocab = Vocab::build(&[words.join(" ")], 30).unwrap();
    let mut sentences = |n: usize, lo: usize, hi: usize| -> Vec<Vec<usize>> {
        (0..n)
            .map(|_| {
                (0..rng.gen_range(1..7))
                    .map(|_| rng.gen_range(lo..hi))
                    .collect()
            })
            .collect()
    };
    let base = sentences(400, 0, 30);
    let pos = sentences(80, 0, 20);
    let neg = sentences(80, 10, 30);
    let cfg = BaseLmConfig {
        dim: 8,
        epochs: 200,
        ..Default::default()
    };
    let lm = train_base_lm(&vocab, &base, &cfg).unwrap().0;
    let sw = train_switch(&lm, &pos, &neg, &switch_cfg(3))
        .unwrap()
        .switch;
    (lm, sw)
}

fn c9_transfer() -> Outcome {
    let (src, sw) = transfer_source();
    let mut rng = ChaCha8Rng::seed_from_u64(910);
    let q = random_orthogonal(src.dim(), &mut rng);
    let tgt = SoftmaxLm::new(
        src.vocab().clone(),
        src.order(),
        &q * src.embeddings(),
        &q * src.contexts(),
    )
    .map_err(|e| e.to_string())?;
    let map = fit_embedding_map(src.embeddings(), tgt.embeddings(), &MapFitConfig::default())
        .map_err(|e| e.to_string())?;
    let h_err = (&map.h - q.transpose()).norm() / q.norm();
    let moved = transfer_switch(&sw, &map).map_err(|e| e.to_string())?;
    let fidelity =
        transfer_fidelity(&src, &sw, &tgt, &moved, 0.5 * EPS0, 3).map_err(|e| e.to_string())?;
    check(
        h_err < 0.05 && fidelity < 0.05 && map.oracle_gap < 0.01,
        format!(
            "map err {h_err:.2e}, fidelity L1 {fidelity:.2e}, oracle gap {:.2e}",
            map.oracle_gap
        ),
    )
}

fn c10_interpretability(run: &DetoxRun) -> Outcome {
    let lm = &run.lm;
    let reports = interpret_switch(
        &run.switch.w,
        lm.embeddings(),
        lm.vocab(),
        &run.scorer,
        1,
        20,
    )
    .map_err(|e| e.to_string())?;
    let lexicon: HashSet<&str> = run.corpus.lexicon.iter().map(String::as_str).collect();
    let chosen = reports[0].keywords();
    let precision = chosen
        .iter()
        .filter(|t| lexicon.contains(t.as_str()))
        .count() as f64
        / chosen.len() as f64;
    let svd = svd_directions(&run.switch.w).map_err(|e| e.to_string())?;
    let recon = (svd.reconstruct() - &run.switch.w).norm() / run.switch.w.norm();
    check(
        precision >= 0.8 && recon < 1e-10,
        format!("top-20 precision {precision:.2}, reconstruction err {recon:.1e}"),
    )
}

fn c11_metrics() -> Outcome {
    let (avg, prob) =
        toxicity_metrics(&[vec![0.2, 0.6], vec![0.1, 0.3]], 0.5).map_err(|e| e.to_string())?;
    // 0.6 + 0.3 rounds below 0.9 in binary, so compare to the nearest double
    if (avg - 0.45).abs() > 1e-15 || prob != 0.5 {
        return Err(format!("hand example gave ({avg}, {prob})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    for _ in 0..100 {
        let scores: Vec<Vec<f64>> = (0..rng.gen_range(1..8))
            .map(|_| (0..rng.gen_range(1..6)).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let maxima: Vec<f64> = scores
            .iter()
            .map(|s| s.iter().cloned().fold(f64::MIN, f64::max))
            .collect();
        let expect_avg = maxima.iter().sum::<f64>() / maxima.len() as f64;
        let expect_prob = maxima.iter().filter(|&&m| m > 0.5).count() as f64 / maxima.len() as f64;
        let got = toxicity_metrics(&scores, 0.5).map_err(|e| e.to_string())?;
        if got != (expect_avg, expect_prob) {
            return Err(format!(
                "toxicity mismatch {got:?} vs ({expect_avg}, {expect_prob})"
            ));
        }
        let texts: Vec<String> = (0..rng.gen_range(1..5))
            .map(|_| {
                (0..rng.gen_range(0..7))
                    .map(|_| ["x", "y", "z", "w"][rng.gen_range(0..4)])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        for k in 1..=3 {
            let grams: Vec<Vec<&str>> = texts
                .iter()
                .flat_map(|t| {
                    let w: Vec<&str> = t.split_whitespace().collect();
                    w.windows(k).map(|g| g.to_vec()).collect::<Vec<_>>()
                })
                .collect();
            let distinct: HashSet<&Vec<&str>> = grams.iter().collect();
            let expect = if grams.is_empty() {
                0.0
            } else {
                distinct.len() as f64 / grams.len() as f64
            };
            let got = dist_k(&texts, k).map_err(|e| e.to_string())?;
            if got != expect {
                return Err(format!("dist-{k} mismatch {got} vs {expect} on {texts:?}"));
            }
        }
    }
    Ok("hand example and 100 random instances exact".into())
}

fn mat1_round_trips() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let specials = [
        -0.0,
        f64::MIN_POSITIVE / 2.0,
        -5e-324,
        f64::MAX,
        f64::MIN,
        1.0,
    ];
    for _ in 0..50 {
        let (r, c) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let m = Mat::from_fn(r, c, |_, _| {
            if rng.gen::<f64>() < 0.2 {
                specials[rng.gen_range(0..specials.len())]
            } else {
                rng.gen_range(-1e3..1e3)
            }
        });
        let back =
            decode_mat1(&encode_mat1(&m).unwrap(), Path::new("mem")).map_err(|e| e.to_string())?;
        if back.shape() != m.shape()
            || back
                .iter()
                .zip(m.iter())
                .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err("MAT1 round trip changed bits".into());
        }
    }
    Ok(())
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lmswitch"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// All files under `dir`, relative path to bytes, sorted.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_pipeline(work: &Path) -> Result<Vec<String>, String> {
    let steps: &[&[&str]] = &[
        &[
            "train-base-lm",
            "--corpus",
            "../base.jsonl",
            "--epochs",
            "60",
            "--dim",
            "8",
            "--out",
            "lm",
        ],
        &[
            "train-switch",
            "--base-lm-dir",
            "lm",
            "--corpus",
            "../labeled.jsonl",
            "--steps",
            "60",
            "--out",
            "sw",
        ],
        &[
            "generate",
            "--base-lm-dir",
            "lm",
            "--switch-path",
            "sw",
            "--prompts",
            "../prompts.txt",
            "--num-samples",
            "3",
            "--seed",
            "7",
            "--out",
            "gen",
        ],
        &[
            "sweep",
            "--base-lm-dir",
            "lm",
            "--switch-path",
            "sw",
            "--prompts",
            "../prompts.txt",
            "--num-samples",
            "3",
            "--lexicon-path",
            "../lexicon.tsv",
            "--out",
            "sweep",
        ],
        &["verify-hmm", "--num-hmms", "10", "--out", "vhmm"],
        &[
            "verify-bounds",
            "--base-lm-dir",
            "lm",
            "--switch-path",
            "sw",
            "--L",
            "2",
            "--out",
            "vbounds",
        ],
        &[
            "search-assumptions",
            "--n",
            "12",
            "--ds",
            "3",
            "--max-steps",
            "3000",
            "--seeds",
            "0",
            "--target",
            "1e-3",
            "--out",
            "search",
        ],
        &[
            "transfer",
            "--base-lm-dir",
            "lm",
            "--switch-path",
            "sw",
            "--target-lm-dir",
            "lm",
            "--steps",
            "300",
            "--out",
            "transfer",
        ],
        &[
            "interpret",
            "--base-lm-dir",
            "lm",
            "--switch-path",
            "sw",
            "--lexicon-path",
            "../lexicon.tsv",
            "--out",
            "interp",
        ],
        &[
            "eval-metrics",
            "--samples",
            "gen/samples.jsonl",
            "--lexicon-path",
            "../lexicon.tsv",
            "--out",
            "eval",
        ],
    ];
    fs::create_dir_all(work).map_err(|e| e.to_string())?;
    steps.iter().map(|s| run_cli(work, s)).collect()
}

fn c12_reproducibility() -> Outcome {
    mat1_round_trips()?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = detox_corpus(&DetoxConfig {
        base_sentences: 300,
        labeled_sentences: 100,
        prompts: 4,
        ..Default::default()
    });
    let write = |name: &str, body: String| {
        fs::write(root.path().join(name), body).map_err(|e| e.to_string())
    };
    write(
        "base.jsonl",
        corpus
            .base
            .iter()
            .map(|t| corpus_line(t, 1) + "\n")
            .collect(),
    )?;
    write(
        "labeled.jsonl",
        corpus
            .labeled
            .iter()
            .map(|(t, l)| corpus_line(t, *l) + "\n")
            .collect(),
    )?;
    write(
        "prompts.txt",
        corpus.prompts.iter().map(|p| format!("{p}\n")).collect(),
    )?;
    write("lexicon.tsv", corpus.lexicon_file())?;
    let first = cli_pipeline(&root.path().join("run1"))?;
    let second = cli_pipeline(&root.path().join("run2"))?;
    if first != second {
        return Err("summaries differ between runs".into());
    }
    let (a, b) = (
        snapshot(&root.path().join("run1")),
        snapshot(&root.path().join("run2")),
    );
    let mats = a.iter().filter(|(p, _)| p.ends_with(".mat1")).count();
    if a != b {
        let names: Vec<&String> = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| &x.0)
            .collect();
        return Err(format!("artifacts differ: {names:?}"));
    }
    Ok(format!(
        "10 subcommands, {} files ({mats} matrices) identical; MAT1 round trips exact",
        a.len()
    ))
}

fn main() {
    let t0 = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id, name, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {id:>2} [{tag}] {name}: {detail} ({:.0?})",
            t0.elapsed()
        );
        results.push((id, name, outcome));
    };
    record(
        1,
        "forward product equals chained conditionals",
        c1_forward_chain_rule(),
    );
    record(
        2,
        "projection view matches HMM conditionals",
        c2_projection_view(),
    );
    let (c3, c4) = c3_c4_search_and_certify();
    record(3, "representation search converges", c3);
    record(4, "initial-condition switch certified", c4);
    record(5, "gradient oracles", c5_gradients());
    let (lm, pos, neg) = small_lm();
    let a = train_switch(&lm, &pos, &neg, &switch_cfg(1))
        .unwrap()
        .switch;
    let b = train_switch(&lm, &neg, &pos, &switch_cfg(2))
        .unwrap()
        .switch;
    record(6, "interpolation bound", c6_interpolation_bound(&lm, &a));
    record(7, "composition bound", c7_composition_bound(&lm, &a, &b));
    let run = detox_run();
    record(8, "synthetic detox direction", c8_detox_direction(&run));
    record(9, "switch transfer fidelity", c9_transfer());
    record(
        10,
        "interpretable leading direction",
        c10_interpretability(&run),
    );
    record(11, "metric correctness", c11_metrics());
    record(12, "reproducible CLI artifacts", c12_reproducibility());
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {}/{} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
