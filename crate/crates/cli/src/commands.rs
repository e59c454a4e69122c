use std::fs;
use std::path::Path;

use lmswitch::enumerate::{all_prefixes, map_sequences, DEFAULT_BUDGET};
use lmswitch::hmm::{build_lm_view, random::random_hmm, Hmm};
use lmswitch::interpret::{interpret_switch, load_lexicon, Scorer, ToxicityReport, SCORER_URL_ENV};
use lmswitch::linalg::{compensated_sum, l1_distance};
use lmswitch::lm::{perplexity, train_base_lm, BaseLmConfig, LanguageModel, SoftmaxLm, Vocab};
use lmswitch::persist::{
    load_chmm, load_lm, load_switch, read_corpus, save_chmm, save_lm, save_map, save_switch,
    RunConfig, ScorerMode,
};
use lmswitch::search::{certify, export_chmm, search, ExportConfig, SearchConfig};
use lmswitch::switch::{
    ablation_sweep, decode_prompts, sweep_csv, theorem2_check, theorem3_check, train_switch,
    DecodeConfig, SwitchMatrix, SwitchTrainConfig,
};
use lmswitch::transfer::{
    anchor_columns, anchor_vocab, fit_embedding_map, transfer_switch, MapFitConfig,
};
use lmswitch::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{Cli, Command, Common};

fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

/// Run config from `--config` with flag overrides applied.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = &common.$field {
                cfg.$field = v.clone().into();
            }
        )*};
    }
    take!(base_lm_dir, switch_path, scorer_url, lexicon_path);
    macro_rules! take_copy {
        ($($field:ident),*) => {$(
            if let Some(v) = common.$field {
                cfg.$field = v;
            }
        )*};
    }
    take_copy!(eps0, k, top_p, max_tokens, num_samples, seed);
    if let Some(mode) = &common.scorer_mode {
        cfg.scorer_mode = match mode.as_str() {
            "lexicon" => ScorerMode::Lexicon,
            "http" => ScorerMode::Http,
            other => {
                return Err(input(format!(
                    "scorer mode must be lexicon or http, got {other:?}"
                )))
            }
        };
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| input("this command needs --out"))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write_text(
        path,
        &format!(
            "{}\n",
            serde_json::to_string_pretty(v).expect("serializable")
        ),
    )
}

fn to_json<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn base_lm(cfg: &RunConfig) -> Result<SoftmaxLm> {
    let dir = cfg
        .base_lm_dir
        .as_ref()
        .ok_or_else(|| input("no base model: set base_lm_dir or --base-lm-dir"))?;
    load_lm(dir)
}

fn switch_for(cfg: &RunConfig, lm: &SoftmaxLm) -> Result<SwitchMatrix> {
    match &cfg.switch_path {
        Some(p) => load_switch(p, lm.vocab()),
        None => {
            let mut sw = SwitchMatrix::zeros(lm.dim());
            sw.eps0 = cfg.eps0;
            Ok(sw)
        }
    }
}

fn scorer(cfg: &RunConfig) -> Result<Scorer> {
    let lexicon = cfg.lexicon_path.as_deref().map(load_lexicon).transpose()?;
    match cfg.scorer_mode {
        ScorerMode::Lexicon => lexicon
            .map(Scorer::lexicon)
            .ok_or_else(|| input("lexicon scoring needs lexicon_path")),
        ScorerMode::Http => {
            let url = cfg
                .scorer_url
                .clone()
                .or_else(|| std::env::var(SCORER_URL_ENV).ok())
                .ok_or_else(|| {
                    input(format!("http scoring needs scorer_url or {SCORER_URL_ENV}"))
                })?;
            let mut s = Scorer::http(url);
            if let Scorer::Http { fallback, .. } = &mut s {
                *fallback = lexicon;
            }
            Ok(s)
        }
    }
}

fn read_prompts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| input(format!("invalid {what} entry {s:?}")))
        })
        .collect()
}

fn decode_config(cfg: &RunConfig) -> DecodeConfig {
    DecodeConfig {
        k: cfg.k,
        top_p: cfg.top_p,
        max_tokens: cfg.max_tokens,
        num_samples: cfg.num_samples,
        seed: cfg.seed,
    }
}

/// Continuation text without the terminating EOS.
fn render(vocab: &Vocab, ids: &[usize]) -> String {
    let kept: Vec<usize> = ids.iter().copied().filter(|&t| t != vocab.eos()).collect();
    vocab.detokenize(&kept)
}

pub fn run(cli: Cli) -> Result<Value> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| input(format!("cannot configure {n} threads: {e}")))?;
    }
    let cfg = resolve(&cli.common)?;
    let common = &cli.common;
    match cli.command {
        Command::TrainBaseLm(a) => {
            let out = out_dir(common)?;
            let (records, skipped) = read_corpus(&a.corpus, a.strict)?;
            let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
            let vocab = Vocab::build(&texts, a.vocab_size)?;
            let sentences: Vec<Vec<usize>> = texts.iter().map(|t| vocab.tokenize(t)).collect();
            let lm_cfg = BaseLmConfig {
                order: a.order,
                dim: a.dim,
                epochs: a.epochs,
                lr: a.lr,
                seed: cfg.seed,
                init_std: a.init_std,
            };
            let (lm, history) = train_base_lm(&vocab, &sentences, &lm_cfg)?;
            save_lm(out, &lm)?;
            let (e_norm, c_norm) = lm.max_norms();
            Ok(json!({
                "command": "train-base-lm",
                "out": out,
                "sentences": sentences.len(),
                "skipped_lines": skipped.iter().map(|s| s.line).collect::<Vec<_>>(),
                "vocab_size": vocab.len(),
                "dim": lm.dim(),
                "order": lm.order(),
                "final_loglik": history.last(),
                "perplexity": perplexity(&lm, &sentences, Some(vocab.eos()))?,
                "max_embedding_norm": e_norm,
                "max_context_norm": c_norm,
            }))
        }
        Command::TrainSwitch(a) => {
            let out = out_dir(common)?;
            let (records, skipped) = read_corpus(&a.corpus, a.strict)?;
            let lm = base_lm(&cfg)?;
            let vocab = lm.vocab();
            let pick = |label: i8| -> Vec<Vec<usize>> {
                records
                    .iter()
                    .filter(|r| r.label == label)
                    .map(|r| vocab.tokenize(&r.text))
                    .collect()
            };
            let (pos, neg) = (pick(1), pick(-1));
            let train_cfg = SwitchTrainConfig {
                lr: a.lr,
                steps: a.steps,
                init_var: a.init_var,
                seed: cfg.seed,
                batch: a.batch,
                eps0: cfg.eps0,
            };
            let trained = train_switch(&lm, &pos, &neg, &train_cfg)?;
            save_switch(out, &trained.switch, vocab)?;
            Ok(json!({
                "command": "train-switch",
                "out": out,
                "positive": pos.len(),
                "negative": neg.len(),
                "skipped_lines": skipped.iter().map(|s| s.line).collect::<Vec<_>>(),
                "initial_objective": trained.objective.first(),
                "final_objective": trained.objective.last(),
                "lambda_max": trained.switch.lambda_max(),
                "frobenius": trained.switch.w.norm(),
            }))
        }
        Command::Generate(a) => {
            let lm = base_lm(&cfg)?;
            let sw = switch_for(&cfg, &lm)?;
            let prompts = match &a.prompts {
                Some(p) => read_prompts(p)?,
                None => vec![String::new()],
            };
            let ids: Vec<Vec<usize>> = prompts.iter().map(|p| lm.vocab().tokenize(p)).collect();
            let samples = decode_prompts(&lm, &sw, &ids, &decode_config(&cfg))?;
            let lines: Vec<Value> = prompts
                .iter()
                .zip(&samples)
                .map(|(p, outs)| {
                    json!({"prompt": p, "generations": outs.iter().map(|o| render(lm.vocab(), o)).collect::<Vec<_>>()})
                })
                .collect();
            if let Some(out) = &common.out {
                prepare_out(out)?;
                let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
                write_text(&out.join("samples.jsonl"), &body)?;
            }
            let flat: Vec<String> = samples
                .iter()
                .flatten()
                .map(|o| render(lm.vocab(), o))
                .collect();
            Ok(json!({
                "command": "generate",
                "k": cfg.k,
                "effective_eps": cfg.k * sw.eps0 * sw.decode_scale,
                "samples": flat,
            }))
        }
        Command::Sweep(a) => {
            let lm = base_lm(&cfg)?;
            let sw = switch_for(&cfg, &lm)?;
            let scorer = scorer(&cfg)?;
            let ks: Vec<f64> = parse_list(&a.ks, "k")?;
            let prompts: Vec<Vec<usize>> = read_prompts(&a.prompts)?
                .iter()
                .map(|p| lm.vocab().tokenize(p))
                .collect();
            let vocab = lm.vocab();
            let metric = |samples: &[Vec<Vec<usize>>]| -> Result<f64> {
                let scores = samples
                    .iter()
                    .map(|outs| {
                        outs.iter()
                            .map(|o| scorer.score_text(&render(vocab, o)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(lmswitch::interpret::toxicity_metrics(&scores, 0.5)?.0)
            };
            let rows = ablation_sweep(&lm, &sw, &ks, &prompts, &decode_config(&cfg), metric)?;
            let csv = sweep_csv(&rows);
            if let Some(out) = &common.out {
                prepare_out(out)?;
                write_text(&out.join("sweep.csv"), &csv)?;
            }
            Ok(json!({
                "command": "sweep",
                "rows": rows.iter().map(|r| json!({"k": r.k, "metric": r.metric, "perplexity": r.perplexity})).collect::<Vec<_>>(),
            }))
        }
        Command::VerifyHmm(a) => {
            let report = verify_hmm(&a, cfg.seed)?;
            if let Some(out) = &common.out {
                prepare_out(out)?;
                write_json(&out.join("report.json"), &report)?;
            }
            Ok(report)
        }
        Command::VerifyBounds(a) => {
            let lm = base_lm(&cfg)?;
            let sw = switch_for(&cfg, &lm)?;
            let eps = a.eps.unwrap_or(sw.eps0);
            let ks: Vec<f64> = parse_list(&a.ks, "k")?;
            let mut checks = Vec::new();
            let mut worst: Option<(f64, lmswitch::switch::BoundCheck)> = None;
            for &k in &ks {
                let c = theorem2_check(&lm, &sw.w, eps, k, a.len)?;
                let margin = c.lhs - c.bound;
                if worst.is_none_or(|(m, _)| margin > m) {
                    worst = Some((margin, c));
                }
                checks.push(json!({"k": k, "lhs": c.lhs, "bound": c.bound, "pass": c.pass}));
            }
            let (_, top) = worst.ok_or_else(|| input("no k values given"))?;
            let mut report = json!({
                "command": "verify-bounds",
                "L": a.len,
                "eps": eps,
                "lambda_max": sw.lambda_max(),
                "lhs": top.lhs,
                "bound": top.bound,
                "pass": checks.iter().all(|c| c["pass"] == json!(true)),
                "checks": checks,
            });
            if let Some(p) = &a.switch2 {
                let sw2 = load_switch(p, lm.vocab())?;
                let full = theorem3_check(&lm, &sw.w, &sw2.w, eps, a.len)?;
                let half = theorem3_check(&lm, &sw.w, &sw2.w, eps / 2.0, a.len)?;
                report["composition"] = json!({
                    "eps": to_json(&full),
                    "half_eps": to_json(&half),
                    "shrinks": half.lhs <= full.lhs,
                });
                let ok = report["pass"] == json!(true) && full.pass && half.pass;
                report["pass"] = json!(ok);
            }
            if let Some(out) = &common.out {
                prepare_out(out)?;
                write_json(&out.join("report.json"), &report)?;
            }
            Ok(report)
        }
        Command::SearchAssumptions(a) => {
            let out = out_dir(common)?;
            prepare_out(out)?;
            let search_cfg = SearchConfig {
                n: a.n,
                d_s: a.ds,
                d_c: a.dc,
                lr: a.lr,
                plateau_patience: a.patience,
                max_steps: a.max_steps,
                target_loss: a.target,
                seeds: parse_list(&a.seeds, "seed")?,
                ..SearchConfig::default()
            };
            let results = search(&search_cfg)?;
            let mut exports = Vec::new();
            for r in results.iter().filter(|r| r.converged) {
                let export = export_chmm(
                    r,
                    &ExportConfig {
                        observations: a.observations,
                        seed: r.seed,
                        ..Default::default()
                    },
                )?;
                let dir = out.join(format!("seed_{}", r.seed));
                save_chmm(&dir, &export.chmm)?;
                let cert = certify(&export.chmm, a.len)?;
                let entry = json!({
                    "seed": r.seed,
                    "dir": dir,
                    "refine": to_json(&export.refine),
                    "certification": to_json(&cert),
                });
                write_json(&dir.join("certification.json"), &entry)?;
                exports.push(entry);
            }
            let summary = json!({
                "command": "search-assumptions",
                "long_running": search_cfg.is_long_running(),
                "results": to_json(&results),
                "converged": results.iter().filter(|r| r.converged).count(),
                "best_loss": results.iter().map(|r| r.final_loss).fold(f64::INFINITY, f64::min),
                "exports": exports,
            });
            write_json(&out.join("search.json"), &summary)?;
            Ok(summary)
        }
        Command::Transfer(a) => {
            let out = out_dir(common)?;
            let src = base_lm(&cfg)?;
            let sw = load_switch(
                cfg.switch_path
                    .as_ref()
                    .ok_or_else(|| input("transfer needs switch_path"))?,
                src.vocab(),
            )?;
            let tgt = load_lm(&a.target_lm_dir)?;
            let anchors = anchor_vocab(src.vocab(), tgt.vocab(), a.anchors, src.dim())?;
            let e_src = anchor_columns(src.embeddings(), src.vocab(), &anchors)?;
            let e_tgt = anchor_columns(tgt.embeddings(), tgt.vocab(), &anchors)?;
            let fit = MapFitConfig {
                lr: a.lr,
                steps: a.steps,
                init_var: a.init_var,
                seed: cfg.seed,
            };
            let map = fit_embedding_map(&e_src, &e_tgt, &fit)?;
            let moved = transfer_switch(&sw, &map)?;
            save_map(&out.join("map"), &map)?;
            save_switch(&out.join("switch"), &moved, tgt.vocab())?;
            Ok(json!({
                "command": "transfer",
                "anchor_count": map.anchor_count,
                "fit_residual": map.fit_residual,
                "oracle_gap": map.oracle_gap,
                "decode_scale": moved.decode_scale,
            }))
        }
        Command::Interpret(a) => {
            let lm = base_lm(&cfg)?;
            let sw = switch_for(&cfg, &lm)?;
            let scorer = scorer(&cfg)?;
            let reports =
                interpret_switch(&sw.w, lm.embeddings(), lm.vocab(), &scorer, a.rows, a.top_k)?;
            let directions: Vec<Value> = reports
                .iter()
                .map(|r| {
                    let mut v = to_json(r);
                    v["keywords"] = json!(r.keywords());
                    v
                })
                .collect();
            let report = json!({"command": "interpret", "directions": directions});
            if let Some(out) = &common.out {
                prepare_out(out)?;
                write_json(&out.join("interpret.json"), &report)?;
            }
            Ok(report)
        }
        Command::EvalMetrics(a) => {
            let scorer = scorer(&cfg)?;
            let text = fs::read_to_string(&a.samples).map_err(|e| Error::Io {
                path: a.samples.clone(),
                source: e,
            })?;
            let mut prompts = Vec::new();
            let mut generations: Vec<Vec<String>> = Vec::new();
            for (i, line) in text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let v: Value = serde_json::from_str(line)
                    .map_err(|e| input(format!("{}:{}: {e}", a.samples.display(), i + 1)))?;
                let gens = v["generations"]
                    .as_array()
                    .and_then(|g| {
                        g.iter()
                            .map(|x| x.as_str().map(str::to_string))
                            .collect::<Option<Vec<_>>>()
                    })
                    .ok_or_else(|| {
                        input(format!(
                            "{}:{}: expected a generations array",
                            a.samples.display(),
                            i + 1
                        ))
                    })?;
                prompts.push(v["prompt"].as_str().unwrap_or("").to_string());
                generations.push(gens);
            }
            let scores = generations
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|t| scorer.score_text(t))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let flat: Vec<&String> = generations.iter().flatten().collect();
            let ppl = match &cfg.base_lm_dir {
                Some(_) => output_perplexity(&base_lm(&cfg)?, &prompts, &generations)?,
                None => f64::NAN,
            };
            let mut stats = ToxicityReport::new(&scores, &flat, ppl)?;
            if a.threshold != 0.5 {
                stats.toxicity_prob =
                    lmswitch::interpret::toxicity_metrics(&scores, a.threshold)?.1;
            }
            let report = json!({"command": "eval-metrics", "report": to_json(&stats)});
            if let Some(out) = &common.out {
                prepare_out(out)?;
                write_json(&out.join("report.json"), &report)?;
            }
            Ok(report)
        }
    }
}

/// Base-model perplexity of generations given their prompts.
fn output_perplexity(
    lm: &SoftmaxLm,
    prompts: &[String],
    generations: &[Vec<String>],
) -> Result<f64> {
    let vocab = lm.vocab();
    let mut nll = Vec::new();
    for (p, gens) in prompts.iter().zip(generations) {
        for g in gens {
            let mut seq = vocab.tokenize(p);
            for t in vocab.tokenize(g) {
                let prob = if t < vocab.len() {
                    lm.conditional(&seq)?[t]
                } else {
                    0.0
                };
                if !(prob > 0.0) {
                    return Ok(f64::INFINITY);
                }
                nll.push(-prob.ln());
                seq.push(t);
            }
        }
    }
    if nll.is_empty() {
        return Ok(f64::NAN);
    }
    let n = nll.len() as f64;
    Ok((compensated_sum(nll) / n).exp())
}

fn verify_hmm(a: &crate::VerifyHmm, seed: u64) -> Result<Value> {
    if a.max_states == 0 || a.max_obs == 0 {
        return Err(input("max-states and max-obs must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hmms: Vec<Hmm> = (0..a.num_hmms)
        .map(|_| {
            let n = rng.gen_range(1..=a.max_states);
            let m = rng.gen_range(1..=a.max_obs);
            random_hmm(n, m, &mut rng)
        })
        .collect();
    let mut chain_err: f64 = 0.0;
    let mut total_err: f64 = 0.0;
    let mut view_err: f64 = 0.0;
    let mut views = 0usize;
    for hmm in &hmms {
        let m = hmm.observations();
        let prefixes = all_prefixes(m, a.len, DEFAULT_BUDGET)?;
        for prefix in prefixes.iter().filter(|p| !p.is_empty()) {
            let mut chained = 1.0;
            for t in 0..prefix.len() {
                chained *= hmm.next_token_dist(&prefix[..t])?[prefix[t]];
            }
            chain_err = chain_err.max((hmm.seq_prob(prefix)? - chained).abs());
        }
        if a.len > 0 {
            let probs = map_sequences(m, a.len, DEFAULT_BUDGET, |s| hmm.seq_prob(s))?
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            total_err = total_err.max((compensated_sum(probs) - 1.0).abs());
        }
        // the projection view needs full-rank emissions
        if let Ok(view) = build_lm_view(hmm) {
            views += 1;
            for prefix in &prefixes {
                let got = view.conditional(prefix)?;
                let want = hmm.next_token_dist(prefix)?;
                view_err = view_err.max(l1_distance(&got, &want));
            }
        }
    }
    let mut report = json!({
        "command": "verify-hmm",
        "hmms": hmms.len(),
        "max_chain_rule_error": chain_err,
        "max_total_error": total_err,
        "views_checked": views,
        "max_view_error": view_err,
        "pass": chain_err < 1e-12 && total_err < 1e-9 && view_err < 1e-9,
    });
    if let Some(dir) = &a.chmm {
        let cert = certify(&load_chmm(dir)?, a.len)?;
        let ok = report["pass"] == json!(true)
            && cert.theorem1.max_l1 < 1e-6
            && cert.lemmas.max() < 1e-5;
        report["certification"] = to_json(&cert);
        report["pass"] = json!(ok);
    }
    Ok(report)
}
