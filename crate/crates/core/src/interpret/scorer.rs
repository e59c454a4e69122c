use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lm::words;

pub const SCORER_URL_ENV: &str = "SWITCH_SCORER_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_RETRIES: usize = 2;

/// Text scorer with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub enum Scorer {
    /// Token-mean of lexicon weights; unknown tokens weigh 0.
    Lexicon(HashMap<String, f64>),
    /// POSTs `{"text": ...}` and reads `{"score": x}`.
    Http {
        url: String,
        timeout: Duration,
        retries: usize,
        fallback: Option<HashMap<String, f64>>,
    },
}

/// Reads `token<TAB>weight` lines; blank lines are skipped.
pub fn load_lexicon(path: &Path) -> Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(&text)
        .map_err(|(line, msg)| Error::input(format!("{}:{line}: {msg}", path.display())))
}

fn parse_lexicon(text: &str) -> std::result::Result<HashMap<String, f64>, (usize, String)> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (tok, w) = line
            .split_once('\t')
            .ok_or((i + 1, "expected token<TAB>weight".to_string()))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| (i + 1, format!("bad weight {w:?}")))?;
        if !(0.0..=1.0).contains(&w) {
            return Err((i + 1, format!("weight {w} outside [0, 1]")));
        }
        out.insert(tok.trim().to_lowercase(), w);
    }
    Ok(out)
}

fn lexicon_score(lex: &HashMap<String, f64>, text: &str) -> f64 {
    let mut n = 0usize;
    let mut total = 0.0;
    for w in words(text) {
        n += 1;
        total += lex.get(&w).copied().unwrap_or(0.0);
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

fn http_score(url: &str, timeout: Duration, retries: usize, text: &str) -> Result<f64> {
    let client = reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::ScorerUnavailable(e.to_string()))?;
    let mut last = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 << (attempt - 1)));
        }
        let resp = match client
            .post(url)
            .json(&serde_json::json!({ "text": text }))
            .send()
        {
            Ok(r) => r,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        if resp.status().is_server_error() {
            last = format!("status {}", resp.status());
            continue;
        }
        if !resp.status().is_success() {
            return Err(Error::ScorerProtocol(format!("status {}", resp.status())));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| Error::ScorerProtocol(e.to_string()))?;
        return match body.get("score").and_then(serde_json::Value::as_f64) {
            Some(s) if (0.0..=1.0).contains(&s) => Ok(s),
            _ => Err(Error::ScorerProtocol(format!(
                "expected {{\"score\": x in [0,1]}}, got {body}"
            ))),
        };
    }
    Err(Error::ScorerUnavailable(format!("{url}: {last}")))
}

impl Scorer {
    pub fn lexicon(weights: HashMap<String, f64>) -> Self {
        Scorer::Lexicon(weights)
    }

    /// HTTP scorer with the default timeout and retry policy.
    pub fn http(url: impl Into<String>) -> Self {
        Scorer::Http {
            url: url.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            fallback: None,
        }
    }

    pub fn score_text(&self, text: &str) -> Result<f64> {
        match self {
            Scorer::Lexicon(lex) => Ok(lexicon_score(lex, text)),
            Scorer::Http {
                url,
                timeout,
                retries,
                fallback,
            } => match http_score(url, *timeout, *retries, text) {
                Err(Error::ScorerUnavailable(_)) if fallback.is_some() => {
                    Ok(lexicon_score(fallback.as_ref().unwrap(), text))
                }
                other => other,
            },
        }
    }

    /// Scores in input order; requests run on the current rayon pool.
    pub fn score_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<f64>> {
        texts
            .par_iter()
            .map(|t| self.score_text(t.as_ref()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Group {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupChoice {
    pub keyword: Group,
    pub score_a: f64,
    pub score_b: f64,
    pub tie: bool,
}

/// Scores each token group as one text and picks the higher; ties go to A
/// and are flagged.
pub fn classify_group<S: AsRef<str>>(scorer: &Scorer, a: &[S], b: &[S]) -> Result<GroupChoice> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("both token groups must be non-empty"));
    }
    let join = |g: &[S]| g.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(" ");
    let score_a = scorer.score_text(&join(a))?;
    let score_b = scorer.score_text(&join(b))?;
    Ok(GroupChoice {
        keyword: if score_b > score_a {
            Group::B
        } else {
            Group::A
        },
        score_a,
        score_b,
        tie: score_a == score_b,
    })
}
