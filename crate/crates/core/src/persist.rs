//! On-disk formats: MAT1 matrices, JSONL corpora, key=value run configs and
//! model/switch directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hmm::ConditionedHmm;
use crate::linalg::{Mat, Vector};
use crate::lm::{SoftmaxLm, Vocab};
use crate::switch::{SwitchMatrix, EPS0};
use crate::transfer::EmbeddingMap;

const MAGIC: &[u8; 4] = b"MAT1";
const HEADER: usize = 12;

/// MAT1 bytes: magic, u32 rows, u32 cols, row-major f64, all little-endian.
pub fn encode_mat1(m: &Mat) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::input("too many rows for MAT1"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::input("too many columns for MAT1"))?;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("MAT1 stores finite matrices only"));
    }
    let mut out = Vec::with_capacity(HEADER + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_mat1(bytes: &[u8], path: &Path) -> Result<Mat> {
    let fail = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(0, "missing MAT1 magic".into()));
    }
    if bytes.len() < HEADER {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| fail(4, format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Mat::from_row_slice(rows, cols, &values))
}

pub fn write_mat1(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, encode_mat1(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_mat1(path: &Path) -> Result<Mat> {
    decode_mat1(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub text: String,
    pub label: i8,
}

/// A rejected corpus line and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

fn parse_record(line: &str) -> std::result::Result<CorpusRecord, String> {
    let v: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let text = v
        .get("text")
        .and_then(|t| t.as_str())
        .ok_or("missing string field \"text\"")?;
    if text.trim().is_empty() {
        return Err("empty text".into());
    }
    let label = match v.get("label").and_then(|l| l.as_i64()) {
        Some(1) => 1,
        Some(-1) => -1,
        Some(other) => return Err(format!("invalid label {other}, expected 1 or -1")),
        None => return Err("missing integer field \"label\"".into()),
    };
    Ok(CorpusRecord {
        text: text.to_string(),
        label,
    })
}

/// One `{"text": ..., "label": ±1}` object per line. Blank lines are ignored;
/// malformed lines are returned as skipped, or fail the read when `strict`.
pub fn read_corpus(path: &Path, strict: bool) -> Result<(Vec<CorpusRecord>, Vec<SkippedLine>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line) {
            Ok(r) => records.push(r),
            Err(reason) if strict => {
                return Err(Error::input(format!(
                    "{}:{}: {reason}",
                    path.display(),
                    i + 1
                )));
            }
            Err(reason) => skipped.push(SkippedLine {
                line: i + 1,
                reason,
            }),
        }
    }
    Ok((records, skipped))
}

pub fn corpus_line(text: &str, label: i8) -> String {
    serde_json::json!({ "text": text, "label": label }).to_string()
}

/// Scorer selection for evaluation commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerMode {
    Lexicon,
    Http,
}

/// Experiment settings read from a `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub base_lm_dir: Option<PathBuf>,
    pub switch_path: Option<PathBuf>,
    pub eps0: f64,
    pub k: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub scorer_mode: ScorerMode,
    pub scorer_url: Option<String>,
    pub lexicon_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            base_lm_dir: None,
            switch_path: None,
            eps0: EPS0,
            k: 5.0,
            top_p: 0.9,
            max_tokens: 20,
            num_samples: 10,
            seed: 0,
            scorer_mode: ScorerMode::Lexicon,
            scorer_url: None,
            lexicon_path: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::input(format!("line {line}: invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Parses `key=value` lines; `#` starts a comment. Unknown keys are errors.
    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::input(format!("line {n}: expected key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || base.join(value);
            match key {
                "base_lm_dir" => cfg.base_lm_dir = Some(path()),
                "switch_path" => cfg.switch_path = Some(path()),
                "lexicon_path" => cfg.lexicon_path = Some(path()),
                "scorer_url" => cfg.scorer_url = Some(value.to_string()),
                "eps0" => cfg.eps0 = parse_value(key, value, n)?,
                "k" => cfg.k = parse_value(key, value, n)?,
                "top_p" => cfg.top_p = parse_value(key, value, n)?,
                "max_tokens" => cfg.max_tokens = parse_value(key, value, n)?,
                "num_samples" => cfg.num_samples = parse_value(key, value, n)?,
                "seed" => cfg.seed = parse_value(key, value, n)?,
                "scorer_mode" => {
                    cfg.scorer_mode = match value {
                        "lexicon" => ScorerMode::Lexicon,
                        "http" => ScorerMode::Http,
                        _ => {
                            return Err(Error::input(format!(
                                "line {n}: scorer_mode must be lexicon or http"
                            )))
                        }
                    }
                }
                _ => return Err(Error::input(format!("line {n}: unknown key {key:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// `key=value` metadata, written in key order.
pub fn write_meta(path: &Path, entries: &BTreeMap<&str, String>) -> Result<()> {
    let text: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::input(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn meta_value<T: std::str::FromStr>(
    meta: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::input(format!("{}: missing key {key}", path.display())))?;
    raw.parse().map_err(|_| {
        Error::input(format!(
            "{}: invalid value {raw:?} for {key}",
            path.display()
        ))
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let text: String = vocab.tokens().iter().map(|t| format!("{t}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_tokens(text.lines().map(str::to_string).collect())
}

/// Model directory: `vocab.txt`, `embeddings.mat1`, `contexts.mat1`, `lm.meta`.
pub fn save_lm(dir: &Path, lm: &SoftmaxLm) -> Result<()> {
    ensure_dir(dir)?;
    write_vocab(&dir.join("vocab.txt"), lm.vocab())?;
    write_mat1(&dir.join("embeddings.mat1"), lm.embeddings())?;
    write_mat1(&dir.join("contexts.mat1"), lm.contexts())?;
    let meta = BTreeMap::from([
        ("order", lm.order().to_string()),
        ("dim", lm.dim().to_string()),
        ("trained", lm.is_trained().to_string()),
        ("vocab_hash", lm.vocab().hash()),
    ]);
    write_meta(&dir.join("lm.meta"), &meta)
}

pub fn load_lm(dir: &Path) -> Result<SoftmaxLm> {
    let vocab = read_vocab(&dir.join("vocab.txt"))?;
    let meta_path = dir.join("lm.meta");
    let meta = read_meta(&meta_path)?;
    let order: usize = meta_value(&meta, "order", &meta_path)?;
    let trained: bool = meta_value(&meta, "trained", &meta_path)?;
    let lm = SoftmaxLm::new(
        vocab,
        order,
        read_mat1(&dir.join("embeddings.mat1"))?,
        read_mat1(&dir.join("contexts.mat1"))?,
    )?;
    Ok(if trained { lm.mark_trained() } else { lm })
}

/// Switch directory: `w.mat1`, `w_dummy.mat1`, `switch.meta`.
pub fn save_switch(dir: &Path, sw: &SwitchMatrix, vocab: &Vocab) -> Result<()> {
    ensure_dir(dir)?;
    write_mat1(&dir.join("w.mat1"), &sw.w)?;
    write_mat1(&dir.join("w_dummy.mat1"), &sw.w_dummy)?;
    let meta = BTreeMap::from([
        ("eps0", format!("{:?}", sw.eps0)),
        ("d", sw.dim().to_string()),
        ("decode_scale", format!("{:?}", sw.decode_scale)),
        ("vocab_hash", vocab.hash()),
    ]);
    write_meta(&dir.join("switch.meta"), &meta)
}

/// Loads a switch and checks it was trained against `vocab`.
pub fn load_switch(dir: &Path, vocab: &Vocab) -> Result<SwitchMatrix> {
    let meta_path = dir.join("switch.meta");
    let meta = read_meta(&meta_path)?;
    let hash: String = meta_value(&meta, "vocab_hash", &meta_path)?;
    if hash != vocab.hash() {
        return Err(Error::input(format!(
            "{}: switch was trained for a different vocabulary",
            dir.display()
        )));
    }
    let mut sw = SwitchMatrix::new(
        read_mat1(&dir.join("w.mat1"))?,
        read_mat1(&dir.join("w_dummy.mat1"))?,
        meta_value(&meta, "eps0", &meta_path)?,
    )?;
    let d: usize = meta_value(&meta, "d", &meta_path)?;
    if d != sw.dim() {
        return Err(Error::input(format!(
            "{}: metadata says d={d}, matrices are {}",
            dir.display(),
            sw.dim()
        )));
    }
    sw.decode_scale = meta_value(&meta, "decode_scale", &meta_path)?;
    Ok(sw)
}

/// Map directory: `h.mat1` and `map.meta`.
pub fn save_map(dir: &Path, map: &EmbeddingMap) -> Result<()> {
    ensure_dir(dir)?;
    write_mat1(&dir.join("h.mat1"), &map.h)?;
    let meta = BTreeMap::from([
        ("anchor_count", map.anchor_count.to_string()),
        ("fit_residual", format!("{:?}", map.fit_residual)),
        ("oracle_gap", format!("{:?}", map.oracle_gap)),
        ("oracle_residual", format!("{:?}", map.oracle_residual)),
        (
            "decode_scale",
            format!("{:?}", crate::transfer::TRANSFER_SCALE),
        ),
    ]);
    write_meta(&dir.join("map.meta"), &meta)
}

/// Conditioned-HMM directory: `phi`, `psi`, `a_prime`, `phi_pi` (as a
/// column) in MAT1 plus `chmm.meta` with the block sizes.
pub fn save_chmm(dir: &Path, chmm: &ConditionedHmm) -> Result<()> {
    ensure_dir(dir)?;
    write_mat1(&dir.join("phi.mat1"), &chmm.phi)?;
    write_mat1(&dir.join("psi.mat1"), &chmm.psi)?;
    write_mat1(&dir.join("a_prime.mat1"), &chmm.a_prime)?;
    write_mat1(
        &dir.join("phi_pi.mat1"),
        &Mat::from_column_slice(chmm.phi_pi.len(), 1, chmm.phi_pi.as_slice()),
    )?;
    let meta = BTreeMap::from([("d_s", chmm.d_s.to_string()), ("d_c", chmm.d_c.to_string())]);
    write_meta(&dir.join("chmm.meta"), &meta)
}

pub fn load_chmm(dir: &Path) -> Result<ConditionedHmm> {
    let meta_path = dir.join("chmm.meta");
    let meta = read_meta(&meta_path)?;
    let phi_pi = read_mat1(&dir.join("phi_pi.mat1"))?;
    if phi_pi.ncols() != 1 {
        return Err(Error::input(format!(
            "{}: phi_pi must be a column",
            dir.display()
        )));
    }
    ConditionedHmm::new(
        meta_value(&meta, "d_s", &meta_path)?,
        meta_value(&meta, "d_c", &meta_path)?,
        read_mat1(&dir.join("phi.mat1"))?,
        read_mat1(&dir.join("psi.mat1"))?,
        read_mat1(&dir.join("a_prime.mat1"))?,
        Vector::from_column_slice(phi_pi.as_slice()),
    )
}
