//! Interpretation of learned switches and text-level evaluation metrics.

mod metrics;
mod scorer;
mod svd;

pub use metrics::{dist_k, toxicity_metrics, ToxicityReport};
pub use scorer::{
    classify_group, load_lexicon, Group, GroupChoice, Scorer, DEFAULT_RETRIES, DEFAULT_TIMEOUT,
    SCORER_URL_ENV,
};
pub use svd::{
    interpret_switch, svd_directions, top_influenced_tokens, DirectionReport, SvdDecomposition,
};
