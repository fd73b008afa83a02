//! Synthetic lag dataset: reporters open issues on random days and a
//! maintainer closes each issue a fixed number of days later.
//!
//! Only the time since the opening tells when an issue gets closed, so the
//! dataset separates models that see relative time from those that do not.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{build_graph, LabeledQuad, TemporalKg};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagConfig {
    pub issues: usize,
    pub reporters: usize,
    pub maintainers: usize,
    /// Days covered by the dataset; openings fall in `[0, span - lag - 1]`.
    pub span: i64,
    pub lag: i64,
    pub seed: u64,
}

impl Default for LagConfig {
    fn default() -> Self {
        LagConfig {
            issues: 400,
            reporters: 40,
            maintainers: 8,
            span: 40,
            lag: 7,
            seed: 0,
        }
    }
}

pub const OPEN: &str = "open";
pub const CLOSE: &str = "close";

/// Labeled tuples plus entity types for a lag dataset.
pub fn lag_tuples(cfg: &LagConfig) -> Result<(Vec<LabeledQuad>, HashMap<String, String>)> {
    if cfg.lag < 1 || cfg.span <= cfg.lag || cfg.issues == 0 || cfg.reporters == 0 || cfg.maintainers == 0 {
        return Err(Error::Graph(format!("invalid lag dataset configuration {cfg:?}")));
    }
    let mut rng = rng::substream(cfg.seed, "synthetic");
    let mut types = HashMap::new();
    let mut quads = Vec::with_capacity(2 * cfg.issues);
    for i in 0..cfg.issues {
        let issue = format!("I:{i}");
        let reporter = format!("U:r{}", rng.gen_range(0..cfg.reporters));
        let maintainer = format!("U:m{}", rng.gen_range(0..cfg.maintainers));
        let day = rng.gen_range(0..cfg.span - cfg.lag);
        quads.push(LabeledQuad::new(reporter.clone(), OPEN, issue.clone(), day));
        quads.push(LabeledQuad::new(maintainer.clone(), CLOSE, issue.clone(), day + cfg.lag));
        types.insert(issue, "Issue".to_string());
        types.insert(reporter, "User".to_string());
        types.insert(maintainer, "User".to_string());
    }
    Ok((quads, types))
}

pub fn lag_dataset(cfg: &LagConfig) -> Result<TemporalKg> {
    let (quads, types) = lag_tuples(cfg)?;
    build_graph(&quads, &types)
}
