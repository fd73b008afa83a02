//! Ranking evaluation for time-conditioned link prediction and time
//! prediction.
//!
//! A query fixes three of `(s, r, o, t)` and asks for the fourth. Every
//! candidate completion is scored; the truth's rank counts the competitors
//! whose distance is lower *or equal* (ties are resolved against the truth).
//! Link queries only consider candidates of the truth's entity type and, by
//! default, push candidates that already interacted with the fixed entity
//! in training below all others.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, EntityType, Quadruple, TemporalKg, Timestamp};
use crate::model::{build_context_index, ContextIndex, ModelParams, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    /// Unknown entity.
    Link,
    /// Unknown day.
    Time,
}

/// Which entity a link query hides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Slot {
    #[default]
    Subject,
    Object,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RerankMode {
    /// Raw ranking.
    None,
    /// Candidates sharing a training tuple with the fixed entity go to the bottom.
    #[default]
    PushDown,
    /// Completions that are known facts are removed (classic filtered setting).
    Filtered,
}

macro_rules! kebab_str {
    ($ty:ident { $($var:ident => $s:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $s),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                match s {
                    $($s => Ok($ty::$var),)*
                    other => Err(format!(
                        "unknown value `{other}` (expected one of: {})",
                        [$($s),*].join(", ")
                    )),
                }
            }
        }
    };
}

kebab_str!(QueryKind { Link => "link", Time => "time" });
kebab_str!(Slot { Subject => "subject", Object => "object" });
kebab_str!(RerankMode { None => "none", PushDown => "push-down", Filtered => "filtered" });

/// A held-out fact with one unknown element; the fact itself is the truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Query {
    pub kind: QueryKind,
    pub slot: Slot,
    pub fact: Quadruple,
}

impl Query {
    pub fn link(fact: Quadruple, slot: Slot) -> Self {
        Query {
            kind: QueryKind::Link,
            slot,
            fact,
        }
    }

    pub fn time(fact: Quadruple) -> Self {
        Query {
            kind: QueryKind::Time,
            slot: Slot::Subject,
            fact,
        }
    }

    /// The hidden entity of a link query.
    pub fn truth_entity(&self) -> EntityId {
        match self.slot {
            Slot::Subject => self.fact.s,
            Slot::Object => self.fact.o,
        }
    }

    /// The entity a link query keeps.
    pub fn fixed_entity(&self) -> EntityId {
        match self.slot {
            Slot::Subject => self.fact.o,
            Slot::Object => self.fact.s,
        }
    }

    pub fn with_entity(&self, e: EntityId) -> Quadruple {
        let mut q = self.fact;
        match self.slot {
            Slot::Subject => q.s = e,
            Slot::Object => q.o = e,
        }
        q
    }

    pub fn with_time(&self, t: Timestamp) -> Quadruple {
        Quadruple { t, ..self.fact }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub kind: QueryKind,
    pub slot: Slot,
    pub rerank: RerankMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kind: QueryKind::Link,
            slot: Slot::Subject,
            rerank: RerankMode::PushDown,
        }
    }
}

pub fn build_queries(facts: &[Quadruple], opts: &EvalOptions) -> Vec<Query> {
    facts
        .iter()
        .map(|&f| match opts.kind {
            QueryKind::Link => Query::link(f, opts.slot),
            QueryKind::Time => Query::time(f),
        })
        .collect()
}

/// All entities with the truth's type.
pub fn candidates_link(query: &Query, kg: &TemporalKg) -> Vec<EntityId> {
    let ty = kg.entity_type(query.truth_entity());
    (0..kg.num_entities() as u32)
        .map(EntityId)
        .filter(|&e| kg.entity_type(e) == ty)
        .collect()
}

/// Every day in `[min t, max t]` of the evaluated split.
pub fn candidates_time(split: &[Quadruple]) -> Result<Vec<Timestamp>> {
    let lo = split.iter().map(|q| q.t).min();
    let hi = split.iter().map(|q| q.t).max();
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok((lo..=hi).collect()),
        _ => Err(Error::Eval("cannot derive candidate dates from an empty split".into())),
    }
}

/// For each entity, the entities it shares a tuple with.
pub fn interaction_sets(train: &[Quadruple]) -> HashMap<EntityId, HashSet<EntityId>> {
    let mut out: HashMap<EntityId, HashSet<EntityId>> = HashMap::new();
    for q in train {
        out.entry(q.s).or_default().insert(q.o);
        out.entry(q.o).or_default().insert(q.s);
    }
    out
}

/// Moves candidates that interacted with `fixed` (other than `truth`) after
/// all others. Order within both groups is kept.
pub fn rerank_prior_interactions(
    fixed: EntityId,
    truth: EntityId,
    ordered: &[EntityId],
    interactions: &HashMap<EntityId, HashSet<EntityId>>,
) -> Vec<EntityId> {
    let seen = interactions.get(&fixed);
    let interacted = |c: &EntityId| *c != truth && seen.is_some_and(|s| s.contains(c));
    let (pushed, kept): (Vec<EntityId>, Vec<EntityId>) = ordered.iter().partition(|c| interacted(c));
    kept.into_iter().chain(pushed).collect()
}

/// Ascending by distance; the truth goes after competitors with equal distance.
pub fn order_candidates<T: Copy + PartialEq>(cands: &[T], distances: &[f64], truth: T) -> Vec<T> {
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    idx.sort_by(|&a, &b| {
        distances[a]
            .total_cmp(&distances[b])
            .then_with(|| (cands[a] == truth).cmp(&(cands[b] == truth)))
    });
    idx.into_iter().map(|i| cands[i]).collect()
}

/// Frozen state shared by all queries of one evaluation.
pub struct EvalContext {
    entity_types: Vec<EntityType>,
    by_type: HashMap<EntityType, Vec<EntityId>>,
    index: ContextIndex,
    interactions: HashMap<EntityId, HashSet<EntityId>>,
    known: HashSet<Quadruple>,
    t_q: Timestamp,
}

impl EvalContext {
    /// `train` feeds the context index, the interaction sets and `t_q`
    /// (its maximum day). `known` lists every fact that the filtered mode
    /// removes (typically train, validation and test together).
    pub fn new(kg: &TemporalKg, train: &[Quadruple], known: &[Quadruple]) -> Result<Self> {
        let t_q = train
            .iter()
            .map(|q| q.t)
            .max()
            .ok_or_else(|| Error::Eval("training split is empty".into()))?;
        Ok(EvalContext {
            entity_types: kg.entity_types().to_vec(),
            by_type: kg.entities_by_type(),
            index: build_context_index(train),
            interactions: interaction_sets(train),
            known: known.iter().chain(train).copied().collect(),
            t_q,
        })
    }

    pub fn t_q(&self) -> Timestamp {
        self.t_q
    }

    pub fn index(&self) -> &ContextIndex {
        &self.index
    }

    pub fn interactions(&self) -> &HashMap<EntityId, HashSet<EntityId>> {
        &self.interactions
    }

    pub fn is_known(&self, q: &Quadruple) -> bool {
        self.known.contains(q)
    }

    pub fn link_candidates(&self, query: &Query) -> &[EntityId] {
        let ty = self.entity_types[query.truth_entity().index()];
        self.by_type.get(&ty).map_or(&[], Vec::as_slice)
    }

    /// Rank of the truth under `distance` (lower is better).
    ///
    /// Link queries use the typed candidate set; time queries use `dates`.
    pub fn rank(
        &self,
        query: &Query,
        dates: &[Timestamp],
        rerank: RerankMode,
        distance: &mut dyn FnMut(&Quadruple) -> f64,
    ) -> Result<usize> {
        let truth_d = distance(&query.fact);
        let mut better = 0usize;
        match query.kind {
            QueryKind::Link => {
                let truth = query.truth_entity();
                let cands = self.link_candidates(query);
                if !cands.contains(&truth) {
                    return Err(Error::Eval(format!("truth entity {} is not a candidate", truth.0)));
                }
                let seen = self.interactions.get(&query.fixed_entity());
                for &c in cands {
                    if c == truth {
                        continue;
                    }
                    let completion = query.with_entity(c);
                    let excluded = match rerank {
                        RerankMode::None => false,
                        RerankMode::PushDown => seen.is_some_and(|s| s.contains(&c)),
                        RerankMode::Filtered => self.known.contains(&completion),
                    };
                    if !excluded && distance(&completion) <= truth_d {
                        better += 1;
                    }
                }
            }
            QueryKind::Time => {
                if !dates.contains(&query.fact.t) {
                    return Err(Error::Eval(format!("truth day {} is outside the candidate range", query.fact.t)));
                }
                for &d in dates {
                    if d == query.fact.t {
                        continue;
                    }
                    let completion = query.with_time(d);
                    if rerank == RerankMode::Filtered && self.known.contains(&completion) {
                        continue;
                    }
                    if distance(&completion) <= truth_d {
                        better += 1;
                    }
                }
            }
        }
        Ok(better + 1)
    }

    /// Ranks every query against a frozen model, in parallel. Results are
    /// in query order.
    pub fn evaluate(
        &self,
        params: &ModelParams,
        queries: &[Query],
        dates: &[Timestamp],
        rerank: RerankMode,
    ) -> Result<RankingResult> {
        if queries.is_empty() {
            return Err(Error::Eval("no queries to evaluate".into()));
        }
        let t_q = self.t_q;
        let ranks = queries
            .par_iter()
            .map_init(
                || Scorer::new(params, &self.index),
                |scorer, q| self.rank(q, dates, rerank, &mut |c| scorer.distance(c, t_q)),
            )
            .collect::<Result<Vec<usize>>>()?;
        let metrics = aggregate(&ranks)?;
        Ok(RankingResult { ranks, metrics })
    }
}

/// Aggregate metrics with standard errors of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mr: f64,
    pub mrr: f64,
    pub se_hits1: f64,
    pub se_hits3: f64,
    pub se_hits10: f64,
    pub se_mr: f64,
    pub se_mrr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub ranks: Vec<usize>,
    pub metrics: Metrics,
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn aggregate(ranks: &[usize]) -> Result<Metrics> {
    let n = ranks.len();
    if n == 0 {
        return Err(Error::Eval("cannot aggregate zero ranks".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Eval("ranks are 1-based".into()));
    }
    let hits = |k: usize| mean_se(ranks.iter().map(move |&r| if r <= k { 1.0 } else { 0.0 }), n);
    let (hits1, se_hits1) = hits(1);
    let (hits3, se_hits3) = hits(3);
    let (hits10, se_hits10) = hits(10);
    let (mr, se_mr) = mean_se(ranks.iter().map(|&r| r as f64), n);
    let (mrr, se_mrr) = mean_se(ranks.iter().map(|&r| 1.0 / r as f64), n);
    Ok(Metrics {
        n,
        hits1,
        hits3,
        hits10,
        mr,
        mrr,
        se_hits1,
        se_hits3,
        se_hits10,
        se_mr,
        se_mrr,
    })
}

/// Half-width of the 95% confidence interval.
pub fn ci95(se: f64) -> f64 {
    1.96 * se
}

/// For `(mean, se)` pairs, flags the entries within the 95% interval of the
/// best one.
pub fn within_ci_of_best(values: &[(f64, f64)], higher_is_better: bool) -> Vec<bool> {
    let best = values.iter().copied().reduce(|a, b| {
        let b_wins = if higher_is_better { b.0 > a.0 } else { b.0 < a.0 };
        if b_wins {
            b
        } else {
            a
        }
    });
    let Some((best_mean, best_se)) = best else { return Vec::new() };
    values.iter().map(|(m, _)| (m - best_mean).abs() <= ci95(best_se)).collect()
}

pub const METRIC_COLUMNS: [&str; 5] = ["HITS@1", "HITS@3", "HITS@10", "MR", "MRR"];

/// Writes one row per named result; each metric is followed by its 95% CI
/// half-width and a `*` flag column marking rows within the CI of the best.
pub fn write_metrics(path: &Path, header: &str, rows: &[(String, Metrics)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# {header}")?;
    let mut cols = vec!["model".to_string(), "n".to_string()];
    for c in METRIC_COLUMNS {
        cols.push(c.to_string());
        cols.push(format!("{c}_ci95"));
        cols.push(format!("{c}_best"));
    }
    writeln!(out, "{}", cols.join("\t"))?;
    let columns: [(fn(&Metrics) -> (f64, f64), bool); 5] = [
        (|m| (m.hits1, m.se_hits1), true),
        (|m| (m.hits3, m.se_hits3), true),
        (|m| (m.hits10, m.se_hits10), true),
        (|m| (m.mr, m.se_mr), false),
        (|m| (m.mrr, m.se_mrr), true),
    ];
    let flags: Vec<Vec<bool>> = columns
        .iter()
        .map(|(get, hib)| within_ci_of_best(&rows.iter().map(|(_, m)| get(m)).collect::<Vec<_>>(), *hib))
        .collect();
    for (i, (name, m)) in rows.iter().enumerate() {
        let mut fields = vec![name.clone(), m.n.to_string()];
        for (c, (get, _)) in columns.iter().enumerate() {
            let (v, se) = get(m);
            fields.push(format!("{v:.6}"));
            fields.push(format!("{:.6}", ci95(se)));
            fields.push(if flags[c][i] { "*".into() } else { String::new() });
        }
        writeln!(out, "{}", fields.join("\t"))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `query_id, s, r, o, t, rank` lines with labels from `kg`.
pub fn write_ranks(path: &Path, header: &str, kg: &TemporalKg, queries: &[Query], ranks: &[usize]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# {header}")?;
    writeln!(out, "query\ts\tr\to\tt\tunknown\trank")?;
    for (i, (q, r)) in queries.iter().zip(ranks).enumerate() {
        let l = kg.labeled(&q.fact);
        let unknown = match (q.kind, q.slot) {
            (QueryKind::Time, _) => "t",
            (QueryKind::Link, Slot::Subject) => "s",
            (QueryKind::Link, Slot::Object) => "o",
        };
        writeln!(out, "{i}\t{}\t{}\t{}\t{}\t{unknown}\t{r}", l.s, l.r, l.o, l.t)?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
