//! Down-sampling of large event graphs.
//!
//! Two strategies: degree-prioritised snowball growth, which keeps the most
//! connected nodes regardless of type, and repository-centric temporal
//! sampling, which ranks each repository's neighbourhood by a popularity
//! score mixing its size and its time span.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, EntityType, Quadruple, TemporalKg};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Target number of nodes.
    pub sample_size: usize,
    /// Neighbours pushed per selected node.
    pub growth_size: usize,
    /// Highest-degree nodes used as seeds.
    pub initial_size: usize,
    pub seed: u64,
}

impl SamplerConfig {
    fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.growth_size == 0 || self.initial_size == 0 {
            return Err(Error::Sampling(format!(
                "sample, growth and initial sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A node set and the tuples it induces.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Nodes in selection order.
    pub nodes: Vec<EntityId>,
    /// Tuples with both endpoints in `nodes`, in graph order.
    pub edges: Vec<Quadruple>,
}

fn induced(kg: &TemporalKg, nodes: &HashSet<EntityId>) -> Vec<Quadruple> {
    kg.quads()
        .iter()
        .filter(|q| nodes.contains(&q.s) && nodes.contains(&q.o))
        .copied()
        .collect()
}

/// Snowball sampling with a degree-keyed max-priority queue.
///
/// Seeds are the `initial_size` highest-degree nodes. Each pop selects the
/// highest-degree queued node and pushes up to `growth_size` of its distinct
/// neighbours, drawn without replacement. Already-selected nodes are skipped
/// on pop. If the queue drains before the target is reached (disconnected
/// graphs), the highest-degree unselected node is queued next.
pub fn snowball_sample(kg: &TemporalKg, config: &SamplerConfig) -> Result<Sample> {
    config.validate()?;
    let n_nodes = kg.num_entities();
    if kg.is_empty() {
        return Err(Error::EmptyGraph("cannot sample an empty graph"));
    }
    if config.sample_size > n_nodes {
        return Err(Error::Sampling(format!(
            "sample size {} exceeds node count {n_nodes}",
            config.sample_size
        )));
    }
    if config.initial_size > n_nodes {
        return Err(Error::Sampling(format!(
            "initial size {} exceeds node count {n_nodes}",
            config.initial_size
        )));
    }

    let degree = kg.degrees();
    let adjacency = kg.adjacency();
    // Ties on degree go to the smaller id.
    let key = |e: EntityId| (degree[e.index()], Reverse(e));
    let mut by_degree: Vec<EntityId> = (0..n_nodes as u32).map(EntityId).collect();
    by_degree.sort_by_key(|&e| Reverse(key(e)));

    let mut queue = BinaryHeap::new();
    for &e in &by_degree[..config.initial_size] {
        queue.push(key(e));
    }
    let mut rng = rng::substream(config.seed, "snowball");
    let mut selected = HashSet::with_capacity(config.sample_size);
    let mut nodes = Vec::with_capacity(config.sample_size);
    let mut fallback = by_degree.iter();

    while nodes.len() < config.sample_size {
        let Some((_, Reverse(node))) = queue.pop() else {
            let next = fallback
                .by_ref()
                .find(|e| !selected.contains(*e))
                .expect("sample size never exceeds node count");
            queue.push(key(*next));
            continue;
        };
        if !selected.insert(node) {
            continue;
        }
        nodes.push(node);
        let neighbours = &adjacency[node.index()];
        let take = config.growth_size.min(neighbours.len());
        for i in index::sample(&mut rng, neighbours.len(), take) {
            queue.push(key(neighbours[i]));
        }
    }

    let edges = induced(kg, &selected);
    Ok(Sample { nodes, edges })
}

/// `W1 * S_G + W2 * T_G` with `S_G` the tuple count and `T_G` the span in days.
pub fn popularity(subgraph: &[Quadruple], w_size: f64, w_span: f64) -> Result<f64> {
    let lo = subgraph.iter().map(|q| q.t).min();
    let hi = subgraph.iter().map(|q| q.t).max();
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok(w_size * subgraph.len() as f64 + w_span * (hi - lo + 1) as f64),
        _ => Err(Error::Sampling("popularity of an empty subgraph".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepositoryScore {
    pub repository: EntityId,
    pub label: String,
    pub size: usize,
    pub span: usize,
    pub popularity: f64,
    pub nodes: usize,
    pub chosen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSample {
    pub sample: Sample,
    /// Every repository, most popular first.
    pub scores: Vec<RepositoryScore>,
}

/// Nodes related to a repository: everything sharing a tuple with it, plus
/// everything sharing a tuple with those of its neighbours that are issues
/// or pull requests.
fn related_nodes(kg: &TemporalKg, adjacency: &[Vec<EntityId>], repo: EntityId) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    out.insert(repo);
    for &n in &adjacency[repo.index()] {
        out.insert(n);
        if matches!(kg.entity_type(n), EntityType::Issue | EntityType::PullRequest) {
            out.extend(adjacency[n.index()].iter().copied());
        }
    }
    out
}

/// Repository-centric sampling: score every repository neighbourhood by
/// popularity, then union neighbourhoods in descending popularity while the
/// node set is smaller than `sample_size`. Ties break by repository label.
pub fn temporal_sample(kg: &TemporalKg, w_size: f64, w_span: f64, sample_size: usize) -> Result<TemporalSample> {
    if !(w_size >= 0.0 && w_span >= 0.0 && w_size.is_finite() && w_span.is_finite()) {
        return Err(Error::Sampling(format!("weights must be finite and non-negative, got {w_size}, {w_span}")));
    }
    let repos: Vec<EntityId> = (0..kg.num_entities() as u32)
        .map(EntityId)
        .filter(|&e| kg.entity_type(e) == EntityType::Repository)
        .collect();
    if repos.is_empty() {
        return Err(Error::Sampling("graph has no Repository nodes".into()));
    }
    let adjacency = kg.adjacency();

    let mut scored: Vec<(RepositoryScore, BTreeSet<EntityId>)> = repos
        .par_iter()
        .filter_map(|&repo| {
            let nodes = related_nodes(kg, &adjacency, repo);
            let set: HashSet<EntityId> = nodes.iter().copied().collect();
            let edges = induced(kg, &set);
            let pop = popularity(&edges, w_size, w_span).ok()?;
            let span = (edges.iter().map(|q| q.t).max()? - edges.iter().map(|q| q.t).min()? + 1) as usize;
            Some((
                RepositoryScore {
                    repository: repo,
                    label: kg.entities().label(repo.0).to_owned(),
                    size: edges.len(),
                    span,
                    popularity: pop,
                    nodes: nodes.len(),
                    chosen: false,
                },
                nodes,
            ))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.popularity
            .total_cmp(&a.0.popularity)
            .then_with(|| a.0.label.cmp(&b.0.label))
    });

    let mut selected = HashSet::new();
    let mut order = Vec::new();
    for (score, nodes) in &mut scored {
        if selected.len() >= sample_size {
            break;
        }
        score.chosen = true;
        for &n in nodes.iter() {
            if selected.insert(n) {
                order.push(n);
            }
        }
    }
    let edges = induced(kg, &selected);
    Ok(TemporalSample {
        sample: Sample { nodes: order, edges },
        scores: scored.into_iter().map(|(s, _)| s).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_graph, LabeledQuad};
    use std::collections::HashMap;

    fn graph(edges: &[(&str, &str, i64)], types: &[(&str, &str)]) -> TemporalKg {
        let quads: Vec<_> = edges.iter().map(|(s, o, t)| LabeledQuad::new(*s, "r", *o, *t)).collect();
        let types: HashMap<String, String> = types.iter().map(|(l, t)| (l.to_string(), t.to_string())).collect();
        build_graph(&quads, &types).unwrap()
    }

    fn users(labels: &[&'static str]) -> Vec<(&'static str, &'static str)> {
        labels.iter().map(|l| (*l, "User")).collect()
    }

    #[test]
    fn exhaustive_snowball_takes_everything() {
        let kg = graph(&[("a", "b", 0), ("b", "c", 1), ("d", "e", 2)], &users(&["a", "b", "c", "d", "e"]));
        let cfg = SamplerConfig {
            sample_size: 5,
            growth_size: 1,
            initial_size: 5,
            seed: 3,
        };
        let s = snowball_sample(&kg, &cfg).unwrap();
        assert_eq!(s.nodes.len(), 5);
        assert_eq!(s.edges.len(), 3);
    }

    #[test]
    fn path_graph_pops_centre_first() {
        let kg = graph(&[("a", "b", 0), ("b", "c", 0)], &users(&["a", "b", "c"]));
        let cfg = SamplerConfig {
            sample_size: 2,
            growth_size: 2,
            initial_size: 1,
            seed: 0,
        };
        let s = snowball_sample(&kg, &cfg).unwrap();
        assert_eq!(s.nodes[0], kg.entity_id("b").unwrap());
        assert_eq!(s.nodes.len(), 2);
    }

    #[test]
    fn snowball_errors() {
        let kg = graph(&[("a", "b", 0)], &users(&["a", "b"]));
        let cfg = SamplerConfig {
            sample_size: 3,
            growth_size: 1,
            initial_size: 1,
            seed: 0,
        };
        assert!(snowball_sample(&kg, &cfg).is_err());
        let cfg = SamplerConfig { sample_size: 1, initial_size: 0, ..cfg };
        assert!(snowball_sample(&kg, &cfg).is_err());
    }

    #[test]
    fn popularity_formula() {
        let sub: Vec<Quadruple> = (0..100).map(|i| Quadruple::new(0, 0, 1, (i % 30) as i64)).collect();
        assert_eq!(popularity(&sub, 1.0, 2.0).unwrap(), 160.0);
        assert_eq!(popularity(&sub, 0.0, 1.0).unwrap(), 30.0);
        let a: Vec<Quadruple> = (0..10).map(|i| Quadruple::new(0, 0, 1, (i % 5) as i64)).collect();
        let b: Vec<Quadruple> = (0..5).map(|i| Quadruple::new(0, 0, 1, (i * 9 / 4) as i64)).collect();
        assert_eq!(popularity(&a, 1.0, 1.0).unwrap(), 15.0);
        assert_eq!(popularity(&b, 1.0, 1.0).unwrap(), 15.0);
        assert!(popularity(&[], 1.0, 1.0).is_err());
    }

    #[test]
    fn single_repository_takes_its_neighbourhood() {
        let kg = graph(
            &[("u1", "i1", 0), ("i1", "repo", 0), ("u2", "i1", 3)],
            &[("u1", "User"), ("u2", "User"), ("i1", "Issue"), ("repo", "Repository")],
        );
        let s = temporal_sample(&kg, 1.0, 1.0, 100).unwrap();
        assert_eq!(s.sample.nodes.len(), 4);
        assert_eq!(s.sample.edges.len(), 3);
    }

    #[test]
    fn popular_repository_exhausts_budget() {
        // big: 3 tuples spanning 10 days; small: one tuple on one day.
        let kg = graph(
            &[
                ("u1", "big", 0),
                ("u2", "big", 5),
                ("u3", "big", 9),
                ("u4", "small", 2),
            ],
            &[
                ("u1", "User"),
                ("u2", "User"),
                ("u3", "User"),
                ("u4", "User"),
                ("big", "Repository"),
                ("small", "Repository"),
            ],
        );
        let s = temporal_sample(&kg, 1.0, 1.0, 3).unwrap();
        assert_eq!(s.scores[0].label, "big");
        assert_eq!(s.scores[0].popularity, 13.0);
        assert!(s.scores[0].chosen && !s.scores[1].chosen);
        assert_eq!(s.sample.nodes.len(), 4);
        assert!(!s.sample.nodes.contains(&kg.entity_id("small").unwrap()));
    }

    #[test]
    fn no_repositories_is_an_error() {
        let kg = graph(&[("a", "b", 0)], &users(&["a", "b"]));
        assert!(temporal_sample(&kg, 1.0, 1.0, 2).is_err());
    }
}
