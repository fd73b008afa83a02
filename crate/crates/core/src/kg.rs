//! Typed temporal knowledge graphs, dataset splits and summary statistics.
//!
//! Facts are `(subject, relation, object, day)` quadruples over densely
//! indexed vocabularies. Graphs are immutable once built and can be shared
//! across worker threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Integer day index.
pub type Timestamp = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Node types of the forge event graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    User,
    Repository,
    Issue,
    PullRequest,
    IssueComment,
    PullRequestReview,
    PullRequestReviewComment,
    CommitComment,
}

impl EntityType {
    pub const ALL: [EntityType; 8] = [
        EntityType::User,
        EntityType::Repository,
        EntityType::Issue,
        EntityType::PullRequest,
        EntityType::IssueComment,
        EntityType::PullRequestReview,
        EntityType::PullRequestReviewComment,
        EntityType::CommitComment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityType::User => "User",
            EntityType::Repository => "Repository",
            EntityType::Issue => "Issue",
            EntityType::PullRequest => "PullRequest",
            EntityType::IssueComment => "IssueComment",
            EntityType::PullRequestReview => "PullRequestReview",
            EntityType::PullRequestReviewComment => "PullRequestReviewComment",
            EntityType::CommitComment => "CommitComment",
        }
    }

    /// Short code used as the first/last component of relation codes
    /// (`U_SE_C_I` relates a `U`ser to an `I`ssue).
    pub fn code(self) -> &'static str {
        match self {
            EntityType::User => "U",
            EntityType::Repository => "R",
            EntityType::Issue => "I",
            EntityType::PullRequest => "P",
            EntityType::IssueComment => "IC",
            EntityType::PullRequestReview => "PR",
            EntityType::PullRequestReviewComment => "PRC",
            EntityType::CommitComment => "CC",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown entity type `{s}`"))
    }
}

/// One temporal fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruple {
    pub s: EntityId,
    pub r: RelationId,
    pub o: EntityId,
    pub t: Timestamp,
}

impl Quadruple {
    pub fn new(s: u32, r: u32, o: u32, t: Timestamp) -> Self {
        Quadruple {
            s: EntityId(s),
            r: RelationId(r),
            o: EntityId(o),
            t,
        }
    }
}

/// A quadruple before vocabulary assignment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledQuad {
    pub s: String,
    pub r: String,
    pub o: String,
    pub t: Timestamp,
}

impl LabeledQuad {
    pub fn new(s: impl Into<String>, r: impl Into<String>, o: impl Into<String>, t: Timestamp) -> Self {
        LabeledQuad {
            s: s.into(),
            r: r.into(),
            o: o.into(),
            t,
        }
    }
}

impl fmt::Display for LabeledQuad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.s, self.r, self.o, self.t)
    }
}

/// Bijective label <-> dense id mapping, ids assigned in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for label in labels {
            let label = label.into();
            if vocab.get(&label).is_some() {
                return Err(Error::Graph(format!("duplicate vocabulary label `{label}`")));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A typed temporal multigraph with timestamped edges.
#[derive(Clone, Debug)]
pub struct TemporalKg {
    quads: Vec<Quadruple>,
    entities: Vocab,
    entity_types: Vec<EntityType>,
    relations: Vocab,
    span: Option<(Timestamp, Timestamp)>,
    duplicates_dropped: usize,
}

/// Builds a graph from labeled tuples.
///
/// `entity_types` maps entity labels to type names (`User`, `Repository`, ...).
/// Vocabularies are assigned in first-appearance order and exact duplicate
/// tuples are dropped.
pub fn build_graph(quads: &[LabeledQuad], entity_types: &HashMap<String, String>) -> Result<TemporalKg> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut types = Vec::new();
    let mut out = Vec::with_capacity(quads.len());
    let mut seen = HashSet::with_capacity(quads.len());
    let mut span: Option<(Timestamp, Timestamp)> = None;

    let resolve = |label: &str, q: &LabeledQuad, entities: &mut Vocab, types: &mut Vec<EntityType>| -> Result<u32> {
        if let Some(id) = entities.get(label) {
            return Ok(id);
        }
        let ty = entity_types
            .get(label)
            .ok_or_else(|| Error::Graph(format!("entity `{label}` in tuple {q} has no type")))?;
        let ty: EntityType = ty
            .parse()
            .map_err(|e| Error::Graph(format!("{e} for entity `{label}` in tuple {q}")))?;
        types.push(ty);
        Ok(entities.intern(label))
    };

    for q in quads {
        let s = resolve(&q.s, q, &mut entities, &mut types)?;
        let r = relations.intern(&q.r);
        let o = resolve(&q.o, q, &mut entities, &mut types)?;
        let quad = Quadruple::new(s, r, o, q.t);
        if !seen.insert(quad) {
            continue;
        }
        span = Some(match span {
            None => (q.t, q.t),
            Some((lo, hi)) => (lo.min(q.t), hi.max(q.t)),
        });
        out.push(quad);
    }

    let duplicates_dropped = quads.len() - out.len();
    if duplicates_dropped > 0 {
        log::info!("dropped {duplicates_dropped} duplicate tuples");
    }
    Ok(TemporalKg {
        quads: out,
        entities,
        entity_types: types,
        relations,
        span,
        duplicates_dropped,
    })
}

impl TemporalKg {
    /// Assembles a graph from already-indexed parts (used when restoring a
    /// vocabulary from a checkpoint). Duplicates are dropped as in
    /// [`build_graph`].
    pub fn from_parts(
        quads: Vec<Quadruple>,
        entities: Vocab,
        entity_types: Vec<EntityType>,
        relations: Vocab,
    ) -> Result<Self> {
        if entities.len() != entity_types.len() {
            return Err(Error::Graph(format!(
                "{} entities but {} entity types",
                entities.len(),
                entity_types.len()
            )));
        }
        let mut seen = HashSet::with_capacity(quads.len());
        let total = quads.len();
        let mut kept = Vec::with_capacity(total);
        for q in quads {
            if q.s.index() >= entities.len() || q.o.index() >= entities.len() || q.r.index() >= relations.len() {
                return Err(Error::Graph(format!("tuple {q:?} references an id outside the vocabulary")));
            }
            if seen.insert(q) {
                kept.push(q);
            }
        }
        let span = span_of(&kept);
        Ok(TemporalKg {
            duplicates_dropped: total - kept.len(),
            quads: kept,
            entities,
            entity_types,
            relations,
            span,
        })
    }

    /// The same vocabularies with a different tuple list.
    pub fn with_quads(&self, quads: Vec<Quadruple>) -> Result<Self> {
        TemporalKg::from_parts(
            quads,
            self.entities.clone(),
            self.entity_types.clone(),
            self.relations.clone(),
        )
    }

    pub fn quads(&self) -> &[Quadruple] {
        &self.quads
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_types(&self) -> &[EntityType] {
        &self.entity_types
    }

    pub fn entity_type(&self, e: EntityId) -> EntityType {
        self.entity_types[e.index()]
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn tmin(&self) -> Option<Timestamp> {
        self.span.map(|s| s.0)
    }

    pub fn tmax(&self) -> Option<Timestamp> {
        self.span.map(|s| s.1)
    }

    /// `|T| = tmax - tmin + 1`, zero for an empty graph.
    pub fn time_span(&self) -> usize {
        self.span.map_or(0, |(lo, hi)| (hi - lo + 1) as usize)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    /// Degree of every entity, counting both endpoint roles of every tuple.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_entities()];
        for q in &self.quads {
            deg[q.s.index()] += 1;
            deg[q.o.index()] += 1;
        }
        deg
    }

    /// Sorted, de-duplicated neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<EntityId>> {
        let mut adj = vec![Vec::new(); self.num_entities()];
        for q in &self.quads {
            adj[q.s.index()].push(q.o);
            adj[q.o.index()].push(q.s);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Resolves labeled tuples against this graph's vocabularies.
    pub fn resolve(&self, quads: &[LabeledQuad]) -> Result<Vec<Quadruple>> {
        quads
            .iter()
            .map(|q| {
                let s = self.entity_id(&q.s);
                let r = self.relation_id(&q.r);
                let o = self.entity_id(&q.o);
                match (s, r, o) {
                    (Some(s), Some(r), Some(o)) => Ok(Quadruple { s, r, o, t: q.t }),
                    _ => Err(Error::Graph(format!("tuple {q} uses a label outside the vocabulary"))),
                }
            })
            .collect()
    }

    pub fn labeled(&self, q: &Quadruple) -> LabeledQuad {
        LabeledQuad {
            s: self.entities.label(q.s.0).to_owned(),
            r: self.relations.label(q.r.0).to_owned(),
            o: self.entities.label(q.o.0).to_owned(),
            t: q.t,
        }
    }

    /// Entities bucketed by type, ids ascending.
    pub fn entities_by_type(&self) -> HashMap<EntityType, Vec<EntityId>> {
        let mut out: HashMap<EntityType, Vec<EntityId>> = HashMap::new();
        for (i, ty) in self.entity_types.iter().enumerate() {
            out.entry(*ty).or_default().push(EntityId(i as u32));
        }
        out
    }
}

fn span_of(quads: &[Quadruple]) -> Option<(Timestamp, Timestamp)> {
    let lo = quads.iter().map(|q| q.t).min()?;
    let hi = quads.iter().map(|q| q.t).max()?;
    Some((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Interpolated,
    Extrapolated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Quadruple>,
    pub validation: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
    pub mode: SplitMode,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

fn check_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Split(format!("ratios must be finite and non-negative, got {ratios:?}")));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {}", a + b + c)));
    }
    Ok(())
}

// Validation and test sizes are floored; the remainder goes to train.
fn held_out_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize) {
    let count = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    (count(ratios.1), count(ratios.2))
}

/// Random split; each part keeps the input order of its tuples.
pub fn split_random(kg: &TemporalKg, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    check_ratios(ratios)?;
    let n = kg.num_edges();
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 tuples, got {n}")));
    }
    let (n_val, n_test) = held_out_sizes(n, ratios);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, "split"));

    let mut val_idx = order[..n_val].to_vec();
    let mut test_idx = order[n_val..n_val + n_test].to_vec();
    let mut train_idx = order[n_val + n_test..].to_vec();
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |idx: &[usize]| idx.iter().map(|&i| kg.quads[i]).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&train_idx),
        validation: pick(&val_idx),
        test: pick(&test_idx),
        mode: SplitMode::Interpolated,
    })
}

/// Contiguous split by timestamp. Tuples sharing the timestamp at a cut
/// point all stay in the earlier part.
pub fn split_temporal(kg: &TemporalKg, ratios: (f64, f64, f64)) -> Result<DatasetSplit> {
    check_ratios(ratios)?;
    let n = kg.num_edges();
    if n == 0 {
        return Err(Error::Split("cannot split an empty graph".into()));
    }
    let mut sorted = kg.quads.clone();
    sorted.sort_by_key(|q| q.t); // stable
    if sorted[0].t == sorted[n - 1].t {
        return Err(Error::Split(format!(
            "all tuples share timestamp {}, no temporal boundary exists",
            sorted[0].t
        )));
    }

    let (n_val, n_test) = held_out_sizes(n, ratios);
    let advance_past_ties = |mut cut: usize| {
        while cut > 0 && cut < n && sorted[cut].t == sorted[cut - 1].t {
            cut += 1;
        }
        cut
    };
    let cut1 = advance_past_ties(n - n_val - n_test);
    let cut2 = advance_past_ties((cut1 + n_val).min(n));

    Ok(DatasetSplit {
        train: sorted[..cut1].to_vec(),
        validation: sorted[cut1..cut2].to_vec(),
        test: sorted[cut2..].to_vec(),
        mode: SplitMode::Extrapolated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub num_entities: usize,
    pub num_edges: usize,
    pub num_relations: usize,
    pub time_span: usize,
    pub max_degree: usize,
    pub median_degree: f64,
}

/// `|V|, |E|, |R|, |T|` plus maximum and median node degree.
///
/// Only entities referenced by at least one tuple count towards the degree
/// distribution.
pub fn stats(kg: &TemporalKg) -> Result<GraphStats> {
    if kg.is_empty() {
        return Err(Error::EmptyGraph("stats need at least one tuple"));
    }
    let mut deg: Vec<usize> = kg.degrees().into_iter().filter(|&d| d > 0).collect();
    deg.sort_unstable();
    let m = deg.len();
    let median = if m % 2 == 1 {
        deg[m / 2] as f64
    } else {
        (deg[m / 2 - 1] + deg[m / 2]) as f64 / 2.0
    };
    Ok(GraphStats {
        num_entities: kg.num_entities(),
        num_edges: kg.num_edges(),
        num_relations: kg.num_relations(),
        time_span: kg.time_span(),
        max_degree: *deg.last().unwrap_or(&0),
        median_degree: median,
    })
}

// ---------------------------------------------------------------------------
// Tab-separated persistence.

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{}:{}", path.display(), line + 1),
        message: message.into(),
    }
}

/// Reads `s \t r \t o \t t` lines. Blank lines and `#` lines are skipped.
pub fn read_tuples(path: &Path) -> Result<Vec<LabeledQuad>> {
    let mut out = Vec::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 columns, found {}", cols.len())));
        }
        let t = cols[3]
            .trim()
            .parse::<Timestamp>()
            .map_err(|e| parse_err(path, n, format!("bad day index `{}`: {e}", cols[3])))?;
        out.push(LabeledQuad::new(cols[0], cols[1], cols[2], t));
    }
    Ok(out)
}

/// Reads the `label \t etype` sidecar.
pub fn read_entity_types(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, ty) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `label<TAB>type`"))?;
        out.insert(label.to_owned(), ty.trim().to_owned());
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes tuples with an optional `#` header line.
pub fn write_tuples<'a, I>(path: &Path, header: Option<&str>, quads: I) -> Result<()>
where
    I: IntoIterator<Item = &'a LabeledQuad>,
{
    let mut w = create(path)?;
    let write = || -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(w, "# {h}")?;
        }
        for q in quads {
            writeln!(w, "{}\t{}\t{}\t{}", q.s, q.r, q.o, q.t)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Writes the entity-type sidecar, one line per entity in id order.
pub fn write_entity_types<'a, I>(path: &Path, header: Option<&str>, entries: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, EntityType)>,
{
    let mut w = create(path)?;
    let write = || -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(w, "# {h}")?;
        }
        for (label, ty) in entries {
            writeln!(w, "{label}\t{ty}")?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

impl TemporalKg {
    pub fn write_tuples(&self, path: &Path, header: Option<&str>, quads: &[Quadruple]) -> Result<()> {
        let labeled: Vec<LabeledQuad> = quads.iter().map(|q| self.labeled(q)).collect();
        write_tuples(path, header, &labeled)
    }

    pub fn write_entity_types(&self, path: &Path, header: Option<&str>) -> Result<()> {
        write_entity_types(
            path,
            header,
            self.entities
                .labels()
                .iter()
                .zip(&self.entity_types)
                .map(|(l, t)| (l.as_str(), *t)),
        )
    }
}
