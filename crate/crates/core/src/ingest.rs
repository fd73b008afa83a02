//! Raw forge events to typed tuples.
//!
//! Input is newline-delimited JSON in the public event-archive layout
//! (`type`, `created_at`, `actor`, `repo`, `payload`). Each event is matched
//! against an editable rule table; a matching rule names the head and tail
//! roles to read from the record and the relation code to emit.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use flate2::read::MultiGzDecoder;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kg::{EntityType, LabeledQuad, Timestamp};

const BUILTIN_RULES: &str = include_str!("../data/extraction_rules.tsv");

/// One parsed event record.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub event_type: String,
    /// `payload.action`, empty for events without one (pushes, forks).
    pub action: String,
    pub created_at: DateTime<Utc>,
    pub actor: Value,
    pub repo: Value,
    pub payload: Value,
}

#[derive(Deserialize)]
struct WireEvent {
    #[serde(rename = "type")]
    event_type: String,
    created_at: String,
    #[serde(default)]
    actor: Value,
    #[serde(default)]
    repo: Value,
    #[serde(default)]
    payload: Value,
}

impl RawEvent {
    fn from_line(line: &str) -> Option<RawEvent> {
        let wire: WireEvent = serde_json::from_str(line).ok()?;
        if wire.event_type.is_empty() {
            return None;
        }
        let created_at = DateTime::parse_from_rfc3339(&wire.created_at).ok()?.with_timezone(&Utc);
        let action = wire
            .payload
            .get("action")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned();
        Some(RawEvent {
            event_type: wire.event_type,
            action,
            created_at,
            actor: wire.actor,
            repo: wire.repo,
            payload: wire.payload,
        })
    }

    /// Days since 1970-01-01 (UTC), sub-day time truncated.
    pub fn day(&self) -> Timestamp {
        (self.created_at.date_naive() - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days()
    }
}

#[derive(Debug, Default)]
pub struct ParsedEvents {
    pub events: Vec<RawEvent>,
    pub skipped: usize,
}

/// Parses newline-delimited JSON. Malformed records are skipped and counted;
/// blank lines are ignored.
pub fn parse_events<R: BufRead>(reader: R) -> Result<ParsedEvents> {
    let mut out = ParsedEvents::default();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match RawEvent::from_line(line) {
            Some(ev) => out.events.push(ev),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Opens an event file, transparently decompressing gzip input.
pub fn open_events(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Where a rule reads an entity label from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Actor,
    Repo,
    Forkee,
    Issue,
    PullRequest,
    IssueComment,
    ReviewComment,
    CommitComment,
    Review,
    Member,
    Assignee,
    RequestedReviewer,
}

impl Role {
    fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "actor" => Role::Actor,
            "repo" => Role::Repo,
            "forkee" => Role::Forkee,
            "issue" => Role::Issue,
            "pull_request" => Role::PullRequest,
            "issue_comment" => Role::IssueComment,
            "review_comment" => Role::ReviewComment,
            "commit_comment" => Role::CommitComment,
            "review" => Role::Review,
            "member" => Role::Member,
            "assignee" => Role::Assignee,
            "requested_reviewer" => Role::RequestedReviewer,
            _ => return None,
        })
    }

    /// Type of the entity the role yields.
    fn entity_type(self) -> EntityType {
        match self {
            Role::Actor | Role::Member | Role::Assignee | Role::RequestedReviewer => EntityType::User,
            Role::Repo | Role::Forkee => EntityType::Repository,
            Role::Issue => EntityType::Issue,
            Role::PullRequest => EntityType::PullRequest,
            Role::IssueComment => EntityType::IssueComment,
            Role::ReviewComment => EntityType::PullRequestReviewComment,
            Role::CommitComment => EntityType::CommitComment,
            Role::Review => EntityType::PullRequestReview,
        }
    }

    /// Labels for this role in `event`; several for multi-target roles.
    fn labels(self, ev: &RawEvent) -> Vec<String> {
        let p = &ev.payload;
        let repo = ev.repo.get("name").and_then(Value::as_str);
        let one = |v: Option<String>| v.into_iter().collect::<Vec<_>>();
        match self {
            Role::Actor => one(user_label(&ev.actor)),
            Role::Member => one(p.get("member").and_then(user_label)),
            Role::Repo => one(repo.map(|r| format!("R:{r}"))),
            Role::Forkee => one(
                p.pointer("/forkee/full_name")
                    .and_then(Value::as_str)
                    .map(|r| format!("R:{r}")),
            ),
            Role::Issue => one(numbered("I", repo, p.pointer("/issue/number"))),
            Role::PullRequest => one(numbered(
                "P",
                repo,
                p.pointer("/pull_request/number").or_else(|| p.get("number")),
            )),
            Role::IssueComment => one(id_label("IC", p.pointer("/comment/id"))),
            Role::ReviewComment => one(id_label("PRC", p.pointer("/comment/id"))),
            Role::CommitComment => one(id_label("CC", p.pointer("/comment/id"))),
            Role::Review => one(id_label("PR", p.pointer("/review/id"))),
            Role::Assignee => users(p.get("assignee"), &[p.pointer("/issue/assignees"), p.pointer("/pull_request/assignees")]),
            Role::RequestedReviewer => users(
                p.get("requested_reviewer"),
                &[p.pointer("/pull_request/requested_reviewers")],
            ),
        }
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        _ => None,
    }
}

fn user_label(user: &Value) -> Option<String> {
    user.get("id")
        .and_then(scalar)
        .or_else(|| user.get("login").and_then(scalar))
        .map(|id| format!("U:{id}"))
}

fn numbered(prefix: &str, repo: Option<&str>, number: Option<&Value>) -> Option<String> {
    Some(format!("{prefix}:{}#{}", repo?, scalar(number?)?))
}

fn id_label(prefix: &str, id: Option<&Value>) -> Option<String> {
    Some(format!("{prefix}:{}", scalar(id?)?))
}

// A single explicit target wins; otherwise every listed target.
fn users(single: Option<&Value>, lists: &[Option<&Value>]) -> Vec<String> {
    if let Some(label) = single.and_then(user_label) {
        return vec![label];
    }
    lists
        .iter()
        .flatten()
        .filter_map(|v| v.as_array())
        .flatten()
        .filter_map(user_label)
        .collect()
}

/// One row of the extraction table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionRule {
    pub event_types: Vec<String>,
    /// Empty means any action.
    pub actions: Vec<String>,
    pub head_type: EntityType,
    pub head_role: Role,
    pub code: String,
    pub tail_type: EntityType,
    pub tail_role: Role,
    pub default_subset: bool,
}

impl ExtractionRule {
    fn matches(&self, ev: &RawEvent) -> bool {
        self.event_types.contains(&ev.event_type)
            && (self.actions.is_empty() || self.actions.contains(&ev.action))
    }
}

#[derive(Clone, Debug)]
pub struct RuleTable {
    rules: Vec<ExtractionRule>,
    by_event: HashMap<String, Vec<usize>>,
}

impl RuleTable {
    /// Parses the tab-separated rule format (see `data/extraction_rules.tsv`).
    pub fn parse(text: &str) -> Result<RuleTable> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::Rules(format!("line {}: {m}", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(err(format!("expected 8 columns, found {}", cols.len())));
            }
            let ty = |s: &str| s.parse::<EntityType>().map_err(&err);
            let role = |s: &str| Role::parse(s).ok_or_else(|| err(format!("unknown role `{s}`")));
            let split = |s: &str| s.split('|').map(str::to_owned).collect::<Vec<_>>();
            let rule = ExtractionRule {
                event_types: split(cols[0]),
                actions: if cols[1] == "*" { Vec::new() } else { split(cols[1]) },
                head_type: ty(cols[2])?,
                head_role: role(cols[3])?,
                code: cols[4].to_owned(),
                tail_type: ty(cols[5])?,
                tail_role: role(cols[6])?,
                default_subset: match cols[7] {
                    "1" => true,
                    "0" => false,
                    other => return Err(err(format!("default flag must be 0 or 1, got `{other}`"))),
                },
            };
            validate_rule(&rule).map_err(err)?;
            rules.push(rule);
        }
        RuleTable::from_rules(rules)
    }

    pub fn from_rules(rules: Vec<ExtractionRule>) -> Result<RuleTable> {
        if rules.is_empty() {
            return Err(Error::Rules("rule table is empty".into()));
        }
        let mut by_event: HashMap<String, Vec<usize>> = HashMap::new();
        let mut codes = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            if let Some(prev) = codes.insert(rule.code.clone(), i) {
                return Err(Error::Rules(format!(
                    "duplicate relation code `{}` (rules {} and {})",
                    rule.code,
                    prev + 1,
                    i + 1
                )));
            }
            for et in &rule.event_types {
                by_event.entry(et.clone()).or_default().push(i);
            }
        }
        Ok(RuleTable { rules, by_event })
    }

    pub fn load(path: &Path) -> Result<RuleTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RuleTable::parse(&text)
    }

    /// The full shipped table.
    pub fn builtin() -> RuleTable {
        RuleTable::parse(BUILTIN_RULES).expect("shipped rule table is valid")
    }

    /// Rules flagged as part of the default subset.
    pub fn default_subset(&self) -> Result<RuleTable> {
        RuleTable::from_rules(self.rules.iter().filter(|r| r.default_subset).cloned().collect())
    }

    /// Keeps only the named relation codes.
    pub fn restrict(&self, codes: &[&str]) -> Result<RuleTable> {
        RuleTable::from_rules(
            self.rules
                .iter()
                .filter(|r| codes.contains(&r.code.as_str()))
                .cloned()
                .collect(),
        )
    }

    pub fn rules(&self) -> &[ExtractionRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&ExtractionRule> {
        self.rules.iter().find(|r| r.code == code)
    }
}

fn validate_rule(rule: &ExtractionRule) -> std::result::Result<(), String> {
    let parts: Vec<&str> = rule.code.split('_').collect();
    if parts.len() < 3 || parts.iter().any(|p| p.is_empty() || !p.chars().all(|c| c.is_ascii_uppercase())) {
        return Err(format!("malformed relation code `{}`", rule.code));
    }
    if parts[0] != rule.head_type.code() {
        return Err(format!(
            "code `{}` starts with `{}` but head type is {}",
            rule.code, parts[0], rule.head_type
        ));
    }
    // The last component names the tail type when it is a type code at all.
    let last = parts[parts.len() - 1];
    if let Some(ty) = EntityType::from_code(last) {
        if ty != rule.tail_type {
            return Err(format!("code `{}` ends with `{last}` but tail type is {}", rule.code, rule.tail_type));
        }
    }
    if rule.head_role.entity_type() != rule.head_type || rule.tail_role.entity_type() != rule.tail_type {
        return Err(format!("roles of `{}` do not yield the declared entity types", rule.code));
    }
    Ok(())
}

/// A tuple produced from one event, before vocabulary assignment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Extracted {
    pub head: String,
    pub head_type: EntityType,
    pub relation: String,
    pub tail: String,
    pub tail_type: EntityType,
    /// Days since 1970-01-01.
    pub day: Timestamp,
}

impl Extracted {
    pub fn to_quad(&self, epoch_day: Timestamp) -> LabeledQuad {
        LabeledQuad::new(&self.head, &self.relation, &self.tail, self.day - epoch_day)
    }
}

/// Applies every matching rule to `event`. Rules whose roles are missing
/// from the payload produce nothing.
pub fn extract(event: &RawEvent, rules: &RuleTable) -> Vec<Extracted> {
    let Some(candidates) = rules.by_event.get(&event.event_type) else {
        return Vec::new();
    };
    let day = event.day();
    let mut out = Vec::new();
    for &i in candidates {
        let rule = &rules.rules[i];
        if !rule.matches(event) {
            continue;
        }
        let heads = rule.head_role.labels(event);
        let tails = rule.tail_role.labels(event);
        for head in &heads {
            for tail in &tails {
                out.push(Extracted {
                    head: head.clone(),
                    head_type: rule.head_type,
                    relation: rule.code.clone(),
                    tail: tail.clone(),
                    tail_type: rule.tail_type,
                    day,
                });
            }
        }
    }
    out
}

/// Aggregate of an extraction run.
#[derive(Debug, Default)]
pub struct ExtractionReport {
    pub tuples: Vec<Extracted>,
    pub per_relation: BTreeMap<String, usize>,
    pub unmatched_events: usize,
}

/// Extracts every event in order.
pub fn extract_all(events: &[RawEvent], rules: &RuleTable) -> ExtractionReport {
    use rayon::prelude::*;
    let per_event: Vec<Vec<Extracted>> = events.par_iter().map(|ev| extract(ev, rules)).collect();
    let mut report = ExtractionReport::default();
    for tuples in per_event {
        if tuples.is_empty() {
            report.unmatched_events += 1;
        }
        for t in tuples {
            *report.per_relation.entry(t.relation.clone()).or_default() += 1;
            report.tuples.push(t);
        }
    }
    report
}

/// Entity-type map for a set of extracted tuples. A label seen with two
/// different types is an error.
pub fn entity_types_of(tuples: &[Extracted]) -> Result<BTreeMap<String, EntityType>> {
    let mut out = BTreeMap::new();
    for t in tuples {
        for (label, ty) in [(&t.head, t.head_type), (&t.tail, t.tail_type)] {
            if let Some(prev) = out.insert(label.clone(), ty) {
                if prev != ty {
                    return Err(Error::Rules(format!("entity `{label}` extracted as both {prev} and {ty}")));
                }
            }
        }
    }
    Ok(out)
}
