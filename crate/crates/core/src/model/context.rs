//! Relative temporal context.
//!
//! For every `(entity, relation)` pair the index keeps the sorted, distinct
//! days on which the entity took part (as subject or object) in a fact of
//! that relation. `δ(e, r, t)` is the time since the latest such day
//! strictly before `t`.

use std::collections::HashMap;

use crate::kg::{EntityId, Quadruple, RelationId, Timestamp};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextIndex {
    // Per entity, relation-sorted history lists.
    histories: HashMap<EntityId, Vec<(RelationId, Vec<Timestamp>)>>,
}

/// Builds the index from training tuples. Each tuple contributes its day to
/// both `(s, r)` and `(o, r)`.
pub fn build_context_index(train: &[Quadruple]) -> ContextIndex {
    let mut raw: HashMap<EntityId, HashMap<RelationId, Vec<Timestamp>>> = HashMap::new();
    for q in train {
        raw.entry(q.s).or_default().entry(q.r).or_default().push(q.t);
        if q.o != q.s {
            raw.entry(q.o).or_default().entry(q.r).or_default().push(q.t);
        }
    }
    let histories = raw
        .into_iter()
        .map(|(e, per_rel)| {
            let mut lists: Vec<(RelationId, Vec<Timestamp>)> = per_rel
                .into_iter()
                .map(|(r, mut days)| {
                    days.sort_unstable();
                    days.dedup();
                    (r, days)
                })
                .collect();
            lists.sort_unstable_by_key(|(r, _)| *r);
            (e, lists)
        })
        .collect();
    ContextIndex { histories }
}

impl ContextIndex {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorted history of `(e, r)`, empty when there is none.
    pub fn history(&self, e: EntityId, r: RelationId) -> &[Timestamp] {
        self.histories
            .get(&e)
            .and_then(|lists| {
                lists
                    .binary_search_by_key(&r, |(rel, _)| *rel)
                    .ok()
                    .map(|i| lists[i].1.as_slice())
            })
            .unwrap_or(&[])
    }

    /// Relations with any history for `e`, with their day lists.
    pub fn relations_of(&self, e: EntityId) -> &[(RelationId, Vec<Timestamp>)] {
        self.histories.get(&e).map_or(&[], Vec::as_slice)
    }

    pub fn num_entities(&self) -> usize {
        self.histories.len()
    }

    /// Calls `f(r, δ(e, r, t))` for every relation where `δ` is defined.
    #[inline]
    pub fn for_each_delta(&self, e: EntityId, t: Timestamp, mut f: impl FnMut(RelationId, Timestamp)) {
        for (r, days) in self.relations_of(e) {
            if let Some(d) = delta_in(days, t) {
                f(*r, d);
            }
        }
    }
}

#[inline]
fn delta_in(days: &[Timestamp], t: Timestamp) -> Option<Timestamp> {
    let idx = days.partition_point(|&d| d < t);
    (idx > 0).then(|| t - days[idx - 1])
}

/// `δ(e, r, t) = t − max{t' < t}` over the indexed history, `None` when the
/// history before `t` is empty.
pub fn relative_delta(index: &ContextIndex, e: EntityId, r: RelationId, t: Timestamp) -> Option<Timestamp> {
    delta_in(index.history(e, r), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_tuple_indexes_both_endpoints() {
        let idx = build_context_index(&[Quadruple::new(0, 0, 1, 5)]);
        assert_eq!(idx.history(EntityId(0), RelationId(0)), &[5]);
        assert_eq!(idx.history(EntityId(1), RelationId(0)), &[5]);
        assert!(idx.history(EntityId(1), RelationId(1)).is_empty());
    }

    #[test]
    fn histories_are_sorted_and_distinct() {
        let idx = build_context_index(&[
            Quadruple::new(0, 0, 1, 5),
            Quadruple::new(0, 0, 1, 2),
            Quadruple::new(0, 0, 2, 5),
        ]);
        assert_eq!(idx.history(EntityId(0), RelationId(0)), &[2, 5]);
    }

    #[test]
    fn delta_cases() {
        let idx = build_context_index(&[Quadruple::new(0, 0, 1, 2), Quadruple::new(0, 0, 1, 5)]);
        let e = EntityId(0);
        let r = RelationId(0);
        assert_eq!(relative_delta(&idx, e, r, 9), Some(4));
        assert_eq!(relative_delta(&idx, e, r, 5), Some(3));
        assert_eq!(relative_delta(&idx, e, r, 2), None);
        let only9 = build_context_index(&[Quadruple::new(0, 0, 1, 9)]);
        assert_eq!(relative_delta(&only9, e, r, 9), None);
        assert_eq!(relative_delta(&ContextIndex::empty(), e, r, 9), None);
    }

    #[test]
    fn matches_filter_and_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let quads: Vec<Quadruple> = (0..1000)
            .map(|_| Quadruple::new(rng.gen_range(0..30), rng.gen_range(0..4), rng.gen_range(0..30), rng.gen_range(0..50)))
            .collect();
        let idx = build_context_index(&quads);
        for e in 0..30u32 {
            for r in 0..4u32 {
                let mut expect: Vec<Timestamp> = quads
                    .iter()
                    .filter(|q| q.r.0 == r && (q.s.0 == e || q.o.0 == e))
                    .map(|q| q.t)
                    .collect();
                expect.sort_unstable();
                expect.dedup();
                assert_eq!(idx.history(EntityId(e), RelationId(r)), expect.as_slice());
                for t in [0, 17, 49, 60] {
                    let naive = expect.iter().filter(|&&d| d < t).max().map(|m| t - m);
                    assert_eq!(relative_delta(&idx, EntityId(e), RelationId(r), t), naive);
                }
            }
        }
    }
}
