//! Trailed finite-domain variables, world push/pop and the chronological
//! event store.
//!
//! Every domain mutation that changes something records exactly one event of
//! the strongest applicable type (assignment > bound change > removal) into
//! the store, together with the cause that produced it. Mutations that would
//! empty a domain report [`Outcome::Failure`] without touching the domain, so
//! an empty domain is never observable.

/// Dense index of a variable in its model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index of a constraint (and of its propagator) in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintId(pub u32);

impl ConstraintId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Serial number of a decision. Serial numbers are unique within a solver
/// run; a re-posted decision keeps its serial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecisionId(pub u32);

impl DecisionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// What produced an event: a constraint propagator, a search decision, or
/// the refutation of a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Constraint(ConstraintId),
    Decision(DecisionId),
    Refutation(DecisionId),
}

impl Cause {
    /// The constraint behind this cause, if any. Used by the scheduler so a
    /// propagator is not re-enqueued on its own events.
    pub fn constraint(self) -> Option<ConstraintId> {
        match self {
            Cause::Constraint(c) => Some(c),
            _ => None,
        }
    }
}

/// The change a single event made to a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// One interior value removed; neither bound moved, at least two values
    /// remain.
    Removal { value: i64 },
    /// Lower bound increased from `old` to `new`; at least two values remain.
    LowerBound { old: i64, new: i64 },
    /// Upper bound decreased from `old` to `new`; at least two values remain.
    UpperBound { old: i64, new: i64 },
    /// Domain collapsed to `value`; `lo_old`/`up_old` are the bounds just
    /// before the collapse.
    Assignment { value: i64, lo_old: i64, up_old: i64 },
}

impl EventKind {
    pub fn is_removal(self) -> bool {
        matches!(self, EventKind::Removal { .. })
    }
}

/// One recorded domain change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub var: VarId,
    pub cause: Cause,
    pub kind: EventKind,
}

/// Result of a domain mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The domain already satisfied the request.
    Unchanged,
    /// The domain shrank; one event was recorded.
    Changed,
    /// The request would have emptied the domain; nothing was changed and
    /// the failure context was set.
    Failure,
}

/// Set when a mutation fails: the variable whose domain would have emptied,
/// the cause of the failing mutation, and the event-store length at that
/// moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureContext {
    pub var: VarId,
    pub cause: Cause,
    pub sigma_tail: usize,
}

/// Sparse-set domain: the first `size` entries of `values` are the current
/// members, `pos` maps a value (offset by `base`) back to its slot. Removal
/// swaps the value into the dead zone, so restoring `size` (plus the bounds)
/// restores the exact set.
#[derive(Debug, Clone)]
struct Domain {
    base: i64,
    values: Vec<i64>,
    pos: Vec<u32>,
    size: u32,
    lb: i64,
    ub: i64,
    /// World serial at which this domain was last saved on the trail.
    saved_mark: u64,
}

const ABSENT: u32 = u32::MAX;

impl Domain {
    fn new(sorted: &[i64]) -> Domain {
        debug_assert!(!sorted.is_empty());
        debug_assert!(sorted.windows(2).all(|w| w[0] < w[1]));
        let base = sorted[0];
        let width = (sorted[sorted.len() - 1] - base + 1) as usize;
        let mut pos = vec![ABSENT; width];
        for (i, &v) in sorted.iter().enumerate() {
            pos[(v - base) as usize] = i as u32;
        }
        Domain {
            base,
            values: sorted.to_vec(),
            pos,
            size: sorted.len() as u32,
            lb: sorted[0],
            ub: sorted[sorted.len() - 1],
            saved_mark: 0,
        }
    }

    fn contains(&self, v: i64) -> bool {
        if v < self.base || v > self.base + self.pos.len() as i64 - 1 {
            return false;
        }
        let p = self.pos[(v - self.base) as usize];
        p != ABSENT && p < self.size
    }

    fn remove(&mut self, v: i64) {
        debug_assert!(self.contains(v));
        let p = self.pos[(v - self.base) as usize];
        let last = self.size - 1;
        self.swap_slots(p, last);
        self.size = last;
    }

    fn swap_slots(&mut self, a: u32, b: u32) {
        if a == b {
            return;
        }
        self.values.swap(a as usize, b as usize);
        let va = self.values[a as usize];
        let vb = self.values[b as usize];
        self.pos[(va - self.base) as usize] = a;
        self.pos[(vb - self.base) as usize] = b;
    }

    /// Smallest member >= from, if any.
    fn next_at_or_above(&self, from: i64) -> Option<i64> {
        let mut v = from.max(self.base);
        while v <= self.ub {
            if self.contains(v) {
                return Some(v);
            }
            v += 1;
        }
        None
    }

    /// Largest member <= from, if any.
    fn next_at_or_below(&self, from: i64) -> Option<i64> {
        let mut v = from.min(self.ub);
        while v >= self.lb {
            if self.contains(v) {
                return Some(v);
            }
            v -= 1;
        }
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct TrailEntry {
    var: VarId,
    size: u32,
    lb: i64,
    ub: i64,
}

#[derive(Debug, Clone, Copy)]
struct WorldMark {
    trail_len: usize,
    sigma_len: usize,
}

/// The variable store: all domains, the undo trail with its world marks, the
/// chronological event list and the pending failure context.
#[derive(Debug)]
pub struct Vars {
    domains: Vec<Domain>,
    trail: Vec<TrailEntry>,
    worlds: Vec<WorldMark>,
    world_serial: u64,
    events: Vec<Event>,
    failure: Option<FailureContext>,
}

impl Vars {
    pub fn new() -> Vars {
        Vars {
            domains: Vec::new(),
            trail: Vec::new(),
            worlds: Vec::new(),
            world_serial: 0,
            events: Vec::new(),
            failure: None,
        }
    }

    /// Adds a variable over the given (sorted, duplicate-free) values and
    /// returns its id.
    pub fn add_var(&mut self, sorted_values: &[i64]) -> VarId {
        assert!(
            !sorted_values.is_empty(),
            "a variable needs a non-empty domain"
        );
        let id = VarId(self.domains.len() as u32);
        self.domains.push(Domain::new(sorted_values));
        id
    }

    pub fn var_count(&self) -> usize {
        self.domains.len()
    }

    pub fn lb(&self, v: VarId) -> i64 {
        self.domains[v.index()].lb
    }

    pub fn ub(&self, v: VarId) -> i64 {
        self.domains[v.index()].ub
    }

    pub fn size(&self, v: VarId) -> usize {
        self.domains[v.index()].size as usize
    }

    pub fn contains(&self, v: VarId, x: i64) -> bool {
        self.domains[v.index()].contains(x)
    }

    pub fn is_assigned(&self, v: VarId) -> bool {
        self.size(v) == 1
    }

    /// The value of an assigned variable.
    pub fn value(&self, v: VarId) -> i64 {
        debug_assert!(self.is_assigned(v));
        self.domains[v.index()].lb
    }

    /// Current members of the domain, in ascending order.
    pub fn domain_values(&self, v: VarId) -> Vec<i64> {
        let d = &self.domains[v.index()];
        let mut out: Vec<i64> = d.values[..d.size as usize].to_vec();
        out.sort_unstable();
        out
    }

    pub fn failure(&self) -> Option<&FailureContext> {
        self.failure.as_ref()
    }

    pub fn take_failure(&mut self) -> Option<FailureContext> {
        self.failure.take()
    }

    pub fn clear_failure(&mut self) {
        self.failure = None;
    }

    // --- event store ---

    pub fn sigma_len(&self) -> usize {
        self.events.len()
    }

    pub fn event(&self, i: usize) -> &Event {
        &self.events[i]
    }

    /// Events at indices `from, from-1, .., 0`, newest first. `from` is
    /// clamped to the current tail.
    pub fn events_backward(&self, from: usize) -> impl Iterator<Item = (usize, &Event)> {
        let end = self.events.len().min(from.saturating_add(1));
        (0..end).rev().map(move |i| (i, &self.events[i]))
    }

    // --- worlds ---

    pub fn depth(&self) -> usize {
        self.worlds.len()
    }

    /// Opens a new world; returns its index (1-based depth).
    pub fn push_world(&mut self) -> usize {
        self.world_serial += 1;
        self.worlds.push(WorldMark {
            trail_len: self.trail.len(),
            sigma_len: self.events.len(),
        });
        self.worlds.len()
    }

    /// Restores every domain and the event-store tail to their state at the
    /// matching `push_world`. Popping at depth 0 is a programming fault.
    pub fn pop_world(&mut self) {
        let mark = self
            .worlds
            .pop()
            .expect("pop_world called at world depth 0");
        while self.trail.len() > mark.trail_len {
            let entry = self.trail.pop().unwrap();
            let d = &mut self.domains[entry.var.index()];
            d.size = entry.size;
            d.lb = entry.lb;
            d.ub = entry.ub;
        }
        self.events.truncate(mark.sigma_len);
        self.failure = None;
    }

    fn save_if_needed(&mut self, v: VarId) {
        if self.worlds.is_empty() {
            return; // root state is never restored
        }
        let d = &mut self.domains[v.index()];
        if d.saved_mark != self.world_serial {
            d.saved_mark = self.world_serial;
            self.trail.push(TrailEntry {
                var: v,
                size: d.size,
                lb: d.lb,
                ub: d.ub,
            });
        }
    }

    fn fail(&mut self, v: VarId, cause: Cause) -> Outcome {
        self.failure = Some(FailureContext {
            var: v,
            cause,
            sigma_tail: self.events.len(),
        });
        Outcome::Failure
    }

    fn record(&mut self, var: VarId, cause: Cause, kind: EventKind) {
        self.events.push(Event { var, cause, kind });
    }

    // --- mutations ---

    /// Removes a single value. The recorded event is classified by the
    /// resulting change: interior removal, bound adjustment, or assignment
    /// when one value remains.
    pub fn remove_value(&mut self, v: VarId, x: i64, cause: Cause) -> Outcome {
        debug_assert!(self.failure.is_none(), "mutation after failure");
        if !self.domains[v.index()].contains(x) {
            return Outcome::Unchanged;
        }
        if self.domains[v.index()].size == 1 {
            return self.fail(v, cause);
        }
        self.save_if_needed(v);
        let d = &mut self.domains[v.index()];
        let (lo_old, up_old) = (d.lb, d.ub);
        d.remove(x);
        let kind = if d.size == 1 {
            let a = d.values[0];
            d.lb = a;
            d.ub = a;
            EventKind::Assignment {
                value: a,
                lo_old,
                up_old,
            }
        } else if x == lo_old {
            d.lb = d.next_at_or_above(x + 1).expect("non-empty domain");
            EventKind::LowerBound {
                old: lo_old,
                new: d.lb,
            }
        } else if x == up_old {
            d.ub = d.next_at_or_below(x - 1).expect("non-empty domain");
            EventKind::UpperBound {
                old: up_old,
                new: d.ub,
            }
        } else {
            EventKind::Removal { value: x }
        };
        self.record(v, cause, kind);
        Outcome::Changed
    }

    /// Removes every value below `b`. The recorded new bound is the actual
    /// new minimum (holes are skipped).
    pub fn update_lower(&mut self, v: VarId, b: i64, cause: Cause) -> Outcome {
        debug_assert!(self.failure.is_none(), "mutation after failure");
        let d = &self.domains[v.index()];
        if b <= d.lb {
            return Outcome::Unchanged;
        }
        let Some(new_lb) = d.next_at_or_above(b) else {
            return self.fail(v, cause);
        };
        self.save_if_needed(v);
        let d = &mut self.domains[v.index()];
        let (lo_old, up_old) = (d.lb, d.ub);
        let doomed: Vec<i64> = d.values[..d.size as usize]
            .iter()
            .copied()
            .filter(|&x| x < b)
            .collect();
        for x in doomed {
            d.remove(x);
        }
        d.lb = new_lb;
        let kind = if d.size == 1 {
            d.ub = new_lb;
            EventKind::Assignment {
                value: new_lb,
                lo_old,
                up_old,
            }
        } else {
            EventKind::LowerBound {
                old: lo_old,
                new: new_lb,
            }
        };
        self.record(v, cause, kind);
        Outcome::Changed
    }

    /// Mirror of [`Vars::update_lower`]: removes every value above `b`.
    pub fn update_upper(&mut self, v: VarId, b: i64, cause: Cause) -> Outcome {
        debug_assert!(self.failure.is_none(), "mutation after failure");
        let d = &self.domains[v.index()];
        if b >= d.ub {
            return Outcome::Unchanged;
        }
        let Some(new_ub) = d.next_at_or_below(b) else {
            return self.fail(v, cause);
        };
        self.save_if_needed(v);
        let d = &mut self.domains[v.index()];
        let (lo_old, up_old) = (d.lb, d.ub);
        let doomed: Vec<i64> = d.values[..d.size as usize]
            .iter()
            .copied()
            .filter(|&x| x > b)
            .collect();
        for x in doomed {
            d.remove(x);
        }
        d.ub = new_ub;
        let kind = if d.size == 1 {
            d.lb = new_ub;
            EventKind::Assignment {
                value: new_ub,
                lo_old,
                up_old,
            }
        } else {
            EventKind::UpperBound {
                old: up_old,
                new: new_ub,
            }
        };
        self.record(v, cause, kind);
        Outcome::Changed
    }

    /// Reduces the domain to `{a}`.
    pub fn instantiate(&mut self, v: VarId, a: i64, cause: Cause) -> Outcome {
        debug_assert!(self.failure.is_none(), "mutation after failure");
        let d = &self.domains[v.index()];
        if !d.contains(a) {
            return self.fail(v, cause);
        }
        if d.size == 1 {
            return Outcome::Unchanged;
        }
        self.save_if_needed(v);
        let d = &mut self.domains[v.index()];
        let (lo_old, up_old) = (d.lb, d.ub);
        let p = d.pos[(a - d.base) as usize];
        d.swap_slots(p, 0);
        d.size = 1;
        d.lb = a;
        d.ub = a;
        self.record(
            v,
            cause,
            EventKind::Assignment {
                value: a,
                lo_old,
                up_old,
            },
        );
        Outcome::Changed
    }
}

impl Default for Vars {
    fn default() -> Self {
        Vars::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    const TEST_CAUSE: Cause = Cause::Constraint(ConstraintId(0));

    fn store_with(values: &[i64]) -> (Vars, VarId) {
        let mut vars = Vars::new();
        let v = vars.add_var(values);
        (vars, v)
    }

    fn range(lo: i64, hi: i64) -> Vec<i64> {
        (lo..=hi).collect()
    }

    /// Brute-force event classifier: diff the before/after sets and pick the
    /// event type the change implies. Independent of the kernel's own logic.
    fn classify(before: &BTreeSet<i64>, after: &BTreeSet<i64>) -> EventKind {
        assert!(after.len() < before.len() && !after.is_empty());
        let (blo, bhi) = (*before.first().unwrap(), *before.last().unwrap());
        let (alo, ahi) = (*after.first().unwrap(), *after.last().unwrap());
        if after.len() == 1 {
            EventKind::Assignment {
                value: alo,
                lo_old: blo,
                up_old: bhi,
            }
        } else if alo > blo && ahi == bhi {
            EventKind::LowerBound { old: blo, new: alo }
        } else if ahi < bhi && alo == blo {
            EventKind::UpperBound { old: bhi, new: ahi }
        } else {
            assert_eq!(before.len() - after.len(), 1);
            let removed = before.difference(after).next().copied().unwrap();
            EventKind::Removal { value: removed }
        }
    }

    #[test]
    fn remove_interior_records_removal() {
        let (mut vars, v) = store_with(&range(1, 8));
        assert_eq!(vars.remove_value(v, 5, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::Removal { value: 5 },
        );
        assert_eq!(vars.lb(v), 1);
        assert_eq!(vars.ub(v), 8);
        assert_eq!(vars.size(v), 7);
    }

    #[test]
    fn remove_last_value_fails() {
        let (mut vars, v) = store_with(&[3]);
        assert_eq!(vars.remove_value(v, 3, TEST_CAUSE), Outcome::Failure);
        assert_eq!(vars.sigma_len(), 0);
        let f = vars.failure().unwrap();
        assert_eq!(f.var, v);
        assert_eq!(f.cause, TEST_CAUSE);
        // the domain is untouched by a failing mutation
        assert!(vars.contains(v, 3));
    }

    #[test]
    fn remove_at_lower_bound_records_bound_event() {
        let (mut vars, v) = store_with(&range(1, 8));
        assert_eq!(vars.remove_value(v, 1, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::LowerBound { old: 1, new: 2 },
        );
    }

    #[test]
    fn remove_to_singleton_records_assignment() {
        let (mut vars, v) = store_with(&[2, 5]);
        assert_eq!(vars.remove_value(v, 2, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::Assignment {
                value: 5,
                lo_old: 2,
                up_old: 5
            },
        );
    }

    #[test]
    fn remove_absent_value_is_unchanged() {
        let (mut vars, v) = store_with(&[1, 3]);
        assert_eq!(vars.remove_value(v, 2, TEST_CAUSE), Outcome::Unchanged);
        assert_eq!(vars.sigma_len(), 0);
    }

    #[test]
    fn update_lower_basic() {
        let (mut vars, v) = store_with(&range(1, 8));
        assert_eq!(vars.update_lower(v, 4, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::LowerBound { old: 1, new: 4 },
        );
        assert_eq!(vars.domain_values(v), range(4, 8));
    }

    #[test]
    fn update_lower_skips_holes() {
        let (mut vars, v) = store_with(&[1, 2, 7, 9]);
        assert_eq!(vars.update_lower(v, 3, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::LowerBound { old: 1, new: 7 },
        );
        assert_eq!(vars.domain_values(v), vec![7, 9]);
    }

    #[test]
    fn update_lower_past_max_fails() {
        let (mut vars, v) = store_with(&range(1, 8));
        assert_eq!(vars.update_lower(v, 9, TEST_CAUSE), Outcome::Failure);
        assert_eq!(vars.domain_values(v), range(1, 8));
    }

    #[test]
    fn update_lower_to_singleton_is_assignment() {
        let (mut vars, v) = store_with(&[1, 2, 7]);
        assert_eq!(vars.update_lower(v, 3, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::Assignment {
                value: 7,
                lo_old: 1,
                up_old: 7
            },
        );
    }

    #[test]
    fn update_upper_mirrors_update_lower() {
        let (mut vars, v) = store_with(&range(1, 8));
        assert_eq!(vars.update_upper(v, 5, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::UpperBound { old: 8, new: 5 },
        );

        let (mut vars, v) = store_with(&[1, 4, 7, 9]);
        assert_eq!(vars.update_upper(v, 8, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::UpperBound { old: 9, new: 7 },
        );

        let (mut vars, v) = store_with(&range(2, 6));
        assert_eq!(vars.update_upper(v, 1, TEST_CAUSE), Outcome::Failure);
        assert_eq!(vars.domain_values(v), range(2, 6));
    }

    #[test]
    fn instantiate_cases() {
        let (mut vars, v) = store_with(&range(1, 8));
        assert_eq!(vars.instantiate(v, 3, TEST_CAUSE), Outcome::Changed);
        assert_eq!(
            vars.event(0).kind,
            EventKind::Assignment {
                value: 3,
                lo_old: 1,
                up_old: 8
            },
        );

        let (mut vars, v) = store_with(&[4]);
        assert_eq!(vars.instantiate(v, 4, TEST_CAUSE), Outcome::Unchanged);
        assert_eq!(vars.sigma_len(), 0);

        let (mut vars, v) = store_with(&[1, 3]);
        assert_eq!(vars.instantiate(v, 2, TEST_CAUSE), Outcome::Failure);
        assert_eq!(vars.domain_values(v), vec![1, 3]);
    }

    #[test]
    fn pop_restores_domain_and_tail() {
        let (mut vars, v) = store_with(&range(1, 8));
        vars.push_world();
        vars.remove_value(v, 5, TEST_CAUSE);
        assert_eq!(vars.sigma_len(), 1);
        vars.pop_world();
        assert_eq!(vars.domain_values(v), range(1, 8));
        assert_eq!(vars.sigma_len(), 0);
    }

    #[test]
    fn nested_worlds_restore_to_initial() {
        let (mut vars, v) = store_with(&range(1, 5));
        vars.push_world();
        vars.remove_value(v, 1, TEST_CAUSE);
        vars.push_world();
        vars.instantiate(v, 4, TEST_CAUSE);
        vars.pop_world();
        assert_eq!(vars.domain_values(v), range(2, 5));
        vars.pop_world();
        assert_eq!(vars.domain_values(v), range(1, 5));
        assert_eq!(vars.depth(), 0);
    }

    #[test]
    fn pop_leaves_only_the_pre_push_suffix() {
        let (mut vars, v) = store_with(&range(1, 10));
        vars.remove_value(v, 5, TEST_CAUSE);
        vars.push_world();
        vars.remove_value(v, 6, TEST_CAUSE);
        vars.remove_value(v, 7, TEST_CAUSE);
        vars.remove_value(v, 8, TEST_CAUSE);
        assert_eq!(vars.sigma_len(), 4);
        vars.pop_world();
        let seen: Vec<usize> = vars.events_backward(10).map(|(i, _)| i).collect();
        assert_eq!(seen, vec![0]);
        assert_eq!(vars.event(0).kind, EventKind::Removal { value: 5 });
    }

    #[test]
    #[should_panic(expected = "depth 0")]
    fn pop_at_root_is_a_fault() {
        let (mut vars, _) = store_with(&[1, 2]);
        vars.pop_world();
    }

    #[test]
    fn events_backward_order() {
        let (mut vars, v) = store_with(&range(1, 9));
        assert_eq!(vars.events_backward(0).count(), 0);
        vars.remove_value(v, 3, TEST_CAUSE);
        vars.remove_value(v, 5, TEST_CAUSE);
        vars.remove_value(v, 7, TEST_CAUSE);
        let order: Vec<usize> = vars.events_backward(2).map(|(i, _)| i).collect();
        assert_eq!(order, vec![2, 1, 0]);
        let partial: Vec<usize> = vars.events_backward(1).map(|(i, _)| i).collect();
        assert_eq!(partial, vec![1, 0]);
    }

    fn random_domain(rng: &mut StdRng) -> Vec<i64> {
        let lo = rng.gen_range(-5..5);
        let width = rng.gen_range(1..12);
        let mut vals: Vec<i64> = (lo..lo + width)
            .filter(|_| rng.gen_bool(0.8))
            .collect();
        if vals.is_empty() {
            vals.push(lo);
        }
        vals
    }

    /// Every mutation's recorded event matches the brute-force before/after
    /// classifier.
    #[test]
    fn recorded_events_match_classifier_oracle() {
        let mut rng = StdRng::seed_from_u64(0xE5E7);
        for _ in 0..500 {
            let values = random_domain(&mut rng);
            let (mut vars, v) = store_with(&values);
            for _ in 0..20 {
                if vars.size(v) == 0 {
                    break;
                }
                let before: BTreeSet<i64> = vars.domain_values(v).into_iter().collect();
                let sigma_before = vars.sigma_len();
                let lo = *before.first().unwrap() - 1;
                let hi = *before.last().unwrap() + 1;
                let out = match rng.gen_range(0..4) {
                    0 => vars.remove_value(v, rng.gen_range(lo..=hi), TEST_CAUSE),
                    1 => vars.update_lower(v, rng.gen_range(lo..=hi), TEST_CAUSE),
                    2 => vars.update_upper(v, rng.gen_range(lo..=hi), TEST_CAUSE),
                    _ => vars.instantiate(v, rng.gen_range(lo..=hi), TEST_CAUSE),
                };
                match out {
                    Outcome::Unchanged => assert_eq!(vars.sigma_len(), sigma_before),
                    Outcome::Failure => {
                        // failing mutations leave no trace
                        assert_eq!(vars.sigma_len(), sigma_before);
                        let after: BTreeSet<i64> =
                            vars.domain_values(v).into_iter().collect();
                        assert_eq!(before, after);
                        break;
                    }
                    Outcome::Changed => {
                        assert_eq!(vars.sigma_len(), sigma_before + 1);
                        let after: BTreeSet<i64> =
                            vars.domain_values(v).into_iter().collect();
                        let expected = classify(&before, &after);
                        assert_eq!(vars.event(sigma_before).kind, expected);
                        assert_eq!(vars.lb(v), *after.first().unwrap());
                        assert_eq!(vars.ub(v), *after.last().unwrap());
                    }
                }
            }
        }
    }

    /// Random mutations interleaved with push/pop: state after pop equals a
    /// deep snapshot taken at push.
    #[test]
    fn restore_matches_deep_snapshots() {
        let mut rng = StdRng::seed_from_u64(0x5709);
        for _ in 0..200 {
            let mut vars = Vars::new();
            let ids: Vec<VarId> = (0..4)
                .map(|_| {
                    let d = random_domain(&mut rng);
                    vars.add_var(&d)
                })
                .collect();
            let mut snapshots: Vec<(Vec<Vec<i64>>, usize)> = Vec::new();
            for _ in 0..60 {
                match rng.gen_range(0..6) {
                    0 => {
                        let snap = ids.iter().map(|&v| vars.domain_values(v)).collect();
                        snapshots.push((snap, vars.sigma_len()));
                        vars.push_world();
                    }
                    1 if !snapshots.is_empty() => {
                        vars.pop_world();
                        let (snap, tail) = snapshots.pop().unwrap();
                        let now: Vec<Vec<i64>> =
                            ids.iter().map(|&v| vars.domain_values(v)).collect();
                        assert_eq!(now, snap);
                        assert_eq!(vars.sigma_len(), tail);
                    }
                    _ => {
                        let v = ids[rng.gen_range(0..ids.len())];
                        let x = rng.gen_range(-8..10);
                        let _ = match rng.gen_range(0..3) {
                            0 => vars.remove_value(v, x, TEST_CAUSE),
                            1 => vars.update_lower(v, x, TEST_CAUSE),
                            _ => vars.update_upper(v, x, TEST_CAUSE),
                        };
                        vars.clear_failure();
                    }
                }
            }
            while vars.depth() > 0 {
                vars.pop_world();
                let (snap, tail) = snapshots.pop().unwrap();
                let now: Vec<Vec<i64>> =
                    ids.iter().map(|&v| vars.domain_values(v)).collect();
                assert_eq!(now, snap);
                assert_eq!(vars.sigma_len(), tail);
            }
        }
    }

    /// Per variable, lower-bound events only increase and upper-bound events
    /// only decrease; a removal event for a given value appears at most once
    /// per branch.
    #[test]
    fn sigma_monotonicity_and_removal_uniqueness() {
        let mut rng = StdRng::seed_from_u64(0xD00D);
        for _ in 0..200 {
            let mut vars = Vars::new();
            let ids: Vec<VarId> = (0..3)
                .map(|_| {
                    let d = random_domain(&mut rng);
                    vars.add_var(&d)
                })
                .collect();
            vars.push_world();
            for _ in 0..40 {
                let v = ids[rng.gen_range(0..ids.len())];
                let x = rng.gen_range(-8..10);
                let _ = match rng.gen_range(0..4) {
                    0 => vars.remove_value(v, x, TEST_CAUSE),
                    1 => vars.update_lower(v, x, TEST_CAUSE),
                    2 => vars.update_upper(v, x, TEST_CAUSE),
                    _ => vars.instantiate(v, x, TEST_CAUSE),
                };
                if vars.failure().is_some() {
                    break;
                }
            }
            for &v in &ids {
                let mut last_low = i64::MIN;
                let mut last_upp = i64::MAX;
                let mut removed = BTreeSet::new();
                for i in 0..vars.sigma_len() {
                    let e = vars.event(i);
                    if e.var != v {
                        continue;
                    }
                    match e.kind {
                        EventKind::LowerBound { new, .. } => {
                            assert!(new > last_low);
                            last_low = new;
                        }
                        EventKind::UpperBound { new, .. } => {
                            assert!(new < last_upp);
                            last_upp = new;
                        }
                        EventKind::Removal { value } => {
                            assert!(removed.insert(value), "duplicate removal event");
                        }
                        EventKind::Assignment { .. } => {}
                    }
                }
            }
        }
    }
}
