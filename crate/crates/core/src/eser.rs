//! Event selection rules and failure explanations.
//!
//! When a domain empties, the explainer scans the event store backwards,
//! selecting the events that may have contributed to the wipe. Selection is
//! driven by per-variable rules — the "negative" of an event: a modification
//! mask (domain / lower bound / upper bound) plus a set of tracked removed
//! values. Selected events charge their cause: decisions are collected into
//! a position-indexed bitset, refutations contribute their stored
//! explanation, and constraints add their own selection rules for the
//! events upstream of them.
//!
//! With `pe` (partial explanations) enabled, the scan stops at the first
//! decision it selects and the live rules are kept in the explanation so the
//! scan can be resumed later.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::kernel::{
    Cause, ConstraintId, DecisionId, Event, EventKind, FailureContext, VarId, Vars,
};
use crate::propagation::{default_schema, Propagator};

/// Modification-type mask bits.
pub const DOM: u8 = 0b100;
pub const LB: u8 = 0b010;
pub const UB: u8 = 0b001;

/// Per-variable selection state: which kinds of modification are relevant,
/// and which removed values are tracked individually.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleEntry {
    pub mask: u8,
    pub removed: BTreeSet<i64>,
}

impl RuleEntry {
    fn is_empty(&self) -> bool {
        self.mask == 0 && self.removed.is_empty()
    }
}

/// The rule set: one entry per variable that has at least one active rule.
/// A domain rule subsumes everything else on the same variable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    entries: HashMap<u32, RuleEntry>,
}

impl RuleSet {
    pub fn new() -> RuleSet {
        RuleSet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, v: VarId) -> Option<&RuleEntry> {
        self.entries.get(&v.0)
    }

    /// Declares "any event on `v` is relevant". Clears the now-redundant
    /// finer rules.
    pub fn add_dom(&mut self, v: VarId) {
        let e = self.entries.entry(v.0).or_default();
        e.mask = DOM;
        e.removed.clear();
    }

    /// Declares "events that tightened the lower bound of `v` are relevant".
    pub fn add_lb(&mut self, v: VarId) {
        let e = self.entries.entry(v.0).or_default();
        if e.mask & DOM == 0 {
            e.mask |= LB;
        }
    }

    /// Declares "events that tightened the upper bound of `v` are relevant".
    pub fn add_ub(&mut self, v: VarId) {
        let e = self.entries.entry(v.0).or_default();
        if e.mask & DOM == 0 {
            e.mask |= UB;
        }
    }

    /// Declares "the event that removed `x` from `v` is relevant".
    pub fn add_removed(&mut self, v: VarId, x: i64) {
        let e = self.entries.entry(v.0).or_default();
        if e.mask & DOM == 0 {
            e.removed.insert(x);
        }
    }

    /// Drops the tracked removed value `x` of `v`; a removal event can occur
    /// only once per branch, so once its event is found the rule is spent.
    pub fn delete_removed(&mut self, v: VarId, x: i64) {
        if let Some(e) = self.entries.get_mut(&v.0) {
            e.removed.remove(&x);
            if e.is_empty() {
                self.entries.remove(&v.0);
            }
        }
    }

    /// Entry-wise union with `other`.
    pub fn union(&mut self, other: &RuleSet) {
        for (&var, oe) in &other.entries {
            let e = self.entries.entry(var).or_default();
            if oe.mask & DOM != 0 || e.mask & DOM != 0 {
                e.mask = DOM;
                e.removed.clear();
            } else {
                e.mask |= oe.mask;
                e.removed.extend(oe.removed.iter().copied());
            }
        }
    }

    /// The covering test: does `event` possibly contribute a modification
    /// this rule set tracks? Bound rules over removal events compare the
    /// removed value against the variable's current (failure-time) bounds;
    /// tracked removed values are matched against the interval of values the
    /// event wiped out.
    pub fn covers(&self, event: &Event, vars: &Vars) -> bool {
        let Some(e) = self.entries.get(&event.var.0) else {
            return false;
        };
        if e.mask & DOM != 0 {
            return true;
        }
        match event.kind {
            EventKind::LowerBound { old, new } => {
                e.mask & LB != 0 || e.removed.range(old..new).next().is_some()
            }
            EventKind::UpperBound { old, new } => {
                e.mask & UB != 0 || e.removed.range(new + 1..=old).next().is_some()
            }
            EventKind::Assignment { value, lo_old, up_old } => {
                e.mask & (LB | UB) != 0
                    || e.removed
                        .range(lo_old..=up_old)
                        .any(|&x| x != value)
            }
            EventKind::Removal { value } => {
                (e.mask & LB != 0 && value < vars.lb(event.var))
                    || (e.mask & UB != 0 && value > vars.ub(event.var))
                    || e.removed.contains(&value)
            }
        }
    }

    fn sorted_entries(&self) -> Vec<(u32, &RuleEntry)> {
        let mut out: Vec<(u32, &RuleEntry)> = self.entries.iter().map(|(&v, e)| (v, e)).collect();
        out.sort_by_key(|(v, _)| *v);
        out
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, (v, e)) in self.sorted_entries().into_iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "v{v}:")?;
            let mut first = true;
            for (bit, name) in [(DOM, "DOM"), (LB, "LB"), (UB, "UB")] {
                if e.mask & bit != 0 {
                    if !first {
                        write!(f, "|")?;
                    }
                    write!(f, "{name}")?;
                    first = false;
                }
            }
            if !e.removed.is_empty() {
                if !first {
                    write!(f, "+")?;
                }
                write!(f, "{{")?;
                for (j, x) in e.removed.iter().enumerate() {
                    if j > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "}}")?;
            } else if first {
                write!(f, "-")?;
            }
        }
        write!(f, "]")
    }
}

/// Bitset over decision positions on the current path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecisionSet {
    blocks: Vec<u64>,
}

impl DecisionSet {
    pub fn new() -> DecisionSet {
        DecisionSet::default()
    }

    pub fn insert(&mut self, pos: u32) {
        let block = (pos / 64) as usize;
        if block >= self.blocks.len() {
            self.blocks.resize(block + 1, 0);
        }
        self.blocks[block] |= 1u64 << (pos % 64);
    }

    pub fn remove(&mut self, pos: u32) {
        let block = (pos / 64) as usize;
        if block < self.blocks.len() {
            self.blocks[block] &= !(1u64 << (pos % 64));
            self.normalize();
        }
    }

    pub fn contains(&self, pos: u32) -> bool {
        let block = (pos / 64) as usize;
        block < self.blocks.len() && self.blocks[block] & (1u64 << (pos % 64)) != 0
    }

    pub fn union(&mut self, other: &DecisionSet) {
        if other.blocks.len() > self.blocks.len() {
            self.blocks.resize(other.blocks.len(), 0);
        }
        for (b, o) in self.blocks.iter_mut().zip(&other.blocks) {
            *b |= o;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Highest set position, if any.
    pub fn highest(&self) -> Option<u32> {
        for (i, &b) in self.blocks.iter().enumerate().rev() {
            if b != 0 {
                return Some(i as u32 * 64 + 63 - b.leading_zeros());
            }
        }
        None
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.blocks.iter().enumerate().flat_map(|(i, &b)| {
            (0..64).filter_map(move |o| {
                if b & (1u64 << o) != 0 {
                    Some(i as u32 * 64 + o)
                } else {
                    None
                }
            })
        })
    }

    fn normalize(&mut self) {
        while self.blocks.last() == Some(&0) {
            self.blocks.pop();
        }
    }
}

/// Where an interrupted scan can pick up again: the live rules and the index
/// at which scanning stopped (everything at or above it has been visited).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residual {
    pub rules: RuleSet,
    pub scan_index: usize,
}

/// A failure explanation: the decisions (by path position) and constraints
/// that cannot all hold together, plus — for partial explanations — the
/// residual state of the scan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Explanation {
    pub decisions: DecisionSet,
    pub constraints: BTreeSet<ConstraintId>,
    pub residual: Option<Residual>,
}

impl Explanation {
    pub fn new() -> Explanation {
        Explanation::default()
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "decisions=[")?;
        for (i, p) in self.decisions.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "], constraints=[")?;
        for (i, c) in self.constraints.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "c{}", c.0)?;
        }
        write!(f, "], residual=")?;
        match &self.residual {
            None => write!(f, "none"),
            Some(r) => write!(f, "{{scan={}, rules={}}}", r.scan_index, r.rules),
        }
    }
}

/// Merges `source` into `target`: decision and constraint sets are united,
/// residual rule sets are united entry-wise, and when both carry a residual
/// the merged scan index is the smaller of the two.
pub fn merge(target: &mut Explanation, source: &Explanation) {
    target.decisions.union(&source.decisions);
    target.constraints.extend(source.constraints.iter().copied());
    match (&mut target.residual, &source.residual) {
        (Some(t), Some(s)) => {
            t.rules.union(&s.rules);
            t.scan_index = t.scan_index.min(s.scan_index);
        }
        (None, Some(s)) => target.residual = Some(s.clone()),
        _ => {}
    }
}

/// The deepest decision of an explanation — the backjump target.
pub fn deepest_decision(e: &Explanation) -> Option<u32> {
    e.decisions.highest()
}

/// Path data the explainer needs: decision positions and the stored
/// explanations of refuted decisions.
pub trait PathInfo {
    /// Position (1-based path depth) of a decision currently on the path.
    fn position_of(&self, id: DecisionId) -> Option<u32>;
    /// Stored explanation of the refutation at `pos`.
    fn record_at(&self, pos: u32) -> Option<&Explanation>;
}

/// Everything `explain`/`resume` read.
pub struct ExplainContext<'a> {
    pub vars: &'a Vars,
    pub props: &'a [Box<dyn Propagator>],
    pub path: &'a dyn PathInfo,
    /// Force the universal default schema instead of per-constraint ones.
    pub default_schemas: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResumeOutcome {
    /// The target decision's event satisfied a rule: the explanation depends
    /// on it (and now contains it).
    Depends,
    /// The scan reached the target (or exhausted rules/events) without the
    /// target being selected.
    Independent,
}

impl<'a> ExplainContext<'a> {
    fn schema_event(&self, c: ConstraintId, event: &Event, rules: &mut RuleSet) {
        let p = &self.props[c.index()];
        if self.default_schemas {
            default_schema(p.scope(), rules);
        } else {
            p.explain_event(event, self.vars, rules);
        }
    }

    fn schema_failure(&self, c: ConstraintId, var: VarId, rules: &mut RuleSet) {
        let p = &self.props[c.index()];
        if self.default_schemas {
            default_schema(p.scope(), rules);
        } else {
            p.explain_failure(var, self.vars, rules);
        }
    }

    fn position(&self, id: DecisionId) -> u32 {
        self.path
            .position_of(id)
            .expect("decision referenced by an event is on the live path")
    }

    fn merge_record(&self, id: DecisionId, e: &mut Explanation, rules: &mut RuleSet) {
        let pos = self.position(id);
        let rec = self
            .path
            .record_at(pos)
            .expect("refutation cause has a stored explanation");
        e.decisions.union(&rec.decisions);
        e.constraints.extend(rec.constraints.iter().copied());
        // an interrupted record carries live rules; they rejoin the scan
        if let Some(r) = &rec.residual {
            rules.union(&r.rules);
        }
    }

    /// One scan step over `event`. Returns true when the scan must stop
    /// (partial explanation hit a decision).
    fn step(
        &self,
        event: &Event,
        pe: bool,
        e: &mut Explanation,
        rules: &mut RuleSet,
    ) -> bool {
        let mut stop = false;
        if rules.covers(event, self.vars) {
            match event.cause {
                Cause::Decision(id) => {
                    e.decisions.insert(self.position(id));
                    stop = pe;
                }
                Cause::Refutation(id) => self.merge_record(id, e, rules),
                Cause::Constraint(c) => {
                    e.constraints.insert(c);
                    self.schema_event(c, event, rules);
                }
            }
            if let EventKind::Removal { value } = event.kind {
                rules.delete_removed(event.var, value);
            }
        }
        stop
    }
}

/// Computes the explanation of a failure by a backward scan of the event
/// store. With `pe` the scan stops at the first selected decision and the
/// explanation keeps a [`Residual`] for later resumption.
pub fn explain(ctx: &ExplainContext, fail: &FailureContext, pe: bool) -> Explanation {
    explain_metered(ctx, fail, pe).0
}

/// Like [`explain`], also reporting how many events the scan visited.
pub fn explain_metered(
    ctx: &ExplainContext,
    fail: &FailureContext,
    pe: bool,
) -> (Explanation, u64) {
    let mut e = Explanation::new();
    let mut rules = RuleSet::new();
    rules.add_dom(fail.var);
    // The failing mutation recorded no event, so its cause is charged up
    // front; a failing constraint may declare rules for the wipe itself.
    match fail.cause {
        Cause::Constraint(c) => {
            e.constraints.insert(c);
            ctx.schema_failure(c, fail.var, &mut rules);
        }
        Cause::Decision(id) => {
            e.decisions.insert(ctx.position(id));
        }
        Cause::Refutation(id) => ctx.merge_record(id, &mut e, &mut rules),
    }
    let mut visited = 0u64;
    let mut i = fail.sigma_tail as isize - 1;
    let mut stop = false;
    while i >= 0 && !stop {
        let event = *ctx.vars.event(i as usize);
        visited += 1;
        stop = ctx.step(&event, pe, &mut e, &mut rules);
        i -= 1;
    }
    debug_assert!(visited <= fail.sigma_tail as u64);
    if pe {
        e.residual = Some(Residual {
            rules,
            scan_index: (i + 1) as usize,
        });
    }
    (e, visited)
}

/// Continues an interrupted scan, stopping when the event of
/// `until_decision` is reached or rules/events run out. The explanation is
/// updated in place, residual included.
pub fn resume(
    ctx: &ExplainContext,
    e: &mut Explanation,
    until_decision: Option<DecisionId>,
) -> ResumeOutcome {
    resume_metered(ctx, e, until_decision).0
}

/// Like [`resume`], also reporting how many events the scan visited.
pub fn resume_metered(
    ctx: &ExplainContext,
    e: &mut Explanation,
    until_decision: Option<DecisionId>,
) -> (ResumeOutcome, u64) {
    let residual = e
        .residual
        .take()
        .expect("resume requires a partial explanation");
    let mut rules = residual.rules;
    let mut outcome = ResumeOutcome::Independent;
    let mut visited = 0u64;
    let mut i = residual.scan_index as isize - 1;
    while i >= 0 && !rules.is_empty() {
        let event = *ctx.vars.event(i as usize);
        visited += 1;
        if until_decision.is_some() && event.cause == Cause::Decision(until_decision.unwrap()) {
            if rules.covers(&event, ctx.vars) {
                e.decisions.insert(ctx.position(until_decision.unwrap()));
                outcome = ResumeOutcome::Depends;
            }
            i -= 1;
            break;
        }
        // intermediate decisions do not interrupt a resumed scan
        ctx.step(&event, false, e, &mut rules);
        i -= 1;
    }
    e.residual = Some(Residual {
        rules,
        scan_index: (i + 1) as usize,
    });
    (outcome, visited)
}
