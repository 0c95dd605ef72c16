//! Depth-first search with 2-way decisions and four failure-handling
//! engines:
//!
//! * `Std` — chronological backtracking, no explanations.
//! * `Cbj` — conflict-directed backjumping on complete explanations.
//! * `CbjI` — backjumping on partial explanations (the scan stops at the
//!   first selected decision and resumes only when needed).
//! * `Dbt` — dynamic backtracking: jumps like CBJ but keeps the decisions
//!   and the independent refutations taken between the failure and the
//!   jump target.
//!
//! Every level of the path owns one kernel world. A level holds either an
//! asserted decision or its refutation; refuted levels carry the
//! explanation that labels them (except under `Std`).

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::constraints::{build_propagators, ConstraintSpec, SpecError};
use crate::eser::{
    deepest_decision, explain_metered, resume_metered, DecisionSet, Explanation, PathInfo,
    ResumeOutcome,
};
use crate::kernel::{Cause, DecisionId, Outcome, VarId, Vars};
use crate::propagation::{propagate, PropagationOutcome, Propagator, Scheduler, Seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Std,
    Cbj,
    CbjI,
    Dbt,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Std => "std",
            Engine::Cbj => "cbj",
            Engine::CbjI => "cbj-i",
            Engine::Dbt => "dbt",
        }
    }

    pub fn from_name(s: &str) -> Option<Engine> {
        match s {
            "std" => Some(Engine::Std),
            "cbj" => Some(Engine::Cbj),
            "cbj-i" | "cbji" | "cbj_i" => Some(Engine::CbjI),
            "dbt" => Some(Engine::Dbt),
            _ => None,
        }
    }

    fn uses_partial_explanations(self) -> bool {
        matches!(self, Engine::CbjI | Engine::Dbt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    /// Stop at the first solution.
    First,
    /// Enumerate all solutions (chronological engine only).
    All,
    /// Report satisfiability without keeping a solution.
    Decide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branching {
    /// Smallest domain first, lowest index on ties.
    MinDom,
    /// First unassigned variable in declaration order.
    Input,
}

impl Branching {
    pub fn from_name(s: &str) -> Option<Branching> {
        match s {
            "mindom" => Some(Branching::MinDom),
            "input" => Some(Branching::Input),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Limits {
    pub timeout: Option<Duration>,
    pub max_nodes: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    pub engine: Engine,
    pub goal: Goal,
    pub branching: Branching,
    pub limits: Limits,
    /// Replace every constraint-specific explanation schema by the
    /// universal default one.
    pub default_schemas: bool,
    /// Collect a [`FailureProbe`] per failure (explanation engines only).
    pub audit: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            engine: Engine::Std,
            goal: Goal::First,
            branching: Branching::MinDom,
            limits: Limits::default(),
            default_schemas: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Sat => "SAT",
            Verdict::Unsat => "UNSAT",
            Verdict::Unknown => "UNKNOWN",
        }
    }
}

/// Counters reported after a run. All are monotone during the search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Decisions taken (including decisions re-posted by DBT).
    pub nodes: u64,
    /// Propagation failures.
    pub fails: u64,
    /// Failure resolutions that skipped at least one open decision.
    pub backjumps: u64,
    /// Largest number of open decisions skipped by a single jump.
    pub max_jump: u64,
    pub peak_depth: u64,
    pub solutions: u64,
    pub elapsed_ms: u64,
    pub timed_out: bool,
    /// Events visited by all explanation scans (explain + resume).
    pub sigma_visits: u64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub verdict: Verdict,
    pub solutions: Vec<Vec<i64>>,
    pub stats: SearchStats,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("enumerating all solutions requires the std engine")]
    AllRequiresStd,
    #[error(transparent)]
    BadSpec(#[from] SpecError),
}

/// Diagnostic snapshot taken at one failure when auditing is on.
#[derive(Debug, Clone)]
pub struct FailureProbe {
    /// Path depth at the failure.
    pub depth: usize,
    /// Event-store length at the failure.
    pub sigma_len: usize,
    /// Decisions of the complete (pe = false) explanation, as assignments.
    pub decisions_complete: Vec<(VarId, i64)>,
    pub deepest_complete: Option<u32>,
    pub deepest_incomplete: Option<u32>,
    /// Partial explanation resumed to exhaustion selects the same decisions
    /// as the complete one.
    pub resumed_equals_complete: bool,
    pub visits_complete: u64,
    /// Visits of the partial scan plus its resume-to-exhaustion.
    pub visits_incomplete_total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LevelState {
    Asserted,
    Refuted,
}

#[derive(Debug, Clone, Copy)]
struct Decision {
    var: VarId,
    value: i64,
    id: DecisionId,
}

#[derive(Debug)]
struct Level {
    decision: Decision,
    state: LevelState,
    record: Option<Explanation>,
}

/// A refutation record detached from the path while DBT re-arranges levels.
/// Decisions are held by serial so they survive re-positioning.
#[derive(Debug)]
struct UnhookedRecord {
    decisions: Vec<DecisionId>,
    constraints: std::collections::BTreeSet<crate::kernel::ConstraintId>,
    residual: Option<crate::eser::Residual>,
}

#[derive(Debug)]
enum PendingItem {
    Decision(Decision),
    Refutation(Decision, UnhookedRecord),
}

enum Resolution {
    Continued,
    Exhausted,
}

struct PathView<'a> {
    levels: &'a [Level],
    pos_by_serial: &'a [Option<u32>],
}

impl PathInfo for PathView<'_> {
    fn position_of(&self, id: DecisionId) -> Option<u32> {
        self.pos_by_serial.get(id.index()).copied().flatten()
    }

    fn record_at(&self, pos: u32) -> Option<&Explanation> {
        self.levels.get(pos as usize - 1).and_then(|l| l.record.as_ref())
    }
}

/// One search instance over a fixed model. State is fully private to the
/// instance; distinct instances are independent.
pub struct Solver {
    vars: Vars,
    specs: Vec<ConstraintSpec>,
    props: Vec<Box<dyn Propagator>>,
    sched: Scheduler,
    levels: Vec<Level>,
    pos_by_serial: Vec<Option<u32>>,
    pending: VecDeque<PendingItem>,
    cfg: SolveConfig,
    stats: SearchStats,
    solutions: Vec<Vec<i64>>,
    probes: Vec<FailureProbe>,
}

impl Solver {
    /// Builds a solver over the given initial domains (each a sorted,
    /// duplicate-free value list) and constraints.
    pub fn new(domains: &[Vec<i64>], specs: Vec<ConstraintSpec>) -> Result<Solver, SolveError> {
        let mut vars = Vars::new();
        for d in domains {
            vars.add_var(d);
        }
        for (i, s) in specs.iter().enumerate() {
            s.validate(i, vars.var_count())?;
        }
        let props = build_propagators(&specs);
        let sched = Scheduler::new(vars.var_count(), &props);
        Ok(Solver {
            vars,
            specs,
            props,
            sched,
            levels: Vec::new(),
            pos_by_serial: Vec::new(),
            pending: VecDeque::new(),
            cfg: SolveConfig::default(),
            stats: SearchStats::default(),
            solutions: Vec::new(),
            probes: Vec::new(),
        })
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn specs(&self) -> &[ConstraintSpec] {
        &self.specs
    }

    pub fn stats(&self) -> &SearchStats {
        &self.stats
    }

    pub fn probes(&self) -> &[FailureProbe] {
        &self.probes
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Runs the search to completion. One call per solver instance.
    pub fn solve(&mut self, cfg: SolveConfig) -> Result<SolveResult, SolveError> {
        if cfg.goal == Goal::All && cfg.engine != Engine::Std {
            return Err(SolveError::AllRequiresStd);
        }
        self.cfg = cfg;
        let start = Instant::now();
        let mut verdict;
        if self.propagate_root() == PropagationOutcome::Failure {
            self.stats.fails += 1;
            self.audit_failure();
            self.vars.clear_failure();
            verdict = Verdict::Unsat;
        } else {
            verdict = loop {
                if let Some(t) = self.cfg.limits.timeout {
                    if start.elapsed() >= t {
                        self.stats.timed_out = true;
                        break Verdict::Unknown;
                    }
                }
                if let Some(n) = self.cfg.limits.max_nodes {
                    if self.stats.nodes >= n {
                        break Verdict::Unknown;
                    }
                }
                if self.vars.failure().is_some() {
                    self.stats.fails += 1;
                    match self.handle_failure() {
                        Resolution::Exhausted => break Verdict::Unsat,
                        Resolution::Continued => continue,
                    }
                }
                if let Some(item) = self.pending.pop_front() {
                    self.apply_pending(item);
                    continue;
                }
                match self.branch_select() {
                    Some((var, value)) => self.take_decision(var, value),
                    None => {
                        self.on_solution();
                        if self.cfg.goal != Goal::All {
                            break Verdict::Sat;
                        }
                        if let Resolution::Exhausted = self.std_backtrack() {
                            break Verdict::Unsat;
                        }
                    }
                }
            };
        }
        if verdict == Verdict::Unsat && self.stats.solutions > 0 {
            verdict = Verdict::Sat; // full enumeration finished
        }
        self.stats.elapsed_ms = start.elapsed().as_millis() as u64;
        Ok(SolveResult {
            verdict,
            solutions: std::mem::take(&mut self.solutions),
            stats: self.stats,
        })
    }

    // --- stepping primitives (also used by tests) ---

    /// Initial propagation of every constraint.
    pub fn propagate_root(&mut self) -> PropagationOutcome {
        propagate(
            &mut self.vars,
            &self.props,
            &mut self.sched,
            Seed::AllPropagators,
        )
    }

    /// Opens a new level, asserts `var = value` and propagates.
    pub fn decide(&mut self, var: VarId, value: i64) -> PropagationOutcome {
        self.take_decision(var, value);
        if self.vars.failure().is_some() {
            PropagationOutcome::Failure
        } else {
            PropagationOutcome::Fixpoint
        }
    }

    /// Explains the pending failure without consuming it.
    pub fn explain_failure(&self, pe: bool) -> Explanation {
        let fc = *self.vars.failure().expect("no pending failure");
        let view = PathView {
            levels: &self.levels,
            pos_by_serial: &self.pos_by_serial,
        };
        let ctx = crate::eser::ExplainContext {
            vars: &self.vars,
            props: &self.props,
            path: &view,
            default_schemas: self.cfg.default_schemas,
        };
        explain_metered(&ctx, &fc, pe).0
    }

    /// Resolves the pending failure with the configured engine.
    pub fn resolve_failure(&mut self) -> bool {
        matches!(self.handle_failure(), Resolution::Continued)
    }

    pub fn set_config(&mut self, cfg: SolveConfig) {
        self.cfg = cfg;
    }

    /// Assignments of the decisions in `e`, by looking the positions up on
    /// the live path.
    pub fn decision_assignments(&self, e: &Explanation) -> Vec<(VarId, i64)> {
        e.decisions
            .iter()
            .map(|p| {
                let l = &self.levels[p as usize - 1];
                (l.decision.var, l.decision.value)
            })
            .collect()
    }

    /// State of the level at `pos` (1-based): `(var, value, refuted)`.
    pub fn level_info(&self, pos: u32) -> (VarId, i64, bool) {
        let l = &self.levels[pos as usize - 1];
        (
            l.decision.var,
            l.decision.value,
            l.state == LevelState::Refuted,
        )
    }

    pub fn record_at(&self, pos: u32) -> Option<&Explanation> {
        self.levels[pos as usize - 1].record.as_ref()
    }

    // --- internals ---

    fn branch_select(&self) -> Option<(VarId, i64)> {
        let mut best: Option<(usize, VarId)> = None;
        for i in 0..self.vars.var_count() {
            let v = VarId(i as u32);
            let s = self.vars.size(v);
            if s < 2 {
                continue;
            }
            match self.cfg.branching {
                Branching::Input => return Some((v, self.vars.lb(v))),
                Branching::MinDom => {
                    if best.map_or(true, |(bs, _)| s < bs) {
                        best = Some((s, v));
                    }
                }
            }
        }
        best.map(|(_, v)| (v, self.vars.lb(v)))
    }

    fn new_serial(&mut self) -> DecisionId {
        let id = DecisionId(self.pos_by_serial.len() as u32);
        self.pos_by_serial.push(None);
        id
    }

    fn push_level(&mut self, decision: Decision, state: LevelState, record: Option<Explanation>) {
        self.vars.push_world();
        self.levels.push(Level {
            decision,
            state,
            record,
        });
        self.pos_by_serial[decision.id.index()] = Some(self.levels.len() as u32);
        self.stats.peak_depth = self.stats.peak_depth.max(self.levels.len() as u64);
    }

    fn pop_level(&mut self) {
        self.vars.pop_world();
        let l = self.levels.pop().expect("pop_level on an empty path");
        self.pos_by_serial[l.decision.id.index()] = None;
        if !self.pending.is_empty() {
            // a pop may truncate events a pending record still needs
            let sigma = self.vars.sigma_len();
            self.pending.retain(|item| match item {
                PendingItem::Decision(_) => true,
                PendingItem::Refutation(_, rec) => rec
                    .residual
                    .as_ref()
                    .map_or(true, |r| r.rules.is_empty() || r.scan_index <= sigma),
            });
        }
    }

    fn take_decision(&mut self, var: VarId, value: i64) {
        let id = self.new_serial();
        self.apply_decision(Decision { var, value, id });
    }

    fn apply_decision(&mut self, d: Decision) {
        self.push_level(d, LevelState::Asserted, None);
        self.stats.nodes += 1;
        let from = self.vars.sigma_len();
        match self.vars.instantiate(d.var, d.value, Cause::Decision(d.id)) {
            Outcome::Failure => {}
            _ => {
                propagate(
                    &mut self.vars,
                    &self.props,
                    &mut self.sched,
                    Seed::Events { from },
                );
            }
        }
    }

    fn on_solution(&mut self) {
        debug_assert!((0..self.vars.var_count()).all(|i| self.vars.is_assigned(VarId(i as u32))));
        self.stats.solutions += 1;
        if self.cfg.goal != Goal::Decide {
            let sol: Vec<i64> = (0..self.vars.var_count())
                .map(|i| self.vars.value(VarId(i as u32)))
                .collect();
            debug_assert!(self.specs.iter().all(|s| s.is_satisfied(&sol)));
            self.solutions.push(sol);
        }
    }

    fn handle_failure(&mut self) -> Resolution {
        match self.cfg.engine {
            Engine::Std => {
                self.vars.clear_failure();
                self.std_backtrack()
            }
            Engine::Cbj => self.explained_backtrack(false),
            Engine::CbjI | Engine::Dbt => self.explained_backtrack(true),
        }
    }

    /// Chronological backtracking: drop exhausted refutations, then flip the
    /// deepest asserted decision.
    fn std_backtrack(&mut self) -> Resolution {
        loop {
            let Some(top) = self.levels.last() else {
                return Resolution::Exhausted;
            };
            match top.state {
                LevelState::Refuted => self.pop_level(),
                LevelState::Asserted => {
                    self.refute_top(None);
                    return Resolution::Continued;
                }
            }
        }
    }

    /// Undoes the asserted top level and posts the refutation of its
    /// decision in a fresh world, labelled by `record`.
    fn refute_top(&mut self, record: Option<Explanation>) {
        let top = self.levels.last_mut().expect("refute_top needs a level");
        debug_assert_eq!(top.state, LevelState::Asserted);
        let d = top.decision;
        if let Some(rec) = &record {
            debug_assert!(
                rec.decisions.highest().is_none_or(|p| p < self.levels.len() as u32),
                "refutation record references its own or a deeper position"
            );
        }
        self.vars.pop_world();
        self.vars.push_world();
        let top = self.levels.last_mut().unwrap();
        top.state = LevelState::Refuted;
        top.record = record;
        let from = self.vars.sigma_len();
        match self
            .vars
            .remove_value(d.var, d.value, Cause::Refutation(d.id))
        {
            Outcome::Failure => {}
            Outcome::Changed => {
                propagate(
                    &mut self.vars,
                    &self.props,
                    &mut self.sched,
                    Seed::Events { from },
                );
            }
            Outcome::Unchanged => {
                // the refuted value is already gone for other reasons
            }
        }
    }

    fn explain_ctx(&self) -> (PathView<'_>, bool) {
        (
            PathView {
                levels: &self.levels,
                pos_by_serial: &self.pos_by_serial,
            },
            self.cfg.default_schemas,
        )
    }

    fn audit_failure(&mut self) {
        if !self.cfg.audit || self.cfg.engine == Engine::Std {
            return;
        }
        let fc = *self.vars.failure().expect("audit without failure");
        let (view, defaults) = self.explain_ctx();
        let ctx = crate::eser::ExplainContext {
            vars: &self.vars,
            props: &self.props,
            path: &view,
            default_schemas: defaults,
        };
        let (complete, visits_complete) = explain_metered(&ctx, &fc, false);
        let (partial, vi) = explain_metered(&ctx, &fc, true);
        let mut resumed = partial.clone();
        let (_, vr) = resume_metered(&ctx, &mut resumed, None);
        let probe = FailureProbe {
            depth: self.levels.len(),
            sigma_len: fc.sigma_tail,
            decisions_complete: complete
                .decisions
                .iter()
                .map(|p| {
                    let l = &self.levels[p as usize - 1];
                    (l.decision.var, l.decision.value)
                })
                .collect(),
            deepest_complete: deepest_decision(&complete),
            deepest_incomplete: deepest_decision(&partial),
            resumed_equals_complete: resumed.decisions == complete.decisions,
            visits_complete,
            visits_incomplete_total: vi + vr,
        };
        self.probes.push(probe);
    }

    /// CBJ / CBJ-I / DBT failure handling: explain, jump to the deepest
    /// explaining decision, refute it with the remainder of the explanation.
    fn explained_backtrack(&mut self, pe: bool) -> Resolution {
        self.audit_failure();
        let fc = self.vars.take_failure().expect("failure context");
        let (mut e, visited) = {
            let (view, defaults) = self.explain_ctx();
            let ctx = crate::eser::ExplainContext {
                vars: &self.vars,
                props: &self.props,
                path: &view,
                default_schemas: defaults,
            };
            explain_metered(&ctx, &fc, pe)
        };
        self.stats.sigma_visits += visited;
        let mut target = deepest_decision(&e);
        if pe && target.is_none() {
            // a partial scan may have stopped early; only a completed scan
            // can certify that no decision explains the failure
            let (view, defaults) = self.explain_ctx();
            let ctx = crate::eser::ExplainContext {
                vars: &self.vars,
                props: &self.props,
                path: &view,
                default_schemas: defaults,
            };
            let (_, v) = resume_metered(&ctx, &mut e, None);
            self.stats.sigma_visits += v;
            target = deepest_decision(&e);
        }
        let Some(target) = target else {
            return Resolution::Exhausted;
        };
        let skipped = self
            .levels
            .iter()
            .skip(target as usize)
            .filter(|l| l.state == LevelState::Asserted)
            .count() as u64;
        if skipped > 0 {
            self.stats.backjumps += 1;
            self.stats.max_jump = self.stats.max_jump.max(skipped);
        }
        if self.cfg.engine == Engine::Dbt {
            let items = self.harvest_intervening(target);
            for item in items.into_iter().rev() {
                self.pending.push_front(item);
            }
        }
        while self.levels.len() > target as usize {
            self.pop_level();
        }
        e.decisions.remove(target);
        self.refute_top(Some(e));
        Resolution::Continued
    }

    /// Collects the levels above the jump target for re-posting: every
    /// decision is kept; a refutation is kept only if its record does not
    /// depend on the target decision, which is settled by membership or by
    /// resuming its scan down to the target's event. Runs before any world
    /// is popped, while the scanned events still exist.
    fn harvest_intervening(&mut self, target: u32) -> Vec<PendingItem> {
        let target_id = self.levels[target as usize - 1].decision.id;
        let mut kept: Vec<(usize, PendingItem)> = Vec::new();
        // deepest first: resuming a record may consult the records of
        // shallower refuted levels, which must still be attached
        for idx in (target as usize..self.levels.len()).rev() {
            let state = self.levels[idx].state;
            let d = self.levels[idx].decision;
            match state {
                LevelState::Asserted => kept.push((idx, PendingItem::Decision(d))),
                LevelState::Refuted => {
                    let mut rec = self.levels[idx].record.take().expect("refutation record");
                    if rec.decisions.contains(target) {
                        continue; // depends on the jump target
                    }
                    let (view, defaults) = {
                        (
                            PathView {
                                levels: &self.levels,
                                pos_by_serial: &self.pos_by_serial,
                            },
                            self.cfg.default_schemas,
                        )
                    };
                    let ctx = crate::eser::ExplainContext {
                        vars: &self.vars,
                        props: &self.props,
                        path: &view,
                        default_schemas: defaults,
                    };
                    let (outcome, v) = resume_metered(&ctx, &mut rec, Some(target_id));
                    self.stats.sigma_visits += v;
                    // a merged record may have injected the target as well
                    if outcome == ResumeOutcome::Depends || rec.decisions.contains(target) {
                        continue;
                    }
                    let unhooked = self.unhook(rec);
                    kept.push((idx, PendingItem::Refutation(d, unhooked)));
                }
            }
        }
        kept.sort_by_key(|(idx, _)| *idx);
        kept.into_iter().map(|(_, item)| item).collect()
    }

    fn unhook(&self, rec: Explanation) -> UnhookedRecord {
        UnhookedRecord {
            decisions: rec
                .decisions
                .iter()
                .map(|p| self.levels[p as usize - 1].decision.id)
                .collect(),
            constraints: rec.constraints,
            residual: rec.residual,
        }
    }

    fn apply_pending(&mut self, item: PendingItem) {
        match item {
            PendingItem::Decision(d) => {
                if self.vars.is_assigned(d.var) && self.vars.value(d.var) == d.value {
                    return; // subsumed by propagation
                }
                self.apply_decision(d);
            }
            PendingItem::Refutation(d, rec) => {
                // every decision the record references must still be
                // asserted on the path; otherwise the record is stale and
                // the refutation is simply dropped
                let mut decisions = DecisionSet::new();
                for id in &rec.decisions {
                    let pos = self.pos_by_serial.get(id.index()).copied().flatten();
                    match pos {
                        Some(p) if self.levels[p as usize - 1].state == LevelState::Asserted => {
                            decisions.insert(p)
                        }
                        _ => return,
                    }
                }
                if let Some(r) = &rec.residual {
                    if !r.rules.is_empty() && r.scan_index > self.vars.sigma_len() {
                        return; // its unscanned history is gone
                    }
                }
                if !self.vars.contains(d.var, d.value) {
                    return; // already pruned by the current state
                }
                let record = Explanation {
                    decisions,
                    constraints: rec.constraints,
                    residual: rec.residual,
                };
                self.push_level(d, LevelState::Refuted, Some(record));
                let from = self.vars.sigma_len();
                match self
                    .vars
                    .remove_value(d.var, d.value, Cause::Refutation(d.id))
                {
                    Outcome::Failure => {}
                    _ => {
                        propagate(
                            &mut self.vars,
                            &self.props,
                            &mut self.sched,
                            Seed::Events { from },
                        );
                    }
                }
            }
        }
    }
}
