//! Propagator contract, event-driven scheduling and fixpoint computation.
//!
//! Propagators are scheduled in a FIFO queue without duplicates. After each
//! filter run, the freshly recorded events are drained: every propagator
//! watching a changed variable is enqueued, except the one that caused the
//! change. Propagation stops at a fixpoint or at the first failure.

use crate::eser::RuleSet;
use crate::kernel::{Cause, ConstraintId, Event, Outcome, VarId, Vars};

/// Signal that a filter emptied a domain. The details live in the store's
/// [`crate::kernel::FailureContext`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterFailed;

pub type FilterResult = Result<(), FilterFailed>;

/// Converts a mutation outcome into filter control flow.
pub fn check(outcome: Outcome) -> FilterResult {
    match outcome {
        Outcome::Failure => Err(FilterFailed),
        _ => Ok(()),
    }
}

/// A constraint's runtime behaviour: a contracting, sound filtering
/// procedure plus an explanation schema that maps an event the constraint
/// produced to the selection rules pointing at the event's sources.
pub trait Propagator {
    /// The variables this propagator watches.
    fn scope(&self) -> &[VarId];

    /// Removes values that cannot satisfy the constraint, using the kernel
    /// mutation ops with cause `Constraint(me)`. Runs to its own local
    /// fixpoint.
    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult;

    /// Declares selection rules for the sources of `event`, which this
    /// constraint produced. The default schema declares a domain rule on
    /// every scope variable; it is always sound but weak.
    fn explain_event(&self, event: &Event, vars: &Vars, rules: &mut RuleSet) {
        let _ = (event, vars);
        default_schema(self.scope(), rules);
    }

    /// Like [`Propagator::explain_event`] for a failure: the mutation that
    /// would have emptied `var` recorded no event, so the wipe is explained
    /// as a whole-domain change of `var`.
    fn explain_failure(&self, var: VarId, vars: &Vars, rules: &mut RuleSet) {
        let _ = (var, vars);
        default_schema(self.scope(), rules);
    }
}

/// The universal fallback schema: a domain rule on every scope variable.
pub fn default_schema(scope: &[VarId], rules: &mut RuleSet) {
    for &v in scope {
        rules.add_dom(v);
    }
}

/// FIFO propagator queue plus the variable-to-propagator watch lists.
#[derive(Debug)]
pub struct Scheduler {
    queue: std::collections::VecDeque<ConstraintId>,
    queued: Vec<bool>,
    watchers: Vec<Vec<ConstraintId>>,
}

/// How a propagation round is seeded.
#[derive(Debug, Clone, Copy)]
pub enum Seed {
    /// Enqueue every propagator (initial propagation).
    AllPropagators,
    /// Schedule from the events recorded at index `from` onwards.
    Events { from: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationOutcome {
    Fixpoint,
    Failure,
}

impl Scheduler {
    pub fn new(var_count: usize, props: &[Box<dyn Propagator>]) -> Scheduler {
        let mut watchers = vec![Vec::new(); var_count];
        for (i, p) in props.iter().enumerate() {
            let id = ConstraintId(i as u32);
            for &v in p.scope() {
                let w = &mut watchers[v.index()];
                if !w.contains(&id) {
                    w.push(id);
                }
            }
        }
        Scheduler {
            queue: std::collections::VecDeque::new(),
            queued: vec![false; props.len()],
            watchers,
        }
    }

    fn enqueue(&mut self, id: ConstraintId) {
        if !self.queued[id.index()] {
            self.queued[id.index()] = true;
            self.queue.push_back(id);
        }
    }

    /// Enqueues every propagator watching `event.var`, except the event's
    /// own cause.
    pub fn on_event(&mut self, event: &Event) {
        let skip = event.cause.constraint();
        let watchers = std::mem::take(&mut self.watchers[event.var.index()]);
        for &id in &watchers {
            if Some(id) != skip {
                self.enqueue(id);
            }
        }
        self.watchers[event.var.index()] = watchers;
    }

    pub fn clear(&mut self) {
        self.queue.clear();
        self.queued.iter_mut().for_each(|q| *q = false);
    }

    #[cfg(test)]
    pub fn queued_ids(&self) -> Vec<ConstraintId> {
        self.queue.iter().copied().collect()
    }
}

/// Runs filters until no propagator can remove another value, or a failure
/// occurs. On failure the queue is dropped and no further event is recorded
/// within this call.
pub fn propagate(
    vars: &mut Vars,
    props: &[Box<dyn Propagator>],
    sched: &mut Scheduler,
    seed: Seed,
) -> PropagationOutcome {
    let mut cursor = match seed {
        Seed::AllPropagators => {
            for i in 0..props.len() {
                sched.enqueue(ConstraintId(i as u32));
            }
            vars.sigma_len()
        }
        Seed::Events { from } => from,
    };
    loop {
        // schedule from any events not yet drained
        while cursor < vars.sigma_len() {
            let e = *vars.event(cursor);
            sched.on_event(&e);
            cursor += 1;
        }
        let Some(id) = sched.queue.pop_front() else {
            return PropagationOutcome::Fixpoint;
        };
        sched.queued[id.index()] = false;
        if props[id.index()].filter(id, vars).is_err() {
            debug_assert!(vars.failure().is_some());
            sched.clear();
            return PropagationOutcome::Failure;
        }
    }
}

/// Test oracle: saturates by running every filter round-robin until a full
/// pass changes nothing, ignoring the event-driven scheduler entirely.
pub fn saturate_round_robin(
    vars: &mut Vars,
    props: &[Box<dyn Propagator>],
) -> PropagationOutcome {
    loop {
        let before = vars.sigma_len();
        for (i, p) in props.iter().enumerate() {
            if p.filter(ConstraintId(i as u32), vars).is_err() {
                return PropagationOutcome::Failure;
            }
        }
        if vars.sigma_len() == before {
            return PropagationOutcome::Fixpoint;
        }
    }
}

/// Helper for filters built around repeated passes: runs `pass` until it
/// reports no change.
pub(crate) fn to_local_fixpoint<F>(mut pass: F) -> FilterResult
where
    F: FnMut() -> Result<bool, FilterFailed>,
{
    while pass()? {}
    Ok(())
}
