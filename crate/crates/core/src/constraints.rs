//! The constraint catalog: specs, filtering propagators, explanation
//! schemas and a direct satisfaction evaluator.
//!
//! Filtering levels: arc consistency for the binary equality/disequality
//! offsets and negative tables, bounds consistency for the linear
//! constraints, forward checking for alldifferent (when a scope variable
//! becomes assigned, its value is removed from every other scope variable).

use std::collections::HashSet;
use std::fmt;

use crate::eser::RuleSet;
use crate::kernel::{ConstraintId, Event, VarId, Vars};
use crate::propagation::{check, to_local_fixpoint, FilterFailed, FilterResult, Propagator};

/// A constraint as stated in a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintSpec {
    /// x = y + c
    EqOffset { x: VarId, y: VarId, c: i64 },
    /// x != y + c
    NeqOffset { x: VarId, y: VarId, c: i64 },
    /// x <= y + c
    LeqOffset { x: VarId, y: VarId, c: i64 },
    /// sum(coeffs[i] * vars[i]) <= bound
    LinearLeq {
        coeffs: Vec<i64>,
        vars: Vec<VarId>,
        bound: i64,
    },
    /// sum(coeffs[i] * vars[i]) = bound
    LinearEq {
        coeffs: Vec<i64>,
        vars: Vec<VarId>,
        bound: i64,
    },
    /// All variables take pairwise distinct values.
    AllDifferent { vars: Vec<VarId> },
    /// None of the listed (x, y) value pairs may hold simultaneously.
    TableNeg {
        x: VarId,
        y: VarId,
        forbidden: Vec<(i64, i64)>,
    },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("constraint {0}: variable v{1} is out of range")]
    VarOutOfRange(usize, u32),
    #[error("constraint {0}: linear coefficient must be non-zero")]
    ZeroCoefficient(usize),
    #[error("constraint {0}: coefficient and variable lists differ in length")]
    LengthMismatch(usize),
    #[error("constraint {0}: a variable appears twice")]
    DuplicateVar(usize),
    #[error("constraint {0}: alldifferent needs at least 2 variables")]
    TooFewVars(usize),
    #[error("constraint {0}: empty scope")]
    EmptyScope(usize),
}

impl ConstraintSpec {
    pub fn scope(&self) -> Vec<VarId> {
        match self {
            ConstraintSpec::EqOffset { x, y, .. }
            | ConstraintSpec::NeqOffset { x, y, .. }
            | ConstraintSpec::LeqOffset { x, y, .. }
            | ConstraintSpec::TableNeg { x, y, .. } => {
                if x == y {
                    vec![*x]
                } else {
                    vec![*x, *y]
                }
            }
            ConstraintSpec::LinearLeq { vars, .. } | ConstraintSpec::LinearEq { vars, .. } => {
                vars.clone()
            }
            ConstraintSpec::AllDifferent { vars } => vars.clone(),
        }
    }

    pub fn validate(&self, index: usize, var_count: usize) -> Result<(), SpecError> {
        let scope = self.scope();
        if scope.is_empty() {
            return Err(SpecError::EmptyScope(index));
        }
        for v in &scope {
            if v.index() >= var_count {
                return Err(SpecError::VarOutOfRange(index, v.0));
            }
        }
        match self {
            ConstraintSpec::LinearLeq { coeffs, vars, .. }
            | ConstraintSpec::LinearEq { coeffs, vars, .. } => {
                if coeffs.len() != vars.len() {
                    return Err(SpecError::LengthMismatch(index));
                }
                if coeffs.contains(&0) {
                    return Err(SpecError::ZeroCoefficient(index));
                }
                if has_duplicates(vars) {
                    return Err(SpecError::DuplicateVar(index));
                }
            }
            ConstraintSpec::AllDifferent { vars } => {
                if vars.len() < 2 {
                    return Err(SpecError::TooFewVars(index));
                }
                if has_duplicates(vars) {
                    return Err(SpecError::DuplicateVar(index));
                }
            }
            ConstraintSpec::TableNeg { x, y, .. } => {
                if x == y {
                    return Err(SpecError::DuplicateVar(index));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Direct evaluation under a full assignment, independent of the
    /// propagators. Used to check reported solutions.
    pub fn is_satisfied(&self, assignment: &[i64]) -> bool {
        let val = |v: &VarId| assignment[v.index()];
        match self {
            ConstraintSpec::EqOffset { x, y, c } => val(x) == val(y) + c,
            ConstraintSpec::NeqOffset { x, y, c } => val(x) != val(y) + c,
            ConstraintSpec::LeqOffset { x, y, c } => val(x) <= val(y) + c,
            ConstraintSpec::LinearLeq { coeffs, vars, bound } => {
                linear_sum(coeffs, vars, assignment) <= *bound
            }
            ConstraintSpec::LinearEq { coeffs, vars, bound } => {
                linear_sum(coeffs, vars, assignment) == *bound
            }
            ConstraintSpec::AllDifferent { vars } => {
                let mut seen = HashSet::new();
                vars.iter().all(|v| seen.insert(val(v)))
            }
            ConstraintSpec::TableNeg { x, y, forbidden } => {
                !forbidden.contains(&(val(x), val(y)))
            }
        }
    }

    /// Renders the constraint in the model-file syntax.
    pub fn fmt_with_names(&self, f: &mut fmt::Formatter<'_>, names: &[String]) -> fmt::Result {
        let n = |v: &VarId| names[v.index()].as_str();
        match self {
            ConstraintSpec::EqOffset { x, y, c } => write!(f, "eq({},{},{})", n(x), n(y), c),
            ConstraintSpec::NeqOffset { x, y, c } => write!(f, "neq({},{},{})", n(x), n(y), c),
            ConstraintSpec::LeqOffset { x, y, c } => write!(f, "leq({},{},{})", n(x), n(y), c),
            ConstraintSpec::LinearLeq { coeffs, vars, bound } => {
                write!(f, "linear(")?;
                fmt_int_list(f, coeffs)?;
                write!(f, ",")?;
                fmt_name_list(f, vars, names)?;
                write!(f, ",\"<=\",{bound})")
            }
            ConstraintSpec::LinearEq { coeffs, vars, bound } => {
                write!(f, "linear(")?;
                fmt_int_list(f, coeffs)?;
                write!(f, ",")?;
                fmt_name_list(f, vars, names)?;
                write!(f, ",\"=\",{bound})")
            }
            ConstraintSpec::AllDifferent { vars } => {
                write!(f, "alldifferent(")?;
                for (i, v) in vars.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", n(v))?;
                }
                write!(f, ")")
            }
            ConstraintSpec::TableNeg { x, y, forbidden } => {
                write!(f, "table_neg([{},{}],[", n(x), n(y))?;
                for (i, (a, b)) in forbidden.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a},{b}")?;
                }
                write!(f, "])")
            }
        }
    }

    pub fn build(&self) -> Box<dyn Propagator> {
        match self.clone() {
            ConstraintSpec::EqOffset { x, y, c } => Box::new(EqOffsetProp::new(x, y, c)),
            ConstraintSpec::NeqOffset { x, y, c } => Box::new(NeqOffsetProp::new(x, y, c)),
            ConstraintSpec::LeqOffset { x, y, c } => Box::new(LeqOffsetProp::new(x, y, c)),
            ConstraintSpec::LinearLeq { coeffs, vars, bound } => {
                Box::new(LinearProp::new(coeffs, vars, bound, false))
            }
            ConstraintSpec::LinearEq { coeffs, vars, bound } => {
                Box::new(LinearProp::new(coeffs, vars, bound, true))
            }
            ConstraintSpec::AllDifferent { vars } => Box::new(AllDifferentProp { scope: vars }),
            ConstraintSpec::TableNeg { x, y, forbidden } => {
                Box::new(TableNegProp::new(x, y, forbidden))
            }
        }
    }
}

pub fn build_propagators(specs: &[ConstraintSpec]) -> Vec<Box<dyn Propagator>> {
    specs.iter().map(|s| s.build()).collect()
}

fn has_duplicates(vars: &[VarId]) -> bool {
    let mut seen = HashSet::new();
    vars.iter().any(|v| !seen.insert(*v))
}

fn linear_sum(coeffs: &[i64], vars: &[VarId], assignment: &[i64]) -> i64 {
    coeffs
        .iter()
        .zip(vars)
        .map(|(a, v)| a * assignment[v.index()])
        .sum()
}

fn fmt_int_list(f: &mut fmt::Formatter<'_>, xs: &[i64]) -> fmt::Result {
    write!(f, "[")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{x}")?;
    }
    write!(f, "]")
}

fn fmt_name_list(f: &mut fmt::Formatter<'_>, vs: &[VarId], names: &[String]) -> fmt::Result {
    write!(f, "[")?;
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{}", names[v.index()])?;
    }
    write!(f, "]")
}

// --- x = y + c ---

pub struct EqOffsetProp {
    x: VarId,
    y: VarId,
    c: i64,
    scope: Vec<VarId>,
}

impl EqOffsetProp {
    pub fn new(x: VarId, y: VarId, c: i64) -> EqOffsetProp {
        let scope = if x == y { vec![x] } else { vec![x, y] };
        EqOffsetProp { x, y, c, scope }
    }
}

impl Propagator for EqOffsetProp {
    fn scope(&self) -> &[VarId] {
        &self.scope
    }

    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult {
        let cause = crate::kernel::Cause::Constraint(me);
        if self.x == self.y {
            if self.c != 0 {
                // x = x + c is unsatisfiable; empty via a bound update
                return check(vars.update_lower(self.x, vars.ub(self.x) + 1, cause));
            }
            return Ok(());
        }
        to_local_fixpoint(|| {
            let mut changed = false;
            for a in vars.domain_values(self.x) {
                if !vars.contains(self.y, a - self.c) {
                    check(vars.remove_value(self.x, a, cause))?;
                    changed = true;
                }
            }
            for b in vars.domain_values(self.y) {
                if !vars.contains(self.x, b + self.c) {
                    check(vars.remove_value(self.y, b, cause))?;
                    changed = true;
                }
            }
            Ok(changed)
        })
    }

    fn explain_event(&self, event: &Event, _vars: &Vars, rules: &mut RuleSet) {
        // a change on one side mirrors a change on the other
        let (other, shift) = if event.var == self.x {
            (self.y, -self.c)
        } else {
            (self.x, self.c)
        };
        match event.kind {
            crate::kernel::EventKind::Removal { value } => rules.add_removed(other, value + shift),
            crate::kernel::EventKind::LowerBound { .. } => rules.add_lb(other),
            crate::kernel::EventKind::UpperBound { .. } => rules.add_ub(other),
            crate::kernel::EventKind::Assignment { .. } => {
                rules.add_lb(other);
                rules.add_ub(other);
            }
        }
    }

    fn explain_failure(&self, var: VarId, _vars: &Vars, rules: &mut RuleSet) {
        let other = if var == self.x { self.y } else { self.x };
        rules.add_dom(other);
    }
}

// --- x != y + c ---

pub struct NeqOffsetProp {
    x: VarId,
    y: VarId,
    c: i64,
    scope: Vec<VarId>,
}

impl NeqOffsetProp {
    pub fn new(x: VarId, y: VarId, c: i64) -> NeqOffsetProp {
        let scope = if x == y { vec![x] } else { vec![x, y] };
        NeqOffsetProp { x, y, c, scope }
    }
}

impl Propagator for NeqOffsetProp {
    fn scope(&self) -> &[VarId] {
        &self.scope
    }

    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult {
        let cause = crate::kernel::Cause::Constraint(me);
        if self.x == self.y {
            if self.c == 0 {
                return check(vars.update_lower(self.x, vars.ub(self.x) + 1, cause));
            }
            return Ok(());
        }
        to_local_fixpoint(|| {
            let mut changed = false;
            if vars.is_assigned(self.x) {
                let forbidden = vars.value(self.x) - self.c;
                if vars.contains(self.y, forbidden) {
                    check(vars.remove_value(self.y, forbidden, cause))?;
                    changed = true;
                }
            }
            if vars.is_assigned(self.y) {
                let forbidden = vars.value(self.y) + self.c;
                if vars.contains(self.x, forbidden) {
                    check(vars.remove_value(self.x, forbidden, cause))?;
                    changed = true;
                }
            }
            Ok(changed)
        })
    }

    fn explain_event(&self, event: &Event, _vars: &Vars, rules: &mut RuleSet) {
        // the removal was triggered by the other side's assignment
        let other = if event.var == self.x { self.y } else { self.x };
        rules.add_lb(other);
        rules.add_ub(other);
    }

    fn explain_failure(&self, var: VarId, _vars: &Vars, rules: &mut RuleSet) {
        let other = if var == self.x { self.y } else { self.x };
        rules.add_lb(other);
        rules.add_ub(other);
    }
}

// --- x <= y + c ---

pub struct LeqOffsetProp {
    x: VarId,
    y: VarId,
    c: i64,
    scope: Vec<VarId>,
}

impl LeqOffsetProp {
    pub fn new(x: VarId, y: VarId, c: i64) -> LeqOffsetProp {
        let scope = if x == y { vec![x] } else { vec![x, y] };
        LeqOffsetProp { x, y, c, scope }
    }
}

impl Propagator for LeqOffsetProp {
    fn scope(&self) -> &[VarId] {
        &self.scope
    }

    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult {
        let cause = crate::kernel::Cause::Constraint(me);
        if self.x == self.y {
            if self.c < 0 {
                return check(vars.update_lower(self.x, vars.ub(self.x) + 1, cause));
            }
            return Ok(());
        }
        to_local_fixpoint(|| {
            let mut changed = false;
            let ub_x = vars.ub(self.y) + self.c;
            if vars.ub(self.x) > ub_x {
                check(vars.update_upper(self.x, ub_x, cause))?;
                changed = true;
            }
            let lb_y = vars.lb(self.x) - self.c;
            if vars.lb(self.y) < lb_y {
                check(vars.update_lower(self.y, lb_y, cause))?;
                changed = true;
            }
            Ok(changed)
        })
    }

    fn explain_event(&self, event: &Event, _vars: &Vars, rules: &mut RuleSet) {
        if event.var == self.x {
            // x's upper bound came from y's upper bound
            rules.add_ub(self.y);
        } else {
            // y's lower bound came from x's lower bound
            rules.add_lb(self.x);
        }
    }

    fn explain_failure(&self, var: VarId, _vars: &Vars, rules: &mut RuleSet) {
        if var == self.x {
            rules.add_ub(self.y);
        } else {
            rules.add_lb(self.x);
        }
    }
}

// --- sum(a_i * v_i) <= b, optionally also >= b ---

pub struct LinearProp {
    coeffs: Vec<i64>,
    scope: Vec<VarId>,
    bound: i64,
    equality: bool,
}

impl LinearProp {
    pub fn new(coeffs: Vec<i64>, vars: Vec<VarId>, bound: i64, equality: bool) -> LinearProp {
        LinearProp {
            coeffs,
            scope: vars,
            bound,
            equality,
        }
    }

    /// One bounds-consistency pass for sum(a_i * v_i) <= b over the signed
    /// coefficients given.
    fn pass_leq(
        &self,
        coeffs: &[i64],
        bound: i64,
        me: ConstraintId,
        vars: &mut Vars,
    ) -> Result<bool, FilterFailed> {
        let cause = crate::kernel::Cause::Constraint(me);
        let term_min = |a: i64, v: VarId, vars: &Vars| {
            if a > 0 {
                a.saturating_mul(vars.lb(v))
            } else {
                a.saturating_mul(vars.ub(v))
            }
        };
        let mut changed = false;
        let min_total: i64 = self
            .scope
            .iter()
            .zip(coeffs)
            .map(|(&v, &a)| term_min(a, v, vars))
            .fold(0i64, i64::saturating_add);
        for (i, &v) in self.scope.iter().enumerate() {
            let a = coeffs[i];
            let slack = bound.saturating_sub(min_total.saturating_sub(term_min(a, v, vars)));
            if a > 0 {
                let limit = slack.div_euclid(a);
                if vars.ub(v) > limit {
                    check(vars.update_upper(v, limit, cause))?;
                    changed = true;
                }
            } else {
                // a*v <= slack with a < 0: v >= ceil(slack / a)
                let limit = -slack.div_euclid(-a);
                if vars.lb(v) < limit {
                    check(vars.update_lower(v, limit, cause))?;
                    changed = true;
                }
            }
        }
        Ok(changed)
    }
}

impl Propagator for LinearProp {
    fn scope(&self) -> &[VarId] {
        &self.scope
    }

    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult {
        let neg: Vec<i64>;
        let (flip_coeffs, flip_bound) = if self.equality {
            neg = self.coeffs.iter().map(|a| -a).collect();
            (Some(&neg), -self.bound)
        } else {
            (None, 0)
        };
        to_local_fixpoint(|| {
            let mut changed = self.pass_leq(&self.coeffs, self.bound, me, vars)?;
            if let Some(fc) = flip_coeffs {
                changed |= self.pass_leq(fc, flip_bound, me, vars)?;
            }
            Ok(changed)
        })
    }

    fn explain_event(&self, event: &Event, vars: &Vars, rules: &mut RuleSet) {
        self.explain_failure(event.var, vars, rules);
    }

    fn explain_failure(&self, var: VarId, _vars: &Vars, rules: &mut RuleSet) {
        // a bound on one term comes from the extreme bounds of all others
        for (i, &v) in self.scope.iter().enumerate() {
            if v == var {
                continue;
            }
            if self.equality {
                rules.add_lb(v);
                rules.add_ub(v);
            } else if self.coeffs[i] > 0 {
                rules.add_lb(v);
            } else {
                rules.add_ub(v);
            }
        }
    }
}

// --- alldifferent, forward checking ---

pub struct AllDifferentProp {
    scope: Vec<VarId>,
}

impl Propagator for AllDifferentProp {
    fn scope(&self) -> &[VarId] {
        &self.scope
    }

    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult {
        let cause = crate::kernel::Cause::Constraint(me);
        to_local_fixpoint(|| {
            let mut changed = false;
            for i in 0..self.scope.len() {
                let v = self.scope[i];
                if !vars.is_assigned(v) {
                    continue;
                }
                let a = vars.value(v);
                for &w in &self.scope {
                    if w != v && vars.contains(w, a) {
                        check(vars.remove_value(w, a, cause))?;
                        changed = true;
                    }
                }
            }
            Ok(changed)
        })
    }

    fn explain_event(&self, event: &Event, vars: &Vars, rules: &mut RuleSet) {
        self.explain_failure(event.var, vars, rules);
    }

    fn explain_failure(&self, var: VarId, vars: &Vars, rules: &mut RuleSet) {
        // the trigger was some other scope variable being assigned
        for &w in &self.scope {
            if w != var && vars.is_assigned(w) {
                rules.add_lb(w);
                rules.add_ub(w);
            }
        }
    }
}

// --- binary negative table ---

pub struct TableNegProp {
    x: VarId,
    y: VarId,
    forbidden: HashSet<(i64, i64)>,
    scope: Vec<VarId>,
}

impl TableNegProp {
    pub fn new(x: VarId, y: VarId, forbidden: Vec<(i64, i64)>) -> TableNegProp {
        TableNegProp {
            x,
            y,
            forbidden: forbidden.into_iter().collect(),
            scope: vec![x, y],
        }
    }

    fn supported(&self, vars: &Vars, first: bool, a: i64) -> bool {
        let other = if first { self.y } else { self.x };
        vars.domain_values(other).into_iter().any(|b| {
            let pair = if first { (a, b) } else { (b, a) };
            !self.forbidden.contains(&pair)
        })
    }
}

impl Propagator for TableNegProp {
    fn scope(&self) -> &[VarId] {
        &self.scope
    }

    fn filter(&self, me: ConstraintId, vars: &mut Vars) -> FilterResult {
        let cause = crate::kernel::Cause::Constraint(me);
        to_local_fixpoint(|| {
            let mut changed = false;
            for a in vars.domain_values(self.x) {
                if !self.supported(vars, true, a) {
                    check(vars.remove_value(self.x, a, cause))?;
                    changed = true;
                }
            }
            for b in vars.domain_values(self.y) {
                if !self.supported(vars, false, b) {
                    check(vars.remove_value(self.y, b, cause))?;
                    changed = true;
                }
            }
            Ok(changed)
        })
    }

    fn explain_event(&self, event: &Event, _vars: &Vars, rules: &mut RuleSet) {
        let other = if event.var == self.x { self.y } else { self.x };
        rules.add_dom(other);
    }

    fn explain_failure(&self, var: VarId, _vars: &Vars, rules: &mut RuleSet) {
        let other = if var == self.x { self.y } else { self.x };
        rules.add_dom(other);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eser::{DOM, LB, UB};
    use crate::kernel::{Cause, EventKind};
    use crate::propagation::{propagate, PropagationOutcome, Scheduler, Seed};

    fn run(specs: Vec<ConstraintSpec>, domains: Vec<Vec<i64>>) -> (Vars, PropagationOutcome) {
        let mut vars = Vars::new();
        for d in &domains {
            vars.add_var(d);
        }
        let props = build_propagators(&specs);
        let mut sched = Scheduler::new(vars.var_count(), &props);
        let out = propagate(&mut vars, &props, &mut sched, Seed::AllPropagators);
        (vars, out)
    }

    fn rng(lo: i64, hi: i64) -> Vec<i64> {
        (lo..=hi).collect()
    }

    #[test]
    fn leq_offset_tightens_both_sides() {
        let (vars, out) = run(
            vec![ConstraintSpec::LeqOffset {
                x: VarId(0),
                y: VarId(1),
                c: 0,
            }],
            vec![rng(3, 9), rng(1, 5)],
        );
        assert_eq!(out, PropagationOutcome::Fixpoint);
        assert_eq!(vars.domain_values(VarId(0)), rng(3, 5));
        assert_eq!(vars.domain_values(VarId(1)), rng(3, 5));
    }

    #[test]
    fn neq_offset_prunes_on_assignment() {
        let (vars, out) = run(
            vec![ConstraintSpec::NeqOffset {
                x: VarId(0),
                y: VarId(1),
                c: 0,
            }],
            vec![vec![4], rng(2, 6)],
        );
        assert_eq!(out, PropagationOutcome::Fixpoint);
        assert_eq!(vars.domain_values(VarId(1)), vec![2, 3, 5, 6]);
    }

    #[test]
    fn linear_leq_bounds() {
        let (vars, out) = run(
            vec![ConstraintSpec::LinearLeq {
                coeffs: vec![2, 3],
                vars: vec![VarId(0), VarId(1)],
                bound: 12,
            }],
            vec![rng(1, 5), rng(1, 5)],
        );
        assert_eq!(out, PropagationOutcome::Fixpoint);
        assert_eq!(vars.domain_values(VarId(0)), rng(1, 4));
        assert_eq!(vars.domain_values(VarId(1)), rng(1, 3));
    }

    #[test]
    fn alldifferent_forward_checks_assignments() {
        let (vars, out) = run(
            vec![ConstraintSpec::AllDifferent {
                vars: vec![VarId(0), VarId(1), VarId(2)],
            }],
            vec![vec![2], rng(1, 4), rng(2, 5)],
        );
        assert_eq!(out, PropagationOutcome::Fixpoint);
        assert_eq!(vars.domain_values(VarId(1)), vec![1, 3, 4]);
        assert_eq!(vars.domain_values(VarId(2)), vec![3, 4, 5]);
    }

    #[test]
    fn table_neg_enforces_arc_consistency() {
        // x in 1..2, y in 1..2, forbid everything with x=1
        let (vars, out) = run(
            vec![ConstraintSpec::TableNeg {
                x: VarId(0),
                y: VarId(1),
                forbidden: vec![(1, 1), (1, 2)],
            }],
            vec![rng(1, 2), rng(1, 2)],
        );
        assert_eq!(out, PropagationOutcome::Fixpoint);
        assert_eq!(vars.domain_values(VarId(0)), vec![2]);
        assert_eq!(vars.domain_values(VarId(1)), vec![1, 2]);
    }

    #[test]
    fn linear_eq_filters_both_directions() {
        // x - y = 1 over 1..5 -> x in 2..5, y in 1..4
        let (vars, out) = run(
            vec![ConstraintSpec::LinearEq {
                coeffs: vec![1, -1],
                vars: vec![VarId(0), VarId(1)],
                bound: 1,
            }],
            vec![rng(1, 5), rng(1, 5)],
        );
        assert_eq!(out, PropagationOutcome::Fixpoint);
        assert_eq!(vars.domain_values(VarId(0)), rng(2, 5));
        assert_eq!(vars.domain_values(VarId(1)), rng(1, 4));
    }

    /// Brute force: a value is supported iff some assignment of the full
    /// scope containing it satisfies the constraint.
    fn supported_values(
        spec: &ConstraintSpec,
        domains: &[Vec<i64>],
        var: usize,
    ) -> Vec<i64> {
        let scope = spec.scope();
        let mut out = Vec::new();
        'values: for &cand in &domains[var] {
            let mut stack = vec![Vec::<i64>::new()];
            while let Some(partial) = stack.pop() {
                if partial.len() == scope.len() {
                    let mut assignment = vec![0i64; domains.len()];
                    for (s, &v) in scope.iter().enumerate() {
                        assignment[v.index()] = partial[s];
                    }
                    if spec.is_satisfied(&assignment) {
                        out.push(cand);
                        continue 'values;
                    }
                    continue;
                }
                let pos = partial.len();
                let v = scope[pos];
                if v.index() == var {
                    let mut next = partial.clone();
                    next.push(cand);
                    stack.push(next);
                } else {
                    for &x in &domains[v.index()] {
                        let mut next = partial.clone();
                        next.push(x);
                        stack.push(next);
                    }
                }
            }
        }
        out
    }

    /// Filter soundness: no supported value is ever removed.
    #[test]
    fn filters_never_remove_supported_values() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut r = StdRng::seed_from_u64(0xF17);
        for round in 0..300 {
            let nvars = 3;
            let domains: Vec<Vec<i64>> = (0..nvars)
                .map(|_| {
                    let lo = r.gen_range(-2..3);
                    let mut d: Vec<i64> =
                        (lo..lo + r.gen_range(2..6)).filter(|_| r.gen_bool(0.8)).collect();
                    if d.is_empty() {
                        d.push(lo);
                    }
                    d
                })
                .collect();
            let spec = match round % 6 {
                0 => ConstraintSpec::EqOffset {
                    x: VarId(0),
                    y: VarId(1),
                    c: r.gen_range(-2..3),
                },
                1 => ConstraintSpec::NeqOffset {
                    x: VarId(0),
                    y: VarId(1),
                    c: r.gen_range(-2..3),
                },
                2 => ConstraintSpec::LeqOffset {
                    x: VarId(0),
                    y: VarId(1),
                    c: r.gen_range(-2..3),
                },
                3 => ConstraintSpec::LinearLeq {
                    coeffs: vec![r.gen_range(-3..3).max(1), -r.gen_range(1..4), 2],
                    vars: vec![VarId(0), VarId(1), VarId(2)],
                    bound: r.gen_range(-4..10),
                },
                4 => ConstraintSpec::AllDifferent {
                    vars: vec![VarId(0), VarId(1), VarId(2)],
                },
                _ => {
                    let forbidden = (0..r.gen_range(1..8))
                        .map(|_| (r.gen_range(-2..6), r.gen_range(-2..6)))
                        .collect();
                    ConstraintSpec::TableNeg {
                        x: VarId(0),
                        y: VarId(1),
                        forbidden,
                    }
                }
            };
            let (vars, out) = run(vec![spec.clone()], domains.clone());
            for v in 0..nvars {
                let supported = supported_values(&spec, &domains, v);
                let left = vars.domain_values(VarId(v as u32));
                match out {
                    PropagationOutcome::Failure => {
                        // a failure is only sound if some variable in the
                        // scope has no supported value at all
                        let any_wiped = (0..nvars).any(|w| {
                            spec.scope().contains(&VarId(w as u32))
                                && supported_values(&spec, &domains, w).is_empty()
                        });
                        assert!(any_wiped, "unsound failure for {spec:?}");
                        break;
                    }
                    PropagationOutcome::Fixpoint => {
                        for s in &supported {
                            assert!(
                                left.contains(s),
                                "{spec:?} removed supported value {s} of v{v}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn eschema_leq_upper_event_selects_other_upper() {
        let p = LeqOffsetProp::new(VarId(0), VarId(1), 2);
        let vars = {
            let mut v = Vars::new();
            v.add_var(&rng(1, 5));
            v.add_var(&rng(1, 5));
            v
        };
        let mut rules = RuleSet::new();
        p.explain_event(
            &Event {
                var: VarId(0),
                cause: Cause::Constraint(ConstraintId(0)),
                kind: EventKind::UpperBound { old: 5, new: 4 },
            },
            &vars,
            &mut rules,
        );
        assert_eq!(rules.entry(VarId(1)).unwrap().mask, UB);
        assert!(rules.entry(VarId(0)).is_none());
    }

    #[test]
    fn eschema_neq_removal_selects_other_bounds() {
        let p = NeqOffsetProp::new(VarId(0), VarId(1), 0);
        let vars = {
            let mut v = Vars::new();
            v.add_var(&rng(1, 5));
            v.add_var(&rng(1, 5));
            v
        };
        let mut rules = RuleSet::new();
        p.explain_event(
            &Event {
                var: VarId(0),
                cause: Cause::Constraint(ConstraintId(0)),
                kind: EventKind::Removal { value: 3 },
            },
            &vars,
            &mut rules,
        );
        assert_eq!(rules.entry(VarId(1)).unwrap().mask, LB | UB);
    }

    #[test]
    fn eschema_linear_upper_event_selects_signed_bounds() {
        let p = LinearProp::new(vec![2, 3, -1], vec![VarId(0), VarId(1), VarId(2)], 10, false);
        let vars = {
            let mut v = Vars::new();
            for _ in 0..3 {
                v.add_var(&rng(1, 5));
            }
            v
        };
        let mut rules = RuleSet::new();
        p.explain_event(
            &Event {
                var: VarId(0),
                cause: Cause::Constraint(ConstraintId(0)),
                kind: EventKind::UpperBound { old: 5, new: 3 },
            },
            &vars,
            &mut rules,
        );
        assert!(rules.entry(VarId(0)).is_none());
        assert_eq!(rules.entry(VarId(1)).unwrap().mask, LB);
        assert_eq!(rules.entry(VarId(2)).unwrap().mask, UB);
    }

    #[test]
    fn eschema_alldifferent_selects_assigned_peer() {
        let p = AllDifferentProp {
            scope: vec![VarId(0), VarId(1), VarId(2)],
        };
        let mut vars = Vars::new();
        vars.add_var(&[2]); // assigned
        vars.add_var(&rng(1, 4));
        vars.add_var(&rng(1, 4));
        let mut rules = RuleSet::new();
        p.explain_event(
            &Event {
                var: VarId(1),
                cause: Cause::Constraint(ConstraintId(0)),
                kind: EventKind::Removal { value: 2 },
            },
            &vars,
            &mut rules,
        );
        assert_eq!(rules.entry(VarId(0)).unwrap().mask, LB | UB);
        assert!(rules.entry(VarId(2)).is_none());
    }

    #[test]
    fn default_schema_covers_whole_scope() {
        use crate::propagation::default_schema;
        let mut rules = RuleSet::new();
        default_schema(&[VarId(0), VarId(1), VarId(2)], &mut rules);
        for v in 0..3 {
            assert_eq!(rules.entry(VarId(v)).unwrap().mask, DOM);
        }
        let mut rules = RuleSet::new();
        default_schema(&[VarId(7)], &mut rules);
        assert_eq!(rules.entry(VarId(7)).unwrap().mask, DOM);
        assert!(rules.entry(VarId(0)).is_none());
    }

    #[test]
    fn validation_rejects_malformed_specs() {
        let bad = ConstraintSpec::LinearLeq {
            coeffs: vec![0, 1],
            vars: vec![VarId(0), VarId(1)],
            bound: 3,
        };
        assert_eq!(bad.validate(0, 2), Err(SpecError::ZeroCoefficient(0)));
        let bad = ConstraintSpec::AllDifferent {
            vars: vec![VarId(0)],
        };
        assert_eq!(bad.validate(1, 2), Err(SpecError::TooFewVars(1)));
        let bad = ConstraintSpec::NeqOffset {
            x: VarId(0),
            y: VarId(5),
            c: 0,
        };
        assert_eq!(bad.validate(2, 2), Err(SpecError::VarOutOfRange(2, 5)));
    }
}
