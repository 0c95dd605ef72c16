//! The model AST: variable declarations, constraint statements and the
//! solve goal. `Display` renders the canonical model-file syntax, which the
//! parser reads back.

use std::fmt;

use crate::constraints::{ConstraintSpec, SpecError};
use crate::kernel::VarId;
use crate::search::{Solver, SolveError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainSpec {
    Range(i64, i64),
    Set(Vec<i64>),
}

impl DomainSpec {
    /// The domain as a sorted, duplicate-free value list.
    pub fn values(&self) -> Vec<i64> {
        match self {
            DomainSpec::Range(lo, hi) => (*lo..=*hi).collect(),
            DomainSpec::Set(vs) => {
                let mut out = vs.clone();
                out.sort_unstable();
                out.dedup();
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub domain: DomainSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveGoal {
    Satisfy,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub vars: Vec<VarDecl>,
    pub constraints: Vec<ConstraintSpec>,
    pub goal: SolveGoal,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("variable {0} has an empty domain")]
    EmptyDomain(String),
    #[error("variable {0} has a domain wider than {1} values")]
    DomainTooWide(String, usize),
    #[error(transparent)]
    BadConstraint(#[from] SpecError),
}

/// Spans wider than this would make the dense value index pathological.
const MAX_DOMAIN_WIDTH: usize = 1 << 22;

impl Model {
    pub fn var_names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .map(|i| VarId(i as u32))
    }

    pub fn domains(&self) -> Result<Vec<Vec<i64>>, ModelError> {
        let mut out = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            let values = v.domain.values();
            if values.is_empty() {
                return Err(ModelError::EmptyDomain(v.name.clone()));
            }
            let width = (values[values.len() - 1] - values[0] + 1) as usize;
            if width > MAX_DOMAIN_WIDTH {
                return Err(ModelError::DomainTooWide(v.name.clone(), MAX_DOMAIN_WIDTH));
            }
            out.push(values);
        }
        Ok(out)
    }

    /// Builds a search instance for this model.
    pub fn solver(&self) -> Result<Solver, BuildError> {
        let domains = self.domains()?;
        Ok(Solver::new(&domains, self.constraints.clone())?)
    }

    /// Checks a full assignment (by declaration order) against every
    /// constraint, independently of any propagator.
    pub fn is_solution(&self, assignment: &[i64]) -> bool {
        assignment.len() == self.vars.len()
            && self
                .vars
                .iter()
                .enumerate()
                .all(|(i, v)| v.domain.values().contains(&assignment[i]))
            && self.constraints.iter().all(|c| c.is_satisfied(assignment))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.var_names();
        for v in &self.vars {
            match &v.domain {
                DomainSpec::Range(lo, hi) => writeln!(f, "var {} in {}..{};", v.name, lo, hi)?,
                DomainSpec::Set(vs) => {
                    write!(f, "var {} in {{", v.name)?;
                    for (i, x) in vs.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{x}")?;
                    }
                    writeln!(f, "}};")?;
                }
            }
        }
        for c in &self.constraints {
            write!(f, "constraint ")?;
            c.fmt_with_names(f, &names)?;
            writeln!(f, ";")?;
        }
        match self.goal {
            SolveGoal::Satisfy => writeln!(f, "solve satisfy;"),
            SolveGoal::All => writeln!(f, "solve all;"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn print_covers_every_construct() {
        let model = Model {
            vars: vec![
                VarDecl {
                    name: "x".into(),
                    domain: DomainSpec::Range(1, 3),
                },
                VarDecl {
                    name: "y".into(),
                    domain: DomainSpec::Set(vec![1, 3, 5]),
                },
            ],
            constraints: vec![
                ConstraintSpec::NeqOffset {
                    x: VarId(0),
                    y: VarId(1),
                    c: -2,
                },
                ConstraintSpec::LinearLeq {
                    coeffs: vec![2, 3],
                    vars: vec![VarId(0), VarId(1)],
                    bound: 12,
                },
            ],
            goal: SolveGoal::Satisfy,
        };
        let text = model.to_string();
        assert_eq!(
            text,
            "var x in 1..3;\nvar y in {1,3,5};\nconstraint neq(x,y,-2);\nconstraint linear([2,3],[x,y],\"<=\",12);\nsolve satisfy;\n"
        );
    }

    #[test]
    fn rejects_empty_domains() {
        let model = Model {
            vars: vec![VarDecl {
                name: "x".into(),
                domain: DomainSpec::Range(3, 1),
            }],
            constraints: vec![],
            goal: SolveGoal::Satisfy,
        };
        assert!(matches!(model.domains(), Err(ModelError::EmptyDomain(_))));
    }
}
