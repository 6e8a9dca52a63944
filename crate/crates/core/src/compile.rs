//! Compilation of preference expressions into margin constraints.
//!
//! A dyadic statement `φ ⊙ ψ` becomes one constraint per pair of models
//! `(m, m′) ∈ M(φ) × M(ψ)`, each demanding `U(m) − U(m′) ≥ margin`.
//! Strict and monadic statements use margin 1, weak and indifference
//! statements margin 0. Indifference adds the opposed constraint for every
//! pair. A monadic statement compares each model against the empty
//! assignment, whose utility is identically zero.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formula::{Polarity, PreferenceExpression, Relation, Statement, StatementKind};
use crate::schema::{PartialAssignment, Schema};

pub const DEFAULT_MODEL_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Strict,
    Weak,
    Equiv,
    Good,
    Bad,
}

impl ConstraintKind {
    pub fn is_strict(self) -> bool {
        matches!(
            self,
            ConstraintKind::Strict | ConstraintKind::Good | ConstraintKind::Bad
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub lhs: PartialAssignment,
    /// Empty for constraints compiled from `good:` statements.
    pub rhs: PartialAssignment,
    pub margin: f64,
    pub kind: ConstraintKind,
    /// Index of the originating statement in the expression.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatementStats {
    pub statement: usize,
    pub line: usize,
    pub constraints: usize,
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    pub schema: Arc<Schema>,
    pub stats: Vec<StatementStats>,
}

impl ConstraintSet {
    pub fn empty(schema: Arc<Schema>) -> Self {
        ConstraintSet {
            constraints: Vec::new(),
            schema,
            stats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Structured-text dump with constraint sides rendered by name.
    pub fn debug_dump(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            lhs: std::collections::BTreeMap<String, String>,
            rhs: std::collections::BTreeMap<String, String>,
            margin: f64,
            kind: ConstraintKind,
            statement: usize,
            line: usize,
        }
        let rows: Vec<Row> = self
            .constraints
            .iter()
            .map(|c| Row {
                lhs: c.lhs.to_names(&self.schema),
                rhs: c.rhs.to_names(&self.schema),
                margin: c.margin,
                kind: c.kind,
                statement: c.source,
                line: self.stats.get(c.source).map(|s| s.line).unwrap_or(0),
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("rows serialize")
    }
}

fn models_for(
    stmt: &Statement,
    formula: &crate::formula::Formula,
    schema: &Schema,
    cap: usize,
) -> Result<Vec<PartialAssignment>> {
    let resolved = formula.resolve(schema).map_err(|e| Error::Statement {
        line: stmt.line,
        message: e.to_string(),
    })?;
    resolved
        .models(schema, cap)
        .map_err(|cap| Error::ModelCapExceeded {
            line: stmt.line,
            size: cap as u128 + 1,
            cap,
        })
}

/// Compiles one statement; `source` is recorded on each constraint.
pub fn compile_statement(
    stmt: &Statement,
    source: usize,
    schema: &Schema,
    model_cap: usize,
) -> Result<Vec<Constraint>> {
    let empty = PartialAssignment::empty(schema.len());
    match &stmt.kind {
        StatementKind::Monadic { formula, polarity } => {
            let models = models_for(stmt, formula, schema, model_cap)?;
            Ok(models
                .into_iter()
                .map(|m| match polarity {
                    Polarity::Good => Constraint {
                        lhs: m,
                        rhs: empty.clone(),
                        margin: 1.0,
                        kind: ConstraintKind::Good,
                        source,
                    },
                    Polarity::Bad => Constraint {
                        lhs: empty.clone(),
                        rhs: m,
                        margin: 1.0,
                        kind: ConstraintKind::Bad,
                        source,
                    },
                })
                .collect())
        }
        StatementKind::Dyadic { lhs, relation, rhs } => {
            let left = models_for(stmt, lhs, schema, model_cap)?;
            let right = models_for(stmt, rhs, schema, model_cap)?;
            let size = left.len() as u128 * right.len() as u128;
            if size > model_cap as u128 {
                return Err(Error::ModelCapExceeded {
                    line: stmt.line,
                    size,
                    cap: model_cap,
                });
            }
            if *relation == Relation::Strict {
                if let Some(shared) = left.iter().find(|m| right.contains(m)) {
                    return Err(Error::SelfContradictory {
                        line: stmt.line,
                        model: shared.display(schema).to_string(),
                    });
                }
            }
            let (margin, kind) = match relation {
                Relation::Strict => (1.0, ConstraintKind::Strict),
                Relation::Weak => (0.0, ConstraintKind::Weak),
                Relation::Equiv => (0.0, ConstraintKind::Equiv),
            };
            let per_pair = if *relation == Relation::Equiv { 2 } else { 1 };
            let mut out = Vec::with_capacity(left.len() * right.len() * per_pair);
            for m in &left {
                for m2 in &right {
                    out.push(Constraint {
                        lhs: m.clone(),
                        rhs: m2.clone(),
                        margin,
                        kind,
                        source,
                    });
                    if *relation == Relation::Equiv {
                        out.push(Constraint {
                            lhs: m2.clone(),
                            rhs: m.clone(),
                            margin,
                            kind,
                            source,
                        });
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Compiles every statement of `e`, preserving statement order.
pub fn compile_expression(
    e: &PreferenceExpression,
    schema: Arc<Schema>,
    model_cap: usize,
) -> Result<ConstraintSet> {
    let compiled: Vec<Vec<Constraint>> = e
        .statements
        .par_iter()
        .enumerate()
        .map(|(i, s)| compile_statement(s, i, &schema, model_cap))
        .collect::<Result<_>>()?;
    let mut constraints = Vec::with_capacity(compiled.iter().map(Vec::len).sum());
    let mut stats = Vec::with_capacity(compiled.len());
    for (i, group) in compiled.into_iter().enumerate() {
        stats.push(StatementStats {
            statement: i,
            line: e.statements[i].line,
            constraints: group.len(),
        });
        constraints.extend(group);
    }
    Ok(ConstraintSet {
        constraints,
        schema,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_expression;

    fn lits(schema: &Schema, l: &[i32]) -> PartialAssignment {
        PartialAssignment::from_literals(schema, l).unwrap()
    }

    fn compile(src: &str, n: usize) -> Result<ConstraintSet> {
        let schema = Arc::new(Schema::boolean(n));
        compile_expression(&parse_expression(src).unwrap(), schema, DEFAULT_MODEL_CAP)
    }

    #[test]
    fn disjunction_over_negation() {
        let cs = compile("prefer (X1 or X2) over (not X3)", 4).unwrap();
        let s = &cs.schema;
        let expected = [lits(s, &[1, 2]), lits(s, &[1, -2]), lits(s, &[-1, 2])];
        assert_eq!(cs.len(), 3);
        for (c, lhs) in cs.constraints.iter().zip(&expected) {
            assert_eq!(&c.lhs, lhs);
            assert_eq!(c.rhs, lits(s, &[-3]));
            assert_eq!(c.margin, 1.0);
        }
    }

    #[test]
    fn three_statement_example_has_five_constraints() {
        let cs = compile(
            "prefer (X1 or X2) over (not X3)\nprefer X3 over X4\nprefer X1 over X2",
            4,
        )
        .unwrap();
        assert_eq!(cs.len(), 5);
        let counts: Vec<usize> = cs.stats.iter().map(|s| s.constraints).collect();
        assert_eq!(counts, vec![3, 1, 1]);
    }

    #[test]
    fn monadic_statements() {
        let cs = compile("good: X1\nbad: X2 or X3", 3).unwrap();
        let s = &cs.schema;
        assert_eq!(cs.len(), 4);
        assert_eq!(cs.constraints[0].lhs, lits(s, &[1]));
        assert!(cs.constraints[0].rhs.is_empty());
        assert_eq!(cs.constraints[0].margin, 1.0);
        for c in &cs.constraints[1..] {
            assert!(c.lhs.is_empty());
            assert_eq!(c.margin, 1.0);
            assert_eq!(c.kind, ConstraintKind::Bad);
        }
    }

    #[test]
    fn weak_and_equiv_margins() {
        let cs = compile("weakly_prefer X1 over X2\nindifferent X1 or X2, X3", 3).unwrap();
        assert_eq!(cs.len(), 1 + 2 * 3);
        assert!(cs.constraints.iter().all(|c| c.margin == 0.0));
        // Opposed pairs for indifference.
        assert_eq!(cs.constraints[1].lhs, cs.constraints[2].rhs);
        assert_eq!(cs.constraints[1].rhs, cs.constraints[2].lhs);
    }

    #[test]
    fn strict_self_preference_is_rejected() {
        let err = compile("prefer X1 over X1", 2).unwrap_err();
        assert!(matches!(err, Error::SelfContradictory { line: 1, .. }));
        // Weak and indifferent self-comparisons are legal.
        assert_eq!(compile("indifferent X1, X1", 2).unwrap().len(), 2);
        assert_eq!(compile("weakly_prefer X1 over X1", 2).unwrap().len(), 1);
    }

    #[test]
    fn cap_names_statement_and_size() {
        let schema = Arc::new(Schema::boolean(6));
        let e = parse_expression("prefer X1 over X2\nprefer X1 or X2 or X3 over X4 or X5 or X6")
            .unwrap();
        let err = compile_expression(&e, schema, 40).unwrap_err();
        match err {
            Error::ModelCapExceeded { line, size, cap } => {
                assert_eq!((line, size, cap), (2, 49, 40));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_atoms_name_the_line() {
        let err = compile("prefer X1 over X2\nprefer X9 over X1", 2).unwrap_err();
        assert!(matches!(err, Error::Statement { line: 2, .. }), "{err}");
    }

    #[test]
    fn debug_dump_is_json() {
        let cs = compile("good: X1", 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cs.debug_dump()).unwrap();
        assert_eq!(v[0]["lhs"]["X1"], "true");
        assert_eq!(v[0]["line"], 1);
    }
}
