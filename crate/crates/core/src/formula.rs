//! The statement language: formulas over attribute atoms, dyadic and
//! monadic statements, and model enumeration.
//!
//! ```text
//! prefer (X1 or X2) over (not X3)
//! weakly_prefer decade=90s over decade=80s
//! indifferent X1, X2
//! good: decade=90s and genre_art=true
//! bad: !X4
//! ```
//!
//! Parsing is schema-free; atoms are resolved against a [`Schema`] when a
//! formula is enumerated or compiled.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{PartialAssignment, Schema, FALSE_VALUE, TRUE_VALUE};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AtomValue {
    /// Bare `X`, sugar for `X=true`.
    True,
    /// `!X`, sugar for `X=false`.
    False,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub attribute: String,
    pub value: AtomValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom(Atom),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Strict,
    Weak,
    Equiv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StatementKind {
    Dyadic {
        lhs: Formula,
        relation: Relation,
        rhs: Formula,
    },
    Monadic {
        formula: Formula,
        polarity: Polarity,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Statement {
    /// 1-based source line; 0 for statements built in code.
    pub line: usize,
    pub kind: StatementKind,
}

impl Statement {
    pub fn new(kind: StatementKind) -> Self {
        Statement { line: 0, kind }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreferenceExpression {
    pub statements: Vec<Statement>,
}

impl PreferenceExpression {
    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Printing

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            AtomValue::True => f.write_str(&self.attribute),
            AtomValue::False => write!(f, "!{}", self.attribute),
            AtomValue::Named(v) => write!(f, "{}={}", self.attribute, v),
        }
    }
}

impl Formula {
    fn write_child(&self, f: &mut fmt::Formatter<'_>, parenthesize: bool) -> fmt::Result {
        if parenthesize {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Not(inner) => {
                f.write_str("not ")?;
                inner.write_child(f, matches!(**inner, Formula::And(_) | Formula::Or(_)))
            }
            Formula::And(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    p.write_child(f, matches!(p, Formula::And(_) | Formula::Or(_)))?;
                }
                Ok(())
            }
            Formula::Or(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" or ")?;
                    }
                    p.write_child(f, matches!(p, Formula::Or(_)))?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for StatementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatementKind::Dyadic { lhs, relation, rhs } => match relation {
                Relation::Strict => write!(f, "prefer {lhs} over {rhs}"),
                Relation::Weak => write!(f, "weakly_prefer {lhs} over {rhs}"),
                Relation::Equiv => write!(f, "indifferent {lhs}, {rhs}"),
            },
            StatementKind::Monadic { formula, polarity } => match polarity {
                Polarity::Good => write!(f, "good: {formula}"),
                Polarity::Bad => write!(f, "bad: {formula}"),
            },
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

impl fmt::Display for PreferenceExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lexing and parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    LParen,
    RParen,
    Bang,
    Eq,
    Comma,
    Colon,
}

const KEYWORDS: &[&str] = &[
    "prefer",
    "weakly_prefer",
    "indifferent",
    "over",
    "good",
    "bad",
    "and",
    "or",
    "not",
];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '-' | '\'')
}

fn lex(line_no: usize, text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '!' => Tok::Bang,
            '=' => Tok::Eq,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            c if is_word_char(c) => {
                let start = i;
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                out.push((Tok::Word(chars[start..i].iter().collect()), col));
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    line: line_no,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, col));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    line: usize,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        })
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.end_col)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w == kw)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.peek_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{kw}`"))
        }
    }

    fn statement(&mut self) -> Result<StatementKind> {
        let head = match self.peek() {
            Some(Tok::Word(w)) => w.clone(),
            _ => return self.err("expected a relation keyword"),
        };
        let kind = match head.as_str() {
            "prefer" | "weakly_prefer" => {
                self.pos += 1;
                let lhs = self.form()?;
                self.expect_keyword("over")?;
                let rhs = self.form()?;
                let relation = if head == "prefer" {
                    Relation::Strict
                } else {
                    Relation::Weak
                };
                StatementKind::Dyadic { lhs, relation, rhs }
            }
            "indifferent" => {
                self.pos += 1;
                let lhs = self.form()?;
                self.expect(Tok::Comma, "`,`")?;
                let rhs = self.form()?;
                StatementKind::Dyadic {
                    lhs,
                    relation: Relation::Equiv,
                    rhs,
                }
            }
            "good" | "bad" => {
                self.pos += 1;
                self.expect(Tok::Colon, "`:`")?;
                let formula = self.form()?;
                let polarity = if head == "good" {
                    Polarity::Good
                } else {
                    Polarity::Bad
                };
                StatementKind::Monadic { formula, polarity }
            }
            other => return self.err(format!("unknown relation keyword `{other}`")),
        };
        if self.pos < self.toks.len() {
            return self.err("unexpected trailing input");
        }
        Ok(kind)
    }

    fn form(&mut self) -> Result<Formula> {
        let mut parts = vec![self.disjunct()?];
        while self.peek_keyword("or") {
            self.pos += 1;
            parts.push(self.disjunct()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Formula::Or(parts)
        })
    }

    fn disjunct(&mut self) -> Result<Formula> {
        let mut parts = vec![self.conjunct()?];
        while self.peek_keyword("and") {
            self.pos += 1;
            parts.push(self.conjunct()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Formula::And(parts)
        })
    }

    fn conjunct(&mut self) -> Result<Formula> {
        if self.peek_keyword("not") {
            self.pos += 1;
            return Ok(Formula::Not(Box::new(self.conjunct()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.form()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(inner);
        }
        self.atom().map(Formula::Atom)
    }

    fn name(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Word(w)) if !KEYWORDS.contains(&w.as_str()) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            Some(Tok::Word(w)) => {
                let msg = format!("`{w}` is a keyword, expected an attribute name");
                self.err(msg)
            }
            _ => self.err("expected an attribute name"),
        }
    }

    fn atom(&mut self) -> Result<Atom> {
        if self.peek() == Some(&Tok::Bang) {
            self.pos += 1;
            let attribute = self.name()?;
            return Ok(Atom {
                attribute,
                value: AtomValue::False,
            });
        }
        let attribute = self.name()?;
        if self.peek() == Some(&Tok::Eq) {
            self.pos += 1;
            match self.bump() {
                Some(Tok::Word(v)) => Ok(Atom {
                    attribute,
                    value: AtomValue::Named(v),
                }),
                _ => {
                    self.pos -= 1;
                    self.err("expected a value after `=`")
                }
            }
        } else {
            Ok(Atom {
                attribute,
                value: AtomValue::True,
            })
        }
    }
}

fn parse_line(line: usize, text: &str) -> Result<StatementKind> {
    let toks = lex(line, text)?;
    let mut p = Parser {
        line,
        toks,
        pos: 0,
        end_col: text.chars().count() + 1,
    };
    p.statement()
}

/// Parses one statement per non-blank line; lines starting with `#` are
/// comments.
pub fn parse_expression(text: &str) -> Result<PreferenceExpression> {
    let mut statements = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let line = i + 1;
        statements.push(Statement {
            line,
            kind: parse_line(line, raw)?,
        });
    }
    Ok(PreferenceExpression { statements })
}

/// Parses a single formula, as accepted on either side of a statement.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let toks = lex(1, text)?;
    let mut p = Parser {
        line: 1,
        toks,
        pos: 0,
        end_col: text.chars().count() + 1,
    };
    let f = p.form()?;
    if p.pos < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Resolution and model enumeration

/// A formula whose atoms are resolved to `(attribute, value)` indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedFormula {
    Atom { attribute: usize, value: usize },
    Not(Box<ResolvedFormula>),
    And(Vec<ResolvedFormula>),
    Or(Vec<ResolvedFormula>),
}

impl Formula {
    pub fn resolve(&self, schema: &Schema) -> Result<ResolvedFormula> {
        Ok(match self {
            Formula::Atom(atom) => {
                let a = schema
                    .attribute_index(&atom.attribute)
                    .ok_or_else(|| Error::UnknownAttribute(atom.attribute.clone()))?;
                let attr = schema.attribute(a);
                let value_name = match &atom.value {
                    AtomValue::True | AtomValue::False if !attr.is_boolean() => {
                        return Err(Error::NotBoolean(atom.attribute.clone()))
                    }
                    AtomValue::True => TRUE_VALUE,
                    AtomValue::False => FALSE_VALUE,
                    AtomValue::Named(v) => v.as_str(),
                };
                let (attribute, value) = schema.resolve(&atom.attribute, value_name)?;
                ResolvedFormula::Atom { attribute, value }
            }
            Formula::Not(inner) => ResolvedFormula::Not(Box::new(inner.resolve(schema)?)),
            Formula::And(parts) => ResolvedFormula::And(
                parts
                    .iter()
                    .map(|p| p.resolve(schema))
                    .collect::<Result<_>>()?,
            ),
            Formula::Or(parts) => ResolvedFormula::Or(
                parts
                    .iter()
                    .map(|p| p.resolve(schema))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

impl ResolvedFormula {
    /// Attributes mentioned by the formula, in schema order.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<usize>) {
        match self {
            ResolvedFormula::Atom { attribute, .. } => {
                out.insert(*attribute);
            }
            ResolvedFormula::Not(inner) => inner.collect_variables(out),
            ResolvedFormula::And(parts) | ResolvedFormula::Or(parts) => {
                parts.iter().for_each(|p| p.collect_variables(out))
            }
        }
    }

    /// Three-valued evaluation; `None` when the result depends on an
    /// unbound attribute.
    pub fn eval_partial(&self, p: &PartialAssignment) -> Option<bool> {
        match self {
            ResolvedFormula::Atom { attribute, value } => p.get(*attribute).map(|v| v == *value),
            ResolvedFormula::Not(inner) => inner.eval_partial(p).map(|b| !b),
            ResolvedFormula::And(parts) => {
                let mut unknown = false;
                for part in parts {
                    match part.eval_partial(p) {
                        Some(false) => return Some(false),
                        None => unknown = true,
                        Some(true) => {}
                    }
                }
                if unknown {
                    None
                } else {
                    Some(true)
                }
            }
            ResolvedFormula::Or(parts) => {
                let mut unknown = false;
                for part in parts {
                    match part.eval_partial(p) {
                        Some(true) => return Some(true),
                        None => unknown = true,
                        Some(false) => {}
                    }
                }
                if unknown {
                    None
                } else {
                    Some(false)
                }
            }
        }
    }

    /// Models over exactly the mentioned attributes, in lexicographic
    /// (schema attribute, domain value) order. Fails once more than `cap`
    /// models are found.
    pub fn models(
        &self,
        schema: &Schema,
        cap: usize,
    ) -> std::result::Result<Vec<PartialAssignment>, usize> {
        let vars: Vec<usize> = self.variables().into_iter().collect();
        let mut out = Vec::new();
        let mut current = PartialAssignment::empty(schema.len());
        self.enumerate(schema, &vars, 0, &mut current, &mut out, cap)?;
        Ok(out)
    }

    fn enumerate(
        &self,
        schema: &Schema,
        vars: &[usize],
        depth: usize,
        current: &mut PartialAssignment,
        out: &mut Vec<PartialAssignment>,
        cap: usize,
    ) -> std::result::Result<(), usize> {
        if self.eval_partial(current) == Some(false) {
            return Ok(());
        }
        if depth == vars.len() {
            debug_assert_eq!(self.eval_partial(current), Some(true));
            if out.len() == cap {
                return Err(cap);
            }
            out.push(current.clone());
            return Ok(());
        }
        let a = vars[depth];
        for v in 0..schema.attribute(a).values.len() {
            current.bind(a, v).expect("slot is unbound");
            self.enumerate(schema, vars, depth + 1, current, out, cap)?;
            current.unbind(a);
        }
        Ok(())
    }
}

/// Enumerates the models of `f` over the attributes it mentions.
pub fn enumerate_models(
    f: &Formula,
    schema: &Schema,
    cap: usize,
) -> Result<Vec<PartialAssignment>> {
    f.resolve(schema)?
        .models(schema, cap)
        .map_err(|cap| Error::ModelCapExceeded {
            line: 0,
            size: cap as u128 + 1,
            cap,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lits(schema: &Schema, l: &[i32]) -> PartialAssignment {
        PartialAssignment::from_literals(schema, l).unwrap()
    }

    #[test]
    fn parses_strict_statement() {
        let e = parse_expression("prefer (X1 or X2) over (not X3)").unwrap();
        assert_eq!(e.len(), 1);
        match &e.statements[0].kind {
            StatementKind::Dyadic { lhs, relation, rhs } => {
                assert_eq!(*relation, Relation::Strict);
                assert!(matches!(lhs, Formula::Or(p) if p.len() == 2));
                assert!(matches!(rhs, Formula::Not(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_monadic_and_equiv() {
        let e = parse_expression(
            "# comment\n\ngood: decade=90s and genre_art=true\nindifferent A, A\nbad: !X4\n",
        )
        .unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e.statements[0].line, 3);
        assert!(matches!(
            e.statements[0].kind,
            StatementKind::Monadic {
                polarity: Polarity::Good,
                ..
            }
        ));
        match &e.statements[1].kind {
            StatementKind::Dyadic { lhs, relation, rhs } => {
                assert_eq!(*relation, Relation::Equiv);
                assert_eq!(lhs, rhs);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_expression("prefer X1 over X2\nprefer X1 X2").unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 11);
            }
            other => panic!("unexpected {other}"),
        }
        let err = parse_expression("love X1").unwrap_err();
        assert!(err.to_string().contains("unknown relation keyword `love`"));
        assert!(parse_expression("prefer (X1 over X2").is_err());
        assert!(parse_expression("good X1").is_err());
        assert!(parse_expression("prefer X1 over").is_err());
        assert!(parse_expression("prefer X1 over X2 X3").is_err());
        assert!(parse_expression("prefer and over X2").is_err());
    }

    #[test]
    fn printing_round_trips() {
        for src in [
            "prefer (X1 or X2) over not X3",
            "prefer (a or b) or c over a and (b or c)",
            "weakly_prefer not not a over (a and b) and c",
            "indifferent decade=90s, !X4",
            "good: not (a or b=x)",
        ] {
            let e = parse_expression(src).unwrap();
            let printed = e.to_string();
            let again = parse_expression(&printed).unwrap();
            assert_eq!(e.statements[0].kind, again.statements[0].kind, "{printed}");
        }
    }

    #[test]
    fn models_of_disjunction() {
        let s = Schema::boolean(4);
        let f = parse_formula("X1 or X2").unwrap();
        let models = enumerate_models(&f, &s, 100).unwrap();
        assert_eq!(
            models,
            vec![lits(&s, &[1, 2]), lits(&s, &[1, -2]), lits(&s, &[-1, 2])]
        );
    }

    #[test]
    fn models_of_negation_and_contradiction() {
        let s = Schema::boolean(4);
        let f = parse_formula("not X3").unwrap();
        assert_eq!(
            enumerate_models(&f, &s, 100).unwrap(),
            vec![lits(&s, &[-3])]
        );
        let f = parse_formula("X1 and not X1").unwrap();
        assert!(enumerate_models(&f, &s, 100).unwrap().is_empty());
    }

    #[test]
    fn model_cap_is_enforced() {
        let s = Schema::boolean(4);
        let f = parse_formula("X1 or X2 or X3 or X4").unwrap();
        assert_eq!(enumerate_models(&f, &s, 15).unwrap().len(), 15);
        assert!(matches!(
            enumerate_models(&f, &s, 14),
            Err(Error::ModelCapExceeded { cap: 14, .. })
        ));
    }

    #[test]
    fn bare_atoms_need_boolean_attributes() {
        let s = crate::schema::load_schema(
            r#"{"attributes":[{"name":"decade","values":["80s","90s"]},{"name":"X1"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            parse_formula("decade").unwrap().resolve(&s),
            Err(Error::NotBoolean(_))
        ));
        assert!(parse_formula("decade=90s and !X1")
            .unwrap()
            .resolve(&s)
            .is_ok());
        assert!(matches!(
            parse_formula("decade=70s").unwrap().resolve(&s),
            Err(Error::UnknownValue { .. })
        ));
        assert!(matches!(
            parse_formula("genre").unwrap().resolve(&s),
            Err(Error::UnknownAttribute(_))
        ));
    }
}
