//! Synthetic degree sweeps.
//!
//! A world is a random catalog with a hidden sparse monomial utility. Items
//! are split 50/50 by a hash of their id; statements come from the training
//! half and ordering error is scored on the held-out half. The "top k"
//! statements are the first k in generation order.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compile::{compile_expression, DEFAULT_MODEL_CAP};
use crate::error::{Error, Result};
use crate::formula::{
    Atom, AtomValue, Formula, Polarity, PreferenceExpression, Relation, Statement, StatementKind,
};
use crate::kernel::degree_params;
use crate::schema::{Alternative, Attribute, Catalog, PartialAssignment, Schema};
use crate::solver::{solve_dual, MarginMode, SolverConfig, UtilityModel};
use crate::utility::{ordering_error, RatedPairs, RatingScale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    /// Random monomials of size 1..=order over random values.
    Monomial,
    /// Products of ±1 value signs over random attribute sets of size exactly
    /// `order`; no lower-order component.
    Parity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementStyle {
    /// `prefer a over b` for two complete training items.
    Instance,
    /// `good:`/`bad:` for small conjunctions whose mean training utility
    /// clears a quantile threshold.
    Rule,
    /// Alternates instance and rule statements.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub attributes: usize,
    /// Per-attribute domain sizes; empty means all boolean.
    pub domain_sizes: Vec<usize>,
    pub truth_order: usize,
    pub truth_kind: TruthKind,
    pub monomials: usize,
    pub catalog_size: usize,
    pub rating_levels: usize,
    pub budgets: Vec<usize>,
    pub degrees: Vec<usize>,
    pub statement_style: StatementStyle,
    /// Probability of flipping each generated statement.
    pub noise_rate: f64,
    pub trials: usize,
    pub seed: u64,
    pub margin: MarginMode,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            attributes: 8,
            domain_sizes: Vec::new(),
            truth_order: 2,
            truth_kind: TruthKind::Monomial,
            monomials: 6,
            catalog_size: 400,
            rating_levels: 6,
            budgets: vec![0, 25, 50, 100, 200],
            degrees: vec![1, 2, 3],
            statement_style: StatementStyle::Instance,
            noise_rate: 0.0,
            trials: 10,
            seed: 0,
            margin: MarginMode::Soft { c: 10.0 },
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ExperimentConfig(m));
        if self.attributes == 0 {
            return bad("attributes must be positive".into());
        }
        if !self.domain_sizes.is_empty() {
            if self.domain_sizes.len() != self.attributes {
                return bad(format!(
                    "{} domain sizes for {} attributes",
                    self.domain_sizes.len(),
                    self.attributes
                ));
            }
            if let Some(s) = self.domain_sizes.iter().find(|&&s| s < 2) {
                return bad(format!("domain size {s} is below 2"));
            }
        }
        if self.truth_order == 0 || self.truth_order > self.attributes {
            return bad(format!(
                "truth order {} outside 1..={}",
                self.truth_order, self.attributes
            ));
        }
        if self.monomials == 0 || self.catalog_size < 2 || self.trials == 0 {
            return bad("monomials, catalog_size and trials must be positive".into());
        }
        if self.rating_levels < 2 {
            return bad("rating_levels must be at least 2".into());
        }
        if self.budgets.is_empty() || self.degrees.is_empty() {
            return bad("budgets and degrees must be non-empty".into());
        }
        if let Some(d) = self
            .degrees
            .iter()
            .find(|&&d| d == 0 || d > self.attributes)
        {
            return bad(format!("degree {d} outside 1..={}", self.attributes));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        SolverConfig {
            mode: self.margin,
            ..SolverConfig::default()
        }
        .validate()
    }

    pub fn schema(&self) -> Schema {
        if self.domain_sizes.is_empty() {
            return Schema::boolean(self.attributes);
        }
        let attrs = self
            .domain_sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| Attribute {
                name: format!("A{}", i + 1),
                values: (0..size).map(|v| format!("v{v}")).collect(),
            })
            .collect();
        Schema::new(attrs).expect("validated domain sizes")
    }

    pub fn max_budget(&self) -> usize {
        self.budgets.iter().copied().max().unwrap_or(0)
    }
}

/// Hidden utility: a weighted sum of terms.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// Fires when the item extends the partial assignment.
    Monomial(PartialAssignment),
    /// Product of per-attribute signs, `+1` for even value indices.
    Parity(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub terms: Vec<(Term, f64)>,
}

impl Truth {
    pub fn utility(&self, item: &PartialAssignment) -> f64 {
        self.terms
            .iter()
            .map(|(t, w)| match t {
                Term::Monomial(m) => {
                    if m.is_subassignment_of(item) {
                        *w
                    } else {
                        0.0
                    }
                }
                Term::Parity(attrs) => {
                    let odd = attrs
                        .iter()
                        .filter(|&&a| item.get(a).is_some_and(|v| v % 2 == 1))
                        .count();
                    if odd % 2 == 0 {
                        *w
                    } else {
                        -*w
                    }
                }
            })
            .sum()
    }
}

/// Everything generated for one trial.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub catalog: Catalog,
    pub truth: Truth,
    pub true_utilities: Vec<f64>,
    /// Quantized ratings, indexed like the catalog.
    pub ratings: Vec<i32>,
    /// Catalog positions used for statements.
    pub train: Vec<usize>,
    /// Ratings of held-out items only.
    pub held_out: RatedPairs,
    pub statements: PreferenceExpression,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic seed for a sub-stream.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut bytes = master.to_le_bytes().to_vec();
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a(&bytes)
}

/// True for the training half.
pub fn in_training_half(id: &str) -> bool {
    fnv1a(id.as_bytes()).is_multiple_of(2)
}

fn conjunction(schema: &Schema, p: &PartialAssignment) -> Formula {
    let atoms: Vec<Formula> = p
        .bindings()
        .map(|(a, v)| {
            let attr = schema.attribute(a);
            let value = if attr.is_boolean() {
                if v == 0 {
                    AtomValue::True
                } else {
                    AtomValue::False
                }
            } else {
                AtomValue::Named(attr.values[v].clone())
            };
            Formula::Atom(Atom {
                attribute: attr.name.clone(),
                value,
            })
        })
        .collect();
    if atoms.len() == 1 {
        atoms.into_iter().next().expect("one atom")
    } else {
        Formula::And(atoms)
    }
}

fn random_truth(spec: &SyntheticSpec, schema: &Schema, rng: &mut ChaCha8Rng) -> Truth {
    let n = schema.len();
    let mut attrs: Vec<usize> = (0..n).collect();
    let terms = (0..spec.monomials)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            let size = match spec.truth_kind {
                TruthKind::Monomial => rng.random_range(1..=spec.truth_order),
                TruthKind::Parity => spec.truth_order,
            };
            attrs.shuffle(rng);
            let mut chosen = attrs[..size].to_vec();
            chosen.sort_unstable();
            let term = match spec.truth_kind {
                TruthKind::Monomial => {
                    let mut m = PartialAssignment::empty(n);
                    for a in chosen {
                        let v = rng.random_range(0..schema.attribute(a).values.len());
                        m.bind(a, v).expect("fresh attribute");
                    }
                    Term::Monomial(m)
                }
                TruthKind::Parity => Term::Parity(chosen),
            };
            (term, w)
        })
        .collect();
    Truth { terms }
}

/// Equal-frequency quantization into `levels` ratings; equal utilities share
/// a rating.
fn quantize(utilities: &[f64], levels: usize) -> Vec<i32> {
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by(|&a, &b| utilities[a].total_cmp(&utilities[b]));
    let mut ratings = vec![0; utilities.len()];
    let n = utilities.len();
    let mut pos = 0;
    while pos < n {
        let mut end = pos;
        while end + 1 < n && utilities[order[end + 1]] == utilities[order[pos]] {
            end += 1;
        }
        let level = (pos * levels / n).min(levels - 1) as i32;
        for &i in &order[pos..=end] {
            ratings[i] = level;
        }
        pos = end + 1;
    }
    ratings
}

fn instance_statement(
    schema: &Schema,
    catalog: &Catalog,
    utilities: &[f64],
    train: &[usize],
    rng: &mut ChaCha8Rng,
) -> Option<Statement> {
    for _ in 0..64 {
        let a = train[rng.random_range(0..train.len())];
        let b = train[rng.random_range(0..train.len())];
        if utilities[a] == utilities[b]
            || catalog.items()[a].assignment == catalog.items()[b].assignment
        {
            continue;
        }
        let (hi, lo) = if utilities[a] > utilities[b] {
            (a, b)
        } else {
            (b, a)
        };
        return Some(Statement::new(StatementKind::Dyadic {
            lhs: conjunction(schema, &catalog.items()[hi].assignment),
            relation: Relation::Strict,
            rhs: conjunction(schema, &catalog.items()[lo].assignment),
        }));
    }
    None
}

fn rule_statement(
    schema: &Schema,
    catalog: &Catalog,
    utilities: &[f64],
    train: &[usize],
    bounds: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Option<Statement> {
    let n = schema.len();
    for _ in 0..256 {
        let width = rng.random_range(1..=2.min(n));
        let mut attrs: Vec<usize> = (0..n).collect();
        attrs.shuffle(rng);
        let mut p = PartialAssignment::empty(n);
        for &a in &attrs[..width] {
            let v = rng.random_range(0..schema.attribute(a).values.len());
            p.bind(a, v).expect("fresh attribute");
        }
        let matches: Vec<f64> = train
            .iter()
            .filter(|&&i| p.is_subassignment_of(&catalog.items()[i].assignment))
            .map(|&i| utilities[i])
            .collect();
        if matches.len() < 3 {
            continue;
        }
        let mean = matches.iter().sum::<f64>() / matches.len() as f64;
        let polarity = if mean >= bounds.1 {
            Polarity::Good
        } else if mean <= bounds.0 {
            Polarity::Bad
        } else {
            continue;
        };
        return Some(Statement::new(StatementKind::Monadic {
            formula: conjunction(schema, &p),
            polarity,
        }));
    }
    None
}

fn flip(s: Statement) -> Statement {
    let kind = match s.kind {
        StatementKind::Dyadic { lhs, relation, rhs } => StatementKind::Dyadic {
            lhs: rhs,
            relation,
            rhs: lhs,
        },
        StatementKind::Monadic { formula, polarity } => StatementKind::Monadic {
            formula,
            polarity: match polarity {
                Polarity::Good => Polarity::Bad,
                Polarity::Bad => Polarity::Good,
            },
        },
    };
    Statement { line: s.line, kind }
}

/// Generates one world from `spec.seed`.
pub fn generate_world(spec: &SyntheticSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let schema = Arc::new(spec.schema());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = random_truth(spec, &schema, &mut rng);

    let width = spec.catalog_size.to_string().len();
    let items: Vec<Alternative> = (0..spec.catalog_size)
        .map(|i| {
            let mut p = PartialAssignment::empty(schema.len());
            for a in 0..schema.len() {
                let v = rng.random_range(0..schema.attribute(a).values.len());
                p.bind(a, v).expect("fresh attribute");
            }
            Alternative {
                id: format!("item{i:0width$}"),
                assignment: p,
            }
        })
        .collect();
    let catalog = Catalog::new(schema.clone(), items)?;
    let utilities: Vec<f64> = catalog
        .items()
        .iter()
        .map(|i| truth.utility(&i.assignment))
        .collect();
    let ratings = quantize(&utilities, spec.rating_levels);

    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..catalog.len()).partition(|&i| in_training_half(&catalog.items()[i].id));
    let held_out = RatedPairs::new(
        test.iter()
            .map(|&i| (catalog.items()[i].id.clone(), ratings[i]))
            .collect(),
        RatingScale {
            min: 0,
            max: spec.rating_levels as i32 - 1,
        },
    )?;

    let mut sorted: Vec<f64> = train.iter().map(|&i| utilities[i]).collect();
    sorted.sort_by(f64::total_cmp);
    let bounds = if sorted.is_empty() {
        (0.0, 0.0)
    } else {
        (sorted[sorted.len() / 4], sorted[(3 * sorted.len()) / 4])
    };

    let mut statements = Vec::with_capacity(spec.max_budget());
    if train.len() >= 2 {
        let mut attempts = 0;
        while statements.len() < spec.max_budget() && attempts < 4 * spec.max_budget() + 16 {
            attempts += 1;
            let rule = match spec.statement_style {
                StatementStyle::Instance => false,
                StatementStyle::Rule => true,
                StatementStyle::Mixed => statements.len() % 2 == 1,
            };
            let s = if rule {
                rule_statement(&schema, &catalog, &utilities, &train, bounds, &mut rng)
            } else {
                instance_statement(&schema, &catalog, &utilities, &train, &mut rng)
            };
            if let Some(s) = s {
                let noisy = rng.random::<f64>() < spec.noise_rate;
                let mut s = if noisy { flip(s) } else { s };
                s.line = statements.len() + 1;
                statements.push(s);
            }
        }
    }

    Ok(SyntheticWorld {
        catalog,
        truth,
        true_utilities: utilities,
        ratings,
        train,
        held_out,
        statements: PreferenceExpression { statements },
    })
}

pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(Catalog, RatedPairs, PreferenceExpression)> {
    let w = generate_world(spec)?;
    Ok((w.catalog, w.held_out, w.statements))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub degree: usize,
    pub k: usize,
    pub mean_error: f64,
    pub std: f64,
    /// Trials that produced an error value.
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub degree: usize,
    pub k: usize,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub rows: Vec<CurveRow>,
    pub failures: Vec<CellFailure>,
}

impl ErrorCurve {
    pub fn row(&self, degree: usize, k: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.degree == degree && r.k == k)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::ExperimentConfig(format!("writing curve: {e}"));
        w.write_record(["degree", "k", "mean_error", "std", "trials"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.degree.to_string(),
                r.k.to_string(),
                format!("{:.6}", r.mean_error),
                format!("{:.6}", r.std),
                r.trials.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::ExperimentConfig(format!("writing curve: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }
}

fn run_cell(
    world: &SyntheticWorld,
    spec: &SyntheticSpec,
    d: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let schema = world.catalog.schema().clone();
    let params = degree_params(d, schema.len())?;
    let expr = PreferenceExpression {
        statements: world.statements.statements[..k.min(world.statements.len())].to_vec(),
    };
    let model = if expr.is_empty() {
        UtilityModel::empty(schema, params)
    } else {
        let cs = compile_expression(&expr, schema, DEFAULT_MODEL_CAP)?;
        let cfg = SolverConfig {
            mode: spec.margin,
            seed,
            ..SolverConfig::default()
        };
        solve_dual(&cs, &params, &cfg)?
    };
    Ok(ordering_error(&model, &world.catalog, &world.held_out)?.error)
}

/// Mean held-out ordering error for every `(degree, budget)` cell.
pub fn run_degree_sweep(spec: &SyntheticSpec) -> Result<ErrorCurve> {
    spec.validate()?;
    let worlds: Vec<SyntheticWorld> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            generate_world(&SyntheticSpec {
                seed: derive_seed(spec.seed, &[t as u64]),
                ..spec.clone()
            })
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &d in &spec.degrees {
        for &k in &spec.budgets {
            for t in 0..spec.trials {
                cells.push((d, k, t));
            }
        }
    }
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(d, k, t)| {
            let seed = derive_seed(spec.seed, &[d as u64, k as u64, t as u64]);
            run_cell(&worlds[t], spec, d, k, seed)
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (chunk, cell_results) in cells.chunks(spec.trials).zip(results.chunks(spec.trials)) {
        let (d, k, _) = chunk[0];
        let mut errors = Vec::new();
        for (&(_, _, t), r) in chunk.iter().zip(cell_results) {
            match r {
                Ok(e) => errors.push(*e),
                Err(e) => failures.push(CellFailure {
                    degree: d,
                    k,
                    trial: t,
                    message: e.to_string(),
                }),
            }
        }
        let (mean, std) = mean_std(&errors);
        rows.push(CurveRow {
            degree: d,
            k,
            mean_error: mean,
            std,
            trials: errors.len(),
        });
    }
    Ok(ErrorCurve { rows, failures })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
