//! Utility evaluation, catalog ranking, and the pairwise ordering error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{kernel_eval, KernelMode};
use crate::schema::{Catalog, PartialAssignment};
use crate::solver::UtilityModel;

/// Relative tolerance under which two utilities count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Evaluates a model repeatedly without re-deriving its kernel table.
pub struct Evaluator<'a> {
    model: &'a UtilityModel,
    table: Option<Vec<f64>>,
    support: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a UtilityModel) -> Self {
        let table = match model.params.mode {
            KernelMode::Weighted => Some(model.params.table(model.schema().len())),
            KernelMode::Unweighted => None,
        };
        let support = model
            .alphas
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(i, _)| i)
            .collect();
        Evaluator {
            model,
            table,
            support,
        }
    }

    pub fn utility(&self, p: &PartialAssignment) -> f64 {
        let cs = &self.model.constraints.constraints;
        match &self.table {
            Some(table) => self
                .support
                .iter()
                .map(|&i| {
                    let c = &cs[i];
                    self.model.alphas[i] * (table[c.lhs.agreement(p)] - table[c.rhs.agreement(p)])
                })
                .sum(),
            None => self
                .support
                .iter()
                .map(|&i| {
                    let c = &cs[i];
                    let params = &self.model.params;
                    self.model.alphas[i]
                        * (kernel_eval(&c.lhs, p, params) - kernel_eval(&c.rhs, p, params))
                })
                .sum(),
        }
    }
}

/// `U(p) = Σ α_i (K(l_i, p) − K(r_i, p))`.
pub fn evaluate_utility(m: &UtilityModel, p: &PartialAssignment) -> f64 {
    Evaluator::new(m).utility(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedItem {
    pub id: String,
    pub utility: f64,
    /// Items sharing a tie group have equal utility up to [`TIE_TOLERANCE`].
    pub tie_group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub items: Vec<RankedItem>,
    /// Size of the catalog before truncation.
    pub total: usize,
}

impl Ranking {
    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.id.as_str()).collect()
    }
}

/// Integer keys that compare utilities up to the tie tolerance.
fn tie_keys(utilities: &[f64]) -> Vec<i64> {
    let scale = utilities.iter().fold(1.0f64, |acc, u| acc.max(u.abs()));
    utilities
        .iter()
        .map(|u| (u / (scale * TIE_TOLERANCE)).round() as i64)
        .collect()
}

/// Ranks complete alternatives by descending utility. Ties keep catalog
/// order.
pub fn rank_catalog(m: &UtilityModel, c: &Catalog, top_k: Option<usize>) -> Result<Ranking> {
    if **c.schema() != *m.schema() {
        return Err(Error::SchemaMismatch(
            "catalog and model use different schemas".into(),
        ));
    }
    let eval = Evaluator::new(m);
    let utilities: Vec<f64> = c
        .items()
        .iter()
        .map(|i| eval.utility(&i.assignment))
        .collect();
    let keys = tie_keys(&utilities);
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by(|&a, &b| keys[b].cmp(&keys[a]));

    let mut items = Vec::with_capacity(order.len());
    let mut group = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && keys[order[pos - 1]] != keys[i] {
            group += 1;
        }
        items.push(RankedItem {
            id: c.items()[i].id.clone(),
            utility: utilities[i],
            tie_group: group,
        });
    }
    if let Some(k) = top_k {
        items.truncate(k);
    }
    Ok(Ranking {
        items,
        total: c.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RatingScale {
    pub min: i32,
    pub max: i32,
}

impl Default for RatingScale {
    /// Six-point scale.
    fn default() -> Self {
        RatingScale { min: 0, max: 5 }
    }
}

/// Item ratings; comparable pairs are the unequally rated ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedPairs {
    pub ratings: Vec<(String, i32)>,
    pub scale: RatingScale,
}

impl RatedPairs {
    pub fn new(ratings: Vec<(String, i32)>, scale: RatingScale) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (id, r) in &ratings {
            if *r < scale.min || *r > scale.max {
                return Err(Error::RatingOutOfScale {
                    id: id.clone(),
                    rating: *r,
                    min: scale.min,
                    max: scale.max,
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(RatedPairs { ratings, scale })
    }

    /// Index pairs `(better, worse)` into `ratings`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.ratings.len() {
            for j in i + 1..self.ratings.len() {
                match self.ratings[i].1.cmp(&self.ratings[j].1) {
                    std::cmp::Ordering::Greater => out.push((i, j)),
                    std::cmp::Ordering::Less => out.push((j, i)),
                    std::cmp::Ordering::Equal => {}
                }
            }
        }
        out
    }

    pub fn negated(&self) -> Self {
        RatedPairs {
            ratings: self
                .ratings
                .iter()
                .map(|(id, r)| (id.clone(), self.scale.max + self.scale.min - r))
                .collect(),
            scale: self.scale,
        }
    }
}

/// Parses `id,rating` rows (header optional).
pub fn load_ratings(document: &str, scale: RatingScale) -> Result<RatedPairs> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(document.as_bytes());
    let mut ratings = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::CatalogRow {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::CatalogRow {
                row,
                message: format!("expected `id,rating`, got {} fields", record.len()),
            });
        }
        if row == 1 && &record[0] == "id" {
            continue;
        }
        let rating = record[1]
            .trim()
            .parse::<i32>()
            .map_err(|e| Error::CatalogRow {
                row,
                message: format!("rating `{}`: {e}", &record[1]),
            })?;
        ratings.push((record[0].to_string(), rating));
    }
    RatedPairs::new(ratings, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingErrorReport {
    pub error: f64,
    pub pairs_total: usize,
    pub pairs_disagree: usize,
    pub pairs_tied_by_model: usize,
}

/// Ordering error of `utilities` against `ratings` (same indexing). Model
/// ties earn half credit, the expectation under random tie-breaking.
pub fn pairwise_error(utilities: &[f64], ratings: &[i32]) -> Result<OrderingErrorReport> {
    assert_eq!(utilities.len(), ratings.len());
    let keys = tie_keys(utilities);
    let (mut total, mut disagree, mut tied) = (0usize, 0usize, 0usize);
    for i in 0..ratings.len() {
        for j in i + 1..ratings.len() {
            let (hi, lo) = match ratings[i].cmp(&ratings[j]) {
                std::cmp::Ordering::Greater => (i, j),
                std::cmp::Ordering::Less => (j, i),
                std::cmp::Ordering::Equal => continue,
            };
            total += 1;
            match keys[hi].cmp(&keys[lo]) {
                std::cmp::Ordering::Less => disagree += 1,
                std::cmp::Ordering::Equal => tied += 1,
                std::cmp::Ordering::Greater => {}
            }
        }
    }
    if total == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(OrderingErrorReport {
        error: (disagree as f64 + 0.5 * tied as f64) / total as f64,
        pairs_total: total,
        pairs_disagree: disagree,
        pairs_tied_by_model: tied,
    })
}

pub fn ordering_error(
    m: &UtilityModel,
    c: &Catalog,
    r: &RatedPairs,
) -> Result<OrderingErrorReport> {
    let eval = Evaluator::new(m);
    let mut utilities = Vec::with_capacity(r.ratings.len());
    let mut ratings = Vec::with_capacity(r.ratings.len());
    for (id, rating) in &r.ratings {
        let item = c.get(id).ok_or_else(|| Error::UnknownItem(id.clone()))?;
        utilities.push(eval.utility(&item.assignment));
        ratings.push(*rating);
    }
    pairwise_error(&utilities, &ratings)
}
