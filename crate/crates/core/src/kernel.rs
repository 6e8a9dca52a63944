//! The subset kernel and its explicit feature-space counterpart.
//!
//! Every assignment `x` maps to the vector indexed by all non-empty
//! consistent partial assignments (monomials) `g`, with entry
//! `√c_λ(|g|)` when `g ⊆ x`. The inner product of two such vectors only
//! depends on the number `s` of attribute values the assignments share:
//!
//! ```text
//! K(x, x′) = Σ_l λ_l · s^l,   s = |x ∩ x′|
//! ```
//!
//! `c_λ(k) = Σ_{l ≥ k} λ_l · surj(l, k)`, where `surj(l, k)` counts the
//! ordered index sequences of length `l` that use each of `k` distinct
//! factors at least once.
//!
//! The explicit map is materialized only as a test oracle and for small
//! schemas (weight reconstruction, the unweighted reproduction path).

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compile::ConstraintSet;
use crate::error::{Error, Result};
use crate::schema::{PartialAssignment, Schema};

/// Default cap on the number of explicit feature-space dimensions.
pub const DEFAULT_ORACLE_LIMIT: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// `√c_λ`-weighted features; evaluated through the closed-form kernel.
    Weighted,
    /// Unit-weight features; evaluated through the explicit map only.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// `λ_1..λ_n`; ignored in unweighted mode.
    pub lambdas: Vec<f64>,
    pub mode: KernelMode,
}

impl KernelParams {
    pub fn weighted(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::KernelParams(
                "every lambda must be finite and non-negative".into(),
            ));
        }
        if !lambdas.iter().any(|l| *l > 0.0) {
            return Err(Error::KernelParams(
                "at least one lambda must be positive".into(),
            ));
        }
        Ok(KernelParams {
            lambdas,
            mode: KernelMode::Weighted,
        })
    }

    pub fn unweighted(attributes: usize) -> Self {
        KernelParams {
            lambdas: vec![1.0; attributes],
            mode: KernelMode::Unweighted,
        }
    }

    /// Same parameters with every λ multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self.mode {
            KernelMode::Weighted => {
                KernelParams::weighted(self.lambdas.iter().map(|l| l * factor).collect())
            }
            KernelMode::Unweighted => Ok(self.clone()),
        }
    }

    /// Kernel value for two assignments agreeing on `s` attribute values.
    pub fn from_agreement(&self, s: usize) -> f64 {
        match self.mode {
            KernelMode::Weighted => {
                let s = s as f64;
                // Horner on Σ_{l≥1} λ_l s^l = s(λ_1 + s(λ_2 + ...)).
                self.lambdas.iter().rev().fold(0.0, |acc, l| (acc + l) * s)
            }
            KernelMode::Unweighted => {
                // Count of shared non-empty sub-assignments.
                2f64.powi(s as i32) - 1.0
            }
        }
    }

    /// Kernel values for every agreement count `0..=max_agreement`.
    pub fn table(&self, max_agreement: usize) -> Vec<f64> {
        (0..=max_agreement)
            .map(|s| self.from_agreement(s))
            .collect()
    }
}

/// Degree-`d` parameters: `λ_1..λ_d = 1`, the rest 0.
pub fn degree_params(d: usize, attributes: usize) -> Result<KernelParams> {
    if d == 0 || d > attributes {
        return Err(Error::DegreeOutOfRange {
            degree: d,
            attributes,
        });
    }
    KernelParams::weighted(
        (1..=attributes)
            .map(|l| if l <= d { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Number of surjections from an `l`-set onto a `k`-set, or `None` on
/// `u128` overflow.
pub fn surjections(l: usize, k: usize) -> Option<u128> {
    if k > l {
        return Some(0);
    }
    // row[j] = surj(i, j), advanced one i at a time.
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for _ in 1..=l {
        for j in (1..=k).rev() {
            row[j] = row[j].checked_add(row[j - 1])?.checked_mul(j as u128)?;
        }
        row[0] = 0;
    }
    Some(row[k])
}

fn surjections_f64(l: usize, k: usize) -> f64 {
    if k > l {
        return 0.0;
    }
    let mut row = vec![0f64; k + 1];
    row[0] = 1.0;
    for _ in 1..=l {
        for j in (1..=k).rev() {
            row[j] = (row[j] + row[j - 1]) * j as f64;
        }
        row[0] = 0.0;
    }
    row[k]
}

/// Exact `c_λ(k)` for integer λ; `None` on overflow.
pub fn coefficient_c_exact(k: usize, lambdas: &[u64]) -> Option<u128> {
    let mut total = 0u128;
    for (idx, &lambda) in lambdas.iter().enumerate() {
        let l = idx + 1;
        if l < k || lambda == 0 {
            continue;
        }
        total = total.checked_add(surjections(l, k)?.checked_mul(lambda as u128)?)?;
    }
    Some(total)
}

/// `c_λ(k)` in floating point. Surjection counts are exact integers as long
/// as they fit in `u128`; beyond that they are accumulated in `f64`, and an
/// infinite result is reported as an error.
pub fn coefficient_c(k: usize, params: &KernelParams) -> Result<f64> {
    let n = params.lambdas.len();
    if k == 0 || k > n {
        return Err(Error::KernelParams(format!(
            "monomial size {k} is outside 1..={n}"
        )));
    }
    if params.mode == KernelMode::Unweighted {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for (idx, &lambda) in params.lambdas.iter().enumerate() {
        let l = idx + 1;
        if l < k || lambda == 0.0 {
            continue;
        }
        let count = match surjections(l, k) {
            Some(c) => c as f64,
            None => surjections_f64(l, k),
        };
        total += lambda * count;
    }
    if !total.is_finite() {
        return Err(Error::CoefficientOverflow { k, attributes: n });
    }
    Ok(total)
}

/// `c_λ(1..=n)`, index 0 holding `c_λ(1)`.
pub fn coefficients(params: &KernelParams) -> Result<Vec<f64>> {
    (1..=params.lambdas.len())
        .map(|k| coefficient_c(k, params))
        .collect()
}

/// Kernel value between two assignments.
///
/// Weighted mode uses the closed form over the agreement count. Unweighted
/// mode counts the shared non-empty sub-assignments by enumerating the
/// sub-assignments of the smaller side, i.e. the explicit inner product.
pub fn kernel_eval(p: &PartialAssignment, q: &PartialAssignment, params: &KernelParams) -> f64 {
    match params.mode {
        KernelMode::Weighted => params.from_agreement(p.agreement(q)),
        KernelMode::Unweighted => {
            let (small, large) = if p.bound_count() <= q.bound_count() {
                (p, q)
            } else {
                (q, p)
            };
            sub_assignments(small)
                .filter(|g| g.is_subassignment_of(large))
                .count() as f64
        }
    }
}

/// Non-empty sub-assignments of `p`, in subset-mask order.
pub fn sub_assignments(p: &PartialAssignment) -> impl Iterator<Item = PartialAssignment> + '_ {
    let bound: Vec<(usize, usize)> = p.bindings().collect();
    assert!(bound.len() < 64, "too many bound attributes to enumerate");
    let width = p.width();
    (1u64..(1u64 << bound.len())).map(move |mask| {
        let mut g = PartialAssignment::empty(width);
        for (bit, &(a, v)) in bound.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                g.bind(a, v).expect("distinct attributes");
            }
        }
        g
    })
}

/// Sparse explicit feature vector keyed by monomial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    pub entries: BTreeMap<PartialAssignment, f64>,
}

impl FeatureVector {
    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (small, large) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(g, w)| large.entries.get(g).map(|w2| w * w2))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds explicit feature vectors with a fixed coefficient table.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    weights: Vec<f64>,
}

impl FeatureMap {
    /// Fails when the schema's monomial space exceeds `limit` dimensions.
    pub fn new(schema: &Schema, params: &KernelParams, limit: u128) -> Result<Self> {
        let dimension = schema.monomial_count();
        if dimension > limit {
            return Err(Error::OracleLimit { dimension, limit });
        }
        if params.lambdas.len() != schema.len() {
            return Err(Error::KernelParams(format!(
                "{} lambdas for {} attributes",
                params.lambdas.len(),
                schema.len()
            )));
        }
        let weights = match params.mode {
            KernelMode::Weighted => coefficients(params)?.into_iter().map(f64::sqrt).collect(),
            KernelMode::Unweighted => vec![1.0; schema.len()],
        };
        Ok(FeatureMap { weights })
    }

    /// Weight of monomial `g` in the image of any assignment containing it.
    pub fn monomial_weight(&self, g: &PartialAssignment) -> f64 {
        match g.bound_count() {
            0 => 0.0,
            k => self.weights[k - 1],
        }
    }

    pub fn map(&self, p: &PartialAssignment) -> FeatureVector {
        FeatureVector {
            entries: sub_assignments(p)
                .filter_map(|g| {
                    let w = self.monomial_weight(&g);
                    (w != 0.0).then_some((g, w))
                })
                .collect(),
        }
    }
}

pub fn explicit_feature_map(
    p: &PartialAssignment,
    params: &KernelParams,
    schema: &Schema,
) -> Result<FeatureVector> {
    Ok(FeatureMap::new(schema, params, DEFAULT_ORACLE_LIMIT)?.map(p))
}

/// Dense symmetric Gram matrix of constraint difference vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    size: usize,
    data: Vec<f64>,
    diag: Vec<f64>,
}

impl GramMatrix {
    pub fn from_rows(size: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), size * size);
        let diag = (0..size).map(|i| data[i * size + i]).collect();
        GramMatrix { size, data, diag }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.size).all(|i| {
            (0..i).all(|j| {
                let (a, b) = (self.get(i, j), self.get(j, i));
                (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
            })
        })
    }

    /// `Qv`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Smallest Rayleigh quotient `vᵀQv / vᵀv` over random Gaussian-ish probes.
    pub fn min_rayleigh_probe<R: Rng>(&self, rng: &mut R, probes: usize) -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..probes {
            let v: Vec<f64> = (0..self.size)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let norm: f64 = v.iter().map(|x| x * x).sum();
            if norm == 0.0 {
                continue;
            }
            let qv = self.mul_vec(&v);
            let quad: f64 = v.iter().zip(&qv).map(|(a, b)| a * b).sum();
            best = best.min(quad / norm);
        }
        best
    }
}

/// Assembles `Q_ij = K(l_i,l_j) − K(l_i,r_j) − K(r_i,l_j) + K(r_i,r_j)`.
///
/// Weighted kernels go through an agreement-count lookup table. Unweighted
/// kernels go through explicit feature vectors and therefore respect the
/// oracle limit.
pub fn gram_matrix(cs: &ConstraintSet, params: &KernelParams) -> Result<GramMatrix> {
    let k = cs.len();
    let mut data = vec![0.0; k * k];
    match params.mode {
        KernelMode::Weighted => {
            let table = params.table(cs.schema.len());
            data.par_chunks_mut(k.max(1))
                .enumerate()
                .for_each(|(i, row)| {
                    let ci = &cs.constraints[i];
                    for (j, cell) in row.iter_mut().enumerate() {
                        let cj = &cs.constraints[j];
                        *cell = table[ci.lhs.agreement(&cj.lhs)]
                            - table[ci.lhs.agreement(&cj.rhs)]
                            - table[ci.rhs.agreement(&cj.lhs)]
                            + table[ci.rhs.agreement(&cj.rhs)];
                    }
                });
        }
        KernelMode::Unweighted => {
            let fmap = FeatureMap::new(&cs.schema, params, DEFAULT_ORACLE_LIMIT)?;
            let diffs: Vec<FeatureVector> = cs
                .constraints
                .iter()
                .map(|c| difference(&fmap.map(&c.lhs), &fmap.map(&c.rhs)))
                .collect();
            data.par_chunks_mut(k.max(1))
                .enumerate()
                .for_each(|(i, row)| {
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell = diffs[i].dot(&diffs[j]);
                    }
                });
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gram matrix assembly"));
    }
    Ok(GramMatrix::from_rows(k, data))
}

/// `a − b`, dropping exact zeros.
pub fn difference(a: &FeatureVector, b: &FeatureVector) -> FeatureVector {
    let mut entries = a.entries.clone();
    for (g, w) in &b.entries {
        *entries.entry(g.clone()).or_insert(0.0) -= w;
    }
    entries.retain(|_, w| *w != 0.0);
    FeatureVector { entries }
}
