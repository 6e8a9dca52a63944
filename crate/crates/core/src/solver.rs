//! Dual solver for the minimum-norm margin problem.
//!
//! The primal asks for the smallest `w` with `w·(Φ(l_i) − Φ(r_i)) ≥ b_i`
//! for every compiled constraint. Its dual is the box-constrained QP
//!
//! ```text
//! maximize  Σ b_i α_i − ½ αᵀQα     subject to  0 ≤ α_i ≤ U
//! ```
//!
//! with `U = C` under a soft margin and `U = alpha_cap` under a hard one.
//! We solve it by coordinate ascent with exact clipped updates
//! `α_i ← clip(α_i + g_i / Q_ii)`, `g = b − Qα`, visiting coordinates in a
//! seeded random order each epoch. After every epoch an exact line search
//! along the epoch's displacement is taken, which both speeds up slow
//! zig-zagging and lets unbounded (infeasible) hard problems reach the cap
//! in a handful of epochs instead of growing linearly.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compile::ConstraintSet;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, FeatureMap, GramMatrix, KernelParams, DEFAULT_ORACLE_LIMIT};
use crate::schema::{PartialAssignment, Schema};
use crate::utility::evaluate_utility;

/// Diagonal entries at or below this are treated as zero difference vectors.
pub const DEGENERATE_DIAGONAL: f64 = 1e-12;

const RESYNC_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MarginMode {
    Hard,
    Soft { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mode: MarginMode,
    pub kkt_tolerance: f64,
    pub max_epochs: usize,
    /// Hard-margin divergence guard.
    pub alpha_cap: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: MarginMode::Hard,
            kkt_tolerance: 1e-6,
            max_epochs: 10_000,
            alpha_cap: 1e8,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn soft(c: f64) -> Self {
        SolverConfig {
            mode: MarginMode::Soft { c },
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MarginMode::Soft { c } = self.mode {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::SolverConfig(format!("C must be positive, got {c}")));
            }
        }
        if self.kkt_tolerance.is_nan() || self.kkt_tolerance <= 0.0 {
            return Err(Error::SolverConfig("kkt_tolerance must be positive".into()));
        }
        if self.alpha_cap.is_nan() || self.alpha_cap <= 0.0 {
            return Err(Error::SolverConfig("alpha_cap must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::SolverConfig("max_epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn upper_bound(&self) -> f64 {
        match self.mode {
            MarginMode::Hard => self.alpha_cap,
            MarginMode::Soft { c } => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Optimal,
    /// A hard-margin multiplier reached the cap.
    LikelyInconsistent,
    /// Some strict constraint compares two assignments the kernel cannot
    /// tell apart.
    Degenerate,
    NotConverged,
}

impl Verdict {
    pub fn is_feasible(self) -> bool {
        self == Verdict::Optimal
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Optimal => "optimal",
            Verdict::LikelyInconsistent => "likely inconsistent; rerun with SOFT",
            Verdict::Degenerate => "degenerate constraint: zero difference with positive margin",
            Verdict::NotConverged => "not converged within max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub objective: f64,
    pub max_kkt_violation: f64,
    pub epochs: usize,
    pub verdict: Verdict,
    /// Constraints frozen at α = 0 because their difference vector vanishes.
    pub degenerate: Vec<usize>,
    /// Hard-margin constraints whose multiplier reached the cap.
    pub capped: Vec<usize>,
    /// Epochs whose objective fell below the previous one (beyond rounding).
    pub objective_decreases: usize,
}

/// Raw output of the box-QP ascent.
#[derive(Debug, Clone)]
pub struct AscentResult {
    pub alphas: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

fn objective(b: &[f64], g: &[f64], alpha: &[f64]) -> f64 {
    // bᵀα − ½αᵀQα with Qα = b − g.
    0.5 * alpha
        .iter()
        .zip(b.iter().zip(g))
        .map(|(a, (bi, gi))| a * (bi + gi))
        .sum::<f64>()
}

fn residual(q: &GramMatrix, b: &[f64], alpha: &[f64]) -> Vec<f64> {
    q.mul_vec(alpha)
        .into_iter()
        .zip(b)
        .map(|(qa, bi)| bi - qa)
        .collect()
}

/// Maximizes `bᵀα − ½αᵀQα` over `0 ≤ α ≤ cfg.upper_bound()`.
pub fn coordinate_ascent(q: &GramMatrix, b: &[f64], cfg: &SolverConfig) -> Result<AscentResult> {
    cfg.validate()?;
    let k = q.size();
    assert_eq!(b.len(), k);
    let upper = cfg.upper_bound();
    let diag = q.diag();

    let mut degenerate = Vec::new();
    let mut active = Vec::with_capacity(k);
    for i in 0..k {
        if diag[i] <= DEGENERATE_DIAGONAL {
            if b[i] > 0.0 {
                degenerate.push(i);
            }
        } else {
            active.push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut alpha = vec![0.0; k];
    let mut g = b.to_vec();
    let mut prev = alpha.clone();
    let mut last_objective: f64 = 0.0;
    let mut objective_decreases = 0;
    let mut epochs = 0;
    let mut violation = f64::INFINITY;
    let mut capped = Vec::new();

    // Clipped coordinate step, and the gradient measured in margin units so
    // that large diagonals cannot hide a violated margin.
    let projected_step = |i: usize, alpha: &[f64], g: &[f64]| -> f64 {
        let step = ((alpha[i] + g[i] / diag[i]).clamp(0.0, upper) - alpha[i]).abs();
        let margin = if alpha[i] <= 0.0 {
            g[i].max(0.0)
        } else if alpha[i] >= upper {
            (-g[i]).max(0.0)
        } else {
            g[i].abs()
        };
        step.max(margin)
    };

    if active.is_empty() {
        violation = 0.0;
    }

    while !active.is_empty() && epochs < cfg.max_epochs {
        epochs += 1;
        active.shuffle(&mut rng);
        for &i in &active {
            let new = (alpha[i] + g[i] / diag[i]).clamp(0.0, upper);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                for (gj, qij) in g.iter_mut().zip(q.row(i)) {
                    *gj -= delta * qij;
                }
            }
        }

        // Line search along this epoch's displacement.
        let dir: Vec<f64> = alpha.iter().zip(&prev).map(|(a, p)| a - p).collect();
        let gd: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if gd > 0.0 {
            let qd = q.mul_vec(&dir);
            let dqd: f64 = dir.iter().zip(&qd).map(|(a, b)| a * b).sum();
            let mut t_box = f64::INFINITY;
            for (a, d) in alpha.iter().zip(&dir) {
                if *d > 0.0 {
                    t_box = t_box.min((upper - a) / d);
                } else if *d < 0.0 {
                    t_box = t_box.min(a / -d);
                }
            }
            let t_line = if dqd > 0.0 { gd / dqd } else { f64::INFINITY };
            let alpha_sum: f64 = alpha.iter().sum();
            let dir_sum: f64 = dir.iter().map(|d| d.abs()).sum();
            let t_grow = (2.0 * alpha_sum / dir_sum).max(1.0);
            let t = t_line.min(t_grow).min(t_box);
            let gain = t * gd - 0.5 * t * t * dqd;
            if t > 0.0 && t.is_finite() && gain > 0.0 {
                for (i, a) in alpha.iter_mut().enumerate() {
                    *a = (*a + t * dir[i]).clamp(0.0, upper);
                }
                for (gj, qdj) in g.iter_mut().zip(&qd) {
                    *gj -= t * qdj;
                }
            }
        }
        prev.copy_from_slice(&alpha);

        if epochs % RESYNC_EVERY == 0 {
            g = residual(q, b, &alpha);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coordinate ascent"));
        }

        let obj = objective(b, &g, &alpha);
        if obj < last_objective - 1e-9 * (1.0 + last_objective.abs()) {
            objective_decreases += 1;
        }
        debug_assert!(
            obj >= last_objective - 1e-6 * (1.0 + last_objective.abs()),
            "dual objective decreased: {last_objective} -> {obj}"
        );
        last_objective = obj;

        if cfg.mode == MarginMode::Hard {
            capped = active
                .iter()
                .copied()
                .filter(|&i| alpha[i] >= upper)
                .collect();
            if !capped.is_empty() {
                capped.sort_unstable();
                break;
            }
        }

        violation = active
            .iter()
            .map(|&i| projected_step(i, &alpha, &g))
            .fold(0.0, f64::max);
        if violation <= cfg.kkt_tolerance {
            break;
        }
    }

    let g = residual(q, b, &alpha);
    if !active.is_empty() {
        violation = active
            .iter()
            .map(|&i| projected_step(i, &alpha, &g))
            .fold(0.0, f64::max);
    }
    let verdict = if !capped.is_empty() {
        Verdict::LikelyInconsistent
    } else if !degenerate.is_empty() {
        Verdict::Degenerate
    } else if violation > cfg.kkt_tolerance {
        Verdict::NotConverged
    } else {
        Verdict::Optimal
    };
    Ok(AscentResult {
        diagnostics: SolveDiagnostics {
            objective: objective(b, &g, &alpha),
            max_kkt_violation: violation,
            epochs,
            verdict,
            degenerate,
            capped,
            objective_decreases,
        },
        alphas: alpha,
    })
}

/// Solved dual: multipliers plus everything needed to evaluate utilities.
#[derive(Debug, Clone)]
pub struct UtilityModel {
    pub alphas: Vec<f64>,
    pub constraints: ConstraintSet,
    pub params: KernelParams,
    pub config: SolverConfig,
    pub diagnostics: SolveDiagnostics,
}

impl UtilityModel {
    /// Model with no statements; every utility is zero.
    pub fn empty(schema: std::sync::Arc<Schema>, params: KernelParams) -> Self {
        UtilityModel {
            alphas: Vec::new(),
            constraints: ConstraintSet::empty(schema),
            params,
            config: SolverConfig::default(),
            diagnostics: SolveDiagnostics {
                objective: 0.0,
                max_kkt_violation: 0.0,
                epochs: 0,
                verdict: Verdict::Optimal,
                degenerate: Vec::new(),
                capped: Vec::new(),
                objective_decreases: 0,
            },
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.constraints.schema
    }

    /// `‖w‖² = αᵀQα`, computed through the kernel.
    pub fn weight_norm_squared(&self) -> f64 {
        self.constraints
            .constraints
            .iter()
            .zip(&self.alphas)
            .filter(|(_, a)| **a != 0.0)
            .map(|(c, a)| a * (evaluate_utility(self, &c.lhs) - evaluate_utility(self, &c.rhs)))
            .sum()
    }
}

pub fn solve_dual(
    cs: &ConstraintSet,
    params: &KernelParams,
    cfg: &SolverConfig,
) -> Result<UtilityModel> {
    cfg.validate()?;
    if params.lambdas.len() != cs.schema.len() {
        return Err(Error::KernelParams(format!(
            "{} lambdas for {} attributes",
            params.lambdas.len(),
            cs.schema.len()
        )));
    }
    let q = gram_matrix(cs, params)?;
    let b: Vec<f64> = cs.constraints.iter().map(|c| c.margin).collect();
    let AscentResult {
        alphas,
        diagnostics,
    } = coordinate_ascent(&q, &b, cfg)?;
    Ok(UtilityModel {
        alphas,
        constraints: cs.clone(),
        params: params.clone(),
        config: cfg.clone(),
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintSlack {
    pub index: usize,
    pub statement: usize,
    pub margin: f64,
    /// `U(lhs) − U(rhs)`.
    pub achieved: f64,
    /// `achieved − margin`; negative means violated.
    pub slack: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BoundaryCensus {
    pub at_zero: usize,
    pub interior: usize,
    pub at_upper: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub verdict: Verdict,
    pub objective: f64,
    pub epochs: usize,
    pub min_slack: f64,
    /// `max |α_i · slack_i|` over constraints not held at the soft upper bound.
    pub max_complementarity_violation: f64,
    /// Constraints with `slack < −tol`.
    pub violated: usize,
    pub census: BoundaryCensus,
    pub constraints: Vec<ConstraintSlack>,
}

/// Audits a solved model; slacks are recomputed through kernel sums.
pub fn check_kkt(m: &UtilityModel) -> KktReport {
    let tol = m.config.kkt_tolerance;
    let upper = m.config.upper_bound();
    let soft = matches!(m.config.mode, MarginMode::Soft { .. });
    let mut census = BoundaryCensus::default();
    let mut min_slack = f64::INFINITY;
    let mut max_comp: f64 = 0.0;
    let mut violated = 0;
    let constraints: Vec<ConstraintSlack> = m
        .constraints
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let alpha = m.alphas[i];
            let achieved = evaluate_utility(m, &c.lhs) - evaluate_utility(m, &c.rhs);
            let slack = achieved - c.margin;
            let at_upper = alpha >= upper * (1.0 - 1e-12);
            if alpha <= 0.0 {
                census.at_zero += 1;
            } else if at_upper {
                census.at_upper += 1;
            } else {
                census.interior += 1;
            }
            if !(soft && at_upper) {
                max_comp = max_comp.max((alpha * slack).abs());
            }
            if slack < -tol {
                violated += 1;
            }
            min_slack = min_slack.min(slack);
            ConstraintSlack {
                index: i,
                statement: c.source,
                margin: c.margin,
                achieved,
                slack,
                alpha,
            }
        })
        .collect();
    KktReport {
        verdict: m.diagnostics.verdict,
        objective: m.diagnostics.objective,
        epochs: m.diagnostics.epochs,
        min_slack: if constraints.is_empty() {
            0.0
        } else {
            min_slack
        },
        max_complementarity_violation: max_comp,
        violated,
        census,
        constraints,
    }
}

/// Explicit primal weights, keyed by monomial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightMap {
    pub weights: std::collections::BTreeMap<PartialAssignment, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedWeight {
    pub monomial: std::collections::BTreeMap<String, String>,
    pub weight: f64,
}

impl WeightMap {
    pub fn get(&self, g: &PartialAssignment) -> f64 {
        self.weights.get(g).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum()
    }

    /// `w · φ` for an explicit feature vector.
    pub fn dot(&self, phi: &crate::kernel::FeatureVector) -> f64 {
        phi.entries.iter().map(|(g, v)| self.get(g) * v).sum()
    }

    /// Largest weights by magnitude; ties keep monomial order.
    pub fn top(&self, schema: &Schema, limit: usize) -> Vec<NamedWeight> {
        let mut all: Vec<(&PartialAssignment, f64)> =
            self.weights.iter().map(|(g, w)| (g, *w)).collect();
        all.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        all.into_iter()
            .take(limit)
            .map(|(g, w)| NamedWeight {
                monomial: g.to_names(schema),
                weight: w,
            })
            .collect()
    }
}

/// Weights smaller than this (relative to the largest) are dropped as
/// cancellation residue.
const WEIGHT_EPSILON: f64 = 1e-12;

/// `w = Σ α_i (φ(l_i) − φ(r_i))` over the explicit feature space.
pub fn reconstruct_weights(m: &UtilityModel) -> Result<WeightMap> {
    let schema = m.schema();
    let fmap = FeatureMap::new(schema, &m.params, DEFAULT_ORACLE_LIMIT)?;
    let mut weights = std::collections::BTreeMap::new();
    for (c, &alpha) in m.constraints.constraints.iter().zip(&m.alphas) {
        if alpha == 0.0 {
            continue;
        }
        for (g, v) in fmap.map(&c.lhs).entries {
            *weights.entry(g).or_insert(0.0) += alpha * v;
        }
        for (g, v) in fmap.map(&c.rhs).entries {
            *weights.entry(g).or_insert(0.0) -= alpha * v;
        }
    }
    let scale = weights
        .values()
        .fold(0.0f64, |acc, w: &f64| acc.max(w.abs()));
    weights.retain(|_, w| w.abs() > WEIGHT_EPSILON * scale.max(1.0));
    Ok(WeightMap { weights })
}
