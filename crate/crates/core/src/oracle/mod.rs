//! Exact transport between two finitely supported measures.
//!
//! Used as an independent check of the semi-discrete solver (run on the
//! subpixel atoms of the rasterized source) and of the invariance laws
//! `W₁(α + μ, α + ν) = W₁(μ, ν)` and `W_p(cμ, cν) = c^{1/p} W_p(μ, ν)`.

pub mod network_simplex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Largest `m · n` accepted by the dense oracle.
pub const MAX_COST_ENTRIES: usize = 10_000_000;

/// Relative balance tolerance of a transport problem.
pub const BALANCE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DiscreteTransportProblem {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
}

impl DiscreteTransportProblem {
    pub fn new(source: DiscreteMeasure, target: DiscreteMeasure) -> Result<Self> {
        let (a, b) = (source.total_mass(), target.total_mass());
        if (a - b).abs() > BALANCE_RTOL * a.max(b) {
            return Err(Error::Unbalanced {
                source_mass: a,
                target_mass: b,
            });
        }
        let cells = source.len() * target.len();
        if cells > MAX_COST_ENTRIES {
            return Err(Error::TooLarge {
                cells,
                limit: MAX_COST_ENTRIES,
            });
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Optimality evidence for a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    /// Largest deviation of a plan marginal from the prescribed masses.
    pub marginal_error: f64,
    /// Most negative reduced cost `c_ij − f_i − g_j` (dual infeasibility), clamped at zero.
    pub dual_violation: f64,
    /// Largest reduced cost on an arc carrying flow (complementary slackness).
    pub slackness_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSolution {
    /// `W_p` itself, i.e. the optimal cost raised to `1/p`.
    pub distance: f64,
    /// Optimal `Σ c_ij π_ij` with `c_ij = d_ij^p`.
    pub cost: f64,
    pub plan: Vec<PlanEntry>,
    pub source_potential: Vec<f64>,
    pub target_potential: Vec<f64>,
    pub certificate: Certificate,
}

/// Exact `W_p` for `p ≥ 1` with Euclidean ground distance.
pub fn discrete_wp(problem: &DiscreteTransportProblem, p: f64) -> Result<TransportSolution> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "order p = {p} must be at least 1"
        )));
    }
    let (src, tgt) = (&problem.source, &problem.target);
    let (m, n) = (src.len(), tgt.len());
    let mut cost = Vec::with_capacity(m * n);
    for a in src.points() {
        for b in tgt.points() {
            let d = a.dist(*b);
            cost.push(if p == 1.0 { d } else { d.powf(p) });
        }
    }
    let sol = network_simplex::solve(src.masses(), tgt.masses(), &cost)?;

    let mut plan = Vec::new();
    let mut total = 0.0;
    let mut row = vec![0.0; m];
    let mut col = vec![0.0; n];
    let mut dual_violation = 0.0f64;
    let mut slackness_violation = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            let e = i * n + j;
            let f = sol.flow[e];
            let rc = cost[e] - sol.source_potential[i] - sol.sink_potential[j];
            dual_violation = dual_violation.max(-rc);
            if f > 0.0 {
                slackness_violation = slackness_violation.max(rc.abs());
                plan.push(PlanEntry {
                    source: i,
                    target: j,
                    mass: f,
                });
                total += f * cost[e];
                row[i] += f;
                col[j] += f;
            }
        }
    }
    let marginal_error = row
        .iter()
        .zip(src.masses())
        .chain(col.iter().zip(tgt.masses()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let distance = if p == 1.0 { total } else { total.powf(1.0 / p) };
    Ok(TransportSolution {
        distance,
        cost: total,
        plan,
        source_potential: sol.source_potential,
        target_potential: sol.sink_potential,
        certificate: Certificate {
            marginal_error,
            dual_violation,
            slackness_violation,
        },
    })
}

/// Exact `W₁` and an optimal plan.
pub fn discrete_w1(problem: &DiscreteTransportProblem) -> Result<TransportSolution> {
    discrete_wp(problem, 1.0)
}

/// `W₁(a, b)` for two balanced discrete measures.
pub fn measure_w1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    Ok(discrete_w1(&DiscreteTransportProblem::new(a.clone(), b.clone())?)?.distance)
}

/// `W_p(a, b)` for two balanced discrete measures.
pub fn measure_wp(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> Result<f64> {
    Ok(discrete_wp(&DiscreteTransportProblem::new(a.clone(), b.clone())?, p)?.distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LawCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Compares `W₁(α + μ, α + ν)` (lhs) with `W₁(μ, ν)` (rhs).
pub fn check_additive_invariance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    alpha: &DiscreteMeasure,
) -> Result<LawCheck> {
    let rhs = measure_w1(mu, nu)?;
    let lhs = measure_w1(&alpha.add(mu), &alpha.add(nu))?;
    Ok(LawCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Compares `W_p(cμ, cν)` (lhs) with `c^{1/p} W_p(μ, ν)` (rhs).
pub fn check_scaling_law(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    c: f64,
    p: f64,
) -> Result<LawCheck> {
    if p != 1.0 && p != 2.0 {
        return Err(Error::InvalidArgument(format!(
            "scaling law is checked for p = 1 or 2, got {p}"
        )));
    }
    let lhs = measure_wp(&mu.scaled(c)?, &nu.scaled(c)?, p)?;
    let rhs = c.powf(1.0 / p) * measure_wp(mu, nu, p)?;
    Ok(LawCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}
