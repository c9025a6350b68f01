//! Minimisation of Φ by L-BFGS with Armijo backtracking.
//!
//! Φ on the rasterized measure is piecewise linear, so curvature (Wolfe)
//! conditions are routinely unsatisfiable; steps are accepted on sufficient
//! decrease alone. The iteration stops once the mistransported mass
//! `‖∇Φ(w)‖₁ / 2` drops to `epsilon`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{QueryStrategy, Rasterization, SubpixelPolicy};
use crate::measures::{balance_of, DensityGrid, DiscreteMeasure, DEFAULT_BALANCE_TOL};
use crate::objective::{Objective, ObjectiveValue};

/// Curvature pairs with `⟨s, y⟩` at or below this are not stored.
pub const MIN_CURVATURE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once the mistransported mass is at most this.
    pub epsilon: f64,
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Sufficient-decrease constant of the Armijo rule.
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_iterations: usize,
    pub max_line_search_steps: usize,
    pub initial_step: f64,
    pub subpixels: SubpixelPolicy,
    pub query: QueryStrategy,
    /// Maximum relative gap between the source and target masses.
    pub balance_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            memory: 10,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_iterations: 1000,
            max_line_search_steps: 40,
            initial_step: 1.0,
            subpixels: SubpixelPolicy::default(),
            query: QueryStrategy::default(),
            balance_tol: DEFAULT_BALANCE_TOL,
        }
    }
}

impl SolverConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1 must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if self.max_line_search_steps == 0 {
            return bad("max_line_search_steps must be at least 1");
        }
        if let SubpixelPolicy::Fixed(0) | SubpixelPolicy::Auto { max_k: 0 } = self.subpixels {
            return bad("subpixel factor must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    MaxIterations,
    /// Neither the quasi-Newton nor the steepest-descent direction gave an
    /// Armijo step.
    Stalled,
}

/// One accepted iteration, as streamed to the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub phi: f64,
    pub mistransported_mass: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Final weights, shifted so that the smallest is zero.
    pub final_w: Vec<f64>,
    pub iterations: usize,
    /// Number of Φ evaluations, line-search trials included.
    pub evaluations: usize,
    pub phi_history: Vec<f64>,
    pub final_phi: f64,
    pub final_mistransported_mass: f64,
    /// Transport cost of the final partition; the W₁ estimate when converged.
    pub w1_cost: f64,
    pub converged: bool,
    pub termination_reason: TerminationReason,
    /// Subpixels per pixel side used for the quadrature.
    pub subpixels: usize,
    pub cell_mass: Vec<f64>,
    #[serde(skip)]
    pub partition: Rasterization,
}

/// Stored correction pairs `s = w⁺ − w`, `y = ∇Φ(w⁺) − ∇Φ(w)`.
#[derive(Debug, Clone)]
pub struct CorrectionHistory {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl CorrectionHistory {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
        }
    }

    /// Stores a pair unless its curvature `⟨s, y⟩` is not safely positive.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > MIN_CURVATURE) || self.memory == 0 {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Pairs from oldest to newest.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs
            .iter()
            .map(|(s, y, _)| (s.as_slice(), y.as_slice()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L-BFGS search direction `−H g` by the two-loop recursion, with the initial
/// inverse Hessian scaled by `⟨s, y⟩ / ⟨y, y⟩` of the newest pair.
pub fn two_loop_direction(gradient: &[f64], history: &CorrectionHistory) -> Vec<f64> {
    let mut q = gradient.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in history.pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Weights shifted so that the smallest entry is zero.
pub fn shift_normalized(w: &[f64]) -> Vec<f64> {
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter().map(|x| x - min).collect()
}

struct State {
    w: Vec<f64>,
    value: ObjectiveValue,
    partition: Rasterization,
}

struct Evaluator<'a, 'g> {
    objective: &'a Objective<'g>,
    evaluations: usize,
    iteration: usize,
}

impl Evaluator<'_, '_> {
    fn eval(&mut self, w: Vec<f64>) -> Result<State> {
        self.evaluations += 1;
        let (value, partition) = self.objective.evaluate_with_partition(&w)?;
        if !value.phi.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
            });
        }
        Ok(State {
            w,
            value,
            partition,
        })
    }
}

/// Backtracks from `step` along `dir` until the Armijo condition holds.
fn armijo(
    ev: &mut Evaluator<'_, '_>,
    cur: &State,
    dir: &[f64],
    mut step: f64,
    cfg: &SolverConfig,
) -> Result<Option<(f64, State)>> {
    let slope = dot(&cur.value.gradient, dir);
    if !(slope < 0.0) {
        return Ok(None);
    }
    for _ in 0..cfg.max_line_search_steps {
        let w: Vec<f64> = cur.w.iter().zip(dir).map(|(w, d)| w + step * d).collect();
        let trial = ev.eval(w)?;
        if trial.value.phi <= cur.value.phi + cfg.armijo_c1 * step * slope {
            return Ok(Some((step, trial)));
        }
        step *= cfg.backtrack_factor;
    }
    Ok(None)
}

/// Minimises Φ starting from `w0`.
pub fn minimize(
    grid: &DensityGrid,
    nu: &DiscreteMeasure,
    w0: &[f64],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let k = cfg.subpixels.resolve(nu.len(), grid);
    let objective = Objective::with_strategy(grid, nu, k, cfg.query)?;
    minimize_objective(&objective, w0, cfg, None)
}

/// Minimises a prepared objective, streaming one record per accepted iteration to `log`.
pub fn minimize_objective(
    objective: &Objective<'_>,
    w0: &[f64],
    cfg: &SolverConfig,
    mut log: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let n = objective.len();
    if w0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: w0.len(),
        });
    }
    let balance = balance_of(
        objective.grid().total_mass(),
        objective.nu().total_mass(),
        cfg.balance_tol,
    );
    if !balance.ok {
        return Err(Error::Unbalanced {
            source_mass: balance.mu_mass,
            target_mass: balance.nu_mass,
        });
    }
    if let Some(w) = w0.iter().find(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite initial weight {w}"
        )));
    }

    let mut ev = Evaluator {
        objective,
        evaluations: 0,
        iteration: 0,
    };
    let mut cur = ev.eval(w0.to_vec())?;
    let mut phi_history = vec![cur.value.phi];
    let mut history = CorrectionHistory::new(cfg.memory);

    let reason = loop {
        if cur.value.mistransported_mass() <= cfg.epsilon {
            let normalized = shift_normalized(&cur.w);
            if normalized == cur.w {
                break TerminationReason::Converged;
            }
            // certify the reported (shifted) weights with their own evaluation
            let shifted = ev.eval(normalized)?;
            let ok = shifted.value.mistransported_mass() <= cfg.epsilon;
            cur = shifted;
            if ok {
                break TerminationReason::Converged;
            }
            history.clear();
        }
        if ev.iteration >= cfg.max_iterations {
            break TerminationReason::MaxIterations;
        }

        let g = cur.value.gradient.clone();
        let mut steepest = history.is_empty();
        let mut dir = two_loop_direction(&g, &history);
        if !(dot(&g, &dir) < 0.0) {
            history.clear();
            steepest = true;
            dir = g.iter().map(|x| -x).collect();
        }
        let first_step = |dir: &[f64], steepest: bool| {
            if steepest {
                cfg.initial_step / norm2(dir)
            } else {
                cfg.initial_step
            }
        };
        let mut accepted = armijo(&mut ev, &cur, &dir, first_step(&dir, steepest), cfg)?;
        if accepted.is_none() && !steepest {
            history.clear();
            dir = g.iter().map(|x| -x).collect();
            accepted = armijo(&mut ev, &cur, &dir, first_step(&dir, true), cfg)?;
        }
        let Some((step, next)) = accepted else {
            break TerminationReason::Stalled;
        };

        let s: Vec<f64> = next.w.iter().zip(&cur.w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next
            .value
            .gradient
            .iter()
            .zip(&g)
            .map(|(a, b)| a - b)
            .collect();
        history.push(s, y);
        cur = next;
        ev.iteration += 1;
        phi_history.push(cur.value.phi);
        if let Some(log) = log.as_mut() {
            log(&IterationRecord {
                iter: ev.iteration,
                phi: cur.value.phi,
                mistransported_mass: cur.value.mistransported_mass(),
                step_size: step,
            });
        }
    };

    if reason != TerminationReason::Converged {
        let normalized = shift_normalized(&cur.w);
        if normalized != cur.w {
            cur = ev.eval(normalized)?;
        }
    }
    let mistransported = cur.value.mistransported_mass();
    Ok(SolveReport {
        final_w: cur.w,
        iterations: ev.iteration,
        evaluations: ev.evaluations,
        phi_history,
        final_phi: cur.value.phi,
        final_mistransported_mass: mistransported,
        w1_cost: cur.value.cost,
        converged: reason == TerminationReason::Converged,
        termination_reason: reason,
        subpixels: objective.k(),
        cell_mass: cur.value.cell_mass,
        partition: cur.partition,
    })
}
