//! Frank–Wolfe maximization of a concave utility of linear rate maps over
//! a polytope given in [`LpProblem`] form. The linear maximization oracle is
//! the simplex solver; the duality gap `∇φ(x)·(s − x)` certifies
//! suboptimality.

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};
use crate::linprog::{solve_lp, LpProblem, LpStatus};
use crate::optimizer::Objective;

/// Sparse linear map from decision variables to one utility coordinate.
pub type RateMap = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `γ_k = 2 / (k + 2)`.
    OpenLoop,
    /// Exact line search on the concave restriction.
    LineSearch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwOptions {
    pub step: StepRule,
    pub away_steps: bool,
    pub gap_tol: f64,
    pub max_iters: usize,
}

impl Default for FwOptions {
    fn default() -> Self {
        Self {
            step: StepRule::LineSearch,
            away_steps: true,
            gap_tol: 1e-6,
            max_iters: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FwResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn apply(map: &RateMap, x: &[f64]) -> Vec<f64> {
    map.iter()
        .map(|row| row.iter().map(|&(j, c)| c * x[j]).sum())
        .collect()
}

/// `Mᵀ g` as a dense vector of length `n`.
pub(crate) fn pullback(map: &RateMap, g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (row, &gs) in map.iter().zip(g) {
        for &(j, c) in row {
            out[j] += c * gs;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lmo(constraints: &LpProblem, direction: Vec<f64>) -> Result<Vec<f64>> {
    let sol = solve_lp(&constraints.with_objective(direction))?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.x),
        LpStatus::Infeasible => Err(CoopError::Infeasible("empty feasible polytope".into())),
        LpStatus::Unbounded => Err(CoopError::Numeric("unbounded linear oracle".into())),
    }
}

/// Largest `γ ∈ [0, γ_max]` maximizing `u(r + γ Δr)`, by bisection on the
/// nonincreasing directional derivative.
fn line_search(utility: &Objective, rates: &[f64], delta: &[f64], gamma_max: f64) -> f64 {
    let slope = |g: f64| -> f64 {
        rates
            .iter()
            .zip(delta)
            .enumerate()
            .map(|(s, (&r, &d))| utility.su_derivative(s, r + g * d) * d)
            .sum()
    };
    if slope(gamma_max) >= 0.0 {
        return gamma_max;
    }
    if slope(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, gamma_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

struct Atom {
    vertex: Vec<f64>,
    weight: f64,
}

fn same_vertex(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Maximizes `utility(M x)` over the constraint set of `constraints`.
pub fn maximize(
    constraints: &LpProblem,
    map: &RateMap,
    utility: &Objective,
    opts: &FwOptions,
) -> Result<FwResult> {
    let n = constraints.num_vars();
    let zero = vec![0.0; map.len()];
    let start = lmo(constraints, pullback(map, &utility.gradient(&zero), n))?;
    let mut x = start.clone();
    let mut active = vec![Atom {
        vertex: start,
        weight: 1.0,
    }];
    let mut gap = f64::INFINITY;

    for k in 0..opts.max_iters {
        let rates = apply(map, &x);
        let grad = pullback(map, &utility.gradient(&rates), n);
        let s = lmo(constraints, grad.clone())?;
        let gx = dot(&grad, &x);
        gap = dot(&grad, &s) - gx;
        if gap <= opts.gap_tol {
            return Ok(FwResult {
                value: utility.value(&rates),
                x,
                gap: gap.max(0.0),
                iterations: k,
                converged: true,
            });
        }

        let away = if opts.away_steps {
            active
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| dot(&grad, &a.vertex).total_cmp(&dot(&grad, &b.vertex)))
                .map(|(idx, a)| (idx, gx - dot(&grad, &a.vertex)))
        } else {
            None
        };

        let use_away = matches!(away, Some((_, ag)) if ag > gap && active.len() > 1);
        let (direction, gamma_max) = if use_away {
            let (idx, _) = away.unwrap();
            let a = &active[idx];
            let d: Vec<f64> = x.iter().zip(&a.vertex).map(|(xi, vi)| xi - vi).collect();
            (d, a.weight / (1.0 - a.weight))
        } else {
            let d: Vec<f64> = s.iter().zip(&x).map(|(si, xi)| si - xi).collect();
            (d, 1.0)
        };

        let gamma = match opts.step {
            StepRule::OpenLoop => (2.0 / (k as f64 + 2.0)).min(gamma_max),
            StepRule::LineSearch => {
                let delta = apply(map, &direction);
                line_search(utility, &rates, &delta, gamma_max)
            }
        };
        for (xi, di) in x.iter_mut().zip(&direction) {
            *xi = (*xi + gamma * di).max(0.0);
        }

        if use_away {
            let idx = away.unwrap().0;
            for a in active.iter_mut() {
                a.weight *= 1.0 + gamma;
            }
            active[idx].weight -= gamma;
            if gamma >= gamma_max || active[idx].weight <= 1e-15 {
                active.remove(idx);
            }
        } else if gamma >= 1.0 {
            active = vec![Atom {
                vertex: s,
                weight: 1.0,
            }];
        } else {
            for a in active.iter_mut() {
                a.weight *= 1.0 - gamma;
            }
            match active.iter_mut().find(|a| same_vertex(&a.vertex, &s)) {
                Some(a) => a.weight += gamma,
                None => active.push(Atom {
                    vertex: s,
                    weight: gamma,
                }),
            }
            active.retain(|a| a.weight > 1e-15);
        }
    }

    let rates = apply(map, &x);
    Ok(FwResult {
        value: utility.value(&rates),
        x,
        gap,
        iterations: opts.max_iters,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // max log(δ + x0) + log(δ + x1) on the simplex x0 + x1 + x2 = 1 -> (1/2, 1/2, 0).
    #[test]
    fn log_utility_on_simplex() {
        let mut lp = LpProblem::new(vec![0.0; 3]);
        lp.add_eq(vec![1.0, 1.0, 1.0], 1.0);
        let map: RateMap = vec![vec![(0, 1.0)], vec![(1, 1.0)]];
        let r = maximize(&lp, &map, &Objective::log_utility(), &FwOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.5).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] - 0.5).abs() < 1e-5);
        assert!(r.gap <= 1e-6);
    }

    #[test]
    fn open_loop_rule_also_makes_progress() {
        let mut lp = LpProblem::new(vec![0.0; 2]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        let map: RateMap = vec![vec![(0, 1.0)], vec![(1, 1.0)]];
        let opts = FwOptions {
            step: StepRule::OpenLoop,
            away_steps: false,
            gap_tol: 1e-3,
            max_iters: 100_000,
        };
        let r = maximize(&lp, &map, &Objective::LogUtility { offset: 0.1 }, &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.5).abs() < 1e-2);
    }
}
