//! Dense two-phase primal simplex.
//!
//! Problems are stated as `maximize c·x` subject to equality rows,
//! `≤` rows and `x ≥ 0`. Entering variables follow Dantzig's rule with
//! lowest-index tie-breaking; after a run of degenerate pivots the solver
//! switches to Bland's rule for the rest of the phase.

use serde::Serialize;
use thiserror::Error;

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("lp dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lp has non-finite input: {0}")]
    NonFinite(String),
    #[error("simplex pivot limit of {0} reached")]
    PivotLimit(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LpProblem {
    /// Maximized.
    pub objective: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ub_rows: Vec<Vec<f64>>,
    pub ub_rhs: Vec<f64>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds `row·x = rhs`; returns its index among equality rows.
    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> usize {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_rows.len() - 1
    }

    /// Adds `row·x ≤ rhs`; returns its index among inequality rows.
    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> usize {
        self.ub_rows.push(row);
        self.ub_rhs.push(rhs);
        self.ub_rows.len() - 1
    }

    /// Adds `row·x ≥ rhs`, stored negated as a `≤` row.
    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) -> usize {
        self.add_le(row.into_iter().map(|v| -v).collect(), -rhs)
    }

    /// Same feasible set, different objective.
    pub fn with_objective(&self, objective: Vec<f64>) -> Self {
        Self {
            objective,
            ..self.clone()
        }
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.eq_rows.len() != self.eq_rhs.len() || self.ub_rows.len() != self.ub_rhs.len() {
            return Err(LpError::DimensionMismatch(
                "row count differs from right-hand side length".into(),
            ));
        }
        for (k, row) in self.eq_rows.iter().chain(&self.ub_rows).enumerate() {
            if row.len() != n {
                return Err(LpError::DimensionMismatch(format!(
                    "row {k} has {} coefficients, expected {n}",
                    row.len()
                )));
            }
        }
        let all = self
            .objective
            .iter()
            .chain(self.eq_rows.iter().flatten())
            .chain(self.ub_rows.iter().flatten())
            .chain(&self.eq_rhs)
            .chain(&self.ub_rhs);
        if let Some(v) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(LpError::NonFinite(format!("value {v}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows (free sign).
    pub eq_duals: Vec<f64>,
    /// Multipliers of the `≤` rows (nonnegative at optimality).
    pub ub_duals: Vec<f64>,
    pub pivots: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Optimality residuals of a reported solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LpAudit {
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub complementary_slackness: f64,
    /// `|c·x − b·y|`.
    pub duality_gap: f64,
}

pub fn audit(p: &LpProblem, sol: &LpSolution) -> LpAudit {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let x = &sol.x;
    let mut primal = x.iter().fold(0.0f64, |m, &v| m.max(-v));
    for (row, &b) in p.eq_rows.iter().zip(&p.eq_rhs) {
        primal = primal.max((dot(row, x) - b).abs());
    }
    let mut cs = 0.0f64;
    for ((row, &b), &y) in p.ub_rows.iter().zip(&p.ub_rhs).zip(&sol.ub_duals) {
        let slack = b - dot(row, x);
        primal = primal.max(-slack);
        cs = cs.max((y * slack).abs());
    }
    let mut dual = sol.ub_duals.iter().fold(0.0f64, |m, &y| m.max(-y));
    for j in 0..p.num_vars() {
        let aty: f64 = p
            .eq_rows
            .iter()
            .zip(&sol.eq_duals)
            .chain(p.ub_rows.iter().zip(&sol.ub_duals))
            .map(|(row, y)| row[j] * y)
            .sum();
        let reduced = aty - p.objective[j];
        dual = dual.max(-reduced);
        cs = cs.max((reduced * x[j]).abs());
    }
    let by = dot(&p.eq_rhs, &sol.eq_duals) + dot(&p.ub_rhs, &sol.ub_duals);
    LpAudit {
        primal_infeasibility: primal,
        dual_infeasibility: dual,
        complementary_slackness: cs,
        duality_gap: (dot(&p.objective, x) - by).abs(),
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    /// Reduced costs `c_j − c_B B⁻¹ A_j`.
    reduced: Vec<f64>,
    value: f64,
    basis: Vec<usize>,
    pivots: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn price(&mut self, cost: &[f64]) {
        let ncols = cost.len();
        self.reduced = cost.to_vec();
        self.value = 0.0;
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for j in 0..ncols {
                    self.reduced[j] -= cb * self.rows[r][j];
                }
                self.value += cb * self.rhs[r];
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let inv = 1.0 / self.rows[r][j];
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        self.rhs[r] *= inv;
        self.rows[r][j] = 1.0;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for k in 0..self.rows.len() {
            if k == r {
                continue;
            }
            let f = self.rows[k][j];
            if f != 0.0 {
                for (v, p) in self.rows[k].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                self.rows[k][j] = 0.0;
                self.rhs[k] -= f * pivot_rhs;
            }
        }
        let d = self.reduced[j];
        if d != 0.0 {
            for (v, p) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= d * p;
            }
            self.reduced[j] = 0.0;
            self.value += d * pivot_rhs;
        }
        self.basis[r] = j;
        self.pivots += 1;
    }

    fn run(&mut self, allowed: &[bool]) -> Result<PhaseEnd, LpError> {
        let mut bland = false;
        let mut degenerate = 0usize;
        loop {
            if self.pivots >= MAX_PIVOTS {
                return Err(LpError::PivotLimit(MAX_PIVOTS));
            }
            let mut entering = None;
            let mut best = PIVOT_TOL;
            for (j, &d) in self.reduced.iter().enumerate() {
                if !allowed[j] || d <= PIVOT_TOL {
                    continue;
                }
                if bland {
                    entering = Some(j);
                    break;
                }
                if d > best {
                    best = d;
                    entering = Some(j);
                }
            }
            let Some(j) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][j];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs[r].max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                        if ratio < lratio && !tie || tie && self.basis[r] < self.basis[lr] {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(r, j);
        }
    }
}

/// Solves `maximize c·x` s.t. `A_eq x = b_eq`, `A_ub x ≤ b_ub`, `x ≥ 0`.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    p.check()?;
    let n = p.num_vars();
    let m_eq = p.eq_rows.len();
    let m_ub = p.ub_rows.len();
    let m = m_eq + m_ub;

    // Normalize every row to a nonnegative right-hand side.
    let mut sign = vec![1.0; m];
    let mut needs_art = vec![false; m];
    for r in 0..m {
        let b = if r < m_eq {
            p.eq_rhs[r]
        } else {
            p.ub_rhs[r - m_eq]
        };
        if b < 0.0 {
            sign[r] = -1.0;
        }
        needs_art[r] = r < m_eq || b < 0.0;
    }
    let n_art = needs_art.iter().filter(|&&a| a).count();
    let ncols = n + m_ub + n_art;

    let mut rows = vec![vec![0.0; ncols]; m];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0usize; m];
    let mut ident_col = vec![0usize; m];
    let mut art = n + m_ub;
    for r in 0..m {
        let (coef, b) = if r < m_eq {
            (&p.eq_rows[r], p.eq_rhs[r])
        } else {
            (&p.ub_rows[r - m_eq], p.ub_rhs[r - m_eq])
        };
        for j in 0..n {
            rows[r][j] = sign[r] * coef[j];
        }
        rhs[r] = sign[r] * b;
        if r >= m_eq {
            rows[r][n + r - m_eq] = sign[r];
        }
        if needs_art[r] {
            rows[r][art] = 1.0;
            basis[r] = art;
            ident_col[r] = art;
            art += 1;
        } else {
            basis[r] = n + r - m_eq;
            ident_col[r] = basis[r];
        }
    }

    let mut t = Tableau {
        rows,
        rhs,
        reduced: vec![0.0; ncols],
        value: 0.0,
        basis,
        pivots: 0,
    };
    let is_art = |j: usize| j >= n + m_ub;

    if n_art > 0 {
        let cost: Vec<f64> = (0..ncols)
            .map(|j| if is_art(j) { -1.0 } else { 0.0 })
            .collect();
        t.price(&cost);
        t.run(&vec![true; ncols])?;
        let scale = 1.0 + t.rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if t.value < -FEAS_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
                eq_duals: vec![0.0; m_eq],
                ub_duals: vec![0.0; m_ub],
                pivots: t.pivots,
            });
        }
        // Drive zero-valued artificials out of the basis where possible.
        for r in 0..m {
            if !is_art(t.basis[r]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n + m_ub {
                let a = t.rows[r][j].abs();
                if a > 1e-9 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((j, _)) = best {
                t.pivot(r, j);
            }
        }
    }

    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&p.objective);
    t.price(&cost);
    let allowed: Vec<bool> = (0..ncols).map(|j| !is_art(j)).collect();
    let end = t.run(&allowed)?;

    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs[r].max(0.0);
        }
    }
    let duals: Vec<f64> = (0..m).map(|r| -sign[r] * t.reduced[ident_col[r]]).collect();
    let status = match end {
        PhaseEnd::Optimal => LpStatus::Optimal,
        PhaseEnd::Unbounded => LpStatus::Unbounded,
    };
    let objective = match status {
        LpStatus::Optimal => p.objective.iter().zip(&x).map(|(c, v)| c * v).sum(),
        _ => f64::INFINITY,
    };
    Ok(LpSolution {
        status,
        x,
        objective,
        eq_duals: duals[..m_eq].to_vec(),
        ub_duals: duals[m_eq..].to_vec(),
        pivots: t.pivots,
    })
}
