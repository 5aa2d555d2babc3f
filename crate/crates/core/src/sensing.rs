//! Policy optimization under imperfect cooperative sensing.
//!
//! With detection probability `P_D` and false-alarm probability `P_F`, the
//! PU-rate equality and power rows are bilinear in `q_b` and the conditional
//! tables. Pinning `q_b` leaves a linear feasible set whose optimum is
//! `g(q_b)`; the outer problem is a one-dimensional search over the interval
//! on which `g` can be finite.

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};
use crate::exec::{self, Parallelism};
use crate::linprog::{solve_lp, LpProblem, LpStatus};
use crate::model::{dot_table, row_dots, ConditionalPolicy, LevelTable, SystemParams};
use crate::optimizer::{fw_maximize, FwOptions, Objective};

/// Tolerance of the midpoint-concavity test on sampled `g`.
pub const CONCAVITY_TOL: f64 = 1e-9;
pub const DEFAULT_GRID_POINTS: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingModel {
    /// `P_D`: sensed busy given the channel is busy.
    pub p_detect: f64,
    /// `P_F`: sensed busy given the channel is idle.
    pub p_false_alarm: f64,
}

impl SensingModel {
    pub const PERFECT: SensingModel = SensingModel {
        p_detect: 1.0,
        p_false_alarm: 0.0,
    };

    pub fn new(p_detect: f64, p_false_alarm: f64) -> Result<Self> {
        let m = Self {
            p_detect,
            p_false_alarm,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("p_detect", self.p_detect),
            ("p_false_alarm", self.p_false_alarm),
        ] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(CoopError::InvalidParams(format!(
                    "{name} = {v} not in [0,1]"
                )));
            }
        }
        Ok(())
    }

    /// Probability the channel is sensed busy when the PU is busy w.p. `q_b`.
    pub fn sensed_busy(&self, q_b: f64) -> f64 {
        q_b * self.p_detect + (1.0 - q_b) * self.p_false_alarm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Necessary range of `q_b` for the PU-rate equality to be satisfiable.
pub fn qb_bounds(params: &SystemParams, sensing: &SensingModel) -> Result<Interval> {
    params.check()?;
    sensing.check()?;
    let lambda = params.pu_arrival_rate;
    let pd = sensing.p_detect;
    let r0 = params.solo_success;
    if pd == 0.0 && lambda > 0.0 {
        return Err(CoopError::InvalidParams(
            "p_detect = 0: cooperation is never triggered by a busy channel".into(),
        ));
    }
    if lambda == 0.0 {
        return Ok(Interval { lo: 0.0, hi: 0.0 });
    }
    let rp_max = params.max_coop_success();
    let lo = lambda / (pd * rp_max + (1.0 - pd) * r0);
    let hi = if pd * r0 > 0.0 {
        (lambda / (pd * r0)).min(1.0)
    } else {
        1.0
    };
    Ok(Interval { lo, hi })
}

/// Analytic rates and powers of a conditional policy under imperfect sensing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingEvaluation {
    /// PU departures per slot.
    pub pu_throughput: f64,
    pub su_rates: Vec<f64>,
    pub powers: Vec<f64>,
}

pub fn evaluate(
    params: &SystemParams,
    sensing: &SensingModel,
    policy: &ConditionalPolicy,
) -> Result<SensingEvaluation> {
    params.check_table("cond_busy", &policy.cond_busy)?;
    params.check_table("cond_idle", &policy.cond_idle)?;
    let qb = policy.busy_prob;
    let qe = 1.0 - qb;
    let pd = sensing.p_detect;
    let pf = sensing.p_false_alarm;
    let idle_level0: f64 = policy.cond_idle.iter().map(|r| r[0]).sum();
    let pu_throughput = qb * pd * dot_table(&params.coop_success, &policy.cond_busy)
        + qb * (1.0 - pd) * params.solo_success * idle_level0;
    let su_rates = row_dots(&params.su_success, &policy.cond_idle)
        .into_iter()
        .map(|r| qe * (1.0 - pf) * r)
        .collect();
    let a = sensing.sensed_busy(qb);
    let pb = row_dots(&params.power_levels, &policy.cond_busy);
    let pi = row_dots(&params.power_levels, &policy.cond_idle);
    let powers = pb
        .iter()
        .zip(&pi)
        .map(|(b, i)| a * b + (1.0 - a) * i)
        .collect();
    Ok(SensingEvaluation {
        pu_throughput,
        su_rates,
        powers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub q_b: f64,
    pub value: f64,
    pub policy: ConditionalPolicy,
    pub rates: Vec<f64>,
}

struct Layout {
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(params: &SystemParams) -> Self {
        let mut offsets = Vec::new();
        let mut acc = 0;
        for p in &params.power_levels {
            offsets.push(acc);
            acc += p.len();
        }
        Self {
            offsets,
            total: acc,
        }
    }

    fn busy(&self, s: usize, i: usize) -> usize {
        self.offsets[s] + i
    }

    fn idle(&self, s: usize, i: usize) -> usize {
        self.total + self.offsets[s] + i
    }

    fn tables(&self, params: &SystemParams, x: &[f64]) -> (LevelTable, LevelTable) {
        let read = |f: &dyn Fn(usize, usize) -> usize| -> LevelTable {
            params
                .power_levels
                .iter()
                .enumerate()
                .map(|(s, p)| (0..p.len()).map(|i| x[f(s, i)].max(0.0)).collect())
                .collect()
        };
        (read(&|s, i| self.busy(s, i)), read(&|s, i| self.idle(s, i)))
    }
}

/// `g(q_b)`: optimum of the fixed-`q_b` problem, or `None` when infeasible.
pub fn g_of_qb(
    params: &SystemParams,
    sensing: &SensingModel,
    q_b: f64,
    objective: &Objective,
) -> Result<Option<InnerSolution>> {
    params.check()?;
    sensing.check()?;
    objective.validate(params.num_sus)?;
    if objective.caps().is_some() {
        return Err(CoopError::InvalidObjective(
            "saturated objectives are not supported under imperfect sensing".into(),
        ));
    }
    if !(q_b.is_finite() && (0.0..=1.0).contains(&q_b)) {
        return Err(CoopError::InvalidParams(format!(
            "q_b = {q_b} not in [0,1]"
        )));
    }
    let layout = Layout::new(params);
    let n = 2 * layout.total;
    let qe = 1.0 - q_b;
    let pd = sensing.p_detect;
    let pf = sensing.p_false_alarm;
    let a = sensing.sensed_busy(q_b);

    let mut lp = LpProblem::new(vec![0.0; n]);
    let mut pu = vec![0.0; n];
    for s in 0..params.num_sus {
        for i in 0..params.num_levels(s) {
            pu[layout.busy(s, i)] = q_b * pd * params.coop_success[s][i];
        }
        pu[layout.idle(s, 0)] = q_b * (1.0 - pd) * params.solo_success;
    }
    lp.add_eq(pu, params.pu_arrival_rate);
    for s in 0..params.num_sus {
        let mut row = vec![0.0; n];
        for i in 0..params.num_levels(s) {
            row[layout.busy(s, i)] = a * params.power_levels[s][i];
            row[layout.idle(s, i)] = (1.0 - a) * params.power_levels[s][i];
        }
        lp.add_le(row, params.power_budget[s]);
    }
    let mut busy_sum = vec![0.0; n];
    busy_sum[..layout.total].fill(1.0);
    lp.add_eq(busy_sum, 1.0);
    let mut idle_sum = vec![0.0; n];
    idle_sum[layout.total..].fill(1.0);
    lp.add_eq(idle_sum, 1.0);

    let scale = qe * (1.0 - pf);
    let map: Vec<Vec<(usize, f64)>> = (0..params.num_sus)
        .map(|s| {
            (1..params.num_levels(s))
                .map(|i| (layout.idle(s, i), scale * params.su_success[s][i]))
                .collect()
        })
        .collect();

    let x = match objective {
        Objective::WeightedSum { weights } => {
            let mut c = vec![0.0; n];
            for (row, w) in map.iter().zip(weights) {
                for &(j, coef) in row {
                    c[j] += w * coef;
                }
            }
            let sol = solve_lp(&lp.with_objective(c))?;
            match sol.status {
                LpStatus::Optimal => sol.x,
                LpStatus::Infeasible => return Ok(None),
                LpStatus::Unbounded => {
                    return Err(CoopError::Numeric("fixed-q_b LP unbounded".into()))
                }
            }
        }
        _ => match fw_maximize(&lp, &map, objective, &FwOptions::default()) {
            Ok(r) => r.x,
            Err(CoopError::Infeasible(_)) => return Ok(None),
            Err(e) => return Err(e),
        },
    };

    let (cond_busy, cond_idle) = layout.tables(params, &x);
    let policy = ConditionalPolicy {
        busy_prob: q_b,
        cond_busy,
        cond_idle,
    }
    .normalized();
    let rates = evaluate(params, sensing, &policy)?.su_rates;
    Ok(Some(InnerSolution {
        q_b,
        value: objective.value(&rates),
        policy,
        rates,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Search {
    /// Exhaustive evaluation on `points` equispaced values, then a local
    /// golden-section refinement around the best sample.
    Grid { points: usize },
    /// Golden-section narrowing to width `tol`; assumes `g` unimodal.
    Ternary { tol: f64 },
}

impl Default for Search {
    fn default() -> Self {
        Search::Grid {
            points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityDiagnostic {
    /// Interior samples whose neighbours were both feasible.
    pub checked: usize,
    pub violations: usize,
}

impl ConcavityDiagnostic {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }

    pub fn passes(&self) -> bool {
        self.violations == 0
    }
}

/// Midpoint concavity of a sampled curve (sorted by abscissa); infeasible
/// samples break the chain.
pub fn concavity_diagnostic(curve: &[(f64, Option<f64>)]) -> ConcavityDiagnostic {
    let mut checked = 0;
    let mut violations = 0;
    for w in curve.windows(3) {
        let ((x0, Some(g0)), (x1, Some(g1)), (x2, Some(g2))) = (w[0], w[1], w[2]) else {
            continue;
        };
        if x2 <= x0 {
            continue;
        }
        let t = (x1 - x0) / (x2 - x0);
        let chord = (1.0 - t) * g0 + t * g2;
        checked += 1;
        if g1 < chord - CONCAVITY_TOL {
            violations += 1;
        }
    }
    ConcavityDiagnostic {
        checked,
        violations,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingSolveReport {
    pub interval: Interval,
    pub best: InnerSolution,
    /// Every evaluated `(q_b, g(q_b))`, sorted by `q_b`.
    pub curve: Vec<(f64, Option<f64>)>,
    pub concavity: ConcavityDiagnostic,
    pub evaluations: usize,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

struct Evaluator<'a> {
    params: &'a SystemParams,
    sensing: &'a SensingModel,
    objective: &'a Objective,
    samples: Vec<(f64, Option<InnerSolution>)>,
}

impl Evaluator<'_> {
    fn eval(&mut self, q: f64) -> Result<f64> {
        let sol = g_of_qb(self.params, self.sensing, q, self.objective)?;
        let v = sol.as_ref().map_or(f64::NEG_INFINITY, |s| s.value);
        self.samples.push((q, sol));
        Ok(v)
    }

    /// Golden-section maximization on `[a, b]`.
    fn golden(&mut self, mut a: f64, mut b: f64, tol: f64) -> Result<()> {
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let mut fc = self.eval(c)?;
        let mut fd = self.eval(d)?;
        while b - a > tol {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = self.eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = self.eval(d)?;
            }
        }
        Ok(())
    }
}

fn clip_interval(iv: Interval) -> Interval {
    Interval {
        lo: iv.lo.clamp(0.0, 1.0),
        hi: iv.hi.clamp(0.0, 1.0),
    }
}

/// Maximizes `g(q_b)` over the admissible interval.
pub fn solve_opt1(
    params: &SystemParams,
    sensing: &SensingModel,
    objective: &Objective,
    search: Search,
    mode: Parallelism,
) -> Result<SensingSolveReport> {
    let interval = qb_bounds(params, sensing)?;
    if interval.is_empty() {
        return Err(CoopError::Infeasible(format!(
            "q_b interval [{}, {}] is empty",
            interval.lo, interval.hi
        )));
    }
    let iv = clip_interval(interval);
    let mut ev = Evaluator {
        params,
        sensing,
        objective,
        samples: Vec::new(),
    };

    let grid = |m: usize| -> Vec<f64> {
        if m <= 1 || iv.width() == 0.0 {
            return vec![iv.lo];
        }
        (0..m)
            .map(|k| iv.lo + iv.width() * k as f64 / (m - 1) as f64)
            .collect()
    };
    let (points, golden_tol) = match search {
        Search::Grid { points } => (grid(points.max(2)), 1e-12),
        Search::Ternary { tol } => {
            if !(tol > 0.0) {
                return Err(CoopError::InvalidParams(
                    "ternary tolerance must be > 0".into(),
                ));
            }
            (grid(9), tol)
        }
    };
    let sampled: Vec<Result<Option<InnerSolution>>> =
        exec::map(mode, &points, |&q| g_of_qb(params, sensing, q, objective));
    for (q, r) in points.iter().zip(sampled) {
        ev.samples.push((*q, r?));
    }
    let best_idx = ev
        .samples
        .iter()
        .enumerate()
        .filter_map(|(k, (_, s))| s.as_ref().map(|s| (k, s.value)))
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k);
    let Some(k) = best_idx else {
        return Err(CoopError::Infeasible(
            "g(q_b) infeasible at every sampled q_b".into(),
        ));
    };
    if points.len() > 1 {
        let a = points[k.saturating_sub(1)];
        let b = points[(k + 1).min(points.len() - 1)];
        if b > a {
            ev.golden(a, b, golden_tol)?;
        }
    }

    let mut samples = ev.samples;
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = samples
        .iter()
        .filter_map(|(_, s)| s.as_ref())
        .fold(None::<&InnerSolution>, |acc, s| match acc {
            Some(b) if b.value >= s.value => Some(b),
            _ => Some(s),
        })
        .cloned()
        .expect("at least one feasible sample");
    let curve: Vec<(f64, Option<f64>)> = samples
        .iter()
        .map(|(q, s)| (*q, s.as_ref().map(|s| s.value)))
        .collect();
    let concavity = match search {
        Search::Grid { .. } => {
            let on_grid: Vec<(f64, Option<f64>)> = curve
                .iter()
                .filter(|(q, _)| points.iter().any(|p| p == q))
                .copied()
                .collect();
            concavity_diagnostic(&on_grid)
        }
        Search::Ternary { .. } => concavity_diagnostic(&curve),
    };
    Ok(SensingSolveReport {
        interval,
        best,
        evaluations: curve.len(),
        curve,
        concavity,
    })
}
