//! Centralized policy optimization over the joint-probability polytope:
//!
//! ```text
//! maximize   f(r̄),  r̄_s = Σ_i r_s(i) q(e,s,i)
//! subject to Σ r_p(s,i) q(b,s,i) = λ_p
//!            Σ_i P_s(i) (q(e,s,i) + q(b,s,i)) ≤ P̂_s     for every s
//!            Σ q(e,·,·) + Σ q(b,·,·) = 1,  q ≥ 0
//! ```
//!
//! Linear utilities go straight to the simplex solver; concave ones use
//! Frank–Wolfe over the same polytope. Saturated (exogenous-arrival)
//! objectives add throughput variables `R_s ≤ λ_s`, `R_s ≤ r̄_s`.

mod frank_wolfe;
mod objective;

use serde::{Deserialize, Serialize};

pub use frank_wolfe::{FwOptions, FwResult, RateMap, StepRule};
pub use objective::{Objective, DEFAULT_LOG_OFFSET};

pub(crate) use frank_wolfe::maximize as fw_maximize;

use crate::error::{CoopError, Result};
use crate::linprog::{solve_lp, LpProblem, LpStatus};
use crate::model::{self, FeasibilityAudit, JointPolicy, LevelTable, SystemParams};
use crate::regions;

/// Slack allowed between `λ_p` and the computed stability threshold.
pub const STABILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Iterative method stopped at its cap before meeting its tolerance.
    IterationLimit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Simplex for linear utilities, Frank–Wolfe otherwise.
    #[default]
    Auto,
    FrankWolfe,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: Method,
    pub frank_wolfe: FwOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub policy: JointPolicy,
    /// Objective evaluated at the returned policy.
    pub objective: f64,
    /// Offered SU rates `r̄_s`.
    pub rates: Vec<f64>,
    /// Average power `P̄_s`.
    pub powers: Vec<f64>,
    /// `min(λ_s, r̄_s)` for saturated objectives.
    pub throughput: Option<Vec<f64>>,
    /// Flow-control admission probabilities `p_s^a` for saturated objectives.
    pub admission: Option<Vec<f64>>,
    pub iterations: usize,
    /// Certified suboptimality bound; zero for simplex solutions, absent
    /// for methods without a certificate.
    pub gap: Option<f64>,
    pub audit: FeasibilityAudit,
}

/// Variable layout of the joint-probability polytope.
#[derive(Clone, Debug)]
pub(crate) struct JointLayout {
    offsets: Vec<usize>,
    levels: Vec<usize>,
    total: usize,
    caps: bool,
}

impl JointLayout {
    pub(crate) fn new(params: &SystemParams, caps: bool) -> Self {
        let levels: Vec<usize> = params.power_levels.iter().map(Vec::len).collect();
        let mut offsets = Vec::with_capacity(levels.len());
        let mut acc = 0;
        for &l in &levels {
            offsets.push(acc);
            acc += l;
        }
        Self {
            offsets,
            levels,
            total: acc,
            caps,
        }
    }

    pub(crate) fn idle(&self, s: usize, i: usize) -> usize {
        self.offsets[s] + i
    }

    pub(crate) fn busy(&self, s: usize, i: usize) -> usize {
        self.total + self.offsets[s] + i
    }

    pub(crate) fn throughput(&self, s: usize) -> usize {
        2 * self.total + s
    }

    pub(crate) fn num_vars(&self) -> usize {
        2 * self.total + if self.caps { self.levels.len() } else { 0 }
    }

    /// `r̄_s` as a sparse row.
    pub(crate) fn offered_rate(&self, params: &SystemParams, s: usize) -> Vec<(usize, f64)> {
        (1..self.levels[s])
            .map(|i| (self.idle(s, i), params.su_success[s][i]))
            .collect()
    }

    /// Coordinates the utility is applied to: `R_s` when capped, else `r̄_s`.
    pub(crate) fn utility_map(&self, params: &SystemParams) -> RateMap {
        (0..self.levels.len())
            .map(|s| {
                if self.caps {
                    vec![(self.throughput(s), 1.0)]
                } else {
                    self.offered_rate(params, s)
                }
            })
            .collect()
    }

    pub(crate) fn decode(&self, x: &[f64]) -> JointPolicy {
        let table = |base: usize| -> LevelTable {
            self.levels
                .iter()
                .enumerate()
                .map(|(s, &l)| {
                    (0..l)
                        .map(|i| x[base + self.offsets[s] + i].max(0.0))
                        .collect()
                })
                .collect()
        };
        JointPolicy::from_raw(table(0), table(self.total))
    }

    /// Constraint rows with a zero objective.
    pub(crate) fn constraints(&self, params: &SystemParams, caps: Option<&[f64]>) -> LpProblem {
        let n = self.num_vars();
        let mut lp = LpProblem::new(vec![0.0; n]);

        let mut pu = vec![0.0; n];
        for (s, &l) in self.levels.iter().enumerate() {
            for i in 0..l {
                pu[self.busy(s, i)] = params.coop_success[s][i];
            }
        }
        lp.add_eq(pu, params.pu_arrival_rate);

        for (s, &l) in self.levels.iter().enumerate() {
            let mut row = vec![0.0; n];
            for i in 1..l {
                row[self.idle(s, i)] = params.power_levels[s][i];
                row[self.busy(s, i)] = params.power_levels[s][i];
            }
            lp.add_le(row, params.power_budget[s]);
        }

        let mut mass = vec![0.0; n];
        mass[..2 * self.total].fill(1.0);
        lp.add_eq(mass, 1.0);

        if let Some(caps) = caps {
            for (s, &cap) in caps.iter().enumerate() {
                let mut bound = vec![0.0; n];
                bound[self.throughput(s)] = 1.0;
                lp.add_le(bound, cap);
                let mut link = vec![0.0; n];
                link[self.throughput(s)] = 1.0;
                for (j, c) in self.offered_rate(params, s) {
                    link[j] = -c;
                }
                lp.add_le(link, 0.0);
            }
        }
        lp
    }
}

fn linear_objective(map: &RateMap, weights: &[f64], n: usize) -> Vec<f64> {
    frank_wolfe::pullback(map, weights, n)
}

/// Assembles a report from a policy, evaluating every quantity with the
/// model evaluators.
pub(crate) fn report_for(
    params: &SystemParams,
    objective: &Objective,
    policy: JointPolicy,
    status: SolveStatus,
    iterations: usize,
    gap: Option<f64>,
) -> Result<SolveReport> {
    let rates = model::su_rates(&policy, params)?;
    let powers = model::avg_power(&policy, params)?;
    let audit = FeasibilityAudit::of(&policy, params)?;
    let (value, throughput, admission) = match objective.caps() {
        Some(caps) => {
            let thr: Vec<f64> = rates.iter().zip(caps).map(|(r, c)| r.min(*c)).collect();
            let adm: Vec<f64> = thr
                .iter()
                .zip(caps)
                .map(|(t, c)| if *c > 0.0 { t / c } else { 1.0 })
                .collect();
            (objective.utility().value(&thr), Some(thr), Some(adm))
        }
        None => (objective.value(&rates), None, None),
    };
    Ok(SolveReport {
        status,
        policy,
        objective: value,
        rates,
        powers,
        throughput,
        admission,
        iterations,
        gap,
        audit,
    })
}

/// Fails with `Infeasible` when `λ_p` exceeds the stability threshold.
pub(crate) fn ensure_stable(params: &SystemParams) -> Result<f64> {
    let lambda_hat = regions::max_stable_rate(params)?;
    if params.pu_arrival_rate > lambda_hat + STABILITY_TOL {
        return Err(CoopError::Infeasible(format!(
            "λ_p = {} exceeds the stability threshold {lambda_hat}",
            params.pu_arrival_rate
        )));
    }
    Ok(lambda_hat)
}

pub fn solve_opt0(params: &SystemParams, objective: &Objective) -> Result<SolveReport> {
    solve_opt0_with(params, objective, &SolveOptions::default())
}

pub fn solve_opt0_with(
    params: &SystemParams,
    objective: &Objective,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    params.check()?;
    objective.validate(params.num_sus)?;
    ensure_stable(params)?;

    let caps = objective.caps();
    let layout = JointLayout::new(params, caps.is_some());
    let constraints = layout.constraints(params, caps);
    let map = layout.utility_map(params);
    let n = layout.num_vars();

    let use_lp = objective.is_linear() && opts.method == Method::Auto;
    if use_lp {
        let Objective::WeightedSum { weights } = objective.utility() else {
            unreachable!("linear objectives are weighted sums");
        };
        let lp = constraints.with_objective(linear_objective(&map, weights, n));
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Err(CoopError::Infeasible(
                    "OPT0 constraints are infeasible".into(),
                ))
            }
            LpStatus::Unbounded => {
                return Err(CoopError::Numeric("OPT0 reported unbounded".into()))
            }
        }
        let mut x = sol.x;
        let mut pivots = sol.pivots;
        if let Some(caps) = caps {
            let (x2, p2) = maximize_queue_slack(params, &layout, &lp, sol.objective, caps)?;
            x = x2;
            pivots += p2;
        }
        return report_for(
            params,
            objective,
            layout.decode(&x),
            SolveStatus::Optimal,
            pivots,
            Some(0.0),
        );
    }

    let fw = fw_maximize(&constraints, &map, objective.utility(), &opts.frank_wolfe)?;
    let status = if fw.converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::IterationLimit
    };
    report_for(
        params,
        objective,
        layout.decode(&fw.x),
        status,
        fw.iterations,
        Some(fw.gap),
    )
}

/// Among throughput-optimal policies, maximizes the smallest margin
/// `r̄_s − R_s` over SUs with positive arrival rate.
fn maximize_queue_slack(
    params: &SystemParams,
    layout: &JointLayout,
    stage_one: &LpProblem,
    optimum: f64,
    caps: &[f64],
) -> Result<(Vec<f64>, usize)> {
    let n = layout.num_vars();
    let extend = |row: &Vec<f64>, t: f64| {
        let mut r = row.clone();
        r.push(t);
        r
    };
    let mut lp = LpProblem::new(vec![0.0; n + 1]);
    lp.objective[n] = 1.0;
    for (row, &b) in stage_one.eq_rows.iter().zip(&stage_one.eq_rhs) {
        lp.add_eq(extend(row, 0.0), b);
    }
    for (row, &b) in stage_one.ub_rows.iter().zip(&stage_one.ub_rhs) {
        lp.add_le(extend(row, 0.0), b);
    }
    lp.add_ge(
        extend(&stage_one.objective, 0.0),
        optimum - 1e-10 * (1.0 + optimum.abs()),
    );
    for (s, &cap) in caps.iter().enumerate() {
        if cap <= 0.0 {
            continue;
        }
        let mut row = vec![0.0; n + 1];
        row[layout.throughput(s)] = 1.0;
        for (j, c) in layout.offered_rate(params, s) {
            row[j] = -c;
        }
        row[n] = 1.0;
        lp.add_le(row, 0.0);
    }
    let sol = solve_lp(&lp)?;
    if !sol.is_optimal() {
        return Err(CoopError::Numeric("slack stage failed".into()));
    }
    let mut x = sol.x;
    x.truncate(n);
    Ok((x, sol.pivots))
}

/// Throughput maximization with exogenous SU arrivals `λ_s`: maximizes
/// `utility(min(λ_s, r̄_s))` and reports admission probabilities.
pub fn solve_throughput(
    params: &SystemParams,
    su_arrivals: &[f64],
    utility: &Objective,
) -> Result<SolveReport> {
    if matches!(utility, Objective::Saturated { .. }) {
        return Err(CoopError::InvalidObjective(
            "pass the unsaturated utility; arrivals supply the caps".into(),
        ));
    }
    solve_opt0(
        params,
        &Objective::saturated(utility.clone(), su_arrivals.to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn saturation_at_full_load_leaves_no_idle_mass() {
        let p = reference::fig3_params();
        let lambda_hat = regions::max_stable_rate(&p).unwrap();
        let r = solve_opt0(&p.with_arrival_rate(lambda_hat), &Objective::sum_rate(5)).unwrap();
        assert!(r.objective.abs() < 1e-9);
        assert!(r.policy.idle_mass() < 1e-9);
    }

    #[test]
    fn above_threshold_is_infeasible() {
        let p = reference::fig3_params().with_arrival_rate(0.71);
        assert!(matches!(
            solve_opt0(&p, &Objective::sum_rate(5)),
            Err(CoopError::Infeasible(_))
        ));
    }

    #[test]
    fn zero_arrivals_reduce_to_per_su_power_knapsacks() {
        // With λ_p = 0 every busy entry is forced to zero and the SUs only
        // share the mass row.
        let p = reference::fig2_params(2).with_arrival_rate(0.0);
        let r = solve_opt0(&p, &Objective::sum_rate(2)).unwrap();
        assert!(r.policy.busy_mass() < 1e-12);
        assert!(r.audit.within(1e-9, 1e-9));
    }

    #[test]
    fn report_quantities_match_evaluators() {
        let p = reference::fig2_params(2);
        let r = solve_opt0(&p, &Objective::sum_rate(2)).unwrap();
        let rates = model::su_rates(&r.policy, &p).unwrap();
        assert!((r.objective - rates.iter().sum::<f64>()).abs() < 1e-12);
        assert!(r.audit.pu_rate_residual.abs() <= 1e-8);
        assert!(r.audit.mass_residual.abs() <= 1e-9);
        assert!(r.audit.power_slack.iter().all(|&s| s >= -1e-9));
    }

    #[test]
    fn zero_arrival_su_gets_unit_admission() {
        let p = reference::fig3_params();
        let r =
            solve_throughput(&p, &[0.0, 0.01, 0.01, 0.01, 0.01], &Objective::sum_rate(5)).unwrap();
        let thr = r.throughput.unwrap();
        let adm = r.admission.unwrap();
        assert_eq!(thr[0], 0.0);
        assert_eq!(adm[0], 1.0);
        assert!((r.objective - 0.04).abs() < 1e-9);
    }
}
