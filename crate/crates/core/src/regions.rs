//! Stability threshold, rate-region support values, the unrestricted (C₂)
//! formulation and its constructive reduction to sensing-only policies.

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};
use crate::exec::{self, Parallelism};
use crate::linprog::{solve_lp, LpProblem, LpStatus};
use crate::model::{self, C2Policy, JointPolicy, LevelTable, SystemParams, POLICY_TOL};
use crate::optimizer::{self, Objective};

/// Band around `λ_p = r_p(0) p(1)` that is dispatched to Case 1.
const CASE_BAND: f64 = 1e-12;

/// Optimal solution of the stability LP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub lambda_hat: f64,
    /// Maximizing busy-side allocation `x̂(b,s,i)`.
    pub allocation: LevelTable,
    /// Duals of the per-SU power rows.
    pub power_duals: Vec<f64>,
    /// Dual of the total-mass row.
    pub mass_dual: f64,
    pub pivots: usize,
}

fn level_offsets(params: &SystemParams) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(params.num_sus);
    let mut acc = 0;
    for p in &params.power_levels {
        offsets.push(acc);
        acc += p.len();
    }
    (offsets, acc)
}

fn unflatten(params: &SystemParams, offsets: &[usize], x: &[f64]) -> LevelTable {
    params
        .power_levels
        .iter()
        .zip(offsets)
        .map(|(p, &o)| x[o..o + p.len()].iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Solves `max Σ r_p(s,i) x(b,s,i)` over the per-SU power rows and `Σ x ≤ 1`.
pub fn stability_lp(params: &SystemParams) -> Result<StabilityCertificate> {
    params.check()?;
    let (offsets, n) = level_offsets(params);
    let mut c = vec![0.0; n];
    for (s, &o) in offsets.iter().enumerate() {
        c[o..o + params.num_levels(s)].copy_from_slice(&params.coop_success[s]);
    }
    let mut lp = LpProblem::new(c);
    for (s, &o) in offsets.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[o..o + params.num_levels(s)].copy_from_slice(&params.power_levels[s]);
        lp.add_le(row, params.power_budget[s]);
    }
    lp.add_le(vec![1.0; n], 1.0);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(CoopError::Numeric(format!(
            "stability LP returned {:?}",
            sol.status
        )));
    }
    Ok(StabilityCertificate {
        lambda_hat: sol.objective,
        allocation: unflatten(params, &offsets, &sol.x),
        power_duals: sol.ub_duals[..params.num_sus].to_vec(),
        mass_dual: sol.ub_duals[params.num_sus],
        pivots: sol.pivots,
    })
}

/// `λ̂`: the largest PU arrival rate any sensing-only policy keeps stable.
pub fn max_stable_rate(params: &SystemParams) -> Result<f64> {
    Ok(stability_lp(params)?.lambda_hat)
}

/// Feasible policy at `λ_p ≤ λ̂` obtained by scaling the stability optimum;
/// leftover mass is parked on the idle no-transmission entry of SU 0.
pub fn scaled_stability_policy(params: &SystemParams) -> Result<JointPolicy> {
    let cert = stability_lp(params)?;
    let lambda = params.pu_arrival_rate;
    if lambda > cert.lambda_hat + optimizer::STABILITY_TOL {
        return Err(CoopError::Infeasible(format!(
            "λ_p = {lambda} exceeds λ̂ = {}",
            cert.lambda_hat
        )));
    }
    let scale = if cert.lambda_hat > 0.0 {
        (lambda / cert.lambda_hat).min(1.0)
    } else {
        0.0
    };
    let mut joint = JointPolicy::zeros_like(params);
    for (row, src) in joint.busy.iter_mut().zip(&cert.allocation) {
        for (q, x) in row.iter_mut().zip(src) {
            *q = scale * x;
        }
    }
    joint.idle[0][0] = (1.0 - joint.busy_mass()).max(0.0);
    Ok(joint)
}

/// One support point of the achievable rate region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub direction: Vec<f64>,
    pub rates: Vec<f64>,
    pub value: f64,
}

/// `n` directions `(cos θ, sin θ)` evenly spaced on the closed quarter circle.
pub fn quarter_circle_directions(n: usize) -> Vec<Vec<f64>> {
    let steps = n.saturating_sub(1).max(1) as f64;
    (0..n)
        .map(|k| {
            let theta = std::f64::consts::FRAC_PI_2 * k as f64 / steps;
            let (s, c) = theta.sin_cos();
            vec![c.max(0.0), s.max(0.0)]
        })
        .collect()
}

/// Solves the weighted-sum problem once per direction at `params.pu_arrival_rate`.
pub fn rate_region_boundary(
    params: &SystemParams,
    directions: &[Vec<f64>],
    mode: Parallelism,
) -> Result<Vec<RegionPoint>> {
    params.check()?;
    for w in directions {
        if w.len() != params.num_sus {
            return Err(CoopError::DimensionMismatch(format!(
                "direction has {} entries for {} SUs",
                w.len(),
                params.num_sus
            )));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err(CoopError::InvalidObjective(
                "directions must be nonnegative and nonzero".into(),
            ));
        }
    }
    optimizer::ensure_stable(params)?;
    exec::map(mode, directions, |w| {
        let report = optimizer::solve_opt0(params, &Objective::WeightedSum { weights: w.clone() })?;
        Ok(RegionPoint {
            direction: w.clone(),
            rates: report.rates,
            value: report.objective,
        })
    })
    .into_iter()
    .collect()
}

/// Optimum of the unrestricted-class LP together with a maximizing policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2Solution {
    pub value: f64,
    pub policy: C2Policy,
}

/// `max w·r̄` over stationary policies without PU priority, subject to
/// `Σ r_p p(1,·,·) ≥ λ_p`, the power rows and normalization.
pub fn c2_solve(params: &SystemParams, weights: &[f64]) -> Result<C2Solution> {
    params.check()?;
    Objective::WeightedSum {
        weights: weights.to_vec(),
    }
    .validate(params.num_sus)?;
    let (offsets, total) = level_offsets(params);
    let n = 2 * total;
    let coop = |s: usize, i: usize| offsets[s] + i;
    let tx = |s: usize, i: usize| total + offsets[s] + i;

    let mut c = vec![0.0; n];
    let mut pu = vec![0.0; n];
    for s in 0..params.num_sus {
        for i in 0..params.num_levels(s) {
            c[tx(s, i)] = weights[s] * params.su_success[s][i];
            pu[coop(s, i)] = params.coop_success[s][i];
        }
    }
    let mut lp = LpProblem::new(c);
    lp.add_ge(pu, params.pu_arrival_rate);
    for s in 0..params.num_sus {
        let mut row = vec![0.0; n];
        for i in 0..params.num_levels(s) {
            row[coop(s, i)] = params.power_levels[s][i];
            row[tx(s, i)] = params.power_levels[s][i];
        }
        lp.add_le(row, params.power_budget[s]);
    }
    lp.add_eq(vec![1.0; n], 1.0);

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(CoopError::Infeasible(format!(
                "no C2 policy serves λ_p = {}",
                params.pu_arrival_rate
            )))
        }
        LpStatus::Unbounded => return Err(CoopError::Numeric("C2 LP unbounded".into())),
    }
    Ok(C2Solution {
        value: sol.objective,
        policy: C2Policy {
            cooperate: unflatten(params, &offsets, &sol.x[..total]),
            transmit: unflatten(params, &offsets, &sol.x[total..]),
        },
    })
}

/// Support value of the unrestricted-class region in direction `w`.
pub fn c2_max_weighted_rate(params: &SystemParams, weights: &[f64]) -> Result<f64> {
    Ok(c2_solve(params, weights)?.value)
}

/// Maps a feasible unrestricted-class policy to a sensing-only joint policy
/// with the same SU rates and no more power per SU, meeting the PU rate
/// equality at `λ_p` exactly.
pub fn convert_c2_to_c0(p: &C2Policy, params: &SystemParams, lambda_p: f64) -> Result<JointPolicy> {
    p.check()?;
    params.check_table("cooperate", &p.cooperate)?;
    let r0 = params.solo_success;
    let pu_rate = p.pu_rate(params);
    if pu_rate < lambda_p - POLICY_TOL {
        return Err(CoopError::InvalidPolicy(format!(
            "policy serves the PU at {pu_rate} < λ_p = {lambda_p}"
        )));
    }
    for (s, (&used, &cap)) in p
        .avg_power(params)
        .iter()
        .zip(&params.power_budget)
        .enumerate()
    {
        if used > cap + POLICY_TOL {
            return Err(CoopError::InvalidPolicy(format!(
                "SU {s} uses power {used} above its budget {cap}"
            )));
        }
    }

    let p1 = p.pu_share();
    let p1_by_su: Vec<f64> = p.cooperate.iter().map(|r| r.iter().sum()).collect();

    if (lambda_p - pu_rate).abs() <= CASE_BAND {
        return Ok(JointPolicy::from_raw(
            p.transmit.clone(),
            p.cooperate.clone(),
        ));
    }

    let solo = r0 * p1;
    if lambda_p >= solo - CASE_BAND {
        // λ_p = α r̄_p + (1 − α) r_p(0) p(1); the sum in r̄_p runs over
        // every level, level 0 included, which is what makes the identity hold.
        let alpha = ((lambda_p - solo) / (pu_rate - solo)).clamp(0.0, 1.0);
        let busy = p
            .cooperate
            .iter()
            .zip(&p1_by_su)
            .map(|(row, &ps)| {
                let mut out: Vec<f64> = row.iter().map(|v| alpha * v).collect();
                out[0] = alpha * row[0] + (1.0 - alpha) * ps;
                out
            })
            .collect();
        return Ok(JointPolicy::from_raw(p.transmit.clone(), busy));
    }

    if p1 >= 1.0 {
        return Err(CoopError::InvalidPolicy("Case 2 requires p(1) < 1".into()));
    }
    let scale = lambda_p / solo;
    let beta = (1.0 - lambda_p / r0) / (1.0 - p1) - 1.0;
    let busy = p1_by_su
        .iter()
        .zip(&p.cooperate)
        .map(|(&ps, row)| {
            let mut out = vec![0.0; row.len()];
            out[0] = scale * ps;
            out
        })
        .collect();
    let idle = p
        .transmit
        .iter()
        .map(|row| {
            let mut out = row.clone();
            out[0] = beta * row.iter().sum::<f64>() + row[0];
            out
        })
        .collect();
    Ok(JointPolicy::from_raw(idle, busy))
}

/// Rates and powers of a C₂ policy as seen through the joint-form evaluators.
pub fn c2_as_joint(p: &C2Policy) -> JointPolicy {
    JointPolicy::from_raw(p.transmit.clone(), p.cooperate.clone())
}

/// Sanity helper used by tests and the CLI: SU rates of both forms.
pub fn conversion_rate_gap(
    p: &C2Policy,
    converted: &JointPolicy,
    params: &SystemParams,
) -> Result<f64> {
    let a = p.su_rates(params);
    let b = model::su_rates(converted, params)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
