//! System parameters, policy representations and the analytic evaluators.
//!
//! Level tables are ragged: SU `s` owns `power_levels[s].len()` levels and
//! level 0 is always present (zero power, "no transmission"/"no cooperation").
//! Every policy table carries level 0 explicitly so the simplex constraint
//! over all entries stays meaningful.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};

/// Absolute tolerance on policy normalization sums.
pub const POLICY_TOL: f64 = 1e-9;

/// One row per SU, one entry per power level (level 0 included).
pub type LevelTable = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub num_sus: usize,
    /// `P_s(i)`; `power_levels[s][0]` must be 0.
    pub power_levels: LevelTable,
    /// `r_s(i)`, success of SU `s`'s own packet at level `i`.
    pub su_success: LevelTable,
    /// `r_p(s, i)`, PU success when SU `s` cooperates at level `i`.
    pub coop_success: LevelTable,
    /// `r_p(0)`, PU success without cooperation.
    pub solo_success: f64,
    /// Long-term average power cap per SU.
    pub power_budget: Vec<f64>,
    /// Mean PU packet arrivals per slot.
    pub pu_arrival_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub su: Option<usize>,
    pub level: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.su, self.level) {
            (Some(s), Some(i)) => write!(f, "{} at ({s},{i})", self.message),
            (Some(s), None) => write!(f, "{} at su {s}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

fn is_prob(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

impl SystemParams {
    /// Builds parameters where every SU shares the same level tables.
    pub fn homogeneous(
        num_sus: usize,
        power_levels: &[f64],
        su_success: &[f64],
        coop_success: &[f64],
        solo_success: f64,
        power_budget: f64,
        pu_arrival_rate: f64,
    ) -> Self {
        Self {
            num_sus,
            power_levels: vec![power_levels.to_vec(); num_sus],
            su_success: vec![su_success.to_vec(); num_sus],
            coop_success: vec![coop_success.to_vec(); num_sus],
            solo_success,
            power_budget: vec![power_budget; num_sus],
            pu_arrival_rate,
        }
    }

    pub fn num_levels(&self, su: usize) -> usize {
        self.power_levels[su].len()
    }

    /// Total number of (su, level) pairs, level 0 included.
    pub fn total_levels(&self) -> usize {
        self.power_levels.iter().map(Vec::len).sum()
    }

    /// `max_{s,i} r_p(s,i)`.
    pub fn max_coop_success(&self) -> f64 {
        self.coop_success
            .iter()
            .flatten()
            .copied()
            .fold(self.solo_success, f64::max)
    }

    pub fn with_arrival_rate(&self, lambda_p: f64) -> Self {
        Self {
            pu_arrival_rate: lambda_p,
            ..self.clone()
        }
    }

    /// Returns every violated model assumption. An empty list means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field, su, level, message: String| {
            out.push(Violation {
                field,
                su,
                level,
                message,
            })
        };

        if self.num_sus == 0 {
            push("num_sus", None, None, "num_sus must be at least 1".into());
        }
        let tables: [(&'static str, &LevelTable); 3] = [
            ("power_levels", &self.power_levels),
            ("su_success", &self.su_success),
            ("coop_success", &self.coop_success),
        ];
        for (name, table) in tables {
            if table.len() != self.num_sus {
                push(
                    name,
                    None,
                    None,
                    format!("{name} has {} rows, expected {}", table.len(), self.num_sus),
                );
            }
        }
        if self.power_budget.len() != self.num_sus {
            push(
                "power_budget",
                None,
                None,
                format!(
                    "power_budget has {} entries, expected {}",
                    self.power_budget.len(),
                    self.num_sus
                ),
            );
        }
        if !is_prob(self.solo_success) {
            push(
                "solo_success",
                None,
                None,
                "solo_success not in [0,1]".into(),
            );
        }
        if !(self.pu_arrival_rate.is_finite() && self.pu_arrival_rate >= 0.0) {
            push(
                "pu_arrival_rate",
                None,
                None,
                "pu_arrival_rate must be finite and >= 0".into(),
            );
        }

        let rows = self
            .num_sus
            .min(self.power_levels.len())
            .min(self.su_success.len())
            .min(self.coop_success.len());
        for s in 0..rows {
            let p = &self.power_levels[s];
            let rs = &self.su_success[s];
            let rp = &self.coop_success[s];
            if p.is_empty() {
                push("power_levels", Some(s), None, "no power levels".into());
                continue;
            }
            if rs.len() != p.len() || rp.len() != p.len() {
                push(
                    "su_success",
                    Some(s),
                    None,
                    "level tables have mismatched lengths".into(),
                );
                continue;
            }
            if p[0] != 0.0 {
                push(
                    "power_levels",
                    Some(s),
                    Some(0),
                    "power level 0 must be 0".into(),
                );
            }
            if rs[0] != 0.0 {
                push(
                    "su_success",
                    Some(s),
                    Some(0),
                    "su_success at level 0 must be 0".into(),
                );
            }
            if (rp[0] - self.solo_success).abs() > POLICY_TOL {
                push(
                    "coop_success",
                    Some(s),
                    Some(0),
                    "coop_success at level 0 must equal solo_success".into(),
                );
            }
            for i in 0..p.len() {
                if !(p[i].is_finite() && p[i] >= 0.0) {
                    push(
                        "power_levels",
                        Some(s),
                        Some(i),
                        "power must be finite and >= 0".into(),
                    );
                }
                if !is_prob(rs[i]) {
                    push(
                        "su_success",
                        Some(s),
                        Some(i),
                        "su_success not in [0,1]".into(),
                    );
                }
                if !is_prob(rp[i]) {
                    push(
                        "coop_success",
                        Some(s),
                        Some(i),
                        "coop_success not in [0,1]".into(),
                    );
                }
                if i > 0 {
                    if p[i] <= p[i - 1] {
                        push(
                            "power_levels",
                            Some(s),
                            Some(i),
                            "power_levels not strictly increasing".into(),
                        );
                    }
                    if rp[i] < rp[i - 1] {
                        push(
                            "coop_success",
                            Some(s),
                            Some(i),
                            "coop_success not monotone".into(),
                        );
                    }
                }
            }
        }
        for (s, &b) in self.power_budget.iter().enumerate() {
            if !(b.is_finite() && b >= 0.0) {
                push(
                    "power_budget",
                    Some(s),
                    None,
                    "power_budget must be finite and >= 0".into(),
                );
            }
        }
        out
    }

    /// `Ok(())` iff [`validate`](Self::validate) reports nothing.
    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(CoopError::InvalidParams(msg.join("; ")))
        }
    }

    pub(crate) fn check_table(&self, name: &str, table: &LevelTable) -> Result<()> {
        if table.len() != self.num_sus
            || table
                .iter()
                .zip(&self.power_levels)
                .any(|(row, p)| row.len() != p.len())
        {
            return Err(CoopError::DimensionMismatch(format!(
                "{name} table shape does not match the system level tables"
            )));
        }
        Ok(())
    }
}

fn table_sum(t: &LevelTable) -> f64 {
    t.iter().flatten().sum()
}

fn table_nonneg(t: &LevelTable) -> bool {
    t.iter().flatten().all(|&x| x.is_finite() && x >= 0.0)
}

fn scaled(t: &LevelTable, k: f64) -> LevelTable {
    t.iter()
        .map(|row| row.iter().map(|&x| x * k).collect())
        .collect()
}

fn same_shape(a: &LevelTable, b: &LevelTable) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
}

/// Joint probabilities `q(e,s,i)` (`idle`) and `q(b,s,i)` (`busy`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPolicy {
    /// PU idle and SU `s` transmits its own data at level `i`.
    pub idle: LevelTable,
    /// PU busy and SU `s` cooperates at level `i`.
    pub busy: LevelTable,
}

impl JointPolicy {
    pub fn new(idle: LevelTable, busy: LevelTable) -> Result<Self> {
        let p = Self { idle, busy };
        p.check()?;
        Ok(p)
    }

    /// Wraps tables without checking normalization (iterative solver output).
    pub fn from_raw(idle: LevelTable, busy: LevelTable) -> Self {
        Self { idle, busy }
    }

    pub fn zeros_like(params: &SystemParams) -> Self {
        let z: LevelTable = params
            .power_levels
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        Self {
            idle: z.clone(),
            busy: z,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !same_shape(&self.idle, &self.busy) {
            return Err(CoopError::InvalidPolicy(
                "idle and busy tables differ in shape".into(),
            ));
        }
        if !table_nonneg(&self.idle) || !table_nonneg(&self.busy) {
            return Err(CoopError::InvalidPolicy(
                "negative or non-finite entry".into(),
            ));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > POLICY_TOL {
            return Err(CoopError::InvalidPolicy(format!(
                "joint probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn idle_mass(&self) -> f64 {
        table_sum(&self.idle)
    }

    pub fn busy_mass(&self) -> f64 {
        table_sum(&self.busy)
    }

    pub fn total_mass(&self) -> f64 {
        self.idle_mass() + self.busy_mass()
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &Self, alpha: f64) -> Self {
        let comb = |a: &LevelTable, b: &LevelTable| -> LevelTable {
            a.iter()
                .zip(b)
                .map(|(ra, rb)| {
                    ra.iter()
                        .zip(rb)
                        .map(|(&x, &y)| alpha * x + (1.0 - alpha) * y)
                        .collect()
                })
                .collect()
        };
        Self {
            idle: comb(&self.idle, &other.idle),
            busy: comb(&self.busy, &other.busy),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.idle
            .iter()
            .flatten()
            .zip(other.idle.iter().flatten())
            .chain(self.busy.iter().flatten().zip(other.busy.iter().flatten()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Busy/idle-conditioned tables `q(s,i|b)`, `q(s,i|e)` with `q_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPolicy {
    /// `q_b`; the idle probability is `1 - busy_prob`.
    pub busy_prob: f64,
    pub cond_busy: LevelTable,
    pub cond_idle: LevelTable,
}

impl ConditionalPolicy {
    pub fn new(busy_prob: f64, cond_busy: LevelTable, cond_idle: LevelTable) -> Result<Self> {
        let p = Self {
            busy_prob,
            cond_busy,
            cond_idle,
        };
        p.check()?;
        Ok(p)
    }

    pub fn idle_prob(&self) -> f64 {
        1.0 - self.busy_prob
    }

    /// A table may be identically zero only when its side has zero probability.
    pub fn check(&self) -> Result<()> {
        if !is_prob(self.busy_prob) {
            return Err(CoopError::InvalidPolicy(format!(
                "busy probability {} not in [0,1]",
                self.busy_prob
            )));
        }
        if !same_shape(&self.cond_busy, &self.cond_idle) {
            return Err(CoopError::InvalidPolicy(
                "conditional tables differ in shape".into(),
            ));
        }
        for (name, table, side) in [
            ("busy", &self.cond_busy, self.busy_prob),
            ("idle", &self.cond_idle, self.idle_prob()),
        ] {
            if !table_nonneg(table) {
                return Err(CoopError::InvalidPolicy(format!(
                    "negative entry in conditional {name} table"
                )));
            }
            let sum = table_sum(table);
            let zero_ok = sum == 0.0 && side <= POLICY_TOL;
            if !zero_ok && (sum - 1.0).abs() > POLICY_TOL {
                return Err(CoopError::InvalidPolicy(format!(
                    "conditional {name} table sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Rescales each non-zero table to sum exactly to one.
    pub fn normalized(&self) -> Self {
        let norm = |t: &LevelTable| {
            let s = table_sum(t);
            if s > 0.0 {
                scaled(t, 1.0 / s)
            } else {
                t.clone()
            }
        };
        Self {
            busy_prob: self.busy_prob.clamp(0.0, 1.0),
            cond_busy: norm(&self.cond_busy),
            cond_idle: norm(&self.cond_idle),
        }
    }

    /// No cooperation: the busy table is a point mass at level 0 of SU 0,
    /// idle slots spread per `cond_idle`.
    pub fn no_cooperation(params: &SystemParams, busy_prob: f64, cond_idle: LevelTable) -> Self {
        let mut cond_busy: LevelTable = params
            .power_levels
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        cond_busy[0][0] = 1.0;
        Self {
            busy_prob,
            cond_busy,
            cond_idle,
        }
    }
}

/// A stationary policy of the unrestricted class: `p(1,s,i)` and `p(0,s,i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2Policy {
    /// Control `(1,s,i)`: PU transmits, SU `s` cooperates at level `i`.
    pub cooperate: LevelTable,
    /// Control `(0,s,i)`: SU `s` transmits its own packet at level `i`.
    pub transmit: LevelTable,
}

impl C2Policy {
    pub fn check(&self) -> Result<()> {
        if !same_shape(&self.cooperate, &self.transmit) {
            return Err(CoopError::InvalidPolicy("C2 tables differ in shape".into()));
        }
        if !table_nonneg(&self.cooperate) || !table_nonneg(&self.transmit) {
            return Err(CoopError::InvalidPolicy("negative C2 probability".into()));
        }
        let total = table_sum(&self.cooperate) + table_sum(&self.transmit);
        if (total - 1.0).abs() > POLICY_TOL {
            return Err(CoopError::InvalidPolicy(format!(
                "C2 probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// `p(1)`, total probability the PU is scheduled.
    pub fn pu_share(&self) -> f64 {
        table_sum(&self.cooperate)
    }

    /// `Σ r_p(s,i) p(1,s,i)`.
    pub fn pu_rate(&self, params: &SystemParams) -> f64 {
        dot_table(&params.coop_success, &self.cooperate)
    }

    /// `r̄_s = Σ_i r_s(i) p(0,s,i)`.
    pub fn su_rates(&self, params: &SystemParams) -> Vec<f64> {
        row_dots(&params.su_success, &self.transmit)
    }

    pub fn avg_power(&self, params: &SystemParams) -> Vec<f64> {
        let a = row_dots(&params.power_levels, &self.transmit);
        let b = row_dots(&params.power_levels, &self.cooperate);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }
}

pub(crate) fn row_dots(coef: &LevelTable, t: &LevelTable) -> Vec<f64> {
    coef.iter()
        .zip(t)
        .map(|(c, row)| c.iter().zip(row).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn dot_table(coef: &LevelTable, t: &LevelTable) -> f64 {
    row_dots(coef, t).iter().sum()
}

/// Linearizing transformation `q(b,s,i) = q_b q(s,i|b)`, `q(e,s,i) = q_e q(s,i|e)`.
pub fn to_joint(cond: &ConditionalPolicy) -> Result<JointPolicy> {
    cond.check()?;
    Ok(JointPolicy {
        idle: scaled(&cond.cond_idle, cond.idle_prob()),
        busy: scaled(&cond.cond_busy, cond.busy_prob),
    })
}

/// Inverse transformation. A side with zero mass gets an all-zero table.
pub fn to_conditional(joint: &JointPolicy) -> Result<ConditionalPolicy> {
    joint.check()?;
    let qb = joint.busy_mass();
    let qe = joint.idle_mass();
    let cond = |t: &LevelTable, mass: f64| {
        if mass > 0.0 {
            scaled(t, 1.0 / mass)
        } else {
            scaled(t, 0.0)
        }
    };
    Ok(ConditionalPolicy {
        busy_prob: qb / (qb + qe),
        cond_busy: cond(&joint.busy, qb),
        cond_idle: cond(&joint.idle, qe),
    })
}

/// `r̄_s = Σ_i r_s(i) q(e,s,i)`.
pub fn su_rates(joint: &JointPolicy, params: &SystemParams) -> Result<Vec<f64>> {
    params.check_table("idle", &joint.idle)?;
    Ok(row_dots(&params.su_success, &joint.idle))
}

/// `r̄_p = Σ r_p(s,i) q(s,i|b)`.
pub fn pu_service_rate(cond: &ConditionalPolicy, params: &SystemParams) -> Result<f64> {
    params.check_table("cond_busy", &cond.cond_busy)?;
    Ok(dot_table(&params.coop_success, &cond.cond_busy))
}

/// `Σ r_p(s,i) q(b,s,i)`, the PU departure rate carried by a joint policy.
pub fn pu_rate_joint(joint: &JointPolicy, params: &SystemParams) -> Result<f64> {
    params.check_table("busy", &joint.busy)?;
    Ok(dot_table(&params.coop_success, &joint.busy))
}

/// `P̄_s = Σ_i P_s(i) (q(e,s,i) + q(b,s,i))`.
pub fn avg_power(joint: &JointPolicy, params: &SystemParams) -> Result<Vec<f64>> {
    params.check_table("idle", &joint.idle)?;
    params.check_table("busy", &joint.busy)?;
    let a = row_dots(&params.power_levels, &joint.idle);
    let b = row_dots(&params.power_levels, &joint.busy);
    Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect())
}

/// Residuals of the joint-form feasibility system at `params.pu_arrival_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityAudit {
    /// `Σ r_p q_b − λ_p`.
    pub pu_rate_residual: f64,
    /// `P̂_s − P̄_s`; negative means the budget is exceeded.
    pub power_slack: Vec<f64>,
    /// `Σ q − 1`.
    pub mass_residual: f64,
    /// Most negative entry (0 when all entries are nonnegative).
    pub min_entry: f64,
}

impl FeasibilityAudit {
    pub fn of(joint: &JointPolicy, params: &SystemParams) -> Result<Self> {
        let power = avg_power(joint, params)?;
        let min_entry = joint
            .idle
            .iter()
            .flatten()
            .chain(joint.busy.iter().flatten())
            .copied()
            .fold(0.0, f64::min);
        Ok(Self {
            pu_rate_residual: pu_rate_joint(joint, params)? - params.pu_arrival_rate,
            power_slack: params
                .power_budget
                .iter()
                .zip(&power)
                .map(|(b, p)| b - p)
                .collect(),
            mass_residual: joint.total_mass() - 1.0,
            min_entry,
        })
    }

    pub fn within(&self, eq_tol: f64, ineq_tol: f64) -> bool {
        self.pu_rate_residual.abs() <= eq_tol
            && self.mass_residual.abs() <= eq_tol
            && self.power_slack.iter().all(|&s| s >= -ineq_tol)
            && self.min_entry >= -ineq_tol
    }
}
