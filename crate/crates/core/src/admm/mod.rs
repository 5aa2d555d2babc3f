//! Distributed solution of the joint-form problem by the alternating
//! direction method of multipliers.
//!
//! Each SU node owns its idle block `x_s = q(e,s,·)`, busy block
//! `z_s = q(b,s,·)`, power slack `y_s` and power-row dual `μ_s`. Nodes update
//! in ascending index order and publish scalar aggregates on a simulated
//! broadcast channel; a node never sees another node's tables.

mod prox;

use serde::{Deserialize, Serialize};

pub use prox::{prox_x, prox_y, prox_z, LocalUtility, UtilityKind, PROX_TOL};

use crate::error::{CoopError, Result};
use crate::model::{JointPolicy, SystemParams};
use crate::optimizer::{ensure_stable, report_for, Objective, SolveReport, SolveStatus};

/// Parameters a node knows about itself and nothing else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub power: Vec<f64>,
    pub su_success: Vec<f64>,
    pub coop_success: Vec<f64>,
    pub budget: f64,
}

impl NodeParams {
    pub fn of(params: &SystemParams, s: usize) -> Self {
        Self {
            power: params.power_levels[s].clone(),
            su_success: params.su_success[s].clone(),
            coop_success: params.coop_success[s].clone(),
            budget: params.power_budget[s],
        }
    }

    fn g1(&self, z: &[f64]) -> f64 {
        self.coop_success.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    fn phi(&self, x: &[f64]) -> f64 {
        self.su_success.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn load(&self, x: &[f64], z: &[f64]) -> f64 {
        self.power
            .iter()
            .zip(x.iter().zip(z))
            .map(|(p, (a, b))| p * (a + b))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: f64,
    pub mu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedDuals {
    /// PU-rate row.
    pub nu: f64,
    /// Mass row.
    pub xi: f64,
    pub rho: f64,
}

/// Sums of other nodes' latest broadcasts, as seen by one node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForeignAggregates {
    pub g2x_others: f64,
    pub g2z_others: f64,
    pub g1z_others: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// `g₂(x_s)`.
    IdleMass {
        value: f64,
    },
    /// `(g₁(z_s), g₂(z_s))`.
    Busy {
        rate: f64,
        mass: f64,
    },
    Converged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub iteration: usize,
    pub sender: usize,
    pub payload: Payload,
}

/// Broadcast accounting. Full message records are kept only for the first
/// `record_limit` iterations; counts are kept for every iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BroadcastLog {
    pub data_per_iteration: Vec<usize>,
    pub announcements_per_iteration: Vec<usize>,
    pub messages: Vec<Message>,
    pub record_limit: usize,
}

impl BroadcastLog {
    pub fn total_data(&self) -> usize {
        self.data_per_iteration.iter().sum()
    }

    pub fn total_announcements(&self) -> usize {
        self.announcements_per_iteration.iter().sum()
    }
}

/// The shared control channel: latest value per sender plus the log.
struct Bus {
    g2x: Vec<f64>,
    g1z: Vec<f64>,
    g2z: Vec<f64>,
    log: BroadcastLog,
    iteration: usize,
}

impl Bus {
    fn new(n: usize, record_limit: usize) -> Self {
        Self {
            g2x: vec![0.0; n],
            g1z: vec![0.0; n],
            g2z: vec![0.0; n],
            log: BroadcastLog {
                record_limit,
                ..BroadcastLog::default()
            },
            iteration: 0,
        }
    }

    fn begin(&mut self, iteration: usize) {
        self.iteration = iteration;
        self.log.data_per_iteration.push(0);
        self.log.announcements_per_iteration.push(0);
    }

    fn send(&mut self, sender: usize, payload: Payload) {
        match payload {
            Payload::IdleMass { value } => self.g2x[sender] = value,
            Payload::Busy { rate, mass } => {
                self.g1z[sender] = rate;
                self.g2z[sender] = mass;
            }
            Payload::Converged => {}
        }
        if let Some(c) = match payload {
            Payload::Converged => self.log.announcements_per_iteration.last_mut(),
            _ => self.log.data_per_iteration.last_mut(),
        } {
            *c += 1;
        }
        if self.iteration < self.log.record_limit {
            self.log.messages.push(Message {
                iteration: self.iteration,
                sender,
                payload,
            });
        }
    }

    fn view(&self, s: usize) -> ForeignAggregates {
        let others = |v: &[f64]| v.iter().sum::<f64>() - v[s];
        ForeignAggregates {
            g2x_others: others(&self.g2x),
            g2z_others: others(&self.g2z),
            g1z_others: others(&self.g1z),
        }
    }

    fn totals(&self) -> (f64, f64, f64) {
        (
            self.g2x.iter().sum(),
            self.g2z.iter().sum(),
            self.g1z.iter().sum(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmDuals {
    pub nu: f64,
    pub xi: f64,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub policy: JointPolicy,
    /// Duals of the previous run; cold-start values when absent.
    pub duals: Option<AdmmDuals>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps: f64,
    pub max_iters: usize,
    /// Coupling-row residual bound required before termination.
    pub residual_tol: f64,
    pub init_idle: f64,
    pub init_busy: f64,
    pub init_dual: f64,
    pub warm_start: Option<WarmStart>,
    /// Iterations whose messages are kept verbatim in the log.
    pub record_messages: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            eps: 1e-5,
            max_iters: 100_000,
            residual_tol: 1e-6,
            init_idle: 0.01,
            init_busy: 0.03,
            init_dual: 1.0,
            warm_start: None,
            record_messages: 10,
        }
    }
}

impl AdmmConfig {
    pub fn check(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.rho) || !pos(self.eps) || !pos(self.residual_tol) {
            return Err(CoopError::InvalidConfig(
                "rho, eps and residual_tol must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(CoopError::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub pu_residual: f64,
    pub mass_residual: f64,
    pub max_power_residual: f64,
    pub max_local_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmResult {
    pub report: SolveReport,
    pub converged: bool,
    pub iterations: usize,
    pub log: BroadcastLog,
    pub duals: AdmmDuals,
    pub nodes: Vec<NodeState>,
    pub trace: Vec<TraceRow>,
    /// Iterations where every node met its local test but the residual
    /// guard held termination back.
    pub guard_delays: usize,
}

impl AdmmResult {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            policy: self.report.policy.clone(),
            duals: Some(self.duals.clone()),
        }
    }
}

fn local_utilities(objective: &Objective, n: usize) -> Result<Vec<LocalUtility>> {
    let caps = objective.caps();
    let kinds: Vec<UtilityKind> = match objective.utility() {
        Objective::WeightedSum { weights } => weights
            .iter()
            .map(|&w| UtilityKind::Linear { weight: w })
            .collect(),
        Objective::LogUtility { offset } => vec![UtilityKind::Log { offset: *offset }; n],
        Objective::Saturated { .. } => {
            return Err(CoopError::InvalidObjective("nested saturation".into()))
        }
    };
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(s, kind)| LocalUtility {
            kind,
            cap: caps.map(|c| c[s]),
        })
        .collect())
}

fn initial_nodes(
    params: &SystemParams,
    locals: &[NodeParams],
    cfg: &AdmmConfig,
) -> Result<(Vec<NodeState>, SharedDuals)> {
    let mut shared = SharedDuals {
        nu: cfg.init_dual,
        xi: cfg.init_dual,
        rho: cfg.rho,
    };
    let mut nodes: Vec<NodeState> = params
        .power_levels
        .iter()
        .map(|p| NodeState {
            x: vec![cfg.init_idle; p.len()],
            z: vec![cfg.init_busy; p.len()],
            y: 0.0,
            mu: cfg.init_dual,
        })
        .collect();
    if let Some(warm) = &cfg.warm_start {
        params.check_table("warm idle", &warm.policy.idle)?;
        params.check_table("warm busy", &warm.policy.busy)?;
        for (s, node) in nodes.iter_mut().enumerate() {
            node.x = warm.policy.idle[s].iter().map(|v| v.max(0.0)).collect();
            node.z = warm.policy.busy[s].iter().map(|v| v.max(0.0)).collect();
        }
        if let Some(d) = &warm.duals {
            if d.mu.len() != params.num_sus {
                return Err(CoopError::DimensionMismatch(
                    "warm-start μ has the wrong length".into(),
                ));
            }
            shared.nu = d.nu;
            shared.xi = d.xi;
            for (node, &mu) in nodes.iter_mut().zip(&d.mu) {
                node.mu = mu;
            }
        }
    }
    for (node, local) in nodes.iter_mut().zip(locals) {
        node.y = (local.budget - local.load(&node.x, &node.z)).max(0.0);
    }
    Ok((nodes, shared))
}

/// Runs ADMM until every node's local objective settles (and the coupling
/// rows are within `residual_tol`) or the iteration cap is hit.
pub fn admm_solve(
    params: &SystemParams,
    objective: &Objective,
    cfg: &AdmmConfig,
) -> Result<AdmmResult> {
    params.check()?;
    objective.validate(params.num_sus)?;
    cfg.check()?;
    ensure_stable(params)?;

    let n = params.num_sus;
    let lambda = params.pu_arrival_rate;
    let locals: Vec<NodeParams> = (0..n).map(|s| NodeParams::of(params, s)).collect();
    let utilities = local_utilities(objective, n)?;
    let (mut nodes, mut shared) = initial_nodes(params, &locals, cfg)?;

    let mut bus = Bus::new(n, cfg.record_messages);
    for (s, (node, local)) in nodes.iter().zip(&locals).enumerate() {
        bus.g2x[s] = node.x.iter().sum();
        bus.g2z[s] = node.z.iter().sum();
        bus.g1z[s] = local.g1(&node.z);
    }
    let mut local_obj: Vec<f64> = nodes
        .iter()
        .zip(&locals)
        .zip(&utilities)
        .map(|((node, local), u)| u.value(local.phi(&node.x)))
        .collect();

    let mut trace = Vec::new();
    let mut guard_delays = 0;
    let mut converged = false;
    let mut iterations = 0;

    for k in 0..cfg.max_iters {
        bus.begin(k);
        for s in 0..n {
            let view = bus.view(s);
            let x = prox_x(&locals[s], &nodes[s], &shared, &view, &utilities[s]);
            nodes[s].x = x;
            bus.send(
                s,
                Payload::IdleMass {
                    value: nodes[s].x.iter().sum(),
                },
            );
        }
        for s in 0..n {
            let view = bus.view(s);
            let z = prox_z(&locals[s], &nodes[s], &shared, &view, lambda);
            nodes[s].z = z;
            bus.send(
                s,
                Payload::Busy {
                    rate: locals[s].g1(&nodes[s].z),
                    mass: nodes[s].z.iter().sum(),
                },
            );
        }
        for s in 0..n {
            nodes[s].y = prox_y(&locals[s], &nodes[s], &shared);
        }

        let (g2x, g2z, g1z) = bus.totals();
        let mass_res = g2x + g2z - 1.0;
        let pu_res = g1z - lambda;
        shared.xi += shared.rho * mass_res;
        shared.nu += shared.rho * pu_res;
        let mut max_power_res: f64 = 0.0;
        for (node, local) in nodes.iter_mut().zip(&locals) {
            let h = local.load(&node.x, &node.z) + node.y - local.budget;
            node.mu += shared.rho * h;
            max_power_res = max_power_res.max(h.abs());
        }

        let mut max_change: f64 = 0.0;
        let mut all_local = true;
        for s in 0..n {
            let v = utilities[s].value(locals[s].phi(&nodes[s].x));
            let change = (v - local_obj[s]).abs();
            local_obj[s] = v;
            max_change = max_change.max(change);
            if change < cfg.eps {
                bus.send(s, Payload::Converged);
            } else {
                all_local = false;
            }
        }
        trace.push(TraceRow {
            iteration: k + 1,
            objective: local_obj.iter().sum(),
            pu_residual: pu_res,
            mass_residual: mass_res,
            max_power_residual: max_power_res,
            max_local_change: max_change,
        });
        iterations = k + 1;

        if all_local {
            let guard = pu_res.abs() <= cfg.residual_tol
                && mass_res.abs() <= cfg.residual_tol
                && max_power_res <= cfg.residual_tol;
            if guard {
                converged = true;
                break;
            }
            guard_delays += 1;
        }
    }

    let policy = JointPolicy::from_raw(
        nodes.iter().map(|n| n.x.clone()).collect(),
        nodes.iter().map(|n| n.z.clone()).collect(),
    );
    let status = if converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::IterationLimit
    };
    let report = report_for(params, objective, policy, status, iterations, None)?;
    Ok(AdmmResult {
        report,
        converged,
        iterations,
        log: bus.log,
        duals: AdmmDuals {
            nu: shared.nu,
            xi: shared.xi,
            mu: nodes.iter().map(|n| n.mu).collect(),
        },
        nodes,
        trace,
        guard_delays,
    })
}
