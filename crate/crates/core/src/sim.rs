//! Slot-level Monte Carlo simulation of the PU queue and the SUs under a
//! sensing-only policy.
//!
//! Each slot: arrivals join the queues; the channel is busy iff the PU queue
//! is non-empty; the (possibly erroneous) sensing outcome selects which
//! conditional table the cooperating or transmitting SU is drawn from.
//!
//! | truth | sensed | drawn `(s,i)`        | outcome                                   |
//! |-------|--------|----------------------|-------------------------------------------|
//! | busy  | busy   | any                  | PU succeeds w.p. `r_p(s,i)`, SU pays `P_s(i)` |
//! | idle  | busy   | any                  | SU pays `P_s(i)` for nothing              |
//! | busy  | idle   | `i > 0`, packet held | collision: both fail, SU pays `P_s(i)`    |
//! | busy  | idle   | otherwise            | PU alone succeeds w.p. `r_p(0)`           |
//! | idle  | idle   | `i > 0`, packet held | SU succeeds w.p. `r_s(i)`, pays `P_s(i)`  |
//!
//! An SU drawn with an empty queue radiates nothing. The report carries both
//! that actual power and the conservative figure that charges every draw.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};
use crate::exec::{self, Parallelism};
use crate::model::{self, ConditionalPolicy, SystemParams};
use crate::optimizer::{self, Objective};
use crate::sensing::SensingModel;

pub const DEFAULT_WARMUP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Arrival {
    Bernoulli { rate: f64 },
    Poisson { rate: f64 },
}

impl Arrival {
    pub fn rate(&self) -> f64 {
        match *self {
            Arrival::Bernoulli { rate } | Arrival::Poisson { rate } => rate,
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        let r = self.rate();
        if !(r.is_finite() && r >= 0.0) {
            return Err(CoopError::InvalidConfig(format!(
                "{what} rate {r} must be >= 0"
            )));
        }
        if matches!(self, Arrival::Bernoulli { .. }) && r > 1.0 {
            return Err(CoopError::InvalidConfig(format!(
                "{what}: Bernoulli rate {r} exceeds 1"
            )));
        }
        Ok(())
    }
}

enum Sampler {
    Bernoulli(f64),
    Poisson(Option<Poisson<f64>>),
}

impl Sampler {
    fn new(a: &Arrival) -> Result<Self> {
        Ok(match *a {
            Arrival::Bernoulli { rate } => Sampler::Bernoulli(rate),
            Arrival::Poisson { rate } => Sampler::Poisson(if rate > 0.0 {
                Some(Poisson::new(rate).map_err(|e| CoopError::InvalidConfig(e.to_string()))?)
            } else {
                None
            }),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Sampler::Bernoulli(p) => u64::from(rng.random::<f64>() < *p),
            Sampler::Poisson(Some(d)) => d.sample(rng) as u64,
            Sampler::Poisson(None) => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// ChaCha stream; replications of one configuration use distinct streams.
    pub stream: u64,
    pub pu_arrival: Arrival,
    /// Per-SU arrival laws; `None` means infinitely backlogged SUs.
    pub su_arrivals: Option<Vec<Arrival>>,
    /// `None` means perfect sensing.
    pub sensing: Option<SensingModel>,
    /// Flow-control admission probabilities `p_s^a`.
    pub admission: Option<Vec<f64>>,
    /// Leading fraction of slots excluded from statistics.
    pub warmup: f64,
}

impl SimConfig {
    /// Bernoulli PU arrivals at `params.pu_arrival_rate`, backlogged SUs,
    /// perfect sensing.
    pub fn new(params: &SystemParams, horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            stream: 0,
            pu_arrival: Arrival::Bernoulli {
                rate: params.pu_arrival_rate,
            },
            su_arrivals: None,
            sensing: None,
            admission: None,
            warmup: DEFAULT_WARMUP,
        }
    }

    pub fn check(&self, num_sus: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(CoopError::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.warmup.is_finite() && (0.0..1.0).contains(&self.warmup)) {
            return Err(CoopError::InvalidConfig("warmup must be in [0,1)".into()));
        }
        self.pu_arrival.check("PU arrival")?;
        if let Some(su) = &self.su_arrivals {
            if su.len() != num_sus {
                return Err(CoopError::InvalidConfig(format!(
                    "{} SU arrival laws for {num_sus} SUs",
                    su.len()
                )));
            }
            for a in su {
                a.check("SU arrival")?;
            }
        }
        if let Some(adm) = &self.admission {
            if adm.len() != num_sus {
                return Err(CoopError::InvalidConfig("admission vector length".into()));
            }
            if adm
                .iter()
                .any(|p| !(p.is_finite() && (0.0..=1.0).contains(p)))
            {
                return Err(CoopError::InvalidConfig(
                    "admission probabilities must be in [0,1]".into(),
                ));
            }
        }
        if let Some(s) = &self.sensing {
            s.check()?;
        }
        Ok(())
    }

    fn warmup_slots(&self) -> u64 {
        ((self.horizon as f64) * self.warmup).floor() as u64
    }
}

/// Slot counts for the four (truth, sensed) combinations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTally {
    pub busy_sensed_busy: u64,
    pub busy_sensed_idle: u64,
    pub idle_sensed_busy: u64,
    pub idle_sensed_idle: u64,
}

impl EventTally {
    pub fn total(&self) -> u64 {
        self.busy_sensed_busy
            + self.busy_sensed_idle
            + self.idle_sensed_busy
            + self.idle_sensed_idle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub horizon: u64,
    pub counted_slots: u64,
    pub seed: u64,
    pub stream: u64,
    /// Delivered SU packets per counted slot.
    pub su_throughput: Vec<f64>,
    /// PU departures per busy counted slot.
    pub pu_service_rate: f64,
    /// PU departures per counted slot.
    pub pu_throughput: f64,
    /// Fraction of counted slots with a non-empty PU queue.
    pub busy_fraction: f64,
    /// Mean PU backlog at slot ends over counted slots.
    pub mean_backlog: f64,
    pub final_backlog: u64,
    /// `Q_p(T) / T`.
    pub backlog_growth: f64,
    /// Power actually radiated per counted slot.
    pub su_power: Vec<f64>,
    /// Power charged for every draw, transmitting or not.
    pub su_power_conservative: Vec<f64>,
    /// Arrivals rejected by flow control.
    pub su_drops: Vec<u64>,
    pub su_final_backlog: Vec<u64>,
    pub collisions: u64,
    pub events: EventTally,
    /// Over the whole horizon, for conservation checks.
    pub pu_arrivals_total: u64,
    pub pu_departures_total: u64,
}

struct TableSampler {
    entries: Vec<(usize, usize)>,
    index: Option<WeightedIndex<f64>>,
}

impl TableSampler {
    fn new(table: &[Vec<f64>]) -> Result<Self> {
        let mut entries = Vec::new();
        let mut weights = Vec::new();
        for (s, row) in table.iter().enumerate() {
            for (i, &w) in row.iter().enumerate() {
                entries.push((s, i));
                weights.push(w.max(0.0));
            }
        }
        let index = if weights.iter().any(|&w| w > 0.0) {
            Some(
                WeightedIndex::new(&weights)
                    .map_err(|e| CoopError::InvalidPolicy(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self { entries, index })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        self.index.as_ref().map(|d| self.entries[d.sample(rng)])
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub fn simulate(
    params: &SystemParams,
    policy: &ConditionalPolicy,
    config: &SimConfig,
) -> Result<SimReport> {
    params.check()?;
    policy.check()?;
    params.check_table("cond_busy", &policy.cond_busy)?;
    config.check(params.num_sus)?;
    let policy = policy.normalized();
    let n = params.num_sus;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);
    let pu_arrivals = Sampler::new(&config.pu_arrival)?;
    let su_arrivals: Option<Vec<Sampler>> = config
        .su_arrivals
        .as_ref()
        .map(|v| v.iter().map(Sampler::new).collect::<Result<_>>())
        .transpose()?;
    let busy_table = TableSampler::new(&policy.cond_busy)?;
    let idle_table = TableSampler::new(&policy.cond_idle)?;

    let warmup = config.warmup_slots();
    let mut q_p: u64 = 0;
    let mut su_queue = vec![0u64; n];
    let mut delivered = vec![0u64; n];
    let mut power = vec![0.0; n];
    let mut power_cons = vec![0.0; n];
    let mut drops = vec![0u64; n];
    let mut events = EventTally::default();
    let mut collisions = 0u64;
    let mut busy_slots = 0u64;
    let mut departures = 0u64;
    let mut backlog_sum = 0.0;
    let mut arrivals_total = 0u64;
    let mut departures_total = 0u64;

    for t in 0..config.horizon {
        let counted = t >= warmup;

        let a = pu_arrivals.draw(&mut rng);
        q_p += a;
        arrivals_total += a;
        if let Some(samplers) = &su_arrivals {
            for (s, smp) in samplers.iter().enumerate() {
                let k = smp.draw(&mut rng);
                let p_admit = config.admission.as_ref().map_or(1.0, |v| v[s]);
                for _ in 0..k {
                    if p_admit >= 1.0 || bernoulli(&mut rng, p_admit) {
                        su_queue[s] += 1;
                    } else if counted {
                        drops[s] += 1;
                    }
                }
            }
        }
        let has_packet = |q: &[u64], s: usize| su_arrivals.is_none() || q[s] > 0;

        let busy = q_p > 0;
        let sensed_busy = match &config.sensing {
            None => busy,
            Some(m) => bernoulli(&mut rng, if busy { m.p_detect } else { m.p_false_alarm }),
        };

        let mut pu_success = false;
        if sensed_busy {
            match busy_table.draw(&mut rng) {
                Some((s, i)) => {
                    let p = params.power_levels[s][i];
                    if counted {
                        power[s] += p;
                        power_cons[s] += p;
                    }
                    if busy {
                        pu_success = bernoulli(&mut rng, params.coop_success[s][i]);
                    }
                }
                None => {
                    if busy {
                        pu_success = bernoulli(&mut rng, params.solo_success);
                    }
                }
            }
        } else {
            let draw = idle_table.draw(&mut rng);
            let transmitting = draw.filter(|&(s, i)| i > 0 && has_packet(&su_queue, s));
            if let Some((s, i)) = draw {
                if counted {
                    power_cons[s] += params.power_levels[s][i];
                }
            }
            match (busy, transmitting) {
                (true, Some((s, i))) => {
                    if counted {
                        power[s] += params.power_levels[s][i];
                        collisions += 1;
                    }
                }
                (true, None) => pu_success = bernoulli(&mut rng, params.solo_success),
                (false, Some((s, i))) => {
                    if counted {
                        power[s] += params.power_levels[s][i];
                    }
                    if bernoulli(&mut rng, params.su_success[s][i]) {
                        if su_arrivals.is_some() {
                            su_queue[s] -= 1;
                        }
                        if counted {
                            delivered[s] += 1;
                        }
                    }
                }
                (false, None) => {}
            }
        }

        if pu_success {
            q_p -= 1;
            departures_total += 1;
        }
        if counted {
            match (busy, sensed_busy) {
                (true, true) => events.busy_sensed_busy += 1,
                (true, false) => events.busy_sensed_idle += 1,
                (false, true) => events.idle_sensed_busy += 1,
                (false, false) => events.idle_sensed_idle += 1,
            }
            if busy {
                busy_slots += 1;
            }
            if pu_success {
                departures += 1;
            }
            backlog_sum += q_p as f64;
        }
    }

    let counted = config.horizon - warmup;
    let per = |x: f64| x / counted as f64;
    Ok(SimReport {
        horizon: config.horizon,
        counted_slots: counted,
        seed: config.seed,
        stream: config.stream,
        su_throughput: delivered.iter().map(|&d| per(d as f64)).collect(),
        pu_service_rate: if busy_slots > 0 {
            departures as f64 / busy_slots as f64
        } else {
            0.0
        },
        pu_throughput: per(departures as f64),
        busy_fraction: per(busy_slots as f64),
        mean_backlog: per(backlog_sum),
        final_backlog: q_p,
        backlog_growth: q_p as f64 / config.horizon as f64,
        su_power: power.iter().map(|&p| per(p)).collect(),
        su_power_conservative: power_cons.iter().map(|&p| per(p)).collect(),
        su_drops: drops,
        su_final_backlog: su_queue,
        collisions,
        events,
        pu_arrivals_total: arrivals_total,
        pu_departures_total: departures_total,
    })
}

/// Independent replications on ChaCha streams `0..count`.
pub fn replicate(
    params: &SystemParams,
    policy: &ConditionalPolicy,
    config: &SimConfig,
    count: u64,
    mode: Parallelism,
) -> Result<Vec<SimReport>> {
    let streams: Vec<u64> = (0..count).collect();
    exec::map(mode, &streams, |&stream| {
        let cfg = SimConfig {
            stream,
            ..config.clone()
        };
        simulate(params, policy, &cfg)
    })
    .into_iter()
    .collect()
}

/// A policy to simulate at one grid point, with the analytic values it
/// is expected to reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPolicy {
    pub policy: ConditionalPolicy,
    pub analytic_objective: Option<f64>,
    pub analytic_busy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub lambda_p: f64,
    /// `None` when the factory declared the point infeasible.
    pub report: Option<SimReport>,
    pub analytic_objective: Option<f64>,
    pub analytic_busy: Option<f64>,
}

impl ScanRow {
    pub fn throughput_sum(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.su_throughput.iter().sum())
    }
}

/// Optimal sensing-only policy for `objective` at each arrival rate.
pub fn opt0_factory(objective: Objective) -> impl Fn(&SystemParams) -> Result<ScanPolicy> + Sync {
    move |params| {
        let report = optimizer::solve_opt0(params, &objective)?;
        let cond = model::to_conditional(&report.policy)?.normalized();
        let r_p = model::pu_service_rate(&cond, params)?;
        Ok(ScanPolicy {
            analytic_busy: (r_p > 0.0).then(|| params.pu_arrival_rate / r_p),
            analytic_objective: Some(report.objective),
            policy: cond,
        })
    }
}

/// Never cooperates; idle slots go to SU 0 at its highest level.
pub fn no_cooperation_factory(params: &SystemParams) -> Result<ScanPolicy> {
    let mut idle: Vec<Vec<f64>> = params
        .power_levels
        .iter()
        .map(|p| vec![0.0; p.len()])
        .collect();
    let top = idle[0].len() - 1;
    idle[0][top] = 1.0;
    let busy = (params.pu_arrival_rate / params.solo_success).min(1.0);
    Ok(ScanPolicy {
        policy: ConditionalPolicy::no_cooperation(params, busy, idle),
        analytic_objective: None,
        analytic_busy: (params.pu_arrival_rate < params.solo_success).then_some(busy),
    })
}

/// Simulates the factory's policy at every grid point; grid points run
/// concurrently under `mode`, each on its own stream.
pub fn stability_scan<F>(
    params: &SystemParams,
    factory: F,
    grid: &[f64],
    config: &SimConfig,
    mode: Parallelism,
) -> Result<Vec<ScanRow>>
where
    F: Fn(&SystemParams) -> Result<ScanPolicy> + Sync,
{
    let indexed: Vec<(usize, f64)> = grid.iter().copied().enumerate().collect();
    exec::map(mode, &indexed, |&(k, lambda)| {
        let p = params.with_arrival_rate(lambda);
        let sp = match factory(&p) {
            Ok(sp) => sp,
            Err(CoopError::Infeasible(_)) => {
                return Ok(ScanRow {
                    lambda_p: lambda,
                    report: None,
                    analytic_objective: None,
                    analytic_busy: None,
                })
            }
            Err(e) => return Err(e),
        };
        let cfg = SimConfig {
            stream: config.stream + k as u64,
            pu_arrival: match config.pu_arrival {
                Arrival::Bernoulli { .. } => Arrival::Bernoulli { rate: lambda },
                Arrival::Poisson { .. } => Arrival::Poisson { rate: lambda },
            },
            ..config.clone()
        };
        let report = simulate(&p, &sp.policy, &cfg)?;
        Ok(ScanRow {
            lambda_p: lambda,
            report: Some(report),
            analytic_objective: sp.analytic_objective,
            analytic_busy: sp.analytic_busy,
        })
    })
    .into_iter()
    .collect()
}
