//! Per-node proximal subproblems.
//!
//! Each block update minimizes, over a small nonnegative vector `v`,
//!
//! ```text
//! F(v) = −u(a·v) + c·v + Σ_k (ρ/2) (b_k·v + d_k)²
//! ```
//!
//! by projected gradient with backtracking. A capped utility `u(min(cap, ·))`
//! is handled by solving the two convex pieces `a·v ≤ cap` and `a·v ≥ cap`
//! and keeping the better one.

use serde::{Deserialize, Serialize};

use super::{ForeignAggregates, NodeParams, NodeState, SharedDuals};

pub const PROX_TOL: f64 = 1e-10;
const PROX_MAX_ITERS: usize = 20_000;
const NEWTON_MAX_ITERS: usize = 100;

/// The node's own utility term `f_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalUtility {
    pub kind: UtilityKind,
    /// Arrival-rate cap `λ_s` when throughput is saturated.
    pub cap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityKind {
    Linear { weight: f64 },
    Log { offset: f64 },
}

impl LocalUtility {
    pub fn value(&self, rate: f64) -> f64 {
        let r = self.cap.map_or(rate, |c| rate.min(c));
        self.raw(r)
    }

    fn raw(&self, r: f64) -> f64 {
        match self.kind {
            UtilityKind::Linear { weight } => weight * r,
            UtilityKind::Log { offset } => (offset + r).ln(),
        }
    }

    fn derivative(&self, r: f64) -> f64 {
        match self.kind {
            UtilityKind::Linear { weight } => weight,
            UtilityKind::Log { offset } => 1.0 / (offset + r),
        }
    }

    fn curvature(&self, r: f64) -> f64 {
        match self.kind {
            UtilityKind::Linear { .. } => 0.0,
            UtilityKind::Log { offset } => -1.0 / ((offset + r) * (offset + r)),
        }
    }
}

#[derive(Clone, Copy)]
enum Region {
    Free,
    Below(f64),
    Above(f64),
}

struct Block<'a> {
    /// Utility coordinates and the utility, if any.
    utility: Option<(&'a [f64], LocalUtility)>,
    /// Whether the utility term is replaced by its constant cap value.
    capped_constant: bool,
    linear: Vec<f64>,
    quads: Vec<(&'a [f64], f64)>,
    rho: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Block<'_> {
    fn value(&self, v: &[f64]) -> f64 {
        let mut f = dot(&self.linear, v);
        for (b, d) in &self.quads {
            let r = dot(b, v) + d;
            f += 0.5 * self.rho * r * r;
        }
        if let Some((a, u)) = &self.utility {
            f -= if self.capped_constant {
                u.raw(u.cap.unwrap_or(0.0))
            } else {
                u.raw(dot(a, v))
            };
        }
        f
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for (b, d) in &self.quads {
            let r = self.rho * (dot(b, v) + d);
            for (gi, bi) in g.iter_mut().zip(*b) {
                *gi += r * bi;
            }
        }
        if let Some((a, u)) = &self.utility {
            if !self.capped_constant {
                let du = u.derivative(dot(a, v));
                for (gi, ai) in g.iter_mut().zip(*a) {
                    *gi -= du * ai;
                }
            }
        }
        g
    }

    /// Dense Hessian; the quadratic terms plus `−u''(a·v) a aᵀ`.
    fn hessian(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let n = v.len();
        let mut h = vec![vec![0.0; n]; n];
        let mut add = |b: &[f64], w: f64| {
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += w * b[i] * b[j];
                }
            }
        };
        for (b, _) in &self.quads {
            add(b, self.rho);
        }
        if let Some((a, u)) = &self.utility {
            if !self.capped_constant {
                add(a, -u.curvature(dot(a, v)));
            }
        }
        h
    }
}

/// Cholesky solve of `H d = rhs`; `None` if `H` is not numerically positive definite.
fn cholesky_solve(mut h: Vec<Vec<f64>>, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    for j in 0..n {
        let mut d = h[j][j];
        for k in 0..j {
            d -= h[j][k] * h[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        h[j][j] = d;
        for i in j + 1..n {
            let mut s = h[i][j];
            for k in 0..j {
                s -= h[i][k] * h[j][k];
            }
            h[i][j] = s / d;
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= h[i][k] * y[k];
        }
        y[i] /= h[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= h[k][i] * y[k];
        }
        y[i] /= h[i][i];
    }
    Some(y)
}

fn project(v: &[f64], a: &[f64], region: Region) -> Vec<f64> {
    let clip = |tau: f64| -> Vec<f64> {
        v.iter()
            .zip(a)
            .map(|(vi, ai)| (vi + tau * ai).max(0.0))
            .collect()
    };
    let base = clip(0.0);
    match region {
        Region::Free => base,
        Region::Below(cap) => {
            if dot(a, &base) <= cap {
                return base;
            }
            // a·clip(−τ) is nonincreasing in τ.
            let (mut lo, mut hi) = (0.0, 1.0);
            while dot(a, &clip(-hi)) > cap {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if dot(a, &clip(-mid)) > cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            clip(-hi)
        }
        Region::Above(cap) => {
            if dot(a, &base) >= cap {
                return base;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            while dot(a, &clip(hi)) < cap {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if dot(a, &clip(mid)) < cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            clip(hi)
        }
    }
}

fn stationarity(block: &Block, v: &[f64], a: &[f64], region: Region) -> f64 {
    let g = block.gradient(v);
    let step: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi - gi).collect();
    let p = project(&step, a, region);
    v.iter()
        .zip(&p)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn curvature_bound(block: &Block) -> f64 {
    block
        .quads
        .iter()
        .map(|(b, _)| block.rho * dot(b, b))
        .sum::<f64>()
        .max(1e-12)
}

/// Projected Newton on `v ≥ 0` (Bertsekas' two-metric variant): a Newton
/// step on the free coordinates, a gradient step on the binding ones and an
/// Armijo search along the projection arc. Gives up after the first failed
/// search; [`minimize`] finishes from wherever it stopped.
fn newton_free(block: &Block, start: &[f64]) -> Vec<f64> {
    let n = start.len();
    let mut v: Vec<f64> = start.iter().map(|x| x.max(0.0)).collect();
    let mut fv = block.value(&v);
    for _ in 0..NEWTON_MAX_ITERS {
        let g = block.gradient(&v);
        let width = v
            .iter()
            .zip(&g)
            .map(|(vi, gi)| (vi - (vi - gi).max(0.0)).abs())
            .fold(0.0, f64::max);
        if width <= PROX_TOL {
            break;
        }
        let eps = width.min(1e-6);
        let free: Vec<usize> = (0..n).filter(|&i| !(v[i] <= eps && g[i] > 0.0)).collect();
        let h = block.hessian(&v);
        let scale = (0..n).map(|i| h[i][i]).fold(1.0, f64::max);
        let mut hf: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| free.iter().map(|&j| h[i][j]).collect())
            .collect();
        for (k, row) in hf.iter_mut().enumerate() {
            row[k] += 1e-10 * scale;
        }
        let gf: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
        let Some(df) = cholesky_solve(hf, &gf) else {
            break;
        };
        let mut d: Vec<f64> = g.iter().map(|gi| -gi / scale).collect();
        for (&i, di) in free.iter().zip(df) {
            d[i] = di;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = v
                .iter()
                .zip(&d)
                .map(|(x, di)| (x + alpha * di).max(0.0))
                .collect();
            let fc = block.value(&cand);
            let decrease: f64 = g
                .iter()
                .zip(cand.iter().zip(&v))
                .map(|(gi, (c, x))| gi * (c - x))
                .sum();
            if fc.is_finite() && decrease < 0.0 && fc <= fv + 1e-4 * decrease {
                v = cand;
                fv = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    v
}

fn minimize(block: &Block, start: &[f64], a: &[f64], region: Region) -> (Vec<f64>, f64) {
    let start = match region {
        Region::Free => newton_free(block, start),
        _ => start.to_vec(),
    };
    let mut v = project(&start, a, region);
    let mut fv = block.value(&v);
    let mut t = 1.0 / curvature_bound(block);
    for _ in 0..PROX_MAX_ITERS {
        if stationarity(block, &v, a, region) <= PROX_TOL {
            break;
        }
        let g = block.gradient(&v);
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi - t * gi).collect();
            let cand = project(&trial, a, region);
            let diff: Vec<f64> = cand.iter().zip(&v).map(|(c, x)| c - x).collect();
            let fc = block.value(&cand);
            let model = fv + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * t);
            if fc.is_finite() && fc <= model + 1e-15 * fv.abs().max(1.0) {
                let moved = diff.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
                v = cand;
                fv = fc;
                accepted = true;
                t *= 1.5;
                if moved == 0.0 {
                    return (v, fv);
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (v, fv)
}

fn solve_with_utility(block: Block, start: &[f64], a: &[f64]) -> Vec<f64> {
    let cap = block.utility.and_then(|(_, u)| u.cap);
    match cap {
        None => minimize(&block, start, a, Region::Free).0,
        Some(cap) => {
            let (below, f_below) = minimize(&block, start, a, Region::Below(cap));
            if a.iter().all(|&x| x <= 0.0) {
                return below;
            }
            let upper = Block {
                capped_constant: true,
                ..block
            };
            let (above, f_above) = minimize(&upper, start, a, Region::Above(cap));
            if f_above < f_below {
                above
            } else {
                below
            }
        }
    }
}

/// Idle-block update: minimizes the node's augmented Lagrangian in `x_s`
/// with `z_s`, `y_s` and every foreign aggregate held fixed.
pub fn prox_x(
    local: &NodeParams,
    node: &NodeState,
    shared: &SharedDuals,
    agg: &ForeignAggregates,
    utility: &LocalUtility,
) -> Vec<f64> {
    let n = local.power.len();
    let ones = vec![1.0; n];
    let power_off = dot(&local.power, &node.z) + node.y - local.budget;
    let mass_off = agg.g2x_others + agg.g2z_others + node.z.iter().sum::<f64>() - 1.0;
    let linear = local
        .power
        .iter()
        .map(|p| node.mu * p + shared.xi)
        .collect();
    let block = Block {
        utility: Some((&local.su_success, *utility)),
        capped_constant: false,
        linear,
        quads: vec![(&local.power, power_off), (&ones, mass_off)],
        rho: shared.rho,
    };
    solve_with_utility(block, &node.x, &local.su_success)
}

/// Busy-block update; adds the PU-rate penalty.
pub fn prox_z(
    local: &NodeParams,
    node: &NodeState,
    shared: &SharedDuals,
    agg: &ForeignAggregates,
    lambda_p: f64,
) -> Vec<f64> {
    let n = local.power.len();
    let ones = vec![1.0; n];
    let power_off = dot(&local.power, &node.x) + node.y - local.budget;
    let rate_off = agg.g1z_others - lambda_p;
    let mass_off = agg.g2x_others + node.x.iter().sum::<f64>() + agg.g2z_others - 1.0;
    let linear = local
        .power
        .iter()
        .zip(&local.coop_success)
        .map(|(p, r)| shared.nu * r + node.mu * p + shared.xi)
        .collect();
    let block = Block {
        utility: None,
        capped_constant: false,
        linear,
        quads: vec![
            (&local.power, power_off),
            (&local.coop_success, rate_off),
            (&ones, mass_off),
        ],
        rho: shared.rho,
    };
    let zeros = vec![0.0; n];
    minimize(&block, &node.z, &zeros, Region::Free).0
}

/// Power-slack update: `y_s = max(0, P̂_s − load − μ_s/ρ)`.
pub fn prox_y(local: &NodeParams, node: &NodeState, shared: &SharedDuals) -> f64 {
    let load = dot(&local.power, &node.x) + dot(&local.power, &node.z);
    (local.budget - load - node.mu / shared.rho).max(0.0)
}
