//! Shared test oracles and random instance generators.
#![allow(dead_code)]

use cogcoop::linprog::LpProblem;
use cogcoop::model::{C2Policy, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves `B y = b` by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-11 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..m {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..m).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Best objective over all basic feasible solutions, or `None` when no
/// basis is feasible. Rows are put in standard form with one slack per
/// inequality and must have full row rank. Only valid for bounded problems.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars();
    let n_ub = p.ub_rows.len();
    let cols = n + n_ub;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for (r, &b) in p.eq_rows.iter().zip(&p.eq_rhs) {
        let mut row = r.clone();
        row.resize(cols, 0.0);
        rows.push(row);
        rhs.push(b);
    }
    for (k, (r, &b)) in p.ub_rows.iter().zip(&p.ub_rhs).enumerate() {
        let mut row = r.clone();
        row.resize(cols, 0.0);
        row[n + k] = 1.0;
        rows.push(row);
        rhs.push(b);
    }
    let m = rows.len();
    let mut best: Option<f64> = None;
    combinations(cols, m, &mut |basis| {
        let b: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| basis.iter().map(|&j| row[j]).collect())
            .collect();
        if let Some(y) = solve_square(b, rhs.clone()) {
            if y.iter().all(|&v| v >= -1e-10) {
                let val: f64 = basis
                    .iter()
                    .zip(&y)
                    .filter(|(&j, _)| j < n)
                    .map(|(&j, &v)| p.objective[j] * v)
                    .sum();
                best = Some(best.map_or(val, |b: f64| b.max(val)));
            }
        }
    });
    best
}

/// Stability LP in the same canonical form the library uses.
pub fn stability_problem(params: &SystemParams) -> LpProblem {
    let c: Vec<f64> = params.coop_success.iter().flatten().copied().collect();
    let n = c.len();
    let mut lp = LpProblem::new(c);
    let mut offset = 0;
    for s in 0..params.num_sus {
        let l = params.num_levels(s);
        let mut row = vec![0.0; n];
        row[offset..offset + l].copy_from_slice(&params.power_levels[s]);
        lp.add_le(row, params.power_budget[s]);
        offset += l;
    }
    lp.add_le(vec![1.0; n], 1.0);
    lp
}

fn increasing(rng: &mut ChaCha8Rng, len: usize, start: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len - 1).map(|_| rng.random_range(0.0..hi)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    while v.len() < len - 1 {
        let last = v.last().copied().unwrap_or(0.0);
        v.push(last + 0.01);
    }
    let mut out = vec![start];
    out.extend(v);
    out
}

/// Random parameters satisfying every model invariant. Levels are ragged
/// (2..=5 per SU) and the PU arrival rate is zero; callers set it.
pub fn random_params(rng: &mut ChaCha8Rng, max_sus: usize) -> SystemParams {
    let num_sus = rng.random_range(1..=max_sus);
    let r0 = rng.random_range(0.05..0.6);
    let mut power_levels = Vec::new();
    let mut su_success = Vec::new();
    let mut coop_success = Vec::new();
    let mut power_budget = Vec::new();
    for _ in 0..num_sus {
        let levels = rng.random_range(2..=5);
        let mut pw = increasing(rng, levels, 0.0, 1.0);
        for (k, p) in pw.iter_mut().enumerate().skip(1) {
            *p += 0.001 * k as f64;
        }
        power_levels.push(pw);
        let mut rs: Vec<f64> = (0..levels).map(|_| rng.random_range(0.0..1.0)).collect();
        rs[0] = 0.0;
        su_success.push(rs);
        let mut rp = increasing(rng, levels, r0, 1.0 - r0);
        for v in rp.iter_mut().skip(1) {
            *v = (r0 + *v).min(1.0);
        }
        coop_success.push(rp);
        power_budget.push(rng.random_range(0.0..0.8));
    }
    let p = SystemParams {
        num_sus,
        power_levels,
        su_success,
        coop_success,
        solo_success: r0,
        power_budget,
        pu_arrival_rate: 0.0,
    };
    assert!(p.validate().is_empty(), "{:?}", p.validate());
    p
}

/// Random nonnegative, nonzero weights.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..2.0)
                }
            })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return w;
        }
    }
}

/// Random table summing to `mass`, occasionally sparse.
pub fn random_table(rng: &mut ChaCha8Rng, shape: &[Vec<f64>], mass: f64) -> Vec<Vec<f64>> {
    let mut t: Vec<Vec<f64>> = shape
        .iter()
        .map(|r| {
            r.iter()
                .map(|_| {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
                .collect()
        })
        .collect();
    let total: f64 = t.iter().flatten().sum();
    if total == 0.0 {
        t[0][0] = 1.0;
    }
    let total: f64 = t.iter().flatten().sum();
    for v in t.iter_mut().flatten() {
        *v *= mass / total;
    }
    t
}

/// A random C₂ policy with budgets and `λ_p` chosen so it is feasible.
/// `mode` steers `λ_p`: 0 anywhere below the PU rate, 1 below `r_p(0) p(1)`,
/// 2 exactly at the PU rate.
pub fn random_feasible_c2(rng: &mut ChaCha8Rng, mode: u8) -> (SystemParams, C2Policy, f64) {
    let mut params = random_params(rng, 4);
    let p1 = if mode == 1 {
        rng.random_range(0.1..0.9)
    } else {
        rng.random_range(0.0..1.0)
    };
    let cooperate = random_table(rng, &params.power_levels, p1);
    let transmit = random_table(rng, &params.power_levels, 1.0 - p1);
    let c2 = C2Policy {
        cooperate,
        transmit,
    };
    let used = c2.avg_power(&params);
    for (b, u) in params.power_budget.iter_mut().zip(&used) {
        *b = u + rng.random_range(0.0..0.2);
    }
    let rate = c2.pu_rate(&params);
    let solo = params.solo_success * c2.pu_share();
    let lambda = match mode {
        1 => rng.random_range(0.0..1.0) * solo,
        2 => rate,
        _ => rng.random_range(0.0..1.0) * rate,
    };
    params.pu_arrival_rate = lambda;
    (params, c2, lambda)
}
