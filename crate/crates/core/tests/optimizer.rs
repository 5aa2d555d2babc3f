mod common;

use cogcoop::linprog::LpProblem;
use cogcoop::model::SystemParams;
use cogcoop::optimizer::{
    solve_opt0, solve_opt0_with, solve_throughput, FwOptions, Method, Objective, SolveOptions,
    SolveStatus, StepRule,
};
use cogcoop::reference;
use cogcoop::regions::max_stable_rate;
use proptest::prelude::*;
use rand::Rng;

use common::{random_params, random_weights, rng, vertex_enumeration};

fn frank_wolfe() -> SolveOptions {
    SolveOptions {
        method: Method::FrankWolfe,
        frank_wolfe: FwOptions::default(),
    }
}

/// With no PU traffic only the idle entries carry mass: a per-SU power
/// knapsack sharing a single unit of probability.
fn idle_only_problem(p: &SystemParams, w: &[f64]) -> LpProblem {
    let l = p.total_levels();
    let mut c = Vec::with_capacity(l);
    let mut rows = vec![vec![0.0; l]; p.num_sus];
    let mut k = 0;
    for s in 0..p.num_sus {
        for i in 0..p.num_levels(s) {
            c.push(w[s] * p.su_success[s][i]);
            rows[s][k] = p.power_levels[s][i];
            k += 1;
        }
    }
    let mut lp = LpProblem::new(c);
    for (s, row) in rows.into_iter().enumerate() {
        lp.add_le(row, p.power_budget[s]);
    }
    lp.add_le(vec![1.0; l], 1.0);
    lp
}

#[test]
fn zero_pu_load_matches_knapsack_oracle() {
    let mut r = rng(31);
    for _ in 0..50 {
        let p = random_params(&mut r, 3);
        let w = random_weights(&mut r, p.num_sus);
        let oracle = vertex_enumeration(&idle_only_problem(&p, &w)).unwrap();
        let got = solve_opt0(&p, &Objective::WeightedSum { weights: w }).unwrap();
        assert!(
            (got.objective - oracle).abs() < 1e-9,
            "{} vs {oracle}",
            got.objective
        );
        assert!(got.policy.busy_mass() < 1e-12);
    }
}

#[test]
fn optimum_decreases_with_pu_load() {
    let mut r = rng(32);
    for _ in 0..20 {
        let p0 = random_params(&mut r, 4);
        let hat = max_stable_rate(&p0).unwrap();
        let obj = Objective::sum_rate(p0.num_sus);
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let v = solve_opt0(&p0.with_arrival_rate(hat * k as f64 / 10.0), &obj)
                .unwrap()
                .objective;
            assert!(v <= last + 1e-9);
            last = v;
        }
    }
}

#[test]
fn frank_wolfe_agrees_with_simplex_on_linear_objectives() {
    let mut r = rng(33);
    for _ in 0..25 {
        let p0 = random_params(&mut r, 3);
        let p = p0.with_arrival_rate(max_stable_rate(&p0).unwrap() * r.random_range(0.0..0.95));
        let obj = Objective::WeightedSum {
            weights: random_weights(&mut r, p.num_sus),
        };
        let lp = solve_opt0(&p, &obj).unwrap();
        let fw = solve_opt0_with(&p, &obj, &frank_wolfe()).unwrap();
        assert_eq!(fw.status, SolveStatus::Optimal);
        assert!((lp.objective - fw.objective).abs() <= 1e-6);
        assert!(fw.audit.within(1e-9, 1e-9), "{:?}", fw.audit);
    }
}

#[test]
fn log_utility_certificate_and_dominance() {
    let mut r = rng(34);
    for _ in 0..15 {
        let p0 = random_params(&mut r, 4);
        let p = p0.with_arrival_rate(max_stable_rate(&p0).unwrap() * r.random_range(0.0..0.9));
        let obj = Objective::log_utility();
        let fw = solve_opt0(&p, &obj).unwrap();
        assert_eq!(fw.status, SolveStatus::Optimal);
        assert!(fw.gap.unwrap() <= 1e-6);
        assert!(fw.audit.within(1e-9, 1e-9));
        // No vertex of the weighted-sum family may beat the concave optimum.
        for _ in 0..5 {
            let w = random_weights(&mut r, p.num_sus);
            let vertex = solve_opt0(&p, &Objective::WeightedSum { weights: w }).unwrap();
            assert!(obj.value(&vertex.rates) <= fw.objective + 1e-6);
        }
    }
}

#[test]
fn open_loop_steps_reach_the_same_log_optimum() {
    let p = reference::fig3_params().with_arrival_rate(0.4);
    let obj = Objective::log_utility();
    let best = solve_opt0(&p, &obj).unwrap().objective;
    let opts = SolveOptions {
        method: Method::FrankWolfe,
        frank_wolfe: FwOptions {
            step: StepRule::OpenLoop,
            away_steps: false,
            gap_tol: 1e-4,
            max_iters: 100_000,
        },
    };
    let slow = solve_opt0_with(&p, &obj, &opts).unwrap();
    assert!(slow.objective <= best + 1e-9);
    assert!(best - slow.objective <= 1e-4);
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(35);
    let objs = [
        Objective::log_utility(),
        Objective::WeightedSum {
            weights: vec![0.5, 1.0, 2.0],
        },
        Objective::saturated(Objective::log_utility(), vec![0.3, 0.6, 0.9]),
    ];
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(0.01..1.0)).collect();
        for obj in &objs {
            let g = obj.gradient(&x);
            for s in 0..3 {
                // Skip points within a step of a saturation kink.
                if let Some(caps) = obj.caps() {
                    if (x[s] - caps[s]).abs() < 1e-4 {
                        continue;
                    }
                }
                let h = 1e-6;
                let mut up = x.clone();
                let mut dn = x.clone();
                up[s] += h;
                dn[s] -= h;
                let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
                assert!(
                    (fd - g[s]).abs() < 1e-5 * (1.0 + g[s].abs()),
                    "{fd} vs {}",
                    g[s]
                );
            }
        }
    }
}

#[test]
fn light_exogenous_traffic_is_fully_served() {
    let p = reference::fig3_params().with_arrival_rate(0.5);
    let arrivals = [0.01, 0.02, 0.0, 0.03, 0.01];
    let r = solve_throughput(&p, &arrivals, &Objective::sum_rate(5)).unwrap();
    let thr = r.throughput.unwrap();
    for (t, a) in thr.iter().zip(&arrivals) {
        assert!((t - a).abs() < 1e-9);
    }
    assert!(r.admission.unwrap().iter().all(|&a| (a - 1.0).abs() < 1e-9));
    // Leftover capacity goes to queue slack rather than being dropped.
    for (rate, a) in r.rates.iter().zip(&arrivals) {
        assert!(*rate >= a - 1e-12);
    }
}

#[test]
fn heavy_exogenous_traffic_is_throttled() {
    let p = reference::fig3_params().with_arrival_rate(0.3);
    let free = solve_opt0(&p, &Objective::sum_rate(5)).unwrap();
    let arrivals = vec![0.9; 5];
    let r = solve_throughput(&p, &arrivals, &Objective::sum_rate(5)).unwrap();
    assert!((r.objective - free.objective).abs() < 1e-9);
    for (adm, thr) in r.admission.unwrap().iter().zip(r.throughput.unwrap()) {
        assert!(*adm < 1.0);
        assert!((adm * 0.9 - thr).abs() < 1e-12);
    }
}

#[test]
fn saturated_utility_rejected_for_throughput() {
    let p = reference::fig3_params();
    let sat = Objective::saturated(Objective::sum_rate(5), vec![0.1; 5]);
    assert!(solve_throughput(&p, &[0.1; 5], &sat).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lp_solutions_are_feasible(seed in 0u64..10_000, frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let p0 = random_params(&mut r, 4);
        let p = p0.with_arrival_rate(max_stable_rate(&p0).unwrap() * frac);
        let rep = solve_opt0(&p, &Objective::sum_rate(p.num_sus)).unwrap();
        prop_assert!(rep.audit.within(1e-9, 1e-9), "{:?}", rep.audit);
        prop_assert_eq!(rep.gap, Some(0.0));
    }
}
