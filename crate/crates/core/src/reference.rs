//! Named reference instances.
//!
//! Every SU uses levels `{0, .25, .5, .75, 1}` with
//! `r_p(s,·) = {.4, .5, .6, .7, .8}`, `r_p(0) = .4` and
//! `r_s(·) = {0, .3, .5, .8, 1}`. The region-plot instance uses a budget of
//! 0.5 per SU at `λ_p = 0.3`; the five-SU instance uses a budget of 0.15.

use crate::model::SystemParams;

pub const POWER_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const COOP_SUCCESS: [f64; 5] = [0.4, 0.5, 0.6, 0.7, 0.8];
pub const SU_SUCCESS: [f64; 5] = [0.0, 0.3, 0.5, 0.8, 1.0];
pub const SOLO_SUCCESS: f64 = 0.4;

/// Region-plot instance with `num_sus` SUs, `P̂_s = 0.5`, `λ_p = 0.3`.
pub fn fig2_params(num_sus: usize) -> SystemParams {
    SystemParams::homogeneous(
        num_sus,
        &POWER_LEVELS,
        &SU_SUCCESS,
        &COOP_SUCCESS,
        SOLO_SUCCESS,
        0.5,
        0.3,
    )
}

/// Five SUs with `P̂_s = 0.15`; `λ_p` defaults to 0.3.
pub fn fig3_params() -> SystemParams {
    SystemParams::homogeneous(
        5,
        &POWER_LEVELS,
        &SU_SUCCESS,
        &COOP_SUCCESS,
        SOLO_SUCCESS,
        0.15,
        0.3,
    )
}

/// The PU arrival-rate grid swept in the five-SU experiments.
pub const FIG3_LAMBDA_GRID: [f64; 6] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// Target rates for warm-started re-solves from `λ_p = 0.5`.
pub const WARM_START_GRID: [f64; 7] = [0.35, 0.4, 0.45, 0.52, 0.55, 0.6, 0.7];
