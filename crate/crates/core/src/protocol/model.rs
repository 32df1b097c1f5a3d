//! Analytic error, yield and area model of a block-code factory.

use serde::{Deserialize, Serialize};

use super::{modules_in_round, qubits_per_module, raw_per_module, FactoryConfig};
use crate::error::{Error, Result};

/// Largest code distance the distance search will consider.
pub const MAX_DISTANCE: u32 = 99;

/// Output error of one distillation round: `(1 + 3k) * eps^2`.
pub fn round_error(eps_in: f64, k: usize) -> f64 {
    (1.0 + 3.0 * k as f64) * eps_in * eps_in
}

/// First-order success probability `1 - (3k + 8) * eps`.
pub fn success_probability(eps_in: f64, k: usize) -> Result<f64> {
    let limit = 1.0 / raw_per_module(k) as f64;
    if !(eps_in >= 0.0 && eps_in < limit) {
        return Err(Error::YieldThreshold { eps: eps_in, k, limit });
    }
    Ok(1.0 - raw_per_module(k) as f64 * eps_in)
}

/// Smallest odd `d >= 3` with `d * (100 eps_phys)^((d+1)/2) <= eps_budget`.
pub fn code_distance(eps_budget: f64, eps_phys: f64) -> Result<u32> {
    let infeasible = Error::InfeasibleDistance { budget: eps_budget, eps_phys, max: MAX_DISTANCE };
    if !(eps_phys > 0.0 && eps_phys < 1e-2) || !(eps_budget > 0.0) {
        return Err(infeasible);
    }
    let ratio = 100.0 * eps_phys;
    (3..=MAX_DISTANCE)
        .step_by(2)
        .find(|&d| d as f64 * ratio.powi(d.div_ceil(2) as i32) <= eps_budget)
        .ok_or(infeasible)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    /// Output error after each round, `eps_by_round[r - 1]`.
    pub eps_by_round: Vec<f64>,
    pub d_by_round: Vec<u32>,
    pub success_by_round: Vec<f64>,
    /// Module groups per round (`3k + 8`).
    pub groups_by_round: Vec<usize>,
    /// Modules per group (`k`).
    pub modules_per_group: Vec<usize>,
}

pub fn build_error_model(config: &FactoryConfig) -> Result<ErrorModel> {
    config.validate()?;
    let k = config.capacity_k;
    let mut eps = config.eps_inject;
    let mut model = ErrorModel {
        eps_by_round: Vec::new(),
        d_by_round: Vec::new(),
        success_by_round: Vec::new(),
        groups_by_round: Vec::new(),
        modules_per_group: Vec::new(),
    };
    for _ in 0..config.levels_l {
        model.success_by_round.push(success_probability(eps, k)?);
        eps = round_error(eps, k);
        model.eps_by_round.push(eps);
        model
            .d_by_round
            .push(code_distance(config.distance_budget_scale * eps, config.eps_inject)?);
        model.groups_by_round.push(raw_per_module(k));
        model.modules_per_group.push(k);
    }
    Ok(model)
}

/// Physical qubits of round `r`: `m^(r-1) * g^(l-r) * (5k+13) * d_r^2`.
pub fn round_area(config: &FactoryConfig, model: &ErrorModel, r: usize) -> Result<u64> {
    let l = config.levels_l;
    if r == 0 || r > l || r > model.d_by_round.len() {
        return Err(Error::InvalidConfig(format!("round {r} outside 1..={l}")));
    }
    let m = model.modules_per_group[r - 1] as u64;
    let g = model.groups_by_round[r - 1] as u64;
    let d = model.d_by_round[r - 1] as u64;
    let overflow = || Error::InvalidConfig("round area overflows".into());
    let count = m
        .checked_pow((r - 1) as u32)
        .and_then(|a| g.checked_pow((l - r) as u32).and_then(|b| a.checked_mul(b)))
        .ok_or_else(overflow)?;
    debug_assert_eq!(count, modules_in_round(config.capacity_k, l, r).unwrap_or(0) as u64);
    count
        .checked_mul(qubits_per_module(config.capacity_k) as u64)
        .and_then(|x| x.checked_mul(d * d))
        .ok_or_else(overflow)
}
