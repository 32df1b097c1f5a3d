//! Bravyi-Haah module and block-code factory synthesis, plus the analytic
//! error, yield and area model.

mod builder;
mod circuit;
mod model;

use serde::{Deserialize, Serialize};

pub use builder::{
    ancilla_per_module, build_factory, build_factory_with, build_module, canonical_wiring,
    default_reuse_plan, modules_in_round, qubits_per_module, raw_per_module, FactoryChoices,
    ReusePlan,
};
pub use circuit::{Circuit, Gate, GateKind, ModuleQubits, PortLink, QubitId, QubitRef, QubitRole, SlotKey};
pub use model::{build_error_model, code_distance, round_area, round_error, success_probability, ErrorModel, MAX_DISTANCE};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReusePolicy {
    Reuse,
    NoReuse,
}

impl ReusePolicy {
    pub fn label(self) -> &'static str {
        match self {
            ReusePolicy::Reuse => "R",
            ReusePolicy::NoReuse => "NR",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactoryConfig {
    pub capacity_k: usize,
    pub levels_l: usize,
    /// Error rate of raw injected magic states.
    pub eps_inject: f64,
    pub target_error: f64,
    pub reuse_policy: ReusePolicy,
    pub seed: u64,
    /// Round-`r` code distance protects `distance_budget_scale * eps_r`.
    pub distance_budget_scale: f64,
}

impl Default for FactoryConfig {
    fn default() -> Self {
        FactoryConfig {
            capacity_k: 2,
            levels_l: 1,
            eps_inject: 1e-3,
            target_error: 1e-9,
            reuse_policy: ReusePolicy::NoReuse,
            seed: 0,
            distance_budget_scale: 1.0,
        }
    }
}

impl FactoryConfig {
    pub fn new(capacity_k: usize, levels_l: usize) -> Self {
        FactoryConfig { capacity_k, levels_l, ..Self::default() }
    }

    pub fn with_reuse(mut self, policy: ReusePolicy) -> Self {
        self.reuse_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity_k == 0 {
            return Err(Error::InvalidConfig("capacity k must be at least 1".into()));
        }
        if self.levels_l == 0 {
            return Err(Error::InvalidConfig("levels must be at least 1".into()));
        }
        if !(self.eps_inject > 0.0 && self.eps_inject < 1.0) {
            return Err(Error::InvalidConfig(format!("eps_inject {} not in (0,1)", self.eps_inject)));
        }
        if !(self.target_error > 0.0 && self.target_error < 1.0) {
            return Err(Error::InvalidConfig(format!("target_error {} not in (0,1)", self.target_error)));
        }
        if !(self.distance_budget_scale > 0.0 && self.distance_budget_scale.is_finite()) {
            return Err(Error::InvalidConfig("distance_budget_scale must be positive".into()));
        }
        let limit = 1.0 / raw_per_module(self.capacity_k) as f64;
        if self.eps_inject >= limit {
            return Err(Error::YieldThreshold { eps: self.eps_inject, k: self.capacity_k, limit });
        }
        Ok(())
    }
}
