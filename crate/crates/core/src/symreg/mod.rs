//! Genetic-programming search for single-feature formulas.
//!
//! Fitness is the mean squared error of the best affine rescaling of the
//! expression, divided by the target variance, plus a per-node parsimony
//! penalty. Individuals that break the variable or nonlinearity limits get
//! infinite fitness, so anything that survives selection complies.

mod expr;
mod gp;

pub use expr::{eval_expr, BinOp, Expression, Node, UnOp, SEARCH_VARS};
pub use gp::{gp_discover, Discovery};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::Var;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub parsimony: f64,
    pub p_crossover: f64,
    pub p_subtree: f64,
    pub p_hoist: f64,
    pub p_point: f64,
    pub seed: u64,
    pub max_vars: usize,
    pub max_nonlinear: usize,
    /// Offspring larger than this are replaced by a copy of their parent.
    pub max_size: usize,
    /// Depth range for half-and-half initialization.
    pub init_depth: (usize, usize),
    /// Candidate variables; those missing from any record are dropped.
    pub variables: Vec<Var>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 1000,
            generations: 20,
            tournament: 20,
            parsimony: 1e-3,
            p_crossover: 0.9,
            p_subtree: 0.05,
            p_hoist: 0.05,
            p_point: 0.05,
            seed: 0,
            max_vars: 3,
            max_nonlinear: 2,
            max_size: 40,
            init_depth: (2, 5),
            variables: SEARCH_VARS.to_vec(),
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_crossover, self.p_subtree, self.p_hoist, self.p_point];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(
                "operator probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.population == 0 || self.generations == 0 || self.tournament == 0 {
            return Err(Error::InvalidInput(
                "population, generations and tournament size must be at least 1".into(),
            ));
        }
        if self.init_depth.0 == 0 || self.init_depth.0 > self.init_depth.1 {
            return Err(Error::InvalidInput(
                "invalid initialization depth range".into(),
            ));
        }
        if !(self.parsimony >= 0.0) {
            return Err(Error::InvalidInput("parsimony must be non-negative".into()));
        }
        Ok(())
    }
}

/// Distinct variables ≤ max_vars and nonlinear nodes ≤ max_nonlinear.
pub fn complexity_filter(expr: &Expression, config: &GpConfig) -> bool {
    expr.variables().len() <= config.max_vars && expr.nonlinear_count() <= config.max_nonlinear
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_examples() {
        let c = GpConfig::default();
        let four: Expression = "add(mul(gamma, bits), add(entropy, rho_s_bar))"
            .parse()
            .unwrap();
        assert!(!complexity_filter(&four, &c));
        let e: Expression = "add(gamma, exp(gamma))".parse().unwrap();
        assert!(complexity_filter(&e, &c));
        let triple: Expression = "log(log(log(rho_s_bar)))".parse().unwrap();
        assert!(!complexity_filter(&triple, &c));
        let relaxed = GpConfig {
            max_nonlinear: 3,
            ..GpConfig::default()
        };
        assert!(complexity_filter(&triple, &relaxed));
    }

    #[test]
    fn config_validation() {
        assert!(GpConfig::default().validate().is_ok());
        assert!(GpConfig {
            p_crossover: 1.5,
            ..GpConfig::default()
        }
        .validate()
        .is_err());
        assert!(GpConfig {
            population: 0,
            ..GpConfig::default()
        }
        .validate()
        .is_err());
    }
}
