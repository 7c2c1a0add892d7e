//! Gradient-difference unlearning: descent on the retain set and ascent on
//! the forget set, with a pure-ascent mode, a combined-objective mode
//! (`𝓛_r − λ𝓛_f`), SGD or AdamW, and a divergence guard.

mod optim;
mod session;

pub use optim::{
    adamw_step, grad_difference_direction, grad_difference_step, sgd_step, AdamWParams, OptState,
};
pub use session::{
    compute_objective_grads, run_unlearning, train_supervised, ObjectiveGrads, Outcome, RunResult,
    SessionOptions, UnlearnSession,
};

use serde::{Deserialize, Serialize};

pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_GUARD_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    #[default]
    GradientDifference,
    PureAscent,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adamw {
        #[serde(default = "defaults::beta1")]
        beta1: f64,
        #[serde(default = "defaults::beta2")]
        beta2: f64,
        #[serde(default = "defaults::eps")]
        eps: f64,
        #[serde(default = "defaults::weight_decay")]
        weight_decay: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adamw {
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            weight_decay: defaults::weight_decay(),
        }
    }
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuardMode {
    Halt,
    #[default]
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    pub norm_factor: f64,
    pub mode: GuardMode,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            norm_factor: DEFAULT_GUARD_FACTOR,
            mode: GuardMode::Record,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha_r: f64,
    pub alpha_f: f64,
    pub lambda: f64,
    pub optimizer: OptimizerConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub guard: GuardConfig,
    pub objective_mode: ObjectiveMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_r: 1.0,
            alpha_f: 1.0,
            lambda: 1.0,
            optimizer: OptimizerConfig::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            iterations: 1000,
            seed: 0,
            guard: GuardConfig::default(),
            objective_mode: ObjectiveMode::GradientDifference,
        }
    }
}

impl TrainConfig {
    /// Every constraint violation, each naming its field under `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, field: &str, rule: &str, value: String| {
            if !ok {
                v.push(format!("{prefix}{field} must be {rule} (got {value})"));
            }
        };
        check(self.alpha_r >= 0.0 && self.alpha_r.is_finite(), "alpha_r", ">= 0", self.alpha_r.to_string());
        check(self.alpha_f >= 0.0 && self.alpha_f.is_finite(), "alpha_f", ">= 0", self.alpha_f.to_string());
        check(self.lambda > 0.0 && self.lambda.is_finite(), "lambda", "> 0", self.lambda.to_string());
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "> 0",
            self.learning_rate.to_string(),
        );
        check(self.batch_size >= 1, "batch_size", ">= 1", self.batch_size.to_string());
        check(
            self.guard.norm_factor > 1.0,
            "guard.norm_factor",
            "> 1",
            self.guard.norm_factor.to_string(),
        );
        if let OptimizerConfig::Adamw { beta1, beta2, eps, weight_decay } = self.optimizer {
            check((0.0..1.0).contains(&beta1), "optimizer.beta1", "in [0, 1)", beta1.to_string());
            check((0.0..1.0).contains(&beta2), "optimizer.beta2", "in [0, 1)", beta2.to_string());
            check(eps > 0.0, "optimizer.eps", "> 0", eps.to_string());
            check(weight_decay >= 0.0, "optimizer.weight_decay", ">= 0", weight_decay.to_string());
        }
        v
    }

    /// Signed weights `(c_r, c_f)` of the gradient the optimizer descends:
    /// `g_eff = c_r ∇𝓛_r + c_f ∇𝓛_f`.
    pub fn step_coefficients(&self) -> (f64, f64) {
        match self.objective_mode {
            ObjectiveMode::GradientDifference => {
                let alpha = if self.alpha_r > 0.0 { self.alpha_r } else { 1.0 };
                (self.alpha_r / alpha, -self.alpha_f / alpha)
            }
            ObjectiveMode::PureAscent => (0.0, -1.0),
            ObjectiveMode::Combined => (1.0, -self.lambda),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(TrainConfig::default().violations("train.").is_empty());
    }

    #[test]
    fn violations_name_every_field() {
        let cfg = TrainConfig {
            alpha_r: -1.0,
            lambda: 0.0,
            batch_size: 0,
            ..Default::default()
        };
        let v = cfg.violations("train.");
        assert_eq!(v.len(), 3);
        assert!(v[0].contains("train.alpha_r"));
        assert!(v[1].contains("train.lambda"));
        assert!(v[2].contains("train.batch_size"));
    }

    #[test]
    fn step_coefficients_per_mode() {
        let mut cfg = TrainConfig {
            alpha_r: 0.5,
            alpha_f: 0.25,
            ..Default::default()
        };
        assert_eq!(cfg.step_coefficients(), (1.0, -0.5));
        cfg.alpha_r = 0.0;
        assert_eq!(cfg.step_coefficients(), (0.0, -0.25));
        cfg.objective_mode = ObjectiveMode::PureAscent;
        assert_eq!(cfg.step_coefficients(), (0.0, -1.0));
        cfg.objective_mode = ObjectiveMode::Combined;
        cfg.lambda = 2.0;
        assert_eq!(cfg.step_coefficients(), (1.0, -2.0));
    }
}
