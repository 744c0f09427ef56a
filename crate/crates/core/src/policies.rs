//! Sensing policies: the learned agent plus fixed comparison baselines.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_queue::AoiQueueState;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("sensing budget must satisfy 0 < alpha_max <= 1, got {0}")]
    BadBudget(f64),
    #[error("unknown policy `{0}` (expected dqn, randomized, periodic, always or never)")]
    Unknown(String),
}

/// Policy arm selected in experiment configs. Budgeted arms take their
/// `alpha_max` from the run's budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Dqn,
    Randomized,
    Periodic,
    Always,
    Never,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Dqn,
        PolicyKind::Randomized,
        PolicyKind::Periodic,
        PolicyKind::Always,
        PolicyKind::Never,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dqn => "dqn",
            PolicyKind::Randomized => "randomized",
            PolicyKind::Periodic => "periodic",
            PolicyKind::Always => "always",
            PolicyKind::Never => "never",
        }
    }

    /// Whether the arm's behaviour depends on the sensing budget.
    pub fn is_budgeted(self) -> bool {
        matches!(
            self,
            PolicyKind::Dqn | PolicyKind::Randomized | PolicyKind::Periodic
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, PolicyError> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PolicyError::Unknown(s.to_string()))
    }
}

/// Per-slot sensing decision given the pre-action state.
pub trait SensingPolicy {
    fn decide(&mut self, state: &AoiQueueState) -> bool;
}

fn check_budget(alpha_max: f64) -> Result<(), PolicyError> {
    if alpha_max > 0.0 && alpha_max <= 1.0 {
        Ok(())
    } else {
        Err(PolicyError::BadBudget(alpha_max))
    }
}

/// I.i.d. Bernoulli(`alpha_max`) sensing.
#[derive(Debug, Clone)]
pub struct RandomizedPolicy {
    alpha_max: f64,
    rng: ChaCha8Rng,
}

impl RandomizedPolicy {
    pub fn new(alpha_max: f64, seed: u64) -> Result<Self, PolicyError> {
        check_budget(alpha_max)?;
        Ok(Self {
            alpha_max,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl SensingPolicy for RandomizedPolicy {
    fn decide(&mut self, _state: &AoiQueueState) -> bool {
        self.rng.random_bool(self.alpha_max)
    }
}

/// Senses at slot `t` iff `floor(t * alpha) > floor((t - 1) * alpha)`,
/// counting slots from zero.
#[derive(Debug, Clone)]
pub struct PeriodicPolicy {
    alpha_max: f64,
    slot: u64,
}

impl PeriodicPolicy {
    pub fn new(alpha_max: f64) -> Result<Self, PolicyError> {
        check_budget(alpha_max)?;
        Ok(Self { alpha_max, slot: 0 })
    }
}

impl SensingPolicy for PeriodicPolicy {
    fn decide(&mut self, _state: &AoiQueueState) -> bool {
        let t = self.slot as f64;
        self.slot += 1;
        (t * self.alpha_max).floor() > ((t - 1.0) * self.alpha_max).floor()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub bool);

impl ConstantPolicy {
    pub fn always() -> Self {
        Self(true)
    }

    pub fn never() -> Self {
        Self(false)
    }
}

impl SensingPolicy for ConstantPolicy {
    fn decide(&mut self, _state: &AoiQueueState) -> bool {
        self.0
    }
}

/// Builds a baseline arm. `Dqn` needs a trained network and returns `None`.
pub fn baseline(
    kind: PolicyKind,
    alpha_max: f64,
    seed: u64,
) -> Result<Option<Box<dyn SensingPolicy + Send>>, PolicyError> {
    Ok(match kind {
        PolicyKind::Dqn => None,
        PolicyKind::Randomized => Some(Box::new(RandomizedPolicy::new(alpha_max, seed)?)),
        PolicyKind::Periodic => Some(Box::new(PeriodicPolicy::new(alpha_max)?)),
        PolicyKind::Always => Some(Box::new(ConstantPolicy::always())),
        PolicyKind::Never => Some(Box::new(ConstantPolicy::never())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut dyn SensingPolicy, n: usize) -> Vec<bool> {
        let s = AoiQueueState::default();
        (0..n).map(|_| p.decide(&s)).collect()
    }

    #[test]
    fn periodic_half_alternates() {
        let a = run(&mut PeriodicPolicy::new(0.5).unwrap(), 6);
        assert_eq!(a, [true, false, true, false, true, false]);
        assert!(run(&mut PeriodicPolicy::new(1.0).unwrap(), 50)
            .iter()
            .all(|&x| x));
    }

    #[test]
    fn randomized_full_budget_always_senses() {
        assert!(run(&mut RandomizedPolicy::new(1.0, 3).unwrap(), 1000)
            .iter()
            .all(|&x| x));
    }

    #[test]
    fn budgets_are_validated() {
        assert_eq!(
            RandomizedPolicy::new(0.0, 0).unwrap_err(),
            PolicyError::BadBudget(0.0)
        );
        assert!(PeriodicPolicy::new(1.5).is_err());
        assert!(baseline(PolicyKind::Randomized, -0.1, 0).is_err());
        assert!(baseline(PolicyKind::Always, 0.0, 0).unwrap().is_some());
        assert!(baseline(PolicyKind::Dqn, 0.3, 0).unwrap().is_none());
    }

    #[test]
    fn constants() {
        assert!(run(&mut ConstantPolicy::always(), 10).iter().all(|&x| x));
        assert!(run(&mut ConstantPolicy::never(), 10).iter().all(|&x| !x));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("bandit".parse::<PolicyKind>().is_err());
    }
}
