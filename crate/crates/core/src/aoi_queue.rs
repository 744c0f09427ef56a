//! Age of information, the sensing-budget virtual queue, and the
//! drift-plus-penalty reward.
//!
//! The virtual queue accumulates `alpha(t)` arrivals against a constant
//! service of `alpha_max` per slot; keeping it stable keeps the long-run
//! sensing rate within budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AoiError {
    #[error("prediction loss must be finite, got {0}")]
    NonFiniteLoss(f64),
    #[error("alpha_max must lie in (0, 1], got {0}")]
    BadBudget(f64),
    #[error("v_param must be finite and >= 0, got {0}")]
    BadV(f64),
}

/// The DQN state: data age and virtual-queue backlog.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AoiQueueState {
    pub age: u64,
    pub queue: f64,
}

impl AoiQueueState {
    pub fn new(age: u64, queue: f64) -> Self {
        debug_assert!(queue >= 0.0);
        Self { age, queue }
    }

    /// Advances both components for one slot under `sense`.
    pub fn step(self, sense: bool, alpha_max: f64) -> Self {
        Self {
            age: step_age(self.age, sense),
            queue: step_queue(self.queue, sense, alpha_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub alpha_max: f64,
    pub v_param: f64,
}

impl BudgetConfig {
    pub fn new(alpha_max: f64, v_param: f64) -> Result<Self, AoiError> {
        let b = Self { alpha_max, v_param };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), AoiError> {
        if !(self.alpha_max > 0.0 && self.alpha_max <= 1.0) {
            return Err(AoiError::BadBudget(self.alpha_max));
        }
        if !(self.v_param >= 0.0 && self.v_param.is_finite()) {
            return Err(AoiError::BadV(self.v_param));
        }
        Ok(())
    }
}

pub fn step_age(age: u64, sense: bool) -> u64 {
    if sense {
        0
    } else {
        age + 1
    }
}

pub fn step_queue(queue: f64, sense: bool, alpha_max: f64) -> f64 {
    let arrival = if sense { 1.0 } else { 0.0 };
    (queue + arrival - alpha_max).max(0.0)
}

/// `-(V * loss + Q * a)`, with `Q` the backlog before this slot's update.
pub fn reward(v_param: f64, loss: f64, queue: f64, sense: bool) -> Result<f64, AoiError> {
    if !loss.is_finite() {
        return Err(AoiError::NonFiniteLoss(loss));
    }
    let arrival = if sense { 1.0 } else { 0.0 };
    Ok(-(v_param * loss + queue * arrival))
}

pub fn age_capped(age: u64, cap: u64) -> u64 {
    age.min(cap)
}

/// Upper bound for the per-slot cross-entropy fed to the reward: `ln(M) + 10`.
pub fn loss_ceiling(num_beams: usize) -> f64 {
    (num_beams as f64).ln() + 10.0
}

pub fn clamp_loss(loss: f64, num_beams: usize) -> f64 {
    loss.clamp(0.0, loss_ceiling(num_beams))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn age_recursion() {
        assert_eq!(step_age(3, true), 0);
        assert_eq!(step_age(3, false), 4);
        assert_eq!(step_age(0, false), 1);
    }

    #[test]
    fn queue_recursion() {
        assert_eq!(step_queue(2.0, true, 0.5), 2.5);
        assert_eq!(step_queue(0.2, false, 0.5), 0.0);
        assert_eq!(step_queue(0.0, false, 0.5), 0.0);
    }

    #[test]
    fn reward_values() {
        assert!((reward(10.0, 1.2, 3.0, true).unwrap() + 15.0).abs() < 1e-12);
        assert!((reward(10.0, 1.2, 3.0, false).unwrap() + 12.0).abs() < 1e-12);
        assert_eq!(reward(0.0, 123.0, 5.0, true).unwrap(), -5.0);
        assert!(matches!(
            reward(1.0, f64::INFINITY, 0.0, false),
            Err(AoiError::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn cap() {
        assert_eq!(age_capped(3, 5), 3);
        assert_eq!(age_capped(50, 5), 5);
        assert_eq!(age_capped(0, 5), 0);
    }

    #[test]
    fn budget_validation() {
        assert!(BudgetConfig::new(0.0, 1.0).is_err());
        assert!(BudgetConfig::new(1.0, 0.0).is_ok());
        assert!(BudgetConfig::new(1.01, 1.0).is_err());
        assert!(BudgetConfig::new(0.5, -1.0).is_err());
    }

    #[test]
    fn full_budget_keeps_queue_empty() {
        let mut s = AoiQueueState::default();
        for _ in 0..100 {
            s = s.step(true, 1.0);
            assert_eq!(s.queue, 0.0);
            assert_eq!(s.age, 0);
        }
    }

    proptest! {
        #[test]
        fn queue_never_negative(actions in prop::collection::vec(any::<bool>(), 1..400),
                                alpha in 0.01f64..=1.0, q0 in 0.0f64..5.0) {
            let mut q = q0;
            for a in actions {
                q = step_queue(q, a, alpha);
                prop_assert!(q >= 0.0);
            }
        }

        #[test]
        fn prefix_compliant_actions_bound_the_queue(alpha in 0.05f64..=1.0, len in 1usize..500,
                                                    q0 in 0.0f64..3.0) {
            // sense greedily whenever the running rate stays within budget
            let mut q = q0;
            let mut sensed = 0usize;
            for t in 1..=len {
                let a = (sensed + 1) as f64 <= alpha * t as f64;
                if a { sensed += 1; }
                q = step_queue(q, a, alpha);
                prop_assert!(q <= q0 + 1.0 + 1e-9, "q = {} at t = {}", q, t);
            }
        }

        #[test]
        fn reward_is_monotone(v in 0.0f64..100.0, l1 in 0.0f64..20.0, l2 in 0.0f64..20.0,
                              q1 in 0.0f64..50.0, q2 in 0.0f64..50.0, a in any::<bool>()) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(reward(v, hi, q1, a).unwrap() <= reward(v, lo, q1, a).unwrap());
            let (qlo, qhi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(reward(v, l1, qhi, true).unwrap() <= reward(v, l1, qlo, true).unwrap());
            prop_assert!(reward(v + 1.0, l1, q1, a).unwrap() <= reward(v, l1, q1, a).unwrap());
        }
    }
}
