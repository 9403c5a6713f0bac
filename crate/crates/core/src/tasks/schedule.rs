//! The annealing schedule balancing reconstruction against supervision.

use crate::error::{Error, Result};

/// Linear decay of the mixing weight from 1 to `alpha_min` over `steps`
/// optimizer steps, clamped afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    pub alpha_min: f64,
    pub steps: u64,
}

impl AnnealSchedule {
    pub fn new(alpha_min: f64, steps: u64) -> Result<Self> {
        if !(alpha_min > 0.0 && alpha_min <= 1.0) {
            return Err(Error::InvalidData(format!("alpha_min {} outside (0, 1]", alpha_min)));
        }
        if steps == 0 {
            return Err(Error::InvalidData("annealing needs at least one step".to_string()));
        }
        Ok(AnnealSchedule { alpha_min, steps })
    }

    pub fn alpha_at(&self, step: u64) -> f64 {
        if step >= self.steps {
            // exact, not 1 - (1 - alpha_min): the subtraction leaves float
            // residue and the endpoint is contractual
            return self.alpha_min;
        }
        1.0 - (1.0 - self.alpha_min) * step as f64 / self.steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let sched = AnnealSchedule::new(0.01, 100).unwrap();
        assert_eq!(sched.alpha_at(0), 1.0);
        assert_eq!(sched.alpha_at(100), 0.01);
        assert_eq!(sched.alpha_at(10_000), 0.01);
        assert!((sched.alpha_at(50) - 0.505).abs() < 1e-12);
    }

    #[test]
    fn nonincreasing_and_bounded() {
        let sched = AnnealSchedule::new(0.01, 37).unwrap();
        let mut prev = f64::INFINITY;
        for s in 0..80 {
            let a = sched.alpha_at(s);
            assert!(a <= prev);
            assert!((0.01..=1.0).contains(&a));
            prev = a;
        }
    }

    #[test]
    fn validation() {
        assert!(AnnealSchedule::new(0.0, 10).is_err());
        assert!(AnnealSchedule::new(1.5, 10).is_err());
        assert!(AnnealSchedule::new(0.01, 0).is_err());
    }
}
