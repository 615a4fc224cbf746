//! Warmup-then-cosine learning-rate schedule.

use crate::error::{Error, Result};

/// Linear warmup from `lr_start` to `lr_peak` over `warmup_epochs`, then
/// cosine annealing down to `lr_end` at `total_epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub warmup_epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            warmup_epochs: 10,
            lr_start: 1e-8,
            lr_peak: 1e-5,
            lr_end: 1e-6,
            total_epochs: 50,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::config(format!(
                "warmup ({}) exceeds total epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        for (name, lr) in [
            ("lr_start", self.lr_start),
            ("lr_peak", self.lr_peak),
            ("lr_end", self.lr_end),
        ] {
            if !(lr > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    /// Learning rate at an integer epoch in [0, total_epochs].
    ///
    /// The three anchor epochs (0, warmup, total) return the configured
    /// values exactly.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let epoch = epoch.min(self.total_epochs);
        if epoch == 0 && self.warmup_epochs > 0 {
            return self.lr_start;
        }
        if epoch == self.warmup_epochs {
            return self.lr_peak;
        }
        if epoch == self.total_epochs {
            return self.lr_end;
        }
        if epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            return self.lr_start + (self.lr_peak - self.lr_start) * t;
        }
        let span = (self.total_epochs - self.warmup_epochs) as f64;
        let t = (epoch - self.warmup_epochs) as f64 / span;
        self.lr_end + (self.lr_peak - self.lr_end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_epochs_are_exact() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 1e-8);
        assert_eq!(s.lr_at(10), 1e-5);
        assert_eq!(s.lr_at(50), 1e-6);
    }

    #[test]
    fn warmup_is_increasing_then_cosine_nonincreasing() {
        let s = LrSchedule::default();
        for epoch in 0..10 {
            assert!(s.lr_at(epoch) < s.lr_at(epoch + 1), "warmup epoch {epoch}");
        }
        for epoch in 10..50 {
            assert!(
                s.lr_at(epoch) >= s.lr_at(epoch + 1),
                "annealing epoch {epoch}: {} then {}",
                s.lr_at(epoch),
                s.lr_at(epoch + 1)
            );
        }
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let s = LrSchedule::default();
        // One epoch before the boundary is within 1.2x of a linear step of
        // the peak; the cosine side starts exactly at the peak.
        let before = s.lr_at(9);
        let at = s.lr_at(10);
        assert!(at > before);
        assert!((at - before) < 2.0 * (s.lr_peak - s.lr_start) / 10.0);
    }

    #[test]
    fn degenerate_warmup_zero() {
        let s = LrSchedule {
            warmup_epochs: 0,
            ..LrSchedule::default()
        };
        assert_eq!(s.lr_at(0), s.lr_peak);
        assert_eq!(s.lr_at(50), s.lr_end);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut s = LrSchedule::default();
        s.warmup_epochs = 60;
        assert!(s.validate().is_err());
        s = LrSchedule::default();
        s.lr_peak = 0.0;
        assert!(s.validate().is_err());
    }
}
