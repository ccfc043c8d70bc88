use std::f64::consts::PI;

/// Step-indexed learning-rate schedule: linear warm-up from zero, cosine
/// decay to zero, and an optional cosine restart at the slow-start epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// `(restart step, restart value)`.
    pub restart: Option<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_epochs: usize, epochs: usize, steps_per_epoch: usize, restart: Option<(usize, f64)>) -> Self {
        Self {
            base,
            warmup_steps: warmup_epochs * steps_per_epoch,
            total_steps: epochs * steps_per_epoch,
            restart: restart.map(|(epoch, value)| (epoch * steps_per_epoch, value)),
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if let Some((at, value)) = self.restart {
            if step >= at && at < self.total_steps {
                let t = (step - at) as f64 / (self.total_steps - at) as f64;
                return 0.5 * value * (1.0 + (PI * t.min(1.0)).cos());
            }
        }
        if step < self.warmup_steps {
            return self.base * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let t = (step - self.warmup_steps) as f64 / span as f64;
        0.5 * self.base * (1.0 + (PI * t.min(1.0)).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let s = LrSchedule::new(0.2, 2, 10, 5, None);
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(5), 0.1);
        assert_eq!(s.lr(10), 0.2);
        assert!((s.lr(30) - 0.1).abs() < 1e-15);
        assert!(s.lr(49) > 0.0 && s.lr(49) < 1e-3);
        assert!(s.lr(50).abs() < 1e-15);
        for k in 10..49 {
            assert!(s.lr(k + 1) < s.lr(k));
        }
    }

    #[test]
    fn restart_at_slow_start() {
        let s = LrSchedule::new(1.2, 1, 10, 4, Some((5, 3.2)));
        assert!(s.lr(19) < 1.2);
        assert_eq!(s.lr(20), 3.2);
        assert!((s.lr(30) - 1.6).abs() < 1e-12);
        assert!(s.lr(39) < s.lr(38));
    }

    #[test]
    fn no_warmup() {
        let s = LrSchedule::new(0.5, 0, 4, 3, None);
        assert_eq!(s.lr(0), 0.5);
    }
}
