//! Plateau learning-rate halving and early stopping, both driven by the
//! per-epoch validation loss.

/// Halves the learning rate after `patience` consecutive epochs whose
/// validation loss is not strictly below the best seen so far, never going
/// below `floor`. A success, or a halving, resets the failure counter.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauHalving {
    lr: f64,
    floor: f64,
    patience: usize,
    best: f64,
    failures: usize,
}

impl PlateauHalving {
    pub fn new(lr: f64, floor: f64, patience: usize) -> Self {
        PlateauHalving {
            lr,
            floor,
            patience: patience.max(1),
            best: f64::INFINITY,
            failures: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    /// Records one validation loss and returns the learning rate for the next
    /// epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.failures = 0;
        } else {
            self.failures += 1;
            if self.failures >= self.patience {
                self.lr = (self.lr / 2.0).max(self.floor);
                self.failures = 0;
            }
        }
        self.lr
    }
}

/// Replays a validation-loss history through [`PlateauHalving`]; returns the
/// learning rate after each epoch.
pub fn lr_trace(val_losses: &[f64], lr: f64, floor: f64, patience: usize) -> Vec<f64> {
    let mut schedule = PlateauHalving::new(lr, floor, patience);
    val_losses.iter().map(|&v| schedule.observe(v)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `patience` epochs have passed since the best validation loss.
///
/// `val_losses[i]` is the loss after epoch `i + 1`.
pub fn early_stop_check(val_losses: &[f64], patience: usize) -> StopDecision {
    match best_epoch(val_losses) {
        Some(best) if val_losses.len() - best >= patience => StopDecision::Stop,
        _ => StopDecision::Continue,
    }
}

/// 1-based epoch of the first strict minimum.
pub fn best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i + 1, v));
        }
    }
    best.map(|(e, _)| e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn successes_keep_the_rate() {
        assert_eq!(lr_trace(&[1.0, 0.9, 0.8], 0.001, 0.0001, 3), [0.001; 3]);
    }

    #[test]
    fn three_failures_halve() {
        let trace = lr_trace(&[1.0, 1.1, 1.2, 1.3], 0.001, 0.0001, 3);
        assert_eq!(trace, [0.001, 0.001, 0.001, 0.0005]);
    }

    #[test]
    fn equal_loss_counts_as_failure() {
        let trace = lr_trace(&[1.0, 1.0, 1.0, 1.0], 0.001, 0.0001, 3);
        assert_eq!(trace[3], 0.0005);
    }

    #[test]
    fn success_resets_the_counter() {
        let trace = lr_trace(&[1.0, 1.1, 1.2, 0.5, 0.6, 0.7], 0.001, 0.0001, 3);
        assert_eq!(trace, [0.001; 6]);
    }

    #[test]
    fn early_stopping_counts_from_best() {
        let mut losses: Vec<f64> = (0..30).map(|i| 1.0 / f64::from(i + 1)).collect();
        assert_eq!(early_stop_check(&losses, 10), StopDecision::Continue);
        losses = vec![3.0, 2.0, 1.0];
        for epoch in 4..=13 {
            assert_eq!(early_stop_check(&losses, 10), StopDecision::Continue, "epoch {}", epoch - 1);
            losses.push(1.5);
        }
        assert_eq!(losses.len(), 13);
        assert_eq!(early_stop_check(&losses, 10), StopDecision::Stop);
        assert_eq!(best_epoch(&losses), Some(3));
    }
}
