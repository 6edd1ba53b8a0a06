//! Patience-based early stopping on a higher-is-better metric.

/// Stops when the current value aₜ fails to beat every one of the
/// preceding k values: aₜ ≤ aᵢ for all i ∈ {t−1, …, t−k}. Ties count as
/// no improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// Stop now; `rollback` is the index (into the observed history) of
    /// the checkpoint to restore, k steps back.
    Stop { rollback: usize },
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        EarlyStopper {
            patience,
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn update(&mut self, value: f64) -> Decision {
        self.history.push(value);
        let t = self.history.len() - 1;
        if t < self.patience {
            return Decision::Continue;
        }
        let window = &self.history[t - self.patience..t];
        if window.iter().all(|&earlier| value <= earlier) {
            Decision::Stop {
                rollback: t - self.patience,
            }
        } else {
            Decision::Continue
        }
    }
}
