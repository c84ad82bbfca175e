//! Sliding-window coverage plateau detection.
//!
//! The detector compares the cumulative edge count at iteration `i` with the
//! count `window` iterations earlier. Once at least `window` iterations have
//! run, an average gain strictly below `epsilon` edges per iteration is a
//! plateau.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub window: usize,
    pub epsilon: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            window: 20,
            epsilon: 0.5,
        }
    }
}

impl PlateauConfig {
    pub fn new(window: usize, epsilon: f64) -> Result<Self, PlateauError> {
        if window == 0 {
            return Err(PlateauError::ZeroWindow);
        }
        if epsilon.is_nan() || epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(PlateauError::BadEpsilon(epsilon));
        }
        Ok(PlateauConfig { window, epsilon })
    }

    /// Iterations required before detection can fire.
    pub fn min_iterations(&self) -> usize {
        self.window
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq)]
pub enum PlateauError {
    #[error("insufficient history: iteration {i} is below window {window}")]
    InsufficientHistory { i: usize, window: usize },
    #[error("history has no entry for iteration {0}")]
    MissingIteration(usize),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("epsilon must be a positive real, got {0}")]
    BadEpsilon(f64),
}

/// `history[i] - history[i - window]`.
pub fn increment(history: &[u64], i: usize, window: usize) -> Result<u64, PlateauError> {
    if window == 0 {
        return Err(PlateauError::ZeroWindow);
    }
    if i < window {
        return Err(PlateauError::InsufficientHistory { i, window });
    }
    let now = *history.get(i).ok_or(PlateauError::MissingIteration(i))?;
    Ok(now.saturating_sub(history[i - window]))
}

/// Average new edges per iteration over the window.
pub fn rate(history: &[u64], i: usize, window: usize) -> Result<f64, PlateauError> {
    Ok(increment(history, i, window)? as f64 / window as f64)
}

/// 1 on a plateau at iteration `i`, else 0.
pub fn detect(history: &[u64], i: usize, config: &PlateauConfig) -> u8 {
    match rate(history, i, config.window) {
        Ok(r) if r < config.epsilon => 1,
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn increments() {
        assert_eq!(increment(&[0, 10, 20, 30, 40, 50], 5, 5), Ok(50));
        assert_eq!(increment(&[40; 6], 5, 5), Ok(0));
        assert_eq!(increment(&[0, 5, 5, 8, 8, 9], 5, 3), Ok(4));
        assert_eq!(
            increment(&[0, 1, 2], 2, 3),
            Err(PlateauError::InsufficientHistory { i: 2, window: 3 })
        );
    }

    #[test]
    fn rates() {
        assert_eq!(rate(&[0, 10, 20, 30, 40, 50], 5, 5), Ok(10.0));
        assert_eq!(rate(&[40; 6], 5, 5), Ok(0.0));
        let r = rate(&[0, 5, 5, 8, 8, 9], 5, 3).unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn detection() {
        let cfg = PlateauConfig::new(5, 0.5).unwrap();
        assert_eq!(detect(&[40; 6], 5, &cfg), 1);
        assert_eq!(detect(&[0, 10, 20, 30, 40, 50], 5, &cfg), 0);
        let boundary = PlateauConfig::new(4, 0.5).unwrap();
        assert_eq!(detect(&[0, 0, 1, 1, 2], 4, &boundary), 0);
        assert_eq!(detect(&[40; 6], 4, &cfg), 0);
    }

    #[test]
    fn config_validation() {
        assert_eq!(PlateauConfig::new(0, 1.0), Err(PlateauError::ZeroWindow));
        assert!(PlateauConfig::new(1, 0.0).is_err());
        assert!(PlateauConfig::new(1, f64::NAN).is_err());
    }

    fn monotone(max_len: usize) -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..5, 1..max_len).prop_map(|steps| {
            steps
                .iter()
                .scan(0u64, |acc, &s| {
                    *acc += s;
                    Some(*acc)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn never_fires_before_window(h in monotone(40), w in 1usize..=10, eps in 0.01f64..5.0) {
            let cfg = PlateauConfig::new(w, eps).unwrap();
            for i in 0..w.min(h.len()) {
                prop_assert_eq!(detect(&h, i, &cfg), 0);
            }
        }

        #[test]
        fn scaling_multiplies_rate(h in monotone(40), w in 1usize..=10, k in 1u64..50) {
            let scaled: Vec<u64> = h.iter().map(|v| v * k).collect();
            for i in w..h.len() {
                let a = rate(&h, i, w).unwrap();
                let b = rate(&scaled, i, w).unwrap();
                prop_assert!((b - a * k as f64).abs() < 1e-9);
            }
        }
    }
}
