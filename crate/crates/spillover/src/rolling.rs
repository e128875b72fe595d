//! Exponentially weighted rolling windows over a return panel.
//!
//! Observation weights depend only on the age of a row inside its window,
//! `w(age) = exp(-age / theta)`, so one [`WeightVector`] is shared by all
//! windows of a panel. `theta = f64::INFINITY` is the equal-weights limit
//! (classical VAR mode). Weights are raw: downstream weighted least
//! squares is invariant to their overall scale.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;

/// Per-row observation weights for one window, stored oldest first.
#[derive(Debug, Clone)]
pub struct WeightVector {
    weights: Vec<f64>,
    theta: f64,
}

impl WeightVector {
    /// Wraps raw positive weights (oldest first) without imposing the
    /// exponential shape; used for limit cases and scale-invariance tests.
    pub fn from_raw(weights: Vec<f64>, theta: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Data("weight vector must be non-empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Data("weights must be strictly positive and finite".into()));
        }
        Ok(WeightVector { weights, theta })
    }

    /// Window length this vector covers.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.len() == 0
    }

    /// Weights in row order (oldest first); the last entry is 1 for
    /// exponentially generated vectors.
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of the observation `age` rows behind the window end.
    pub fn at_age(&self, age: usize) -> f64 {
        self.weights[self.weights.len() - 1 - age]
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Builds the exponential weight vector `w(age) = exp(-age / theta)`.
///
/// The most recent observation has weight 1. `theta = f64::INFINITY`
/// yields equal weights. Panics if `window == 0` or `theta <= 0`.
pub fn exponential_weights(window: usize, theta: f64) -> WeightVector {
    assert!(window >= 1, "window must be at least 1");
    assert!(theta > 0.0, "theta must be positive (f64::INFINITY allowed)");
    let weights: Vec<f64> = (0..window)
        .map(|row| {
            let age = (window - 1 - row) as f64;
            (-age / theta).exp()
        })
        .collect();
    assert!(
        weights[0] > 0.0,
        "theta = {theta} underflows the oldest weight for window = {window}"
    );
    WeightVector { weights, theta }
}

/// A read-only view of `W` consecutive return rows plus the shared weights.
#[derive(Debug, Clone)]
pub struct WindowView<'a> {
    returns: DMatrixView<'a, f64>,
    end_date: NaiveDate,
    weights: &'a WeightVector,
    imputed_cells: usize,
}

impl<'a> WindowView<'a> {
    /// Window rows (oldest first), one column per entity.
    pub fn returns(&self) -> DMatrixView<'a, f64> {
        self.returns
    }

    /// Date labeling the window: the date of its last row.
    pub fn end_date(&self) -> NaiveDate {
        self.end_date
    }

    pub fn weights(&self) -> &'a WeightVector {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.returns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.nrows() == 0
    }

    pub fn n_entities(&self) -> usize {
        self.returns.ncols()
    }

    /// Fraction of imputed cells inside this window.
    pub fn imputed_fraction(&self) -> f64 {
        self.imputed_cells as f64 / (self.returns.nrows() * self.returns.ncols()) as f64
    }
}

fn count_imputed(mask: &DMatrix<bool>, start: usize, len: usize) -> usize {
    (start..start + len)
        .map(|i| (0..mask.ncols()).filter(|&j| mask[(i, j)]).count())
        .sum()
}

/// Enumerates rolling windows of length `weights.len()` advancing by
/// `stride` rows. Windows end at rows `W-1, W-1+stride, …`; the count is
/// `floor((T - W) / stride) + 1`.
pub fn rolling_windows<'a>(
    panel: &'a ReturnPanel,
    weights: &'a WeightVector,
    stride: usize,
) -> Result<Vec<WindowView<'a>>> {
    let w = weights.len();
    let t = panel.n_dates();
    if stride == 0 {
        return Err(Error::Data("stride must be at least 1".into()));
    }
    if t < w {
        return Err(Error::InsufficientData { needed: w, got: t });
    }
    let count = (t - w) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        let end = start + w - 1;
        out.push(WindowView {
            returns: panel.returns().rows(start, w),
            end_date: panel.dates()[end],
            weights,
            imputed_cells: count_imputed(panel.missing_mask(), start, w),
        });
    }
    Ok(out)
}
