//! Seeded synthetic generators with known ground truth.
//!
//! These back the Monte-Carlo oracles used across the test suites and the
//! `synth` CLI subcommand, so the whole pipeline is exercisable without
//! proprietary data. Innovations are Gaussian throughout; every generator
//! is a pure function of its spec and seed.

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::connectedness::shock_basis;
use crate::error::{Error, Result};
use crate::panel::{Entity, ReturnPanel};
use crate::te::ChangeSeries;

/// Steps discarded before sampling starts.
const BURN_IN: usize = 500;

/// Specification of a stationary VAR(1) panel generator.
#[derive(Debug, Clone)]
pub struct Var1Spec {
    /// Transition matrix; spectral radius must be below 1.
    pub coeff: DMatrix<f64>,
    /// Innovation covariance, symmetric PSD.
    pub noise_cov: DMatrix<f64>,
    /// Number of panel rows to emit (after burn-in).
    pub rows: usize,
    pub seed: u64,
    /// Entity labels; may carry `@REGION` tags.
    pub entities: Vec<String>,
    /// Date of the first emitted row; subsequent rows are consecutive days.
    pub start_date: NaiveDate,
}

impl Var1Spec {
    fn default_start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2006, 1, 2).unwrap()
    }

    fn default_entities(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("S{j:02}")).collect()
    }

    /// Zero transition matrix and identity covariance: an iid panel.
    pub fn independent(n: usize, rows: usize, seed: u64) -> Var1Spec {
        Var1Spec {
            coeff: DMatrix::zeros(n, n),
            noise_cov: DMatrix::identity(n, n),
            rows,
            seed,
            entities: Self::default_entities(n),
            start_date: Self::default_start(),
        }
    }

    /// Diagonal transition `ar * I` and identity covariance.
    pub fn diagonal_ar(n: usize, ar: f64, rows: usize, seed: u64) -> Var1Spec {
        Var1Spec {
            coeff: DMatrix::from_diagonal_element(n, n, ar),
            noise_cov: DMatrix::identity(n, n),
            rows,
            seed,
            entities: Self::default_entities(n),
            start_date: Self::default_start(),
        }
    }

    /// Dense Gaussian transition matrix rescaled to the given spectral
    /// radius, identity covariance.
    pub fn random_stable(n: usize, radius: f64, rows: usize, seed: u64) -> Var1Spec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15));
        let raw = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&raw).max(f64::MIN_POSITIVE);
        Var1Spec {
            coeff: raw * (radius / rho),
            noise_cov: DMatrix::identity(n, n),
            rows,
            seed,
            entities: Self::default_entities(n),
            start_date: Self::default_start(),
        }
    }
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Simulates `Y_t = A Y_{t-1} + eps_t` with Gaussian innovations and a
/// 500-step burn-in. Deterministic per seed.
pub fn generate_var1(spec: &Var1Spec) -> Result<ReturnPanel> {
    let n = spec.coeff.nrows();
    if spec.coeff.ncols() != n {
        return Err(Error::SynthSpec("transition matrix must be square".into()));
    }
    if spec.noise_cov.nrows() != n || spec.noise_cov.ncols() != n {
        return Err(Error::SynthSpec("covariance shape must match the transition matrix".into()));
    }
    if spec.entities.len() != n {
        return Err(Error::SynthSpec(format!(
            "{} entity labels for {} variables",
            spec.entities.len(),
            n
        )));
    }
    if spec.rows == 0 {
        return Err(Error::SynthSpec("rows must be positive".into()));
    }
    let rho = spectral_radius(&spec.coeff);
    if !(rho < 1.0) {
        return Err(Error::SynthSpec(format!(
            "transition matrix is unstable: spectral radius {rho} >= 1"
        )));
    }
    let loadings = shock_basis(&spec.noise_cov)
        .map_err(|e| Error::SynthSpec(format!("covariance is not PSD: {e}")))?
        .theta0;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut state = DVector::zeros(n);
    let draw = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &loadings * z
    };
    for _ in 0..BURN_IN {
        state = &spec.coeff * &state + draw(&mut rng);
    }

    let mut values = DMatrix::zeros(spec.rows, n);
    for t in 0..spec.rows {
        state = &spec.coeff * &state + draw(&mut rng);
        for j in 0..n {
            values[(t, j)] = state[j];
        }
    }

    let dates: Vec<NaiveDate> = (0..spec.rows)
        .map(|i| spec.start_date + Days::new(i as u64))
        .collect();
    let entities: Vec<Entity> = spec.entities.iter().map(|s| Entity::parse(s)).collect();
    let mask = DMatrix::from_element(spec.rows, n, false);
    ReturnPanel::new(dates, entities, values, mask)
}

/// Generates the lag-coupled pair `y ~ iid N(0,1)`,
/// `x_t = beta * y_{t-1} + noise * eta_t`; the population linear transfer
/// entropy from y to x is `0.5 * ln(1 + beta^2 / noise^2)`.
pub fn generate_coupled_pair(beta: f64, noise: f64, rows: usize, seed: u64) -> (ChangeSeries, ChangeSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y_prev: f64 = rng.sample(StandardNormal); // y_{-1}
    let mut x = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let eta: f64 = rng.sample(StandardNormal);
        x.push(beta * y_prev + noise * eta);
        let y_t: f64 = rng.sample(StandardNormal);
        y.push(y_t);
        y_prev = y_t;
    }
    (
        ChangeSeries { label: "x".into(), values: x, horizon: 1 },
        ChangeSeries { label: "y".into(), values: y, horizon: 1 },
    )
}

/// Adds `magnitude` to every entity of the panel row at `date`,
/// a one-day common shock.
pub fn inject_shock(panel: &ReturnPanel, date: NaiveDate, magnitude: f64) -> Result<ReturnPanel> {
    let idx = panel
        .dates()
        .iter()
        .position(|d| *d == date)
        .ok_or_else(|| Error::Data(format!("shock date {date} is outside the panel range")))?;
    let mut values = panel.returns().clone();
    for j in 0..values.ncols() {
        values[(idx, j)] += magnitude;
    }
    ReturnPanel::new(
        panel.dates().to_vec(),
        panel.entities().to_vec(),
        values,
        panel.missing_mask().clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn iid_panel_column_means_are_small() {
        let t = 4000;
        let panel = generate_var1(&Var1Spec::independent(4, t, 1)).unwrap();
        for j in 0..4 {
            let mean: f64 = (0..t).map(|i| panel.returns()[(i, j)]).sum::<f64>() / t as f64;
            assert!(mean.abs() < 4.0 / (t as f64).sqrt(), "column {j} mean {mean}");
        }
    }

    #[test]
    fn diagonal_ar_autocorrelation_matches() {
        let t = 10_000;
        let panel = generate_var1(&Var1Spec::diagonal_ar(2, 0.5, t, 2)).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..t).map(|i| panel.returns()[(i, j)]).collect();
            let mean = col.iter().sum::<f64>() / t as f64;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let cov: f64 = (1..t)
                .map(|i| (col[i] - mean) * (col[i - 1] - mean))
                .sum::<f64>()
                / (t - 1) as f64;
            assert!((cov / var - 0.5).abs() < 0.03, "column {j}: acf {}", cov / var);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_var1(&Var1Spec::random_stable(3, 0.5, 50, 9)).unwrap();
        let b = generate_var1(&Var1Spec::random_stable(3, 0.5, 50, 9)).unwrap();
        assert_eq!(a.returns(), b.returns());
        let c = generate_var1(&Var1Spec::random_stable(3, 0.5, 50, 10)).unwrap();
        assert_ne!(a.returns(), c.returns());
    }

    #[test]
    fn unstable_transition_rejected() {
        let spec = Var1Spec {
            coeff: DMatrix::from_diagonal_element(2, 2, 1.01),
            noise_cov: DMatrix::identity(2, 2),
            rows: 10,
            seed: 0,
            entities: vec!["A".into(), "B".into()],
            start_date: NaiveDate::from_ymd_opt(2006, 1, 2).unwrap(),
        };
        assert!(matches!(generate_var1(&spec), Err(Error::SynthSpec(_))));
    }

    #[test]
    fn coupled_pair_beta_zero_is_uncorrelated() {
        let (x, y) = generate_coupled_pair(0.0, 1.0, 20_000, 3);
        let n = x.values.len();
        let dot: f64 = x.values[1..]
            .iter()
            .zip(&y.values[..n - 1])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n - 1) as f64;
        assert!(dot.abs() < 0.03, "lagged correlation {dot}");
    }

    #[test]
    fn coupled_pair_determinism() {
        let (x1, y1) = generate_coupled_pair(0.8, 1.0, 100, 5);
        let (x2, y2) = generate_coupled_pair(0.8, 1.0, 100, 5);
        assert_eq!(x1.values, x2.values);
        assert_eq!(y1.values, y2.values);
    }

    #[test]
    fn shock_injection_shifts_one_row() {
        let panel = generate_var1(&Var1Spec::independent(10, 50, 11)).unwrap();
        let date = panel.dates()[20];

        let same = inject_shock(&panel, date, 0.0).unwrap();
        assert_eq!(same.returns(), panel.returns());

        let shocked = inject_shock(&panel, date, 10.0).unwrap();
        let mean: f64 =
            (0..10).map(|j| shocked.returns()[(20, j)]).sum::<f64>() / 10.0;
        assert!(mean > 9.0, "shocked row mean {mean}");
        for i in 0..50 {
            if i != 20 {
                for j in 0..10 {
                    assert_eq!(shocked.returns()[(i, j)], panel.returns()[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn shock_outside_range_errors() {
        let panel = generate_var1(&Var1Spec::independent(2, 10, 1)).unwrap();
        let outside = panel.dates()[9] + Days::new(1);
        assert!(inject_shock(&panel, outside, 1.0).is_err());
    }

    #[test]
    fn correlated_noise_cov_is_respected() {
        let mut spec = Var1Spec::independent(2, 50_000, 13);
        spec.noise_cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.7, 1.0]);
        let panel = generate_var1(&spec).unwrap();
        let t = panel.n_dates();
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for i in 0..t {
            let a = panel.returns()[(i, 0)];
            let b = panel.returns()[(i, 1)];
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert_relative_eq!(corr, 0.7, epsilon = 0.02);
    }
}
