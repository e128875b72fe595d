//! Ridge-regularized, exponentially weighted VAR(1) on one window.
//!
//! For window rows `r_0..r_{W-1}` the model regresses each current row on
//! the previous one, `y_t = A x_t + e_t` with `x_t = r_{t-1}`, `y_t = r_t`
//! and `t = 1..W-1`. Estimation is weighted least squares with a ridge
//! penalty:
//!
//! - both blocks are demeaned with the weighted mean (weights of the
//!   current row), so no intercept column exists and the penalty never
//!   shrinks a mean term;
//! - each observation pair is scaled by `sqrt(w_t)`;
//! - the coefficients solve `(X'X + lambda I) A' = X'Y` through a
//!   symmetric positive definite factorization, never an explicit
//!   inverse.
//!
//! Weights are normalized internally to mean one, which makes the fit
//! invariant to their overall scale and keeps `lambda` comparable between
//! the exponential and equal-weight modes. The penalty acts on the raw
//! regressor scale by default; per-variable standardization is available
//! behind a flag.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rolling::WindowView;

/// Fitted VAR(1) for one window.
#[derive(Debug, Clone)]
pub struct VarModel {
    /// Coefficient matrix; row i is the equation for variable i on all
    /// lagged variables.
    pub coeff: DMatrix<f64>,
    /// Weighted residual covariance, symmetric PSD up to rounding.
    pub sigma_eps: DMatrix<f64>,
    /// Ridge penalty used in the fit.
    pub lambda: f64,
    /// Effective observation count, `W - 1`.
    pub n_obs: usize,
}

/// Demeaned regression blocks for one window: lagged rows, current rows
/// and the mean-one normalized weight of each observation pair.
struct Blocks {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    weights: Vec<f64>,
}

fn prepare(window: &WindowView) -> Result<Blocks> {
    let w = window.len();
    if w < 2 {
        return Err(Error::InsufficientData { needed: 2, got: w });
    }
    let n = window.n_entities();
    let rows = window.returns();
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("window returns".into()));
    }

    let n_obs = w - 1;
    let raw = window.weights().as_slice();
    let sum: f64 = raw[1..].iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Data("window weights sum to zero".into()));
    }
    // Mean-one normalization: scale invariance plus a lambda that means
    // the same thing in equal-weight and exponential modes.
    let weights: Vec<f64> = raw[1..].iter().map(|v| v * n_obs as f64 / sum).collect();

    let mut mean_x = DVector::zeros(n);
    let mut mean_y = DVector::zeros(n);
    for (t, &wt) in weights.iter().enumerate() {
        for j in 0..n {
            mean_x[j] += wt * rows[(t, j)];
            mean_y[j] += wt * rows[(t + 1, j)];
        }
    }
    mean_x /= n_obs as f64;
    mean_y /= n_obs as f64;

    let x = DMatrix::from_fn(n_obs, n, |t, j| rows[(t, j)] - mean_x[j]);
    let y = DMatrix::from_fn(n_obs, n, |t, j| rows[(t + 1, j)] - mean_y[j]);
    Ok(Blocks { x, y, weights })
}

/// Solves the ridge normal equations `(D'D + lambda I) B = D'T` for the
/// given design and target matrices via a Cholesky factorization.
///
/// Returns `B` (regressors x targets). With `lambda = 0` a rank-deficient
/// design yields [`Error::SingularSystem`].
pub fn ridge_solve(design: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Data(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let mut gram = design.transpose() * design;
    for j in 0..gram.ncols() {
        gram[(j, j)] += lambda;
    }
    let rhs = design.transpose() * targets;
    match Cholesky::new(gram) {
        Some(chol) => Ok(chol.solve(&rhs)),
        None if lambda == 0.0 => Err(Error::SingularSystem),
        None => Err(Error::Data(
            "ridge normal equations are not positive definite despite lambda > 0".into(),
        )),
    }
}

/// Fits the weighted ridge VAR(1) on one window with default options
/// (no standardization).
pub fn fit_ridge_var(window: &WindowView, lambda: f64) -> Result<VarModel> {
    fit_ridge_var_with(window, lambda, false)
}

/// Fits the weighted ridge VAR(1); with `standardize` the penalty acts on
/// per-variable standardized scale and coefficients are mapped back.
pub fn fit_ridge_var_with(window: &WindowView, lambda: f64, standardize: bool) -> Result<VarModel> {
    let blocks = prepare(window)?;
    let n = blocks.x.ncols();
    let n_obs = blocks.x.nrows();

    let mut xs = blocks.x.clone();
    let mut ys = blocks.y.clone();
    for (t, &wt) in blocks.weights.iter().enumerate() {
        let s = wt.sqrt();
        for j in 0..n {
            xs[(t, j)] *= s;
            ys[(t, j)] *= s;
        }
    }

    let scales: Option<Vec<f64>> = if standardize {
        // Weighted standard deviation of the current block per variable;
        // zero-variance columns keep scale 1.
        let s: Vec<f64> = (0..n)
            .map(|j| {
                let ss: f64 = (0..n_obs).map(|t| ys[(t, j)] * ys[(t, j)]).sum();
                let sd = (ss / n_obs as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for j in 0..n {
            for t in 0..n_obs {
                xs[(t, j)] /= s[j];
                ys[(t, j)] /= s[j];
            }
        }
        Some(s)
    } else {
        None
    };

    let coeff_t = ridge_solve(&xs, &ys, lambda)?;
    let mut coeff = coeff_t.transpose();
    if let Some(s) = &scales {
        for i in 0..n {
            for j in 0..n {
                coeff[(i, j)] *= s[i] / s[j];
            }
        }
    }
    if coeff.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fitted coefficients".into()));
    }

    let sigma_eps = weighted_residual_cov(&coeff, &blocks);
    Ok(VarModel { coeff, sigma_eps, lambda, n_obs })
}

/// Weighted residual covariance for a fitted model on its window:
/// `sigma = sum_t w_t e_t e_t' / sum_t w_t` with `e_t = y_t - A x_t`,
/// symmetrized and clipped to PSD.
pub fn residual_covariance(model: &VarModel, window: &WindowView) -> Result<DMatrix<f64>> {
    let blocks = prepare(window)?;
    if blocks.x.ncols() != model.coeff.ncols() {
        return Err(Error::Data(format!(
            "model has {} variables but window has {}",
            model.coeff.ncols(),
            blocks.x.ncols()
        )));
    }
    Ok(weighted_residual_cov(&model.coeff, &blocks))
}

fn weighted_residual_cov(coeff: &DMatrix<f64>, blocks: &Blocks) -> DMatrix<f64> {
    let n = blocks.x.ncols();
    let n_obs = blocks.x.nrows();
    let resid = &blocks.y - &blocks.x * coeff.transpose();

    let mut acc = DMatrix::zeros(n, n);
    let mut wsum = 0.0;
    for t in 0..n_obs {
        let wt = blocks.weights[t];
        wsum += wt;
        for i in 0..n {
            let ei = resid[(t, i)];
            for j in 0..n {
                acc[(i, j)] += wt * ei * resid[(t, j)];
            }
        }
    }
    acc /= wsum;
    // Symmetrize after accumulation (a no-op up to rounding) and clip any
    // negative eigenvalues, warning when they exceed the documented bound.
    let sym = (&acc + acc.transpose()) * 0.5;
    clip_psd(sym)
}

fn clip_psd(sym: DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return sym;
    }
    if min < -1e-8 * max_abs.max(f64::MIN_POSITIVE) {
        log::warn!("residual covariance eigenvalue {min} clipped to 0 (scale {max_abs})");
    }
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Entity, ReturnPanel};
    use crate::rolling::{exponential_weights, rolling_windows, WeightVector, WindowView};
    use crate::synth::{generate_var1, Var1Spec};
    use approx::assert_relative_eq;
    use chrono::{Days, NaiveDate};

    fn panel_from_matrix(values: DMatrix<f64>) -> ReturnPanel {
        let start = NaiveDate::from_ymd_opt(2005, 1, 1).unwrap();
        let t = values.nrows();
        let dates: Vec<NaiveDate> = (0..t).map(|i| start + Days::new(i as u64)).collect();
        let entities = (0..values.ncols())
            .map(|j| Entity::parse(&format!("V{j:02}")))
            .collect();
        let mask = DMatrix::from_element(t, values.ncols(), false);
        ReturnPanel::new(dates, entities, values, mask).unwrap()
    }

    fn iid_panel(t: usize, n: usize, seed: u64) -> ReturnPanel {
        let spec = Var1Spec::independent(n, t, seed);
        generate_var1(&spec).unwrap()
    }

    /// Plain least squares through an SVD, per target column. Kept
    /// independent of the Cholesky normal-equation path it checks.
    fn ols_lstsq(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> DMatrix<f64> {
        let svd = nalgebra::SVD::new(design.clone(), true, true);
        let mut coeff_t = DMatrix::zeros(design.ncols(), targets.ncols());
        for j in 0..targets.ncols() {
            let sol = svd.solve(&targets.column(j).into_owned(), 1e-13).unwrap();
            coeff_t.set_column(j, &sol);
        }
        coeff_t.transpose()
    }

    #[test]
    fn ridge_solve_scalar_closed_form() {
        // Pre-demeaned scalar case: x = [1,2], y = [2,4].
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let y = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let a0 = ridge_solve(&x, &y, 0.0).unwrap();
        assert_relative_eq!(a0[(0, 0)], 2.0, max_relative = 1e-14);
        let a5 = ridge_solve(&x, &y, 5.0).unwrap();
        assert_relative_eq!(a5[(0, 0)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn ridge_solve_singular_without_penalty() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]); // rank 1
        let y = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(ridge_solve(&x, &y, 0.0), Err(Error::SingularSystem)));
        assert!(ridge_solve(&x, &y, 1e-6).is_ok());
    }

    #[test]
    fn scalar_fit_with_exact_linear_data_has_zero_residuals() {
        // Rows [1,2,4]: lagged [1,2], current [2,4]; y = 2x exactly, so
        // the demeaned OLS slope is 2 and residuals vanish.
        let panel = panel_from_matrix(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 4.0]));
        let w = exponential_weights(3, f64::INFINITY);
        let windows = rolling_windows(&panel, &w, 1).unwrap();
        let model = fit_ridge_var(&windows[0], 0.0).unwrap();
        assert_relative_eq!(model.coeff[(0, 0)], 2.0, max_relative = 1e-12);
        assert!(model.sigma_eps[(0, 0)].abs() < 1e-24);
        assert_eq!(model.n_obs, 2);
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let panel = iid_panel(80, 4, 7);
        let w = exponential_weights(80, f64::INFINITY);
        let windows = rolling_windows(&panel, &w, 1).unwrap();
        let model = fit_ridge_var(&windows[0], 1e12).unwrap();
        assert!(model.coeff.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn frobenius_norm_shrinks_monotonically_in_lambda() {
        for seed in 0..5u64 {
            let panel = iid_panel(120, 6, 100 + seed);
            let w = exponential_weights(120, 40.0);
            let windows = rolling_windows(&panel, &w, 1).unwrap();
            let norms: Vec<f64> = [0.0, 1.0, 10.0, 100.0, 1000.0]
                .iter()
                .map(|&l| fit_ridge_var(&windows[0], l).unwrap().coeff.norm())
                .collect();
            for pair in norms.windows(2) {
                assert!(pair[1] <= pair[0], "norms not monotone: {norms:?}");
            }
        }
    }

    #[test]
    fn zero_penalty_matches_least_squares() {
        for seed in 0..20u64 {
            let spec = Var1Spec::random_stable(10, 0.5, 300, 40 + seed);
            let panel = generate_var1(&spec).unwrap();
            let w = exponential_weights(300, f64::INFINITY);
            let windows = rolling_windows(&panel, &w, 1).unwrap();
            let model = fit_ridge_var(&windows[0], 0.0).unwrap();

            // Rebuild the same demeaned design by hand for the oracle.
            let rows = windows[0].returns();
            let n_obs = rows.nrows() - 1;
            let n = rows.ncols();
            let mean_x = DVector::from_fn(n, |j, _| {
                (0..n_obs).map(|t| rows[(t, j)]).sum::<f64>() / n_obs as f64
            });
            let mean_y = DVector::from_fn(n, |j, _| {
                (0..n_obs).map(|t| rows[(t + 1, j)]).sum::<f64>() / n_obs as f64
            });
            let x = DMatrix::from_fn(n_obs, n, |t, j| rows[(t, j)] - mean_x[j]);
            let y = DMatrix::from_fn(n_obs, n, |t, j| rows[(t + 1, j)] - mean_y[j]);
            let oracle = ols_lstsq(&x, &y);
            let diff = (&model.coeff - &oracle).amax();
            assert!(diff < 1e-8, "seed {seed}: max entrywise error {diff}");
        }
    }

    #[test]
    fn moderate_penalty_beats_huge_penalty_on_recovery() {
        let mut wins = 0;
        for seed in 0..20u64 {
            let spec = Var1Spec::random_stable(10, 0.5, 300, 900 + seed);
            let truth = spec.coeff.clone();
            let panel = generate_var1(&spec).unwrap();
            let w = exponential_weights(300, f64::INFINITY);
            let windows = rolling_windows(&panel, &w, 1).unwrap();
            let err_small = (&fit_ridge_var(&windows[0], 1.0).unwrap().coeff - &truth).norm();
            let err_huge = (&fit_ridge_var(&windows[0], 1e4).unwrap().coeff - &truth).norm();
            if err_small < err_huge {
                wins += 1;
            }
        }
        assert_eq!(wins, 20, "lambda=1 should dominate lambda=1e4 on every seed");
    }

    #[test]
    fn weight_scale_invariance() {
        let panel = iid_panel(100, 5, 3);
        let base = exponential_weights(100, 30.0);
        let scaled = WeightVector::from_raw(
            base.as_slice().iter().map(|v| v * 17.5).collect(),
            base.theta(),
        )
        .unwrap();
        let wb = rolling_windows(&panel, &base, 1).unwrap();
        let ws = rolling_windows(&panel, &scaled, 1).unwrap();
        let mb = fit_ridge_var(&wb[0], 100.0).unwrap();
        let ms = fit_ridge_var(&ws[0], 100.0).unwrap();
        assert!((&mb.coeff - &ms.coeff).amax() < 1e-10);
        assert!((&mb.sigma_eps - &ms.sigma_eps).amax() < 1e-10);
    }

    #[test]
    fn residual_variance_of_unit_residuals() {
        // A = 0 on a window whose demeaned current rows are [1, -1]:
        // residuals are the rows themselves and the variance is 1.
        let panel = panel_from_matrix(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, -1.0]));
        let w = exponential_weights(3, f64::INFINITY);
        let windows = rolling_windows(&panel, &w, 1).unwrap();
        let model = VarModel {
            coeff: DMatrix::zeros(1, 1),
            sigma_eps: DMatrix::zeros(1, 1),
            lambda: 0.0,
            n_obs: 2,
        };
        let sigma = residual_covariance(&model, &windows[0]).unwrap();
        assert_relative_eq!(sigma[(0, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn iid_panel_residual_covariance_near_identity() {
        let mut hits = 0;
        for seed in 0..100u64 {
            let panel = iid_panel(300, 5, 2000 + seed);
            let w = exponential_weights(300, f64::INFINITY);
            let windows = rolling_windows(&panel, &w, 1).unwrap();
            let model = fit_ridge_var(&windows[0], 100.0).unwrap();
            let eye = DMatrix::<f64>::identity(5, 5);
            if (&model.sigma_eps - &eye).amax() < 0.2 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 trials within 0.2 of identity");
    }

    #[test]
    fn sigma_is_symmetric_psd() {
        let panel = iid_panel(60, 8, 11);
        let w = exponential_weights(60, 20.0);
        let windows = rolling_windows(&panel, &w, 1).unwrap();
        let model = fit_ridge_var(&windows[0], 50.0).unwrap();
        let asym = (&model.sigma_eps - model.sigma_eps.transpose()).amax();
        assert!(asym < 1e-10);
        let eig = model.sigma_eps.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn standardize_flag_is_a_reparametrization_at_zero_penalty() {
        // With lambda = 0 the penalty is inert, so standardized and raw
        // fits must agree.
        let panel = iid_panel(150, 4, 5);
        let w = exponential_weights(150, 50.0);
        let windows = rolling_windows(&panel, &w, 1).unwrap();
        let raw = fit_ridge_var_with(&windows[0], 0.0, false).unwrap();
        let std = fit_ridge_var_with(&windows[0], 0.0, true).unwrap();
        assert!((&raw.coeff - &std.coeff).amax() < 1e-9);
        // With a positive penalty they differ (the point of the flag).
        let raw1 = fit_ridge_var_with(&windows[0], 100.0, false).unwrap();
        let std1 = fit_ridge_var_with(&windows[0], 100.0, true).unwrap();
        assert!((&raw1.coeff - &std1.coeff).amax() > 1e-12);
    }

    #[test]
    fn nan_input_is_rejected() {
        let mut values = DMatrix::from_element(10, 2, 0.5);
        values[(3, 1)] = 0.25;
        let panel = panel_from_matrix(values);
        // Corrupt through a raw window: build a panel with a NaN directly.
        let mut bad = panel.returns().clone();
        bad[(2, 0)] = f64::NAN;
        // ReturnPanel::new rejects NaN, so exercise prepare through a
        // hand-built view instead: a panel constructor refusal is enough.
        assert!(ReturnPanel::new(
            panel.dates().to_vec(),
            panel.entities().to_vec(),
            bad,
            DMatrix::from_element(10, 2, false),
        )
        .is_err());
    }
}
