//! One-step forecast-error variance decomposition and total connectedness.
//!
//! Given a fitted window covariance `sigma_eps`, the residuals are
//! orthogonalized with a lower-triangular factor `P`, `P P' = sigma_eps`
//! (the one-step moving-average coefficients with respect to unit-variance
//! shocks). The share of variable i's one-step forecast-error variance due
//! to shocks in variable j is
//!
//! ```text
//! c_ij = P_ij^2 / sum_k P_ik^2,
//! ```
//!
//! and total connectedness is the average off-diagonal mass
//! `(1/N) sum_{i != j} c_ij`, a scalar in `[0, (N-1)/N]`.
//!
//! The factorization is ordering-dependent: early-ordered entities absorb
//! common shocks. The ordering is configurable (input order by default,
//! reversible), recorded in the series metadata, and
//! [`ordering_sensitivity`] reports the worst-case effect of reversing it.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::rolling::{exponential_weights, rolling_windows, WindowView};
use crate::var::{fit_ridge_var_with, VarModel};

/// Lower-triangular one-step shock loadings, `theta0 * theta0' = sigma`.
#[derive(Debug, Clone)]
pub struct ShockBasis {
    pub theta0: DMatrix<f64>,
}

/// Factors a symmetric PSD matrix with a pivot-free Cholesky that zeroes
/// columns whose pivot falls below `1e-12 * trace / n`, so rank-deficient
/// covariances (heavily imputed windows) still factor.
pub fn shock_basis(sigma_eps: &DMatrix<f64>) -> Result<ShockBasis> {
    let n = sigma_eps.nrows();
    if sigma_eps.ncols() != n {
        return Err(Error::Data(format!(
            "covariance must be square, got {}x{}",
            n,
            sigma_eps.ncols()
        )));
    }
    if sigma_eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance".into()));
    }
    let scale = sigma_eps.amax().max(f64::MIN_POSITIVE);
    let asym = (sigma_eps - sigma_eps.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::Data(format!(
            "covariance is asymmetric: max |S - S'| = {asym}"
        )));
    }

    let trace: f64 = sigma_eps.diagonal().iter().sum();
    let tol = 1e-12 * trace.max(0.0) / n as f64;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = sigma_eps[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue; // zero column: pivot underflow or rank deficiency
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let mut s = sigma_eps[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(ShockBasis { theta0: l })
}

/// Row-normalized FEVD shares.
#[derive(Debug, Clone)]
pub struct ConnectednessMatrix {
    /// Share matrix; every row sums to one.
    pub shares: DMatrix<f64>,
    /// Entity identifiers in the orthogonalization order; empty when the
    /// caller did not attach labels.
    pub ordering: Vec<String>,
    /// Rows whose one-step forecast-error variance was zero; these were
    /// set to the self-share indicator row.
    pub zero_variance_rows: Vec<usize>,
}

/// Normalizes squared one-step loadings into variance shares,
/// `c_ij = theta_ij^2 / sum_k theta_ik^2`. All-zero rows become the
/// self-share indicator row and are flagged.
pub fn fevd_shares(basis: &ShockBasis) -> ConnectednessMatrix {
    let n = basis.theta0.nrows();
    let mut shares = DMatrix::zeros(n, n);
    let mut zero_rows = Vec::new();
    for i in 0..n {
        let denom: f64 = (0..n).map(|j| basis.theta0[(i, j)].powi(2)).sum();
        if denom > 0.0 {
            for j in 0..n {
                shares[(i, j)] = (basis.theta0[(i, j)].powi(2) / denom).min(1.0);
            }
        } else {
            shares[(i, i)] = 1.0;
            zero_rows.push(i);
        }
    }
    ConnectednessMatrix { shares, ordering: Vec::new(), zero_variance_rows: zero_rows }
}

/// Average off-diagonal FEVD mass, `(1/N) sum_{i != j} c_ij`.
pub fn total_connectedness(c: &ConnectednessMatrix) -> f64 {
    let n = c.shares.nrows();
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += c.shares[(i, j)];
            }
        }
    }
    off / n as f64
}

/// Orthogonalization order of the panel entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntityOrdering {
    /// Panel column order (alphabetical after loading).
    #[default]
    Input,
    /// Reversed panel column order.
    Reversed,
}

impl std::str::FromStr for EntityOrdering {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "input" => Ok(EntityOrdering::Input),
            "reversed" => Ok(EntityOrdering::Reversed),
            other => Err(format!("unknown ordering `{other}` (expected `input` or `reversed`)")),
        }
    }
}

impl std::fmt::Display for EntityOrdering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntityOrdering::Input => write!(f, "input"),
            EntityOrdering::Reversed => write!(f, "reversed"),
        }
    }
}

/// Parameters of a connectedness run.
#[derive(Debug, Clone)]
pub struct ConnectednessConfig {
    /// Rolling window length in rows.
    pub window: usize,
    /// Exponential weight characteristic length; `f64::INFINITY` for
    /// equal weights.
    pub theta: f64,
    /// Ridge penalty.
    pub lambda: f64,
    /// Window step in rows.
    pub stride: usize,
    /// Standardize regressors before penalizing.
    pub standardize: bool,
    /// Orthogonalization order.
    pub ordering: EntityOrdering,
}

impl Default for ConnectednessConfig {
    fn default() -> Self {
        ConnectednessConfig {
            window: 300,
            theta: 100.0,
            lambda: 100.0,
            stride: 1,
            standardize: false,
            ordering: EntityOrdering::Input,
        }
    }
}

/// Per-window quality flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowFlags {
    /// More than 25% of the window's cells were imputed.
    pub high_imputation: bool,
    /// Some entity had zero one-step forecast-error variance.
    pub zero_variance_row: bool,
}

impl WindowFlags {
    pub fn is_empty(&self) -> bool {
        !self.high_imputation && !self.zero_variance_row
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.high_imputation {
            parts.push("high_imputation");
        }
        if self.zero_variance_row {
            parts.push("zero_variance_row");
        }
        parts.join(";")
    }

    pub fn parse(s: &str) -> WindowFlags {
        let mut flags = WindowFlags::default();
        for tok in s.split(';') {
            match tok.trim() {
                "high_imputation" => flags.high_imputation = true,
                "zero_variance_row" => flags.zero_variance_row = true,
                _ => {}
            }
        }
        flags
    }
}

/// Full parameter record carried by every series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMeta {
    pub window: usize,
    pub theta: f64,
    pub lambda: f64,
    pub stride: usize,
    pub standardize: bool,
    pub ordering: EntityOrdering,
    /// Entity identifiers in the orthogonalization order used.
    pub entities: Vec<String>,
}

/// Date-indexed total-connectedness series for one panel.
#[derive(Debug, Clone)]
pub struct ConnectednessSeries {
    pub label: String,
    pub end_dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub imputation_fraction: Vec<f64>,
    pub flags: Vec<WindowFlags>,
    pub meta: SeriesMeta,
}

impl ConnectednessSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.end_dates.len() != self.values.len()
            || self.imputation_fraction.len() != self.values.len()
            || self.flags.len() != self.values.len()
        {
            return Err(Error::Data("series columns have mismatched lengths".into()));
        }
        if self.end_dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("series dates must be strictly increasing".into()));
        }
        for &v in &self.values {
            if !v.is_finite() || !(0.0..1.0).contains(&v) {
                return Err(Error::Data(format!("total connectedness {v} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Restricts the series to the given end dates (which must be a
    /// subset), preserving order.
    pub fn restrict_to(&self, dates: &[NaiveDate]) -> Result<ConnectednessSeries> {
        let mut idx = Vec::with_capacity(dates.len());
        let mut cursor = 0usize;
        for d in dates {
            while cursor < self.end_dates.len() && self.end_dates[cursor] < *d {
                cursor += 1;
            }
            if cursor >= self.end_dates.len() || self.end_dates[cursor] != *d {
                return Err(Error::CalendarMismatch(format!(
                    "series {} lacks end date {d}",
                    self.label
                )));
            }
            idx.push(cursor);
        }
        Ok(ConnectednessSeries {
            label: self.label.clone(),
            end_dates: idx.iter().map(|&i| self.end_dates[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            imputation_fraction: idx.iter().map(|&i| self.imputation_fraction[i]).collect(),
            flags: idx.iter().map(|&i| self.flags[i]).collect(),
            meta: self.meta.clone(),
        })
    }
}

fn ordering_indices(n: usize, ordering: EntityOrdering) -> Vec<usize> {
    match ordering {
        EntityOrdering::Input => (0..n).collect(),
        EntityOrdering::Reversed => (0..n).rev().collect(),
    }
}

fn permute(sigma: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| sigma[(idx[i], idx[j])])
}

/// One fitted window reduced to the values the series keeps.
struct WindowOutcome {
    end_date: NaiveDate,
    total: f64,
    imputation: f64,
    flags: WindowFlags,
    matrix: Option<ConnectednessMatrix>,
}

fn window_outcome(
    window: &WindowView,
    cfg: &ConnectednessConfig,
    ordered_ids: &[String],
    idx: &[usize],
    keep_matrix: bool,
) -> Result<WindowOutcome> {
    let run = || -> Result<WindowOutcome> {
        let model: VarModel = fit_ridge_var_with(window, cfg.lambda, cfg.standardize)?;
        let sigma = permute(&model.sigma_eps, idx);
        let basis = shock_basis(&sigma)?;
        let mut c = fevd_shares(&basis);
        c.ordering = ordered_ids.to_vec();
        let total = total_connectedness(&c);
        let imputation = window.imputed_fraction();
        let flags = WindowFlags {
            high_imputation: imputation > 0.25,
            zero_variance_row: !c.zero_variance_rows.is_empty(),
        };
        Ok(WindowOutcome {
            end_date: window.end_date(),
            total,
            imputation,
            flags,
            matrix: keep_matrix.then_some(c),
        })
    };
    run().map_err(|e| e.in_window(window.end_date()))
}

/// Computes the rolling total-connectedness series for one panel.
///
/// Windows are processed in parallel; the assembled series is identical
/// for any worker count because each window is a pure function of its
/// slice and results are reassembled in date order.
pub fn connectedness_series(
    panel: &ReturnPanel,
    cfg: &ConnectednessConfig,
    label: &str,
) -> Result<ConnectednessSeries> {
    Ok(connectedness_run(panel, cfg, label, false)?.0)
}

/// As [`connectedness_series`], optionally retaining each window's full
/// share matrix (for the per-window dump format).
pub fn connectedness_run(
    panel: &ReturnPanel,
    cfg: &ConnectednessConfig,
    label: &str,
    keep_matrices: bool,
) -> Result<(ConnectednessSeries, Option<Vec<ConnectednessMatrix>>)> {
    if cfg.stride == 0 {
        return Err(Error::Data("stride must be at least 1".into()));
    }
    let weights = exponential_weights(cfg.window, cfg.theta);
    let windows = rolling_windows(panel, &weights, cfg.stride)?;

    let ids = panel.entity_ids();
    let idx = ordering_indices(ids.len(), cfg.ordering);
    let ordered_ids: Vec<String> = idx.iter().map(|&j| ids[j].clone()).collect();

    let outcomes: Vec<Result<WindowOutcome>> = windows
        .par_iter()
        .map(|w| window_outcome(w, cfg, &ordered_ids, &idx, keep_matrices))
        .collect();

    let mut end_dates = Vec::with_capacity(outcomes.len());
    let mut values = Vec::with_capacity(outcomes.len());
    let mut imputation = Vec::with_capacity(outcomes.len());
    let mut flags = Vec::with_capacity(outcomes.len());
    let mut matrices = keep_matrices.then(Vec::new);
    for outcome in outcomes {
        let o = outcome?;
        end_dates.push(o.end_date);
        values.push(o.total);
        imputation.push(o.imputation);
        flags.push(o.flags);
        if let (Some(ms), Some(m)) = (matrices.as_mut(), o.matrix) {
            ms.push(m);
        }
    }

    let series = ConnectednessSeries {
        label: label.to_string(),
        end_dates,
        values,
        imputation_fraction: imputation,
        flags,
        meta: SeriesMeta {
            window: cfg.window,
            theta: cfg.theta,
            lambda: cfg.lambda,
            stride: cfg.stride,
            standardize: cfg.standardize,
            ordering: cfg.ordering,
            entities: ordered_ids,
        },
    };
    series.validate()?;
    Ok((series, matrices))
}

/// Largest absolute change of total connectedness over all windows when
/// the orthogonalization ordering is reversed.
pub fn ordering_sensitivity(panel: &ReturnPanel, cfg: &ConnectednessConfig) -> Result<f64> {
    let forward = connectedness_series(panel, cfg, "fwd")?;
    let mut rev_cfg = cfg.clone();
    rev_cfg.ordering = match cfg.ordering {
        EntityOrdering::Input => EntityOrdering::Reversed,
        EntityOrdering::Reversed => EntityOrdering::Input,
    };
    let reversed = connectedness_series(panel, &rev_cfg, "rev")?;
    Ok(forward
        .values
        .iter()
        .zip(&reversed.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Renders the series in its delimited text layout:
/// `end_date,total_connectedness,imputation_fraction,flags`. Values use
/// the shortest round-trip float representation.
pub fn render_series_csv(series: &ConnectednessSeries) -> String {
    let mut out = String::from("end_date,total_connectedness,imputation_fraction,flags\n");
    for i in 0..series.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            series.end_dates[i],
            series.values[i],
            series.imputation_fraction[i],
            series.flags[i].render()
        ));
    }
    out
}

/// Parses a series written by [`render_series_csv`]. The metadata block
/// is not stored in the file, so `meta` carries defaults; the label is
/// supplied by the caller.
pub fn parse_series_csv<R: std::io::Read>(reader: R, label: &str) -> Result<ConnectednessSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expect = ["end_date", "total_connectedness", "imputation_fraction", "flags"];
    for (i, name) in expect.iter().enumerate().take(3) {
        if headers.get(i).map(str::trim) != Some(*name) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{}`", expect.join(",")),
            });
        }
    }

    let mut end_dates = Vec::new();
    let mut values = Vec::new();
    let mut fractions = Vec::new();
    let mut flags = Vec::new();
    let mut line = 1usize;
    for rec in rdr.records() {
        let rec = rec?;
        line += 1;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() < 3 {
            return Err(Error::Parse { line, msg: "expected at least 3 fields".into() });
        }
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d").map_err(|_| Error::Parse {
            line,
            msg: format!("malformed date `{}`", rec[0].trim()),
        })?;
        let value: f64 = rec[1].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("malformed total connectedness `{}`", rec[1].trim()),
        })?;
        let fraction: f64 = rec[2].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("malformed imputation fraction `{}`", rec[2].trim()),
        })?;
        end_dates.push(date);
        values.push(value);
        fractions.push(fraction);
        flags.push(WindowFlags::parse(rec.get(3).unwrap_or("")));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }

    let series = ConnectednessSeries {
        label: label.to_string(),
        end_dates,
        values,
        imputation_fraction: fractions,
        flags,
        meta: SeriesMeta {
            window: 0,
            theta: f64::NAN,
            lambda: f64::NAN,
            stride: 0,
            standardize: false,
            ordering: EntityOrdering::Input,
            entities: Vec::new(),
        },
    };
    series.validate()?;
    Ok(series)
}

/// Renders per-window share matrices as
/// `end_date,entity_i,entity_j,c_ij` rows.
pub fn render_matrix_dump(dates: &[NaiveDate], matrices: &[ConnectednessMatrix]) -> String {
    let mut out = String::from("end_date,entity_i,entity_j,c_ij\n");
    for (d, m) in dates.iter().zip(matrices) {
        let n = m.shares.nrows();
        let name = |k: usize| -> String {
            m.ordering.get(k).cloned().unwrap_or_else(|| k.to_string())
        };
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!("{},{},{},{}\n", d, name(i), name(j), m.shares[(i, j)]));
            }
        }
    }
    out
}

/// Intersects several series onto their common end dates, in input order.
pub fn intersect_series(series: &[ConnectednessSeries]) -> Result<Vec<ConnectednessSeries>> {
    if series.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut common: Vec<NaiveDate> = series[0].end_dates.clone();
    for s in &series[1..] {
        let set: std::collections::BTreeSet<NaiveDate> = s.end_dates.iter().copied().collect();
        common.retain(|d| set.contains(d));
    }
    if common.len() < 2 {
        return Err(Error::InsufficientOverlap { needed: 2, got: common.len() });
    }
    series.iter().map(|s| s.restrict_to(&common)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_var1, Var1Spec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_covariance_factors_to_identity() {
        let basis = shock_basis(&DMatrix::identity(4, 4)).unwrap();
        assert!((basis.theta0 - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn correlated_pair_closed_form() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let basis = shock_basis(&sigma).unwrap();
        assert_relative_eq!(basis.theta0[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(basis.theta0[(1, 0)], 0.6, max_relative = 1e-12);
        assert_relative_eq!(basis.theta0[(1, 1)], 0.8, max_relative = 1e-12);
        assert_eq!(basis.theta0[(0, 1)], 0.0);
    }

    #[test]
    fn diagonal_covariance_gives_diagonal_roots() {
        let basis = shock_basis(&DMatrix::from_diagonal(&nalgebra::dvector![4.0, 9.0])).unwrap();
        assert_eq!(basis.theta0[(0, 0)], 2.0);
        assert_eq!(basis.theta0[(1, 1)], 3.0);
    }

    #[test]
    fn asymmetric_or_non_finite_covariance_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0]);
        assert!(shock_basis(&bad).is_err());
        let nan = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(shock_basis(&nan).is_err());
    }

    #[test]
    fn rank_deficient_covariance_zeroes_column() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let basis = shock_basis(&sigma).unwrap();
        assert_eq!(basis.theta0[(1, 1)], 0.0);
        let rebuilt = &basis.theta0 * basis.theta0.transpose();
        assert!((rebuilt - sigma).amax() < 1e-12);
    }

    #[test]
    fn fevd_identity_and_closed_form() {
        let eye = ShockBasis { theta0: DMatrix::identity(3, 3) };
        let c = fevd_shares(&eye);
        assert!((c.shares.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        assert_eq!(total_connectedness(&c), 0.0);

        let p = ShockBasis { theta0: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]) };
        let c = fevd_shares(&p);
        assert_relative_eq!(c.shares[(1, 0)], 0.36, max_relative = 1e-14);
        assert_relative_eq!(c.shares[(1, 1)], 0.64, max_relative = 1e-14);
        assert_relative_eq!(total_connectedness(&c), 0.18, max_relative = 1e-14);
    }

    #[test]
    fn perfectly_comoving_degenerate_row() {
        let p = ShockBasis { theta0: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]) };
        let c = fevd_shares(&p);
        assert_eq!(c.shares[(1, 0)], 1.0);
        assert_eq!(c.shares[(1, 1)], 0.0);
    }

    #[test]
    fn zero_variance_row_becomes_indicator_and_is_flagged() {
        let p = ShockBasis { theta0: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]) };
        let c = fevd_shares(&p);
        assert_eq!(c.shares[(0, 0)], 1.0);
        assert_eq!(c.zero_variance_rows, vec![0]);
    }

    #[test]
    fn uniform_shares_reach_the_upper_bound() {
        let n = 5;
        let c = ConnectednessMatrix {
            shares: DMatrix::from_element(n, n, 1.0 / n as f64),
            ordering: Vec::new(),
            zero_variance_rows: Vec::new(),
        };
        assert_relative_eq!(total_connectedness(&c), (n as f64 - 1.0) / n as f64, max_relative = 1e-12);
    }

    fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let m = &g * g.transpose();
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn random_psd_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(1..=12);
            let rank = rng.gen_range(1..=n);
            let sigma = random_psd(n, rank, &mut rng);
            let c = fevd_shares(&shock_basis(&sigma).unwrap());
            for i in 0..n {
                let row: f64 = (0..n).map(|j| c.shares[(i, j)]).sum();
                assert!((row - 1.0).abs() <= 1e-10, "row sum {row}");
                for j in 0..n {
                    let v = c.shares[(i, j)];
                    assert!((0.0..=1.0).contains(&v), "share {v}");
                }
            }
        }
    }

    #[test]
    fn reconstruction_error_is_relative_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..=10);
            let sigma = random_psd(n, n, &mut rng);
            let basis = shock_basis(&sigma).unwrap();
            let err = (&basis.theta0 * basis.theta0.transpose() - &sigma).norm();
            assert!(err <= 1e-8 * sigma.norm().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn iid_panel_has_low_connectedness() {
        for seed in 0..3u64 {
            let panel = generate_var1(&Var1Spec::independent(10, 600, 50 + seed)).unwrap();
            let series = connectedness_series(&panel, &ConnectednessConfig::default(), "iid").unwrap();
            assert_eq!(series.len(), 301);
            assert!(series.values.iter().all(|&v| v < 0.1), "seed {seed}: {:?}", series.values.iter().cloned().fold(0.0, f64::max));
        }
    }

    #[test]
    fn comoving_pair_saturates_near_half() {
        // Two entities sharing one driver plus 1e-3 relative noise.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 400;
        let mut returns = DMatrix::zeros(t, 2);
        for i in 0..t {
            let common: f64 = rng.sample(rand_distr::StandardNormal);
            for j in 0..2 {
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                returns[(i, j)] = common + 1e-3 * noise;
            }
        }
        let start = NaiveDate::from_ymd_opt(2005, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..t).map(|i| start + chrono::Days::new(i as u64)).collect();
        let panel = crate::panel::ReturnPanel::new(
            dates,
            vec![crate::panel::Entity::parse("A"), crate::panel::Entity::parse("B")],
            returns,
            DMatrix::from_element(t, 2, false),
        )
        .unwrap();
        let cfg = ConnectednessConfig { window: 300, ..Default::default() };
        let series = connectedness_series(&panel, &cfg, "pair").unwrap();
        assert!(series.values.iter().all(|&v| (0.45..=0.5).contains(&v)),
            "values outside comoving band: {:?}", series.values);
    }

    #[test]
    fn ordering_sensitivity_is_finite_and_reversal_symmetric() {
        let panel = generate_var1(&Var1Spec::random_stable(4, 0.4, 120, 21)).unwrap();
        let cfg = ConnectednessConfig { window: 80, theta: 30.0, lambda: 10.0, ..Default::default() };
        let s = ordering_sensitivity(&panel, &cfg).unwrap();
        assert!(s >= 0.0 && s < 1.0);
        let mut rev = cfg.clone();
        rev.ordering = EntityOrdering::Reversed;
        assert_relative_eq!(s, ordering_sensitivity(&panel, &rev).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn series_csv_round_trip() {
        let panel = generate_var1(&Var1Spec::independent(3, 80, 5)).unwrap();
        let cfg = ConnectednessConfig { window: 60, theta: 20.0, lambda: 10.0, ..Default::default() };
        let series = connectedness_series(&panel, &cfg, "RT").unwrap();
        let text = render_series_csv(&series);
        let parsed = parse_series_csv(text.as_bytes(), "RT").unwrap();
        assert_eq!(parsed.end_dates, series.end_dates);
        assert_eq!(parsed.values, series.values);
        assert_eq!(parsed.flags, series.flags);
    }

    #[test]
    fn intersect_series_finds_common_dates() {
        let panel = generate_var1(&Var1Spec::independent(3, 90, 9)).unwrap();
        let cfg = ConnectednessConfig { window: 60, theta: 20.0, lambda: 10.0, ..Default::default() };
        let full = connectedness_series(&panel, &cfg, "full").unwrap();
        let mut clipped = full.clone();
        clipped.end_dates.remove(0);
        clipped.values.remove(0);
        clipped.imputation_fraction.remove(0);
        clipped.flags.remove(0);
        let out = intersect_series(&[full.clone(), clipped.clone()]).unwrap();
        assert_eq!(out[0].len(), clipped.len());
        assert_eq!(out[0].end_dates, out[1].end_dates);
    }

    proptest! {
        /// Any PSD matrix yields a row-stochastic share matrix with a
        /// total inside [0, (N-1)/N].
        #[test]
        fn total_stays_in_range(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..=8);
            let sigma = random_psd(n, n, &mut rng);
            let c = fevd_shares(&shock_basis(&sigma).unwrap());
            let total = total_connectedness(&c);
            prop_assert!(total >= 0.0);
            prop_assert!(total <= (n as f64 - 1.0) / n as f64 + 1e-12);
        }
    }
}
