//! Directed information flow between change series.
//!
//! The transfer entropy from a driver series to a target series is the
//! reduction in uncertainty about the target's present obtained from the
//! driver's past, beyond what the target's own past provides:
//!
//! ```text
//! TE(driver -> target) = H(X_t | X_{t-lag}) - H(X_t | X_{t-lag}, Y_{t-lag})
//! ```
//!
//! with `X` the target, `Y` the driver, and `H(A|B) = H(A,B) - H(B)`.
//! Two estimators are provided, both in nats and both conditioning on a
//! single lagged value of each variable:
//!
//! - linear: Gaussian entropies `H(Z) = 1/2 ln det(2 e pi Cov(Z))`, which
//!   reduce to half the log ratio of nested regression residual variances
//!   (the Granger-causality statistic);
//! - non-linear: plug-in entropies over a three-band discretization of
//!   each series (below / within / above `delta` standard deviations of
//!   its own mean).
//!
//! Significance comes from a permutation null that shuffles only the
//! lagged driver column (10,000 replicas by default), plus the nested
//! regression F-test in the linear case. Net information flow between two
//! series is the difference of the two directed values.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::connectedness::ConnectednessSeries;
use crate::error::{Error, Result};

/// Differences of a connectedness series at a fixed horizon.
#[derive(Debug, Clone)]
pub struct ChangeSeries {
    /// Region or series name.
    pub label: String,
    pub values: Vec<f64>,
    /// Step size in observations: 1 = daily changes, 5 = non-overlapping
    /// weekly changes.
    pub horizon: usize,
}

/// Differences a series: first differences at `horizon = 1`, and
/// non-overlapping `v[k*h] - v[(k-1)*h]` otherwise. The output length is
/// `floor((L - 1) / h)` for source length `L`.
pub fn difference_series(series: &ConnectednessSeries, horizon: usize) -> Result<ChangeSeries> {
    if horizon == 0 {
        return Err(Error::Data("horizon must be at least 1".into()));
    }
    let len = series.values.len();
    if len < horizon + 1 {
        return Err(Error::InsufficientData { needed: horizon + 1, got: len });
    }
    let count = (len - 1) / horizon;
    let values = (1..=count)
        .map(|k| series.values[k * horizon] - series.values[(k - 1) * horizon])
        .collect();
    Ok(ChangeSeries { label: series.label.clone(), values, horizon })
}

/// Three-state discretization alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Minus,
    Zero,
    Plus,
}

impl Symbol {
    pub fn index(self) -> usize {
        match self {
            Symbol::Minus => 0,
            Symbol::Zero => 1,
            Symbol::Plus => 2,
        }
    }
}

/// A series mapped onto {-, 0, +} bands.
#[derive(Debug, Clone)]
pub struct SymbolSeries {
    pub symbols: Vec<Symbol>,
    /// Band half-width in standard deviations.
    pub delta: f64,
    /// Mean used for banding (population convention).
    pub mu: f64,
    /// Standard deviation used for banding (population convention).
    pub sigma: f64,
    /// True when sigma was zero and every symbol defaulted to `Zero`.
    pub degenerate: bool,
}

/// Discretizes values against explicit band parameters: `Zero` iff
/// `|v - mu| <= delta * sigma`, `Minus` below, `Plus` above.
pub fn discretize_three_band_with(values: &[f64], delta: f64, mu: f64, sigma: f64) -> SymbolSeries {
    let degenerate = sigma <= 0.0;
    let half_width = delta * sigma;
    let symbols = values
        .iter()
        .map(|&v| {
            if degenerate || (v - mu).abs() <= half_width {
                Symbol::Zero
            } else if v < mu - half_width {
                Symbol::Minus
            } else {
                Symbol::Plus
            }
        })
        .collect();
    SymbolSeries { symbols, delta, mu, sigma, degenerate }
}

/// Discretizes a change series into three bands around its own mean,
/// `mu` and `sigma` computed over the full series with divisor `T`.
pub fn discretize_three_band(series: &ChangeSeries, delta: f64) -> Result<SymbolSeries> {
    if !(delta > 0.0) {
        return Err(Error::Data(format!("delta must be positive, got {delta}")));
    }
    let n = series.values.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mu = series.values.iter().sum::<f64>() / n as f64;
    let var = series.values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
    Ok(discretize_three_band_with(&series.values, delta, mu, var.sqrt()))
}

/// Plug-in entropy (nats) of the empirical joint distribution of aligned
/// symbol columns, with the `0 ln 0 = 0` convention.
///
/// Panics if `cols` is empty, lengths differ, or more than 40 columns are
/// given (the joint alphabet is encoded in a u64).
pub fn plugin_entropy(cols: &[&[Symbol]]) -> f64 {
    assert!(!cols.is_empty(), "plugin_entropy needs at least one column");
    assert!(cols.len() <= 40, "at most 40 joint columns supported");
    let n = cols[0].len();
    assert!(cols.iter().all(|c| c.len() == n), "columns must be aligned");
    assert!(n > 0, "plugin_entropy needs at least one observation");

    let mut counts: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for i in 0..n {
        let mut key = 0u64;
        for col in cols {
            key = key * 3 + col[i].index() as u64;
        }
        *counts.entry(key).or_insert(0) += 1;
    }
    entropy_of_counts(counts.values().copied(), n)
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    let mut h = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

/// Which transfer entropy estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Linear,
    Nonlinear { delta: f64 },
}

impl Estimator {
    /// Machine-readable identifier used in CSV output.
    pub fn id(&self) -> String {
        match self {
            Estimator::Linear => "linear".to_string(),
            Estimator::Nonlinear { delta } => format!("nonlinear_{delta}"),
        }
    }

    /// Row label used in the human-readable table.
    pub fn label(&self) -> String {
        match self {
            Estimator::Linear => "linear".to_string(),
            Estimator::Nonlinear { delta } => format!("non-linear {delta}sd"),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// A directed transfer entropy value tagged with its provenance, so that
/// net flows can only be formed from comparable estimates.
#[derive(Debug, Clone, Copy)]
pub struct DirectedTe {
    pub value: f64,
    pub estimator: Estimator,
    pub lag: usize,
}

/// Net information flow `TE(x->y) - TE(y->x)`; antisymmetric under
/// argument swap. Errors when the two values come from different
/// estimators or lags.
pub fn net_information_flow(te_xy: &DirectedTe, te_yx: &DirectedTe) -> Result<f64> {
    if te_xy.estimator != te_yx.estimator || te_xy.lag != te_yx.lag {
        return Err(Error::Contract(format!(
            "net flow needs matching estimators: {}/lag {} vs {}/lag {}",
            te_xy.estimator, te_xy.lag, te_yx.estimator, te_yx.lag
        )));
    }
    Ok(te_xy.value - te_yx.value)
}

fn validate_pair(target: &ChangeSeries, driver: &ChangeSeries, lag: usize) -> Result<usize> {
    if lag == 0 {
        return Err(Error::Data("lag must be at least 1".into()));
    }
    let t = target.values.len();
    if driver.values.len() != t {
        return Err(Error::Contract(format!(
            "series lengths differ: {} has {}, {} has {}",
            target.label,
            t,
            driver.label,
            driver.values.len()
        )));
    }
    if t < lag + 10 {
        return Err(Error::InsufficientData { needed: lag + 10, got: t });
    }
    if target.values.iter().chain(driver.values.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("change series".into()));
    }
    Ok(t - lag)
}

/// Centered moments of the target and its own lag; the driver column is
/// supplied per evaluation so the permutation test can reuse the rest.
struct LinearCore {
    xt_c: Vec<f64>,
    xl_c: Vec<f64>,
    var_xt: f64,
    var_xl: f64,
    cov_tl: f64,
    /// Residual variance of the restricted model (target on own lag).
    var_restricted: f64,
}

impl LinearCore {
    fn new(target: &[f64], lag: usize) -> Result<LinearCore> {
        let n = target.len() - lag;
        let xt = &target[lag..];
        let xl = &target[..n];
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
        let m_t = mean(xt);
        let m_l = mean(xl);
        let xt_c: Vec<f64> = xt.iter().map(|v| v - m_t).collect();
        let xl_c: Vec<f64> = xl.iter().map(|v| v - m_l).collect();
        let var_xt = xt_c.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let var_xl = xl_c.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let cov_tl = xt_c.iter().zip(&xl_c).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let var_restricted = if var_xl > 0.0 { var_xt - cov_tl * cov_tl / var_xl } else { var_xt };
        if var_restricted <= 0.0 {
            return Err(Error::DegenerateSeries(
                "restricted regression has zero residual variance".into(),
            ));
        }
        Ok(LinearCore { xt_c, xl_c, var_xt, var_xl, cov_tl, var_restricted })
    }

    fn n(&self) -> usize {
        self.xt_c.len()
    }

    /// Residual variance of the full model given a centered driver-lag
    /// column with known variance. Returns `(var_full, collinear)`.
    fn full_variance(&self, yl_c: &[f64], var_yl: f64) -> (f64, bool) {
        let n = self.n() as f64;
        let cov_ly = self.xl_c.iter().zip(yl_c).map(|(a, b)| a * b).sum::<f64>() / n;
        let cov_ty = self.xt_c.iter().zip(yl_c).map(|(a, b)| a * b).sum::<f64>() / n;

        // Solve [var_xl cov_ly; cov_ly var_yl] b = [cov_tl; cov_ty].
        let det = self.var_xl * var_yl - cov_ly * cov_ly;
        let tol = 1e-12 * self.var_xl.max(f64::MIN_POSITIVE) * var_yl.max(f64::MIN_POSITIVE);
        let (b1, b2, collinear) = if det > tol {
            (
                (self.cov_tl * var_yl - cov_ty * cov_ly) / det,
                (self.var_xl * cov_ty - cov_ly * self.cov_tl) / det,
                false,
            )
        } else {
            // Minimum-norm solution through the eigensystem of the 2x2
            // Gram matrix.
            let (b1, b2) = min_norm_2x2(self.var_xl, cov_ly, var_yl, self.cov_tl, cov_ty);
            (b1, b2, true)
        };
        let var_full = self.var_xt - (b1 * self.cov_tl + b2 * cov_ty);
        (var_full.max(0.0), collinear)
    }

    fn te(&self, yl_c: &[f64], var_yl: f64) -> (f64, bool) {
        let (var_full, collinear) = self.full_variance(yl_c, var_yl);
        let te = 0.5 * (self.var_restricted / var_full.max(f64::MIN_POSITIVE)).ln();
        (te, collinear)
    }
}

/// Minimum-norm least squares for the symmetric system
/// `[[a, c], [c, d]] b = [r1, r2]`.
fn min_norm_2x2(a: f64, c: f64, d: f64, r1: f64, r2: f64) -> (f64, f64) {
    let tr = a + d;
    let gap = ((a - d) * (a - d) + 4.0 * c * c).sqrt();
    let l1 = 0.5 * (tr + gap);
    let l2 = 0.5 * (tr - gap);
    let tol = 1e-12 * l1.abs().max(f64::MIN_POSITIVE);
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &l in &[l1, l2] {
        if l <= tol {
            continue;
        }
        // Eigenvector of [[a, c], [c, d]] for eigenvalue l.
        let (vx, vy) = if c.abs() > 1e-300 {
            (l - d, c)
        } else if a >= d {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let norm = (vx * vx + vy * vy).sqrt();
        if norm == 0.0 {
            continue;
        }
        let (vx, vy) = (vx / norm, vy / norm);
        let proj = (vx * r1 + vy * r2) / l;
        b1 += proj * vx;
        b2 += proj * vy;
    }
    (b1, b2)
}

fn center(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / n;
    (centered, var)
}

/// Linear transfer entropy from driver to target (nats), as half the log
/// ratio of restricted to full regression residual variance. Both
/// regressions include an intercept.
pub fn linear_te(target: &ChangeSeries, driver: &ChangeSeries, lag: usize) -> Result<f64> {
    Ok(linear_te_noted(target, driver, lag)?.0)
}

/// As [`linear_te`], also reporting whether the regressors were collinear
/// and solved by the minimum-norm convention.
pub fn linear_te_noted(target: &ChangeSeries, driver: &ChangeSeries, lag: usize) -> Result<(f64, bool)> {
    let n = validate_pair(target, driver, lag)?;
    let core = LinearCore::new(&target.values, lag)?;
    let (yl_c, var_yl) = center(&driver.values[..n]);
    Ok(core.te(&yl_c, var_yl))
}

/// Linear transfer entropy through the Gaussian entropy route,
/// `H(Z) = 1/2 ln det(2 e pi Cov(Z))`, combining the four joint-entropy
/// terms directly from covariance determinants. Agrees with
/// [`linear_te`] to rounding; kept as an independent computation path.
pub fn linear_te_logdet(target: &ChangeSeries, driver: &ChangeSeries, lag: usize) -> Result<f64> {
    let n = validate_pair(target, driver, lag)?;
    let xt = &target.values[lag..];
    let xl = &target.values[..n];
    let yl = &driver.values[..n];

    let cov = |a: &[f64], b: &[f64]| -> f64 {
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64
    };

    let s_tt = cov(xt, xt);
    let s_ll = cov(xl, xl);
    let s_yy = cov(yl, yl);
    let s_tl = cov(xt, xl);
    let s_ty = cov(xt, yl);
    let s_ly = cov(xl, yl);

    let det2_txl = s_tt * s_ll - s_tl * s_tl;
    let det2_ly = s_ll * s_yy - s_ly * s_ly;
    let det3 = s_tt * (s_ll * s_yy - s_ly * s_ly) - s_tl * (s_tl * s_yy - s_ly * s_ty)
        + s_ty * (s_tl * s_ly - s_ll * s_ty);

    if det2_txl <= 0.0 || det2_ly <= 0.0 || det3 <= 0.0 || s_ll <= 0.0 {
        return Err(Error::DegenerateSeries(
            "singular covariance in the log-determinant entropy route".into(),
        ));
    }
    Ok(0.5 * (det2_txl.ln() - s_ll.ln() - det3.ln() + det2_ly.ln()))
}

/// Symbolized aligned columns for the discretized estimator.
struct NonlinearCore {
    xt: Vec<u8>,
    xl: Vec<u8>,
    degenerate_target: bool,
}

impl NonlinearCore {
    fn new(target: &ChangeSeries, delta: f64, lag: usize) -> Result<NonlinearCore> {
        let symbols = discretize_three_band(target, delta)?;
        let n = target.values.len() - lag;
        let idx: Vec<u8> = symbols.symbols.iter().map(|s| s.index() as u8).collect();
        Ok(NonlinearCore {
            xt: idx[lag..].to_vec(),
            xl: idx[..n].to_vec(),
            degenerate_target: symbols.degenerate,
        })
    }

    /// Plug-in transfer entropy for one driver-lag symbol column, all four
    /// entropy terms over the same aligned triples.
    fn te(&self, yl: &[u8]) -> f64 {
        let n = self.xt.len();
        let mut c3 = [0usize; 27];
        for i in 0..n {
            c3[(self.xt[i] * 9 + self.xl[i] * 3 + yl[i]) as usize] += 1;
        }
        let mut c_txl = [0usize; 9];
        let mut c_ly = [0usize; 9];
        let mut c_l = [0usize; 3];
        for code in 0..27 {
            let c = c3[code];
            if c > 0 {
                let xt = code / 9;
                let xl = (code / 3) % 3;
                let yl = code % 3;
                c_txl[xt * 3 + xl] += c;
                c_ly[xl * 3 + yl] += c;
                c_l[xl] += c;
            }
        }
        entropy_of_counts(c_txl.iter().copied(), n) + entropy_of_counts(c_ly.iter().copied(), n)
            - entropy_of_counts(c_l.iter().copied(), n)
            - entropy_of_counts(c3.iter().copied(), n)
    }
}

fn driver_symbols(driver: &ChangeSeries, delta: f64, n: usize) -> Result<(Vec<u8>, bool)> {
    let symbols = discretize_three_band(driver, delta)?;
    let idx: Vec<u8> = symbols.symbols[..n].iter().map(|s| s.index() as u8).collect();
    Ok((idx, symbols.degenerate))
}

/// Non-linear transfer entropy from driver to target (nats): plug-in
/// conditional mutual information over the three-band symbols, each
/// series discretized against its own mean and standard deviation.
///
/// When both series are degenerate constants the value is 0 by
/// convention (see [`nonlinear_te_noted`] for the flag).
pub fn nonlinear_te(target: &ChangeSeries, driver: &ChangeSeries, lag: usize, delta: f64) -> Result<f64> {
    Ok(nonlinear_te_noted(target, driver, lag, delta)?.0)
}

/// As [`nonlinear_te`], also reporting the both-degenerate condition.
pub fn nonlinear_te_noted(
    target: &ChangeSeries,
    driver: &ChangeSeries,
    lag: usize,
    delta: f64,
) -> Result<(f64, bool)> {
    let n = validate_pair(target, driver, lag)?;
    let core = NonlinearCore::new(target, delta, lag)?;
    let (yl, driver_degenerate) = driver_symbols(driver, delta, n)?;
    let both_degenerate = core.degenerate_target && driver_degenerate;
    if both_degenerate {
        return Ok((0.0, true));
    }
    Ok((core.te(&yl), false))
}

/// Permutation p-value for `TE(driver -> target)`.
///
/// The observed statistic is computed once; each replica uniformly
/// shuffles the lagged driver column (target and its own lag untouched)
/// and recomputes the same estimator. The p-value uses the add-one
/// convention `(1 + #{te_perm >= te_obs}) / (1 + n_perm)`.
///
/// Replica `r` draws from an RNG stream derived from `(seed, r)`, so the
/// result is reproducible and independent of worker count.
pub fn permutation_pvalue(
    target: &ChangeSeries,
    driver: &ChangeSeries,
    lag: usize,
    estimator: Estimator,
    n_perm: usize,
    seed: u64,
) -> Result<f64> {
    if n_perm == 0 {
        return Err(Error::Data("n_perm must be at least 1".into()));
    }
    let n = validate_pair(target, driver, lag)?;

    let exceedances: usize = match estimator {
        Estimator::Linear => {
            let core = LinearCore::new(&target.values, lag)?;
            let (yl_c, var_yl) = center(&driver.values[..n]);
            let te_obs = core.te(&yl_c, var_yl).0;
            (0..n_perm)
                .into_par_iter()
                .map(|replica| {
                    let mut rng = replica_rng(seed, replica);
                    let mut perm = yl_c.clone();
                    perm.shuffle(&mut rng);
                    usize::from(core.te(&perm, var_yl).0 >= te_obs)
                })
                .sum()
        }
        Estimator::Nonlinear { delta } => {
            let core = NonlinearCore::new(target, delta, lag)?;
            let (yl, _) = driver_symbols(driver, delta, n)?;
            let te_obs = core.te(&yl);
            (0..n_perm)
                .into_par_iter()
                .map(|replica| {
                    let mut rng = replica_rng(seed, replica);
                    let mut perm = yl.clone();
                    perm.shuffle(&mut rng);
                    usize::from(core.te(&perm) >= te_obs)
                })
                .sum()
        }
    };
    Ok((1 + exceedances) as f64 / (1 + n_perm) as f64)
}

fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64 + 1);
    rng
}

/// Upper-tail p-value of the nested-regression F statistic for adding the
/// lagged driver to the target's autoregression: `(1, T - lag - 3)`
/// degrees of freedom (intercept, own lag, added lag).
pub fn linear_te_f_pvalue(target: &ChangeSeries, driver: &ChangeSeries, lag: usize) -> Result<f64> {
    let n = validate_pair(target, driver, lag)?;
    let core = LinearCore::new(&target.values, lag)?;
    let (yl_c, var_yl) = center(&driver.values[..n]);
    let (var_full, _) = core.full_variance(&yl_c, var_yl);
    let dof2 = n as f64 - 3.0;
    if dof2 < 1.0 {
        return Err(Error::InsufficientData { needed: lag + 4, got: target.values.len() });
    }
    if var_full <= 0.0 {
        return Ok(0.0); // perfect fit: infinitely significant
    }
    let f_stat = ((core.var_restricted - var_full) / var_full * dof2).max(0.0);
    let dist = FisherSnedecor::new(1.0, dof2)
        .map_err(|e| Error::Data(format!("F distribution: {e}")))?;
    Ok(1.0 - dist.cdf(f_stat))
}

/// Parameters of the pairwise transfer entropy table.
#[derive(Debug, Clone)]
pub struct TeConfig {
    /// Conditioning lag, in observations of the change series.
    pub lag: usize,
    /// Change horizon: 1 = daily changes, 5 = weekly non-overlapping.
    pub horizon: usize,
    /// Band half-widths for the non-linear estimators.
    pub deltas: Vec<f64>,
    /// Permutation replicas per p-value.
    pub n_perm: usize,
    /// Base RNG seed; required for reproducibility.
    pub seed: u64,
}

impl TeConfig {
    /// Defaults (lag 1, horizon 1, deltas 1,2,3, 10,000 permutations)
    /// with an explicit seed.
    pub fn with_seed(seed: u64) -> TeConfig {
        TeConfig { lag: 1, horizon: 1, deltas: vec![1.0, 2.0, 3.0], n_perm: 10_000, seed }
    }
}

/// One pair/estimator row of the transfer entropy table: both directions,
/// their significance, and the net flow.
#[derive(Debug, Clone)]
pub struct TeResult {
    /// Labels (x, y) of the unordered pair, in input order.
    pub pair: (String, String),
    pub estimator: Estimator,
    pub lag: usize,
    pub horizon: usize,
    /// TE(x -> y).
    pub te_xy: f64,
    /// TE(y -> x).
    pub te_yx: f64,
    /// `te_xy - te_yx`.
    pub net_flow: f64,
    /// Permutation p-values per direction.
    pub p_xy: f64,
    pub p_yx: f64,
    /// F-test p-values, linear estimator only.
    pub p_xy_f: Option<f64>,
    pub p_yx_f: Option<f64>,
    pub n_perm: usize,
    pub seed: u64,
    /// Estimator degradations hit on this pair (collinearity, degenerate
    /// series).
    pub notes: Vec<String>,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a base seed and a tag path, so
/// every (pair, direction, estimator) gets its own permutation stream
/// regardless of evaluation order.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ t.wrapping_mul(0xA24B_AED4_963E_E407)))
}

fn estimate_noted(
    estimator: Estimator,
    target: &ChangeSeries,
    driver: &ChangeSeries,
    lag: usize,
) -> Result<(f64, Option<String>)> {
    match estimator {
        Estimator::Linear => {
            let (te, collinear) = linear_te_noted(target, driver, lag)?;
            let note = collinear.then(|| {
                format!("{}->{}: collinear regressors, minimum-norm solution", driver.label, target.label)
            });
            Ok((te, note))
        }
        Estimator::Nonlinear { delta } => {
            let (te, degenerate) = nonlinear_te_noted(target, driver, lag, delta)?;
            let note = degenerate.then(|| {
                format!("{}->{}: both series degenerate, te forced to 0", driver.label, target.label)
            });
            Ok((te, note))
        }
    }
}

/// Computes the full pairwise table: for every unordered pair of series
/// (input order) and every estimator (linear first, then non-linear at
/// each configured delta), both directed values with permutation
/// p-values, the F-test p-values for the linear rows, and the net flow.
///
/// The series must share a common calendar; intersect them first.
pub fn te_table(series: &[ConnectednessSeries], cfg: &TeConfig) -> Result<Vec<TeResult>> {
    if series.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: series.len() });
    }
    for s in &series[1..] {
        if s.end_dates != series[0].end_dates {
            return Err(Error::CalendarMismatch(format!(
                "{} and {} have different end dates",
                series[0].label, s.label
            )));
        }
    }
    let changes: Vec<ChangeSeries> = series
        .iter()
        .map(|s| difference_series(s, cfg.horizon))
        .collect::<Result<_>>()?;

    let mut estimators = vec![Estimator::Linear];
    estimators.extend(cfg.deltas.iter().map(|&delta| Estimator::Nonlinear { delta }));

    let mut out = Vec::new();
    for i in 0..changes.len() {
        for j in i + 1..changes.len() {
            let x = &changes[i];
            let y = &changes[j];
            for (k, &estimator) in estimators.iter().enumerate() {
                let (te_xy, note_xy) = estimate_noted(estimator, y, x, cfg.lag)?;
                let (te_yx, note_yx) = estimate_noted(estimator, x, y, cfg.lag)?;
                let net_flow = net_information_flow(
                    &DirectedTe { value: te_xy, estimator, lag: cfg.lag },
                    &DirectedTe { value: te_yx, estimator, lag: cfg.lag },
                )?;
                let tags = |dir: u64| [i as u64, j as u64, dir, k as u64];
                let p_xy = permutation_pvalue(
                    y, x, cfg.lag, estimator, cfg.n_perm,
                    derive_seed(cfg.seed, &tags(0)),
                )?;
                let p_yx = permutation_pvalue(
                    x, y, cfg.lag, estimator, cfg.n_perm,
                    derive_seed(cfg.seed, &tags(1)),
                )?;
                let (p_xy_f, p_yx_f) = match estimator {
                    Estimator::Linear => (
                        Some(linear_te_f_pvalue(y, x, cfg.lag)?),
                        Some(linear_te_f_pvalue(x, y, cfg.lag)?),
                    ),
                    Estimator::Nonlinear { .. } => (None, None),
                };
                out.push(TeResult {
                    pair: (x.label.clone(), y.label.clone()),
                    estimator,
                    lag: cfg.lag,
                    horizon: cfg.horizon,
                    te_xy,
                    te_yx,
                    net_flow,
                    p_xy,
                    p_yx,
                    p_xy_f,
                    p_yx_f,
                    n_perm: cfg.n_perm,
                    seed: cfg.seed,
                    notes: note_xy.into_iter().chain(note_yx).collect(),
                });
            }
        }
    }
    Ok(out)
}

/// Significance stars: `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// One table cell: the value to six decimals with its stars appended.
fn te_cell(te: f64, p: f64) -> String {
    format!("{te:.6}{}", stars(p))
}

/// Renders the machine-readable layout, one row per direction:
/// `pair,direction,estimator,te,p_perm,p_f,net_flow,stars`.
pub fn render_te_csv(results: &[TeResult]) -> String {
    let mut out = String::from("pair,direction,estimator,te,p_perm,p_f,net_flow,stars\n");
    for r in results {
        let (x, y) = (&r.pair.0, &r.pair.1);
        let fmt_f = |p: Option<f64>| p.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{x}-{y},{x}->{y},{est},{te:.6},{p:.6},{pf},{net:.6},{stars}\n",
            est = r.estimator.id(),
            te = r.te_xy,
            p = r.p_xy,
            pf = fmt_f(r.p_xy_f),
            net = r.net_flow,
            stars = stars(r.p_xy),
        ));
        out.push_str(&format!(
            "{x}-{y},{y}->{x},{est},{te:.6},{p:.6},{pf},{net:.6},{stars}\n",
            est = r.estimator.id(),
            te = r.te_yx,
            p = r.p_yx,
            pf = fmt_f(r.p_yx_f),
            net = r.net_flow,
            stars = stars(r.p_yx),
        ));
    }
    out
}

/// Renders the human-readable grouped table: one block per pair, one row
/// per estimator, six-decimal values with significance stars.
pub fn render_te_table(results: &[TeResult]) -> String {
    let mut out = String::new();
    if results.is_empty() {
        return out;
    }
    let first = &results[0];
    out.push_str(&format!(
        "transfer entropy (lag {}, horizon {}, {} permutations, seed {})\n",
        first.lag, first.horizon, first.n_perm, first.seed
    ));
    out.push_str("significance: * p<0.05, ** p<0.01, *** p<0.001\n");

    let mut current_pair: Option<(String, String)> = None;
    for r in results {
        if current_pair.as_ref() != Some(&r.pair) {
            let (x, y) = (&r.pair.0, &r.pair.1);
            out.push_str(&format!("\npair {x} <-> {y}\n"));
            out.push_str(&format!(
                "{:<22}{:<18}{:<18}{}\n",
                "method",
                format!("TE {x}->{y}"),
                format!("TE {y}->{x}"),
                "net flow"
            ));
            current_pair = Some(r.pair.clone());
        }
        out.push_str(&format!(
            "{:<22}{:<18}{:<18}{:.6}\n",
            r.estimator.label(),
            te_cell(r.te_xy, r.p_xy),
            te_cell(r.te_yx, r.p_yx),
            r.net_flow
        ));
    }
    out
}
