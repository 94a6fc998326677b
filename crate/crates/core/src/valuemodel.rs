//! AR(2)-ARCH(1) value-evolution model: fitting, path simulation, and
//! percentile-based upper confidence bounds over a forecast horizon.
//!
//! The mean follows a two-lag autoregression and the conditional variance
//! follows a one-lag ARCH recursion:
//!
//! ```text
//! mu_t      = beta0 + beta1 * v_{t-1} + beta2 * v_{t-2}
//! v_t       = mu_t + eps_t
//! eps_t     = sigma_t * eta_t,            eta_t ~ N(0, 1)
//! sigma^2_t = alpha0 + alpha1 * eps^2_{t-1}
//! ```
//!
//! Estimation is two-stage least squares: an OLS fit of the mean equation,
//! then an OLS fit of squared residuals on their first lag.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum admissible variance intercept, in squared value units.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Upper clamp for the ARCH slope, keeping the recursion non-explosive.
pub const ALPHA1_MAX: f64 = 1.0 - 1e-6;
/// Relative eigenvalue ratio below which the stage-1 normal equations are
/// declared singular and the persistence fallback applies.
const SINGULARITY_RATIO: f64 = 1e-10;

/// Per-policy ordered history of value estimates, including the
/// pseudo-observation prefix used to make the model identifiable early on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSeries {
    policy_id: usize,
    values: Vec<f64>,
    pseudo_count: usize,
}

impl ValueSeries {
    /// Series seeded with `pseudo_count` pseudo-observations plus one anchor,
    /// all equal to `fill_value`. `pseudo_count` must be at least 3 (two mean
    /// lags and one variance lag).
    pub fn with_pseudo(policy_id: usize, fill_value: f64, pseudo_count: usize) -> Result<Self> {
        if pseudo_count < 3 {
            return Err(Error::Precondition(format!(
                "pseudo_count must be >= 3, got {pseudo_count}"
            )));
        }
        if !fill_value.is_finite() {
            return Err(Error::Input(format!("non-finite fill value {fill_value}")));
        }
        Ok(Self {
            policy_id,
            values: vec![fill_value; pseudo_count + 1],
            pseudo_count,
        })
    }

    /// Series built from raw observations with no pseudo prefix.
    pub fn from_values(policy_id: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite series value {bad}")));
        }
        Ok(Self {
            policy_id,
            values,
            pseudo_count: 0,
        })
    }

    /// Appends a new observation. Existing entries are never rewritten.
    pub fn push(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Input(format!("non-finite series value {value}")));
        }
        self.values.push(value);
        Ok(())
    }

    pub fn policy_id(&self) -> usize {
        self.policy_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pseudo_count(&self) -> usize {
        self.pseudo_count
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Fine-tuning iterations represented by the series: entries beyond the
    /// pseudo prefix and the iteration-0 anchor.
    pub fn current_iteration(&self) -> usize {
        self.values.len().saturating_sub(self.pseudo_count + 1)
    }
}

/// Fitted AR(2)-ARCH(1) coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArArchParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// True when the stage-1 normal equations were singular and the
    /// persistence fallback (beta = (0, 1, 0), floor variance) was returned.
    pub fallback_used: bool,
}

impl ArArchParams {
    /// Persistence fallback: carry the last value forward with floor variance.
    pub fn persistence_fallback() -> Self {
        Self {
            beta0: 0.0,
            beta1: 1.0,
            beta2: 0.0,
            alpha0: VARIANCE_FLOOR,
            alpha1: 0.0,
            fallback_used: true,
        }
    }
}

/// Per-horizon UCBs and their maximum, as produced by [`forecast_ucb`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// Future iteration indices covered by the forecast.
    pub horizon: Vec<usize>,
    /// Per-step UCB values aligned with `horizon`.
    pub ucb_per_step: Vec<f64>,
    /// Maximum of `ucb_per_step`, or the last observed value when the
    /// horizon is empty.
    pub max_ucb: f64,
    pub num_paths: usize,
    pub quantile: f64,
}

/// Eigenvalues of a symmetric 3x3 matrix, ascending. Analytic trigonometric
/// form; exact diagonal shortcut when the off-diagonal part vanishes.
fn symmetric_eigenvalues_3x3(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut eig = [m[0][0], m[1][1], m[2][2]];
        eig.sort_by(f64::total_cmp);
        return eig;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, j: usize| (m[i][j] - if i == j { q } else { 0.0 }) / p;
    let det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
        - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let eig_hi = q + 2.0 * p * phi.cos();
    let eig_lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let eig_mid = 3.0 * q - eig_hi - eig_lo;
    [eig_lo, eig_mid, eig_hi]
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve_3x3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&r1, &r2| m[r1][col].abs().total_cmp(&m[r2][col].abs()))
            .unwrap();
        if m[pivot][col].abs() == 0.0 {
            return None;
        }
        m.swap(col, pivot);
        for row in (col + 1)..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = m[row][3];
        for k in (row + 1)..3 {
            acc -= m[row][k] * x[k];
        }
        if m[row][row] == 0.0 {
            return None;
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Fits the AR(2)-ARCH(1) model to `series` by two-stage least squares.
///
/// Stage 1 regresses `v_t` on `[1, v_{t-1}, v_{t-2}]`; stage 2 regresses the
/// squared stage-1 residuals on their first lag. A singular stage-1 design
/// yields the persistence fallback with `fallback_used = true`.
pub fn fit_ar_arch(series: &ValueSeries) -> Result<ArArchParams> {
    let v = series.values();
    if v.len() < 5 {
        return Err(Error::Precondition(format!(
            "fit requires series length >= 5, got {}",
            v.len()
        )));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Input(format!("non-finite series value {bad}")));
    }

    // Stage 1: normal equations for v_t ~ [1, v_{t-1}, v_{t-2}].
    let mut xtx = [[0.0_f64; 3]; 3];
    let mut xty = [0.0_f64; 3];
    for t in 2..v.len() {
        let x = [1.0, v[t - 1], v[t - 2]];
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j] += x[i] * x[j];
            }
            xty[i] += x[i] * v[t];
        }
    }

    let eig = symmetric_eigenvalues_3x3(&xtx);
    let max_eig = eig[2].abs().max(eig[0].abs());
    if max_eig == 0.0 || eig[0].abs() < SINGULARITY_RATIO * max_eig {
        return Ok(ArArchParams::persistence_fallback());
    }
    let beta = match solve_3x3(&xtx, &xty) {
        Some(b) if b.iter().all(|x| x.is_finite()) => b,
        _ => return Ok(ArArchParams::persistence_fallback()),
    };

    // Stage 2: squared residuals on their first lag.
    let resid_sq: Vec<f64> = (2..v.len())
        .map(|t| {
            let e = v[t] - (beta[0] + beta[1] * v[t - 1] + beta[2] * v[t - 2]);
            e * e
        })
        .collect();
    let (alpha0, alpha1) = fit_arch_slope(&resid_sq);
    let alpha0 = alpha0.max(VARIANCE_FLOOR);
    let alpha1 = alpha1.clamp(0.0, ALPHA1_MAX);
    if !(alpha0.is_finite() && alpha1.is_finite()) {
        return Ok(ArArchParams::persistence_fallback());
    }

    Ok(ArArchParams {
        beta0: beta[0],
        beta1: beta[1],
        beta2: beta[2],
        alpha0,
        alpha1,
        fallback_used: false,
    })
}

/// OLS of `resid_sq[t]` on `[1, resid_sq[t-1]]`. Falls back to the sample
/// mean with zero slope when the lagged regressor carries no variation.
fn fit_arch_slope(resid_sq: &[f64]) -> (f64, f64) {
    let n = resid_sq.len().saturating_sub(1);
    let mean_all = resid_sq.iter().sum::<f64>() / resid_sq.len() as f64;
    if n < 2 {
        return (mean_all, 0.0);
    }
    let xs = &resid_sq[..resid_sq.len() - 1];
    let ys = &resid_sq[1..];
    let nf = n as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = nf * sxx - sx * sx;
    let scale = nf * sxx.abs() + sx * sx;
    if denom.abs() <= SINGULARITY_RATIO * scale.max(1e-300) {
        return (mean_all, 0.0);
    }
    let slope = (nf * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / nf;
    (intercept, slope)
}

/// Simulates `num_paths` forward trajectories of length `horizon_len` by
/// iterating the fitted recursion with independent standard-normal draws.
///
/// `last_two_values` is `(v_t, v_{t-1})`; `last_residual` seeds the ARCH
/// variance recursion. Deterministic for a fixed rng state.
pub fn simulate_paths<R: Rng + ?Sized>(
    params: &ArArchParams,
    last_two_values: (f64, f64),
    last_residual: f64,
    horizon_len: usize,
    num_paths: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if horizon_len == 0 {
        return Err(Error::Precondition(
            "simulate_paths requires horizon_len >= 1".into(),
        ));
    }
    if num_paths == 0 {
        return Err(Error::Precondition(
            "simulate_paths requires num_paths >= 1".into(),
        ));
    }
    let mut paths = Vec::with_capacity(num_paths);
    for _ in 0..num_paths {
        let mut prev1 = last_two_values.0;
        let mut prev2 = last_two_values.1;
        let mut eps_prev = last_residual;
        let mut path = Vec::with_capacity(horizon_len);
        for _ in 0..horizon_len {
            let mu = params.beta0 + params.beta1 * prev1 + params.beta2 * prev2;
            let sigma2 = params.alpha0 + params.alpha1 * eps_prev * eps_prev;
            let eta: f64 = StandardNormal.sample(rng);
            let eps = sigma2.sqrt() * eta;
            let v = mu + eps;
            path.push(v);
            prev2 = prev1;
            prev1 = v;
            eps_prev = eps;
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Nearest-rank percentile: the `ceil(q * len)`-th smallest element (1-based),
/// with no interpolation.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Precondition("percentile of empty sequence".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    let rank = rank.clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Fits the model, simulates `num_paths` trajectories over `horizon_len`
/// steps, and returns the per-step `q`-percentile UCBs plus their maximum.
///
/// An empty horizon yields `max_ucb` equal to the last observed value.
pub fn forecast_ucb<R: Rng + ?Sized>(
    series: &ValueSeries,
    horizon_len: usize,
    num_paths: usize,
    q: f64,
    rng: &mut R,
) -> Result<ForecastResult> {
    let cur = series.current_iteration();
    if horizon_len == 0 {
        let last = series
            .last()
            .ok_or_else(|| Error::Precondition("empty series".into()))?;
        return Ok(ForecastResult {
            horizon: Vec::new(),
            ucb_per_step: Vec::new(),
            max_ucb: last,
            num_paths,
            quantile: q,
        });
    }

    let params = fit_ar_arch(series)?;
    let v = series.values();
    let last = v[v.len() - 1];
    let second_last = v[v.len() - 2];
    let last_residual = if params.fallback_used {
        0.0
    } else {
        last - (params.beta0 + params.beta1 * second_last + params.beta2 * v[v.len() - 3])
    };

    let paths = simulate_paths(
        &params,
        (last, second_last),
        last_residual,
        horizon_len,
        num_paths,
        rng,
    )?;
    let mut ucb_per_step = Vec::with_capacity(horizon_len);
    let mut column = vec![0.0; num_paths];
    for h in 0..horizon_len {
        for (s, path) in paths.iter().enumerate() {
            column[s] = path[h];
        }
        ucb_per_step.push(percentile(&column, q)?);
    }
    let max_ucb = ucb_per_step
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(ForecastResult {
        horizon: (cur + 1..=cur + horizon_len).collect(),
        ucb_per_step,
        max_ucb,
        num_paths,
        quantile: q,
    })
}
