//! Gaussian-mixture noise model over reconstruction residuals.
//!
//! Each signal carries one latent mixture assignment. Component g has weight
//! pi_g, a length-P mean offset mu_g and a diagonal covariance with per-entry
//! variances sigma2_g. Responsibilities are computed in the log domain, the
//! closed-form parameter updates renormalize the weights exactly, and a
//! pruning pass merges components whose variance profiles are nearly
//! indistinguishable.

use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{CodeSet, SignalSet};
use crate::util::ensure_nonempty;

/// Lower bound applied to every variance entry after an update.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Mixture weights must sum to one within this tolerance at all times.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Bounds of the log-uniform draw for initial per-component variances.
pub const INIT_VARIANCE_RANGE: (f64, f64) = (1e-4, 1e-1);

/// Which signal enters the mean update.
///
/// `Residual` recenters each component on the weighted mean of the current
/// reconstruction residuals, which keeps the mean update consistent with the
/// variance update. `Literal` uses the raw signals instead; it is kept as a
/// switch for comparison runs and is not the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MuUpdate {
    #[default]
    Residual,
    Literal,
}

/// Mixture parameters: weights, per-component mean offsets and diagonal
/// variances over the signal axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        ensure_nonempty(weights.len(), "mixture")?;
        let g = weights.len();
        if means.len() != g || variances.len() != g {
            return Err(Error::DimensionMismatch(format!(
                "{} weights, {} means, {} variance rows",
                g,
                means.len(),
                variances.len()
            )));
        }
        ensure_nonempty(means[0].len(), "mixture mean")?;
        let p = means[0].len();
        let mut sum = 0.0;
        for (idx, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!("weight {idx} is {w}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        for gi in 0..g {
            if means[gi].len() != p || variances[gi].len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "component {gi} has mean length {} and variance length {}, expected {p}",
                    means[gi].len(),
                    variances[gi].len()
                )));
            }
            if means[gi].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("mean of component {gi}")));
            }
            for &v in &variances[gi] {
                if !v.is_finite() || v < VARIANCE_FLOOR {
                    return Err(Error::InvalidInput(format!(
                        "variance entry {v} of component {gi} below floor {VARIANCE_FLOOR}"
                    )));
                }
            }
        }
        Ok(Self { weights, means, variances })
    }

    /// Fresh mixture for a fit: uniform weights, zero means, and one variance
    /// scale per component drawn log-uniformly from [`INIT_VARIANCE_RANGE`]
    /// and broadcast across the signal axis.
    pub fn init_random<R: Rng>(g: usize, p: usize, rng: &mut R) -> Result<Self> {
        ensure_nonempty(g, "mixture")?;
        ensure_nonempty(p, "mixture mean")?;
        let weights = vec![1.0 / g as f64; g];
        let means = vec![vec![0.0; p]; g];
        let (lo, hi) = INIT_VARIANCE_RANGE;
        let variances = (0..g)
            .map(|_| {
                let u: f64 = rng.gen();
                let v = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
                vec![v.max(VARIANCE_FLOOR); p]
            })
            .collect();
        Self::new(weights, means, variances)
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, g: usize) -> &[f64] {
        &self.means[g]
    }

    pub fn variance(&self, g: usize) -> &[f64] {
        &self.variances[g]
    }
}

/// Posterior component responsibilities, one row per component, one column
/// per signal. Every column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    gamma: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn new(gamma: Vec<Vec<f64>>) -> Result<Self> {
        ensure_nonempty(gamma.len(), "responsibilities")?;
        ensure_nonempty(gamma[0].len(), "responsibility row")?;
        let n = gamma[0].len();
        for (g, row) in gamma.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "responsibility row {g} has length {}, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "responsibility row {g} has a negative or non-finite entry"
                )));
            }
        }
        for i in 0..n {
            let s: f64 = gamma.iter().map(|row| row[i]).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "responsibilities for signal {i} sum to {s}"
                )));
            }
        }
        Ok(Self { gamma })
    }

    pub fn g(&self) -> usize {
        self.gamma.len()
    }

    pub fn n(&self) -> usize {
        self.gamma[0].len()
    }

    pub fn get(&self, g: usize, i: usize) -> f64 {
        self.gamma[g][i]
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.gamma[g]
    }
}

/// Per-component, per-signal, per-entry solver weights `sqrt(gamma / sigma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    w: Vec<Vec<Vec<f64>>>,
}

impl WeightSet {
    pub fn new(w: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        ensure_nonempty(w.len(), "weight set")?;
        ensure_nonempty(w[0].len(), "weight set sample axis")?;
        let n = w[0].len();
        ensure_nonempty(w[0][0].len(), "weight vector")?;
        let p = w[0][0].len();
        for (g, per_g) in w.iter().enumerate() {
            if per_g.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "weight component {g} covers {} signals, expected {n}",
                    per_g.len()
                )));
            }
            for (i, wi) in per_g.iter().enumerate() {
                if wi.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "weight [{g}][{i}] has length {}, expected {p}",
                        wi.len()
                    )));
                }
                if wi.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "weight [{g}][{i}] has a negative or non-finite entry"
                    )));
                }
            }
        }
        Ok(Self { w })
    }

    pub fn g(&self) -> usize {
        self.w.len()
    }

    pub fn n(&self) -> usize {
        self.w[0].len()
    }

    pub fn p(&self) -> usize {
        self.w[0][0].len()
    }

    pub fn get(&self, g: usize, i: usize) -> &[f64] {
        &self.w[g][i]
    }
}

fn check_residual_shapes(x: &SignalSet, xrec: &SignalSet, params: &GmmParams) -> Result<()> {
    if x.n() != xrec.n() || x.p() != xrec.p() {
        return Err(Error::DimensionMismatch(format!(
            "signals are {}x{}, reconstructions are {}x{}",
            x.n(),
            x.p(),
            xrec.n(),
            xrec.p()
        )));
    }
    if params.p() != x.p() {
        return Err(Error::DimensionMismatch(format!(
            "mixture is over length {}, signals have length {}",
            params.p(),
            x.p()
        )));
    }
    Ok(())
}

/// Log of the diagonal normal density of the residual `x - xrec` under
/// component g, without the mixture weight.
fn component_log_density(
    x: &[f64],
    xrec: &[f64],
    mean: &[f64],
    variance: &[f64],
    log_norm: f64,
) -> f64 {
    let mut q = 0.0;
    for p in 0..x.len() {
        let d = x[p] - xrec[p] - mean[p];
        q += d * d / variance[p];
    }
    log_norm - 0.5 * q
}

fn log_normalizers(params: &GmmParams) -> Vec<f64> {
    (0..params.g())
        .map(|g| {
            -0.5 * params
                .variance(g)
                .iter()
                .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                .sum::<f64>()
        })
        .collect()
}

/// Posterior responsibilities of each component for each signal, computed in
/// the log domain with a max-shifted normalization so widely separated
/// densities cannot underflow to an all-zero column.
pub fn e_step(x: &SignalSet, xrec: &SignalSet, params: &GmmParams) -> Result<Responsibilities> {
    check_residual_shapes(x, xrec, params)?;
    let g = params.g();
    let log_norm = log_normalizers(params);
    let mut gamma = vec![vec![0.0; x.n()]; g];
    for i in 0..x.n() {
        let mut logs = Vec::with_capacity(g);
        for gi in 0..g {
            let lp = params.weights()[gi].ln()
                + component_log_density(
                    x.get(i),
                    xrec.get(i),
                    params.mean(gi),
                    params.variance(gi),
                    log_norm[gi],
                );
            logs.push(lp);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "all mixture components vanished for signal {i}"
            )));
        }
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = unnorm.iter().sum();
        for gi in 0..g {
            gamma[gi][i] = unnorm[gi] / s;
        }
    }
    Responsibilities::new(gamma)
}

/// Closed-form mixture update given responsibilities.
///
/// Components that received exactly zero total responsibility are dropped
/// with a warning; the returned index list maps surviving components back to
/// their rows in `gamma`. Weights are renormalized to sum to one exactly and
/// every variance entry is clamped to [`VARIANCE_FLOOR`].
pub fn m_step_mixture(
    x: &SignalSet,
    xrec: &SignalSet,
    gamma: &Responsibilities,
    mode: MuUpdate,
) -> Result<(GmmParams, Vec<usize>)> {
    if gamma.n() != x.n() {
        return Err(Error::DimensionMismatch(format!(
            "responsibilities cover {} signals, data has {}",
            gamma.n(),
            x.n()
        )));
    }
    if x.n() != xrec.n() || x.p() != xrec.p() {
        return Err(Error::DimensionMismatch("signals and reconstructions differ in shape".into()));
    }
    let n = x.n();
    let p = x.p();
    let mut kept = Vec::new();
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for g in 0..gamma.g() {
        let nk: f64 = gamma.row(g).iter().sum();
        if nk == 0.0 {
            warn!("mixture component {g} received no responsibility and was dropped");
            continue;
        }
        kept.push(g);
        let mut mu = vec![0.0; p];
        for i in 0..n {
            let w = gamma.get(g, i);
            if w == 0.0 {
                continue;
            }
            let xi = x.get(i);
            let ri = xrec.get(i);
            match mode {
                MuUpdate::Residual => {
                    for pp in 0..p {
                        mu[pp] += w * (xi[pp] - ri[pp]);
                    }
                }
                MuUpdate::Literal => {
                    for pp in 0..p {
                        mu[pp] += w * xi[pp];
                    }
                }
            }
        }
        for v in mu.iter_mut() {
            *v /= nk;
        }
        let mut var = vec![0.0; p];
        for i in 0..n {
            let w = gamma.get(g, i);
            if w == 0.0 {
                continue;
            }
            let xi = x.get(i);
            let ri = xrec.get(i);
            for pp in 0..p {
                let d = xi[pp] - ri[pp] - mu[pp];
                var[pp] += w * d * d;
            }
        }
        for v in var.iter_mut() {
            *v = (*v / nk).max(VARIANCE_FLOOR);
        }
        weights.push(nk / n as f64);
        means.push(mu);
        variances.push(var);
    }
    if kept.is_empty() {
        return Err(Error::NumericalFailure("every mixture component lost all responsibility".into()));
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok((GmmParams::new(weights, means, variances)?, kept))
}

/// Solver weights for the weighted sparse-coding step:
/// `w[g][i][p] = sqrt(gamma[g][i] / sigma2[g][p])`.
pub fn compute_weights(params: &GmmParams, gamma: &Responsibilities) -> Result<WeightSet> {
    if gamma.g() != params.g() {
        return Err(Error::DimensionMismatch(format!(
            "{} responsibility rows for {} components",
            gamma.g(),
            params.g()
        )));
    }
    let mut w = Vec::with_capacity(params.g());
    for g in 0..params.g() {
        let var = params.variance(g);
        let mut per_g = Vec::with_capacity(gamma.n());
        for i in 0..gamma.n() {
            let gi = gamma.get(g, i);
            per_g.push(var.iter().map(|v| (gi / v).sqrt()).collect());
        }
        w.push(per_g);
    }
    WeightSet::new(w)
}

/// Mixture log likelihood of the residuals plus the code log prior, dropping
/// the prior's additive constant:
/// `sum_i log sum_g pi_g N(x_i; xrec_i + mu_g, Sigma_g) - beta * ||Z||_1`.
pub fn log_posterior(
    x: &SignalSet,
    xrec: &SignalSet,
    params: &GmmParams,
    codes: &CodeSet,
    beta: f64,
) -> Result<f64> {
    check_residual_shapes(x, xrec, params)?;
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be finite and nonnegative, got {beta}")));
    }
    if codes.n() != x.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} code rows for {} signals",
            codes.n(),
            x.n()
        )));
    }
    let log_norm = log_normalizers(params);
    let mut total = 0.0;
    for i in 0..x.n() {
        let logs: Vec<f64> = (0..params.g())
            .map(|g| {
                params.weights()[g].ln()
                    + component_log_density(
                        x.get(i),
                        xrec.get(i),
                        params.mean(g),
                        params.variance(g),
                        log_norm[g],
                    )
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "mixture likelihood vanished for signal {i}"
            )));
        }
        total += m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    }
    Ok(total - beta * codes.l1())
}

/// Relative difference between two variance profiles:
/// `sum_p |a_p - b_p| / (a_p + b_p)`, optionally divided by P.
fn variance_difference(a: &[f64], b: &[f64], normalized: bool) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs() / (x + y)).sum();
    if normalized {
        s / a.len() as f64
    } else {
        s
    }
}

/// Merges the closest pair of components when their variance profiles differ
/// by less than `threshold`, at most one pair per call. The pair is combined
/// by weight-averaging means and variances with the pre-merge weights, and
/// the absorbed component's weight moves to the survivor, so the weight sum
/// is unchanged. Returns the merged pair as (kept, absorbed) row indices of
/// the input.
pub fn prune_merge(
    params: &GmmParams,
    threshold: f64,
    normalized: bool,
) -> Result<(GmmParams, Option<(usize, usize)>)> {
    if threshold < 0.0 || !threshold.is_finite() {
        return Err(Error::InvalidInput(format!(
            "merge threshold must be finite and nonnegative, got {threshold}"
        )));
    }
    let g = params.g();
    if g < 2 {
        return Ok((params.clone(), None));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for a in 0..g {
        for b in (a + 1)..g {
            let d = variance_difference(params.variance(a), params.variance(b), normalized);
            if best.map_or(true, |(bd, _, _)| d < bd) {
                best = Some((d, a, b));
            }
        }
    }
    let (d, a, b) = best.unwrap();
    if d >= threshold {
        return Ok((params.clone(), None));
    }
    let pa = params.weights()[a];
    let pb = params.weights()[b];
    let denom = pa + pb;
    let (ca, cb) = if denom > 0.0 { (pa / denom, pb / denom) } else { (0.5, 0.5) };
    let merged_mean: Vec<f64> = params
        .mean(a)
        .iter()
        .zip(params.mean(b))
        .map(|(x, y)| ca * x + cb * y)
        .collect();
    let merged_var: Vec<f64> = params
        .variance(a)
        .iter()
        .zip(params.variance(b))
        .map(|(x, y)| (ca * x + cb * y).max(VARIANCE_FLOOR))
        .collect();
    let mut weights = Vec::with_capacity(g - 1);
    let mut means = Vec::with_capacity(g - 1);
    let mut variances = Vec::with_capacity(g - 1);
    for gi in 0..g {
        if gi == b {
            continue;
        }
        if gi == a {
            weights.push(pa + pb);
            means.push(merged_mean.clone());
            variances.push(merged_var.clone());
        } else {
            weights.push(params.weights()[gi]);
            means.push(params.mean(gi).to_vec());
            variances.push(params.variance(gi).to_vec());
        }
    }
    Ok((GmmParams::new(weights, means, variances)?, Some((a, b))))
}
