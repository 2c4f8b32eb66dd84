//! The weighted sparse-coding step: filters and codes are refreshed jointly
//! by minimizing
//!
//! ```text
//! F(D, Z) = f(D, Z) + r(Z) + indicator(D feasible)
//! f(D, Z) = 0.5 * sum_i sum_g || w_gi . (x_i - xrec_i - mu_g) ||^2
//! r(Z)    = beta * sum_{i,k} ||z_ik||_1
//! ```
//!
//! where `.` is the elementwise product and `xrec_i` sums circular
//! convolutions of the filters with the code maps. Reconstructions travel
//! through the frequency domain; weights and offsets apply in the spatial
//! domain. Gradients come out in closed form: with
//! `u_i = sum_g w_gi . w_gi . (x_i - xrec_i - mu_g)`,
//!
//! ```text
//! df/dd_k = -crop(ifft(sum_i conj(fft(z_ik)) * fft(u_i)))
//! df/dz_ik = -ifft(conj(fft(pad(d_k))) * fft(u_i))
//! ```
//!
//! so one transform of each `u_i` serves both gradient blocks.
//!
//! The solver is an inertial proximal gradient method with a nonmonotone
//! acceptance rule: the extrapolated point is kept only if its objective
//! beats the worst of the last five accepted values, the step size starts
//! from a Barzilai-Borwein estimate, and a backtracking line search enforces
//! sufficient decrease against that same five-value watermark.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::WeightSet;
use crate::model::{CodeSet, Dictionary, SignalSet, BALL_TOL};
use crate::signal::{fft_raw, ifft_real_raw, pad_slice};
use crate::util::{ensure_finite, inf_norm, norm, soft};

/// Window length of the nonmonotone watermark.
const HISTORY_LEN: usize = 5;

/// A fixed weighted sparse-coding instance.
#[derive(Debug, Clone)]
pub struct WcscProblem {
    x: SignalSet,
    means: Vec<Vec<f64>>,
    weights: WeightSet,
    beta: f64,
    k: usize,
    m: usize,
}

impl WcscProblem {
    pub fn new(
        x: SignalSet,
        means: Vec<Vec<f64>>,
        weights: WeightSet,
        beta: f64,
        k: usize,
        m: usize,
    ) -> Result<Self> {
        if beta < 0.0 || !beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "beta must be finite and nonnegative, got {beta}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidInput("at least one filter is required".into()));
        }
        if m == 0 || m > x.p() {
            return Err(Error::DimensionMismatch(format!(
                "filter length {m} incompatible with signal length {}",
                x.p()
            )));
        }
        if weights.n() != x.n() || weights.p() != x.p() {
            return Err(Error::DimensionMismatch(format!(
                "weights cover {}x{} but signals are {}x{}",
                weights.n(),
                weights.p(),
                x.n(),
                x.p()
            )));
        }
        if means.len() != weights.g() {
            return Err(Error::DimensionMismatch(format!(
                "{} offset vectors for {} weight components",
                means.len(),
                weights.g()
            )));
        }
        for (g, mu) in means.iter().enumerate() {
            if mu.len() != x.p() {
                return Err(Error::DimensionMismatch(format!(
                    "offset {g} has length {}, expected {}",
                    mu.len(),
                    x.p()
                )));
            }
            ensure_finite(mu, &format!("offset {g}"))?;
        }
        Ok(Self { x, means, weights, beta, k, m })
    }

    /// The plain squared-error instance: one component, unit weights, zero
    /// offset. Minimizing it reproduces the unweighted objective exactly.
    pub fn unweighted(x: SignalSet, k: usize, m: usize, beta: f64) -> Result<Self> {
        let n = x.n();
        let p = x.p();
        let weights = WeightSet::new(vec![vec![vec![1.0; p]; n]])?;
        Self::new(x, vec![vec![0.0; p]], weights, beta, k, m)
    }

    pub fn x(&self) -> &SignalSet {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn p(&self) -> usize {
        self.x.p()
    }

    pub fn g(&self) -> usize {
        self.weights.g()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self, g: usize) -> &[f64] {
        &self.means[g]
    }

    pub fn weight(&self, g: usize, i: usize) -> &[f64] {
        self.weights.get(g, i)
    }

    pub fn max_weight(&self) -> f64 {
        let mut m = 0.0f64;
        for g in 0..self.g() {
            for i in 0..self.n() {
                m = m.max(inf_norm(self.weights.get(g, i)));
            }
        }
        m
    }

    pub(crate) fn check_point_shapes(&self, dict: &Dictionary, codes: &CodeSet) -> Result<()> {
        if dict.k() != self.k || dict.m() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "dictionary is {}x{}, problem expects {}x{}",
                dict.k(),
                dict.m(),
                self.k,
                self.m
            )));
        }
        if codes.n() != self.n() || codes.k() != self.k || codes.p() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "codes are {}x{}x{}, problem expects {}x{}x{}",
                codes.n(),
                codes.k(),
                codes.p(),
                self.n(),
                self.k,
                self.p()
            )));
        }
        Ok(())
    }
}

pub(crate) fn filter_spectra(filters: &[Vec<f64>], p: usize) -> Vec<Vec<Complex64>> {
    filters.iter().map(|d| fft_raw(&pad_slice(d, p))).collect()
}

/// Reconstruction of sample i in the spatial domain given filter spectra and
/// that sample's code maps.
fn reconstruct_sample(dhat: &[Vec<Complex64>], codes_i: &[Vec<f64>], p: usize) -> Vec<f64> {
    let mut xhat = vec![Complex64::new(0.0, 0.0); p];
    for (dh, z) in dhat.iter().zip(codes_i) {
        let zhat = fft_raw(z);
        for ((acc, a), b) in xhat.iter_mut().zip(dh).zip(&zhat) {
            *acc += a * b;
        }
    }
    ifft_real_raw(&xhat)
}

fn sample_loss(prob: &WcscProblem, xt: &[f64], i: usize) -> f64 {
    let xi = prob.x.get(i);
    let mut acc = 0.0;
    for g in 0..prob.g() {
        let mu = prob.mean(g);
        let w = prob.weight(g, i);
        for p in 0..xt.len() {
            let r = w[p] * (xi[p] - xt[p] - mu[p]);
            acc += r * r;
        }
    }
    acc
}

pub(crate) fn loss_raw(prob: &WcscProblem, filters: &[Vec<f64>], codes: &[Vec<Vec<f64>>]) -> f64 {
    let dhat = filter_spectra(filters, prob.p());
    let partials: Vec<f64> = (0..prob.n())
        .into_par_iter()
        .map(|i| {
            let xt = reconstruct_sample(&dhat, &codes[i], prob.p());
            sample_loss(prob, &xt, i)
        })
        .collect();
    // Summed in sample order so the result does not depend on thread count.
    0.5 * partials.iter().sum::<f64>()
}

fn l1_raw(codes: &[Vec<Vec<f64>>]) -> f64 {
    codes
        .iter()
        .map(|per| per.iter().map(|z| z.iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>())
        .sum()
}

fn feasible_raw(filters: &[Vec<f64>]) -> bool {
    filters.iter().all(|f| norm(f) <= 1.0 + BALL_TOL)
}

pub(crate) fn objective_raw(
    prob: &WcscProblem,
    filters: &[Vec<f64>],
    codes: &[Vec<Vec<f64>>],
) -> f64 {
    if !feasible_raw(filters) {
        return f64::INFINITY;
    }
    loss_raw(prob, filters, codes) + prob.beta * l1_raw(codes)
}

/// The smooth part of the objective.
pub fn weighted_loss(prob: &WcscProblem, dict: &Dictionary, codes: &CodeSet) -> Result<f64> {
    prob.check_point_shapes(dict, codes)?;
    Ok(loss_raw(prob, dict.filters(), codes.codes()))
}

/// Full objective value: smooth part plus `beta` times the code l1 norm,
/// with positive infinity for an infeasible dictionary. Never fails on a
/// shape-correct input.
pub fn weighted_objective(prob: &WcscProblem, dict: &Dictionary, codes: &CodeSet) -> Result<f64> {
    prob.check_point_shapes(dict, codes)?;
    Ok(objective_raw(prob, dict.filters(), codes.codes()))
}

fn residual_raw(prob: &WcscProblem, filters: &[Vec<f64>], codes: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let dhat = filter_spectra(filters, prob.p());
    (0..prob.n())
        .into_par_iter()
        .map(|i| {
            let xt = reconstruct_sample(&dhat, &codes[i], prob.p());
            let xi = prob.x.get(i);
            let mut u = vec![0.0; prob.p()];
            for g in 0..prob.g() {
                let mu = prob.mean(g);
                let w = prob.weight(g, i);
                for p in 0..u.len() {
                    u[p] += w[p] * w[p] * (xi[p] - xt[p] - mu[p]);
                }
            }
            u
        })
        .collect()
}

/// The doubly weighted residual `u_i = sum_g w_gi . w_gi . (x_i - xrec_i - mu_g)`
/// that both gradient blocks consume.
pub fn weighted_residual(
    prob: &WcscProblem,
    dict: &Dictionary,
    codes: &CodeSet,
) -> Result<Vec<Vec<f64>>> {
    prob.check_point_shapes(dict, codes)?;
    Ok(residual_raw(prob, dict.filters(), codes.codes()))
}

fn gradients_raw(
    prob: &WcscProblem,
    filters: &[Vec<f64>],
    codes: &[Vec<Vec<f64>>],
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let p = prob.p();
    let k = prob.k();
    let dhat = filter_spectra(filters, p);

    // Per-sample pass: one transform of u_i feeds the code gradients and the
    // per-sample contribution to every filter gradient.
    let per_sample: Vec<(Vec<Vec<f64>>, Vec<Vec<Complex64>>)> = (0..prob.n())
        .into_par_iter()
        .map(|i| {
            let zhat: Vec<Vec<Complex64>> = codes[i].iter().map(|z| fft_raw(z)).collect();
            let mut xhat = vec![Complex64::new(0.0, 0.0); p];
            for (dh, zh) in dhat.iter().zip(&zhat) {
                for ((acc, a), b) in xhat.iter_mut().zip(dh).zip(zh) {
                    *acc += a * b;
                }
            }
            let xt = ifft_real_raw(&xhat);
            let xi = prob.x.get(i);
            let mut u = vec![0.0; p];
            for g in 0..prob.g() {
                let mu = prob.mean(g);
                let w = prob.weight(g, i);
                for pp in 0..p {
                    u[pp] += w[pp] * w[pp] * (xi[pp] - xt[pp] - mu[pp]);
                }
            }
            let uhat = fft_raw(&u);
            let code_grads: Vec<Vec<f64>> = (0..k)
                .map(|kk| {
                    let spec: Vec<Complex64> =
                        dhat[kk].iter().zip(&uhat).map(|(d, uh)| d.conj() * uh).collect();
                    ifft_real_raw(&spec).iter().map(|v| -v).collect()
                })
                .collect();
            let dict_contrib: Vec<Vec<Complex64>> = (0..k)
                .map(|kk| zhat[kk].iter().zip(&uhat).map(|(z, uh)| z.conj() * uh).collect())
                .collect();
            (code_grads, dict_contrib)
        })
        .collect();

    let mut dict_accum = vec![vec![Complex64::new(0.0, 0.0); p]; k];
    let mut code_grads = Vec::with_capacity(prob.n());
    for (cg, contrib) in per_sample {
        code_grads.push(cg);
        for kk in 0..k {
            for (acc, c) in dict_accum[kk].iter_mut().zip(&contrib[kk]) {
                *acc += c;
            }
        }
    }
    let dict_grads: Vec<Vec<f64>> = dict_accum
        .into_iter()
        .map(|spec| {
            let full = ifft_real_raw(&spec);
            full[..prob.m()].iter().map(|v| -v).collect()
        })
        .collect();
    (dict_grads, code_grads)
}

/// Both gradient blocks of the smooth part, sharing one residual transform
/// per sample. Filter gradients are K x M, code gradients N x K x P.
pub fn gradients(
    prob: &WcscProblem,
    dict: &Dictionary,
    codes: &CodeSet,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
    prob.check_point_shapes(dict, codes)?;
    Ok(gradients_raw(prob, dict.filters(), codes.codes()))
}

/// Filter block of the gradient.
pub fn grad_filters(prob: &WcscProblem, dict: &Dictionary, codes: &CodeSet) -> Result<Vec<Vec<f64>>> {
    gradients(prob, dict, codes).map(|(d, _)| d)
}

/// Code block of the gradient.
pub fn grad_codes(
    prob: &WcscProblem,
    dict: &Dictionary,
    codes: &CodeSet,
) -> Result<Vec<Vec<Vec<f64>>>> {
    gradients(prob, dict, codes).map(|(_, z)| z)
}

/// Initial step-size policy of the line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Barzilai-Borwein estimate from the previous two gradient evaluations,
    /// falling back to `1 / max_weight^2` before two points exist.
    BarzilaiBorwein,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub initial_step: StepRule,
    /// Multiplicative backtracking factor in (0, 1).
    pub shrink: f64,
    pub max_backtracks: u32,
    /// Coefficient of the quadratic decrease demanded below the watermark.
    pub sufficient_decrease: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            initial_step: StepRule::BarzilaiBorwein,
            shrink: 0.5,
            max_backtracks: 30,
            sufficient_decrease: 1e-4,
        }
    }
}

impl LineSearchConfig {
    fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput(format!(
                "line-search shrink factor must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if self.sufficient_decrease < 0.0 || !self.sufficient_decrease.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sufficient-decrease constant must be finite and nonnegative, got {}",
                self.sufficient_decrease
            )));
        }
        if let StepRule::Fixed(s) = self.initial_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("fixed step must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// One accepted iterate of a solver run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct NiapgSolution {
    pub dict: Dictionary,
    pub codes: CodeSet,
    /// Objective trace including the (projected) initial point.
    pub trace: Vec<TracePoint>,
}

#[derive(Clone)]
struct Point {
    d: Vec<Vec<f64>>,
    z: Vec<Vec<Vec<f64>>>,
}

impl Point {
    fn extrapolate(cur: &Point, prev: &Point, w: f64) -> Point {
        let d = cur
            .d
            .iter()
            .zip(&prev.d)
            .map(|(c, p)| c.iter().zip(p).map(|(a, b)| a + w * (a - b)).collect())
            .collect();
        let z = cur
            .z
            .iter()
            .zip(&prev.z)
            .map(|(ci, pi)| {
                ci.iter()
                    .zip(pi)
                    .map(|(ck, pk)| ck.iter().zip(pk).map(|(a, b)| a + w * (a - b)).collect())
                    .collect()
            })
            .collect();
        Point { d, z }
    }

    /// Proximal step from this point: project filters, soft-threshold codes.
    fn prox_step(&self, grads: &(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>), eta: f64, beta: f64) -> Point {
        let d = self
            .d
            .iter()
            .zip(&grads.0)
            .map(|(dk, gk)| {
                let moved: Vec<f64> = dk.iter().zip(gk).map(|(a, g)| a - eta * g).collect();
                crate::model::project_unit_ball(&moved)
            })
            .collect();
        let thr = eta * beta;
        let z = self
            .z
            .iter()
            .zip(&grads.1)
            .map(|(zi, gi)| {
                zi.iter()
                    .zip(gi)
                    .map(|(zk, gk)| zk.iter().zip(gk).map(|(a, g)| soft(a - eta * g, thr)).collect())
                    .collect()
            })
            .collect();
        Point { d, z }
    }

    fn distance_sq(&self, other: &Point) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.d.iter().zip(&other.d) {
            for (x, y) in a.iter().zip(b) {
                let t = x - y;
                acc += t * t;
            }
        }
        for (ai, bi) in self.z.iter().zip(&other.z) {
            for (ak, bk) in ai.iter().zip(bi) {
                for (x, y) in ak.iter().zip(bk) {
                    let t = x - y;
                    acc += t * t;
                }
            }
        }
        acc
    }
}

fn pair_dot(
    (ad, az): (&Point, &Point),
    (bd, bz): (&(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>), &(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)),
) -> (f64, f64) {
    // Returns (<s, s>, <s, y>) for s = ad - az and y = bd - bz.
    let mut ss = 0.0;
    let mut sy = 0.0;
    for ((ca, pa), (cg, pg)) in ad.d.iter().zip(&az.d).zip(bd.0.iter().zip(&bz.0)) {
        for ((a, b), (ga, gb)) in ca.iter().zip(pa).zip(cg.iter().zip(pg)) {
            let s = a - b;
            ss += s * s;
            sy += s * (ga - gb);
        }
    }
    for ((ci, pi), (gi, hi)) in ad.z.iter().zip(&az.z).zip(bd.1.iter().zip(&bz.1)) {
        for ((ck, pk), (gk, hk)) in ci.iter().zip(pi).zip(gi.iter().zip(hi)) {
            for ((a, b), (ga, gb)) in ck.iter().zip(pk).zip(gk.iter().zip(hk)) {
                let s = a - b;
                ss += s * s;
                sy += s * (ga - gb);
            }
        }
    }
    (ss, sy)
}

/// Joint filter/code solve of the weighted problem.
///
/// The initial filters are projected onto the feasible set before the first
/// objective evaluation. Iterations stop when the relative objective change
/// drops below `tol` (strictly), so `tol = 0` runs all `max_iter` iterations,
/// and `max_iter = 0` returns the projected initial point. A NaN objective
/// aborts with a diagnostic carrying the iteration index.
pub fn niapg_solve(
    prob: &WcscProblem,
    init_dict: &Dictionary,
    init_codes: &CodeSet,
    ls: &LineSearchConfig,
    tol: f64,
    max_iter: usize,
) -> Result<NiapgSolution> {
    ls.validate()?;
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("tolerance must be finite and nonnegative, got {tol}")));
    }
    prob.check_point_shapes(init_dict, init_codes)?;
    let start = Instant::now();

    let cur_d: Vec<Vec<f64>> =
        init_dict.filters().iter().map(|f| crate::model::project_unit_ball(f)).collect();
    let mut cur = Point { d: cur_d, z: init_codes.codes().to_vec() };
    let mut prev = cur.clone();

    let mut f_cur = objective_raw(prob, &cur.d, &cur.z);
    if f_cur.is_nan() {
        return Err(Error::NumericalFailure("objective is NaN at the initial point".into()));
    }
    let mut history: Vec<f64> = vec![f_cur];
    let mut trace = vec![TracePoint { objective: f_cur, seconds: start.elapsed().as_secs_f64() }];

    let fallback_step = {
        let w = prob.max_weight();
        if w > 0.0 {
            1.0 / (w * w)
        } else {
            1.0
        }
    };
    let mut eta = match ls.initial_step {
        StepRule::BarzilaiBorwein => fallback_step,
        StepRule::Fixed(s) => s,
    };
    let mut bb_state: Option<(Point, (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>))> = None;

    for tau in 1..=max_iter {
        let w_ext = (tau as f64 - 1.0) / (tau as f64 + 2.0);
        let mut v = Point::extrapolate(&cur, &prev, w_ext);
        let watermark = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let f_v = objective_raw(prob, &v.d, &v.z);
        if f_v.is_nan() {
            return Err(Error::NumericalFailure(format!(
                "objective is NaN at the extrapolated point of iteration {tau}"
            )));
        }
        if f_v >= watermark {
            v = cur.clone();
        }
        let grads = gradients_raw(prob, &v.d, &v.z);

        let mut step = match ls.initial_step {
            StepRule::Fixed(s) => s,
            StepRule::BarzilaiBorwein => match &bb_state {
                None => eta,
                Some((pv, pg)) => {
                    let (ss, sy) = pair_dot((&v, pv), (&grads, pg));
                    if sy > 0.0 && ss.is_finite() && sy.is_finite() && ss > 0.0 {
                        (ss / sy).clamp(1e-20, 1e20)
                    } else {
                        eta
                    }
                }
            },
        };

        let mut accepted = None;
        let mut last_candidate = None;
        for bt in 0..=ls.max_backtracks {
            let cand = v.prox_step(&grads, step, prob.beta);
            let f_cand = objective_raw(prob, &cand.d, &cand.z);
            if f_cand.is_nan() {
                return Err(Error::NumericalFailure(format!(
                    "objective is NaN during the line search of iteration {tau}"
                )));
            }
            let dist = cand.distance_sq(&v);
            if f_cand <= watermark - ls.sufficient_decrease * dist {
                accepted = Some((cand, f_cand));
                break;
            }
            last_candidate = Some((cand, f_cand));
            if bt < ls.max_backtracks {
                step *= ls.shrink;
            }
        }

        let (next, f_next) = match accepted {
            Some(pair) => pair,
            None => {
                // Keep the smallest-step candidate as long as it respects the
                // nonmonotone bound; otherwise hold the iterate so the trace
                // can never rise above its starting value.
                let (cand, f_cand) = last_candidate.expect("at least one candidate was evaluated");
                if f_cand <= watermark {
                    log::debug!(
                        "line search exhausted {} backtracks at iteration {tau}; keeping the smallest-step candidate",
                        ls.max_backtracks
                    );
                    (cand, f_cand)
                } else {
                    log::warn!(
                        "line search failed at iteration {tau} (objective {f_cand:.6e} above watermark {watermark:.6e}); holding the current iterate"
                    );
                    (cur.clone(), f_cur)
                }
            }
        };

        prev = cur;
        cur = next;
        let f_prev = f_cur;
        f_cur = f_next;
        history.push(f_cur);
        if history.len() > HISTORY_LEN {
            history.remove(0);
        }
        trace.push(TracePoint { objective: f_cur, seconds: start.elapsed().as_secs_f64() });
        eta = step;
        bb_state = Some((v, grads));

        // The first iteration runs on the conservative fallback step, so its
        // tiny change says nothing about convergence; the check starts once a
        // curvature-informed step has been taken.
        if tau > 1 && (f_cur - f_prev).abs() < tol * f_prev.abs().max(1e-30) {
            break;
        }
    }

    Ok(NiapgSolution {
        dict: Dictionary::new(cur.d)?,
        codes: CodeSet::new(cur.z)?,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{csc_objective, project_unit_ball};
    use crate::signal::pad_slice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_circular(d: &[f64], z: &[f64], p: usize) -> Vec<f64> {
        let dp = pad_slice(d, p);
        let mut out = vec![0.0; p];
        for n in 0..p {
            for m in 0..p {
                out[n] += dp[m] * z[(n + p - m) % p];
            }
        }
        out
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        k: usize,
        m: usize,
        g: usize,
        beta: f64,
    ) -> (WcscProblem, Dictionary, CodeSet) {
        let x = SignalSet::new(
            (0..n).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        )
        .unwrap();
        let means =
            (0..g).map(|_| (0..p).map(|_| rng.gen_range(-0.1..0.1)).collect()).collect();
        let weights = WeightSet::new(
            (0..g)
                .map(|_| {
                    (0..n)
                        .map(|_| (0..p).map(|_| rng.gen_range(0.5..2.0)).collect())
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let prob = WcscProblem::new(x, means, weights, beta, k, m).unwrap();
        let dict = Dictionary::new(
            (0..k)
                .map(|_| {
                    let f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    project_unit_ball(&f)
                })
                .collect(),
        )
        .unwrap();
        let codes = CodeSet::new(
            (0..n)
                .map(|_| {
                    (0..k)
                        .map(|_| (0..p).map(|_| rng.gen_range(-0.5..0.5)).collect())
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        (prob, dict, codes)
    }

    /// Spatial-domain reference for the smooth loss.
    fn brute_loss(prob: &WcscProblem, dict: &Dictionary, codes: &CodeSet) -> f64 {
        let mut acc = 0.0;
        for i in 0..prob.n() {
            let mut xt = vec![0.0; prob.p()];
            for k in 0..prob.k() {
                let c = brute_circular(dict.get(k), codes.get(i, k), prob.p());
                for (a, b) in xt.iter_mut().zip(&c) {
                    *a += b;
                }
            }
            for g in 0..prob.g() {
                for p in 0..prob.p() {
                    let r = prob.weight(g, i)[p]
                        * (prob.x().get(i)[p] - xt[p] - prob.mean(g)[p]);
                    acc += r * r;
                }
            }
        }
        0.5 * acc
    }

    #[test]
    fn loss_matches_spatial_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (prob, dict, codes) = random_instance(&mut rng, 3, 12, 2, 4, 2, 0.1);
            let fast = weighted_loss(&prob, &dict, &codes).unwrap();
            let slow = brute_loss(&prob, &dict, &codes);
            assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
        }
    }

    #[test]
    fn unweighted_loss_reduces_to_plain_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (generic, dict, codes) = random_instance(&mut rng, 3, 16, 2, 5, 1, 0.0);
        let prob = WcscProblem::unweighted(generic.x().clone(), 2, 5, 0.0).unwrap();
        let loss = weighted_loss(&prob, &dict, &codes).unwrap();
        let plain = csc_objective(prob.x(), &dict, &codes, 0.0).unwrap();
        assert!((loss - plain).abs() <= 1e-10 * plain.abs().max(1.0));
    }

    #[test]
    fn residual_matches_direct_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (prob, dict, codes) = random_instance(&mut rng, 2, 10, 2, 3, 3, 0.1);
        let u = weighted_residual(&prob, &dict, &codes).unwrap();
        for i in 0..prob.n() {
            let mut xt = vec![0.0; prob.p()];
            for k in 0..prob.k() {
                let c = brute_circular(dict.get(k), codes.get(i, k), prob.p());
                for (a, b) in xt.iter_mut().zip(&c) {
                    *a += b;
                }
            }
            for p in 0..prob.p() {
                let mut expected = 0.0;
                for g in 0..prob.g() {
                    let w = prob.weight(g, i)[p];
                    expected += w * w * (prob.x().get(i)[p] - xt[p] - prob.mean(g)[p]);
                }
                assert!((u[i][p] - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_unit_weight_residual_is_plain_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (generic, dict, codes) = random_instance(&mut rng, 2, 8, 1, 3, 1, 0.0);
        let prob = WcscProblem::unweighted(generic.x().clone(), 1, 3, 0.0).unwrap();
        let u = weighted_residual(&prob, &dict, &codes).unwrap();
        let xrec = crate::model::reconstruct(&dict, &codes).unwrap();
        for i in 0..prob.n() {
            for p in 0..prob.p() {
                let expected = prob.x().get(i)[p] - xrec.get(i)[p];
                assert!((u[i][p] - expected).abs() <= 1e-10 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn identity_filter_code_gradient_is_negative_residual() {
        // With the unit-impulse filter the reconstruction equals the code,
        // so the code gradient of 0.5*||x - z||^2 must be -(x - z).
        let x = SignalSet::new(vec![vec![0.3, -0.8, 0.2, 0.9, 0.0, -0.1]]).unwrap();
        let prob = WcscProblem::unweighted(x.clone(), 1, 2, 0.0).unwrap();
        let dict = Dictionary::new(vec![vec![1.0, 0.0]]).unwrap();
        let codes =
            CodeSet::new(vec![vec![vec![0.5, 0.1, -0.2, 0.0, 0.4, 0.25]]]).unwrap();
        let gz = grad_codes(&prob, &dict, &codes).unwrap();
        for p in 0..6 {
            let expected = -(x.get(0)[p] - codes.get(0, 0)[p]);
            assert!((gz[0][0][p] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (prob, dict, codes) = random_instance(&mut rng, 2, 16, 2, 4, 2, 0.0);
        let (gd, gz) = gradients(&prob, &dict, &codes).unwrap();

        let h = 1e-5;
        let mut max_err = 0.0f64;
        let mut max_ref = 0.0f64;
        for k in 0..prob.k() {
            for m in 0..prob.m() {
                let mut plus = dict.filters().to_vec();
                let mut minus = dict.filters().to_vec();
                plus[k][m] += h;
                minus[k][m] -= h;
                let fd = (loss_raw(&prob, &plus, codes.codes())
                    - loss_raw(&prob, &minus, codes.codes()))
                    / (2.0 * h);
                max_err = max_err.max((fd - gd[k][m]).abs());
                max_ref = max_ref.max(fd.abs());
            }
        }
        for i in 0..prob.n() {
            for k in 0..prob.k() {
                for p in 0..prob.p() {
                    let mut plus = codes.codes().to_vec();
                    let mut minus = codes.codes().to_vec();
                    plus[i][k][p] += h;
                    minus[i][k][p] -= h;
                    let fd = (loss_raw(&prob, dict.filters(), &plus)
                        - loss_raw(&prob, dict.filters(), &minus))
                        / (2.0 * h);
                    max_err = max_err.max((fd - gz[i][k][p]).abs());
                    max_ref = max_ref.max(fd.abs());
                }
            }
        }
        assert!(
            max_err <= 1e-6 * max_ref.max(1e-12),
            "max abs error {max_err} against reference scale {max_ref}"
        );
    }

    #[test]
    fn scaling_all_weights_scales_loss_and_gradients_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (prob, dict, codes) = random_instance(&mut rng, 2, 12, 2, 4, 2, 0.0);
        let c = 2.0;
        let scaled_weights = WeightSet::new(
            (0..prob.g())
                .map(|g| {
                    (0..prob.n())
                        .map(|i| prob.weight(g, i).iter().map(|w| c * w).collect())
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let scaled = WcscProblem::new(
            prob.x().clone(),
            (0..prob.g()).map(|g| prob.mean(g).to_vec()).collect(),
            scaled_weights,
            prob.beta(),
            prob.k(),
            prob.m(),
        )
        .unwrap();
        let f1 = weighted_loss(&prob, &dict, &codes).unwrap();
        let f2 = weighted_loss(&scaled, &dict, &codes).unwrap();
        assert!((f2 - c * c * f1).abs() <= 1e-9 * f1.abs().max(1.0));
        let (gd1, gz1) = gradients(&prob, &dict, &codes).unwrap();
        let (gd2, gz2) = gradients(&scaled, &dict, &codes).unwrap();
        for k in 0..prob.k() {
            for m in 0..prob.m() {
                assert!((gd2[k][m] - c * c * gd1[k][m]).abs() <= 1e-9 * gd1[k][m].abs().max(1.0));
            }
        }
        for p in 0..prob.p() {
            assert!(
                (gz2[0][0][p] - c * c * gz1[0][0][p]).abs() <= 1e-9 * gz1[0][0][p].abs().max(1.0)
            );
        }
    }

    #[test]
    fn infeasible_dictionary_gets_infinite_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (prob, _, codes) = random_instance(&mut rng, 2, 8, 1, 3, 1, 0.1);
        let big = Dictionary::new(vec![vec![2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(weighted_objective(&prob, &big, &codes).unwrap(), f64::INFINITY);
    }

    #[test]
    fn solver_descends_and_ends_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (prob, dict, codes) = random_instance(&mut rng, 3, 24, 2, 5, 2, 0.05);
        let sol =
            niapg_solve(&prob, &dict, &codes, &LineSearchConfig::default(), 1e-8, 200).unwrap();
        let first = sol.trace.first().unwrap().objective;
        let last = sol.trace.last().unwrap().objective;
        assert!(last <= first);
        assert!(sol.dict.is_feasible());
        assert!(last.is_finite());
    }

    #[test]
    fn scalar_problem_reaches_a_stationary_point() {
        // One scalar signal: f(d, z) = 0.5 w^2 (x - d z - mu)^2 + beta |z|,
        // |d| <= 1. Check the fixed-point conditions of the proximal map.
        let x = SignalSet::new(vec![vec![0.8]]).unwrap();
        let weights = WeightSet::new(vec![vec![vec![2.0]]]).unwrap();
        let prob = WcscProblem::new(x, vec![vec![0.1]], weights, 0.05, 1, 1).unwrap();
        let dict = Dictionary::new(vec![vec![1.0]]).unwrap();
        let codes = CodeSet::new(vec![vec![vec![0.3]]]).unwrap();
        let sol =
            niapg_solve(&prob, &dict, &codes, &LineSearchConfig::default(), 1e-14, 500).unwrap();
        let (gd, gz) = gradients(&prob, &sol.dict, &sol.codes).unwrap();
        let d = sol.dict.get(0)[0];
        let z = sol.codes.get(0, 0)[0];
        let eta = 1e-3;
        let d_next = project_unit_ball(&[d - eta * gd[0][0]])[0];
        let z_next = soft(z - eta * gz[0][0][0], eta * prob.beta());
        assert!((d_next - d).abs() <= 1e-6 * (1.0 + d.abs()));
        assert!((z_next - z).abs() <= 1e-6 * (1.0 + z.abs()));
    }

    #[test]
    fn huge_penalty_zeroes_the_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (base, dict, codes) = random_instance(&mut rng, 2, 12, 2, 4, 1, 0.0);
        let prob = WcscProblem::new(
            base.x().clone(),
            vec![base.mean(0).to_vec()],
            WeightSet::new(
                vec![(0..2).map(|i| base.weight(0, i).to_vec()).collect::<Vec<_>>()],
            )
            .unwrap(),
            1e6,
            2,
            4,
        )
        .unwrap();
        let sol = niapg_solve(&prob, &dict, &codes, &LineSearchConfig::default(), 1e-10, 50).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert!(sol.codes.get(i, k).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_iterations_return_the_projected_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (prob, _, codes) = random_instance(&mut rng, 2, 8, 1, 3, 1, 0.1);
        let wild = Dictionary::new(vec![vec![3.0, 0.0, 4.0]]).unwrap();
        let sol = niapg_solve(&prob, &wild, &codes, &LineSearchConfig::default(), 1e-4, 0).unwrap();
        assert_eq!(sol.trace.len(), 1);
        assert!((norm(sol.dict.get(0)) - 1.0).abs() < 1e-12);
        assert_eq!(sol.codes, codes);
    }

    #[test]
    fn zero_tolerance_runs_every_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (prob, dict, codes) = random_instance(&mut rng, 2, 8, 1, 3, 1, 0.05);
        let sol = niapg_solve(&prob, &dict, &codes, &LineSearchConfig::default(), 0.0, 17).unwrap();
        assert_eq!(sol.trace.len(), 18);
    }

    #[test]
    fn identical_runs_produce_identical_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (prob, dict, codes) = random_instance(&mut rng, 3, 16, 2, 4, 2, 0.02);
        let ls = LineSearchConfig::default();
        let a = niapg_solve(&prob, &dict, &codes, &ls, 1e-8, 60).unwrap();
        let b = niapg_solve(&prob, &dict, &codes, &ls, 1e-8, 60).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert_eq!(x.objective, y.objective);
        }
        assert_eq!(a.dict, b.dict);
        assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn shape_and_parameter_errors_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (prob, dict, codes) = random_instance(&mut rng, 2, 8, 1, 3, 1, 0.1);
        let bad_dict = Dictionary::new(vec![vec![0.1; 4]]).unwrap();
        assert!(weighted_loss(&prob, &bad_dict, &codes).is_err());
        let bad_ls = LineSearchConfig { shrink: 1.5, ..Default::default() };
        assert!(niapg_solve(&prob, &dict, &codes, &bad_ls, 1e-4, 10).is_err());
        assert!(niapg_solve(&prob, &dict, &codes, &LineSearchConfig::default(), -1.0, 10).is_err());
    }
}
