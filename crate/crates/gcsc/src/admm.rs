//! Alternating-direction baselines. Both fitters alternate a code block and
//! a filter block; each block is solved by ADMM with per-frequency
//! closed-form row solves.
//!
//! The splitting introduces residual auxiliaries `e` (one per signal for the
//! absolute loss, one per signal and noise component for the weighted loss),
//! a unit-ball copy `v` of each filter, and a code copy `u` carrying the l1
//! penalty. Scaled duals follow each constraint. At frequency p the filter
//! rows solve
//!
//! ```text
//! D(p,:) = (sum_i zeta_i(p) conj(Z_i(p,:)) + V(p,:) - Theta(p,:)/rho)
//!          (c sum_i Z_i(p,:)^T conj(Z_i(p,:)) + I)^{-1}
//! ```
//!
//! and the code rows the analogous system with the roles of D and Z swapped,
//! where `zeta_i` sums the shifted residual targets over noise components and
//! `c` counts them. The matrices are rank-one plus identity per sample, so a
//! single sample inverts by the Sherman-Morrison identity; several samples
//! accumulate into a dense Hermitian system solved by elimination. Filters
//! come back to the spatial domain and are cropped to length M after every
//! row solve.
//!
//! The weighted solve tracks the best projected primal pair it has seen, so
//! its reported objective trace never increases even though raw ADMM
//! iterates may oscillate. The absolute-loss fitter returns its last iterate
//! and aborts if the objective grows tenfold over twenty outer rounds.

use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    project_unit_ball, random_unit_filters, CodeSet, Dictionary, SignalSet,
};
use crate::signal::{fft_raw, ifft_real_raw, pad_slice, PadCrop};
use crate::util::{norm, soft};
use crate::wcsc::{filter_spectra, objective_raw, TracePoint, WcscProblem};

/// Window and growth factor of the divergence check.
const DIVERGENCE_WINDOW: usize = 20;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    /// Penalty parameter of every augmented term.
    pub rho: f64,
    /// Relative objective-change tolerance of each inner ADMM run.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Relative objective-change tolerance of the outer block alternation.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { rho: 1.0, inner_tol: 1e-4, inner_max_iter: 100, outer_tol: 1e-4, outer_max_iter: 50 }
    }
}

impl AdmmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!("penalty must be positive, got {}", self.rho)));
        }
        for (name, t) in [("inner", self.inner_tol), ("outer", self.outer_tol)] {
            if t < 0.0 || !t.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} tolerance must be finite and nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Auxiliary and dual variables of one splitting. Fields a subproblem does
/// not use stay empty: the filter block carries (e, alpha, v, theta), a
/// per-sample code solve carries (e, alpha, u, lambda) with a single row.
#[derive(Debug, Clone)]
pub(crate) struct DualState {
    /// Residual auxiliaries, `[i][g][p]`.
    pub(crate) e: Vec<Vec<Vec<f64>>>,
    pub(crate) alpha: Vec<Vec<Vec<f64>>>,
    /// Ball copies of the filters, `[k][m]`.
    pub(crate) v: Vec<Vec<f64>>,
    pub(crate) theta: Vec<Vec<f64>>,
    /// Penalty copies of the codes, `[k][p]` (single sample).
    pub(crate) u: Vec<Vec<f64>>,
    pub(crate) lambda: Vec<Vec<f64>>,
}

/// Frequency-domain stacks kept consistent with the current spatial
/// iterates: filter spectra are refreshed after every crop, code spectra
/// after every code solve, and the dense per-frequency normal factors are
/// rebuilt when a filter block starts.
pub(crate) struct SpectraCache {
    /// `[k][p]`
    pub(crate) dhat: Vec<Vec<Complex64>>,
    /// `[i][k][p]`
    pub(crate) zhat: Vec<Vec<Vec<Complex64>>>,
    /// `[p][j][l]`, Hermitian; built only when more than one sample
    /// contributes to the filter solve.
    pub(crate) filter_normals: Option<Vec<Vec<Vec<Complex64>>>>,
}

/// Largest constraint violations observed at the end of the final inner
/// runs, together with the data scale they should be compared against.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeasibilityReport {
    pub e_residual: f64,
    pub u_residual: f64,
    pub v_residual: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct BcdSolution {
    pub dict: Dictionary,
    pub codes: CodeSet,
    /// Objective after the initial point and each outer round.
    pub trace: Vec<TracePoint>,
    /// Largest end-state constraint violations, for diagnostics.
    pub feasibility: FeasibilityReport,
}

/// `row * (I + c q q^H)^{-1}` for a length-K row, by the Sherman-Morrison
/// identity.
fn rank1_row_solve(row: &[Complex64], q: &[Complex64], c: f64) -> Vec<Complex64> {
    let qn: f64 = q.iter().map(|v| v.norm_sqr()).sum();
    let rq: Complex64 = row.iter().zip(q).map(|(r, z)| r * z).sum();
    let s = rq * (c / (1.0 + c * qn));
    row.iter().zip(q).map(|(r, z)| r - s * z.conj()).collect()
}

/// `row * A^{-1}` for Hermitian positive definite A, via Gaussian
/// elimination with partial pivoting on `A y = conj(row)`.
fn hermitian_row_solve(a: &[Vec<Complex64>], row: &[Complex64]) -> Vec<Complex64> {
    let k = row.len();
    let mut m: Vec<Vec<Complex64>> = a.to_vec();
    let mut b: Vec<Complex64> = row.iter().map(|v| v.conj()).collect();
    for col in 0..k {
        let mut pivot = col;
        let mut best = m[col][col].norm_sqr();
        for r in col + 1..k {
            let mag = m[r][col].norm_sqr();
            if mag > best {
                best = mag;
                pivot = r;
            }
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        let d = m[col][col];
        for r in col + 1..k {
            let factor = m[r][col] / d;
            for c in col..k {
                let sub = factor * m[col][c];
                m[r][c] -= sub;
            }
            let sub = factor * b[col];
            b[r] -= sub;
        }
    }
    for col in (0..k).rev() {
        let mut acc = b[col];
        for c in col + 1..k {
            acc -= m[col][c] * b[c];
        }
        b[col] = acc / m[col][col];
    }
    b.iter().map(|v| v.conj()).collect()
}

/// Elementwise solve of the weighted residual subproblem,
/// `argmin_e w^2 e^2 + rho (nu - e)^2`.
pub(crate) fn weighted_e(nu: f64, w: f64, rho: f64) -> f64 {
    rho * nu / (w * w + rho)
}

/// True once the latest value exceeds ten times the value from twenty
/// entries earlier.
pub(crate) fn grew_tenfold(history: &[f64]) -> bool {
    if history.len() <= DIVERGENCE_WINDOW {
        return false;
    }
    let old = history[history.len() - 1 - DIVERGENCE_WINDOW];
    history[history.len() - 1] > DIVERGENCE_FACTOR * old
}

fn recon_from_spectra(dhat: &[Vec<Complex64>], zhat_i: &[Vec<Complex64>]) -> Vec<f64> {
    let p = dhat[0].len();
    let mut xhat = vec![Complex64::new(0.0, 0.0); p];
    for (dh, zh) in dhat.iter().zip(zhat_i) {
        for ((acc, a), b) in xhat.iter_mut().zip(dh).zip(zh) {
            *acc += a * b;
        }
    }
    ifft_real_raw(&xhat)
}

/// The two data-fit terms the blocks can carry.
enum Loss<'a> {
    /// `0.5 sum_i ||x_i - xrec_i||_1`, handled by a soft-threshold e-update.
    Abs { x: &'a SignalSet, zero_mean: Vec<f64> },
    /// `0.5 sum_{i,g} ||w_gi . (x_i - xrec_i - mu_g)||^2`.
    Weighted { prob: &'a WcscProblem },
}

impl<'a> Loss<'a> {
    fn x(&self) -> &SignalSet {
        match self {
            Loss::Abs { x, .. } => x,
            Loss::Weighted { prob } => prob.x(),
        }
    }

    fn g(&self) -> usize {
        match self {
            Loss::Abs { .. } => 1,
            Loss::Weighted { prob } => prob.g(),
        }
    }

    fn mean(&self, g: usize) -> &[f64] {
        match self {
            Loss::Abs { zero_mean, .. } => zero_mean,
            Loss::Weighted { prob } => prob.mean(g),
        }
    }

    fn e_update(&self, i: usize, g: usize, nu: &[f64], rho: f64) -> Vec<f64> {
        match self {
            Loss::Abs { .. } => nu.iter().map(|&v| soft(v, 1.0 / rho)).collect(),
            Loss::Weighted { prob } => {
                let w = prob.weight(g, i);
                nu.iter().zip(w).map(|(&v, &wp)| weighted_e(v, wp, rho)).collect()
            }
        }
    }

    /// Data-fit contribution of sample i at reconstruction `xt`.
    fn sample_loss(&self, i: usize, xt: &[f64]) -> f64 {
        match self {
            Loss::Abs { x, .. } => {
                0.5 * x.get(i).iter().zip(xt).map(|(a, b)| (a - b).abs()).sum::<f64>()
            }
            Loss::Weighted { prob } => {
                let xi = prob.x().get(i);
                let mut acc = 0.0;
                for g in 0..prob.g() {
                    let w = prob.weight(g, i);
                    let mu = prob.mean(g);
                    for p in 0..xt.len() {
                        let r = w[p] * (xi[p] - xt[p] - mu[p]);
                        acc += r * r;
                    }
                }
                0.5 * acc
            }
        }
    }

    /// Scale of the normal matrices: how many residual copies the splitting
    /// keeps per sample.
    fn normal_factor(&self) -> f64 {
        self.g() as f64
    }

    /// Full objective at a projected-filter point.
    fn outer_objective(&self, filters: &[Vec<f64>], codes: &[Vec<Vec<f64>>], beta: f64) -> f64 {
        match self {
            Loss::Weighted { prob } => objective_raw(prob, filters, codes),
            Loss::Abs { .. } => {
                let dhat = filter_spectra(filters, self.x().p());
                let loss: f64 = (0..self.x().n())
                    .into_par_iter()
                    .map(|i| {
                        let zhat: Vec<Vec<Complex64>> =
                            codes[i].iter().map(|z| fft_raw(z)).collect();
                        let xt = recon_from_spectra(&dhat, &zhat);
                        self.sample_loss(i, &xt)
                    })
                    .collect::<Vec<_>>()
                    .iter()
                    .sum();
                let l1: f64 = codes
                    .iter()
                    .flat_map(|per| per.iter())
                    .map(|z| z.iter().map(|v| v.abs()).sum::<f64>())
                    .sum();
                loss + beta * l1
            }
        }
    }
}

struct FilterBlockOut {
    filters: Vec<Vec<f64>>,
    e_residual: f64,
    v_residual: f64,
}

/// One ADMM run of the filter subproblem at fixed codes.
fn filter_block(
    loss: &Loss,
    filters: &[Vec<f64>],
    codes: &[Vec<Vec<f64>>],
    cfg: &AdmmConfig,
) -> FilterBlockOut {
    let x = loss.x();
    let (n, p) = (x.n(), x.p());
    let k = filters.len();
    let m = filters[0].len();
    let g = loss.g();
    let rho = cfg.rho;
    let pc = PadCrop::new(m, p).expect("dimensions validated by the caller");

    let cache = {
        let zhat: Vec<Vec<Vec<Complex64>>> = (0..n)
            .into_par_iter()
            .map(|i| codes[i].iter().map(|z| fft_raw(z)).collect())
            .collect();
        let filter_normals = if n > 1 {
            let c = loss.normal_factor();
            let normals: Vec<Vec<Vec<Complex64>>> = (0..p)
                .into_par_iter()
                .map(|fp| {
                    let mut a = vec![vec![Complex64::new(0.0, 0.0); k]; k];
                    for zi in &zhat {
                        for j in 0..k {
                            for l in 0..k {
                                a[j][l] += zi[j][fp] * zi[l][fp].conj();
                            }
                        }
                    }
                    for (j, row) in a.iter_mut().enumerate() {
                        for (l, entry) in row.iter_mut().enumerate() {
                            *entry *= c;
                            if j == l {
                                *entry += 1.0;
                            }
                        }
                    }
                    a
                })
                .collect();
            Some(normals)
        } else {
            None
        };
        SpectraCache { dhat: filter_spectra(filters, p), zhat, filter_normals }
    };

    let mut xts: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| recon_from_spectra(&cache.dhat, &cache.zhat[i])).collect();
    let mut state = DualState {
        e: (0..n)
            .map(|i| {
                (0..g)
                    .map(|gg| {
                        let mu = loss.mean(gg);
                        (0..p).map(|pp| x.get(i)[pp] - xts[i][pp] - mu[pp]).collect()
                    })
                    .collect()
            })
            .collect(),
        alpha: vec![vec![vec![0.0; p]; g]; n],
        v: filters.iter().map(|f| project_unit_ball(f)).collect(),
        theta: vec![vec![0.0; m]; k],
        u: Vec::new(),
        lambda: Vec::new(),
    };

    let mut d: Vec<Vec<f64>> = filters.to_vec();
    let mut prev_monitor = f64::INFINITY;
    for _ in 0..cfg.inner_max_iter {
        let vhat: Vec<Vec<Complex64>> =
            state.v.iter().map(|vk| fft_raw(&pad_slice(vk, p))).collect();
        let thetahat: Vec<Vec<Complex64>> =
            state.theta.iter().map(|tk| fft_raw(&pad_slice(tk, p))).collect();
        let zetahat: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut zeta = vec![0.0; p];
                for gg in 0..g {
                    let mu = loss.mean(gg);
                    for pp in 0..p {
                        zeta[pp] += x.get(i)[pp]
                            - mu[pp]
                            - state.e[i][gg][pp]
                            - state.alpha[i][gg][pp] / rho;
                    }
                }
                fft_raw(&zeta)
            })
            .collect();

        let rows: Vec<Vec<Complex64>> = (0..p)
            .into_par_iter()
            .map(|fp| {
                let mut num = vec![Complex64::new(0.0, 0.0); k];
                for i in 0..n {
                    let zi = &cache.zhat[i];
                    let zf = zetahat[i][fp];
                    for kk in 0..k {
                        num[kk] += zf * zi[kk][fp].conj();
                    }
                }
                for kk in 0..k {
                    num[kk] += vhat[kk][fp] - thetahat[kk][fp] / rho;
                }
                match &cache.filter_normals {
                    Some(normals) => hermitian_row_solve(&normals[fp], &num),
                    None => {
                        let q: Vec<Complex64> = (0..k).map(|kk| cache.zhat[0][kk][fp]).collect();
                        rank1_row_solve(&num, &q, loss.normal_factor())
                    }
                }
            })
            .collect();
        for kk in 0..k {
            let spec: Vec<Complex64> = (0..p).map(|fp| rows[fp][kk]).collect();
            // Transform length equals the plan length, so the crop cannot fail.
            d[kk] = pc.crop(&ifft_real_raw(&spec)).expect("length-P transform output");
        }
        let dhat = filter_spectra(&d, p);

        xts = (0..n).into_par_iter().map(|i| recon_from_spectra(&dhat, &cache.zhat[i])).collect();
        let monitor: f64 = (0..n).map(|i| loss.sample_loss(i, &xts[i])).sum();

        state
            .e
            .par_iter_mut()
            .zip(state.alpha.par_iter_mut())
            .zip(xts.par_iter())
            .enumerate()
            .for_each(|(i, ((ei, ai), xt))| {
                for gg in 0..g {
                    let mu = loss.mean(gg);
                    let resid: Vec<f64> =
                        (0..p).map(|pp| x.get(i)[pp] - xt[pp] - mu[pp]).collect();
                    let nu: Vec<f64> =
                        (0..p).map(|pp| resid[pp] - ai[gg][pp] / rho).collect();
                    ei[gg] = loss.e_update(i, gg, &nu, rho);
                    for pp in 0..p {
                        ai[gg][pp] += rho * (ei[gg][pp] - resid[pp]);
                    }
                }
            });

        for kk in 0..k {
            let t: Vec<f64> =
                d[kk].iter().zip(&state.theta[kk]).map(|(a, b)| a + b / rho).collect();
            let scale = norm(&t).max(1.0);
            state.v[kk] = t.iter().map(|v| v / scale).collect();
            for mm in 0..m {
                state.theta[kk][mm] += rho * (d[kk][mm] - state.v[kk][mm]);
            }
        }

        if (monitor - prev_monitor).abs() < cfg.inner_tol * prev_monitor.abs().max(1e-30) {
            break;
        }
        prev_monitor = monitor;
    }

    let mut e_residual = 0.0f64;
    for i in 0..n {
        for gg in 0..g {
            let mu = loss.mean(gg);
            let mut acc = 0.0;
            for pp in 0..p {
                let r = state.e[i][gg][pp] - (x.get(i)[pp] - xts[i][pp] - mu[pp]);
                acc += r * r;
            }
            e_residual = e_residual.max(acc.sqrt());
        }
    }
    let v_residual = (0..k)
        .map(|kk| {
            let mut acc = 0.0;
            for mm in 0..m {
                let r = d[kk][mm] - state.v[kk][mm];
                acc += r * r;
            }
            acc.sqrt()
        })
        .fold(0.0f64, f64::max);

    FilterBlockOut { filters: d, e_residual, v_residual }
}

struct CodeSampleOut {
    z: Vec<Vec<f64>>,
    e_residual: f64,
    u_residual: f64,
}

/// One ADMM run of the code subproblem for a single sample at fixed filters.
fn code_sample(
    loss: &Loss,
    i: usize,
    dhat: &[Vec<Complex64>],
    z_init: &[Vec<f64>],
    beta: f64,
    cfg: &AdmmConfig,
) -> CodeSampleOut {
    let x = loss.x();
    let p = x.p();
    let k = dhat.len();
    let g = loss.g();
    let rho = cfg.rho;

    let mut z: Vec<Vec<f64>> = z_init.to_vec();
    let zhat0: Vec<Vec<Complex64>> = z.iter().map(|zk| fft_raw(zk)).collect();
    let mut xt = recon_from_spectra(dhat, &zhat0);
    let mut state = DualState {
        e: vec![(0..g)
            .map(|gg| {
                let mu = loss.mean(gg);
                (0..p).map(|pp| x.get(i)[pp] - xt[pp] - mu[pp]).collect()
            })
            .collect()],
        alpha: vec![vec![vec![0.0; p]; g]],
        v: Vec::new(),
        theta: Vec::new(),
        u: z.clone(),
        lambda: vec![vec![0.0; p]; k],
    };

    let mut prev_monitor = f64::INFINITY;
    for _ in 0..cfg.inner_max_iter {
        let uhat: Vec<Vec<Complex64>> = state.u.iter().map(|uk| fft_raw(uk)).collect();
        let lambdahat: Vec<Vec<Complex64>> =
            state.lambda.iter().map(|lk| fft_raw(lk)).collect();
        let mut zeta = vec![0.0; p];
        for gg in 0..g {
            let mu = loss.mean(gg);
            for pp in 0..p {
                zeta[pp] +=
                    x.get(i)[pp] - mu[pp] - state.e[0][gg][pp] - state.alpha[0][gg][pp] / rho;
            }
        }
        let zetahat = fft_raw(&zeta);

        let mut zhat = vec![vec![Complex64::new(0.0, 0.0); p]; k];
        for fp in 0..p {
            let q: Vec<Complex64> = (0..k).map(|kk| dhat[kk][fp]).collect();
            let mut num = vec![Complex64::new(0.0, 0.0); k];
            for kk in 0..k {
                num[kk] = zetahat[fp] * dhat[kk][fp].conj() + uhat[kk][fp]
                    - lambdahat[kk][fp] / rho;
            }
            let row = rank1_row_solve(&num, &q, loss.normal_factor());
            for kk in 0..k {
                zhat[kk][fp] = row[kk];
            }
        }
        for kk in 0..k {
            z[kk] = ifft_real_raw(&zhat[kk]);
        }
        let mut xhat = vec![Complex64::new(0.0, 0.0); p];
        for kk in 0..k {
            for fp in 0..p {
                xhat[fp] += dhat[kk][fp] * zhat[kk][fp];
            }
        }
        xt = ifft_real_raw(&xhat);
        let monitor = loss.sample_loss(i, &xt)
            + beta * z.iter().map(|zk| zk.iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>();

        for gg in 0..g {
            let mu = loss.mean(gg);
            let resid: Vec<f64> = (0..p).map(|pp| x.get(i)[pp] - xt[pp] - mu[pp]).collect();
            let nu: Vec<f64> = (0..p).map(|pp| resid[pp] - state.alpha[0][gg][pp] / rho).collect();
            state.e[0][gg] = loss.e_update(i, gg, &nu, rho);
            for pp in 0..p {
                state.alpha[0][gg][pp] += rho * (state.e[0][gg][pp] - resid[pp]);
            }
        }
        for kk in 0..k {
            for pp in 0..p {
                let psi = z[kk][pp] + state.lambda[kk][pp] / rho;
                state.u[kk][pp] = soft(psi, beta / rho);
                state.lambda[kk][pp] += rho * (z[kk][pp] - state.u[kk][pp]);
            }
        }

        if (monitor - prev_monitor).abs() < cfg.inner_tol * prev_monitor.abs().max(1e-30) {
            break;
        }
        prev_monitor = monitor;
    }

    let mut e_residual = 0.0f64;
    for gg in 0..g {
        let mu = loss.mean(gg);
        let mut acc = 0.0;
        for pp in 0..p {
            let r = state.e[0][gg][pp] - (x.get(i)[pp] - xt[pp] - mu[pp]);
            acc += r * r;
        }
        e_residual = e_residual.max(acc.sqrt());
    }
    let u_residual = (0..k)
        .map(|kk| {
            let mut acc = 0.0;
            for pp in 0..p {
                let r = z[kk][pp] - state.u[kk][pp];
                acc += r * r;
            }
            acc.sqrt()
        })
        .fold(0.0f64, f64::max);

    CodeSampleOut { z, e_residual, u_residual }
}

struct DriveOut {
    filters: Vec<Vec<f64>>,
    codes: Vec<Vec<Vec<f64>>>,
    feasibility: FeasibilityReport,
}

/// Outer block alternation shared by every fitter: codes first, then
/// filters, with the objective evaluated at the projected filters after each
/// round. With `best_track` the reported trace and result follow the best
/// projected pair seen so far; otherwise the last iterate is kept.
fn bcd_drive(
    loss: &Loss,
    beta: f64,
    init_filters: Vec<Vec<f64>>,
    init_codes: Vec<Vec<Vec<f64>>>,
    cfg: &AdmmConfig,
    best_track: bool,
    trace: &mut Vec<TracePoint>,
) -> Result<DriveOut> {
    trace.clear();
    let start = Instant::now();
    let x = loss.x();
    let p = x.p();
    let scale = x.signals().iter().map(|s| s.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    let scale = scale.sqrt().max(1.0);

    let mut d = init_filters;
    let mut z = init_codes;
    let projected: Vec<Vec<f64>> = d.iter().map(|f| project_unit_ball(f)).collect();
    let mut best_f = loss.outer_objective(&projected, &z, beta);
    if best_f.is_nan() {
        return Err(Error::NumericalFailure("objective is NaN at the initial point".into()));
    }
    let mut best_pair = (projected, z.clone());
    let mut raw_hist = vec![best_f];
    trace.push(TracePoint { objective: best_f, seconds: start.elapsed().as_secs_f64() });
    let mut last_pair = best_pair.clone();
    let mut feas = FeasibilityReport { scale, ..Default::default() };

    for round in 1..=cfg.outer_max_iter {
        let dhat = filter_spectra(&d, p);
        let sample_outs: Vec<CodeSampleOut> = (0..x.n())
            .into_par_iter()
            .map(|i| code_sample(loss, i, &dhat, &z[i], beta, cfg))
            .collect();
        let mut e_res = 0.0f64;
        let mut u_res = 0.0f64;
        z = sample_outs
            .into_iter()
            .map(|out| {
                e_res = e_res.max(out.e_residual);
                u_res = u_res.max(out.u_residual);
                out.z
            })
            .collect();

        let fout = filter_block(loss, &d, &z, cfg);
        d = fout.filters;
        feas = FeasibilityReport {
            e_residual: e_res.max(fout.e_residual),
            u_residual: u_res,
            v_residual: fout.v_residual,
            scale,
        };

        let projected: Vec<Vec<f64>> = d.iter().map(|f| project_unit_ball(f)).collect();
        let f = loss.outer_objective(&projected, &z, beta);
        if f.is_nan() {
            return Err(Error::NumericalFailure(format!(
                "objective is NaN after outer round {round}"
            )));
        }
        raw_hist.push(f);
        if f < best_f {
            best_f = f;
            best_pair = (projected.clone(), z.clone());
        }
        last_pair = (projected, z.clone());
        trace.push(TracePoint {
            objective: if best_track { best_f } else { f },
            seconds: start.elapsed().as_secs_f64(),
        });

        if grew_tenfold(&raw_hist) {
            return Err(Error::NumericalFailure(format!(
                "objective grew more than tenfold over {DIVERGENCE_WINDOW} outer rounds \
                 (round {round}: {f:.6e})"
            )));
        }
        let prev = raw_hist[raw_hist.len() - 2];
        if (f - prev).abs() < cfg.outer_tol * prev.abs().max(1e-30) {
            break;
        }
    }

    let (filters, codes) =
        if best_track { (best_pair.0, best_pair.1) } else { (last_pair.0, last_pair.1) };
    log::debug!(
        "bcd drive done: constraint residuals e {:.3e} u {:.3e} v {:.3e} at data scale {:.3e}",
        feas.e_residual,
        feas.u_residual,
        feas.v_residual,
        feas.scale
    );
    Ok(DriveOut { filters, codes, feasibility: feas })
}

/// Weighted solve by block alternation, from a caller-supplied start. The
/// reported pair is the best projected iterate, so the final objective is
/// never worse than the starting one.
pub fn wcsc_bcd_solve(
    prob: &WcscProblem,
    init_dict: &Dictionary,
    init_codes: &CodeSet,
    cfg: &AdmmConfig,
) -> Result<BcdSolution> {
    let mut trace = Vec::new();
    wcsc_bcd_solve_into(prob, init_dict, init_codes, cfg, &mut trace)
}

/// Like [`wcsc_bcd_solve`], but records into a caller-held trace, so an
/// aborted run still leaves the rounds that completed before the failure.
pub fn wcsc_bcd_solve_into(
    prob: &WcscProblem,
    init_dict: &Dictionary,
    init_codes: &CodeSet,
    cfg: &AdmmConfig,
    trace: &mut Vec<TracePoint>,
) -> Result<BcdSolution> {
    cfg.validate()?;
    prob.check_point_shapes(init_dict, init_codes)?;
    let loss = Loss::Weighted { prob };
    let out = bcd_drive(
        &loss,
        prob.beta(),
        init_dict.filters().to_vec(),
        init_codes.codes().to_vec(),
        cfg,
        true,
        trace,
    )?;
    Ok(BcdSolution {
        dict: Dictionary::new(out.filters)?,
        codes: CodeSet::new(out.codes)?,
        trace: trace.clone(),
        feasibility: out.feasibility,
    })
}

fn validate_fit_args(x: &SignalSet, k: usize, m: usize, beta: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("at least one filter is required".into()));
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    PadCrop::new(m, x.p()).map(|_| ())
}

/// Fit under the absolute loss, from seeded random unit filters and zero
/// codes. Returns the last iterate.
pub fn cscl1_fit(
    x: &SignalSet,
    k: usize,
    m: usize,
    beta: f64,
    cfg: &AdmmConfig,
    seed: u64,
) -> Result<BcdSolution> {
    let mut trace = Vec::new();
    cscl1_fit_into(x, k, m, beta, cfg, seed, &mut trace)
}

/// Like [`cscl1_fit`], with the trace surviving an aborted run.
pub fn cscl1_fit_into(
    x: &SignalSet,
    k: usize,
    m: usize,
    beta: f64,
    cfg: &AdmmConfig,
    seed: u64,
    trace: &mut Vec<TracePoint>,
) -> Result<BcdSolution> {
    cfg.validate()?;
    validate_fit_args(x, k, m, beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filters = random_unit_filters(k, m, &mut rng);
    let codes = vec![vec![vec![0.0; x.p()]; k]; x.n()];
    let loss = Loss::Abs { x, zero_mean: vec![0.0; x.p()] };
    let out = bcd_drive(&loss, beta, filters, codes, cfg, false, trace)?;
    Ok(BcdSolution {
        dict: Dictionary::new(out.filters)?,
        codes: CodeSet::new(out.codes)?,
        trace: trace.clone(),
        feasibility: out.feasibility,
    })
}

/// Fit under the plain squared loss: the weighted solve with one component,
/// unit weights and zero offset, from the same seeded initialization as
/// `cscl1_fit`.
pub fn cscl2_fit(
    x: &SignalSet,
    k: usize,
    m: usize,
    beta: f64,
    cfg: &AdmmConfig,
    seed: u64,
) -> Result<BcdSolution> {
    let mut trace = Vec::new();
    cscl2_fit_into(x, k, m, beta, cfg, seed, &mut trace)
}

/// Like [`cscl2_fit`], with the trace surviving an aborted run.
pub fn cscl2_fit_into(
    x: &SignalSet,
    k: usize,
    m: usize,
    beta: f64,
    cfg: &AdmmConfig,
    seed: u64,
    trace: &mut Vec<TracePoint>,
) -> Result<BcdSolution> {
    cfg.validate()?;
    validate_fit_args(x, k, m, beta)?;
    let prob = WcscProblem::unweighted(x.clone(), k, m, beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = Dictionary::new(random_unit_filters(k, m, &mut rng))?;
    let codes = CodeSet::zeros(x.n(), k, x.p());
    wcsc_bcd_solve_into(&prob, &dict, &codes, cfg, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::WeightSet;
    use crate::wcsc::{niapg_solve, weighted_objective, LineSearchConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn weighted_e_update_matches_hand_values() {
        // rho = 1, w^2 = 3, nu = 8 -> 8 / 4.
        assert!((weighted_e(8.0, 3.0f64.sqrt(), 1.0) - 2.0).abs() < 1e-12);
        // rho = 1, w^2 = 4, nu = 10 -> exact in binary.
        assert_eq!(weighted_e(10.0, 2.0, 1.0), 2.0);
        // Zero weight passes nu through.
        assert_eq!(weighted_e(8.0, 0.0, 1.0), 8.0);
        assert_eq!(weighted_e(-2.5, 0.0, 3.0), -2.5);
    }

    #[test]
    fn code_copy_update_is_plain_soft_threshold() {
        // rho = 2, beta = 1: psi = 0.75 + 0.25 = 1, threshold 0.5.
        let psi = 0.75 + 0.5 / 2.0;
        assert_eq!(soft(psi, 1.0 / 2.0), 0.5);
    }

    #[test]
    fn scalar_filter_row_solve_matches_hand_algebra() {
        // K = 1, one sample: D(p) = (eta conj(z) + v - theta/rho) / (|z|^2 + 1).
        let eta = cx(2.0, 1.0);
        let z = cx(1.0, -2.0);
        let v = cx(0.5, 0.0);
        let theta = cx(0.0, 0.3);
        let rho = 2.0;
        let num = eta * z.conj() + v - theta / rho;
        let hand = num / (z.norm_sqr() + 1.0);
        let got = rank1_row_solve(&[num], &[z], 1.0);
        assert!((got[0] - hand).norm() < 1e-12);
    }

    #[test]
    fn rank1_solve_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &c in &[1.0, 3.0] {
            for _ in 0..20 {
                let k = 4;
                let row: Vec<Complex64> =
                    (0..k).map(|_| cx(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                let q: Vec<Complex64> =
                    (0..k).map(|_| cx(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                let mut a = vec![vec![Complex64::new(0.0, 0.0); k]; k];
                for j in 0..k {
                    for l in 0..k {
                        a[j][l] = q[j] * q[l].conj() * c;
                        if j == l {
                            a[j][l] += 1.0;
                        }
                    }
                }
                let fast = rank1_row_solve(&row, &q, c);
                let dense = hermitian_row_solve(&a, &row);
                for (f, d) in fast.iter().zip(&dense) {
                    assert!((f - d).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn dense_solve_recovers_planted_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let k = 5;
        // A = B B^H + I is Hermitian positive definite.
        let b: Vec<Vec<Complex64>> = (0..k)
            .map(|_| {
                (0..k).map(|_| cx(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
            })
            .collect();
        let mut a = vec![vec![Complex64::new(0.0, 0.0); k]; k];
        for j in 0..k {
            for l in 0..k {
                for t in 0..k {
                    a[j][l] += b[j][t] * b[l][t].conj();
                }
                if j == l {
                    a[j][l] += 1.0;
                }
            }
        }
        let r_true: Vec<Complex64> =
            (0..k).map(|_| cx(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        // num = r_true * A.
        let num: Vec<Complex64> = (0..k)
            .map(|l| (0..k).map(|j| r_true[j] * a[j][l]).sum())
            .collect();
        let got = hermitian_row_solve(&a, &num);
        for (g, t) in got.iter().zip(&r_true) {
            assert!((g - t).norm() < 1e-10);
        }
    }

    #[test]
    fn divergence_detector_uses_a_twenty_round_window() {
        let flat = vec![1.0; 21];
        assert!(!grew_tenfold(&flat));
        let mut grown = vec![1.0; 21];
        grown[20] = 10.5;
        assert!(grew_tenfold(&grown));
        let mut mild = vec![1.0; 21];
        mild[20] = 9.9;
        assert!(!grew_tenfold(&mild));
        // Short histories never trigger no matter how fast they grow.
        assert!(!grew_tenfold(&[1.0, 100.0]));
    }

    #[test]
    fn zero_signals_fit_to_zero_codes() {
        let x = SignalSet::new(vec![vec![0.0; 8]; 2]).unwrap();
        let l1 = cscl1_fit(&x, 1, 3, 0.1, &AdmmConfig::default(), 7).unwrap();
        for i in 0..2 {
            assert!(l1.codes.get(i, 0).iter().all(|&v| v == 0.0));
        }
        assert_eq!(l1.trace.last().unwrap().objective, 0.0);

        let l2 = cscl2_fit(&x, 1, 3, 0.1, &AdmmConfig::default(), 7).unwrap();
        for i in 0..2 {
            assert!(l2.codes.get(i, 0).iter().all(|&v| v == 0.0));
        }
        assert_eq!(l2.trace.last().unwrap().objective, 0.0);
    }

    fn planted_signals(rng: &mut ChaCha8Rng, n: usize, p: usize, m: usize) -> SignalSet {
        let filter: Vec<f64> = {
            let f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nn = norm(&f);
            f.iter().map(|v| v / nn).collect()
        };
        let data = (0..n)
            .map(|_| {
                let mut s = vec![0.0; p];
                for _ in 0..3 {
                    let pos = rng.gen_range(0..p - m);
                    let amp = rng.gen_range(0.5..1.0);
                    for (j, &fv) in filter.iter().enumerate() {
                        s[pos + j] += amp * fv;
                    }
                }
                for v in s.iter_mut() {
                    *v += 0.01 * rng.gen_range(-1.0..1.0);
                }
                s
            })
            .collect();
        SignalSet::new(data).unwrap()
    }

    #[test]
    fn absolute_loss_fit_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = planted_signals(&mut rng, 3, 24, 4);
        let sol = cscl1_fit(&x, 1, 4, 0.05, &AdmmConfig::default(), 11).unwrap();
        let first = sol.trace.first().unwrap().objective;
        let last = sol.trace.last().unwrap().objective;
        assert!(last <= first + 1e-8 * first.max(1.0), "{last} vs {first}");
        assert!(sol.dict.is_feasible());
    }

    fn random_weighted_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        k: usize,
        m: usize,
        g: usize,
        beta: f64,
    ) -> (WcscProblem, Dictionary, CodeSet) {
        let x = planted_signals(rng, n, p, m);
        let means =
            (0..g).map(|_| (0..p).map(|_| rng.gen_range(-0.05..0.05)).collect()).collect();
        let weights = WeightSet::new(
            (0..g)
                .map(|_| {
                    (0..n).map(|_| (0..p).map(|_| rng.gen_range(0.5..2.0)).collect()).collect()
                })
                .collect(),
        )
        .unwrap();
        let prob = WcscProblem::new(x, means, weights, beta, k, m).unwrap();
        let dict = Dictionary::new(random_unit_filters(k, m, rng)).unwrap();
        let codes = CodeSet::zeros(n, k, p);
        (prob, dict, codes)
    }

    #[test]
    fn weighted_solve_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (prob, dict, codes) = random_weighted_instance(&mut rng, 3, 24, 2, 4, 2, 0.05);
        let sol = wcsc_bcd_solve(&prob, &dict, &codes, &AdmmConfig::default()).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        let reported = sol.trace.last().unwrap().objective;
        let recomputed = weighted_objective(&prob, &sol.dict, &sol.codes).unwrap();
        assert!((reported - recomputed).abs() <= 1e-12 * recomputed.abs().max(1.0));
    }

    #[test]
    fn weighted_solve_is_primal_feasible_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (prob, dict, codes) = random_weighted_instance(&mut rng, 2, 16, 1, 3, 2, 0.05);
        let cfg = AdmmConfig {
            inner_tol: 1e-10,
            inner_max_iter: 2000,
            outer_tol: 1e-8,
            outer_max_iter: 30,
            ..Default::default()
        };
        let sol = wcsc_bcd_solve(&prob, &dict, &codes, &cfg).unwrap();
        let feas = sol.feasibility;
        let bound = 1e-4 * feas.scale;
        assert!(feas.e_residual <= bound, "e residual {} vs {}", feas.e_residual, bound);
        assert!(feas.u_residual <= bound, "u residual {} vs {}", feas.u_residual, bound);
        assert!(feas.v_residual <= bound, "v residual {} vs {}", feas.v_residual, bound);
    }

    #[test]
    fn weighted_solve_close_to_inertial_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let (prob, dict, codes) = random_weighted_instance(&mut rng, 3, 32, 2, 5, 2, 0.05);
        let bcd = wcsc_bcd_solve(
            &prob,
            &dict,
            &codes,
            &AdmmConfig { outer_max_iter: 60, outer_tol: 1e-6, ..Default::default() },
        )
        .unwrap();
        let apg =
            niapg_solve(&prob, &dict, &codes, &LineSearchConfig::default(), 1e-8, 500).unwrap();
        let fb = bcd.trace.last().unwrap().objective;
        let fa = apg.trace.last().unwrap().objective;
        let ref_val = fa.abs().max(fb.abs()).max(1e-12);
        assert!((fb - fa).abs() <= 0.01 * ref_val, "bcd {fb} vs apg {fa}");
    }

    /// Spatial proximal descent on the plain objective, built from direct
    /// convolution sums only.
    fn spatial_prox_descent(
        x: &[f64],
        d0: &[f64],
        p: usize,
        beta: f64,
        step: f64,
        iters: usize,
    ) -> f64 {
        let m = d0.len();
        let mut d = d0.to_vec();
        let mut z = vec![0.0; p];
        let recon = |d: &[f64], z: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; p];
            for q in 0..p {
                for (j, &dv) in d.iter().enumerate() {
                    out[q] += dv * z[(q + p - j) % p];
                }
            }
            out
        };
        let mut best = f64::INFINITY;
        for _ in 0..iters {
            let xt = recon(&d, &z);
            let r: Vec<f64> = x.iter().zip(&xt).map(|(a, b)| a - b).collect();
            let obj = 0.5 * r.iter().map(|v| v * v).sum::<f64>()
                + beta * z.iter().map(|v| v.abs()).sum::<f64>();
            best = best.min(obj);
            let mut gd = vec![0.0; m];
            for (j, gdj) in gd.iter_mut().enumerate() {
                for q in 0..p {
                    *gdj -= r[q] * z[(q + p - j) % p];
                }
            }
            let mut gz = vec![0.0; p];
            for (pp, gzp) in gz.iter_mut().enumerate() {
                for q in 0..p {
                    let idx = (q + p - pp) % p;
                    if idx < m {
                        *gzp -= r[q] * d[idx];
                    }
                }
            }
            let moved: Vec<f64> = d.iter().zip(&gd).map(|(a, g)| a - step * g).collect();
            d = project_unit_ball(&moved);
            for (zp, gp) in z.iter_mut().zip(&gz) {
                *zp = soft(*zp - step * gp, step * beta);
            }
        }
        best
    }

    #[test]
    fn plain_squared_fit_matches_spatial_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let x = planted_signals(&mut rng, 1, 16, 3);
        let beta = 0.05;
        let seed = 5;
        let sol = cscl2_fit(
            &x,
            1,
            3,
            beta,
            &AdmmConfig { outer_max_iter: 100, outer_tol: 1e-8, ..Default::default() },
            seed,
        )
        .unwrap();
        let fit_obj = sol.trace.last().unwrap().objective;

        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let d0 = &random_unit_filters(1, 3, &mut init_rng)[0];
        let oracle = spatial_prox_descent(x.get(0), d0, 16, beta, 0.02, 60000);
        assert!(
            (fit_obj - oracle).abs() <= 0.02 * oracle.abs().max(1e-12),
            "fit {fit_obj} vs oracle {oracle}"
        );
    }

    #[test]
    fn seeded_fits_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let x = planted_signals(&mut rng, 2, 16, 3);
        let a = cscl1_fit(&x, 2, 3, 0.05, &AdmmConfig::default(), 3).unwrap();
        let b = cscl1_fit(&x, 2, 3, 0.05, &AdmmConfig::default(), 3).unwrap();
        assert_eq!(a.dict, b.dict);
        assert_eq!(a.codes, b.codes);
        assert_eq!(a.trace.len(), b.trace.len());
        for (ta, tb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ta.objective, tb.objective);
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let x = SignalSet::new(vec![vec![0.1; 8]]).unwrap();
        let bad_rho = AdmmConfig { rho: 0.0, ..Default::default() };
        assert!(cscl1_fit(&x, 1, 3, 0.1, &bad_rho, 0).is_err());
        assert!(cscl1_fit(&x, 0, 3, 0.1, &AdmmConfig::default(), 0).is_err());
        assert!(cscl1_fit(&x, 1, 9, 0.1, &AdmmConfig::default(), 0).is_err());
        assert!(cscl2_fit(&x, 1, 3, -0.5, &AdmmConfig::default(), 0).is_err());
    }
}