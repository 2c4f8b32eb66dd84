//! EM driver that fits the dictionary, the codes, and the mixture noise
//! model together.
//!
//! Each iteration runs the responsibility update, the closed-form mixture
//! update on the current residuals, one prune/merge pass, and a warm-started
//! solve of the weighted problem built from the refreshed mixture. The first
//! iteration keeps the initial mixture untouched: with zero codes the
//! residuals are the raw signals, and refitting the noise model to those
//! would hand the solver a penalty scaled to the full signal energy. The
//! loop stops when the relative change of the log posterior falls below
//! `em_tol` or after `em_max_iter` iterations.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::admm::{wcsc_bcd_solve, AdmmConfig};
use crate::error::{Error, Result};
use crate::gmm::{
    compute_weights, e_step, log_posterior, m_step_mixture, prune_merge, GmmParams, MuUpdate,
    Responsibilities,
};
use crate::model::{random_unit_filters, reconstruct, CodeSet, Dictionary, SignalSet};
use crate::wcsc::{niapg_solve, LineSearchConfig, WcscProblem};

/// Solver used for the weighted subproblem inside each M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerSolver {
    /// Joint proximal-gradient solve with the nonmonotone safeguard.
    #[default]
    Niapg,
    /// Block alternation with per-block ADMM. Much slower, kept for
    /// cross-checks and comparisons.
    Bcd,
}

/// How the first M-step's filters are seeded.
///
/// `Zero` matches the printed inner algorithm but is a stationary point of
/// the smooth term (all gradients vanish at d = z = 0), so the solver will
/// not move until the mixture means do. `Random` draws unit-norm filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterInit {
    #[default]
    Random,
    Zero,
}

#[derive(Debug, Clone)]
pub struct GcscConfig {
    pub k: usize,
    pub m: usize,
    pub beta: f64,
    /// Mixture size before any pruning. Ignored when `initial_mixture` is
    /// set.
    pub initial_g: usize,
    /// Variance-difference threshold below which the closest component pair
    /// is merged.
    pub merge_threshold: f64,
    /// Compare the per-entry mean of the variance difference against the
    /// threshold instead of its sum over the signal axis.
    pub normalized_merge: bool,
    /// Relative log-posterior change below which the outer loop stops.
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub mu_update: MuUpdate,
    pub solver: InnerSolver,
    pub line_search: LineSearchConfig,
    /// Relative objective tolerance of the proximal inner solver.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Settings for the `Bcd` inner solver.
    pub admm: AdmmConfig,
    pub filter_init: FilterInit,
    /// Starting mixture. Drawn at random when absent.
    pub initial_mixture: Option<GmmParams>,
    /// When false the mixture stays at its initial parameters, pruning is
    /// skipped, and only the dictionary and codes are updated.
    pub adapt_noise: bool,
    pub seed: u64,
}

impl GcscConfig {
    pub fn new(k: usize, m: usize, beta: f64) -> Self {
        Self {
            k,
            m,
            beta,
            initial_g: 10,
            merge_threshold: 0.1,
            normalized_merge: false,
            em_tol: 1e-4,
            em_max_iter: 50,
            mu_update: MuUpdate::default(),
            solver: InnerSolver::default(),
            line_search: LineSearchConfig::default(),
            inner_tol: 1e-4,
            inner_max_iter: 100,
            admm: AdmmConfig::default(),
            filter_init: FilterInit::default(),
            initial_mixture: None,
            adapt_noise: true,
            seed: 0,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("at least one filter is required".into()));
        }
        if self.m == 0 || self.m > p {
            return Err(Error::DimensionMismatch(format!(
                "filter length {} incompatible with signal length {p}",
                self.m
            )));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        if self.initial_g == 0 && self.initial_mixture.is_none() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if self.merge_threshold < 0.0 || !self.merge_threshold.is_finite() {
            return Err(Error::InvalidInput(format!(
                "merge threshold must be finite and nonnegative, got {}",
                self.merge_threshold
            )));
        }
        if !(self.em_tol > 0.0 && self.em_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "EM tolerance must be positive, got {}",
                self.em_tol
            )));
        }
        if !(self.inner_tol > 0.0 && self.inner_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "inner tolerance must be positive, got {}",
                self.inner_tol
            )));
        }
        if self.em_max_iter == 0 {
            return Err(Error::InvalidInput("at least one EM iteration is required".into()));
        }
        if let Some(mix) = &self.initial_mixture {
            if mix.p() != p {
                return Err(Error::DimensionMismatch(format!(
                    "initial mixture covers signals of length {}, data has {p}",
                    mix.p()
                )));
            }
        }
        Ok(())
    }
}

/// Everything the fit learned.
#[derive(Debug, Clone)]
pub struct GcscModel {
    pub dict: Dictionary,
    pub codes: CodeSet,
    pub gmm: GmmParams,
    /// Responsibilities evaluated at the returned parameters.
    pub responsibilities: Responsibilities,
}

/// One completed EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub log_posterior: f64,
    /// Mixture size after this iteration's pruning.
    pub g: usize,
    /// Accepted inner-solver iterations spent in this M-step.
    pub inner_iterations: usize,
    /// Wall time since the start of the fit.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub records: Vec<FitRecord>,
}

impl FitTrace {
    pub fn initial_log_posterior(&self) -> Option<f64> {
        self.records.first().map(|r| r.log_posterior)
    }

    pub fn final_log_posterior(&self) -> Option<f64> {
        self.records.last().map(|r| r.log_posterior)
    }

    /// True when both traces visited the same numeric states. Wall time is
    /// ignored; everything else must match bit for bit.
    pub fn same_path(&self, other: &FitTrace) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.log_posterior.to_bits() == b.log_posterior.to_bits()
                    && a.g == b.g
                    && a.inner_iterations == b.inner_iterations
            })
    }
}

/// Attaches the EM iteration index to solver aborts.
fn with_iteration(iter: usize, e: Error) -> Error {
    match e {
        Error::NumericalFailure(msg) => {
            Error::NumericalFailure(format!("EM iteration {iter}: {msg}"))
        }
        other => other,
    }
}

pub fn fit(x: &SignalSet, cfg: &GcscConfig) -> Result<(GcscModel, FitTrace)> {
    let mut trace = FitTrace::default();
    fit_into(x, cfg, &mut trace).map(|model| (model, trace))
}

/// Like [`fit`], but records into a caller-held trace, so an aborted run
/// still leaves the iterations that completed before the failure.
pub fn fit_into(x: &SignalSet, cfg: &GcscConfig, trace: &mut FitTrace) -> Result<GcscModel> {
    trace.records.clear();
    cfg.validate(x.p())?;
    let p = x.p();
    if x.signals().iter().all(|s| s.iter().all(|&v| v == 0.0)) {
        log::warn!("input signals are identically zero; the fit will return zero codes");
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let filters = match cfg.filter_init {
        FilterInit::Random => random_unit_filters(cfg.k, cfg.m, &mut rng),
        FilterInit::Zero => vec![vec![0.0; cfg.m]; cfg.k],
    };
    let mut dict = Dictionary::new(filters)?;
    let mut codes = CodeSet::zeros(x.n(), cfg.k, p);
    let mut gmm = match &cfg.initial_mixture {
        Some(mix) => mix.clone(),
        None => GmmParams::init_random(cfg.initial_g, p, &mut rng)?,
    };

    let mut xrec = reconstruct(&dict, &codes)?;
    let mut lp_prev = log_posterior(x, &xrec, &gmm, &codes, cfg.beta)?;

    for iter in 1..=cfg.em_max_iter {
        let mut gamma = e_step(x, &xrec, &gmm).map_err(|e| with_iteration(iter, e))?;

        // Refit the mixture to the residuals left by the previous solve,
        // then refresh the responsibilities so the weights below come from
        // one parameter snapshot. Skipped on the first pass: the codes are
        // still zero there, and a mixture fitted to the raw signals would
        // scale the penalty to the signal energy and wipe the codes before
        // they exist.
        if iter > 1 && cfg.adapt_noise {
            let (updated, _kept) = m_step_mixture(x, &xrec, &gamma, cfg.mu_update)
                .map_err(|e| with_iteration(iter, e))?;
            let (pruned, _merged) =
                prune_merge(&updated, cfg.merge_threshold, cfg.normalized_merge)?;
            gmm = pruned;
            gamma = e_step(x, &xrec, &gmm).map_err(|e| with_iteration(iter, e))?;
        }

        let weights = compute_weights(&gmm, &gamma)?;
        let means: Vec<Vec<f64>> = (0..gmm.g()).map(|g| gmm.mean(g).to_vec()).collect();
        let prob = WcscProblem::new(x.clone(), means, weights, cfg.beta, cfg.k, cfg.m)?;

        let inner_iterations = match cfg.solver {
            InnerSolver::Niapg => {
                let sol =
                    niapg_solve(&prob, &dict, &codes, &cfg.line_search, cfg.inner_tol, cfg.inner_max_iter)
                        .map_err(|e| with_iteration(iter, e))?;
                dict = sol.dict;
                codes = sol.codes;
                sol.trace.len().saturating_sub(1)
            }
            InnerSolver::Bcd => {
                let sol = wcsc_bcd_solve(&prob, &dict, &codes, &cfg.admm)
                    .map_err(|e| with_iteration(iter, e))?;
                dict = sol.dict;
                codes = sol.codes;
                sol.trace.len().saturating_sub(1)
            }
        };

        xrec = reconstruct(&dict, &codes)?;
        let lp = log_posterior(x, &xrec, &gmm, &codes, cfg.beta)
            .map_err(|e| with_iteration(iter, e))?;
        trace.records.push(FitRecord {
            log_posterior: lp,
            g: gmm.g(),
            inner_iterations,
            seconds: start.elapsed().as_secs_f64(),
        });

        let done = (lp - lp_prev).abs() < cfg.em_tol * lp_prev.abs().max(1e-30);
        lp_prev = lp;
        if done {
            break;
        }
    }

    // Bring the returned mixture in line with the final residuals; the loop
    // above leaves it one solve behind.
    if cfg.adapt_noise {
        let gamma = e_step(x, &xrec, &gmm)?;
        let (updated, _kept) = m_step_mixture(x, &xrec, &gamma, cfg.mu_update)?;
        let (pruned, _merged) = prune_merge(&updated, cfg.merge_threshold, cfg.normalized_merge)?;
        gmm = pruned;
    }
    let responsibilities = e_step(x, &xrec, &gmm)?;
    Ok(GcscModel { dict, codes, gmm, responsibilities })
}

pub fn reconstruct_model(model: &GcscModel) -> Result<SignalSet> {
    reconstruct(&model.dict, &model.codes)
}
