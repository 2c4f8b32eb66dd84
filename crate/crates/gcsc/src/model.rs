//! Core model objects: signal batches, filter banks, sparse code sets, the
//! reconstruction operator and the basic objective, plus the two proximal
//! building blocks (soft threshold for codes, unit-ball projection for
//! filters).

use crate::error::{Error, Result};
use crate::signal::{circular_convolve, PadCrop};
use crate::util::{ensure_finite, ensure_nonempty, l1_norm, norm, soft};

/// Feasibility slack when checking filter norms. Projection lands exactly on
/// the ball; the slack only absorbs roundoff from downstream arithmetic.
pub const BALL_TOL: f64 = 1e-9;

/// A batch of N real signals of common length P.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    data: Vec<Vec<f64>>,
    signal_len: usize,
}

impl SignalSet {
    pub fn new(data: Vec<Vec<f64>>) -> Result<Self> {
        ensure_nonempty(data.len(), "signal set")?;
        let signal_len = data[0].len();
        ensure_nonempty(signal_len, "signal")?;
        for (i, row) in data.iter().enumerate() {
            if row.len() != signal_len {
                return Err(Error::DimensionMismatch(format!(
                    "signal {i} has length {}, expected {signal_len}",
                    row.len()
                )));
            }
            ensure_finite(row, &format!("signal {i}"))?;
        }
        Ok(Self { data, signal_len })
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn p(&self) -> usize {
        self.signal_len
    }

    pub fn signals(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i]
    }
}

/// K filters of common length M. Feasible when every filter has unit norm or
/// less.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    filters: Vec<Vec<f64>>,
    filter_len: usize,
}

impl Dictionary {
    pub fn new(filters: Vec<Vec<f64>>) -> Result<Self> {
        ensure_nonempty(filters.len(), "dictionary")?;
        let filter_len = filters[0].len();
        ensure_nonempty(filter_len, "filter")?;
        for (k, f) in filters.iter().enumerate() {
            if f.len() != filter_len {
                return Err(Error::DimensionMismatch(format!(
                    "filter {k} has length {}, expected {filter_len}",
                    f.len()
                )));
            }
            ensure_finite(f, &format!("filter {k}"))?;
        }
        Ok(Self { filters, filter_len })
    }

    pub fn k(&self) -> usize {
        self.filters.len()
    }

    pub fn m(&self) -> usize {
        self.filter_len
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.filters[k]
    }

    pub fn is_feasible(&self) -> bool {
        self.filters.iter().all(|f| norm(f) <= 1.0 + BALL_TOL)
    }
}

/// Sparse codes: one length-P map per signal and filter, indexed `[i][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSet {
    codes: Vec<Vec<Vec<f64>>>,
    code_len: usize,
}

impl CodeSet {
    pub fn new(codes: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        ensure_nonempty(codes.len(), "code set")?;
        ensure_nonempty(codes[0].len(), "code set filter axis")?;
        let k = codes[0].len();
        let code_len = codes[0][0].len();
        ensure_nonempty(code_len, "code")?;
        for (i, per_filter) in codes.iter().enumerate() {
            if per_filter.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has {} code maps, expected {k}",
                    per_filter.len()
                )));
            }
            for (kk, z) in per_filter.iter().enumerate() {
                if z.len() != code_len {
                    return Err(Error::DimensionMismatch(format!(
                        "code [{i}][{kk}] has length {}, expected {code_len}",
                        z.len()
                    )));
                }
                ensure_finite(z, &format!("code [{i}][{kk}]"))?;
            }
        }
        Ok(Self { codes, code_len })
    }

    pub fn zeros(n: usize, k: usize, p: usize) -> Self {
        Self { codes: vec![vec![vec![0.0; p]; k]; n], code_len: p }
    }

    pub fn n(&self) -> usize {
        self.codes.len()
    }

    pub fn k(&self) -> usize {
        self.codes[0].len()
    }

    pub fn p(&self) -> usize {
        self.code_len
    }

    pub fn codes(&self) -> &[Vec<Vec<f64>>] {
        &self.codes
    }

    pub fn get(&self, i: usize, k: usize) -> &[f64] {
        &self.codes[i][k]
    }

    /// Sum of absolute values over every map.
    pub fn l1(&self) -> f64 {
        self.codes.iter().flat_map(|per| per.iter()).map(|z| l1_norm(z)).sum()
    }
}

fn check_shapes(dict: &Dictionary, codes: &CodeSet) -> Result<PadCrop> {
    if dict.k() != codes.k() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary has {} filters, codes have {}",
            dict.k(),
            codes.k()
        )));
    }
    PadCrop::new(dict.m(), codes.p())
}

/// Reconstruction: for each signal, the sum over filters of the circular
/// convolution of the filter with its code map.
pub fn reconstruct(dict: &Dictionary, codes: &CodeSet) -> Result<SignalSet> {
    let op = check_shapes(dict, codes)?;
    let mut out = Vec::with_capacity(codes.n());
    for i in 0..codes.n() {
        let mut acc = vec![0.0; codes.p()];
        for k in 0..dict.k() {
            let c = circular_convolve(dict.get(k), codes.get(i, k), &op)?;
            for (a, v) in acc.iter_mut().zip(&c) {
                *a += v;
            }
        }
        out.push(acc);
    }
    SignalSet::new(out)
}

/// Squared-error data term plus the l1 code penalty:
/// `0.5 * sum_i ||x_i - xrec_i||^2 + beta * sum_{i,k} ||z_ik||_1`.
pub fn csc_objective(x: &SignalSet, dict: &Dictionary, codes: &CodeSet, beta: f64) -> Result<f64> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be finite and nonnegative, got {beta}")));
    }
    if x.n() != codes.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} signals but {} code rows",
            x.n(),
            codes.n()
        )));
    }
    if x.p() != codes.p() {
        return Err(Error::DimensionMismatch(format!(
            "signal length {} but code length {}",
            x.p(),
            codes.p()
        )));
    }
    let xrec = reconstruct(dict, codes)?;
    let mut data_term = 0.0;
    for i in 0..x.n() {
        let diff_sq: f64 = x
            .get(i)
            .iter()
            .zip(xrec.get(i))
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum();
        data_term += diff_sq;
    }
    Ok(0.5 * data_term + beta * codes.l1())
}

/// Elementwise soft threshold at level t, the proximal map of `t * ||.||_1`.
pub fn prox_l1(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidInput(format!("threshold must be finite and nonnegative, got {t}")));
    }
    Ok(v.iter().map(|&x| soft(x, t)).collect())
}

/// Euclidean projection onto the unit ball: `d / max(||d||, 1)`. Vectors
/// already inside the ball come back unchanged, bit for bit.
pub fn project_unit_ball(d: &[f64]) -> Vec<f64> {
    let n = norm(d);
    if n <= 1.0 {
        d.to_vec()
    } else {
        d.iter().map(|x| x / n).collect()
    }
}

/// Joint proximal map of the nonsmooth part at step t: the code maps go
/// through the soft threshold at `t * beta`, the filters through the ball
/// projection. With t = 0 the codes pass through unchanged.
pub fn prox_r(dict: &Dictionary, codes: &CodeSet, t: f64, beta: f64) -> Result<(Dictionary, CodeSet)> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidInput(format!("step must be finite and nonnegative, got {t}")));
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be finite and nonnegative, got {beta}")));
    }
    let filters = dict.filters().iter().map(|f| project_unit_ball(f)).collect();
    let thr = t * beta;
    let maps = codes
        .codes()
        .iter()
        .map(|per| per.iter().map(|z| z.iter().map(|&v| soft(v, thr)).collect()).collect())
        .collect();
    Ok((Dictionary::new(filters)?, CodeSet::new(maps)?))
}

/// K random filters drawn from a standard normal and scaled to unit norm,
/// the initialization shared by the solvers that start from scratch.
pub fn random_unit_filters<R: rand::Rng>(k: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let f: Vec<f64> =
                (0..m).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let n = norm(&f);
            if n > 0.0 {
                f.iter().map(|v| v / n).collect()
            } else {
                let mut e = vec![0.0; m];
                e[0] = 1.0;
                e
            }
        })
        .collect()
}
