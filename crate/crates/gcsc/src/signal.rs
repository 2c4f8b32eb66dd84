//! Spectral transforms and the pad/crop coupling between short filters and
//! full-length signals.
//!
//! Conventions, fixed once here and relied on everywhere else:
//!
//! - `fft` is the plain unnormalized forward transform.
//! - `ifft` carries the 1/P scaling, so `ifft(fft(x)) == x` up to roundoff.
//! - The transform length always equals the signal length P. There is no
//!   power-of-two padding; a length-P signal uses a length-P plan.
//! - Parseval under these scalings: `||x||^2 == ||fft(x)||^2 / P`.
//! - Convolution of a length-M filter with a length-P code means period-P
//!   circular convolution of the zero-padded filter, evaluated as
//!   `ifft(fft(pad(d)) * fft(z))` with a pointwise product.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::util::{ensure_finite, ensure_nonempty};

/// Largest relative imaginary residue tolerated when an inverse transform is
/// read back as a real signal. A spectrum produced from real data stays far
/// below this; anything above it means the input was not conjugate-symmetric.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn run_transform(buf: &mut [Complex64], forward: bool) {
    let plan = PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if forward {
            planner.plan_fft_forward(buf.len())
        } else {
            planner.plan_fft_inverse(buf.len())
        }
    });
    plan.process(buf);
}

/// Forward transform without input validation. Internal hot paths call this
/// after their inputs have been validated once at problem construction.
pub(crate) fn fft_raw(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    run_transform(&mut buf, true);
    buf
}

/// Inverse transform keeping only the real part. Callers must guarantee the
/// spectrum is conjugate-symmetric; products of transforms of real signals
/// are, by construction.
pub(crate) fn ifft_real_raw(s: &[Complex64]) -> Vec<f64> {
    let mut buf = s.to_vec();
    run_transform(&mut buf, false);
    let scale = 1.0 / buf.len() as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Unnormalized forward transform of a real signal.
pub fn fft(x: &[f64]) -> Result<Vec<Complex64>> {
    ensure_nonempty(x.len(), "fft input")?;
    ensure_finite(x, "fft input")?;
    Ok(fft_raw(x))
}

/// Inverse transform with the 1/P scaling, returned as a real signal.
///
/// The imaginary residue left after the inverse transform is compared against
/// [`IMAG_RESIDUE_TOL`] relative to the result magnitude (with an absolute
/// floor of 1 so that near-zero signals are not penalized). A residue above
/// the tolerance is an error rather than something to discard silently.
pub fn ifft(s: &[Complex64]) -> Result<Vec<f64>> {
    ensure_nonempty(s.len(), "ifft input")?;
    if s.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("ifft input".to_string()));
    }
    let mut buf = s.to_vec();
    run_transform(&mut buf, false);
    let scale = 1.0 / buf.len() as f64;
    let mut imag_inf = 0.0f64;
    let mut mag_inf = 0.0f64;
    for c in &buf {
        imag_inf = imag_inf.max((c.im * scale).abs());
        mag_inf = mag_inf.max((c.norm() * scale).abs());
    }
    let residual = imag_inf / mag_inf.max(1.0);
    if residual > IMAG_RESIDUE_TOL {
        return Err(Error::ConjugateSymmetry { residual });
    }
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

/// Zero-padding and cropping between filter length M and signal length P.
///
/// `pad` appends P-M exact zeros after the filter taps, `crop` keeps the
/// first M entries. The two maps are exact adjoints: `<pad(d), y>` equals
/// `<d, crop(y)>` with no floating-point slack, because padding introduces
/// only exact zeros and both sides sum the same products in the same order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadCrop {
    filter_len: usize,
    signal_len: usize,
}

impl PadCrop {
    pub fn new(filter_len: usize, signal_len: usize) -> Result<Self> {
        if filter_len == 0 || signal_len == 0 {
            return Err(Error::InvalidInput("pad/crop lengths must be positive".into()));
        }
        if filter_len > signal_len {
            return Err(Error::DimensionMismatch(format!(
                "filter length {filter_len} exceeds signal length {signal_len}"
            )));
        }
        Ok(Self { filter_len, signal_len })
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn pad(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.filter_len {
            return Err(Error::DimensionMismatch(format!(
                "pad input has length {}, expected {}",
                d.len(),
                self.filter_len
            )));
        }
        Ok(pad_slice(d, self.signal_len))
    }

    pub fn crop(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.signal_len {
            return Err(Error::DimensionMismatch(format!(
                "crop input has length {}, expected {}",
                y.len(),
                self.signal_len
            )));
        }
        Ok(y[..self.filter_len].to_vec())
    }
}

pub(crate) fn pad_slice(d: &[f64], signal_len: usize) -> Vec<f64> {
    debug_assert!(d.len() <= signal_len);
    let mut out = vec![0.0; signal_len];
    out[..d.len()].copy_from_slice(d);
    out
}

/// Full linear convolution, length `a.len() + b.len() - 1`, by direct
/// summation. Used for edge-exactness checks against the circular route.
pub fn linear_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    ensure_nonempty(a.len(), "convolution input")?;
    ensure_nonempty(b.len(), "convolution input")?;
    ensure_finite(a, "convolution input")?;
    ensure_finite(b, "convolution input")?;
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    Ok(out)
}

/// Period-P circular convolution of a length-M filter with a length-P code,
/// computed in the frequency domain. A code impulse near the right edge wraps
/// the filter tail around to the start of the signal.
pub fn circular_convolve(d: &[f64], z: &[f64], op: &PadCrop) -> Result<Vec<f64>> {
    if d.len() != op.filter_len() {
        return Err(Error::DimensionMismatch(format!(
            "filter has length {}, expected {}",
            d.len(),
            op.filter_len()
        )));
    }
    if z.len() != op.signal_len() {
        return Err(Error::DimensionMismatch(format!(
            "code has length {}, expected {}",
            z.len(),
            op.signal_len()
        )));
    }
    ensure_finite(d, "circular convolution filter")?;
    ensure_finite(z, "circular convolution code")?;
    let dhat = fft_raw(&pad_slice(d, op.signal_len()));
    let zhat = fft_raw(z);
    let prod: Vec<Complex64> = dhat.iter().zip(&zhat).map(|(a, b)| a * b).collect();
    Ok(ifft_real_raw(&prod))
}
