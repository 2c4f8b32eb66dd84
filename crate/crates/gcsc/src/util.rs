//! Small numeric helpers shared by the solver modules.

use crate::error::{Error, Result};

pub(crate) fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(())
}

pub(crate) fn ensure_nonempty(len: usize, context: &str) -> Result<()> {
    if len == 0 {
        return Err(Error::InvalidInput(format!("{context} is empty")));
    }
    Ok(())
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Scalar soft threshold: sign(v) * max(|v| - t, 0) for t >= 0.
pub(crate) fn soft(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_shrinks_toward_zero() {
        assert!((soft(0.7, 0.2) - 0.5).abs() < 1e-15);
        assert!((soft(-0.7, 0.2) + 0.5).abs() < 1e-15);
        assert_eq!(soft(0.1, 0.2), 0.0);
        assert_eq!(soft(-0.1, 0.2), 0.0);
        assert_eq!(soft(3.0, 0.0), 3.0);
        assert_eq!(soft(0.75, 0.25), 0.5);
    }

    #[test]
    fn finite_check_flags_nan_and_inf() {
        assert!(ensure_finite(&[0.0, 1.0], "x").is_ok());
        assert!(ensure_finite(&[0.0, f64::NAN], "x").is_err());
        assert!(ensure_finite(&[f64::INFINITY], "x").is_err());
    }
}
