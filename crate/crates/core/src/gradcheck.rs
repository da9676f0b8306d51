//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the supplied forward closure, so it stays
//! independent of the reverse-mode path it is used to verify.

/// Central difference gradient of a scalar function at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor that keeps near-zero gradients comparable.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between an analytic and a numeric gradient.
/// Returns `Err` with a description of the worst component when it exceeds
/// `tolerance`.
pub fn compare(analytic: &[f64], numeric: &[f64], tolerance: f64) -> Result<f64, String> {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    let mut worst_idx = 0;
    for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let err = relative_error(*a, *n);
        if err > worst {
            worst = err;
            worst_idx = i;
        }
    }
    if worst > tolerance {
        Err(format!(
            "gradient mismatch at index {worst_idx}: analytic {} vs numeric {} (rel err {worst:.3e})",
            analytic[worst_idx], numeric[worst_idx]
        ))
    } else {
        Ok(worst)
    }
}

/// Check the analytic gradient against central differences (`h = 1e-5`,
/// relative tolerance `1e-4`, the project-wide gradient-integrity contract).
pub fn assert_matches(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) {
    let numeric = central_diff(f, x, 1e-5);
    if let Err(msg) = compare(analytic, &numeric, 1e-4) {
        panic!("{msg}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0, 0.5];
        let g = central_diff(f, &x, 1e-5);
        let expect = [2.0, -4.0, 1.0];
        assert!(compare(&expect, &g, 1e-6).is_ok());
    }

    #[test]
    fn compare_flags_mismatch() {
        assert!(compare(&[1.0], &[1.1], 1e-4).is_err());
    }
}
