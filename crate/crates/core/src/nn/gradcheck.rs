use crate::error::{Error, Result};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRADCHECK_ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_ABS_FLOOR)
}

/// Central-difference gradient `(f(p + h e_i) − f(p − h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::invalid(format!("objective is non-finite around coordinate {i}")));
            }
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Worst relative error between `analytic` and central differences of `f` at `params`.
pub fn gradient_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::invalid("analytic gradient and parameters differ in length"));
    }
    let numeric = central_difference(f, params, h)?;
    Ok(analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = [0.3, -1.7, 2.5, 10.0];
        let grad: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let err = gradient_check(|q| q.iter().map(|x| x * x).sum(), &p, &grad, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let p = [1.0, 2.0];
        let err = gradient_check(|q| q[0] * q[1], &p, &[2.0, 2.0], 1e-5).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn non_finite_objective() {
        assert!(gradient_check(|q| q[0].ln(), &[0.0], &[0.0], 1e-3).is_err());
    }
}
