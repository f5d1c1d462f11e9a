use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("mse needs equal non-empty lengths, got {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean of squared componentwise differences.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_lengths(a, b)?;
    let scale = 2.0 / a.len() as f64;
    Ok(a.iter().zip(b).map(|(x, y)| scale * (x - y)).collect())
}
