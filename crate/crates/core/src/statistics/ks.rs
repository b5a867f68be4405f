use crate::error::Result;
use crate::models::{Dataset, ModelSpec};

/// Kolmogorov-Smirnov distance `D_n` between the empirical CDF of `x` and
/// the model CDF at `theta0`.
pub fn ks_distance(model: &ModelSpec, x: &Dataset, theta0: &[f64]) -> Result<f64> {
    let mut sorted = x.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &xi) in sorted.iter().enumerate() {
        let f = model.cdf(xi, theta0)?;
        let i = i as f64;
        d = d.max((i + 1.0) / n - f).max(f - i / n);
    }
    Ok(d)
}
