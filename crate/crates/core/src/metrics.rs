//! Reconstruction metrics: mean squared error and Pearson correlation.

use ndarray::{Array3, ArrayView3, Zip};

use crate::error::{Error, Result};

/// Standard deviations below this (mV) make the correlation undefined.
pub const PCC_MIN_STD: f64 = 1e-12;

/// Mean over every element of `(pred - target)²`.
pub fn mse_loss(pred: ArrayView3<'_, f64>, target: ArrayView3<'_, f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty tensors".into()));
    }
    let sum = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, p, t| acc + (p - t) * (p - t));
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: ArrayView3<'_, f64>, target: ArrayView3<'_, f64>) -> Array3<f64> {
    let scale = 2.0 / pred.len() as f64;
    Zip::from(&pred)
        .and(&target)
        .map_collect(|p, t| scale * (p - t))
}

/// Mean squared difference of two equal-length series.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("series lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Pearson correlation of two series, accumulated in one pass with
/// running co-moments. `Ok(None)` when either series is flat (population
/// standard deviation below [`PCC_MIN_STD`]).
///
/// The update only uses commutative products of the two deviations, so
/// `pearson_cc(x, y)` and `pearson_cc(y, x)` are bit-identical.
pub fn pearson_cc(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("series lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Shape("correlation needs at least two samples".into()));
    }
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        let w = (n - 1.0) / n;
        sxx += w * dx * dx;
        syy += w * dy * dy;
        sxy += w * (dx * dy);
        mx += dx / n;
        my += dy / n;
    }
    let n = x.len() as f64;
    if (sxx / n).sqrt() < PCC_MIN_STD || (syy / n).sqrt() < PCC_MIN_STD {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Middle order statistic; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
