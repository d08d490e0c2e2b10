//! Savitzky–Golay smoothing and differentiation of uniformly sampled signals.

use nalgebra::DMatrix;

use crate::error::{HarnessError, Result};

/// `deriv`-th derivative of a local polynomial fit of degree `order` over a
/// window of `window` samples (odd). Near the ends the window is shifted
/// so it stays inside the signal.
pub fn savitzky_golay(
    y: &[f64],
    dt: f64,
    window: usize,
    order: usize,
    deriv: usize,
) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) || window <= order || deriv > order || !(dt > 0.0) {
        return Err(HarnessError::Validation(format!(
            "filter needs an odd window > order ≥ derivative (window {window}, order {order}, derivative {deriv})"
        )));
    }
    if y.len() < window {
        return Err(HarnessError::Validation(format!(
            "signal of {} samples is shorter than the window",
            y.len()
        )));
    }
    let half = window / 2;
    let scale = (1..=deriv).product::<usize>() as f64 / dt.powi(deriv as i32);
    // one coefficient set per position of the evaluation point in the window
    let weights: Vec<Vec<f64>> = (0..window)
        .map(|pos| fit_weights(window, pos, order, deriv))
        .collect();
    Ok((0..y.len())
        .map(|i| {
            let start = i.saturating_sub(half).min(y.len() - window);
            let w = &weights[i - start];
            w.iter()
                .zip(&y[start..start + window])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale
        })
        .collect())
}

fn fit_weights(window: usize, pos: usize, order: usize, deriv: usize) -> Vec<f64> {
    let v = DMatrix::from_fn(window, order + 1, |r, c| {
        (r as f64 - pos as f64).powi(c as i32)
    });
    let vt = v.transpose();
    let gram = (&vt * &v)
        .try_inverse()
        .expect("Vandermonde of distinct nodes has full rank");
    (gram * vt).row(deriv).iter().copied().collect()
}
