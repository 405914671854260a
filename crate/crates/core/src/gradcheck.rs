//! Central finite-difference checks for the hand-written gradients.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{population_loss, population_loss_and_gradient, Objective};
use crate::models::{Model, Network};

/// Central differences `(f(t + h e_k) - f(t - h e_k)) / 2h` for every `k`.
pub fn central_difference<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            t[k] = theta[k] + h;
            let up = f(&t);
            t[k] = theta[k] - h;
            let down = f(&t);
            t[k] = theta[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_error: f64,
}

/// Compares the analytic population gradient with central differences of
/// the population loss.
pub fn check_population_gradient(model: &Model, obj: &Objective, h: f64) -> Result<GradCheck> {
    let (_, analytic) = population_loss_and_gradient(model, obj)?;
    let mut probe = model.clone();
    let theta = model.params();
    let numeric = central_difference(
        |t| {
            probe.set_params(t).expect("same parameter count");
            population_loss(&probe, obj).map(|e| e.mean).unwrap_or(f64::NAN)
        },
        &theta,
        h,
    );
    let rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheck { analytic, numeric, rel_error })
}

/// Smallest distance of any pre-activation to a kink of the symmetrized ReLU
/// over the discrete input values `±magnitude`. Infinite for linear models.
pub fn kink_distance(model: &Model, magnitudes: &[f64]) -> f64 {
    let Network::Diagonal(net) = &model.network else {
        return f64::INFINITY;
    };
    let mut best = f64::INFINITY;
    for (i, m) in magnitudes.iter().enumerate() {
        for x in [*m, -*m] {
            let a1 = net.w1[i] * x;
            let b1 = net.b1[i];
            let a2 = net.w2[i] * net.hidden(i, x);
            let b2 = net.b2[i];
            best = best
                .min((a1 - b1).abs())
                .min((a1 + b1).abs())
                .min((a2 - b2).abs())
                .min((a2 + b2).abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic_is_exact() {
        let g = central_difference(|t| t[0] * t[0] + 3.0 * t[1], &[2.0, -1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[0.0]) - 1.0).abs() < 1e-15);
    }
}
