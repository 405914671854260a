//! Closed-form predictions for linear contrastive models: feature weights,
//! feature selection, the pre/post-projection discriminant, sample-complexity
//! indicators, the multi-layer depth curve and the min-norm factorization.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{split_seed, stream_rng, DownstreamSpec, PretrainSpec};
use crate::error::{check_dim, invalid, Error, Result};
use crate::models::{balanced_factorization, FeatureWeightProfile};

/// Gap between the p-th and (p+1)-th largest `beta` below which the
/// selection is considered ambiguous.
pub const SELECTION_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Zero-based indices of the `min(d, p)` selected features, by
    /// decreasing `beta` (ties toward the lower index).
    pub selected: Vec<usize>,
    /// The selection boundary is a near-tie, so the minimizer is not unique.
    pub ambiguous: bool,
}

impl TheoryPrediction {
    pub fn d(&self) -> usize {
        self.beta.len()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.selected.contains(&i)
    }

    /// Weight the full two-layer model assigns to each feature: `gamma^2` on
    /// the selected set, 0 elsewhere.
    pub fn full_model_weights(&self) -> Vec<f64> {
        (0..self.d())
            .map(|i| if self.is_selected(i) { self.gamma[i].powi(2) } else { 0.0 })
            .collect()
    }

    /// Predicted `||f_l(e_i)||` for a balanced `depth`-layer model:
    /// `c_i^(l / depth)` with `c` the full-model weights. For two layers
    /// this is `gamma_i^l`.
    pub fn predicted_profile(&self, depth: usize) -> FeatureWeightProfile {
        let c = self.full_model_weights();
        let weights = (1..=depth)
            .map(|l| {
                c.iter()
                    .map(|&ci| if ci > 0.0 { ci.powf(l as f64 / depth as f64) } else { 0.0 })
                    .collect()
            })
            .collect();
        FeatureWeightProfile { weights }
    }
}

/// Feature weights of the minimum-norm contrastive minimizer.
pub fn beta_gamma(spec: &PretrainSpec) -> Result<TheoryPrediction> {
    spec.validate()?;
    let conv = spec.augmentation_convention;
    let s2 = spec.sigma * spec.sigma;
    let mut beta = Vec::with_capacity(spec.d());
    let mut gamma = Vec::with_capacity(spec.d());
    for (&phi, &alpha) in spec.phi.iter().zip(&spec.alpha) {
        let c = conv.center_factor(alpha);
        let m = phi * phi + s2;
        beta.push(c * c * phi * phi / m);
        gamma.push((c.abs() * phi / m).sqrt());
    }
    let mut order: Vec<usize> = (0..spec.d()).collect();
    order.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]).then(a.cmp(&b)));
    let k = spec.p.min(spec.d());
    let ambiguous = k < spec.d() && beta[order[k - 1]] - beta[order[k]] < SELECTION_GAP;
    order.truncate(k);
    Ok(TheoryPrediction { beta, gamma, selected: order, ambiguous })
}

/// Discriminant whose sign decides which layer needs fewer downstream
/// samples: positive favours the post-projection layer, negative the
/// pre-projection layer.
pub fn delta(spec: &PretrainSpec, ds: &DownstreamSpec) -> Result<f64> {
    ds.validate_against(spec.d())?;
    let pred = beta_gamma(spec)?;
    let j = ds.relevant();
    let gs = pred.gamma[j];
    if !pred.is_selected(j) || gs == 0.0 {
        return Err(Error::FeatureNotLearned { j_star: ds.j_star });
    }
    Ok(pred
        .selected
        .iter()
        .filter(|&&i| i != j)
        .map(|&i| {
            let x = (pred.gamma[i] / gs).powi(2);
            ds.phi_hat[i].powi(2) * (x - x * x)
        })
        .sum())
}

/// `(rho / gamma)^2` for representations whose feature weights are `row`:
/// `sum_j w_j^2 phi_hat_j^2 / (w_j*^2 phi_hat_j*^2)`.
pub fn sample_complexity_indicator(row: &[f64], ds: &DownstreamSpec) -> Result<f64> {
    ds.validate_against(row.len())?;
    let j = ds.relevant();
    let denom = (row[j] * ds.phi_hat[j]).powi(2);
    if denom == 0.0 {
        return Err(Error::FeatureNotLearned { j_star: ds.j_star });
    }
    let num: f64 = row.iter().zip(&ds.phi_hat).map(|(w, p)| (w * p).powi(2)).sum();
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Augmentation disrupts the downstream feature the most among those
    /// that are learned.
    BadAugmentation,
    /// The downstream feature is weak (below the noise level) in pretraining.
    WeakFeature,
    /// The downstream feature is the strongest in pretraining.
    StrongFeature,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] =
        [ScenarioKind::BadAugmentation, ScenarioKind::WeakFeature, ScenarioKind::StrongFeature];
}

const SCENARIO_ATTEMPTS: usize = 1000;

/// Random `(pretraining, downstream)` pair from one of the three families in
/// which pre-projection representations need fewer samples. The output is
/// guaranteed to have an unambiguous selection and `delta < 0`.
pub fn corollary_scenario(kind: ScenarioKind, seed: u64) -> Result<(PretrainSpec, DownstreamSpec)> {
    for attempt in 0..SCENARIO_ATTEMPTS {
        let mut rng = stream_rng(split_seed(seed, attempt as u64), 0);
        let d = rng.random_range(2..=8usize);
        let p = rng.random_range(2..=d);
        let distinct = |v: &[f64], gap: f64| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] >= gap)
        };
        // Index holding the n-th position when sorted by `key`.
        let nth_by = |key: &[f64], n: usize, descending: bool| {
            let mut idx: Vec<usize> = (0..key.len()).collect();
            idx.sort_by(|&a, &b| {
                let o = key[a].total_cmp(&key[b]);
                if descending {
                    o.reverse()
                } else {
                    o
                }
            });
            idx[n]
        };
        let (spec, phi_hat, j) = match kind {
            ScenarioKind::BadAugmentation => {
                let alpha: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.9)).collect();
                if !distinct(&alpha, 1e-2) {
                    continue;
                }
                let sigma = rng.random_range(0.0..0.5);
                let j = nth_by(&alpha, p - 1, false);
                (PretrainSpec::new(vec![1.0; d], alpha, sigma, p)?, vec![1.0; d], j)
            }
            ScenarioKind::WeakFeature => {
                let sigma = rng.random_range(0.5..2.0);
                let alpha = vec![rng.random_range(0.0..0.8); d];
                let phi: Vec<f64> = (0..d).map(|_| rng.random_range(0.05 * sigma..=sigma)).collect();
                if !distinct(&phi, 1e-2) {
                    continue;
                }
                let j = nth_by(&phi, p - 1, true);
                let phi_hat = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
                (PretrainSpec::new(phi, alpha, sigma, p)?, phi_hat, j)
            }
            ScenarioKind::StrongFeature => {
                let sigma = rng.random_range(0.2..2.0);
                let alpha = vec![rng.random_range(0.0..0.8); d];
                let mut phi: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
                let j = rng.random_range(0..d);
                // phi_j* > max(phi_i, sigma^2 / phi_i) for every other i.
                let floor = (0..d)
                    .filter(|&i| i != j)
                    .map(|i| phi[i].max(sigma * sigma / phi[i]))
                    .fold(0.0, f64::max);
                phi[j] = floor * rng.random_range(1.05..2.0);
                let phi_hat = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
                (PretrainSpec::new(phi, alpha, sigma, p)?, phi_hat, j)
            }
        };
        let ds = DownstreamSpec::new(phi_hat, j + 1)?;
        let pred = beta_gamma(&spec)?;
        if pred.ambiguous {
            continue;
        }
        match delta(&spec, &ds) {
            Ok(v) if v < 0.0 => return Ok((spec, ds)),
            _ => continue,
        }
    }
    Err(Error::RetryBudgetExhausted {
        attempts: SCENARIO_ATTEMPTS,
        what: format!("{kind:?} scenario with delta < 0"),
    })
}

/// How the weights `c` passed to [`depth_curve`] scale with depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthScaling {
    /// `c_j` is the full model's weight; layer `l` carries `c_j^(l / L)`.
    FullModel,
    /// `c_j` is the weight each layer applies; layer `l` carries `c_j^l`.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCurve {
    pub c: Vec<f64>,
    /// `r[l - 1]` is the indicator at layer `l`.
    pub r: Vec<f64>,
    /// One-based layer with the smallest indicator (ties to the lower layer).
    pub optimal_layer: usize,
}

impl DepthCurve {
    /// True when the minimum is attained strictly inside `(1, L)`.
    pub fn is_u_shaped(&self) -> bool {
        self.optimal_layer > 1 && self.optimal_layer < self.r.len()
    }
}

/// Sample-complexity indicator at every layer of a balanced deep linear
/// model whose feature weights are described by `c`.
pub fn depth_curve(
    c: &[f64],
    ds: &DownstreamSpec,
    layers: usize,
    scaling: DepthScaling,
) -> Result<DepthCurve> {
    ds.validate_against(c.len())?;
    if layers == 0 {
        return Err(invalid("depth must be at least 1"));
    }
    if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("feature weights must be nonnegative"));
    }
    let j = ds.relevant();
    if c[j] == 0.0 {
        return Err(Error::FeatureNotLearned { j_star: ds.j_star });
    }
    let r: Vec<f64> = (1..=layers)
        .map(|l| {
            let e = match scaling {
                DepthScaling::FullModel => 2.0 * l as f64 / layers as f64,
                DepthScaling::PerLayer => 2.0 * l as f64,
            };
            let ratio = |cj: f64| if cj == 0.0 { 0.0 } else { (cj / c[j]).powf(e) };
            c.iter()
                .zip(&ds.phi_hat)
                .map(|(&cj, ph)| ratio(cj) * ph * ph)
                .sum::<f64>()
                / (ds.phi_hat[j] * ds.phi_hat[j])
        })
        .collect();
    let mut optimal_layer = 1;
    for (l, v) in r.iter().enumerate() {
        if *v < r[optimal_layer - 1] {
            optimal_layer = l + 1;
        }
    }
    Ok(DepthCurve { c: c.to_vec(), r, optimal_layer })
}

/// Norm used to rank factorizations: `||W1^T W1||_F^2 + ||W2^T W2||_F^2`.
pub fn factorization_norm(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> f64 {
    (w1.transpose() * w1).norm_squared() + (w2.transpose() * w2).norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefactorTrial {
    pub norm: f64,
    /// `||A^T A - I||_F` of the mixing matrix.
    pub orthogonality_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinNormReport {
    pub balanced_norm: f64,
    pub trials: Vec<RefactorTrial>,
}

impl MinNormReport {
    /// Balanced norm is at most every alternative, up to round-off.
    pub fn balanced_is_minimal(&self) -> bool {
        let tol = 1e-10 * self.balanced_norm.max(1.0);
        self.trials.iter().all(|t| self.balanced_norm <= t.norm + tol)
    }

    /// Every alternative whose mixing matrix is not orthogonal (defect above
    /// `threshold`) is strictly larger than the balanced norm.
    pub fn strict_when_not_orthogonal(&self, threshold: f64) -> bool {
        self.trials
            .iter()
            .filter(|t| t.orthogonality_defect > threshold)
            .all(|t| t.norm > self.balanced_norm)
    }
}

/// Norm of `(W2 A, A^-1 W1)` for a given mixing matrix.
pub fn refactor_norm(w: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<RefactorTrial> {
    let base = balanced_factorization(w, 2)?;
    let (w1, w2) = (&base.layers()[0], &base.layers()[1]);
    check_dim(w2.ncols(), a.nrows())?;
    let inv = a.clone().try_inverse().ok_or_else(|| invalid("mixing matrix is singular"))?;
    let eye = DMatrix::<f64>::identity(a.ncols(), a.ncols());
    Ok(RefactorTrial {
        norm: factorization_norm(&(&inv * w1), &(w2 * a)),
        orthogonality_defect: (a.transpose() * a - eye).norm(),
    })
}

/// Compares the balanced factorization of `w` against `trials` random
/// alternatives `W = (W2 A)(A^-1 W1)` with Gaussian `A`.
pub fn min_norm_refactor_check(w: &DMatrix<f64>, trials: usize, seed: u64) -> Result<MinNormReport> {
    let base = balanced_factorization(w, 2)?;
    let balanced_norm = factorization_norm(&base.layers()[0], &base.layers()[1]);
    let p = w.nrows();
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sv = a.singular_values();
        let cond = sv.max() / sv.min();
        if !cond.is_finite() || cond > 1e8 {
            continue;
        }
        out.push(refactor_norm(w, &a)?);
    }
    Ok(MinNormReport { balanced_norm, trials: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(phi: &[f64], alpha: &[f64], sigma: f64, p: usize) -> PretrainSpec {
        PretrainSpec::new(phi.to_vec(), alpha.to_vec(), sigma, p).unwrap()
    }

    #[test]
    fn beta_gamma_examples() {
        let t = beta_gamma(&spec(&[1.0], &[0.0], 0.0, 1)).unwrap();
        assert_eq!((t.beta[0], t.gamma[0]), (1.0, 1.0));
        assert_eq!(t.predicted_profile(2).weights, vec![vec![1.0], vec![1.0]]);
        let t = beta_gamma(&spec(&[1.0], &[1.0], 0.0, 1)).unwrap();
        assert_eq!((t.beta[0], t.gamma[0]), (0.0, 0.0));

        let t = beta_gamma(&spec(&[1.0; 5], &[0.0, 0.25, 0.5, 0.75, 1.0], 0.01, 5)).unwrap();
        let want = [0.99995, 0.86601, 0.70708, 0.49999, 0.0];
        for (i, (g, w)) in t.gamma.iter().zip(want).enumerate() {
            let exact = ((1.0 - 0.25 * i as f64) / 1.0001).sqrt();
            assert_relative_eq!(*g, exact, epsilon = 1e-15);
            // Published values are rounded loosely.
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
        assert!(t.gamma.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(t.selected, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn selection_ties_and_ambiguity() {
        let t = beta_gamma(&spec(&[1.0, 1.0, 1.0], &[0.2, 0.2, 0.5], 0.0, 1)).unwrap();
        assert_eq!(t.selected, vec![0]);
        assert!(t.ambiguous);
        let t = beta_gamma(&spec(&[1.0, 1.0, 1.0], &[0.2, 0.2, 0.5], 0.0, 2)).unwrap();
        assert_eq!(t.selected, vec![0, 1]);
        assert!(!t.ambiguous);
        let prof = t.predicted_profile(2);
        assert_eq!(prof.layer(1)[2], 0.0);
        assert_eq!(prof.layer(2)[2], 0.0);
    }

    #[test]
    fn delta_examples() {
        let s = spec(&[1.0], &[0.3], 0.1, 1);
        assert_eq!(delta(&s, &DownstreamSpec::new(vec![1.0], 1).unwrap()).unwrap(), 0.0);
        let s = spec(&[1.0; 3], &[0.3; 3], 0.1, 3);
        assert_eq!(delta(&s, &DownstreamSpec::new(vec![1.0, 2.0, 0.5], 2).unwrap()).unwrap(), 0.0);
        let s = spec(&[1.0; 3], &[0.0, 0.3, 0.6], 0.0, 3);
        assert!(delta(&s, &DownstreamSpec::new(vec![1.0; 3], 1).unwrap()).unwrap() > 0.0);
        let s = spec(&[1.0; 3], &[0.0, 0.3, 1.0], 0.0, 3);
        assert!(matches!(
            delta(&s, &DownstreamSpec::new(vec![1.0; 3], 3).unwrap()),
            Err(Error::FeatureNotLearned { j_star: 3 })
        ));
        let s = spec(&[1.0; 3], &[0.0, 0.3, 0.5], 0.0, 2);
        assert!(delta(&s, &DownstreamSpec::new(vec![1.0; 3], 3).unwrap()).is_err());
    }

    #[test]
    fn indicator_examples() {
        let ds = DownstreamSpec::new(vec![1.0, 1.0], 1).unwrap();
        assert_eq!(sample_complexity_indicator(&[0.7, 0.0], &ds).unwrap(), 1.0);
        assert_eq!(sample_complexity_indicator(&[0.7, 0.7], &ds).unwrap(), 2.0);
        assert!(sample_complexity_indicator(&[0.0, 0.7], &ds).is_err());
    }

    #[test]
    fn delta_equals_scaled_indicator_gap() {
        let s = spec(&[1.0, 0.6, 1.5, 0.9], &[0.1, 0.4, 0.3, 0.7], 0.3, 3);
        let pred = beta_gamma(&s).unwrap();
        for &j in &pred.selected {
            let ds = DownstreamSpec::new(vec![1.2, 0.4, 0.9, 2.0], j + 1).unwrap();
            let prof = pred.predicted_profile(2);
            let r1 = sample_complexity_indicator(prof.layer(1), &ds).unwrap();
            let r2 = sample_complexity_indicator(prof.layer(2), &ds).unwrap();
            let dl = delta(&s, &ds).unwrap();
            assert_relative_eq!(dl, ds.phi_hat[j].powi(2) * (r1 - r2), epsilon = 1e-12);
        }
    }

    #[test]
    fn scenarios_have_negative_delta() {
        for kind in ScenarioKind::ALL {
            for seed in 0..10 {
                let (s, ds) = corollary_scenario(kind, seed).unwrap();
                assert!(delta(&s, &ds).unwrap() < 0.0);
            }
        }
        let s = spec(&[1.0, 10.0], &[0.2, 0.2], 1.0, 2);
        let g = beta_gamma(&s).unwrap().gamma;
        assert_relative_eq!(g[1], (10.0f64 * 0.8 / 101.0).sqrt(), epsilon = 1e-15);
        assert!(g[1] < g[0]);
        assert!(delta(&s, &DownstreamSpec::new(vec![1.0, 1.0], 2).unwrap()).unwrap() < 0.0);
    }

    #[test]
    fn depth_curve_shapes() {
        let ds = DownstreamSpec::new(vec![1.0, 0.5, 2.0], 2).unwrap();
        let flat = depth_curve(&[0.3, 0.3, 0.3], &ds, 6, DepthScaling::FullModel).unwrap();
        assert!(flat.r.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        assert_eq!(flat.optimal_layer, 1);

        let best = depth_curve(&[0.3, 0.6, 0.2], &ds, 6, DepthScaling::FullModel).unwrap();
        assert!(best.r.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(best.optimal_layer, 6);
        let worst = depth_curve(&[0.5, 0.1, 0.2], &ds, 6, DepthScaling::FullModel).unwrap();
        assert!(worst.r.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(worst.optimal_layer, 1);
        assert!(depth_curve(&[0.5, 0.0, 0.2], &ds, 6, DepthScaling::FullModel).is_err());
    }

    #[test]
    fn depth_scalings_are_equivalent() {
        let ds = DownstreamSpec::new(vec![1.0, 0.5, 2.0, 0.1], 3).unwrap();
        let c = [0.4, 0.7, 0.5, 0.9];
        let layers = 5;
        let full = depth_curve(&c, &ds, layers, DepthScaling::FullModel).unwrap();
        let per_layer: Vec<f64> = c.iter().map(|v: &f64| v.powf(1.0 / layers as f64)).collect();
        let per = depth_curve(&per_layer, &ds, layers, DepthScaling::PerLayer).unwrap();
        for (a, b) in full.r.iter().zip(&per.r) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn depth_curve_matches_two_layer_indicators() {
        let s = spec(&[1.0, 0.6, 1.5], &[0.1, 0.4, 0.3], 0.3, 2);
        let pred = beta_gamma(&s).unwrap();
        let j = pred.selected[1];
        let ds = DownstreamSpec::new(vec![1.2, 0.4, 0.9], j + 1).unwrap();
        let curve = depth_curve(&pred.full_model_weights(), &ds, 2, DepthScaling::FullModel).unwrap();
        let prof = pred.predicted_profile(2);
        for l in 1..=2 {
            let r = sample_complexity_indicator(prof.layer(l), &ds).unwrap();
            assert_relative_eq!(curve.r[l - 1], r, max_relative = 1e-12);
        }
    }

    #[test]
    fn min_norm_examples() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, -0.4, 0.3, -1.2, 0.5]);
        let base = balanced_factorization(&w, 2).unwrap();
        let bal = factorization_norm(&base.layers()[0], &base.layers()[1]);
        let same = refactor_norm(&w, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(same.norm, bal, max_relative = 1e-12);
        let doubled = refactor_norm(&w, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!(doubled.norm > bal);
        let report = min_norm_refactor_check(&w, 100, 3).unwrap();
        assert!(report.balanced_is_minimal());
        assert!(report.strict_when_not_orthogonal(1e-6));
    }
}
