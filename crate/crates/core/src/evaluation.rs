//! Downstream probing of learned representations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{sample_downstream, sample_subclass, split_seed, DownstreamSpec, SubclassSpec};
use crate::error::{check_dim, invalid, Error, Result};
use crate::models::Model;

/// Row-wise representation at `layer` (one-based, counting a head if any).
pub fn represent(model: &Model, layer: usize, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.forward_batch(data, layer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRadius {
    pub gamma: f64,
    pub rho: f64,
    /// Unit max-margin direction through the origin.
    pub direction: Vec<f64>,
}

impl MarginRadius {
    /// `(rho / gamma)^2`.
    pub fn indicator(&self) -> f64 {
        (self.rho / self.gamma).powi(2)
    }
}

const KKT_TOL: f64 = 1e-12;
const ACTIVE_SLACK: f64 = 1e-6;
const POLISH_EVERY: usize = 50;
const WORK_BUDGET: usize = 200_000_000;

fn signed_rows(reps: &DMatrix<f64>, labels: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(reps.nrows(), labels.len())?;
    if reps.nrows() == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
        return Err(invalid("labels must be ±1"));
    }
    let mut z = reps.clone();
    for (mut row, y) in z.row_iter_mut().zip(labels) {
        row *= *y;
    }
    Ok(z)
}

fn min_margin(z: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    (z * u).min()
}

/// Min-norm `w` with `z_i . w = 1` on the active rows, accepted only when it
/// is feasible for every row. Returns the unit direction and whether the
/// multipliers certify optimality.
fn polish(z: &DMatrix<f64>, w: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    let margins = z * w;
    let active: Vec<usize> = (0..z.nrows()).filter(|&i| margins[i] <= 1.0 + ACTIVE_SLACK).collect();
    if active.is_empty() {
        return None;
    }
    let zs = z.select_rows(&active);
    let svd = zs.clone().svd(true, true);
    let ones = DVector::from_element(active.len(), 1.0);
    let wp = svd.solve(&ones, 1e-12).ok()?;
    let norm = wp.norm();
    if !(norm.is_finite() && norm > 0.0) || (z * &wp).min() < 1.0 - 1e-9 {
        return None;
    }
    let svd_t = zs.transpose().svd(true, true);
    let certified = svd_t
        .solve(&wp, 1e-12)
        .map(|a| a.min() >= -1e-9 * a.amax().max(1.0))
        .unwrap_or(false);
    Some((wp / norm, certified))
}

/// Hard-margin separator through the origin, by dual coordinate ascent with
/// an active-set refinement.
pub fn margin_radius(reps: &DMatrix<f64>, labels: &[f64]) -> Result<MarginRadius> {
    let z = signed_rows(reps, labels)?;
    let (n, p) = z.shape();
    let rho = reps.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let sq: Vec<f64> = z.row_iter().map(|r| r.norm_squared()).collect();
    if sq.contains(&0.0) {
        return Err(Error::NonSeparable { best_margin: 0.0 });
    }

    let mut alpha = vec![0.0; n];
    let mut w = DVector::<f64>::zeros(p);
    let mut best: Option<DVector<f64>> = None;
    let mut best_gamma = f64::NEG_INFINITY;
    let mut consider = |u: DVector<f64>, best: &mut Option<DVector<f64>>| {
        let g = min_margin(&z, &u);
        if g > best_gamma {
            best_gamma = g;
            *best = Some(u);
        }
    };
    let sweeps = (WORK_BUDGET / (n * p).max(1)).clamp(200, 100_000);
    for sweep in 0..sweeps {
        let mut viol: f64 = 0.0;
        for i in 0..n {
            let zi = z.row(i);
            let g = 1.0 - (zi * &w)[0];
            let next = (alpha[i] + g / sq[i]).max(0.0);
            let step = next - alpha[i];
            if step != 0.0 {
                w.axpy(step, &zi.transpose(), 1.0);
                alpha[i] = next;
            }
            viol = viol.max(if alpha[i] > 0.0 { g.abs() } else { g.max(0.0) });
        }
        if !w.iter().all(|v| v.is_finite()) || w.norm() * rho > 1e15 {
            break;
        }
        let done = viol < KKT_TOL;
        if done || (sweep + 1) % POLISH_EVERY == 0 {
            if let Some((u, certified)) = polish(&z, &w) {
                consider(u, &mut best);
                if certified {
                    break;
                }
            }
        }
        if done {
            break;
        }
    }
    let wn = w.norm();
    if wn > 0.0 && wn.is_finite() {
        consider(&w / wn, &mut best);
    }
    match best {
        Some(u) if best_gamma > 1e-12 * rho => Ok(MarginRadius {
            gamma: best_gamma,
            rho,
            direction: u.as_slice().to_vec(),
        }),
        _ => Err(Error::NonSeparable { best_margin: best_gamma.max(0.0) }),
    }
}

/// All `2^d` inputs `(±phi_hat_1, ..., ±phi_hat_d)` with labels
/// `sign(x[j_star])`.
pub fn exhaustive_downstream(ds: &DownstreamSpec) -> Result<(DMatrix<f64>, Vec<f64>)> {
    ds.validate()?;
    let d = ds.d();
    if d > 20 {
        return Err(invalid("exhaustive enumeration limited to d <= 20"));
    }
    let n = 1usize << d;
    let x = DMatrix::from_fn(n, d, |r, i| if r >> i & 1 == 0 { ds.phi_hat[i] } else { -ds.phi_hat[i] });
    let j = ds.relevant();
    let y = (0..n).map(|r| x[(r, j)].signum()).collect();
    Ok((x, y))
}

/// Margin and radius of the representation at `layer` over every downstream
/// sign pattern.
pub fn exhaustive_margin(model: &Model, layer: usize, ds: &DownstreamSpec) -> Result<MarginRadius> {
    let (x, y) = exhaustive_downstream(ds)?;
    margin_radius(&represent(model, layer, &x)?, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Representation coordinates with magnitude at or below `resolution`
    /// are read as zero before probing. Zero disables the cutoff.
    pub resolution: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { steps: 2000, learning_rate: 0.5, resolution: 0.0 }
    }
}

fn cutoff(x: &DMatrix<f64>, q: f64) -> DMatrix<f64> {
    if q > 0.0 {
        x.map(|v| if v.abs() <= q { 0.0 } else { v })
    } else {
        x.clone()
    }
}

/// Trains a logistic-loss linear classifier with bias by full-batch gradient
/// descent and returns its accuracy on the heldout set.
pub fn linear_probe(
    train_x: &DMatrix<f64>,
    train_y: &[f64],
    test_x: &DMatrix<f64>,
    test_y: &[f64],
    cfg: &ProbeConfig,
) -> Result<f64> {
    let (train_x, test_x) = (&cutoff(train_x, cfg.resolution), &cutoff(test_x, cfg.resolution));
    let z = signed_rows(train_x, train_y)?;
    check_dim(test_x.nrows(), test_y.len())?;
    check_dim(train_x.ncols(), test_x.ncols())?;
    if test_y.is_empty() {
        return Err(Error::Empty("empty heldout set".into()));
    }
    if !(train_y.contains(&1.0) && train_y.contains(&-1.0)) {
        return Err(invalid("probe needs both classes in the training set"));
    }
    let n = z.nrows() as f64;
    let y = DVector::from_column_slice(train_y);
    let mut w = DVector::<f64>::zeros(z.ncols());
    let mut b = 0.0;
    for _ in 0..cfg.steps {
        // d/dm log(1 + e^-m) = -1 / (1 + e^m), with margin m = y (w.x + b).
        let m = &z * &w + &y * b;
        let s = m.map(|v| -1.0 / (1.0 + v.exp()));
        let gw = z.tr_mul(&s) / n;
        let gb = s.dot(&y) / n;
        w.axpy(-cfg.learning_rate, &gw, 1.0);
        b -= cfg.learning_rate * gb;
    }
    let logits = test_x * &w;
    // A zero logit is a coin flip and earns half credit.
    let correct: f64 = logits
        .iter()
        .zip(test_y)
        .map(|(l, y)| match ((l + b) * y).partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    Ok(correct / test_y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub layer: usize,
    pub gamma: f64,
    pub rho: f64,
    pub r: f64,
    pub accuracy: f64,
}

/// Margin, radius and probe accuracy of `layer` on a sampled downstream task.
pub fn probe_downstream(
    model: &Model,
    layer: usize,
    ds: &DownstreamSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let train = sample_downstream(ds, n_train, split_seed(seed, 0))?;
    let test = sample_downstream(ds, n_test, split_seed(seed, 1))?;
    let (ytr, yte) = (train.y.unwrap(), test.y.unwrap());
    let rtr = represent(model, layer, &train.x)?;
    let rte = represent(model, layer, &test.x)?;
    let mr = margin_radius(&rtr, &ytr)?;
    let accuracy = linear_probe(&rtr, &ytr, &rte, &yte, cfg)?;
    Ok(ProbeResult { layer, gamma: mr.gamma, rho: mr.rho, r: mr.indicator(), accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Indexed by layer, first entry is layer 1.
    pub class_accuracy: Vec<f64>,
    pub subclass_accuracy: Vec<f64>,
    /// Normalized margin `gamma / rho` separating subclasses inside class
    /// `+1`, or `None` when they are not separable.
    pub within_class_margin: Vec<Option<f64>>,
    /// `||f_l(e_1)||, ||f_l(e_2)||` per layer.
    pub feature_weights: Vec<[f64; 2]>,
}

/// Class and subclass probe accuracies at every network layer.
pub fn collapse_metrics(
    model: &Model,
    spec: &SubclassSpec,
    n: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<CollapseReport> {
    check_dim(spec.d, model.input_dim())?;
    let train = sample_subclass(spec, n, split_seed(seed, 0))?;
    let test = sample_subclass(spec, n, split_seed(seed, 1))?;
    let profile = model.feature_weight_profile();
    let mut report = CollapseReport {
        class_accuracy: vec![],
        subclass_accuracy: vec![],
        within_class_margin: vec![],
        feature_weights: vec![],
    };
    let (ytr, yte) = (train.y.as_ref().unwrap(), test.y.as_ref().unwrap());
    let (str_, ste) = (train.y_sub.as_ref().unwrap(), test.y_sub.as_ref().unwrap());
    for layer in 1..=model.network_depth() {
        let rtr = represent(model, layer, &train.x)?;
        let rte = represent(model, layer, &test.x)?;
        report.class_accuracy.push(linear_probe(&rtr, ytr, &rte, yte, cfg)?);
        report.subclass_accuracy.push(linear_probe(&rtr, str_, &rte, ste, cfg)?);

        let rows: Vec<usize> = (0..n).filter(|&r| ytr[r] > 0.0).collect();
        let sub: Vec<f64> = rows.iter().map(|&r| str_[r]).collect();
        let margin = match margin_radius(&rtr.select_rows(&rows), &sub) {
            Ok(m) if m.rho > 0.0 => Some(m.gamma / m.rho),
            Ok(_) | Err(Error::NonSeparable { .. }) | Err(Error::Empty(_)) => None,
            Err(e) => return Err(e),
        };
        report.within_class_margin.push(margin);
        let w = profile.layer(layer);
        report.feature_weights.push([w[0], w[1]]);
    }
    Ok(report)
}
