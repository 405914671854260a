//! Explicit-Euler discretization of gradient flow with optional weight decay.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::stream_rng;
use crate::error::{invalid, Error, Result};
use crate::losses::{population_loss_and_gradient, LossKind, Objective};
use crate::models::{
    balanced_factorization, balancedness_defect, DiagonalNet, FeatureWeightProfile, LinearStack,
    Model,
};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;
/// Increase of the regularized objective that triggers a step-size halving.
pub const INCREASE_TOL: f64 = 1e-6;
/// Number of step-size halvings allowed per run.
pub const MAX_HALVINGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub weight_decay: f64,
    /// Apply weight decay to the diagonal network's biases as well.
    pub decay_biases: bool,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            max_steps: 1_000_000,
            grad_tol: 1e-8,
            weight_decay: 0.0,
            decay_biases: true,
            seed: 0,
            record_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid("step_size must be positive"));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return Err(invalid("grad_tol must be nonnegative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay must be nonnegative"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub loss: f64,
    /// Balancedness defect; present for linear stacks only.
    pub defect: Option<f64>,
    pub grad_norm: f64,
    pub profile: FeatureWeightProfile,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub final_model: Model,
    pub stop: StopReason,
    pub steps: usize,
    /// Step size in effect at the end, after any halvings.
    pub step_size: f64,
    pub halvings: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("every run records its final state")
    }

    /// Long-format CSV: `step,loss,defect,grad_norm,layer,feature,weight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,loss,defect,grad_norm,layer,feature,weight")?;
        for s in &self.snapshots {
            let defect = s.defect.map(|v| v.to_string()).unwrap_or_default();
            for (l, row) in s.profile.weights.iter().enumerate() {
                for (i, w) in row.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        s.step,
                        s.loss,
                        defect,
                        s.grad_norm,
                        l + 1,
                        i + 1,
                        w
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn defect_of(model: &Model) -> Option<f64> {
    model.as_linear().map(balancedness_defect)
}

fn snapshot(model: &Model, step: usize, loss: f64, grad_norm: f64) -> Snapshot {
    Snapshot {
        step,
        loss,
        defect: defect_of(model),
        grad_norm,
        profile: model.feature_weight_profile(),
        params: model.params(),
    }
}

/// Integrates `theta <- theta - eta (grad L + lambda theta)` until the
/// regularized gradient norm falls below `grad_tol` or `max_steps` is
/// reached. A step that raises the regularized objective by more than
/// [`INCREASE_TOL`] is retried at half the step size, at most
/// [`MAX_HALVINGS`] times per run.
pub fn train(model: &Model, obj: &Objective, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut model = model.clone();
    let mask = model.decay_mask(cfg.decay_biases);
    let lambda = cfg.weight_decay;
    let penalty = |t: &[f64]| -> f64 {
        0.5 * lambda * t.iter().zip(&mask).map(|(v, m)| m * v * v).sum::<f64>()
    };
    let eval = |m: &Model| -> Result<(f64, Vec<f64>)> {
        population_loss_and_gradient(m, obj).map(|(e, g)| (e.mean, g))
    };

    let mut theta = model.params();
    let (mut loss, mut grad) = eval(&model)?;
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence { step: 0, loss });
    }
    let mut eta = cfg.step_size;
    let mut halvings = 0;
    let mut snapshots = Vec::new();
    let mut full = vec![0.0; theta.len()];
    let mut cand = vec![0.0; theta.len()];
    let mut step = 0;
    let stop = loop {
        for k in 0..theta.len() {
            full[k] = grad[k] + lambda * mask[k] * theta[k];
        }
        let gnorm = full.iter().map(|v| v * v).sum::<f64>().sqrt();
        let converged = gnorm <= cfg.grad_tol;
        let done = converged || step >= cfg.max_steps;
        if step % cfg.record_every == 0 || done {
            snapshots.push(snapshot(&model, step, loss, gnorm));
        }
        if converged {
            break StopReason::Converged;
        }
        if done {
            break StopReason::MaxSteps;
        }
        let objective = loss + penalty(&theta);
        let (next_loss, next_grad) = loop {
            for k in 0..theta.len() {
                cand[k] = theta[k] - eta * full[k];
            }
            model.set_params(&cand)?;
            let (l, g) = eval(&model)?;
            if !l.is_finite() || l > DIVERGENCE_LOSS {
                return Err(Error::Divergence { step: step + 1, loss: l });
            }
            if l + penalty(&cand) > objective + INCREASE_TOL && halvings < MAX_HALVINGS {
                eta *= 0.5;
                halvings += 1;
                continue;
            }
            break (l, g);
        };
        std::mem::swap(&mut theta, &mut cand);
        loss = next_loss;
        grad = next_grad;
        step += 1;
    };
    Ok(Trajectory { snapshots, final_model: model, stop, steps: step, step_size: eta, halvings })
}

/// Random balanced stack for `dims = [d, p, ..., p]`: a Gaussian `p x d`
/// matrix of standard deviation `scale`, factored through its SVD.
pub fn balanced_init_linear(dims: &[usize], scale: f64, seed: u64) -> Result<LinearStack> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(invalid(format!("degenerate dims {dims:?}")));
    }
    let p = dims[1];
    if dims[1..].iter().any(|&w| w != p) {
        return Err(invalid("hidden and output widths must all equal p"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(invalid("scale must be nonnegative"));
    }
    let mut rng = stream_rng(seed, 0);
    let g = DMatrix::from_fn(p, dims[0], |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    balanced_factorization(&g, dims.len() - 1)
}

/// Whether coordinate 2 of an initialization satisfies the hypotheses under
/// which the destroyed feature survives pre-projection:
/// `|w22| <= sqrt(b0)` and `|w22| (|w12| - b0) >= b0`, plus `w12 w22 > 0`
/// for the supervised losses.
pub fn nonlinear_conditions_hold(w12: f64, w22: f64, b0: f64, kind: LossKind) -> bool {
    let base = w22.abs() <= b0.sqrt() && w22.abs() * (w12.abs() - b0) >= b0;
    match kind {
        LossKind::Cl => base,
        LossKind::Scl | LossKind::Mse => base && w12 * w22 > 0.0,
    }
}

/// Diagonal network with explicit weights and every bias equal to `b0`.
pub fn init_diagonal(w1: Vec<f64>, w2: Vec<f64>, b0: f64) -> Result<DiagonalNet> {
    if !(b0 > 0.0 && b0.is_finite()) {
        return Err(invalid("initial bias b0 must be positive"));
    }
    let d = w1.len();
    DiagonalNet::new(w1, w2, vec![b0; d], vec![b0; d])
}

/// Random diagonal initialization: weight magnitudes uniform in the given
/// ranges with random signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalSampler {
    pub d: usize,
    pub b0: f64,
    pub w1_range: (f64, f64),
    pub w2_range: (f64, f64),
    /// Reject draws until the coordinate-2 hypotheses for this loss hold.
    pub require_conditions: Option<LossKind>,
    pub max_attempts: usize,
}

impl DiagonalSampler {
    pub fn new(d: usize, b0: f64) -> Self {
        Self {
            d,
            b0,
            w1_range: (0.0, 3.0),
            w2_range: (0.0, 1.5),
            require_conditions: None,
            max_attempts: 10_000,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<DiagonalNet> {
        if self.d < 2 && self.require_conditions.is_some() {
            return Err(invalid("conditions refer to coordinate 2; need d >= 2"));
        }
        for (lo, hi) in [self.w1_range, self.w2_range] {
            if !(0.0 <= lo && lo <= hi) {
                return Err(invalid("weight ranges must satisfy 0 <= lo <= hi"));
            }
        }
        let mut rng = stream_rng(seed, 0);
        let mut draw = |(lo, hi): (f64, f64)| {
            let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        };
        for _ in 0..self.max_attempts {
            let w1: Vec<f64> = (0..self.d).map(|_| draw(self.w1_range)).collect();
            let w2: Vec<f64> = (0..self.d).map(|_| draw(self.w2_range)).collect();
            let ok = match self.require_conditions {
                Some(kind) => nonlinear_conditions_hold(w1[1], w2[1], self.b0, kind),
                None => true,
            };
            if ok {
                return init_diagonal(w1, w2, self.b0);
            }
        }
        Err(Error::RetryBudgetExhausted {
            attempts: self.max_attempts,
            what: "diagonal initialization satisfying the coordinate-2 hypotheses".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PretrainSpec;

    fn scalar_cl() -> Objective {
        Objective::Cl(PretrainSpec::new(vec![1.0], vec![0.0], 0.0, 1).unwrap())
    }

    #[test]
    fn balanced_init_examples() {
        let s = balanced_init_linear(&[1, 1, 1], 1.0, 3).unwrap();
        let (a, b) = (s.layers()[0][(0, 0)], s.layers()[1][(0, 0)]);
        assert!((a.abs() - b.abs()).abs() < 1e-15);
        for seed in 0..10 {
            let s = balanced_init_linear(&[5, 5, 5], 1.0, seed).unwrap();
            let scale = s.layers()[0].norm_squared().max(1.0);
            assert!(balancedness_defect(&s) <= 1e-12 * scale);
        }
        let z = balanced_init_linear(&[3, 2, 2], 0.0, 1).unwrap();
        assert!(z.layers().iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert!(balanced_init_linear(&[3], 1.0, 0).is_err());
        assert!(balanced_init_linear(&[3, 2, 4], 1.0, 0).is_err());
    }

    #[test]
    fn scalar_run_converges_to_unit_product() {
        let stack = LinearStack::new(vec![DMatrix::from_element(1, 1, 0.5); 2]).unwrap();
        let cfg = TrainConfig { step_size: 0.01, grad_tol: 1e-8, record_every: 100, ..Default::default() };
        let traj = train(&stack.into(), &scalar_cl(), &cfg).unwrap();
        assert_eq!(traj.stop, StopReason::Converged);
        let p = traj.final_model.params();
        assert!((p[0] - 1.0).abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6, "{p:?}");
        for w in traj.snapshots.windows(2) {
            assert!(w[0].step < w[1].step);
            assert!(w[1].loss <= w[0].loss + 1e-10);
        }
    }

    #[test]
    fn decay_step_from_stationary_point() {
        // w1 = w2 = 1 is stationary for the scalar loss.
        let stack = LinearStack::new(vec![DMatrix::from_element(1, 1, 1.0); 2]).unwrap();
        let cfg = TrainConfig { step_size: 0.01, weight_decay: 0.5, max_steps: 1, ..Default::default() };
        let traj = train(&stack.into(), &scalar_cl(), &cfg).unwrap();
        for v in traj.final_model.params() {
            assert!((v - (1.0 - 0.01 * 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_decay_flag() {
        let obj = Objective::Cl(PretrainSpec::new(vec![1.0, 1.0], vec![0.0, 1.0], 0.0, 2).unwrap());
        let net = init_diagonal(vec![0.0, 0.0], vec![0.0, 0.0], 0.5).unwrap();
        for (flag, want) in [(true, 0.5 * (1.0 - 0.1)), (false, 0.5)] {
            let cfg = TrainConfig { step_size: 0.1, weight_decay: 1.0, decay_biases: flag, max_steps: 1, ..Default::default() };
            let traj = train(&net.clone().into(), &obj, &cfg).unwrap();
            let p = traj.final_model.params();
            assert!(p[4..].iter().all(|b| (b - want).abs() < 1e-15), "{flag}: {p:?}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let stack = LinearStack::new(vec![DMatrix::from_element(1, 1, 3.0); 2]).unwrap();
        let cfg = TrainConfig { step_size: 10.0, ..Default::default() };
        assert!(matches!(train(&stack.into(), &scalar_cl(), &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let obj = Objective::Cl(PretrainSpec::new(vec![1.0, 0.5, 2.0], vec![0.1, 0.4, 0.2], 0.1, 2).unwrap());
        let m: Model = balanced_init_linear(&[3, 2, 2], 0.3, 8).unwrap().into();
        let cfg = TrainConfig { step_size: 0.01, max_steps: 500, record_every: 50, ..Default::default() };
        let a = train(&m, &obj, &cfg).unwrap();
        let b = train(&m, &obj, &cfg).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("step,loss,defect"));
    }

    #[test]
    fn init_conditions() {
        assert!(nonlinear_conditions_hold(2.0, 0.3, 0.25, LossKind::Cl));
        assert!((0.3f64 * (2.0 - 0.25) - 0.525).abs() < 1e-15);
        assert!(nonlinear_conditions_hold(2.0, 0.5, 0.25, LossKind::Cl));
        assert!(!nonlinear_conditions_hold(2.0, 0.51, 0.25, LossKind::Cl));
        assert!(nonlinear_conditions_hold(-2.0, 0.3, 0.25, LossKind::Cl));
        assert!(!nonlinear_conditions_hold(-2.0, 0.3, 0.25, LossKind::Scl));
        assert!(init_diagonal(vec![1.0], vec![1.0], 0.0).is_err());

        let mut s = DiagonalSampler::new(3, 0.25);
        s.require_conditions = Some(LossKind::Mse);
        let net = s.sample(4).unwrap();
        assert!(nonlinear_conditions_hold(net.w1[1], net.w2[1], 0.25, LossKind::Mse));
        assert!(net.b1.iter().chain(&net.b2).all(|b| *b == 0.25));
        s.w2_range = (0.9, 1.0);
        s.max_attempts = 50;
        assert!(matches!(s.sample(0), Err(Error::RetryBudgetExhausted { .. })));
    }
}
