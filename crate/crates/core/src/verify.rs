//! Property suites that check trained and closed-form quantities against the
//! theory. Each suite returns a [`SuiteReport`] listing its individual
//! assertions; the report passes iff all of them do.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{split_seed, stream_rng, DownstreamSpec, PretrainSpec, SubclassSpec};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{collapse_metrics, exhaustive_margin, ProbeConfig};
use crate::gradcheck::{check_population_gradient, kink_distance};
use crate::losses::{coordinate_losses_diagonal, enumerated_loss, monte_carlo_loss, LossKind, Objective};
use crate::models::{DiagonalNet, LinearStack, Model};
use crate::theory::{
    beta_gamma, corollary_scenario, delta, depth_curve, min_norm_refactor_check,
    sample_complexity_indicator, DepthScaling, ScenarioKind,
};
use crate::training::{balanced_init_linear, init_diagonal, nonlinear_conditions_hold, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Balancedness,
    FeatureWeights,
    DeltaSign,
    Corollary,
    NonlinearCl,
    Collapse,
    Decomposition,
    MinNorm,
    Depth,
    WeightDecay,
    Reweight,
    Gradients,
}

impl Suite {
    pub const ALL: [Suite; 12] = [
        Suite::Balancedness,
        Suite::FeatureWeights,
        Suite::DeltaSign,
        Suite::Corollary,
        Suite::NonlinearCl,
        Suite::Collapse,
        Suite::Decomposition,
        Suite::MinNorm,
        Suite::Depth,
        Suite::WeightDecay,
        Suite::Reweight,
        Suite::Gradients,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Balancedness => "balancedness",
            Suite::FeatureWeights => "feature_weights",
            Suite::DeltaSign => "delta_sign",
            Suite::Corollary => "corollary",
            Suite::NonlinearCl => "nonlinear_cl",
            Suite::Collapse => "collapse",
            Suite::Decomposition => "decomposition",
            Suite::MinNorm => "min_norm",
            Suite::Depth => "depth",
            Suite::WeightDecay => "weight_decay",
            Suite::Reweight => "reweight",
            Suite::Gradients => "gradients",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        SuiteReport { suite, passed: true, checks: vec![] }
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(CheckResult { name: name.into(), passed, detail: detail.into() });
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per failing check, or the number of checks when all pass.
    pub fn summary(&self) -> String {
        let failed: Vec<String> = self.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        if failed.is_empty() {
            format!("{} checks passed", self.checks.len())
        } else {
            format!("{}/{} checks failed; {}", failed.len(), self.checks.len(), failed.join("; "))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn flatness(w: &[f64]) -> f64 {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalancednessParams {
    pub specs: usize,
    pub max_dim: usize,
    pub init_scale: f64,
    pub step_size: f64,
    pub steps: usize,
    pub max_defect: f64,
    /// Accepted range of `defect(eta / 2) / defect(eta)`, the halved run
    /// covering the same time horizon.
    pub ratio_range: (f64, f64),
    pub seed: u64,
}

impl Default for BalancednessParams {
    fn default() -> Self {
        Self {
            specs: 20,
            max_dim: 8,
            init_scale: 0.3,
            step_size: 1e-3,
            steps: 100_000,
            max_defect: 1e-3,
            ratio_range: (0.3, 0.7),
            seed: 1,
        }
    }
}

fn random_pretrain(rng: &mut ChaCha8Rng, d: usize, p: usize) -> Result<PretrainSpec> {
    let phi = (0..d).map(|_| uniform(rng, 0.5, 1.5)).collect();
    let alpha = (0..d).map(|_| uniform(rng, 0.0, 0.8)).collect();
    PretrainSpec::new(phi, alpha, uniform(rng, 0.0, 0.5), p)
}

pub fn balancedness(params: &BalancednessParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Balancedness);
    for k in 0..params.specs {
        let seed = split_seed(params.seed, k as u64);
        let mut rng = stream_rng(seed, 0);
        let d = rng.random_range(2..=params.max_dim);
        let p = rng.random_range(1..=params.max_dim);
        let spec = random_pretrain(&mut rng, d, p)?;
        let model: Model = balanced_init_linear(&[d, p, p], params.init_scale, seed)?.into();
        let obj = Objective::Cl(spec);
        let run = |eta: f64, steps: usize| {
            let cfg = TrainConfig {
                step_size: eta,
                max_steps: steps,
                grad_tol: 0.0,
                record_every: (steps / 100).max(1),
                ..Default::default()
            };
            train(&model, &obj, &cfg)
        };
        let (full, half) = match (run(params.step_size, params.steps), run(params.step_size / 2.0, 2 * params.steps)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                report.check(format!("spec {k}"), false, format!("training failed: {e}"));
                continue;
            }
        };
        let max_defect = full.snapshots.iter().filter_map(|s| s.defect).fold(0.0, f64::max);
        report.check(
            format!("spec {k} (d={d}, p={p}) max defect"),
            max_defect <= params.max_defect && full.halvings == 0,
            format!("{max_defect:.3e}, halvings {}", full.halvings),
        );
        let (a, b) = (full.last().defect.unwrap(), half.last().defect.unwrap());
        let ratio = b / a;
        let (lo, hi) = params.ratio_range;
        report.check(
            format!("spec {k} (d={d}, p={p}) halving ratio"),
            (lo..=hi).contains(&ratio) && half.halvings == 0,
            format!("{b:.3e} / {a:.3e} = {ratio:.3}"),
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureWeightParams {
    pub spec: PretrainSpec,
    pub init_scale: f64,
    pub train: TrainConfig,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for FeatureWeightParams {
    fn default() -> Self {
        Self {
            spec: PretrainSpec::new(vec![1.0; 5], vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.01, 4)
                .expect("valid default spec"),
            init_scale: 0.1,
            train: TrainConfig {
                step_size: 0.02,
                max_steps: 2_000_000,
                grad_tol: 1e-8,
                seed: 2,
                record_every: 10_000,
                ..Default::default()
            },
            rel_tol: 0.02,
            abs_tol: 1e-3,
        }
    }
}

pub fn feature_weights(params: &FeatureWeightParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::FeatureWeights);
    let spec = &params.spec;
    let (d, p) = (spec.d(), spec.p);
    let pred = beta_gamma(spec)?;
    let model: Model = balanced_init_linear(&[d, p, p], params.init_scale, params.train.seed)?.into();
    let traj = train(&model, &Objective::Cl(spec.clone()), &params.train)?;
    report.check(
        "converged",
        traj.stop == crate::training::StopReason::Converged,
        format!("{} steps, grad {:.2e}", traj.steps, traj.last().grad_norm),
    );
    let measured = traj.final_model.feature_weight_profile();
    let predicted = pred.predicted_profile(2);
    for l in 1..=2 {
        for i in 0..d {
            let (m, want) = (measured.layer(l)[i], predicted.layer(l)[i]);
            if pred.is_selected(i) && want > 0.0 {
                let rel = (m - want).abs() / want;
                report.check(
                    format!("layer {l} feature {}", i + 1),
                    rel <= params.rel_tol,
                    format!("measured {m:.6}, predicted {want:.6}, rel {rel:.2e}"),
                );
            } else if l == 2 {
                report.check(
                    format!("layer 2 feature {} vanishes", i + 1),
                    m <= params.abs_tol,
                    format!("measured {m:.3e}"),
                );
            }
        }
    }
    let live: Vec<usize> = pred.selected.iter().copied().filter(|&i| pred.gamma[i] > 0.0).collect();
    let pick = |l: usize| live.iter().map(|&i| measured.layer(l)[i]).collect::<Vec<_>>();
    let (f1, f2) = (flatness(&pick(1)), flatness(&pick(2)));
    report.check(
        "pre-projection flatter",
        f1 < f2,
        format!("max/min {f1:.4} (layer 1) vs {f2:.4} (layer 2)"),
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeltaSignParams {
    pub exact_pairs: usize,
    pub min_abs_delta: f64,
    pub trained_pairs: usize,
    pub max_trained_attempts: usize,
    pub max_trained_dim: usize,
    /// Minimum gap between the p-th and (p+1)-th `beta` for trained specs.
    pub beta_gap: f64,
    /// Relative measurement tolerance of a trained indicator.
    pub tau: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for DeltaSignParams {
    fn default() -> Self {
        Self {
            exact_pairs: 100,
            min_abs_delta: 1e-3,
            trained_pairs: 100,
            max_trained_attempts: 400,
            max_trained_dim: 5,
            beta_gap: 0.05,
            tau: 1e-3,
            train: TrainConfig {
                step_size: 0.01,
                max_steps: 300_000,
                grad_tol: 1e-7,
                record_every: 100_000,
                ..Default::default()
            },
            seed: 3,
        }
    }
}

fn random_pair(
    rng: &mut ChaCha8Rng,
    max_d: usize,
    phi: (f64, f64),
    alpha_max: f64,
    sigma_max: f64,
) -> Result<(PretrainSpec, DownstreamSpec)> {
    let d = rng.random_range(2..=max_d);
    let p = rng.random_range(1..=d);
    let spec = PretrainSpec::new(
        (0..d).map(|_| uniform(rng, phi.0, phi.1)).collect(),
        (0..d).map(|_| uniform(rng, 0.0, alpha_max)).collect(),
        uniform(rng, 0.0, sigma_max),
        p,
    )?;
    let pred = beta_gamma(&spec)?;
    let j = pred.selected[rng.random_range(0..pred.selected.len())];
    let ds = DownstreamSpec::new((0..d).map(|_| uniform(rng, 0.5, 2.0)).collect(), j + 1)?;
    Ok((spec, ds))
}

fn beta_gap(spec: &PretrainSpec) -> Result<f64> {
    let pred = beta_gamma(spec)?;
    if spec.p >= spec.d() {
        return Ok(f64::INFINITY);
    }
    let mut b = pred.beta.clone();
    b.sort_by(|x, y| y.total_cmp(x));
    Ok(b[spec.p - 1] - b[spec.p])
}

pub fn delta_sign(params: &DeltaSignParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::DeltaSign);
    let mut rng = stream_rng(params.seed, 0);
    let (mut agree, mut total) = (0, 0);
    let mut disagreements = vec![];
    while total < params.exact_pairs {
        let (spec, ds) = random_pair(&mut rng, 8, (0.2, 3.0), 1.0, 1.0)?;
        let pred = beta_gamma(&spec)?;
        let Ok(dl) = delta(&spec, &ds) else { continue };
        if pred.ambiguous || dl.abs() < params.min_abs_delta {
            continue;
        }
        let prof = pred.predicted_profile(2);
        let r1 = sample_complexity_indicator(prof.layer(1), &ds)?;
        let r2 = sample_complexity_indicator(prof.layer(2), &ds)?;
        total += 1;
        if (r1 - r2).signum() == dl.signum() {
            agree += 1;
        } else {
            disagreements.push(format!("delta {dl:.3e}, r1 {r1:.6}, r2 {r2:.6}"));
        }
    }
    report.check(
        "predicted profiles",
        agree == total,
        format!("{agree}/{total} agree{}", disagreements.iter().map(|d| format!("; {d}")).collect::<String>()),
    );

    let mut rng = stream_rng(params.seed, 1);
    let (mut agree, mut kept, mut attempts) = (0, 0, 0);
    let mut notes = vec![];
    while kept < params.trained_pairs && attempts < params.max_trained_attempts {
        attempts += 1;
        let (spec, ds) = random_pair(&mut rng, params.max_trained_dim, (0.5, 2.0), 0.6, 0.5)?;
        if beta_gamma(&spec)?.ambiguous || beta_gap(&spec)? < params.beta_gap {
            continue;
        }
        let Ok(dl) = delta(&spec, &ds) else { continue };
        if dl.abs() < params.min_abs_delta {
            continue;
        }
        let (d, p) = (spec.d(), spec.p);
        let seed = split_seed(params.seed, attempts as u64);
        let model: Model = balanced_init_linear(&[d, p, p], 0.1, seed)?.into();
        let traj = match train(&model, &Objective::Cl(spec.clone()), &params.train) {
            Ok(t) if t.stop == crate::training::StopReason::Converged => t,
            Ok(_) | Err(_) => {
                notes.push(format!("attempt {attempts}: training did not converge"));
                continue;
            }
        };
        let r1 = exhaustive_margin(&traj.final_model, 1, &ds)?.indicator();
        let r2 = exhaustive_margin(&traj.final_model, 2, &ds)?.indicator();
        if (r1 - r2).abs() < 5.0 * params.tau * r1.max(r2) {
            continue;
        }
        kept += 1;
        if (r1 - r2).signum() == dl.signum() {
            agree += 1;
        } else {
            notes.push(format!("delta {dl:.3e} vs measured r1 {r1:.5}, r2 {r2:.5}"));
        }
    }
    report.check(
        "trained models",
        kept == params.trained_pairs && agree == kept,
        format!(
            "{agree}/{kept} agree after {attempts} attempts{}",
            notes.iter().map(|n| format!("; {n}")).collect::<String>()
        ),
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorollaryParams {
    pub per_kind: usize,
    pub seed: u64,
}

impl Default for CorollaryParams {
    fn default() -> Self {
        Self { per_kind: 50, seed: 4 }
    }
}

pub fn corollary(params: &CorollaryParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Corollary);
    for kind in ScenarioKind::ALL {
        let mut negative = 0;
        let mut worst = f64::NEG_INFINITY;
        for k in 0..params.per_kind {
            let outcome = corollary_scenario(kind, split_seed(params.seed, k as u64))
                .and_then(|(s, ds)| delta(&s, &ds));
            match outcome {
                Ok(v) => {
                    worst = worst.max(v);
                    negative += usize::from(v < 0.0);
                }
                Err(e) => report.check(format!("{kind:?} #{k}"), false, e.to_string()),
            }
        }
        report.check(
            format!("{kind:?}"),
            negative == params.per_kind,
            format!("{negative}/{} negative, largest delta {worst:.3e}", params.per_kind),
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonlinearParams {
    pub runs_per_bias: usize,
    pub biases: Vec<f64>,
    pub train: TrainConfig,
    /// Upper bound on the post-projection weight of the destroyed feature.
    pub collapse_tol: f64,
    /// Slack on the lower bound `sqrt(b0)` of its pre-projection weight.
    pub survive_slack: f64,
    /// Slack allowed in the per-snapshot monotonicity checks.
    pub monotone_tol: f64,
    /// Samples for the collapse probes (supervised losses only).
    pub probe_samples: usize,
    pub probe: ProbeConfig,
    pub max_subclass_acc_post: f64,
    pub min_subclass_acc_pre: f64,
    pub seed: u64,
}

impl Default for NonlinearParams {
    fn default() -> Self {
        Self {
            runs_per_bias: 50,
            biases: vec![0.1, 0.25, 0.5],
            train: TrainConfig {
                step_size: 0.02,
                max_steps: 20_000_000,
                grad_tol: 2e-9,
                record_every: 5_000,
                ..Default::default()
            },
            collapse_tol: 1e-3,
            survive_slack: 1e-6,
            monotone_tol: 1e-12,
            probe_samples: 1000,
            probe: ProbeConfig { resolution: 1e-3, ..Default::default() },
            max_subclass_acc_post: 0.55,
            min_subclass_acc_pre: 0.95,
            seed: 5,
        }
    }
}

/// Initialization meeting the coordinate-2 hypotheses with initial output
/// `z0 = |w22| (|w12| - b0) - b0` drawn from `[0.05, 0.5]`.
pub fn conditioned_init(b0: f64, kind: LossKind, seed: u64) -> Result<DiagonalNet> {
    let mut rng = stream_rng(seed, 0);
    let w22 = uniform(&mut rng, 0.5, 1.0) * b0.sqrt();
    let z0 = uniform(&mut rng, 0.05, 0.5);
    let w12 = b0 + (z0 + b0) / w22;
    let (s12, s22, s1) = match kind {
        LossKind::Cl => (random_sign(&mut rng), random_sign(&mut rng), random_sign(&mut rng)),
        LossKind::Scl | LossKind::Mse => {
            let s = random_sign(&mut rng);
            (s, s, 1.0)
        }
    };
    let w11 = s1 * uniform(&mut rng, 1.0, 1.5);
    let w21 = s1 * uniform(&mut rng, 0.8, 1.2);
    let (w12, w22) = (s12 * w12, s22 * w22);
    debug_assert!(nonlinear_conditions_hold(w12, w22, b0, kind));
    init_diagonal(vec![w11, w12], vec![w21, w22], b0)
}

fn nonlinear_suite(suite: Suite, kinds: &[LossKind], params: &NonlinearParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(suite);
    let cl = Objective::Cl(PretrainSpec::new(vec![1.0, 1.0], vec![0.0, 1.0], 0.0, 2)?);
    let sub = SubclassSpec::uniform(2, 1.0)?;
    for &kind in kinds {
        let obj = match kind {
            LossKind::Cl => cl.clone(),
            LossKind::Scl => Objective::Scl(sub.clone()),
            LossKind::Mse => Objective::Mse(sub.clone()),
        };
        for (bi, &b0) in params.biases.iter().enumerate() {
            let mut failures = vec![];
            let mut worst_post: f64 = 0.0;
            let mut worst_margin = f64::INFINITY;
            let mut worst_sub_post: f64 = 0.0;
            let mut worst_sub_pre: f64 = 1.0;
            for k in 0..params.runs_per_bias {
                let seed = split_seed(params.seed, (bi * params.runs_per_bias + k) as u64);
                let net = conditioned_init(b0, kind, seed)?;
                let model: Model = net.into();
                let traj = match train(&model, &obj, &params.train) {
                    Ok(t) => t,
                    Err(e) => {
                        failures.push(format!("run {k}: {e}"));
                        continue;
                    }
                };
                if traj.stop != crate::training::StopReason::Converged {
                    failures.push(format!("run {k}: no convergence in {} steps", traj.steps));
                }
                let prof = traj.final_model.feature_weight_profile();
                let post = prof.layer(2)[1];
                let pre = prof.layer(1)[1];
                worst_post = worst_post.max(post);
                worst_margin = worst_margin.min(pre - b0.sqrt());
                if post > params.collapse_tol {
                    failures.push(format!("run {k}: ||f2(e2)|| = {post:.3e}"));
                }
                if pre < b0.sqrt() - params.survive_slack {
                    failures.push(format!("run {k}: ||f1(e2)|| = {pre:.6} < sqrt(b0)"));
                }
                // Coordinate 2 parameters: w1[1], w2[1], b1[1], b2[1].
                for w in traj.snapshots.windows(2) {
                    let (a, b) = (&w[0].params, &w[1].params);
                    let tol = params.monotone_tol;
                    let shrink = b[1].abs() <= a[1].abs() + tol && b[3].abs() <= a[3].abs() + tol;
                    let grow = b[5] >= a[5] - tol && b[7] >= a[7] - tol;
                    if !(shrink && grow) {
                        failures.push(format!("run {k}: monotonicity broken at step {}", w[1].step));
                        break;
                    }
                }
                if kind != LossKind::Cl {
                    let rep = collapse_metrics(
                        &traj.final_model,
                        &sub,
                        params.probe_samples,
                        seed,
                        &params.probe,
                    )?;
                    worst_sub_post = worst_sub_post.max(rep.subclass_accuracy[1]);
                    worst_sub_pre = worst_sub_pre.min(rep.subclass_accuracy[0]);
                    if rep.subclass_accuracy[1] > params.max_subclass_acc_post {
                        failures.push(format!("run {k}: layer-2 subclass acc {}", rep.subclass_accuracy[1]));
                    }
                    if rep.subclass_accuracy[0] < params.min_subclass_acc_pre {
                        failures.push(format!("run {k}: layer-1 subclass acc {}", rep.subclass_accuracy[0]));
                    }
                }
            }
            let mut detail = format!(
                "{} runs, max ||f2(e2)|| {worst_post:.3e}, min ||f1(e2)|| - sqrt(b0) {worst_margin:.3e}",
                params.runs_per_bias
            );
            if kind != LossKind::Cl {
                detail += &format!(
                    ", subclass acc layer1 >= {worst_sub_pre:.3}, layer2 <= {worst_sub_post:.3}"
                );
            }
            if !failures.is_empty() {
                detail += &format!("; {}", failures.join("; "));
            }
            report.check(format!("{kind:?} b0={b0}"), failures.is_empty(), detail);
        }
    }
    Ok(report)
}

pub fn nonlinear_cl(params: &NonlinearParams) -> Result<SuiteReport> {
    nonlinear_suite(Suite::NonlinearCl, &[LossKind::Cl], params)
}

pub fn collapse(params: &NonlinearParams) -> Result<SuiteReport> {
    nonlinear_suite(Suite::Collapse, &[LossKind::Scl, LossKind::Mse], params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionParams {
    pub nets: usize,
    pub max_dim: usize,
    pub rel_tol: f64,
    pub mc_samples: usize,
    pub mc_sigmas: f64,
    pub seed: u64,
}

impl Default for DecompositionParams {
    fn default() -> Self {
        Self { nets: 20, max_dim: 6, rel_tol: 1e-10, mc_samples: 20_000, mc_sigmas: 4.0, seed: 7 }
    }
}

fn random_diagonal(rng: &mut ChaCha8Rng, d: usize) -> Result<DiagonalNet> {
    let mut v = |lo: f64, hi: f64| (0..d).map(|_| uniform(rng, lo, hi)).collect::<Vec<_>>();
    let (w1, w2, b1, b2) = (v(-2.0, 2.0), v(-2.0, 2.0), v(0.0, 0.8), v(0.0, 0.8));
    DiagonalNet::new(w1, w2, b1, b2)
}

fn random_objectives(rng: &mut ChaCha8Rng, d: usize, sigma: bool) -> Result<Vec<Objective>> {
    let cl = PretrainSpec::new(
        (0..d).map(|_| uniform(rng, 0.3, 2.0)).collect(),
        (0..d).map(|_| uniform(rng, 0.0, 1.0)).collect(),
        if sigma { uniform(rng, 0.0, 0.5) } else { 0.0 },
        rng.random_range(1..=d),
    )?;
    let sub = SubclassSpec::new(d, (2..d).map(|_| uniform(rng, 0.3, 2.0)).collect())?;
    Ok(vec![Objective::Cl(cl), Objective::Scl(sub.clone()), Objective::Mse(sub)])
}

pub fn decomposition(params: &DecompositionParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Decomposition);
    let mut rng = stream_rng(params.seed, 0);
    for k in 0..params.nets {
        let d = rng.random_range(2..=params.max_dim);
        let net = random_diagonal(&mut rng, d)?;
        let model: Model = net.clone().into();
        for obj in random_objectives(&mut rng, d, false)? {
            let exact = enumerated_loss(&model, &obj)?;
            let parts = coordinate_losses_diagonal(&net, &obj)?;
            let total = parts.total();
            let rel = (exact - total).abs() / exact.abs().max(total.abs()).max(f64::MIN_POSITIVE);
            report.check(
                format!("net {k} (d={d}) {:?} decomposition", obj.kind()),
                rel <= params.rel_tol,
                format!("enumerated {exact:.12}, coordinate sum {total:.12}, rel {rel:.1e}"),
            );
            let mc = monte_carlo_loss(&model, &obj, params.mc_samples, split_seed(params.seed, k as u64 + 1))?;
            let diff = (mc.mean - exact).abs();
            // A constant loss has zero spread; the estimate must then be exact.
            let z = if mc.std_err > 0.0 { diff / mc.std_err } else { diff / (1e-12 * exact.abs().max(1.0)) };
            report.check(
                format!("net {k} (d={d}) {:?} Monte Carlo", obj.kind()),
                z <= params.mc_sigmas,
                format!("{:.6} ± {:.1e} vs {exact:.6} ({z:.2} SE)", mc.mean, mc.std_err),
            );
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinNormParams {
    pub matrices: usize,
    pub trials: usize,
    pub max_dim: usize,
    pub orthogonality_threshold: f64,
    pub seed: u64,
}

impl Default for MinNormParams {
    fn default() -> Self {
        Self { matrices: 20, trials: 100, max_dim: 8, orthogonality_threshold: 1e-6, seed: 8 }
    }
}

pub fn min_norm(params: &MinNormParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::MinNorm);
    let mut rng = stream_rng(params.seed, 0);
    for k in 0..params.matrices {
        // Full row rank (p <= d) so that equal norms force an orthogonal A.
        let d = rng.random_range(1..=params.max_dim);
        let p = rng.random_range(1..=d);
        let w = DMatrix::from_fn(p, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rep = min_norm_refactor_check(&w, params.trials, split_seed(params.seed, k as u64))?;
        let min_alt = rep.trials.iter().map(|t| t.norm).fold(f64::INFINITY, f64::min);
        report.check(
            format!("matrix {k} ({p}x{d})"),
            rep.balanced_is_minimal() && rep.strict_when_not_orthogonal(params.orthogonality_threshold),
            format!("balanced {:.6}, smallest alternative {min_alt:.6}", rep.balanced_norm),
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthParams {
    pub layers: usize,
    pub phi_hat: Vec<f64>,
    /// Weights of every feature; entry `j_star - 1` is replaced by the swept value.
    pub c: Vec<f64>,
    pub j_star: usize,
    pub sweep: Vec<f64>,
    pub scaling: DepthScaling,
    /// Swept values whose curve must have an interior minimum.
    pub u_shaped: Vec<f64>,
    /// Swept values whose optimal layer must be the last.
    pub last_layer: Vec<f64>,
}

impl Default for DepthParams {
    fn default() -> Self {
        let mut phi_hat = vec![1.0; 9];
        phi_hat.push(0.1);
        let mut c = vec![0.4; 9];
        c.push(0.6);
        Self {
            layers: 12,
            phi_hat,
            c,
            j_star: 9,
            sweep: vec![0.4, 0.45, 0.5, 0.55, 0.6],
            scaling: DepthScaling::PerLayer,
            u_shaped: vec![0.45, 0.5, 0.55],
            last_layer: vec![0.6],
        }
    }
}

pub fn depth(params: &DepthParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Depth);
    let ds = DownstreamSpec::new(params.phi_hat.clone(), params.j_star)?;
    let mut sweep = params.sweep.clone();
    sweep.sort_by(f64::total_cmp);
    let mut argmins = vec![];
    for &cj in &sweep {
        let mut c = params.c.clone();
        c[ds.relevant()] = cj;
        let curve = depth_curve(&c, &ds, params.layers, params.scaling)?;
        argmins.push(curve.optimal_layer);
        if params.u_shaped.contains(&cj) {
            report.check(
                format!("c*={cj} interior minimum"),
                curve.is_u_shaped(),
                format!("optimal layer {}", curve.optimal_layer),
            );
        }
        if params.last_layer.contains(&cj) {
            report.check(
                format!("c*={cj} last layer"),
                curve.optimal_layer == params.layers,
                format!("optimal layer {}", curve.optimal_layer),
            );
        }
    }
    report.check(
        "optimal layer shifts lower as c* decreases",
        argmins.windows(2).all(|w| w[0] <= w[1]),
        format!("c* {sweep:?} -> layers {argmins:?}"),
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightDecayParams {
    pub lambdas: Vec<f64>,
    pub b0: f64,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub train: TrainConfig,
    pub max_at_largest: f64,
    pub retain_small: f64,
    pub small_lambda: f64,
}

impl Default for WeightDecayParams {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 1e-4, 1e-2, 1.0],
            b0: 0.25,
            w1: vec![1.2, 2.0],
            w2: vec![1.0, 0.3],
            train: TrainConfig {
                step_size: 0.01,
                max_steps: 50_000,
                grad_tol: 0.0,
                record_every: 50_000,
                ..Default::default()
            },
            max_at_largest: 1e-2,
            retain_small: 0.9,
            small_lambda: 1e-4,
        }
    }
}

/// Final `||f_1(e_2)||` on the two-feature contrastive spec for each weight
/// decay strength.
pub fn weight_decay_curve(params: &WeightDecayParams) -> Result<Vec<(f64, f64)>> {
    let obj = Objective::Cl(PretrainSpec::new(vec![1.0, 1.0], vec![0.0, 1.0], 0.0, 2)?);
    let model: Model = init_diagonal(params.w1.clone(), params.w2.clone(), params.b0)?.into();
    params
        .lambdas
        .iter()
        .map(|&lambda| {
            let cfg = TrainConfig { weight_decay: lambda, ..params.train.clone() };
            let traj = train(&model, &obj, &cfg)?;
            Ok((lambda, traj.final_model.feature_weight_profile().layer(1)[1]))
        })
        .collect()
}

pub fn weight_decay(params: &WeightDecayParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::WeightDecay);
    let mut curve = weight_decay_curve(params)?;
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let shown = curve.iter().map(|(l, v)| format!("{l}: {v:.6}")).collect::<Vec<_>>().join(", ");
    report.check(
        "non-increasing in lambda",
        curve.windows(2).all(|w| w[1].1 <= w[0].1),
        shown.clone(),
    );
    if let Some(&(l, v)) = curve.last() {
        report.check(format!("lambda={l} removes the feature"), v <= params.max_at_largest, format!("{v:.3e}"));
    }
    let at = |lambda: f64| curve.iter().find(|(l, _)| *l == lambda).map(|p| p.1);
    if let (Some(base), Some(small)) = (at(0.0), at(params.small_lambda)) {
        report.check(
            format!("lambda={} keeps most of the feature", params.small_lambda),
            small >= params.retain_small * base,
            format!("{small:.6} vs {base:.6}"),
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReweightParams {
    pub spec: PretrainSpec,
    pub kappa: f64,
    pub downstream: DownstreamSpec,
    pub init_scale: f64,
    pub train: TrainConfig,
}

impl Default for ReweightParams {
    fn default() -> Self {
        Self {
            spec: PretrainSpec::new(vec![1.0; 5], vec![0.0, 0.25, 0.5, 0.75, 1.0], 0.01, 4)
                .expect("valid default spec"),
            kappa: 1.05,
            downstream: DownstreamSpec::new(vec![1.0; 5], 4).expect("valid default downstream"),
            init_scale: 0.01,
            train: TrainConfig {
                step_size: 0.02,
                max_steps: 2_000_000,
                grad_tol: 1e-8,
                seed: 11,
                record_every: 100_000,
                ..Default::default()
            },
        }
    }
}

/// Encoder feature weights and downstream indicator for a one-layer encoder
/// trained without a head and beneath a reweighting head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightComparison {
    pub plain_weights: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub plain_flatness: f64,
    pub head_flatness: f64,
    pub plain_r: f64,
    pub head_r: f64,
}

pub fn reweight_comparison(params: &ReweightParams) -> Result<ReweightComparison> {
    let spec = &params.spec;
    let (d, p) = (spec.d(), spec.p);
    let pred = beta_gamma(spec)?;
    let init = balanced_init_linear(&[d, p], params.init_scale, params.train.seed)?;
    let obj = Objective::Cl(spec.clone());
    let plain = train(&Model::from(init.clone()), &obj, &params.train)?.final_model;
    let headed = train(&Model::from(init).with_head(params.kappa)?, &obj, &params.train)?.final_model;
    let live: Vec<usize> = pred.selected.iter().copied().filter(|&i| pred.gamma[i] > 0.0).collect();
    let weights = |m: &Model| {
        let prof = m.feature_weight_profile();
        live.iter().map(|&i| prof.layer(1)[i]).collect::<Vec<_>>()
    };
    let (pw, hw) = (weights(&plain), weights(&headed));
    Ok(ReweightComparison {
        plain_flatness: flatness(&pw),
        head_flatness: flatness(&hw),
        plain_weights: pw,
        head_weights: hw,
        plain_r: exhaustive_margin(&plain, 1, &params.downstream)?.indicator(),
        head_r: exhaustive_margin(&headed, 1, &params.downstream)?.indicator(),
    })
}

pub fn reweight(params: &ReweightParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Reweight);
    let c = reweight_comparison(params)?;
    report.check(
        "encoder weights flatter under the head",
        (c.head_flatness - 1.0).abs() < (c.plain_flatness - 1.0).abs(),
        format!("max/min {:.4} with head vs {:.4} without", c.head_flatness, c.plain_flatness),
    );
    report.check(
        "downstream indicator not worse",
        c.head_r <= c.plain_r,
        format!("r {:.5} with head vs {:.5} without", c.head_r, c.plain_r),
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientParams {
    pub points: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub kink_margin: f64,
    pub seed: u64,
}

impl Default for GradientParams {
    fn default() -> Self {
        Self { points: 100, step: 1e-5, rel_tol: 1e-5, kink_margin: 1e-4, seed: 12 }
    }
}

fn random_linear(rng: &mut ChaCha8Rng, d: usize) -> Result<Model> {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![d];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=4));
    }
    let layers = dims
        .windows(2)
        .map(|w| DMatrix::from_fn(w[1], w[0], |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let model: Model = LinearStack::new(layers)?.into();
    if rng.random::<bool>() {
        model.with_head(uniform(rng, 1.01, 1.5))
    } else {
        Ok(model)
    }
}

fn objective_magnitudes(obj: &Objective) -> Vec<f64> {
    match obj {
        Objective::Cl(s) => s.phi.clone(),
        Objective::Scl(s) | Objective::Mse(s) => s.magnitudes(),
    }
}

pub fn gradients(params: &GradientParams) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Gradients);
    let mut rng = stream_rng(params.seed, 0);
    for family in ["linear", "diagonal"] {
        for (ki, kind) in [LossKind::Cl, LossKind::Scl, LossKind::Mse].into_iter().enumerate() {
            let mut worst: f64 = 0.0;
            let mut done = 0;
            let mut rejected = 0;
            while done < params.points {
                let d = rng.random_range(2..=4);
                let obj = random_objectives(&mut rng, d, family == "linear")?.swap_remove(ki);
                let model = if family == "linear" {
                    random_linear(&mut rng, d)?
                } else {
                    random_diagonal(&mut rng, d)?.into()
                };
                if kink_distance(&model, &objective_magnitudes(&obj)) < params.kink_margin {
                    rejected += 1;
                    continue;
                }
                let gc = check_population_gradient(&model, &obj, params.step)?;
                worst = worst.max(gc.rel_error);
                done += 1;
            }
            report.check(
                format!("{family} {kind:?}"),
                worst <= params.rel_tol,
                format!("{done} points, worst relative error {worst:.2e}, {rejected} near kinks skipped"),
            );
        }
    }
    Ok(report)
}

/// Parameters for every suite; each block defaults to the published setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub balancedness: BalancednessParams,
    pub feature_weights: FeatureWeightParams,
    pub delta_sign: DeltaSignParams,
    pub corollary: CorollaryParams,
    pub nonlinear: NonlinearParams,
    pub decomposition: DecompositionParams,
    pub min_norm: MinNormParams,
    pub depth: DepthParams,
    pub weight_decay: WeightDecayParams,
    pub reweight: ReweightParams,
    pub gradients: GradientParams,
}

pub fn run_suite(suite: Suite, params: &VerifyParams) -> Result<SuiteReport> {
    match suite {
        Suite::Balancedness => balancedness(&params.balancedness),
        Suite::FeatureWeights => feature_weights(&params.feature_weights),
        Suite::DeltaSign => delta_sign(&params.delta_sign),
        Suite::Corollary => corollary(&params.corollary),
        Suite::NonlinearCl => nonlinear_cl(&params.nonlinear),
        Suite::Collapse => collapse(&params.nonlinear),
        Suite::Decomposition => decomposition(&params.decomposition),
        Suite::MinNorm => min_norm(&params.min_norm),
        Suite::Depth => depth(&params.depth),
        Suite::WeightDecay => weight_decay(&params.weight_decay),
        Suite::Reweight => reweight(&params.reweight),
        Suite::Gradients => gradients(&params.gradients),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn conditioned_init_meets_hypotheses() {
        for kind in [LossKind::Cl, LossKind::Scl, LossKind::Mse] {
            for b0 in [0.1, 0.25, 0.5] {
                for seed in 0..20 {
                    let n = conditioned_init(b0, kind, seed).unwrap();
                    assert!(nonlinear_conditions_hold(n.w1[1], n.w2[1], b0, kind));
                    let z0 = n.w2[1].abs() * (n.w1[1].abs() - b0) - b0;
                    assert!((0.05 - 1e-12..=0.5 + 1e-12).contains(&z0));
                }
            }
        }
    }

    #[test]
    fn params_fill_defaults() {
        let p: VerifyParams = serde_json::from_str(r#"{"corollary": {"per_kind": 3}}"#).unwrap();
        assert_eq!(p.corollary.per_kind, 3);
        assert_eq!(p.corollary.seed, CorollaryParams::default().seed);
        assert_eq!(p.depth, DepthParams::default());
    }

    #[test]
    fn small_suites_pass() {
        let p = VerifyParams {
            corollary: CorollaryParams { per_kind: 5, seed: 1 },
            min_norm: MinNormParams { matrices: 3, trials: 20, ..Default::default() },
            ..Default::default()
        };
        for s in [Suite::Corollary, Suite::MinNorm, Suite::Depth] {
            let r = run_suite(s, &p).unwrap();
            assert!(r.passed, "{}", r.summary());
        }
    }
}
