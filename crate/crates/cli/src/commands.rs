use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use projhead_core::data::{split_seed, DownstreamSpec};
use projhead_core::evaluation::{exhaustive_margin, probe_downstream, ProbeConfig};
use projhead_core::losses::Objective;
use projhead_core::models::Model;
use projhead_core::theory::{beta_gamma, delta, depth_curve, sample_complexity_indicator, DepthCurve};
use projhead_core::training::{train, TrainConfig};
use projhead_core::verify::{run_suite, Suite, SuiteReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{build_model, parse_head, ExperimentConfig, Head, LoadedConfig};
use crate::manifest::{Invariant, Outputs, RunManifest, SeedOutcome};

/// Distinguishes bad input from failures while running.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

fn config<T>(r: Result<T>) -> CmdResult<T> {
    r.map_err(Failure::Config)
}

fn runtime<T>(r: Result<T>) -> CmdResult<T> {
    r.map_err(Failure::Runtime)
}

pub struct Options {
    pub out: Option<PathBuf>,
    pub seeds: Option<usize>,
    pub jobs: usize,
    pub suites: Vec<Suite>,
}

fn experiment_dir(cfg: &ExperimentConfig, opts: &Options) -> PathBuf {
    let base = opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    base.join(&cfg.id)
}

fn pool(jobs: usize) -> CmdResult<rayon::ThreadPool> {
    runtime(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| anyhow!(e)))
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    fill(&mut w)?;
    w.into_inner().map_err(|e| anyhow!("flushing csv: {e}"))
}

fn write_file(root: &Path, rel: &str, body: &[u8]) -> Result<String> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(rel.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct TheoryReport {
    beta: Vec<f64>,
    gamma: Vec<f64>,
    selected: Vec<usize>,
    ambiguous: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    indicators: Vec<f64>,
}

pub fn predict(loaded: &LoadedConfig, opts: &Options) -> CmdResult<RunManifest> {
    let cfg = &loaded.config;
    let explicit_c = cfg.depth.as_ref().is_some_and(|d| d.c.is_some());
    if cfg.pretrain.is_none() && !explicit_c {
        return Err(Failure::Config(anyhow!("predict needs a 'pretrain' block or explicit depth.c")));
    }
    if cfg.depth.is_some() && cfg.downstream.is_none() {
        return Err(Failure::Config(anyhow!("a 'depth' block needs a 'downstream' block")));
    }
    let layers = match (&cfg.model, cfg.head) {
        (crate::config::ModelConfig::Linear { depth, .. }, Head::Projection) => *depth,
        _ => 2,
    };
    let dir = experiment_dir(cfg, opts);
    let mut manifest = RunManifest::new("predict", &cfg.id, &loaded.hash);
    let mut out = runtime(Outputs::new(dir.clone()))?;

    let mut full_weights = None;
    if let Some(spec) = &cfg.pretrain {
        let pred = config(beta_gamma(spec).map_err(Into::into))?;
        let profile = pred.predicted_profile(layers);
        full_weights = Some(pred.full_model_weights());
        let mut report = TheoryReport {
            beta: pred.beta.clone(),
            gamma: pred.gamma.clone(),
            selected: pred.selected.iter().map(|i| i + 1).collect(),
            ambiguous: pred.ambiguous,
            delta: None,
            delta_error: None,
            indicators: vec![],
        };
        if let Some(ds) = &cfg.downstream {
            match delta(spec, ds) {
                Ok(v) => {
                    report.delta = Some(v);
                    report.indicators = (1..=layers)
                        .map(|l| sample_complexity_indicator(profile.layer(l), ds).unwrap_or(f64::NAN))
                        .collect();
                }
                Err(e) => report.delta_error = Some(e.to_string()),
            }
        }
        runtime(out.write_json("theory.json", &report))?;
        let gamma_csv = csv_bytes(&["feature", "beta", "gamma", "selected"], |w| {
            for i in 0..pred.d() {
                w.write_record([
                    (i + 1).to_string(),
                    pred.beta[i].to_string(),
                    pred.gamma[i].to_string(),
                    pred.is_selected(i).to_string(),
                ])?;
            }
            Ok(())
        });
        runtime(gamma_csv.and_then(|b| out.write("gamma.csv", &b)))?;
        let profile_csv = csv_bytes(&["layer", "feature", "weight"], |w| {
            for l in 1..=layers {
                for (i, v) in profile.layer(l).iter().enumerate() {
                    w.write_record([l.to_string(), (i + 1).to_string(), v.to_string()])?;
                }
            }
            Ok(())
        });
        runtime(profile_csv.and_then(|b| out.write("profile.csv", &b)))?;
    }

    if let (Some(dc), Some(ds)) = (&cfg.depth, &cfg.downstream) {
        let base = dc.c.clone().or(full_weights).expect("checked above");
        let j = ds.relevant();
        if base.len() != ds.d() {
            return Err(Failure::Config(anyhow!("depth.c has {} entries, expected {}", base.len(), ds.d())));
        }
        let values = if dc.sweep.is_empty() { vec![base[j]] } else { dc.sweep.clone() };
        let curves: Vec<DepthCurve> = config(
            values
                .iter()
                .map(|&cj| {
                    let mut c = base.clone();
                    c[j] = cj;
                    depth_curve(&c, ds, dc.layers, dc.scaling).map_err(Into::into)
                })
                .collect(),
        )?;
        let body = csv_bytes(&["c_star", "layer", "r"], |w| {
            for (cj, curve) in values.iter().zip(&curves) {
                for (l, r) in curve.r.iter().enumerate() {
                    w.write_record([cj.to_string(), (l + 1).to_string(), r.to_string()])?;
                }
            }
            Ok(())
        });
        runtime(body.and_then(|b| out.write("depth_curve.csv", &b)))?;
        let body = csv_bytes(&["c_star", "optimal_layer", "interior"], |w| {
            for (cj, curve) in values.iter().zip(&curves) {
                w.write_record([cj.to_string(), curve.optimal_layer.to_string(), curve.is_u_shaped().to_string()])?;
            }
            Ok(())
        });
        runtime(body.and_then(|b| out.write("depth_optimal.csv", &b)))?;
        let mut order: Vec<(f64, usize)> =
            values.iter().copied().zip(curves.iter().map(|c| c.optimal_layer)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        manifest.invariants.push(Invariant {
            name: "optimal layer non-increasing as c_star decreases".into(),
            passed: order.windows(2).all(|w| w[0].1 <= w[1].1),
            detail: format!("{order:?}"),
        });
    }
    manifest.files = out.files();
    runtime(manifest.finish(&dir))
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    stop: String,
    steps: usize,
    final_loss: f64,
    final_grad_norm: f64,
    step_size: f64,
    halvings: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    indicators: Vec<Option<f64>>,
}

fn layer_indicators(model: &Model, ds: Option<&DownstreamSpec>) -> Vec<Option<f64>> {
    let Some(ds) = ds else { return vec![] };
    if ds.d() != model.input_dim() || ds.d() > 12 {
        return vec![];
    }
    (1..=model.depth())
        .map(|l| exhaustive_margin(model, l, ds).ok().map(|m| m.indicator()))
        .collect()
}

fn train_seed(cfg: &ExperimentConfig, obj: &Objective, root: &Path, seed: u64) -> Result<(Vec<String>, String)> {
    let model = build_model(&cfg.model, cfg.head, obj, seed)?;
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    let traj = train(&model, obj, &tc)?;
    let dir = seed.to_string();
    let mut files = vec![];
    let mut buf = vec![];
    traj.write_csv(&mut buf)?;
    files.push(write_file(root, &format!("{dir}/trajectory.csv"), &buf)?);
    files.push(write_file(root, &format!("{dir}/checkpoint.json"), traj.final_model.to_json().as_bytes())?);
    let prof = traj.final_model.feature_weight_profile();
    let body = csv_bytes(&["layer", "feature", "weight"], |w| {
        for (l, row) in prof.weights.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                w.write_record([(l + 1).to_string(), (i + 1).to_string(), v.to_string()])?;
            }
        }
        Ok(())
    })?;
    files.push(write_file(root, &format!("{dir}/profile.csv"), &body)?);
    let last = traj.last();
    let summary = TrainSummary {
        seed,
        stop: format!("{:?}", traj.stop).to_lowercase(),
        steps: traj.steps,
        final_loss: last.loss,
        final_grad_norm: last.grad_norm,
        step_size: traj.step_size,
        halvings: traj.halvings,
        indicators: layer_indicators(&traj.final_model, cfg.downstream.as_ref()),
    };
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    files.push(write_file(root, &format!("{dir}/summary.json"), text.as_bytes())?);
    let line = format!("{} after {} steps, loss {}", summary.stop, summary.steps, summary.final_loss);
    Ok((files, line))
}

pub fn train_cmd(loaded: &LoadedConfig, opts: &Options) -> CmdResult<RunManifest> {
    let cfg = &loaded.config;
    let obj = config(cfg.objective())?;
    // Surface shape errors before any run starts.
    config(build_model(&cfg.model, cfg.head, &obj, 0))?;
    let seeds = cfg.seeds_or(opts.seeds);
    let dir = experiment_dir(cfg, opts);
    let mut out = runtime(Outputs::new(dir.clone()))?;
    let mut manifest = RunManifest::new("train", &cfg.id, &loaded.hash);
    let results: Vec<_> =
        pool(opts.jobs)?.install(|| seeds.par_iter().map(|&s| (s, train_seed(cfg, &obj, &dir, s))).collect());
    for (seed, r) in results {
        match r {
            Ok((files, line)) => {
                out.extend(files);
                manifest.outcomes.push(SeedOutcome { seed, point: None, ok: true, summary: line });
            }
            Err(e) => manifest.outcomes.push(SeedOutcome { seed, point: None, ok: false, summary: format!("{e:#}") }),
        }
    }
    manifest.files = out.files();
    runtime(manifest.finish(&dir))
}

pub fn verify_cmd(loaded: &LoadedConfig, opts: &Options) -> CmdResult<(RunManifest, Vec<SuiteReport>)> {
    let cfg = &loaded.config;
    // Suites named on the command line replace the config's list.
    let mut suites = if opts.suites.is_empty() { cfg.verify.suites.clone() } else { opts.suites.clone() };
    if suites.is_empty() {
        suites = Suite::ALL.to_vec();
    }
    let mut seen = vec![];
    suites.retain(|s| {
        let fresh = !seen.contains(s);
        seen.push(*s);
        fresh
    });
    let dir = experiment_dir(cfg, opts);
    let mut out = runtime(Outputs::new(dir.clone()))?;
    let mut manifest = RunManifest::new("verify", &cfg.id, &loaded.hash);
    let params = &cfg.verify.params;
    let reports: Vec<_> =
        pool(opts.jobs)?.install(|| suites.par_iter().map(|&s| run_suite(s, params)).collect());
    let mut done = vec![];
    for (suite, r) in suites.iter().zip(reports) {
        let report = runtime(r.map_err(|e| anyhow!("suite {suite}: {e}")))?;
        runtime(out.write_json(&format!("verify/{suite}.json"), &report))?;
        manifest.invariants.push(Invariant {
            name: suite.to_string(),
            passed: report.passed,
            detail: report.summary(),
        });
        done.push(report);
    }
    manifest.files = out.files();
    Ok((runtime(manifest.finish(&dir))?, done))
}

#[derive(Debug, Clone, Serialize)]
struct GridPoint {
    head: Head,
    alpha_j: Option<f64>,
    phi_j: Option<f64>,
    weight_decay: Option<f64>,
    kappa: Option<f64>,
}

fn grid_points(cfg: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let g = &cfg.sweep.grid;
    let axes = [&g.alpha_j, &g.phi_j, &g.weight_decay, &g.kappa];
    if axes.iter().all(|a| a.is_empty()) && g.head.is_empty() {
        return Ok(vec![]);
    }
    let opt_axis = |v: &Vec<f64>| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let heads: Vec<String> = if g.head.is_empty() { vec![cfg.head.name().to_string()] } else { g.head.clone() };
    let base_kappa = match cfg.head {
        Head::Reweight { kappa } => kappa,
        _ => 1.05,
    };
    let mut points = vec![];
    for h in &heads {
        for a in opt_axis(&g.alpha_j) {
            for p in opt_axis(&g.phi_j) {
                for wd in opt_axis(&g.weight_decay) {
                    // The kappa axis only applies to the reweighting head.
                    let kappas = if h == "reweight" { opt_axis(&g.kappa) } else { vec![None] };
                    for k in kappas {
                        let head = parse_head(h, k.unwrap_or(base_kappa))?;
                        points.push(GridPoint { head, alpha_j: a, phi_j: p, weight_decay: wd, kappa: k });
                    }
                }
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Default, Serialize)]
struct RunMetrics {
    loss: f64,
    pre_weight: f64,
    post_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_pre: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_post: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc_pre: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc_post: Option<f64>,
}

impl RunMetrics {
    fn named(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("loss", Some(self.loss)),
            ("pre_weight", Some(self.pre_weight)),
            ("post_weight", Some(self.post_weight)),
            ("r_pre", self.r_pre),
            ("r_post", self.r_post),
            ("acc_pre", self.acc_pre),
            ("acc_post", self.acc_post),
        ]
    }
}

fn sweep_feature(cfg: &ExperimentConfig) -> usize {
    cfg.sweep.feature.or(cfg.downstream.as_ref().map(|d| d.j_star)).unwrap_or(1)
}

fn point_objective(cfg: &ExperimentConfig, pt: &GridPoint) -> Result<Objective> {
    let j = sweep_feature(cfg) - 1;
    let mut pretrain = cfg.pretrain.clone();
    if pt.alpha_j.is_some() || pt.phi_j.is_some() {
        let s = pretrain.as_mut().context("alpha_j and phi_j axes need a 'pretrain' block")?;
        if j >= s.d() {
            bail!("sweep feature {} outside 1..={}", j + 1, s.d());
        }
        if let Some(a) = pt.alpha_j {
            s.alpha[j] = a;
        }
        if let Some(p) = pt.phi_j {
            s.phi[j] = p;
        }
        s.validate()?;
    }
    crate::config::objective_for(cfg.loss, pretrain.as_ref(), cfg.subclass.as_ref())
}

fn sweep_run(cfg: &ExperimentConfig, pt: &GridPoint, seed: u64) -> Result<RunMetrics> {
    let obj = point_objective(cfg, pt)?;
    let model = build_model(&cfg.model, pt.head, &obj, seed)?;
    let tc = TrainConfig {
        seed,
        weight_decay: pt.weight_decay.unwrap_or(cfg.train.weight_decay),
        ..cfg.train.clone()
    };
    let traj = train(&model, &obj, &tc)?;
    let m = &traj.final_model;
    let j = sweep_feature(cfg) - 1;
    let prof = m.feature_weight_profile();
    let post_layer = m.depth();
    let mut metrics = RunMetrics {
        loss: traj.last().loss,
        pre_weight: prof.layer(1)[j],
        post_weight: prof.layer(post_layer)[j],
        ..Default::default()
    };
    if let Some(ds) = &cfg.downstream {
        if ds.d() == m.input_dim() {
            if ds.d() <= 12 {
                metrics.r_pre = exhaustive_margin(m, 1, ds).ok().map(|r| r.indicator());
                metrics.r_post = exhaustive_margin(m, post_layer, ds).ok().map(|r| r.indicator());
            }
            let probe = |layer: usize| {
                let s = split_seed(seed, 0x9e37);
                probe_downstream(m, layer, ds, cfg.sweep.probe_train, cfg.sweep.probe_test, s, &ProbeConfig::default())
                    .ok()
                    .map(|p| p.accuracy)
            };
            metrics.acc_pre = probe(1);
            metrics.acc_post = probe(post_layer);
        }
    }
    Ok(metrics)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn sweep_cmd(loaded: &LoadedConfig, opts: &Options) -> CmdResult<RunManifest> {
    let cfg = &loaded.config;
    let points = config(grid_points(cfg))?;
    let seeds = cfg.seeds_or(opts.seeds);
    let runs = points.len() * seeds.len();
    if runs > cfg.sweep.max_runs {
        return Err(Failure::Config(anyhow!(
            "grid has {runs} runs, above the budget of {}",
            cfg.sweep.max_runs
        )));
    }
    for pt in &points {
        let obj = config(point_objective(cfg, pt))?;
        config(build_model(&cfg.model, pt.head, &obj, 0))?;
    }
    let dir = experiment_dir(cfg, opts);
    let mut out = runtime(Outputs::new(dir.clone()))?;
    let mut manifest = RunManifest::new("sweep", &cfg.id, &loaded.hash);
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let results: Vec<_> = pool(opts.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| {
                let r = sweep_run(cfg, &points[p], s).and_then(|m| {
                    let text = serde_json::to_string_pretty(&m)? + "\n";
                    let f = write_file(&dir, &format!("p{p}/{s}/metrics.json"), text.as_bytes())?;
                    Ok((m, f))
                });
                (p, s, r)
            })
            .collect()
    });
    let mut by_point: BTreeMap<usize, Vec<RunMetrics>> = BTreeMap::new();
    for (p, seed, r) in results {
        match r {
            Ok((m, f)) => {
                out.extend([f]);
                manifest.outcomes.push(SeedOutcome {
                    seed,
                    point: Some(p),
                    ok: true,
                    summary: format!("loss {}, pre {}, post {}", m.loss, m.pre_weight, m.post_weight),
                });
                by_point.entry(p).or_default().push(m);
            }
            Err(e) => manifest.outcomes.push(SeedOutcome {
                seed,
                point: Some(p),
                ok: false,
                summary: format!("{e:#}"),
            }),
        }
    }
    if !points.is_empty() {
        let body = csv_bytes(
            &["point", "head", "alpha_j", "phi_j", "weight_decay", "kappa", "metric", "mean", "std", "n"],
            |w| {
                for (p, ms) in &by_point {
                    let pt = &points[*p];
                    let names: Vec<&str> = ms[0].named().iter().map(|(n, _)| *n).collect();
                    for name in names {
                        let vals: Vec<f64> = ms
                            .iter()
                            .filter_map(|m| m.named().into_iter().find(|(n, _)| *n == name).and_then(|(_, v)| v))
                            .collect();
                        if vals.is_empty() {
                            continue;
                        }
                        let (mean, std) = mean_std(&vals);
                        w.write_record([
                            p.to_string(),
                            pt.head.name().to_string(),
                            opt(pt.alpha_j),
                            opt(pt.phi_j),
                            opt(pt.weight_decay),
                            opt(pt.kappa),
                            name.to_string(),
                            mean.to_string(),
                            std.to_string(),
                            vals.len().to_string(),
                        ])?;
                    }
                }
                Ok(())
            },
        );
        runtime(body.and_then(|b| out.write("sweep.csv", &b)))?;
        if cfg.sweep.grid.weight_decay.len() > 1 {
            manifest.invariants.push(decay_invariant(&points, &by_point));
        }
    }
    manifest.files = out.files();
    runtime(manifest.finish(&dir))
}

/// Mean pre-projection weight is non-increasing in the decay strength for
/// every combination of the other axes.
fn decay_invariant(points: &[GridPoint], by_point: &BTreeMap<usize, Vec<RunMetrics>>) -> Invariant {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (p, ms) in by_point {
        let pt = &points[*p];
        let key = format!("{}|{:?}|{:?}|{:?}", pt.head.name(), pt.alpha_j, pt.phi_j, pt.kappa);
        let (mean, _) = mean_std(&ms.iter().map(|m| m.pre_weight).collect::<Vec<_>>());
        groups.entry(key).or_default().push((pt.weight_decay.unwrap_or(0.0), mean));
    }
    let mut passed = true;
    let mut detail = vec![];
    for (key, mut v) in groups {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ok = v.windows(2).all(|w| w[1].1 <= w[0].1);
        passed &= ok;
        detail.push(format!("{key}: {v:?}"));
    }
    Invariant { name: "pre_weight non-increasing in weight_decay".into(), passed, detail: detail.join("; ") }
}
