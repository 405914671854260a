//! Spectral contrastive, supervised contrastive and squared-error losses.
//!
//! Three evaluation routes exist and are cross-checked in tests:
//!
//! * closed forms for linear stacks, written in terms of the diagonal second
//!   moments of the data;
//! * exact enumeration for discrete data (noise-free augmentation), either per
//!   coordinate or over the full joint outcome space;
//! * Monte-Carlo estimators, which work for any model and any noise level.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    draw_augmentation, draw_pretrain, draw_subclass, moments, stream_rng, MomentPair,
    PretrainSpec, SubclassSpec,
};
use crate::error::{check_dim, Error, Result};
use crate::models::{DiagonalNet, LinearStack, Model, Network};

/// Largest input dimension handled by joint enumeration (`4^d` pairs).
pub const MAX_ENUMERATION_DIM: usize = 12;

/// Sample count used when a population loss has no exact route.
pub const MC_FALLBACK_SAMPLES: usize = 20_000;
const MC_FALLBACK_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Cl,
    Scl,
    Mse,
}

/// A loss together with the data distribution it is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "lowercase")]
pub enum Objective {
    Cl(PretrainSpec),
    Scl(SubclassSpec),
    Mse(SubclassSpec),
}

impl Objective {
    pub fn kind(&self) -> LossKind {
        match self {
            Objective::Cl(_) => LossKind::Cl,
            Objective::Scl(_) => LossKind::Scl,
            Objective::Mse(_) => LossKind::Mse,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Objective::Cl(s) => s.d(),
            Objective::Scl(s) | Objective::Mse(s) => s.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::Cl(s) => s.validate(),
            Objective::Scl(s) | Objective::Mse(s) => s.validate(),
        }
    }

    /// Magnitude of each input coordinate.
    fn magnitudes(&self) -> Vec<f64> {
        match self {
            Objective::Cl(s) => s.phi.clone(),
            Objective::Scl(s) | Objective::Mse(s) => s.magnitudes(),
        }
    }

    /// True when every input coordinate takes exactly two values.
    pub fn is_discrete(&self) -> bool {
        match self {
            Objective::Cl(s) => s.sigma == 0.0,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Population,
    Empirical { batch: usize, seed: u64 },
}

/// A loss value with its Monte-Carlo standard error (0 when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, std_err: 0.0 }
    }

    fn from_terms(terms: &[f64]) -> Self {
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        let var = if terms.len() > 1 {
            terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std_err: (var / n).sqrt() }
    }
}

/// Per-coordinate terms of a coordinate-separable loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateLosses {
    pub per_coordinate: Vec<f64>,
    /// Data-only offset, `(1 - d) E[y^2]` for the squared error, else 0.
    pub constant: f64,
}

impl CoordinateLosses {
    pub fn total(&self) -> f64 {
        self.per_coordinate.iter().sum::<f64>() + self.constant
    }
}

fn check_model(model: &Model, obj: &Objective) -> Result<()> {
    obj.validate()?;
    check_dim(obj.d(), model.input_dim())
}

/// Diagonal moments `(M, M_tilde)` of the two views entering the contrastive
/// alignment term.
fn view_moments(obj: &Objective) -> Result<MomentPair> {
    match obj {
        Objective::Cl(s) => moments(s),
        Objective::Scl(s) | Objective::Mse(s) => {
            let m = s.magnitudes().iter().map(|v| v * v).collect();
            let mut m_tilde = vec![0.0; s.d];
            m_tilde[0] = 1.0;
            Ok(MomentPair { m, m_tilde })
        }
    }
}

fn spectral_closed_form(p: &DMatrix<f64>, m: &MomentPair) -> (f64, DMatrix<f64>) {
    let q = p.transpose() * p;
    let d = q.nrows();
    let mut loss = 0.0;
    let mut inner = DMatrix::zeros(d, d);
    for j in 0..d {
        loss -= 2.0 * q[(j, j)] * m.m_tilde[j];
        for i in 0..d {
            let v = m.m[i] * q[(i, j)] * m.m[j];
            loss += q[(i, j)] * v;
            inner[(i, j)] = v;
        }
        inner[(j, j)] -= m.m_tilde[j];
    }
    (loss, p * inner * 4.0)
}

/// `-2 tr(Q M_tilde) + tr(Q M Q M)` with `Q = W^T W` for a `p x d` matrix `W`.
pub fn cl_population_loss_linear(w: &DMatrix<f64>, m: &MomentPair) -> Result<f64> {
    check_dim(m.m.len(), w.ncols())?;
    check_dim(m.m.len(), m.m_tilde.len())?;
    Ok(spectral_closed_form(w, m).0)
}

fn mse_closed_form(p: &DMatrix<f64>, mags: &[f64]) -> (f64, DMatrix<f64>) {
    let v: Vec<f64> = (0..p.ncols()).map(|j| p.column(j).sum()).collect();
    let mut loss = 1.0 - 2.0 * v[0];
    let mut row = vec![0.0; v.len()];
    for j in 0..v.len() {
        let mj = mags[j] * mags[j];
        loss += mj * v[j] * v[j];
        row[j] = 2.0 * mj * v[j];
    }
    row[0] -= 2.0;
    let g = DMatrix::from_fn(p.nrows(), p.ncols(), |_, j| row[j]);
    (loss, g)
}

/// Gradient of each layer given `G = dL/dP` with `P = H W_L ... W_1`.
fn linear_param_grad(stack: &LinearStack, head: Option<Vec<f64>>, g: &DMatrix<f64>) -> Vec<f64> {
    let layers = stack.layers();
    let depth = layers.len();
    let mut left = DMatrix::identity(stack.output_dim(), stack.output_dim());
    if let Some(h) = head {
        for (k, f) in h.into_iter().enumerate() {
            left[(k, k)] = f;
        }
    }
    // suffix[l] = H W_L ... W_{l+2} (the factor left of layer l+1).
    let mut suffix = vec![DMatrix::zeros(0, 0); depth];
    suffix[depth - 1] = left;
    for l in (0..depth - 1).rev() {
        suffix[l] = &suffix[l + 1] * &layers[l + 1];
    }
    let mut out = Vec::with_capacity(layers.iter().map(|w| w.len()).sum());
    let mut prefix = DMatrix::identity(stack.input_dim(), stack.input_dim());
    for l in 0..depth {
        let dw = suffix[l].transpose() * g * prefix.transpose();
        out.extend_from_slice(dw.as_slice());
        prefix = &layers[l] * prefix;
    }
    out
}

fn linear_closed_form(model: &Model, stack: &LinearStack, obj: &Objective) -> Result<(f64, Vec<f64>)> {
    let mut p = stack.product();
    let head = model.head.map(|h| h.factors());
    if let Some(h) = &head {
        for (k, f) in h.iter().enumerate() {
            p.row_mut(k).scale_mut(*f);
        }
    }
    let (loss, g) = match obj {
        Objective::Mse(s) => mse_closed_form(&p, &s.magnitudes()),
        _ => spectral_closed_form(&p, &view_moments(obj)?),
    };
    Ok((loss, linear_param_grad(stack, head, &g)))
}

/// Sign branches of each view for one coordinate: `(sign, probability)`.
fn coordinate_branches(obj: &Objective, i: usize) -> Vec<(f64, f64)> {
    match obj {
        Objective::Cl(s) => s.augmentation_convention.sign_branches(s.alpha[i]).to_vec(),
        _ => vec![(1.0, 1.0)],
    }
}

fn coordinate_terms(net: &DiagonalNet, head: &[f64], obj: &Objective) -> CoordinateLosses {
    let mags = obj.magnitudes();
    let d = net.d();
    let g = |i: usize, x: f64| head[i] * net.output(i, x);
    let signs = [1.0, -1.0];
    let per_coordinate = (0..d)
        .map(|i| {
            let m = mags[i];
            match obj {
                Objective::Cl(_) | Objective::Scl(_) => {
                    let mut align = 0.0;
                    if matches!(obj, Objective::Scl(_)) && i > 0 {
                        for e1 in signs {
                            for e2 in signs {
                                align += 0.25 * g(i, e1 * m) * g(i, e2 * m);
                            }
                        }
                    } else {
                        let br = coordinate_branches(obj, i);
                        for eps in signs {
                            for &(s1, p1) in &br {
                                for &(s2, p2) in &br {
                                    align += 0.5 * p1 * p2 * g(i, s1 * eps * m) * g(i, s2 * eps * m);
                                }
                            }
                        }
                    }
                    let mut unif = 0.0;
                    for e1 in signs {
                        for e2 in signs {
                            unif += 0.25 * (g(i, e1 * m) * g(i, e2 * m)).powi(2);
                        }
                    }
                    -2.0 * align + unif
                }
                Objective::Mse(_) => {
                    let mut t = 0.0;
                    for eps in signs {
                        if i == 0 {
                            t += 0.5 * (g(i, eps * m) - eps).powi(2);
                        } else {
                            for y in signs {
                                t += 0.25 * (g(i, eps * m) - y).powi(2);
                            }
                        }
                    }
                    t
                }
            }
        })
        .collect();
    let constant = match obj {
        Objective::Mse(_) => 1.0 - d as f64,
        _ => 0.0,
    };
    CoordinateLosses { per_coordinate, constant }
}

/// Per-coordinate losses of a diagonal network by exact enumeration of each
/// coordinate's outcomes. Requires noise-free data.
pub fn coordinate_losses_diagonal(net: &DiagonalNet, obj: &Objective) -> Result<CoordinateLosses> {
    obj.validate()?;
    check_dim(obj.d(), net.d())?;
    if !obj.is_discrete() {
        return Err(Error::NotEvaluable(
            "exact enumeration needs noise-free augmentation (sigma = 0)".into(),
        ));
    }
    Ok(coordinate_terms(net, &vec![1.0; net.d()], obj))
}

/// Population loss and gradient through the per-coordinate decomposition,
/// written in terms of `z_i = g_i(m_i)` (each `g_i` is odd).
fn diagonal_coordinate_route(model: &Model, net: &DiagonalNet, obj: &Objective) -> (f64, Vec<f64>) {
    let d = net.d();
    let head = model.head.map(|h| h.factors()).unwrap_or_else(|| vec![1.0; d]);
    let mags = obj.magnitudes();
    let mut grad = vec![0.0; 4 * d];
    let mut loss = 0.0;
    for i in 0..d {
        let m = mags[i];
        let z = head[i] * net.output(i, m);
        let dz = match obj {
            Objective::Cl(s) => {
                let c = s.augmentation_convention.center_factor(s.alpha[i]);
                let a = c * c;
                loss += -2.0 * a * z * z + z.powi(4);
                -4.0 * a * z + 4.0 * z.powi(3)
            }
            Objective::Scl(_) => {
                let a = if i == 0 { 1.0 } else { 0.0 };
                loss += -2.0 * a * z * z + z.powi(4);
                -4.0 * a * z + 4.0 * z.powi(3)
            }
            Objective::Mse(_) => {
                let c = if i == 0 { 1.0 } else { 0.0 };
                loss += z * z - 2.0 * c * z + 1.0;
                2.0 * z - 2.0 * c
            }
        };
        net.accumulate_vjp(i, m, dz * head[i], &mut grad);
    }
    if matches!(obj, Objective::Mse(_)) {
        loss += 1.0 - d as f64;
    }
    (loss, grad)
}

fn sign_patterns(mags: &[f64]) -> DMatrix<f64> {
    let d = mags.len();
    DMatrix::from_fn(1 << d, d, |a, i| if (a >> i) & 1 == 0 { mags[i] } else { -mags[i] })
}

fn enumeration_setup(model: &Model, obj: &Objective) -> Result<()> {
    check_model(model, obj)?;
    if !obj.is_discrete() {
        return Err(Error::NotEvaluable(
            "joint enumeration needs noise-free augmentation (sigma = 0)".into(),
        ));
    }
    if obj.d() > MAX_ENUMERATION_DIM {
        return Err(Error::NotEvaluable(format!(
            "joint enumeration limited to d <= {MAX_ENUMERATION_DIM}"
        )));
    }
    Ok(())
}

/// Loss and gradient by enumerating every pair of input outcomes. Slow
/// (`4^d` pairs) but assumes nothing about the model's structure.
pub fn enumerated_loss_and_gradient(model: &Model, obj: &Objective) -> Result<(f64, Vec<f64>)> {
    enumeration_setup(model, obj)?;
    let d = obj.d();
    let n = 1usize << d;
    let pi = 1.0 / n as f64;
    let x = sign_patterns(&obj.magnitudes());
    let f = model.output_batch(&x)?;
    let p = f.ncols();
    let mut upstream = DMatrix::zeros(n, p);
    let mut loss = 0.0;

    if let Objective::Mse(_) = obj {
        for a in 0..n {
            let y = x[(a, 0)];
            let r = f.row(a).sum() - y;
            loss += pi * r * r;
            upstream.row_mut(a).fill(2.0 * pi * r);
        }
        return Ok((loss, model.vjp_batch(&x, &upstream)?));
    }

    // Positive-pair weight tables t[i][bit_a][bit_b] for the contrastive loss.
    let tables: Vec<[[f64; 2]; 2]> = match obj {
        Objective::Cl(s) => (0..d)
            .map(|i| {
                let br = s.augmentation_convention.sign_branches(s.alpha[i]);
                let mut t = [[0.0; 2]; 2];
                for eps in [1.0, -1.0] {
                    for &(s1, p1) in &br {
                        for &(s2, p2) in &br {
                            let ba = usize::from(s1 * eps < 0.0);
                            let bb = usize::from(s2 * eps < 0.0);
                            t[ba][bb] += 0.5 * p1 * p2;
                        }
                    }
                }
                t
            })
            .collect(),
        _ => Vec::new(),
    };
    let positive = |a: usize, b: usize| -> f64 {
        match obj {
            Objective::Cl(_) => tables
                .iter()
                .enumerate()
                .map(|(i, t)| t[(a >> i) & 1][(b >> i) & 1])
                .product(),
            _ => {
                if (a & 1) == (b & 1) {
                    2.0 * pi * pi
                } else {
                    0.0
                }
            }
        }
    };
    let u = pi * pi;
    for a in 0..n {
        for b in 0..n {
            let s = f.row(a).dot(&f.row(b));
            let w = positive(a, b);
            loss += -2.0 * w * s + u * s * s;
            let coef = 2.0 * (-2.0 * w + 2.0 * u * s);
            for k in 0..p {
                upstream[(a, k)] += coef * f[(b, k)];
            }
        }
    }
    Ok((loss, model.vjp_batch(&x, &upstream)?))
}

/// Loss by joint enumeration of all input outcomes.
pub fn enumerated_loss(model: &Model, obj: &Objective) -> Result<f64> {
    enumerated_loss_and_gradient(model, obj).map(|(l, _)| l)
}

fn draw_rows<F: FnMut(&mut [f64])>(n: usize, d: usize, mut fill: F) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    let mut buf = vec![0.0; d];
    for r in 0..n {
        fill(&mut buf);
        for (i, v) in buf.iter().enumerate() {
            m[(r, i)] = *v;
        }
    }
    m
}

fn positive_pairs<R: Rng>(obj: &Objective, n: usize, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = obj.d();
    let mut a = DMatrix::zeros(n, d);
    let mut b = DMatrix::zeros(n, d);
    let mut x = vec![0.0; d];
    let mut va = vec![0.0; d];
    let mut vb = vec![0.0; d];
    for r in 0..n {
        match obj {
            Objective::Cl(s) => {
                draw_pretrain(s, rng, &mut x);
                draw_augmentation(s, &x, rng, &mut va);
                draw_augmentation(s, &x, rng, &mut vb);
            }
            Objective::Scl(s) | Objective::Mse(s) => {
                let (y, _) = draw_subclass(s, rng, &mut va);
                draw_subclass(s, rng, &mut vb);
                vb[0] = y;
            }
        }
        for i in 0..d {
            a[(r, i)] = va[i];
            b[(r, i)] = vb[i];
        }
    }
    (a, b)
}

fn single_view<R: Rng>(obj: &Objective, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = obj.d();
    let mut x = vec![0.0; d];
    draw_rows(n, d, |out| match obj {
        Objective::Cl(s) => {
            draw_pretrain(s, rng, &mut x);
            draw_augmentation(s, &x, rng, out);
        }
        Objective::Scl(s) | Objective::Mse(s) => {
            draw_subclass(s, rng, out);
        }
    })
}

/// Independent-term Monte-Carlo estimate and the gradient of that estimate.
///
/// Each contrastive term uses a fresh positive pair and a fresh pair of
/// independent views: `-2 f(a).f(b) + (f(c).f(e))^2`.
pub fn monte_carlo_loss_and_gradient(
    model: &Model,
    obj: &Objective,
    n: usize,
    seed: u64,
) -> Result<(Estimate, Vec<f64>)> {
    check_model(model, obj)?;
    if n < 2 {
        return Err(Error::NotEvaluable("Monte-Carlo estimate needs n >= 2".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let nf = n as f64;
    if let Objective::Mse(_) = obj {
        let x = single_view(obj, n, &mut rng);
        let f = model.output_batch(&x)?;
        let mut terms = Vec::with_capacity(n);
        let mut up = DMatrix::zeros(n, f.ncols());
        for r in 0..n {
            let res = f.row(r).sum() - x[(r, 0)];
            terms.push(res * res);
            up.row_mut(r).fill(2.0 * res / nf);
        }
        return Ok((Estimate::from_terms(&terms), model.vjp_batch(&x, &up)?));
    }
    let (a, b) = positive_pairs(obj, n, &mut rng);
    let c = single_view(obj, n, &mut rng);
    let e = single_view(obj, n, &mut rng);
    let (fa, fb, fc, fe) = (
        model.output_batch(&a)?,
        model.output_batch(&b)?,
        model.output_batch(&c)?,
        model.output_batch(&e)?,
    );
    let mut terms = Vec::with_capacity(n);
    let ua = &fb * (-2.0 / nf);
    let ub = &fa * (-2.0 / nf);
    let (mut uc, mut ue) = (fe.clone(), fc.clone());
    for r in 0..n {
        let pos = fa.row(r).dot(&fb.row(r));
        let neg = fc.row(r).dot(&fe.row(r));
        terms.push(-2.0 * pos + neg * neg);
        uc.row_mut(r).scale_mut(2.0 * neg / nf);
        ue.row_mut(r).scale_mut(2.0 * neg / nf);
    }
    let mut grad = model.vjp_batch(&a, &ua)?;
    for (x, u) in [(&b, &ub), (&c, &uc), (&e, &ue)] {
        for (g, v) in grad.iter_mut().zip(model.vjp_batch(x, u)?) {
            *g += v;
        }
    }
    Ok((Estimate::from_terms(&terms), grad))
}

/// Independent-term Monte-Carlo estimate of the population loss.
pub fn monte_carlo_loss(model: &Model, obj: &Objective, n: usize, seed: u64) -> Result<Estimate> {
    check_model(model, obj)?;
    if n < 2 {
        return Err(Error::NotEvaluable("Monte-Carlo estimate needs n >= 2".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let terms: Vec<f64> = if let Objective::Mse(_) = obj {
        let x = single_view(obj, n, &mut rng);
        let f = model.output_batch(&x)?;
        (0..n).map(|r| (f.row(r).sum() - x[(r, 0)]).powi(2)).collect()
    } else {
        let (a, b) = positive_pairs(obj, n, &mut rng);
        let c = single_view(obj, n, &mut rng);
        let e = single_view(obj, n, &mut rng);
        let (fa, fb, fc, fe) = (
            model.output_batch(&a)?,
            model.output_batch(&b)?,
            model.output_batch(&c)?,
            model.output_batch(&e)?,
        );
        (0..n)
            .map(|r| -2.0 * fa.row(r).dot(&fb.row(r)) + fc.row(r).dot(&fe.row(r)).powi(2))
            .collect()
    };
    Ok(Estimate::from_terms(&terms))
}

/// Plug-in batch loss and its gradient. Positive pairs come from the same
/// batch index; the uniformity term averages over all `batch (batch - 1)`
/// cross-index pairs, excluding self-pairs.
pub fn empirical_loss_and_gradient(
    model: &Model,
    obj: &Objective,
    batch: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    check_model(model, obj)?;
    if batch < 2 {
        return Err(Error::NotEvaluable("empirical loss needs batch >= 2".into()));
    }
    let mut rng = stream_rng(seed, 1);
    let n = batch as f64;
    if let Objective::Mse(_) = obj {
        let x = single_view(obj, batch, &mut rng);
        let f = model.output_batch(&x)?;
        let mut loss = 0.0;
        let mut up = DMatrix::zeros(batch, f.ncols());
        for r in 0..batch {
            let res = f.row(r).sum() - x[(r, 0)];
            loss += res * res / n;
            up.row_mut(r).fill(2.0 * res / n);
        }
        return Ok((loss, model.vjp_batch(&x, &up)?));
    }
    let (a, b) = positive_pairs(obj, batch, &mut rng);
    let fa = model.output_batch(&a)?;
    let fb = model.output_batch(&b)?;
    let s = &fa * fb.transpose();
    let pair_norm = n * (n - 1.0);
    let mut loss = 0.0;
    let mut ds = DMatrix::zeros(batch, batch);
    for k in 0..batch {
        for l in 0..batch {
            if k == l {
                loss -= 2.0 * s[(k, k)] / n;
                ds[(k, k)] = -2.0 / n;
            } else {
                loss += s[(k, l)].powi(2) / pair_norm;
                ds[(k, l)] = 2.0 * s[(k, l)] / pair_norm;
            }
        }
    }
    let ua = &ds * &fb;
    let ub = ds.transpose() * &fa;
    let mut grad = model.vjp_batch(&a, &ua)?;
    for (g, v) in grad.iter_mut().zip(model.vjp_batch(&b, &ub)?) {
        *g += v;
    }
    Ok((loss, grad))
}

/// Plug-in contrastive loss on one sampled batch.
pub fn cl_empirical_loss(model: &Model, spec: &PretrainSpec, batch: usize, seed: u64) -> Result<f64> {
    empirical_loss_and_gradient(model, &Objective::Cl(spec.clone()), batch, seed).map(|(l, _)| l)
}

/// Population loss and gradient by the cheapest exact route available:
/// closed form for linear stacks, the coordinate decomposition for diagonal
/// networks on discrete data, otherwise a fixed-seed Monte-Carlo estimate.
pub fn population_loss_and_gradient(model: &Model, obj: &Objective) -> Result<(Estimate, Vec<f64>)> {
    check_model(model, obj)?;
    match &model.network {
        Network::Linear(s) => {
            linear_closed_form(model, s, obj).map(|(l, g)| (Estimate::exact(l), g))
        }
        Network::Diagonal(net) if obj.is_discrete() => {
            let (l, g) = diagonal_coordinate_route(model, net, obj);
            Ok((Estimate::exact(l), g))
        }
        Network::Diagonal(_) => {
            monte_carlo_loss_and_gradient(model, obj, MC_FALLBACK_SAMPLES, MC_FALLBACK_SEED)
        }
    }
}

pub fn population_loss(model: &Model, obj: &Objective) -> Result<Estimate> {
    population_loss_and_gradient(model, obj).map(|(e, _)| e)
}

fn enumerated_or_population(model: &Model, obj: &Objective) -> Result<f64> {
    if obj.d() <= MAX_ENUMERATION_DIM {
        enumerated_loss(model, obj)
    } else {
        population_loss(model, obj).map(|e| e.mean)
    }
}

/// Supervised contrastive loss on subclass data.
pub fn scl_population_loss(model: &Model, spec: &SubclassSpec) -> Result<f64> {
    enumerated_or_population(model, &Objective::Scl(spec.clone()))
}

/// `E[(1^T f(x) - y)^2]` on subclass data.
pub fn mse_population_loss(model: &Model, spec: &SubclassSpec) -> Result<f64> {
    enumerated_or_population(model, &Objective::Mse(spec.clone()))
}

/// Loss value and gradient with respect to all trainable parameters.
pub fn loss_and_gradient(model: &Model, obj: &Objective, mode: GradientMode) -> Result<(f64, Vec<f64>)> {
    match mode {
        GradientMode::Population => population_loss_and_gradient(model, obj).map(|(e, g)| (e.mean, g)),
        GradientMode::Empirical { batch, seed } => empirical_loss_and_gradient(model, obj, batch, seed),
    }
}

pub fn gradient(model: &Model, obj: &Objective, mode: GradientMode) -> Result<Vec<f64>> {
    loss_and_gradient(model, obj, mode).map(|(_, g)| g)
}
