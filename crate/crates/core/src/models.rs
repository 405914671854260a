//! Model families: deep linear stacks, the symmetrized-ReLU diagonal network
//! and the fixed reweighting head.
//!
//! Parameters are exchanged with the optimizer as one flat vector. Linear
//! stacks flatten layer by layer in column-major order; diagonal networks
//! flatten as `w1, w2, b1, b2`. The reweighting head has no parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{check_dim, invalid, Result};

/// `relu(a - b) - relu(-a - b)`.
#[inline]
pub fn sym_relu(a: f64, b: f64) -> f64 {
    (a - b).max(0.0) - (-a - b).max(0.0)
}

/// Partial derivatives of [`sym_relu`] in `a` and `b`, taking 0 at the kinks.
#[inline]
pub fn sym_relu_grad(a: f64, b: f64) -> (f64, f64) {
    let hi = if a > b { 1.0 } else { 0.0 };
    let lo = if a < -b { 1.0 } else { 0.0 };
    (hi + lo, lo - hi)
}

/// `f(x) = W_L ... W_1 x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStack {
    layers: Vec<DMatrix<f64>>,
}

impl LinearStack {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("a linear stack needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].nrows(), pair[1].ncols())?;
        }
        if layers.iter().any(|w| w.nrows() == 0 || w.ncols() == 0) {
            return Err(invalid("layer with an empty dimension"));
        }
        Ok(Self { layers })
    }

    /// Stack of identity-shaped zero layers for `dims = [d, p, p, ...]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(invalid("dims must list the input and at least one layer width"));
        }
        Self::new(dims.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect())
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|w| w.nrows()));
        dims
    }

    /// `W_upto ... W_1`.
    pub fn partial_product(&self, upto: usize) -> DMatrix<f64> {
        let mut p = self.layers[0].clone();
        for w in &self.layers[1..upto] {
            p = w * p;
        }
        p
    }

    /// End-to-end matrix `W_L ... W_1`.
    pub fn product(&self) -> DMatrix<f64> {
        self.partial_product(self.layers.len())
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }
}

/// Two-layer network processing each coordinate independently:
/// `f1 = sigma(w1 * x, b1)`, `f2 = sigma(w2 * f1, b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalNet {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DiagonalNet {
    pub fn new(w1: Vec<f64>, w2: Vec<f64>, b1: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        let d = w1.len();
        if d == 0 {
            return Err(invalid("diagonal network needs at least one coordinate"));
        }
        for v in [&w2, &b1, &b2] {
            check_dim(d, v.len())?;
        }
        Ok(Self { w1, w2, b1, b2 })
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d])
    }

    pub fn d(&self) -> usize {
        self.w1.len()
    }

    /// Hidden value of coordinate `i` for scalar input `x`.
    #[inline]
    pub fn hidden(&self, i: usize, x: f64) -> f64 {
        sym_relu(self.w1[i] * x, self.b1[i])
    }

    /// Output value of coordinate `i` for scalar input `x`.
    #[inline]
    pub fn output(&self, i: usize, x: f64) -> f64 {
        sym_relu(self.w2[i] * self.hidden(i, x), self.b2[i])
    }

    /// Accumulates the parameter gradient of coordinate `i` for scalar input
    /// `x` and upstream derivative `u` on the coordinate output.
    #[inline]
    pub(crate) fn accumulate_vjp(&self, i: usize, x: f64, u: f64, grad: &mut [f64]) {
        let d = self.d();
        let a1 = self.w1[i] * x;
        let h = sym_relu(a1, self.b1[i]);
        let a2 = self.w2[i] * h;
        let (ga2, gb2) = sym_relu_grad(a2, self.b2[i]);
        let (ga1, gb1) = sym_relu_grad(a1, self.b1[i]);
        let dh = u * ga2 * self.w2[i];
        grad[i] += dh * ga1 * x;
        grad[d + i] += u * ga2 * h;
        grad[2 * d + i] += dh * gb1;
        grad[3 * d + i] += u * gb2;
    }
}

/// Fixed head scaling output coordinate `k` (zero-based) by `kappa^-k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightHead {
    pub kappa: f64,
    pub dim: usize,
}

impl ReweightHead {
    pub fn new(kappa: f64, dim: usize) -> Result<Self> {
        let head = Self { kappa, dim };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 1.0) {
            return Err(invalid(format!("kappa must exceed 1, got {}", self.kappa)));
        }
        if self.dim == 0 {
            return Err(invalid("head dimension must be positive"));
        }
        Ok(())
    }

    pub fn factors(&self) -> Vec<f64> {
        (0..self.dim).map(|k| self.kappa.powi(-(k as i32))).collect()
    }

    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, r.len())?;
        Ok(r.iter().zip(self.factors()).map(|(v, f)| v * f).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Linear(LinearStack),
    Diagonal(DiagonalNet),
}

/// Per-layer feature weights: `weights[l][i] = ||f_{l+1}(e_i)||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeightProfile {
    pub weights: Vec<Vec<f64>>,
}

impl FeatureWeightProfile {
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Weights at one-based layer `l`.
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.weights[l - 1]
    }

    pub fn last(&self) -> &[f64] {
        &self.weights[self.weights.len() - 1]
    }
}

/// A trainable network optionally followed by a fixed reweighting head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub head: Option<ReweightHead>,
}

impl From<LinearStack> for Model {
    fn from(s: LinearStack) -> Self {
        Model { network: Network::Linear(s), head: None }
    }
}

impl From<DiagonalNet> for Model {
    fn from(n: DiagonalNet) -> Self {
        Model { network: Network::Diagonal(n), head: None }
    }
}

impl Model {
    /// Appends a reweighting head; the profile then gains one row.
    pub fn with_head(mut self, kappa: f64) -> Result<Self> {
        self.head = Some(ReweightHead::new(kappa, self.network_output_dim())?);
        Ok(self)
    }

    pub fn as_linear(&self) -> Option<&LinearStack> {
        match &self.network {
            Network::Linear(s) => Some(s),
            Network::Diagonal(_) => None,
        }
    }

    pub fn as_diagonal(&self) -> Option<&DiagonalNet> {
        match &self.network {
            Network::Diagonal(n) => Some(n),
            Network::Linear(_) => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.network {
            Network::Linear(s) => s.input_dim(),
            Network::Diagonal(n) => n.d(),
        }
    }

    fn network_output_dim(&self) -> usize {
        match &self.network {
            Network::Linear(s) => s.output_dim(),
            Network::Diagonal(n) => n.d(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.network_output_dim()
    }

    /// Trainable layers, excluding the head.
    pub fn network_depth(&self) -> usize {
        match &self.network {
            Network::Linear(s) => s.depth(),
            Network::Diagonal(_) => 2,
        }
    }

    /// Layers visible to [`Model::forward`], counting the head.
    pub fn depth(&self) -> usize {
        self.network_depth() + usize::from(self.head.is_some())
    }

    fn head_factors(&self) -> Option<Vec<f64>> {
        self.head.map(|h| h.factors())
    }

    /// Output of layer `upto` (one-based).
    pub fn forward(&self, x: &[f64], upto: usize) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        if upto == 0 || upto > self.depth() {
            return Err(invalid(format!("layer {upto} outside [1, {}]", self.depth())));
        }
        let net_layers = upto.min(self.network_depth());
        let mut out = match &self.network {
            Network::Linear(s) => {
                let v = s.partial_product(net_layers) * DVector::from_column_slice(x);
                v.as_slice().to_vec()
            }
            Network::Diagonal(n) => (0..n.d())
                .map(|i| {
                    if net_layers == 1 {
                        n.hidden(i, x[i])
                    } else {
                        n.output(i, x[i])
                    }
                })
                .collect(),
        };
        if upto > self.network_depth() {
            for (o, f) in out.iter_mut().zip(self.head_factors().unwrap()) {
                *o *= f;
            }
        }
        Ok(out)
    }

    /// Row-wise [`Model::forward`] on an `n x d` matrix.
    pub fn forward_batch(&self, x: &DMatrix<f64>, upto: usize) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        if upto == 0 || upto > self.depth() {
            return Err(invalid(format!("layer {upto} outside [1, {}]", self.depth())));
        }
        let net_layers = upto.min(self.network_depth());
        let mut out = match &self.network {
            Network::Linear(s) => x * s.partial_product(net_layers).transpose(),
            Network::Diagonal(n) => DMatrix::from_fn(x.nrows(), n.d(), |r, i| {
                if net_layers == 1 {
                    n.hidden(i, x[(r, i)])
                } else {
                    n.output(i, x[(r, i)])
                }
            }),
        };
        if upto > self.network_depth() {
            for (k, f) in self.head_factors().unwrap().into_iter().enumerate() {
                out.column_mut(k).scale_mut(f);
            }
        }
        Ok(out)
    }

    /// Final output (head included) for each row of `x`.
    pub fn output_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward_batch(x, self.depth())
    }

    /// Parameter gradient of `sum_r upstream[r] . f(x[r])`, where `f` is the
    /// final output including the head.
    pub fn vjp_batch(&self, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        check_dim(x.nrows(), upstream.nrows())?;
        check_dim(self.output_dim(), upstream.ncols())?;
        let mut u = upstream.clone();
        if let Some(f) = self.head_factors() {
            for (k, f) in f.into_iter().enumerate() {
                u.column_mut(k).scale_mut(f);
            }
        }
        let mut grad = vec![0.0; self.n_params()];
        match &self.network {
            Network::Linear(s) => {
                // Activations are stored row-wise: acts[l] is n x dim_l.
                let mut acts = Vec::with_capacity(s.depth());
                acts.push(x.clone());
                for w in &s.layers[..s.depth() - 1] {
                    let next = acts.last().unwrap() * w.transpose();
                    acts.push(next);
                }
                let mut offsets = Vec::with_capacity(s.depth());
                let mut off = 0;
                for w in &s.layers {
                    offsets.push(off);
                    off += w.len();
                }
                let mut g = u;
                for l in (0..s.depth()).rev() {
                    let dw = g.transpose() * &acts[l];
                    grad[offsets[l]..offsets[l] + dw.len()].copy_from_slice(dw.as_slice());
                    if l > 0 {
                        g = &g * &s.layers[l];
                    }
                }
            }
            Network::Diagonal(n) => {
                for r in 0..x.nrows() {
                    for i in 0..n.d() {
                        n.accumulate_vjp(i, x[(r, i)], u[(r, i)], &mut grad);
                    }
                }
            }
        }
        Ok(grad)
    }

    pub fn feature_weight_profile(&self) -> FeatureWeightProfile {
        let d = self.input_dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let weights = (1..=self.depth())
            .map(|l| {
                let reps = self.forward_batch(&eye, l).expect("identity has matching width");
                reps.row_iter().map(|r| r.norm()).collect()
            })
            .collect();
        FeatureWeightProfile { weights }
    }

    pub fn n_params(&self) -> usize {
        match &self.network {
            Network::Linear(s) => s.n_params(),
            Network::Diagonal(n) => 4 * n.d(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match &self.network {
            Network::Linear(s) => s.layers.iter().flat_map(|w| w.iter().copied()).collect(),
            Network::Diagonal(n) => [&n.w1, &n.w2, &n.b1, &n.b2]
                .into_iter()
                .flat_map(|v| v.iter().copied())
                .collect(),
        }
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_dim(self.n_params(), theta.len())?;
        match &mut self.network {
            Network::Linear(s) => {
                let mut off = 0;
                for w in &mut s.layers {
                    let len = w.len();
                    w.as_mut_slice().copy_from_slice(&theta[off..off + len]);
                    off += len;
                }
            }
            Network::Diagonal(n) => {
                let d = n.d();
                n.w1.copy_from_slice(&theta[..d]);
                n.w2.copy_from_slice(&theta[d..2 * d]);
                n.b1.copy_from_slice(&theta[2 * d..3 * d]);
                n.b2.copy_from_slice(&theta[3 * d..]);
            }
        }
        Ok(())
    }

    /// `1` for parameters subject to weight decay, `0` otherwise.
    pub fn decay_mask(&self, decay_biases: bool) -> Vec<f64> {
        match &self.network {
            Network::Linear(s) => vec![1.0; s.n_params()],
            Network::Diagonal(n) => {
                let d = n.d();
                let b = if decay_biases { 1.0 } else { 0.0 };
                let mut m = vec![1.0; 2 * d];
                m.extend(std::iter::repeat(b).take(2 * d));
                m
            }
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match &self.network {
            Network::Linear(s) => s.dims(),
            Network::Diagonal(n) => vec![n.d(); 3],
        }
    }

    /// Checkpoint JSON. Floats use shortest round-trip formatting, so a
    /// save/load cycle reproduces every parameter bit for bit.
    pub fn to_json(&self) -> String {
        let (kind, params) = match &self.network {
            Network::Linear(s) => {
                let layers: Vec<Vec<Vec<f64>>> = s
                    .layers
                    .iter()
                    .map(|w| w.row_iter().map(|r| r.iter().copied().collect()).collect())
                    .collect();
                ("linear", json!(layers))
            }
            Network::Diagonal(n) => ("diagonal", json!([n.w1, n.w2, n.b1, n.b2])),
        };
        let head = self.head.map(|h| json!({ "kappa": h.kappa }));
        let v = json!({ "kind": kind, "dims": self.dims(), "params": params, "head": head });
        serde_json::to_string_pretty(&v).expect("checkpoint values are finite")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            kind: String,
            dims: Vec<usize>,
            params: Value,
            head: Option<HeadRaw>,
        }
        #[derive(Deserialize)]
        struct HeadRaw {
            kappa: f64,
        }
        let bad = |e: serde_json::Error| invalid(format!("checkpoint: {e}"));
        let raw: Raw = serde_json::from_str(text).map_err(bad)?;
        let network = match raw.kind.as_str() {
            "linear" => {
                let layers: Vec<Vec<Vec<f64>>> = serde_json::from_value(raw.params).map_err(bad)?;
                let mats = layers
                    .into_iter()
                    .map(|rows| {
                        let nr = rows.len();
                        let nc = rows.first().map_or(0, |r| r.len());
                        if rows.iter().any(|r| r.len() != nc) {
                            return Err(invalid("checkpoint: ragged layer"));
                        }
                        Ok(DMatrix::from_row_iterator(nr, nc, rows.into_iter().flatten()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Network::Linear(LinearStack::new(mats)?)
            }
            "diagonal" => {
                let [w1, w2, b1, b2]: [Vec<f64>; 4] =
                    serde_json::from_value(raw.params).map_err(bad)?;
                Network::Diagonal(DiagonalNet::new(w1, w2, b1, b2)?)
            }
            other => return Err(invalid(format!("checkpoint: unknown kind {other:?}"))),
        };
        let mut model = Model { network, head: None };
        if model.dims() != raw.dims {
            return Err(invalid("checkpoint: dims do not match parameters"));
        }
        if let Some(h) = raw.head {
            model = model.with_head(h.kappa)?;
        }
        Ok(model)
    }
}

/// Balanced `L`-layer factorization of a `p x d` matrix: with
/// `W = U S V^T`, the first layer is `S^{1/L} V^T`, middle layers are
/// `S^{1/L}` and the last is `U S^{1/L}`, zero-padded to width `p`.
pub fn balanced_factorization(w: &DMatrix<f64>, depth: usize) -> Result<LinearStack> {
    if depth == 0 {
        return Err(invalid("depth must be at least 1"));
    }
    let (p, d) = w.shape();
    if p == 0 || d == 0 {
        return Err(invalid("cannot factor an empty matrix"));
    }
    if depth == 1 {
        return LinearStack::new(vec![w.clone()]);
    }
    let svd = w.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let r = svd.singular_values.len();
    let root: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| s.powf(1.0 / depth as f64))
        .collect();

    let mut first = DMatrix::zeros(p, d);
    for k in 0..r {
        for j in 0..d {
            first[(k, j)] = root[k] * vt[(k, j)];
        }
    }
    let mut middle = DMatrix::zeros(p, p);
    for k in 0..r {
        middle[(k, k)] = root[k];
    }
    let mut last = DMatrix::zeros(p, p);
    for k in 0..r {
        for i in 0..p {
            last[(i, k)] = u[(i, k)] * root[k];
        }
    }
    let mut layers = vec![first];
    for _ in 0..depth - 2 {
        layers.push(middle.clone());
    }
    layers.push(last);
    LinearStack::new(layers)
}

/// `max_l ||W_l W_l^T - W_{l+1}^T W_{l+1}||_F` over adjacent layers.
pub fn balancedness_defect(stack: &LinearStack) -> f64 {
    stack
        .layers()
        .windows(2)
        .map(|pair| (&pair[0] * pair[0].transpose() - pair[1].transpose() * &pair[1]).norm())
        .fold(0.0, f64::max)
}

impl Network {
    pub fn kind(&self) -> &'static str {
        match self {
            Network::Linear(_) => "linear",
            Network::Diagonal(_) => "diagonal",
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {:?}", self.network.kind(), self.dims())?;
        if let Some(h) = self.head {
            write!(f, " + head(kappa={})", h.kappa)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn identity_stack_is_identity() {
        let m: Model = LinearStack::new(vec![DMatrix::identity(3, 3), DMatrix::identity(3, 3)])
            .unwrap()
            .into();
        let x = [0.3, -1.0, 2.0];
        assert_eq!(m.forward(&x, 1).unwrap(), x.to_vec());
        assert_eq!(m.forward(&x, 2).unwrap(), x.to_vec());
        assert!(m.forward(&x, 3).is_err());
        assert!(m.forward(&x[..2], 1).is_err());
    }

    #[test]
    fn sym_relu_values() {
        assert_eq!(sym_relu(2.0, 1.0), 1.0);
        assert_eq!(sym_relu(-2.0, 1.0), -1.0);
        assert_eq!(sym_relu(0.5, 1.0), 0.0);
        assert_eq!(sym_relu(-1.0, 1.0), 0.0);
        assert_eq!(sym_relu_grad(1.0, 1.0), (0.0, 0.0));
        assert_eq!(sym_relu_grad(2.0, 1.0), (1.0, -1.0));
        assert_eq!(sym_relu_grad(-2.0, 1.0), (1.0, 1.0));
        let net = DiagonalNet::new(vec![2.0], vec![1.0], vec![1.0], vec![0.0]).unwrap();
        let m: Model = net.into();
        assert_eq!(m.forward(&[1.0], 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn dead_zone_gives_zero() {
        let net = DiagonalNet::new(vec![0.5, -0.2], vec![3.0, 3.0], vec![1.0, 0.5], vec![0.0, 0.0])
            .unwrap();
        let m: Model = net.into();
        assert_eq!(m.forward(&[1.0, -1.0], 1).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.forward(&[1.0, -1.0], 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn profile_examples() {
        let m: Model = LinearStack::new(vec![diag(&[0.5, 0.2])]).unwrap().into();
        assert_eq!(m.feature_weight_profile().layer(1), &[0.5, 0.2]);

        let s = balanced_factorization(&diag(&[0.81, 0.25]), 2).unwrap();
        let prof = Model::from(s).feature_weight_profile();
        for (got, want) in prof.layer(1).iter().zip([0.9, 0.5]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        for (got, want) in prof.layer(2).iter().zip([0.81, 0.25]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn head_examples() {
        let h = ReweightHead::new(2.0, 3).unwrap();
        assert_eq!(h.apply(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 0.5, 0.25]);
        assert!(ReweightHead::new(1.0, 3).is_err());
        assert!(ReweightHead::new(0.5, 3).is_err());

        let m = Model::from(LinearStack::new(vec![DMatrix::identity(3, 3)]).unwrap())
            .with_head(2.0)
            .unwrap();
        assert_eq!(m.depth(), 2);
        assert_eq!(m.feature_weight_profile().last(), &[1.0, 0.5, 0.25]);

        let one = Model::from(LinearStack::new(vec![DMatrix::from_element(1, 2, 0.7)]).unwrap())
            .with_head(1.5)
            .unwrap();
        let prof = one.feature_weight_profile();
        assert_eq!(prof.layer(1), prof.layer(2));
    }

    #[test]
    fn balanced_factorization_reproduces_product() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.2, 0.3, 0.8, -1.1]);
        for depth in 1..=4 {
            let s = balanced_factorization(&w, depth).unwrap();
            assert_eq!(s.dims()[0], 3);
            assert_relative_eq!(s.product(), w, epsilon = 1e-12);
            assert!(balancedness_defect(&s) < 1e-12);
        }
        let tall = w.transpose();
        let s = balanced_factorization(&tall, 2).unwrap();
        assert_eq!(s.dims(), vec![2, 3, 3]);
        assert_relative_eq!(s.product(), tall, epsilon = 1e-12);
        assert!(balancedness_defect(&s) < 1e-12);
    }

    #[test]
    fn defect_direct_value() {
        let s = LinearStack::new(vec![DMatrix::identity(4, 4), DMatrix::identity(4, 4) * 2.0])
            .unwrap();
        assert_relative_eq!(balancedness_defect(&s), 3.0 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let mut m: Model = DiagonalNet::new(vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0])
            .unwrap()
            .into();
        let theta = m.params();
        assert_eq!(theta, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(m.decay_mask(false), vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        m.set_params(&[0.0; 8]).unwrap();
        assert_eq!(m.params(), vec![0.0; 8]);
        assert!(m.set_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let w1 = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) + 1e-17);
        let w2 = DMatrix::from_fn(3, 3, |i, j| std::f64::consts::PI * (i * 3 + j) as f64 / 7.0);
        let m = Model::from(LinearStack::new(vec![w1, w2]).unwrap()).with_head(1.05).unwrap();
        let back = Model::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(back.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let n: Model = DiagonalNet::new(vec![0.1 + 0.2], vec![1.0 / 3.0], vec![0.25], vec![1e-300])
            .unwrap()
            .into();
        assert_eq!(Model::from_json(&n.to_json()).unwrap(), n);
        assert!(Model::from_json(r#"{"kind":"conv","dims":[],"params":[],"head":null}"#).is_err());
    }
}
