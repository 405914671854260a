//! Synthetic pretraining, downstream and subclass distributions.
//!
//! Every input coordinate is an independent feature taking the values
//! `±magnitude` with equal probability. Augmentation re-signs each coordinate
//! with a per-feature disruption probability and then adds isotropic noise.
//!
//! All samplers are pure functions of `(spec, seed)`. A seed is expanded into
//! independent ChaCha streams, one per coordinate, so the value drawn for a
//! coordinate does not depend on how many other coordinates were sampled.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

/// How the augmentation disrupts a coordinate's sign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationConvention {
    /// With probability `alpha` the sign is redrawn uniformly, so
    /// `E[A(x)_i | x] = (1 - alpha_i) x_i`.
    #[default]
    Randomize,
    /// With probability `alpha` the sign is negated, so
    /// `E[A(x)_i | x] = (1 - 2 alpha_i) x_i`.
    Flip,
}

impl AugmentationConvention {
    /// Enumerates the sign multipliers applied to one coordinate together
    /// with their probabilities. Branches with zero probability are kept so
    /// the enumeration has a fixed shape.
    pub fn sign_branches(self, alpha: f64) -> [(f64, f64); 3] {
        match self {
            Self::Randomize => [(1.0, 1.0 - alpha), (1.0, 0.5 * alpha), (-1.0, 0.5 * alpha)],
            Self::Flip => [(1.0, 1.0 - alpha), (-1.0, alpha), (1.0, 0.0)],
        }
    }

    /// Ratio between the augmentation center and the clean coordinate.
    pub fn center_factor(self, alpha: f64) -> f64 {
        match self {
            Self::Randomize => 1.0 - alpha,
            Self::Flip => 1.0 - 2.0 * alpha,
        }
    }

    fn draw_sign<R: Rng + ?Sized>(self, alpha: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u >= alpha {
            return 1.0;
        }
        match self {
            Self::Randomize => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Flip => -1.0,
        }
    }
}

/// Pretraining distribution and augmentation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSpec {
    /// Feature magnitudes; coordinate `i` is drawn from `{-phi_i, +phi_i}`.
    pub phi: Vec<f64>,
    /// Disruption probabilities in `[0, 1]`.
    pub alpha: Vec<f64>,
    /// Standard deviation of the additive augmentation noise.
    pub sigma: f64,
    /// Hidden and output width of the models trained on this data.
    pub p: usize,
    #[serde(default)]
    pub augmentation_convention: AugmentationConvention,
}

impl PretrainSpec {
    pub fn new(phi: Vec<f64>, alpha: Vec<f64>, sigma: f64, p: usize) -> Result<Self> {
        let spec = Self {
            phi,
            alpha,
            sigma,
            p,
            augmentation_convention: AugmentationConvention::Randomize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_convention(mut self, convention: AugmentationConvention) -> Self {
        self.augmentation_convention = convention;
        self
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.phi.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.is_empty() {
            return Err(invalid("pretraining spec needs at least one feature"));
        }
        if self.alpha.len() != self.phi.len() {
            return Err(invalid(format!(
                "phi has {} entries but alpha has {}",
                self.phi.len(),
                self.alpha.len()
            )));
        }
        if self.p == 0 {
            return Err(invalid("p must be positive"));
        }
        if let Some(bad) = self.phi.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("feature magnitude {bad} is not positive")));
        }
        if let Some(bad) = self.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(invalid(format!("disruption probability {bad} outside [0, 1]")));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid(format!("noise level {} is negative", self.sigma)));
        }
        Ok(())
    }
}

/// Downstream distribution: coordinate `i` is `±phi_hat_i` and the label is
/// the sign of coordinate `j_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSpec {
    pub phi_hat: Vec<f64>,
    /// One-based index of the downstream-relevant coordinate.
    pub j_star: usize,
}

impl DownstreamSpec {
    pub fn new(phi_hat: Vec<f64>, j_star: usize) -> Result<Self> {
        let ds = Self { phi_hat, j_star };
        ds.validate()?;
        Ok(ds)
    }

    pub fn d(&self) -> usize {
        self.phi_hat.len()
    }

    /// Zero-based index of the relevant coordinate.
    pub fn relevant(&self) -> usize {
        self.j_star - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi_hat.is_empty() {
            return Err(invalid("downstream spec needs at least one feature"));
        }
        if let Some(bad) = self.phi_hat.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("downstream magnitude {bad} is not positive")));
        }
        if self.j_star == 0 || self.j_star > self.phi_hat.len() {
            return Err(invalid(format!(
                "j_star {} outside [1, {}]",
                self.j_star,
                self.phi_hat.len()
            )));
        }
        Ok(())
    }

    pub fn validate_against(&self, d: usize) -> Result<()> {
        self.validate()?;
        check_dim(d, self.d())
    }
}

/// Four subclasses `(y, y_sub)` in the first two coordinates plus symmetric
/// residual coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassSpec {
    pub d: usize,
    /// Magnitudes of coordinates `3..=d`.
    #[serde(default)]
    pub residual_magnitudes: Vec<f64>,
}

impl SubclassSpec {
    pub fn new(d: usize, residual_magnitudes: Vec<f64>) -> Result<Self> {
        let spec = Self { d, residual_magnitudes };
        spec.validate()?;
        Ok(spec)
    }

    /// Subclass data with every residual coordinate at the same magnitude.
    pub fn uniform(d: usize, residual: f64) -> Result<Self> {
        Self::new(d, vec![residual; d.saturating_sub(2)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid("subclass data needs d >= 2"));
        }
        if self.residual_magnitudes.len() != self.d - 2 {
            return Err(invalid(format!(
                "expected {} residual magnitudes, got {}",
                self.d - 2,
                self.residual_magnitudes.len()
            )));
        }
        if let Some(bad) = self
            .residual_magnitudes
            .iter()
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(invalid(format!("residual magnitude {bad} is not positive")));
        }
        Ok(())
    }

    /// Magnitude of every coordinate (`1` for the class and subclass ones).
    pub fn magnitudes(&self) -> Vec<f64> {
        let mut m = vec![1.0, 1.0];
        m.extend_from_slice(&self.residual_magnitudes);
        m
    }
}

/// Diagonals of the augmented-example covariance `M` and the
/// augmentation-center covariance `M_tilde`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub m: Vec<f64>,
    pub m_tilde: Vec<f64>,
}

/// A sampled dataset. Labels are stored as `±1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One sample per row.
    pub x: DMatrix<f64>,
    pub y: Option<Vec<f64>>,
    pub y_sub: Option<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Writes `x1..xd[,y][,y_sub]` followed by one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header: Vec<String> = (1..=self.d()).map(|i| format!("x{i}")).collect();
        if self.y.is_some() {
            header.push("y".into());
        }
        if self.y_sub.is_some() {
            header.push("y_sub".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.len() {
            let mut fields: Vec<String> = self.x.row(r).iter().map(|v| v.to_string()).collect();
            if let Some(y) = &self.y {
                fields.push(y[r].to_string());
            }
            if let Some(s) = &self.y_sub {
                fields.push(s[r].to_string());
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Derives an independent 64-bit seed (SplitMix64 finalizer).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Draws one clean pretraining input into `out`.
pub fn draw_pretrain<R: Rng + ?Sized>(spec: &PretrainSpec, rng: &mut R, out: &mut [f64]) {
    for (o, phi) in out.iter_mut().zip(&spec.phi) {
        *o = random_sign(rng) * phi;
    }
}

/// Draws one augmentation of `x` into `out`.
pub fn draw_augmentation<R: Rng + ?Sized>(
    spec: &PretrainSpec,
    x: &[f64],
    rng: &mut R,
    out: &mut [f64],
) {
    let conv = spec.augmentation_convention;
    for i in 0..x.len() {
        let s = conv.draw_sign(spec.alpha[i], rng);
        let noise = if spec.sigma > 0.0 {
            spec.sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        out[i] = s * x[i] + noise;
    }
}

/// Draws one subclass input; returns `(y, y_sub)`.
pub fn draw_subclass<R: Rng + ?Sized>(spec: &SubclassSpec, rng: &mut R, out: &mut [f64]) -> (f64, f64) {
    let y = random_sign(rng);
    let y_sub = random_sign(rng);
    out[0] = y;
    out[1] = y_sub;
    for (o, m) in out[2..].iter_mut().zip(&spec.residual_magnitudes) {
        *o = random_sign(rng) * m;
    }
    (y, y_sub)
}

/// `n` pretraining inputs, one per row.
pub fn sample_pretrain(spec: &PretrainSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut x = DMatrix::zeros(n, spec.d());
    for (i, phi) in spec.phi.iter().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        for r in 0..n {
            x[(r, i)] = random_sign(&mut rng) * phi;
        }
    }
    Ok(x)
}

/// One augmentation of `x`.
pub fn sample_augmentation(spec: &PretrainSpec, x: &[f64], seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dim(spec.d(), x.len())?;
    let conv = spec.augmentation_convention;
    let out = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut rng = stream_rng(seed, i as u64);
            let s = conv.draw_sign(spec.alpha[i], &mut rng);
            let noise = if spec.sigma > 0.0 {
                spec.sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            s * xi + noise
        })
        .collect();
    Ok(out)
}

/// Two independent augmentations of the same input.
pub fn sample_positive_pair(
    spec: &PretrainSpec,
    x: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = sample_augmentation(spec, x, split_seed(seed, 0))?;
    let b = sample_augmentation(spec, x, split_seed(seed, 1))?;
    Ok((a, b))
}

/// Downstream inputs with labels `sign(x[j_star])`.
pub fn sample_downstream(ds: &DownstreamSpec, n: usize, seed: u64) -> Result<Dataset> {
    ds.validate()?;
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let d = ds.d();
    let mut x = DMatrix::zeros(n, d);
    for (i, phi) in ds.phi_hat.iter().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        for r in 0..n {
            x[(r, i)] = random_sign(&mut rng) * phi;
        }
    }
    let j = ds.relevant();
    let y = (0..n).map(|r| x[(r, j)].signum()).collect();
    Ok(Dataset { x, y: Some(y), y_sub: None })
}

/// Subclass inputs `[y, y_sub, r_3, ..., r_d]`.
pub fn sample_subclass(spec: &SubclassSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mags = spec.magnitudes();
    let mut x = DMatrix::zeros(n, spec.d);
    for (i, m) in mags.iter().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        for r in 0..n {
            x[(r, i)] = random_sign(&mut rng) * m;
        }
    }
    let y = (0..n).map(|r| x[(r, 0)]).collect();
    let y_sub = (0..n).map(|r| x[(r, 1)]).collect();
    Ok(Dataset { x, y: Some(y), y_sub: Some(y_sub) })
}

/// Exact diagonal second moments of augmented inputs and augmentation centers.
pub fn moments(spec: &PretrainSpec) -> Result<MomentPair> {
    spec.validate()?;
    let s2 = spec.sigma * spec.sigma;
    let conv = spec.augmentation_convention;
    let m = spec.phi.iter().map(|p| p * p + s2).collect();
    let m_tilde = spec
        .phi
        .iter()
        .zip(&spec.alpha)
        .map(|(p, a)| {
            let c = conv.center_factor(*a);
            c * c * p * p
        })
        .collect();
    Ok(MomentPair { m, m_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(phi: &[f64], alpha: &[f64], sigma: f64) -> PretrainSpec {
        PretrainSpec::new(phi.to_vec(), alpha.to_vec(), sigma, phi.len()).unwrap()
    }

    fn mean_and_se(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(PretrainSpec::new(vec![1.0], vec![0.0, 0.1], 0.0, 1).is_err());
        assert!(PretrainSpec::new(vec![-1.0], vec![0.0], 0.0, 1).is_err());
        assert!(PretrainSpec::new(vec![1.0], vec![1.5], 0.0, 1).is_err());
        assert!(PretrainSpec::new(vec![1.0], vec![0.5], -0.1, 1).is_err());
        assert!(DownstreamSpec::new(vec![1.0, 1.0], 3).is_err());
        assert!(DownstreamSpec::new(vec![1.0, 1.0], 0).is_err());
        assert!(SubclassSpec::new(1, vec![]).is_err());
        assert!(SubclassSpec::new(3, vec![]).is_err());
        let bad = PretrainSpec { phi: vec![0.0], alpha: vec![0.0], sigma: 0.0, p: 1, augmentation_convention: Default::default() };
        assert!(sample_pretrain(&bad, 3, 0).is_err());
    }

    #[test]
    fn pretrain_support_is_plus_minus_phi() {
        let s = spec(&[1.0], &[0.0], 0.0);
        let x = sample_pretrain(&s, 4, 17).unwrap();
        assert!(x.iter().all(|v| *v == 1.0 || *v == -1.0));

        let s = spec(&[1.0, 0.5], &[0.0, 0.0], 0.0);
        let x = sample_pretrain(&s, 20_000, 3).unwrap();
        for (i, phi) in [1.0, 0.5].iter().enumerate() {
            let col: Vec<f64> = x.column(i).iter().copied().collect();
            assert!(col.iter().all(|v| v.abs() == *phi));
            let (mean, se) = mean_and_se(&col);
            assert!(mean.abs() < 4.0 * se, "column {i} mean {mean}");
        }
    }

    #[test]
    fn pretrain_covariance_is_identity() {
        let s = spec(&[1.0, 1.0, 1.0], &[0.0; 3], 0.0);
        let n = 100_000;
        let x = sample_pretrain(&s, n, 99).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let prods: Vec<f64> = (0..n).map(|r| x[(r, i)] * x[(r, j)]).collect();
                let (mean, se) = mean_and_se(&prods);
                let target = if i == j { 1.0 } else { 0.0 };
                if i == j {
                    assert_eq!(mean, 1.0);
                } else {
                    assert!((mean - target).abs() <= 3.0 * se, "cov[{i},{j}]={mean} se={se}");
                }
            }
        }
    }

    #[test]
    fn augmentation_identity_and_destruction() {
        let s = spec(&[1.0, 2.0], &[0.0, 0.0], 0.0);
        let x = [1.0, -2.0];
        for seed in 0..20 {
            assert_eq!(sample_augmentation(&s, &x, seed).unwrap(), x.to_vec());
            let (a, b) = sample_positive_pair(&s, &x, seed).unwrap();
            assert_eq!(a, x.to_vec());
            assert_eq!(b, x.to_vec());
        }

        let s = spec(&[1.0], &[1.0], 0.0);
        let draws: Vec<f64> = (0..100_000)
            .map(|seed| sample_augmentation(&s, &[1.0], seed).unwrap()[0])
            .collect();
        let (mean, se) = mean_and_se(&draws);
        assert!(mean.abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn augmentation_center_matches_one_minus_alpha() {
        let s = spec(&[1.0], &[0.25], 0.0);
        for x0 in [1.0, -1.0] {
            let draws: Vec<f64> = (0..100_000)
                .map(|seed| sample_augmentation(&s, &[x0], seed).unwrap()[0])
                .collect();
            let (mean, se) = mean_and_se(&draws);
            assert!((mean - 0.75 * x0).abs() <= 3.0 * se, "mean {mean} se {se}");
        }
        let flip = s.clone().with_convention(AugmentationConvention::Flip);
        let draws: Vec<f64> = (0..100_000)
            .map(|seed| sample_augmentation(&flip, &[1.0], seed).unwrap()[0])
            .collect();
        let (mean, se) = mean_and_se(&draws);
        assert!((mean - 0.5).abs() <= 3.0 * se);
    }

    #[test]
    fn destroyed_views_are_uncorrelated() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 0.0);
        let mut prods = vec![Vec::new(), Vec::new()];
        for seed in 0..100_000u64 {
            let x = sample_pretrain(&s, 1, split_seed(seed, 7)).unwrap();
            let x: Vec<f64> = x.row(0).iter().copied().collect();
            let (a, b) = sample_positive_pair(&s, &x, seed).unwrap();
            for i in 0..2 {
                prods[i].push(a[i] * b[i]);
            }
        }
        for p in &prods {
            let (mean, se) = mean_and_se(p);
            assert!(mean.abs() <= 3.0 * se);
        }
    }

    #[test]
    fn view_covariance_matches_m_tilde() {
        let s = spec(&[1.0, 0.7, 1.3], &[0.1, 0.5, 0.8], 0.0);
        let mt = moments(&s).unwrap().m_tilde;
        let mut rng = stream_rng(11, 0);
        let mut x = vec![0.0; 3];
        let mut a = vec![0.0; 3];
        let mut b = vec![0.0; 3];
        let mut prods = vec![Vec::new(); 3];
        for _ in 0..100_000 {
            draw_pretrain(&s, &mut rng, &mut x);
            draw_augmentation(&s, &x, &mut rng, &mut a);
            draw_augmentation(&s, &x, &mut rng, &mut b);
            for i in 0..3 {
                prods[i].push(a[i] * b[i]);
            }
        }
        for i in 0..3 {
            let (mean, se) = mean_and_se(&prods[i]);
            assert!((mean - mt[i]).abs() <= 3.0 * se, "coord {i}: {mean} vs {}", mt[i]);
        }
    }

    #[test]
    fn downstream_labels_follow_relevant_coordinate() {
        let ds = DownstreamSpec::new(vec![1.0, 1.0, 1.0], 2).unwrap();
        let data = sample_downstream(&ds, 10_000, 5).unwrap();
        let y = data.y.as_ref().unwrap();
        assert!((0..data.len()).all(|r| y[r] * data.x[(r, 1)] > 0.0));
        let ones: Vec<f64> = y.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
        let (mean, se) = mean_and_se(&ones);
        assert!((mean - 0.5).abs() <= 3.0 * se);

        let ds = DownstreamSpec::new(vec![3.0, 0.1], 2).unwrap();
        let data = sample_downstream(&ds, 200, 1).unwrap();
        let y = data.y.unwrap();
        for r in 0..200 {
            assert_eq!(data.x[(r, 1)].abs(), 0.1);
            assert_eq!(y[r], data.x[(r, 1)].signum());
        }
    }

    #[test]
    fn subclass_layout_and_balance() {
        let spec = SubclassSpec::uniform(5, 0.001).unwrap();
        let n = 40_000;
        let data = sample_subclass(&spec, n, 8).unwrap();
        let y = data.y.as_ref().unwrap();
        let ys = data.y_sub.as_ref().unwrap();
        let mut cells = [0usize; 4];
        for r in 0..n {
            assert_eq!(data.x[(r, 0)], y[r]);
            assert_eq!(data.x[(r, 1)], ys[r]);
            for c in 2..5 {
                assert_eq!(data.x[(r, c)].abs(), 0.001);
            }
            let idx = (y[r] > 0.0) as usize * 2 + (ys[r] > 0.0) as usize;
            cells[idx] += 1;
        }
        let se = (n as f64 * 0.25 * 0.75).sqrt();
        for c in cells {
            assert!((c as f64 - n as f64 / 4.0).abs() <= 3.0 * se, "cell count {c}");
        }
    }

    #[test]
    fn moment_examples() {
        let m = moments(&spec(&[1.0], &[0.0], 0.0)).unwrap();
        assert_eq!((m.m[0], m.m_tilde[0]), (1.0, 1.0));
        let m = moments(&spec(&[1.0], &[1.0], 0.0)).unwrap();
        assert_eq!(m.m_tilde[0], 0.0);
        let m = moments(&spec(&[1.0], &[0.25], 0.01)).unwrap();
        assert!((m.m[0] - 1.0001).abs() < 1e-15);
        assert!((m.m_tilde[0] - 0.5625).abs() < 1e-15);
        let flip = spec(&[1.0], &[0.25], 0.0).with_convention(AugmentationConvention::Flip);
        assert!((moments(&flip).unwrap().m_tilde[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn m_tilde_agrees_with_sampled_centers() {
        // E[E_A(x) E_A(x)^T] estimated from pairs of independent views.
        let s = spec(&[1.0], &[0.25], 0.01);
        let mut rng = stream_rng(2024, 3);
        let (mut x, mut a, mut b) = (vec![0.0], vec![0.0], vec![0.0]);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut sq = 0.0;
        let mut sq2 = 0.0;
        for _ in 0..n {
            draw_pretrain(&s, &mut rng, &mut x);
            draw_augmentation(&s, &x, &mut rng, &mut a);
            draw_augmentation(&s, &x, &mut rng, &mut b);
            let v = a[0] * b[0];
            sum += v;
            sum2 += v * v;
            let w = a[0] * a[0];
            sq += w;
            sq2 += w * w;
        }
        let nf = n as f64;
        let mt = moments(&s).unwrap();
        let mean = sum / nf;
        let se = ((sum2 / nf - mean * mean) / nf).sqrt();
        assert!((mean - mt.m_tilde[0]).abs() <= 4.0 * se, "{mean} vs {}", mt.m_tilde[0]);
        let mean = sq / nf;
        let se = ((sq2 / nf - mean * mean) / nf).sqrt();
        assert!((mean - mt.m[0]).abs() <= 4.0 * se, "{mean} vs {}", mt.m[0]);
    }

    #[test]
    fn samplers_are_deterministic() {
        let s = spec(&[1.0, 2.0, 0.5], &[0.3, 0.6, 0.9], 0.2);
        assert_eq!(sample_pretrain(&s, 50, 4).unwrap(), sample_pretrain(&s, 50, 4).unwrap());
        assert_ne!(sample_pretrain(&s, 50, 4).unwrap(), sample_pretrain(&s, 50, 5).unwrap());
        let x = [1.0, -2.0, 0.5];
        assert_eq!(
            sample_positive_pair(&s, &x, 9).unwrap(),
            sample_positive_pair(&s, &x, 9).unwrap()
        );
        // Column streams do not depend on the number of rows drawn.
        let short = sample_pretrain(&s, 10, 4).unwrap();
        let long = sample_pretrain(&s, 50, 4).unwrap();
        assert_eq!(short, long.rows(0, 10).into_owned());
    }

    #[test]
    fn csv_header_layout() {
        let spec = SubclassSpec::uniform(3, 0.5).unwrap();
        let data = sample_subclass(&spec, 2, 0).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x1,x2,x3,y,y_sub");
        assert_eq!(lines.count(), 2);
    }
}
