use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use projhead_core::data::{DownstreamSpec, PretrainSpec, SubclassSpec};
use projhead_core::losses::{LossKind, Objective};
use projhead_core::models::Model;
use projhead_core::theory::DepthScaling;
use projhead_core::training::{balanced_init_linear, init_diagonal, DiagonalSampler, TrainConfig};
use projhead_core::verify::{Suite, VerifyParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Encoder only.
    None,
    /// Linear projection layers on top of the encoder.
    Projection,
    /// Fixed reweighting head on top of a one-layer encoder.
    Reweight { kappa: f64 },
}

impl Head {
    pub fn name(&self) -> &'static str {
        match self {
            Head::None => "none",
            Head::Projection => "projection",
            Head::Reweight { .. } => "reweight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Linear {
        /// Output width; defaults to the input dimension.
        #[serde(default)]
        width: Option<usize>,
        /// Number of layers when the head is a projection.
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
    },
    Diagonal {
        #[serde(default = "default_b0")]
        b0: f64,
        /// Fixed first-layer weights; sampled per seed when absent.
        #[serde(default)]
        w1: Option<Vec<f64>>,
        #[serde(default)]
        w2: Option<Vec<f64>>,
        /// Resample until the coordinate-2 hypotheses for the loss hold.
        #[serde(default)]
        require_conditions: bool,
    },
}

fn default_depth() -> usize {
    2
}

fn default_init_scale() -> f64 {
    0.1
}

fn default_b0() -> f64 {
    0.25
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Linear { width: None, depth: 2, init_scale: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthConfig {
    pub layers: usize,
    /// Feature weights; defaults to the predicted full-model weights.
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    /// Values substituted for the relevant feature's weight, one curve each.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default = "default_scaling")]
    pub scaling: DepthScaling,
}

fn default_scaling() -> DepthScaling {
    DepthScaling::FullModel
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Suites to run; all of them when empty.
    pub suites: Vec<Suite>,
    pub params: VerifyParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub alpha_j: Vec<f64>,
    pub phi_j: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub kappa: Vec<f64>,
    pub head: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Grid,
    /// Refuse grids with more runs (points times seeds) than this.
    pub max_runs: usize,
    /// One-based feature that `alpha_j` and `phi_j` modify; defaults to the
    /// downstream relevant feature.
    pub feature: Option<usize>,
    pub probe_train: usize,
    pub probe_test: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { grid: Grid::default(), max_runs: 10_000, feature: None, probe_train: 32, probe_test: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub pretrain: Option<PretrainSpec>,
    #[serde(default)]
    pub subclass: Option<SubclassSpec>,
    #[serde(default)]
    pub downstream: Option<DownstreamSpec>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_head")]
    pub head: Head,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub depth: Option<DepthConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_loss() -> LossKind {
    LossKind::Cl
}

fn default_head() -> Head {
    Head::Projection
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the raw config bytes.
    pub hash: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let config: ExperimentConfig =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    config.validate()?;
    Ok(LoadedConfig { config, hash: hex::encode(Sha256::digest(&bytes)) })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.id.is_empty(), "id must be non-empty");
        ensure!(
            !self.id.contains(['/', '\\']) && self.id != "." && self.id != "..",
            "id must be a plain directory name"
        );
        if let Some(s) = &self.pretrain {
            s.validate()?;
        }
        if let Some(s) = &self.subclass {
            s.validate()?;
        }
        if let Some(ds) = &self.downstream {
            ds.validate()?;
            if let Some(s) = &self.pretrain {
                ds.validate_against(s.d())?;
            }
        }
        self.train.validate()?;
        if let Head::Reweight { kappa } = self.head {
            ensure!(kappa.is_finite() && kappa > 1.0, "reweight kappa must exceed 1");
        }
        if let ModelConfig::Linear { depth, init_scale, width } = &self.model {
            ensure!(*depth >= 1, "linear depth must be at least 1");
            ensure!(*init_scale >= 0.0, "init_scale must be nonnegative");
            ensure!(width.map_or(true, |w| w > 0), "width must be positive");
        }
        for h in &self.sweep.grid.head {
            parse_head(h, 1.05)?;
        }
        Ok(())
    }

    /// Objective for the configured loss, built from the matching spec block.
    pub fn objective(&self) -> Result<Objective> {
        objective_for(self.loss, self.pretrain.as_ref(), self.subclass.as_ref())
    }

    pub fn seeds_or(&self, n: Option<usize>) -> Vec<u64> {
        match n {
            Some(n) => (0..n as u64).collect(),
            None => self.seeds.clone(),
        }
    }
}

pub fn objective_for(
    loss: LossKind,
    pretrain: Option<&PretrainSpec>,
    subclass: Option<&SubclassSpec>,
) -> Result<Objective> {
    Ok(match loss {
        LossKind::Cl => Objective::Cl(pretrain.context("loss 'cl' needs a 'pretrain' block")?.clone()),
        LossKind::Scl => Objective::Scl(subclass.context("loss 'scl' needs a 'subclass' block")?.clone()),
        LossKind::Mse => Objective::Mse(subclass.context("loss 'mse' needs a 'subclass' block")?.clone()),
    })
}

pub fn parse_head(name: &str, kappa: f64) -> Result<Head> {
    Ok(match name {
        "none" => Head::None,
        "projection" => Head::Projection,
        "reweight" => Head::Reweight { kappa },
        other => bail!("unknown head '{other}' (expected none, projection or reweight)"),
    })
}

/// Initial model for one seed.
pub fn build_model(model: &ModelConfig, head: Head, obj: &Objective, seed: u64) -> Result<Model> {
    let d = obj.d();
    match model {
        ModelConfig::Linear { width, depth, init_scale } => {
            let p = width.unwrap_or(d);
            let layers = match head {
                Head::Projection => *depth,
                Head::None | Head::Reweight { .. } => 1,
            };
            let mut dims = vec![d];
            dims.extend(std::iter::repeat(p).take(layers));
            let m: Model = balanced_init_linear(&dims, *init_scale, seed)?.into();
            Ok(match head {
                Head::Reweight { kappa } => m.with_head(kappa)?,
                _ => m,
            })
        }
        ModelConfig::Diagonal { b0, w1, w2, require_conditions } => {
            ensure!(
                head == Head::Projection,
                "the diagonal network has a fixed two-layer shape; use head 'projection'"
            );
            let net = match (w1, w2) {
                (Some(a), Some(b)) => {
                    ensure!(a.len() == d && b.len() == d, "w1 and w2 must have length {d}");
                    init_diagonal(a.clone(), b.clone(), *b0)?
                }
                (None, None) => {
                    let mut sampler = DiagonalSampler::new(d, *b0);
                    if *require_conditions {
                        sampler.require_conditions = Some(obj.kind());
                    }
                    sampler.sample(seed)?
                }
                _ => bail!("give both w1 and w2 or neither"),
            };
            Ok(net.into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let loaded = load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
                assert_eq!(loaded.hash.len(), 64);
                n += 1;
            }
        }
        assert!(n >= 5);
    }

    #[test]
    fn diagonal_model_requires_projection_head() {
        let spec = PretrainSpec::new(vec![1.0, 1.0], vec![0.0, 1.0], 0.0, 2).unwrap();
        let obj = Objective::Cl(spec);
        let m = ModelConfig::Diagonal { b0: 0.25, w1: None, w2: None, require_conditions: false };
        assert!(build_model(&m, Head::None, &obj, 0).is_err());
        assert_eq!(build_model(&m, Head::Projection, &obj, 0).unwrap().depth(), 2);
    }

    #[test]
    fn heads_set_encoder_depth() {
        let spec = PretrainSpec::new(vec![1.0; 3], vec![0.0; 3], 0.1, 2).unwrap();
        let obj = Objective::Cl(spec);
        let m = ModelConfig::Linear { width: Some(2), depth: 3, init_scale: 0.1 };
        assert_eq!(build_model(&m, Head::Projection, &obj, 0).unwrap().depth(), 3);
        assert_eq!(build_model(&m, Head::None, &obj, 0).unwrap().depth(), 1);
        let rw = build_model(&m, Head::Reweight { kappa: 1.1 }, &obj, 0).unwrap();
        assert_eq!(rw.network_depth(), 1);
        assert!(rw.head.is_some());
    }
}
