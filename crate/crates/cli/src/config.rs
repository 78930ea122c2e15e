//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dwropt::dwr::DualMode;
use dwropt::optim::{JacobianMode, OptimizerConfig};

use crate::Error;

fn default_dof_cap() -> usize {
    1 << 21
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Seeds the coefficient raster; the advection raster uses `seed + 1`.
    pub seed: u64,
    /// Largest fine mesh (in nodes) the reference solver accepts.
    #[serde(default = "default_dof_cap")]
    pub dof_cap: usize,
    /// Run the fine-scale reference solve.
    #[serde(default = "yes")]
    pub reference: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Constant volume source `f`.
    #[serde(default)]
    pub source: f64,
    pub domain: DomainSpec,
    pub mesh: MeshSpec,
    pub field: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advection: Option<AdvectionSpec>,
    pub boundary: BoundarySpec,
    pub functional: FunctionalSpec,
    pub upscale: UpscaleSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Unit square with one marker `boundary`.
    UnitSquare,
    /// The 1 x 2 channel with markers `A` to `E`.
    Channel,
}

/// Cell sizes of the sampling, macro and micro meshes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub delta: f64,
    pub coarse: f64,
    pub micro: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSpec {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Row-major `[a11, a12, a21, a22]`.
    Constant { tensor: [f64; 4] },
    Laminate {
        axis: AxisSpec,
        a: f64,
        b: f64,
        layer_width: f64,
    },
    Checkerboard { a: f64, b: f64, tile: f64 },
    /// Generated Gaussian raster over the domain, `gamma * exp(10 g / 255)`.
    Lognormal {
        nx: usize,
        ny: usize,
        corr_len: f64,
        gamma: f64,
    },
    /// Binary PGM raster covering the domain.
    LognormalFile { path: PathBuf, gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdvectionSpec {
    /// Stream function sampled on a `pieces_x x pieces_y` lattice, scaled so
    /// that the peak speed is `peak`.
    Stream {
        pieces_x: usize,
        pieces_y: usize,
        corr_len: f64,
        peak: f64,
        taper_width: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerValue {
    pub marker: String,
    pub value: f64,
}

/// Markers not listed carry homogeneous Neumann data. Earlier Dirichlet
/// entries win at corners.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default)]
    pub dirichlet: Vec<MarkerValue>,
    #[serde(default)]
    pub neumann: Vec<MarkerValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    DomainIntegral,
    PointValue { x: f64, y: f64 },
    BoundaryIntegral { marker: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpscaleSpec {
    Arithmetic,
    Geometric,
    Homogenized,
    Constant { tensor: [f64; 4] },
    /// Model CSV as written by `upscale`.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSpec {
    Full,
    Effective,
    Enhanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianSpec {
    Diagonal,
    Patch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    /// Fixed regularization weight; automatic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub alpha_scale: f64,
    pub lambda_factor: f64,
    pub jacobian: JacobianSpec,
    pub dual: DualSpec,
    /// Patch depth for the enhanced dual.
    pub depth: usize,
    pub max_cycles: usize,
    pub stop_fraction: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::from(&OptimizerConfig::default())
    }
}

impl From<&OptimizerConfig> for OptimizerSpec {
    fn from(c: &OptimizerConfig) -> Self {
        let (dual, depth) = match c.dual_mode {
            DualMode::Full => (DualSpec::Full, 1),
            DualMode::Effective => (DualSpec::Effective, 1),
            DualMode::Enhanced { depth } => (DualSpec::Enhanced, depth),
        };
        Self {
            alpha: c.alpha,
            alpha_scale: c.alpha_scale,
            lambda_factor: c.lambda_factor,
            jacobian: match c.jacobian_mode {
                JacobianMode::Diagonal => JacobianSpec::Diagonal,
                JacobianMode::Patch => JacobianSpec::Patch,
            },
            dual,
            depth,
            max_cycles: c.max_cycles,
            stop_fraction: c.stop_fraction,
        }
    }
}

impl OptimizerSpec {
    pub fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            alpha: self.alpha,
            alpha_scale: self.alpha_scale,
            lambda_factor: self.lambda_factor,
            jacobian_mode: match self.jacobian {
                JacobianSpec::Diagonal => JacobianMode::Diagonal,
                JacobianSpec::Patch => JacobianMode::Patch,
            },
            dual_mode: match self.dual {
                DualSpec::Full => DualMode::Full,
                DualSpec::Effective => DualMode::Effective,
                DualSpec::Enhanced => DualMode::Enhanced { depth: self.depth },
            },
            max_cycles: self.max_cycles,
            stop_fraction: self.stop_fraction,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Checks what can be checked without building meshes.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        let MeshSpec { delta, coarse, micro } = self.mesh;
        if [delta, coarse, micro].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad(format!("mesh sizes must be positive, got {delta}, {coarse}, {micro}"));
        }
        if self.dof_cap == 0 {
            return bad("dof_cap must be positive".into());
        }
        match &self.field {
            FieldSpec::Lognormal { nx, ny, corr_len, gamma } => {
                if *nx == 0 || *ny == 0 || !(*corr_len > 0.0) || !(*gamma > 0.0) {
                    return bad("lognormal field needs nx, ny >= 1, corr_len > 0 and gamma > 0".into());
                }
            }
            FieldSpec::LognormalFile { gamma, .. } if !(*gamma > 0.0) => {
                return bad("gamma must be positive".into());
            }
            _ => {}
        }
        if let Some(AdvectionSpec::Stream { pieces_x, pieces_y, corr_len, peak, .. }) = &self.advection {
            if *pieces_x < 1 || *pieces_y < 1 || !(*corr_len > 0.0) || !(*peak >= 0.0) {
                return bad("stream advection needs pieces >= 1, corr_len > 0 and peak >= 0".into());
            }
        }
        if self.optimizer.dual == DualSpec::Full && !self.reference {
            return bad("the full dual needs `reference = true`".into());
        }
        self.optimizer.to_config().validate().map_err(Error::from)
    }
}

/// Built-in scenarios, also shipped as files under `presets/`.
pub const PRESETS: &[(&str, &str)] = &[
    ("identity-check", include_str!("../presets/identity-check.toml")),
    ("diffusion-lognormal-small", include_str!("../presets/diffusion-lognormal-small.toml")),
    ("diffusion-lognormal-tiny", include_str!("../presets/diffusion-lognormal-tiny.toml")),
    ("advection-small", include_str!("../presets/advection-small.toml")),
    ("diffusion-lognormal-large", include_str!("../presets/diffusion-lognormal-large.toml")),
    ("advection-large", include_str!("../presets/advection-large.toml")),
];

pub fn preset(name: &str) -> Result<ExperimentConfig, Error> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    ExperimentConfig::from_toml(text)
}
