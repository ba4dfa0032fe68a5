//! Run configuration: strict JSON schema, validation with field-path error
//! messages, and defaults recorded for the manifest.

use serde::{Deserialize, Serialize};

use fieldflow::lattice::{build_geometry, LatticeGeometry, MassParams};
use fieldflow::potential::{
    quadratic_model, sine_gordon_model, PotentialModel, SineGordonParams, ZeroPotential,
};
use fieldflow::spectral::SpectralMultiplier;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub d: usize,
    pub side: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind")]
pub enum ModelBlock {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "sine-gordon")]
    SineGordon { z: f64, beta: f64 },
    #[serde(rename = "quadratic")]
    Quadratic { b: BSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind")]
pub enum BSpec {
    #[serde(rename = "constant")]
    Constant { value: f64 },
    #[serde(rename = "proportional-to-a")]
    ProportionalToA { factor: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    /// Inner Monte-Carlo samples per estimate.
    pub n_inner: usize,
    /// Blocks for standard errors.
    pub n_blocks: usize,
    /// Common random numbers across times and probe perturbations.
    pub crn: bool,
    /// Nodes of the geometric time grid (profile and flow).
    pub t_nodes: usize,
    /// Velocity-norm tolerance fixing the flow horizon.
    pub truncation_tol: f64,
    /// Expected flow-integration accuracy (round trips are flagged beyond
    /// ten times this).
    pub integrator_tol: f64,
    /// Bridge horizon; 0 means 14 / a(0) capped at 1e4.
    pub tau: f64,
    /// Bridge schedule: "truncated-heat" or "linear".
    pub schedule: String,
    pub schedule_knots: usize,
    pub sde_steps: usize,
    pub n_paths: usize,
    /// Ensemble sizes (MALA samples, transported samples).
    pub n_samples: usize,
    pub burnin: usize,
    pub mala_step: f64,
    pub thin: usize,
    pub tune_step: bool,
    /// Curvature-profile probe count.
    pub probes: usize,
    pub adversarial: bool,
    /// Isoperimetry radii and half-space threshold.
    pub r_grid: Vec<f64>,
    pub threshold: f64,
    /// p-Poincaré exponents.
    pub p_values: Vec<f64>,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        Self {
            n_inner: 4096,
            n_blocks: 32,
            crn: true,
            t_nodes: 64,
            truncation_tol: 1e-8,
            integrator_tol: 1e-6,
            tau: 0.0,
            schedule: "truncated-heat".into(),
            schedule_knots: 257,
            sde_steps: 128,
            n_paths: 4096,
            n_samples: 10_000,
            burnin: 2_000,
            mala_step: 0.1,
            thin: 4,
            tune_step: true,
            probes: 64,
            adversarial: false,
            r_grid: vec![0.1, 0.5, 1.0],
            threshold: 0.0,
            p_values: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryBlock,
    pub mass: f64,
    pub model: ModelBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub threads: usize,
}

/// A validated configuration with constructed objects and regime notes.
pub struct Validated {
    pub config: RunConfig,
    pub geometry: LatticeGeometry,
    pub mass: MassParams,
    pub model: PotentialModel,
    pub warnings: Vec<String>,
}

/// Load and validate a config file; errors carry the offending field path.
pub fn load_config(path: &std::path::Path) -> anyhow::Result<Validated> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("config parse error at line {}: {e}", e.line()))?;
    validate(config)
}

pub fn validate(config: RunConfig) -> anyhow::Result<Validated> {
    let mut warnings = Vec::new();
    let geometry = build_geometry(config.geometry.d, config.geometry.side, config.geometry.eps)
        .map_err(|e| anyhow::anyhow!("geometry.eps: {e}"))?;
    let mass =
        MassParams::new(config.mass).map_err(|e| anyhow::anyhow!("mass: {e}"))?;

    let model: PotentialModel = match &config.model {
        ModelBlock::Zero => std::sync::Arc::new(ZeroPotential::new(geometry)),
        ModelBlock::SineGordon { z, beta } => {
            let params = SineGordonParams::new(*z, *beta)
                .map_err(|e| anyhow::anyhow!("model.beta: {e}"))?;
            if params.outside_beta_regime() {
                warnings.push(format!(
                    "model.beta = {beta} is outside the β < 6π regime; curvature bounds may degrade"
                ));
            }
            if config.geometry.side * config.mass < 1.0 {
                warnings.push(format!(
                    "L·m = {} < 1: infrared-uniform constants are not expected",
                    config.geometry.side * config.mass
                ));
            }
            let sg = sine_gordon_model(geometry, params)
                .map_err(|e| anyhow::anyhow!("model: {e}"))?;
            if sg.coupling_power_warning {
                warnings.push(
                    "model: sine-Gordon coupling power 2 - β/4π is the d = 2 one; d ≠ 2 runs are exploratory"
                        .into(),
                );
            }
            std::sync::Arc::new(sg)
        }
        ModelBlock::Quadratic { b } => {
            let mult = match b {
                BSpec::Constant { value } => {
                    if *value < 0.0 {
                        anyhow::bail!("model.b.value: must be nonnegative (got {value})");
                    }
                    SpectralMultiplier::from_eigenvalue_fn(geometry, mass, |_| *value)
                }
                BSpec::ProportionalToA { factor } => {
                    if *factor < 0.0 {
                        anyhow::bail!("model.b.factor: must be nonnegative (got {factor})");
                    }
                    SpectralMultiplier::from_eigenvalue_fn(geometry, mass, |a| factor * a)
                }
            };
            std::sync::Arc::new(
                quadratic_model(geometry, mass, mult)
                    .map_err(|e| anyhow::anyhow!("model.b: {e}"))?,
            )
        }
    };

    let n = &config.numerics;
    if n.n_inner < 2 {
        anyhow::bail!("numerics.n_inner: must be at least 2 (got {})", n.n_inner);
    }
    if n.sde_steps < 10 {
        anyhow::bail!(
            "numerics.sde_steps: bridge needs at least 10 steps (got {})",
            n.sde_steps
        );
    }
    if !(n.truncation_tol > 0.0) || !(n.integrator_tol > 0.0) {
        anyhow::bail!("numerics.truncation_tol / integrator_tol: must be positive");
    }
    if n.schedule != "truncated-heat" && n.schedule != "linear" {
        anyhow::bail!(
            "numerics.schedule: expected \"truncated-heat\" or \"linear\" (got {:?})",
            n.schedule
        );
    }
    if !(n.tau >= 0.0) {
        anyhow::bail!("numerics.tau: must be nonnegative (0 = automatic)");
    }
    for (i, p) in n.p_values.iter().enumerate() {
        if !(*p >= 1.0) {
            anyhow::bail!("numerics.p_values[{i}]: p must be ≥ 1 (got {p})");
        }
    }
    for (i, r) in n.r_grid.iter().enumerate() {
        if !(*r >= 0.0) {
            anyhow::bail!("numerics.r_grid[{i}]: radius must be ≥ 0 (got {r})");
        }
    }

    Ok(Validated {
        config,
        geometry,
        mass,
        model,
        warnings,
    })
}

/// Bridge horizon: configured value, or 14/a(0) capped at 1e4.
pub fn bridge_tau(v: &Validated) -> f64 {
    if v.config.numerics.tau > 0.0 {
        v.config.numerics.tau
    } else {
        let a0 = v.geometry.site_volume() * v.mass.m();
        (14.0 / a0).min(1e4)
    }
}
