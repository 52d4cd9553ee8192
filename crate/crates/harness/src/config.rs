//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use kac_ldp::kernel::{KernelRegistry, KernelSpec};
use kac_ldp::schedule::{validate_schedule, ScaleSchedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Registered experiment name: `tube`, `switching`, `instanton` or `cost`.
    pub kind: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub schedule: ScaleSchedule,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default)]
    pub mesoscopic: MesoSettings,
    #[serde(default)]
    pub tube: TubeSettings,
    #[serde(default)]
    pub switching: SwitchingSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

fn default_seed() -> u64 {
    1
}

fn default_replicas() -> usize {
    200
}

fn default_beta() -> f64 {
    1.5
}

/// Macroscopic distance `R` travelled in time `T`, and the half-length `L`
/// of the box in mesoscopic units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Domain {
    pub half_length: f64,
    pub r: f64,
    pub t: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            half_length: 4.0,
            r: 0.5,
            t: 1.0,
        }
    }
}

impl Domain {
    pub fn speed(&self) -> f64 {
        self.r / self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MesoSettings {
    pub dx: f64,
    pub half_width: f64,
    /// Time scale `epsilon` of the translating front.
    pub epsilon: f64,
}

impl Default for MesoSettings {
    fn default() -> Self {
        Self {
            dx: 0.05,
            half_width: 10.0,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeSettings {
    /// `gamma^-1 |I|`; derived from the schedule when absent.
    pub sites_per_block: Option<usize>,
    pub n_blocks: usize,
    pub steps: usize,
    /// Time step; the schedule's `Delta t` when absent.
    pub dt: Option<f64>,
    /// Tube width; the schedule's `Delta / 2` when absent, which is far too
    /// narrow for direct sampling at desk scale.
    pub delta: Option<f64>,
    /// Grid of the target paths, as a fraction of the block quantum `2/n`.
    pub quantum_fraction: f64,
    /// Shift of one cell of the flow path, in units of `delta`, per target.
    pub shifts: Vec<f64>,
    /// Also estimate each tube by exponential tilting toward it.
    pub tilted: bool,
    /// Constant `c` of the rate-replacement exponents.
    pub slack_constant: f64,
    /// Fixed slack replacing the computed band.
    pub slack: Option<f64>,
}

impl Default for TubeSettings {
    fn default() -> Self {
        Self {
            sites_per_block: None,
            n_blocks: 3,
            steps: 4,
            dt: Some(0.25),
            delta: Some(0.25),
            quantum_fraction: 0.125,
            shifts: vec![0.0, 1.5, 3.0],
            tilted: false,
            slack_constant: 1.0,
            slack: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchingSettings {
    /// Sites per block used for the free-energy and front measurements.
    pub sites_per_block: usize,
    /// Free-energy tolerance in the threshold `(2n+1) F(mbar) - delta`.
    pub delta: f64,
    /// Distance the front must advance, in mesoscopic units.
    pub advance: f64,
    /// Mesoscopic horizon of each replica.
    pub horizon: f64,
    /// Spacing of the free-energy samples.
    pub sample_dt: f64,
    /// Acceptance width of the initial block averages around `mbar`.
    pub initial_delta: f64,
}

impl Default for SwitchingSettings {
    fn default() -> Self {
        Self {
            sites_per_block: 10,
            delta: 0.5,
            advance: 0.5,
            horizon: 2.0,
            sample_dt: 0.25,
            initial_delta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub formats: Vec<crate::record::Format>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![crate::record::Format::Json],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.replicas == 0 {
            bail!("replicas must be at least 1");
        }
        if !(self.beta > 0.0) {
            bail!("beta must be positive, got {}", self.beta);
        }
        let violated = validate_schedule(&self.schedule)?;
        if !violated.is_empty() {
            let names: Vec<&str> = violated.iter().map(|c| c.name()).collect();
            bail!("schedule violates {}", names.join(", "));
        }
        KernelRegistry::builtin().build(&self.kernel)?;
        if !(self.domain.t > 0.0) || !(self.domain.half_length > 0.0) {
            bail!("domain needs positive T and L");
        }
        let m = &self.mesoscopic;
        if self.kind == "cost" && (!(m.epsilon > 0.0) || self.domain.r.abs() / m.epsilon > 0.75 * m.half_width) {
            bail!(
                "front moves {} units on a grid of half-width {}; raise epsilon or half_width",
                self.domain.r / m.epsilon,
                m.half_width
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
