//! Experiment kinds, selected by name.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use kac_ldp::kac::{Boundary, CoarseGeometry, FieldMatrix, LatticeGeometry, SpinConfig};
use kac_ldp::kernel::{InteractionProfile, KacKernel, KernelRegistry};
use kac_ldp::rng::SimRng;
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::record::RunRecord;

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<RunRecord>;
}

pub struct Registry {
    kinds: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { kinds: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(crate::tube::TubeExperiment));
        reg.register(Box::new(crate::switching::SwitchingExperiment));
        reg.register(Box::new(crate::analytic::InstantonExperiment));
        reg.register(Box::new(crate::analytic::CostExperiment));
        reg
    }

    pub fn register(&mut self, exp: Box<dyn Experiment>) {
        self.kinds.insert(exp.name(), exp);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kinds.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> anyhow::Result<&dyn Experiment> {
        self.kinds
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| anyhow!("unknown experiment kind `{name}` (known: {})", self.names().join(", ")))
    }

    /// Runs the configured kind and stamps wall-clock metrics.
    pub fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<RunRecord> {
        cfg.validate()?;
        let exp = self.get(&cfg.kind)?;
        let start = Instant::now();
        let mut record = exp.run(cfg).with_context(|| format!("running `{}`", cfg.kind))?;
        record.metrics.wall_seconds = start.elapsed().as_secs_f64();
        record.metrics.threads = rayon::current_num_threads();
        record.validate()?;
        Ok(record)
    }
}

/// Spin system on `n_blocks` blocks of `sites_per_block` sites with
/// reflecting ends.
pub struct Lattice {
    pub gamma: f64,
    pub geometry: LatticeGeometry,
    pub field: FieldMatrix,
    pub coarse: CoarseGeometry,
    pub profile: Arc<dyn InteractionProfile>,
}

impl Lattice {
    pub fn new(cfg: &ExperimentConfig, sites_per_block: usize, n_blocks: usize) -> anyhow::Result<Self> {
        let gamma = cfg.schedule.gamma;
        let profile = KernelRegistry::builtin().build(&cfg.kernel)?;
        let geometry = LatticeGeometry::with_sites(gamma, sites_per_block * n_blocks, Boundary::Neumann)?;
        let kernel = KacKernel::new(profile.clone(), gamma)?;
        let field = FieldMatrix::kac(&geometry, &kernel);
        let coarse = CoarseGeometry::uniform(gamma, sites_per_block, n_blocks)?;
        Ok(Self {
            gamma,
            geometry,
            field,
            coarse,
            profile,
        })
    }

    /// Mesoscopic cell of block `i`.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        self.coarse.cell(&self.geometry, i)
    }

    /// Independent spins with block means `m`, redrawn until every block
    /// average lies within `delta` of its mean.
    pub fn draw_initial(&self, m: &[f64], delta: f64, rng: &mut SimRng) -> anyhow::Result<SpinConfig> {
        const MAX_TRIES: usize = 100_000;
        for _ in 0..MAX_TRIES {
            let spins: Vec<i8> = (0..self.coarse.n_sites())
                .map(|x| {
                    let p = 0.5 * (1.0 + m[self.coarse.block_of(x)]);
                    if rng.random::<f64>() < p {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            let sigma = SpinConfig::new(spins)?;
            let blocks = self.coarse.block_spin(&sigma)?;
            if blocks.iter().zip(m).all(|(b, t)| (b - t).abs() < delta) {
                return Ok(sigma);
            }
        }
        Err(anyhow!(
            "no initial configuration within {delta} of the target after {MAX_TRIES} draws"
        ))
    }
}

/// Sets the global thread count from `KAC_LDP_THREADS` when present.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("KAC_LDP_THREADS") {
        let n: usize = v.parse().with_context(|| format!("KAC_LDP_THREADS={v}"))?;
        // a pool built earlier in the process stays in force
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
