//! Deterministic experiments: the instanton and the translating-front cost.

use kac_ldp::cost::{action, translating_path};
use kac_ldp::kernel::KernelRegistry;
use kac_ldp::mesoscopic::{mobility, tail_fit, weighted_norm_sq, Field, Grid, InstantonOptions, Mesoscopic};

use crate::config::ExperimentConfig;
use crate::experiment::Experiment;
use crate::record::{RunRecord, Table};
use crate::stats::Estimate;

pub struct InstantonExperiment;
pub struct CostExperiment;

fn exact(name: &str, value: f64) -> Estimate {
    Estimate {
        name: name.into(),
        value,
        std_err: 0.0,
        lower: value,
        upper: value,
    }
}

/// Summary of a computed instanton.
#[derive(Debug, Clone)]
pub struct InstantonSummary {
    pub field: Field,
    pub m_beta: f64,
    pub residual: f64,
    pub antisymmetry: f64,
    pub monotone: bool,
    pub endpoint_gap: f64,
    pub fbar: f64,
    pub norm_sq: f64,
    pub mu: f64,
    pub tail_r_squared: Option<f64>,
    pub tail_slope: Option<f64>,
}

pub fn instanton_summary(meso: &Mesoscopic, half_width: f64, dx: f64) -> anyhow::Result<InstantonSummary> {
    let field = meso.instanton(Grid::symmetric(half_width, dx)?, InstantonOptions::default())?;
    let n = field.values.len();
    let v = &field.values;
    let antisymmetry = (0..n).map(|k| (v[k] + v[n - 1 - k]).abs()).fold(0.0, f64::max);
    let monotone = v.windows(2).all(|w| w[1] >= w[0]);
    let m_beta = meso.m_beta();
    let endpoint_gap = (v[n - 1] - m_beta).abs().max((v[0] + m_beta).abs());
    let norm_sq = weighted_norm_sq(&field.derivative(), &field)?;
    let tail = tail_fit(&field, m_beta, 1.0, 1e-11);
    Ok(InstantonSummary {
        m_beta,
        residual: meso.residual(&field)?,
        antisymmetry,
        monotone,
        endpoint_gap,
        fbar: meso.free_energy(&field)?.total,
        norm_sq,
        mu: mobility(norm_sq),
        tail_r_squared: tail.map(|t| t.r_squared),
        tail_slope: tail.map(|t| t.slope),
        field,
    })
}

impl Experiment for InstantonExperiment {
    fn name(&self) -> &'static str {
        "instanton"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<RunRecord> {
        let profile = KernelRegistry::builtin().build(&cfg.kernel)?;
        let m = &cfg.mesoscopic;
        let meso = Mesoscopic::new(profile.as_ref(), m.dx, cfg.beta)?;
        let s = instanton_summary(&meso, m.half_width, m.dx)?;
        let mut rec = RunRecord::new("instanton", cfg.hash(), cfg.seed, 0);
        for (name, value) in [
            ("m_beta", s.m_beta),
            ("residual", s.residual),
            ("antisymmetry", s.antisymmetry),
            ("endpoint_gap", s.endpoint_gap),
            ("fbar", s.fbar),
            ("norm_sq", s.norm_sq),
            ("mobility", s.mu),
        ] {
            rec.estimates.push(exact(name, value));
        }
        if let Some(slope) = s.tail_slope {
            rec.estimates.push(exact("tail_slope", slope));
        }
        rec.check("residual", s.residual <= 1e-8, format!("{:.3e}", s.residual));
        rec.check(
            "antisymmetry",
            s.antisymmetry <= 1e-8,
            format!("{:.3e}", s.antisymmetry),
        );
        rec.check("monotone", s.monotone, "");
        rec.check("endpoints", s.endpoint_gap <= 1e-6, format!("{:.3e}", s.endpoint_gap));
        rec.check(
            "tail_fit",
            s.tail_r_squared.is_some_and(|r| r > 0.99),
            format!("R^2 {:?}", s.tail_r_squared),
        );
        let mut t = Table::new(&["x", "m"]);
        for (x, v) in s.field.grid.nodes().into_iter().zip(&s.field.values) {
            t.push(vec![x, *v]);
        }
        rec.tables.insert("profile".into(), t);
        Ok(rec)
    }
}

/// Action of the translating instanton and its prediction
/// `1/4 ||mbar'||^2 V^2 T`, at spacing `dx`.
pub fn translation_cost(cfg: &ExperimentConfig, dx: f64) -> anyhow::Result<(f64, f64)> {
    let profile = KernelRegistry::builtin().build(&cfg.kernel)?;
    let meso = Mesoscopic::new(profile.as_ref(), dx, cfg.beta)?;
    let inst = meso.instanton(
        Grid::symmetric(cfg.mesoscopic.half_width, dx)?,
        InstantonOptions::default(),
    )?;
    let eps = cfg.mesoscopic.epsilon;
    let v = cfg.domain.speed();
    let t = cfg.domain.t;
    let speed = eps * v;
    let steps = (t / (eps * eps) * speed / dx).round() as usize;
    let path = translating_path(&inst, speed, steps)?;
    let cost = action(&path, &meso)?.total;
    let norm = weighted_norm_sq(&inst.derivative(), &inst)?;
    Ok((cost, 0.25 * norm * v * v * t))
}

impl Experiment for CostExperiment {
    fn name(&self) -> &'static str {
        "cost"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<RunRecord> {
        let mut rec = RunRecord::new("cost", cfg.hash(), cfg.seed, 0);
        let mut t = Table::new(&["dx", "action", "prediction", "relative_error"]);
        let dx = cfg.mesoscopic.dx;
        for (k, h) in [dx, 0.5 * dx].into_iter().enumerate() {
            let (cost, pred) = translation_cost(cfg, h)?;
            let rel = (cost - pred).abs() / pred;
            t.push(vec![h, cost, pred, rel]);
            rec.estimates.push(exact(&format!("action[{k}]"), cost));
            rec.estimates.push(exact(&format!("prediction[{k}]"), pred));
            rec.check(&format!("within_1pct[{k}]"), rel < 0.01, format!("dx {h}: {rel:.2e}"));
        }
        rec.tables.insert("refinement".into(), t);
        Ok(rec)
    }
}
