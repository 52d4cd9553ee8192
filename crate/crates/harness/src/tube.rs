//! Monte Carlo estimates of tube probabilities against the discrete action.

use std::collections::BTreeSet;

use anyhow::{bail, Context};
use kac_ldp::glauber::{path_log_likelihood_ratio, Dynamics, GlauberRates, TiltedRates};
use kac_ldp::kac::{coarse_rate_pair, rate_bounds};
use kac_ldp::mesoscopic::{Grid, InstantonOptions, Mesoscopic};
use kac_ldp::quad::gauss_legendre;
use kac_ldp::rng::replica_rng;
use kac_ldp::tubelet::{
    c_star, cardinality_correction, discrete_action, optimal_fractions, tube_event_ln_prob, tube_membership,
    DiscretizedPath, TubeEvent, TubeModel,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::experiment::{Experiment, Lattice};
use crate::record::{ReplicaOutcome, RunRecord, Table};
use crate::stats::{neg_log_scale, proportion, weighted_mean, Estimate};

pub struct TubeExperiment;

/// Everything fixed before the replicas run.
pub struct TubeSetup {
    pub lattice: Lattice,
    pub model: TubeModel,
    pub sites_per_block: usize,
    pub dt: f64,
    pub delta: f64,
    pub start: Vec<f64>,
    pub targets: Vec<DiscretizedPath>,
    pub shifts: Vec<f64>,
    pub actions: Vec<f64>,
    pub slack: f64,
}

/// Euler path of the frozen-rate drift `2 (c_- - c_+)`, started at `start`.
pub fn flow_path(
    model: &TubeModel,
    start: &[f64],
    dt: f64,
    steps: usize,
    quantum: f64,
) -> kac_ldp::Result<DiscretizedPath> {
    let mut values = vec![start.to_vec()];
    for _ in 0..steps {
        let prev = values.last().unwrap();
        let next: Vec<f64> = (0..prev.len())
            .map(|i| {
                let (cp, cm) = coarse_rate_pair(prev[i], model.block_field(prev, i), model.beta);
                (prev[i] + dt * 2.0 * (cm - cp)).clamp(-1.0, 1.0)
            })
            .collect();
        values.push(next);
    }
    DiscretizedPath::quantize(quantum, dt, values)
}

/// `a` with its middle block at the final time pushed by `amount` toward 0.
pub fn shifted(a: &DiscretizedPath, amount: f64) -> kac_ldp::Result<DiscretizedPath> {
    let mut values = a.values.clone();
    let i = a.n_blocks() / 2;
    let last = values.last_mut().unwrap();
    let v = last[i];
    last[i] = if v > 0.0 { v - amount } else { v + amount }.clamp(-1.0, 1.0);
    DiscretizedPath::quantize(a.quantum, a.dt, values)
}

/// Computed slack on the `-gamma ln P` scale: the cardinality correction,
/// the rate-replacement exponents with constant `c`, and the Poisson and
/// surgery bands, summed over all steps.
pub fn slack_band(cfg: &ExperimentConfig, model: &TubeModel, steps: usize, dt: f64, delta: f64, quantum: f64) -> f64 {
    let q = cfg.schedule.quantities();
    let gamma = cfg.schedule.gamma;
    let alpha = cfg.schedule.alpha;
    let c = cfg.tube.slack_constant;
    let length = model.n_blocks as f64 * model.block_length;
    let cs = c_star(model.profile(), model.block_length, gamma);
    let replace = 2.0 * c * model.beta * length * dt / q.eta[1] * (cs + delta);
    let poisson = c * length * dt * ((delta / dt).powf(0.5 * (1.0 - alpha)) + q.eta[3].powf(1.0 - alpha));
    let stirling = gamma * (model.sites as f64).ln() * model.n_blocks as f64;
    cardinality_correction(gamma, model.n_blocks, steps, quantum) + steps as f64 * (replace + poisson + stirling)
}

fn instanton_block_averages(cfg: &ExperimentConfig, lattice: &Lattice, model: &TubeModel) -> anyhow::Result<Vec<f64>> {
    let meso = Mesoscopic::new(lattice.profile.as_ref(), cfg.mesoscopic.dx, cfg.beta)?;
    let grid = Grid::symmetric(cfg.mesoscopic.half_width, cfg.mesoscopic.dx)?;
    let inst = meso.instanton(grid, InstantonOptions::default())?;
    let center = 0.5 * (model.left + model.right());
    Ok(model
        .cells()
        .iter()
        .map(|&(u, v)| gauss_legendre(|x| inst.interpolate(x - center), u, v, 16) / (v - u))
        .collect())
}

pub fn tube_setup(cfg: &ExperimentConfig) -> anyhow::Result<TubeSetup> {
    let t = &cfg.tube;
    let q = cfg.schedule.quantities();
    let n = t
        .sites_per_block
        .unwrap_or_else(|| (q.block_length / cfg.schedule.gamma).round().max(1.0) as usize);
    if t.n_blocks == 0 || t.steps == 0 || t.shifts.is_empty() {
        bail!("tube experiment needs blocks, steps and at least one target");
    }
    let dt = t.dt.unwrap_or(q.dt);
    let delta = t.delta.unwrap_or(q.delta);
    let lattice = Lattice::new(cfg, n, t.n_blocks)?;
    let left = lattice.cell(0).0;
    let model = TubeModel::for_blocks(lattice.profile.clone(), &lattice.coarse, left, cfg.beta)?;
    let block_quantum = 2.0 / n as f64;
    let quantum = block_quantum * t.quantum_fraction;
    // attainable block magnetizations, so the initial draw can match them
    let start: Vec<f64> = instanton_block_averages(cfg, &lattice, &model)?
        .into_iter()
        .map(|m| -1.0 + ((m + 1.0) / block_quantum).round() * block_quantum)
        .collect();
    let flow = flow_path(&model, &start, dt, t.steps, quantum)?;
    let targets = t
        .shifts
        .iter()
        .map(|s| shifted(&flow, s * delta))
        .collect::<kac_ldp::Result<Vec<_>>>()?;
    let bounds = rate_bounds(cfg.beta, lattice.profile.sup_norm());
    let actions = targets
        .iter()
        .map(|a| Ok(discrete_action(a, &model, &BTreeSet::new(), 0.0, bounds)?.total))
        .collect::<kac_ldp::Result<Vec<_>>>()?;
    let slack = t
        .slack
        .unwrap_or_else(|| slack_band(cfg, &model, t.steps, dt, delta, quantum));
    Ok(TubeSetup {
        lattice,
        model,
        sites_per_block: n,
        dt,
        delta,
        start,
        targets,
        shifts: t.shifts.clone(),
        actions,
        slack,
    })
}

/// Glauber rates multiplied, per block and step, by `x_hat / c` so that the
/// frozen-rate process follows `a` on average.
pub fn tilt_toward(setup: &TubeSetup, a: &DiscretizedPath) -> kac_ldp::Result<TiltedRates> {
    let steps = a.n_times() - 1;
    let mut up = Vec::with_capacity(steps);
    let mut down = Vec::with_capacity(steps);
    for j in 1..=steps {
        let mut u = Vec::with_capacity(a.n_blocks());
        let mut d = Vec::with_capacity(a.n_blocks());
        for i in 0..a.n_blocks() {
            let r = setup.model.deterministic_rates(a, i, j)?;
            let (xp, xm) = optimal_fractions(a.slope(i, j), r.c_plus, r.c_minus)?;
            d.push(if r.c_plus > 0.0 { xp / r.c_plus } else { 1.0 });
            u.push(if r.c_minus > 0.0 { xm / r.c_minus } else { 1.0 });
        }
        up.push(u);
        down.push(d);
    }
    TiltedRates::new(setup.model.beta, a.dt, &setup.lattice.coarse, up, down)
}

/// `-gamma sum ln nu(B^delta)` over all cells of `a`, with frozen rates.
pub fn poisson_prediction(setup: &TubeSetup, a: &DiscretizedPath) -> kac_ldp::Result<f64> {
    let mut total = 0.0;
    for j in 1..a.n_times() {
        for i in 0..a.n_blocks() {
            let rates = setup.model.deterministic_rates(a, i, j)?;
            let ev = TubeEvent {
                start: Some(a.values[j - 1][i]),
                ..TubeEvent::new(a.slope(i, j), setup.delta)
            };
            total += tube_event_ln_prob(&rates, &ev)?;
        }
    }
    Ok(-setup.lattice.gamma * total)
}

fn stream(target: usize, replica: u64) -> u64 {
    ((target as u64 + 1) << 40) | replica
}

pub fn run_replicas(cfg: &ExperimentConfig, setup: &TubeSetup) -> anyhow::Result<Vec<ReplicaOutcome>> {
    let glauber = GlauberRates { beta: cfg.beta };
    let horizon = setup.dt * cfg.tube.steps as f64;
    let tilts = if cfg.tube.tilted {
        setup
            .targets
            .iter()
            .map(|a| tilt_toward(setup, a))
            .collect::<kac_ldp::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let lat = &setup.lattice;
    (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| -> anyhow::Result<ReplicaOutcome> {
            let mut rng = replica_rng(cfg.seed, r);
            let init = lat.draw_initial(&setup.start, setup.delta, &mut rng)?;
            let log = Dynamics::new(&lat.field, &glauber).simulate_with(&init, horizon, &mut rng)?;
            let tubes = setup
                .targets
                .iter()
                .map(|a| tube_membership(&log, a, setup.delta, &lat.coarse))
                .collect::<kac_ldp::Result<Vec<_>>>()?;
            let mut tilted_weights = Vec::with_capacity(tilts.len());
            for (k, (a, q)) in setup.targets.iter().zip(&tilts).enumerate() {
                let mut rng = replica_rng(cfg.seed, stream(k, r));
                let init = lat.draw_initial(&setup.start, setup.delta, &mut rng)?;
                let log = Dynamics::new(&lat.field, q).simulate_with(&init, horizon, &mut rng)?;
                let w = if tube_membership(&log, a, setup.delta, &lat.coarse)? {
                    path_log_likelihood_ratio(&log, &lat.field, &glauber, q)?.exp()
                } else {
                    0.0
                };
                tilted_weights.push(w);
            }
            Ok(ReplicaOutcome {
                replica: r,
                tubes,
                tilted_weights,
                ..ReplicaOutcome::default()
            })
        })
        .collect()
}

/// True when the estimates are non-decreasing along increasing action.
pub fn ordered_like(actions: &[f64], estimates: &[f64]) -> bool {
    let mut idx: Vec<usize> = (0..actions.len()).collect();
    idx.sort_by(|&a, &b| actions[a].total_cmp(&actions[b]));
    idx.windows(2)
        .all(|w| actions[w[0]] == actions[w[1]] || estimates[w[0]] <= estimates[w[1]])
}

impl Experiment for TubeExperiment {
    fn name(&self) -> &'static str {
        "tube"
    }

    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<RunRecord> {
        let setup = tube_setup(cfg).context("building targets")?;
        let outcomes = run_replicas(cfg, &setup)?;
        let gamma = setup.lattice.gamma;
        let mut rec = RunRecord::new("tube", cfg.hash(), cfg.seed, cfg.replicas);
        let mut table = Table::new(&[
            "target",
            "shift",
            "action",
            "neg_gamma_ln_p",
            "lower",
            "upper",
            "poisson_prediction",
            "slack",
        ]);
        let mut scaled = Vec::new();
        let mut within = true;
        for (k, a) in setup.targets.iter().enumerate() {
            let hits = outcomes.iter().filter(|o| o.tubes[k]).count();
            let p = proportion(&format!("p_direct[{k}]"), hits, cfg.replicas);
            let s = neg_log_scale(&format!("neg_gamma_ln_p[{k}]"), &p, gamma);
            let action = setup.actions[k];
            if hits == 0 {
                rec.warnings.push(format!(
                    "target {k}: no successes in {} replicas; reporting the one-sided bound -gamma ln P >= {:.4}",
                    cfg.replicas, s.lower
                ));
            }
            let mut best = s.value;
            let mut lower = s.lower;
            if cfg.tube.tilted {
                let w: Vec<f64> = outcomes.iter().map(|o| o.tilted_weights[k]).collect();
                let t = weighted_mean(&format!("p_tilted[{k}]"), &w);
                if hits >= 10 && t.value > 0.0 {
                    let z = (t.value - p.value).abs() / (t.std_err.powi(2) + p.std_err.powi(2)).sqrt();
                    rec.check(
                        &format!("tilted_agrees[{k}]"),
                        z <= 3.0,
                        format!("direct {:.5} tilted {:.5} z {z:.2}", p.value, t.value),
                    );
                }
                // the tilted estimate stands in when direct sampling never hits
                if hits == 0 && t.value > 0.0 {
                    best = -gamma * t.value.ln();
                    lower = best;
                }
                rec.estimates.push(t);
            }
            let ok = if best.is_finite() {
                (best - action).abs() <= setup.slack
            } else {
                lower <= action + setup.slack
            };
            within &= ok;
            let predicted = poisson_prediction(&setup, a)?;
            table.push(vec![
                k as f64,
                setup.shifts[k],
                action,
                best,
                s.lower,
                s.upper,
                predicted,
                setup.slack,
            ]);
            rec.estimates.push(Estimate {
                name: format!("action[{k}]"),
                value: action,
                std_err: 0.0,
                lower: action - setup.slack,
                upper: action + setup.slack,
            });
            scaled.push(best);
            rec.estimates.push(p);
            rec.estimates.push(s);
        }
        rec.check(
            "ordering",
            ordered_like(&setup.actions, &scaled),
            format!("actions {:?} estimates {:?}", setup.actions, scaled),
        );
        rec.check("within_slack", within, format!("slack {:.4}", setup.slack));
        rec.tables.insert("scatter".into(), table);
        rec.outcomes = outcomes;
        Ok(rec)
    }
}
