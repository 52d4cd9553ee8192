#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use kac_ldp::cost::{cost_density, cost_density_buw, crossover, nucleation_cost, optimal_nucleation};
use kac_ldp::glauber::{full_generator, gibbs_measure, lumped_generator, lumped_index, GlauberRates, DEFAULT_CAPACITY};
use kac_ldp::kac::{
    rate_bounds, Boundary, CoarseGeometry, CoarseModel, CoarseVariant, FieldMatrix, LatticeGeometry, SpinConfig,
};
use kac_ldp::kernel::KacKernel;
use kac_ldp::mesoscopic::Mesoscopic;
use kac_ldp::rng::replica_rng;
use kac_ldp::schedule::{default_mutations, mutate, validate_schedule, ScaleSchedule};
use kac_ldp::tubelet::{
    density_equivalence_check, move_away, tube_event_ln_prob, tube_event_prob_exact, tube_prob_asymptotic,
    DiscretizedPath, PoissonRatePair, SafetyCase, SurgeryScales, TubeEvent, TubeModel,
};
use kac_ldp_harness::analytic::{instanton_summary, translation_cost};
use kac_ldp_harness::stats::weighted_mean;
use kac_ldp_harness::{ExperimentConfig, Registry};
use rand::Rng;

type Outcome = anyhow::Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn kac_field(gamma: f64, n: usize) -> anyhow::Result<FieldMatrix> {
    let geom = LatticeGeometry::with_sites(gamma, n, Boundary::Neumann)?;
    let k = KacKernel::new(KacKernel::default_profile(), gamma)?;
    Ok(FieldMatrix::kac(&geom, &k))
}

fn gibbs_stationarity() -> Outcome {
    let beta = 1.4;
    let mut worst: f64 = 0.0;
    for n in [6, 7, 8] {
        let f = kac_field(0.2, n)?;
        let q = full_generator(&f, &GlauberRates { beta }, DEFAULT_CAPACITY)?;
        let pi = gibbs_measure(&f, beta, DEFAULT_CAPACITY)?;
        let stat = q.stationary_distribution()?;
        let diff = stat.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(q.stationarity_residual(&pi)).max(diff);
    }
    Ok((worst <= 1e-10, format!("max residual {worst:.2e}")))
}

fn lumping() -> Outcome {
    let (gamma, beta) = (0.3, 1.5);
    let lattice = LatticeGeometry::with_sites(gamma, 6, Boundary::Neumann)?;
    let cg = CoarseGeometry::uniform(gamma, 3, 2)?;
    let k = KacKernel::new(KacKernel::default_profile(), gamma)?;
    let model = CoarseModel::new(&lattice, cg.clone(), &k, CoarseVariant::SiteAveraged, beta)?;
    let field = FieldMatrix::coarse(&model);
    let full = full_generator(&field, &GlauberRates { beta }, DEFAULT_CAPACITY)?;
    let lumped = lumped_generator(&model, DEFAULT_CAPACITY)?;
    let map: Vec<usize> = (0..full.dim())
        .map(|s| lumped_index(&cg, &SpinConfig::from_bits(6, s)))
        .collect();
    let mut worst: f64 = 0.0;
    for t in [0.1, 1.0] {
        for target in 0..lumped.dim() {
            let f: Vec<f64> = (0..lumped.dim()).map(|s| (s == target) as u8 as f64).collect();
            let lifted: Vec<f64> = map.iter().map(|&s| f[s]).collect();
            let a = full.evolve(&lifted, t);
            let b = lumped.evolve(&f, t);
            for (s, &l) in map.iter().enumerate() {
                worst = worst.max((a[s] - b[l]).abs());
            }
        }
    }
    Ok((
        worst <= 1e-8,
        format!("max deviation {worst:.2e} over {} lumped states", lumped.dim()),
    ))
}

fn instanton() -> Outcome {
    let meso = Mesoscopic::new(KacKernel::default_profile().as_ref(), 0.05, 2.0)?;
    let s = instanton_summary(&meso, 10.0, 0.05)?;
    let r2 = s.tail_r_squared.unwrap_or(f64::NAN);
    let ok = s.residual <= 1e-8
        && s.antisymmetry <= 1e-8
        && s.monotone
        && s.endpoint_gap <= 1e-6
        && (s.m_beta - 0.9575).abs() < 1e-4
        && r2 > 0.99;
    Ok((
        ok,
        format!(
            "m_beta {:.6} residual {:.1e} antisym {:.1e} monotone {} endpoints {:.1e} R^2 {r2:.6}",
            s.m_beta, s.residual, s.antisymmetry, s.monotone, s.endpoint_gap
        ),
    ))
}

fn translating_cost() -> Outcome {
    let cfg = ExperimentConfig::from_toml("kind = \"cost\"\nbeta = 2.0\n[domain]\nr = 0.4\nt = 1.0")?;
    let mut ok = true;
    let mut detail = Vec::new();
    for dx in [0.05, 0.025] {
        let (cost, pred) = translation_cost(&cfg, dx)?;
        let rel = (cost - pred).abs() / pred;
        ok &= rel < 0.01;
        detail.push(format!("dx {dx}: {cost:.5} vs {pred:.5} ({rel:.1e})"));
    }
    Ok((ok, detail.join("; ")))
}

fn density_identity() -> Outcome {
    let mut rng = replica_rng(5, 0);
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    let mut flow: f64 = 0.0;
    for _ in 0..10_000 {
        let beta = rng.random_range(0.5..3.0);
        let phi: f64 = rng.random_range(-0.95..0.95);
        let conv: f64 = rng.random_range(-1.0..1.0);
        let psi: f64 = rng.random_range(-2.0..2.0);
        worst = worst.max(density_equivalence_check(phi, psi, conv, beta)?);
        if cost_density(phi, psi, conv, beta)? < 0.0 {
            negative += 1;
        }
        // the drift itself carries rounding, so H vanishes to rounding there
        let drift = (beta * conv).tanh() - phi;
        flow = flow.max(cost_density(phi, drift, conv, beta)?.abs());
    }
    let mut limits: f64 = 0.0;
    for (u, w) in [(0.0, 0.0), (0.3, -0.2), (-0.6, 0.5)] {
        let ratio = |b: f64| cost_density_buw(b, u, w).map(|h| h / (b * b));
        let small = (10.0 * ratio(1e-3)? - ratio(1e-2)?) / 9.0;
        let exact = 1.0 / (4.0 * (1.0 + u * w));
        limits = limits.max((small - exact).abs());
        let big = |b: f64| cost_density_buw(-b, u, w).map(|h| h / (b * (b + 1.0).ln()));
        let (b1, b2) = (1e50f64, 1e100f64);
        let (l1, l2) = (b1.ln(), b2.ln());
        let large = (l2 * big(b2)? - l1 * big(b1)?) / (l2 - l1);
        limits = limits.max((large - 0.5).abs());
    }
    let ok = worst <= 1e-10 && negative == 0 && flow <= 1e-14 && limits <= 1e-3;
    Ok((
        ok,
        format!("identity {worst:.1e}, negative {negative}, on flow {flow:.1e}, limits {limits:.1e}"),
    ))
}

fn poisson_asymptotics() -> Outcome {
    let (d, delta, alpha) = (0.08, 0.01, 0.1);
    let mut prev = f64::INFINITY;
    let mut ok = true;
    let mut detail = Vec::new();
    for n in [50usize, 200, 800] {
        let r = PoissonRatePair {
            c_plus: 0.25,
            c_minus: 0.25,
            sites: n,
            dt: 1.0,
        };
        let ev = TubeEvent {
            start: Some(0.0),
            ..TubeEvent::new(d, delta)
        };
        let exact = tube_event_ln_prob(&r, &ev)?;
        let est = tube_prob_asymptotic(&r, d, delta, alpha)?;
        let gap = (exact - est.ln_prob).abs() / n as f64;
        let band = (est.band + est.stirling) / n as f64;
        ok &= gap < prev && gap <= band && est.regime_ok;
        prev = gap;
        detail.push(format!("n {n}: {gap:.4} <= {band:.4}"));
    }
    let unit = PoissonRatePair {
        c_plus: 1.0,
        c_minus: 1.0,
        sites: 1,
        dt: 1.0,
    };
    let p = tube_event_prob_exact(&unit, &TubeEvent::new(0.0, 0.5))?;
    let oracle: f64 = (0..40u64)
        .map(|k| (-2.0f64).exp() / statrs::function::factorial::factorial(k).powi(2))
        .sum();
    ok &= (p - oracle).abs() < 1e-14 && (p - 0.30851).abs() < 1e-5;
    detail.push(format!("e^-2 I0(2): {p:.6}"));
    Ok((ok, detail.join("; ")))
}

fn move_away_surgery() -> Outcome {
    let (beta, sites, quantum, delta, delta_prime, dt, block) = (1.5, 40, 0.05, 0.025, 0.1, 1.0, 0.5);
    let model = TubeModel::new(KacKernel::default_profile(), -0.25, block, 1, sites, beta)?;
    let scales = SurgeryScales {
        sites,
        dt,
        alpha: 0.1,
        beta,
        block_length: block,
        c_min: rate_bounds(beta, model.profile().sup_norm()).0,
    };
    let ln_nu = |a: &DiscretizedPath| -> anyhow::Result<f64> {
        let rates = model.deterministic_rates(a, 0, 1)?;
        let ev = TubeEvent {
            start: Some(a.values[0][0]),
            ..TubeEvent::new(a.slope(0, 1), delta)
        };
        Ok(tube_event_ln_prob(&rates, &ev)?)
    };
    let cases = [
        (0.95, 0.95, SafetyCase::Inside),
        (-0.95, -0.95, SafetyCase::Inside),
        (1.0, 0.95, SafetyCase::Inside),
        (0.85, 0.95, SafetyCase::Enters),
        (-0.85, -0.95, SafetyCase::Enters),
        (0.9, 1.0, SafetyCase::Enters),
        (0.95, 0.85, SafetyCase::Exits),
        (-0.95, -0.85, SafetyCase::Exits),
        (1.0, 0.9, SafetyCase::Exits),
    ];
    let mut ok = true;
    let mut slack = f64::INFINITY;
    for (from, to, case) in cases {
        let a = DiscretizedPath::new(quantum, dt, vec![vec![from], vec![to]])?;
        let out = move_away(&a, delta_prime)?;
        let moved = &out.path;
        let away = moved.values.iter().flatten().all(|v| {
            1.0 - v.abs() >= delta_prime - 1e-12 && ((v + 1.0) / quantum - ((v + 1.0) / quantum).round()).abs() < 1e-9
        });
        let ratio = ln_nu(&a)? - ln_nu(moved)?;
        let m = case.exponent(delta_prime, &scales);
        ok &= out.cases[0][0] == Some(case) && away && ratio <= m;
        slack = slack.min(m - ratio);
    }
    Ok((
        ok,
        format!("{} profiles, smallest exponent margin {slack:.3}", cases.len()),
    ))
}

fn nucleation() -> Outcome {
    let below = optimal_nucleation(2.9f64.sqrt(), 1.0, 1.0, 1.0)?;
    let at = optimal_nucleation(3f64.sqrt(), 1.0, 1.0, 1.0)?;
    let above = optimal_nucleation(3.1f64.sqrt(), 1.0, 1.0, 1.0)?;
    let r = 12f64.sqrt();
    let w: Vec<f64> = (0..3)
        .map(|n| nucleation_cost(n, r, 1.0, 1.0, 1.0))
        .collect::<Result<_, _>>()?;
    let table_ok = (w[0] - 12.0).abs() < 1e-12 && (w[1] - 6.0).abs() < 1e-12 && (w[2] - 6.4).abs() < 1e-12;
    let switch_ok = below == [0] && at == [0, 1] && above == [1] && crossover(0, 1.0, 1.0) == 3.0;
    let meso = Mesoscopic::new(KacKernel::default_profile().as_ref(), 0.05, 2.0)?;
    let s = instanton_summary(&meso, 10.0, 0.05)?;
    let v2t = crossover(0, s.fbar, s.mu);
    let expected = 3.0 * s.mu * s.fbar;
    let w0 = nucleation_cost(0, v2t.sqrt(), 1.0, s.fbar, s.mu)?;
    let w1 = nucleation_cost(1, v2t.sqrt(), 1.0, s.fbar, s.mu)?;
    let computed_ok = (v2t - expected).abs() <= 1e-9 && (w0 - w1).abs() <= 1e-9;
    Ok((
        table_ok && switch_ok && computed_ok,
        format!(
            "w = {w:?}; argmin {below:?} {at:?} {above:?}; Fbar {:.6} mu {:.6} crossover {v2t:.9} |w0-w1| {:.1e}",
            s.fbar,
            s.mu,
            (w0 - w1).abs()
        ),
    ))
}

const REPETITIONS: u64 = 20;

fn tube_desk_scale() -> Outcome {
    let registry = Registry::builtin();
    let mut ok = true;
    let mut detail = Vec::new();
    for (gamma, n, delta) in [(0.05, 20, 0.25), (0.02, 50, 0.2)] {
        let mut good = 0;
        let mut direct = [(0usize, 0usize); 3];
        let mut tilted: Vec<Vec<f64>> = vec![Vec::new(); 3];
        for rep in 0..REPETITIONS {
            let cfg = ExperimentConfig::from_toml(&format!(
                "kind = \"tube\"\nseed = {}\nreplicas = 2000\n[schedule]\ngamma = {gamma}\n\
                 [tube]\nsites_per_block = {n}\ndelta = {delta}\ntilted = true",
                1000 + rep
            ))?;
            let rec = registry.run(&cfg)?;
            let passed = |name: &str| rec.checks.iter().any(|c| c.name == name && c.passed);
            if passed("ordering") && passed("within_slack") {
                good += 1;
            }
            for o in &rec.outcomes {
                for k in 0..3 {
                    direct[k].0 += o.tubes[k] as usize;
                    direct[k].1 += 1;
                    tilted[k].push(o.tilted_weights[k]);
                }
            }
        }
        let frac = good as f64 / REPETITIONS as f64;
        ok &= frac >= 0.95;
        let mut zs = Vec::new();
        for k in 0..3 {
            let (hits, total) = direct[k];
            if hits < 10 {
                continue;
            }
            let p = hits as f64 / total as f64;
            let se_d = (p * (1.0 - p) / total as f64).sqrt();
            let t = weighted_mean("t", &tilted[k]);
            let z = (t.value - p).abs() / (se_d * se_d + t.std_err * t.std_err).sqrt();
            ok &= z <= 3.0;
            zs.push(format!("{z:.2}"));
        }
        detail.push(format!(
            "gamma {gamma}: {good}/{REPETITIONS} consistent, tilted z [{}]",
            zs.join(", ")
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn schedule_validator() -> Outcome {
    let base = ScaleSchedule::default();
    let mut ok = validate_schedule(&base)?.is_empty();
    let mut named = Vec::new();
    for (constraint, changes) in default_mutations() {
        let violated = validate_schedule(&mutate(&base, &changes)?)?;
        ok &= violated == [constraint];
        named.push(constraint.name());
    }
    Ok((ok, format!("default admissible; mutations break {}", named.join(", "))))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gibbs stationarity", gibbs_stationarity, Duration::from_secs(10)),
        ("generator lumping", lumping, Duration::from_secs(30)),
        ("instanton", instanton, Duration::from_secs(60)),
        ("translating cost", translating_cost, Duration::from_secs(120)),
        ("cost density identity", density_identity, Duration::from_secs(60)),
        ("poisson asymptotics", poisson_asymptotics, Duration::from_secs(60)),
        ("move-away surgery", move_away_surgery, Duration::from_secs(60)),
        ("nucleation quantization", nucleation, Duration::from_secs(60)),
        ("tube desk-scale check", tube_desk_scale, Duration::from_secs(1800)),
        ("schedule validator", schedule_validator, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let (passed, detail) = match result {
            Ok((p, d)) => (p && took <= *budget, d),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} {:>2}. {name} ({:.2}s, budget {}s): {detail}",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
