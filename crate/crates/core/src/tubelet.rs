//! Coarse space-time-magnetization machinery: discretized paths, tube
//! events, Poisson tubelet probabilities, the rate function `f`, boundary
//! surgery and the bridge from the discrete sum to the action.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_density, DerivativeSource, PathProfile};
use crate::error::{Error, Result};
use crate::glauber::{block_spin_series, poisson_ln_pmf, EventLog};
use crate::kac::{coarse_rate_pair, glauber_rate, CoarseGeometry};
use crate::kernel::{cell_pair_integral, InteractionProfile};
use crate::mesoscopic::Grid;
use crate::quad::{gauss_legendre, piecewise_gauss_legendre};

/// `a[j][i]` on the quantized magnetization grid `-1 + k Delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedPath {
    pub quantum: f64,
    pub dt: f64,
    /// `values[j][i]`: time index `j`, block index `i`.
    pub values: Vec<Vec<f64>>,
}

fn on_grid(v: f64, quantum: f64) -> bool {
    let k = (v + 1.0) / quantum;
    (k - k.round()).abs() < 1e-9
}

impl DiscretizedPath {
    pub fn new(quantum: f64, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(quantum > 0.0 && quantum <= 2.0) || !(dt > 0.0) {
            return Err(Error::Parameter(format!("bad quantum {quantum} or dt {dt}")));
        }
        let nb = values.first().map_or(0, Vec::len);
        if values.is_empty() || nb == 0 || values.iter().any(|r| r.len() != nb) {
            return Err(Error::Shape("discretized path must be a non-empty rectangle".into()));
        }
        for (j, row) in values.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !(v.abs() <= 1.0 + 1e-12) {
                    return Err(Error::Domain(format!("a[{j}][{i}] = {v} outside [-1,1]")));
                }
                if !on_grid(v, quantum) {
                    return Err(Error::Quantization { value: v, quantum });
                }
            }
        }
        Ok(Self { quantum, dt, values })
    }

    /// Rounds every value to the nearest grid point in `[-1, 1]`.
    pub fn quantize(quantum: f64, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        let kmax = (2.0 / quantum + 1e-9).floor();
        let values = values
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| -1.0 + ((v + 1.0) / quantum).round().clamp(0.0, kmax) * quantum)
                    .collect()
            })
            .collect();
        Self::new(quantum, dt, values)
    }

    /// Quantized block magnetizations of a trajectory at `j dt`, `j < nt`.
    pub fn from_log(log: &EventLog, coarse: &CoarseGeometry, quantum: f64, dt: f64, nt: usize) -> Result<Self> {
        let times: Vec<f64> = (0..nt).map(|j| j as f64 * dt).collect();
        Self::quantize(quantum, dt, block_spin_series(log, coarse, &times)?)
    }

    pub fn n_blocks(&self) -> usize {
        self.values[0].len()
    }

    pub fn n_times(&self) -> usize {
        self.values.len()
    }

    /// `d_{i,j-1} = (a_{i,j} - a_{i,j-1}) / Delta t` for `j >= 1`.
    pub fn slope(&self, i: usize, j: usize) -> f64 {
        (self.values[j][i] - self.values[j - 1][i]) / self.dt
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        for row in &self.values {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(quantum: f64, dt: f64, r: R) -> Result<Self> {
        let mut values = Vec::new();
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Self::new(quantum, dt, values)
    }
}

/// `sup_{i,j} |m_gamma(sigma; i, j dt) - a_{i,j}|`.
pub fn tube_distance(log: &EventLog, a: &DiscretizedPath, coarse: &CoarseGeometry) -> Result<f64> {
    if coarse.n_blocks() != a.n_blocks() {
        return Err(Error::Shape(format!(
            "path has {} blocks, geometry has {}",
            a.n_blocks(),
            coarse.n_blocks()
        )));
    }
    let times: Vec<f64> = (0..a.n_times()).map(|j| j as f64 * a.dt).collect();
    let m = block_spin_series(log, coarse, &times)?;
    Ok(m.iter()
        .zip(&a.values)
        .flat_map(|(mr, ar)| mr.iter().zip(ar).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max))
}

/// `sigma ∈ {a}_delta`.
pub fn tube_membership(log: &EventLog, a: &DiscretizedPath, delta: f64, coarse: &CoarseGeometry) -> Result<bool> {
    Ok(tube_distance(log, a, coarse)? < delta)
}

/// `sigma ∈ {m}_delta` for a function target: block averages of `m(x, j dt)`
/// over the given cells.
pub fn function_tube_membership(
    log: &EventLog,
    coarse: &CoarseGeometry,
    cells: &[(f64, f64)],
    target: impl Fn(f64, f64) -> f64,
    dt: f64,
    nt: usize,
    delta: f64,
) -> Result<bool> {
    if cells.len() != coarse.n_blocks() {
        return Err(Error::Shape("one cell per block required".into()));
    }
    let times: Vec<f64> = (0..nt).map(|j| j as f64 * dt).collect();
    let m = block_spin_series(log, coarse, &times)?;
    for (j, row) in m.iter().enumerate() {
        let t = times[j];
        for (i, &(u, v)) in cells.iter().enumerate() {
            let avg = gauss_legendre(|x| target(x, t), u, v, 8) / (v - u);
            if !((row[i] - avg).abs() < delta) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Space layout of the blocks `I_i = [left + i |I|, left + (i+1) |I|]` with
/// reflecting ends.
#[derive(Debug, Clone)]
pub struct TubeModel {
    pub left: f64,
    pub block_length: f64,
    pub n_blocks: usize,
    /// Sites per block, `gamma^-1 |I|`.
    pub sites: usize,
    pub beta: f64,
    /// `A[i][k] = |I|^-1 int_{I_i} int_{I_k} J`, including reflected images.
    pub kernel_matrix: DMatrix<f64>,
    profile: std::sync::Arc<dyn InteractionProfile>,
}

impl TubeModel {
    pub fn new(
        profile: std::sync::Arc<dyn InteractionProfile>,
        left: f64,
        block_length: f64,
        n_blocks: usize,
        sites: usize,
        beta: f64,
    ) -> Result<Self> {
        if !(block_length > 0.0) || n_blocks == 0 || sites == 0 {
            return Err(Error::Parameter(
                "tube model needs positive block length, blocks and sites".into(),
            ));
        }
        let mut model = Self {
            left,
            block_length,
            n_blocks,
            sites,
            beta,
            kernel_matrix: DMatrix::zeros(n_blocks, n_blocks),
            profile,
        };
        for i in 0..n_blocks {
            for k in 0..n_blocks {
                let total: f64 = model
                    .images(k)
                    .into_iter()
                    .map(|c| cell_pair_integral(model.profile.as_ref(), model.cell(i), c))
                    .sum();
                model.kernel_matrix[(i, k)] = total / block_length;
            }
        }
        Ok(model)
    }

    /// Model on the blocks of a lattice geometry, cells taken from the
    /// nominal block length.
    pub fn for_blocks(
        profile: std::sync::Arc<dyn InteractionProfile>,
        coarse: &CoarseGeometry,
        left: f64,
        beta: f64,
    ) -> Result<Self> {
        let len = coarse.sites_per_block as f64 * coarse.gamma;
        Self::new(profile, left, len, coarse.n_blocks(), coarse.sites_per_block, beta)
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        let u = self.left + i as f64 * self.block_length;
        (u, u + self.block_length)
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        (0..self.n_blocks).map(|i| self.cell(i)).collect()
    }

    pub fn right(&self) -> f64 {
        self.left + self.n_blocks as f64 * self.block_length
    }

    pub fn profile(&self) -> &dyn InteractionProfile {
        self.profile.as_ref()
    }

    /// Cell `k` and its mirror images about both ends, out to kernel range.
    fn images(&self, k: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = (self.left, self.right());
        let period = 2.0 * (hi - lo);
        let reps = (1.0 / period).ceil() as i64 + 1;
        let (u, v) = self.cell(k);
        let mut out = Vec::new();
        for m in -reps..=reps {
            let s = m as f64 * period;
            out.push((u + s, v + s));
            out.push((2.0 * lo - v + s, 2.0 * lo - u + s));
        }
        out
    }

    /// `(1/|I|) int_{I_i} J * a(r) dr` for a piecewise-constant profile.
    pub fn block_field(&self, a: &[f64], i: usize) -> f64 {
        (0..self.n_blocks).map(|k| self.kernel_matrix[(i, k)] * a[k]).sum()
    }

    /// `(J * a)(x)` for a piecewise-constant profile.
    pub fn pointwise_field(&self, a: &[f64], x: f64) -> f64 {
        let mut breaks = self.profile.kinks();
        breaks.push(0.0);
        (0..self.n_blocks)
            .map(|k| {
                let mass: f64 = self
                    .images(k)
                    .into_iter()
                    .map(|(u, v)| {
                        let lo = (x - v).max(-1.0);
                        let hi = (x - u).min(1.0);
                        piecewise_gauss_legendre(|s| self.profile.eval(s), lo, hi, &breaks, 2)
                    })
                    .sum();
                mass * a[k]
            })
            .sum()
    }

    /// `(c_+, c_-)` of block `i` frozen at `a_{., j-1}`.
    pub fn deterministic_rates(&self, a: &DiscretizedPath, i: usize, j: usize) -> Result<PoissonRatePair> {
        if j == 0 || j >= a.n_times() || i >= a.n_blocks() || a.n_blocks() != self.n_blocks {
            return Err(Error::Shape(format!("no transition at block {i}, step {j}")));
        }
        let prev = &a.values[j - 1];
        let (c_plus, c_minus) = coarse_rate_pair(prev[i], self.block_field(prev, i), self.beta);
        Ok(PoissonRatePair {
            c_plus,
            c_minus,
            sites: self.sites,
            dt: a.dt,
        })
    }

    /// Largest change of either frozen rate when `a_{., j-1}` is replaced by
    /// `m` in block `i`.
    pub fn rate_mismatch(&self, a_prev: &[f64], m: &[f64], i: usize) -> f64 {
        let (p1, q1) = coarse_rate_pair(a_prev[i], self.block_field(a_prev, i), self.beta);
        let (p2, q2) = coarse_rate_pair(m[i], self.block_field(m, i), self.beta);
        (p1 - p2).abs().max((q1 - q2).abs())
    }
}

/// `C*(gamma) = |I| ||J'||_inf + gamma ||J||_inf`.
pub fn c_star(profile: &dyn InteractionProfile, block_length: f64, gamma: f64) -> f64 {
    block_length * profile.derivative_sup_norm() + gamma * profile.sup_norm()
}

/// Per-site intensities of the two Poisson clocks of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonRatePair {
    /// Moves `m_i` down by `2/n`.
    pub c_plus: f64,
    /// Moves `m_i` up by `2/n`.
    pub c_minus: f64,
    pub sites: usize,
    pub dt: f64,
}

impl PoissonRatePair {
    pub fn means(&self) -> (f64, f64) {
        let s = self.sites as f64 * self.dt;
        (s * self.c_plus, s * self.c_minus)
    }
}

/// `h(z|zeta) = z ln(z/zeta) - z + zeta`, with `h(0|zeta) = zeta`.
pub fn relative_entropy(z: f64, zeta: f64) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(Error::Domain(format!("relative entropy needs zeta > 0, got {zeta}")));
    }
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("relative entropy needs z >= 0, got {z}")));
    }
    Ok(h_ext(z, zeta))
}

// h extended to zeta = 0: zero at z = 0, infinite otherwise
fn h_ext(z: f64, zeta: f64) -> f64 {
    if zeta == 0.0 {
        return if z == 0.0 { 0.0 } else { f64::INFINITY };
    }
    if z == 0.0 {
        return zeta;
    }
    (z * (z / zeta).ln() - z + zeta).max(0.0)
}

/// `(x_+, x_-)` with `x_+ x_- = c_+ c_-` and `2 (x_- - x_+) = d`.
pub fn optimal_fractions(d: f64, c_plus: f64, c_minus: f64) -> Result<(f64, f64)> {
    if !(c_plus >= 0.0 && c_minus >= 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("bad rates ({c_plus}, {c_minus}) or slope {d}")));
    }
    let p = c_plus * c_minus;
    let q = d / 4.0;
    let root = (q * q + p).sqrt();
    // pick the cancellation-free branch for each root
    let (xp, xm) = if q >= 0.0 {
        let xm = q + root;
        (if xm > 0.0 { p / xm } else { 0.0 }, xm)
    } else {
        let xp = root - q;
        (xp, if xp > 0.0 { p / xp } else { 0.0 })
    };
    Ok((xp, xm))
}

/// `f = h(x_+|c_+) + h(x_-|c_-)` at the optimal fractions.
pub fn rate_function(d: f64, c_plus: f64, c_minus: f64) -> Result<f64> {
    let (xp, xm) = optimal_fractions(d, c_plus, c_minus)?;
    Ok(h_ext(xp, c_plus) + h_ext(xm, c_minus))
}

/// `f_dt = h(x_+ dt | c_+ dt) + h(x_- dt | c_- dt)`.
pub fn rate_function_dt(d: f64, c_plus: f64, c_minus: f64, dt: f64) -> Result<f64> {
    let (xp, xm) = optimal_fractions(d, c_plus, c_minus)?;
    Ok(h_ext(xp * dt, c_plus * dt) + h_ext(xm * dt, c_minus * dt))
}

/// `B^delta`: `|2 (N_- - N_+)/n - d dt| < delta`, optionally with
/// `N_+ + N_- <= cap` and the admissible range of plus jumps given the
/// starting value `a_{i,j-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeEvent {
    pub d: f64,
    pub delta: f64,
    pub jump_cap: Option<u64>,
    pub start: Option<f64>,
}

impl TubeEvent {
    pub fn new(d: f64, delta: f64) -> Self {
        Self {
            d,
            delta,
            jump_cap: None,
            start: None,
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln nu(B^delta)` by exact summation of the two Poisson laws, accumulated
/// in log space. `-inf` for an empty event.
pub fn tube_event_ln_prob(rates: &PoissonRatePair, event: &TubeEvent) -> Result<f64> {
    if !(event.delta > 0.0) || rates.sites == 0 || !(rates.dt > 0.0) {
        return Err(Error::Parameter("tube event needs delta > 0, sites > 0, dt > 0".into()));
    }
    let n = rates.sites as f64;
    let (lp, lm) = rates.means();
    let target = event.d * rates.dt;
    // k = N_- - N_+ ranges over |2k/n - target| < delta
    let k_lo = ((target - event.delta) * n / 2.0).floor() as i64;
    let k_hi = ((target + event.delta) * n / 2.0).ceil() as i64;
    let spread = |mean: f64| (mean + 40.0 * (mean + 1.0).sqrt() + 60.0) as i64;
    let k_lo = k_lo.max(-spread(lp));
    let k_hi = k_hi.min(spread(lm));
    let mut total = f64::NEG_INFINITY;
    for k in k_lo..=k_hi {
        let kk = 2.0 * k as f64 / n;
        if !((kk - target).abs() < event.delta) {
            continue;
        }
        let lo = (-k).max(0);
        let mut hi = i64::MAX;
        if let Some(cap) = event.jump_cap {
            // n_+ + n_- = 2 n_+ + k <= cap
            let c = cap as i64 - k;
            if c < 0 {
                continue;
            }
            hi = hi.min(c.div_euclid(2));
        }
        if let Some(a) = event.start {
            let frac = (0.5 * (1.0 + a)).min(0.5 * (1.0 - a) - 0.5 * kk) - event.delta;
            let m = (n * frac + 1e-9).floor();
            if m < 0.0 {
                continue;
            }
            hi = hi.min(m as i64);
        }
        if hi < lo {
            continue;
        }
        // the summand is log-concave in n_+: walk up until it is negligible
        let mut best = f64::NEG_INFINITY;
        let mut prev = f64::NEG_INFINITY;
        let mut np = lo;
        while np <= hi {
            let t = poisson_ln_pmf(np as u64, lp) + poisson_ln_pmf((np + k) as u64, lm);
            total = log_add(total, t);
            best = best.max(t);
            if t < prev && t < best - 60.0 {
                break;
            }
            if t == f64::NEG_INFINITY && np > lo {
                break;
            }
            prev = t;
            np += 1;
        }
    }
    Ok(total)
}

pub fn tube_event_prob_exact(rates: &PoissonRatePair, event: &TubeEvent) -> Result<f64> {
    Ok(tube_event_ln_prob(rates, event)?.exp())
}

/// Large-`n` estimate of `ln nu(B^delta)` with its error band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticEstimate {
    /// `-n dt f`.
    pub ln_prob: f64,
    /// `n (delta/dt)^{(1-alpha)/2} dt`.
    pub band: f64,
    /// `ln n`, the order of the Stirling correction.
    pub stirling: f64,
    /// False when a Poisson mean is below [`STIRLING_MIN_MEAN`].
    pub regime_ok: bool,
}

pub const STIRLING_MIN_MEAN: f64 = 10.0;

pub fn tube_prob_asymptotic(rates: &PoissonRatePair, d: f64, delta: f64, alpha: f64) -> Result<AsymptoticEstimate> {
    let n = rates.sites as f64;
    let f = rate_function(d, rates.c_plus, rates.c_minus)?;
    let (lp, lm) = rates.means();
    Ok(AsymptoticEstimate {
        ln_prob: -n * rates.dt * f,
        band: n * (delta / rates.dt).powf(0.5 * (1.0 - alpha)) * rates.dt,
        stirling: n.ln(),
        regime_ok: lp.min(lm) >= STIRLING_MIN_MEAN,
    })
}

/// Which end of the transition `j-1 -> j` of a block was moved off the
/// safety zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyCase {
    /// Only `a_{i,j}` moved.
    Enters,
    /// Only `a_{i,j-1}` moved.
    Exits,
    /// Both moved.
    Inside,
}

/// Constants entering the per-case ratio exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeryScales {
    pub sites: usize,
    pub dt: f64,
    pub alpha: f64,
    pub beta: f64,
    pub block_length: f64,
    pub c_min: f64,
}

impl SafetyCase {
    /// `M(gamma)` bounding `ln nu(B(a)) - ln nu(B(a~))` for one cell.
    pub fn exponent(self, delta_prime: f64, s: &SurgeryScales) -> f64 {
        let n = s.sites as f64;
        let e = 1.0 - s.alpha;
        let rate_terms = 2.0 * (1.0 + s.beta * delta_prime * s.block_length / s.c_min).ln()
            + 2.0 * s.beta * s.block_length * delta_prime * s.dt;
        n * match self {
            Self::Enters => 2.0 * s.dt * (delta_prime / (2.0 * s.dt)).powf(e) + 0.5 * delta_prime,
            Self::Exits => s.dt * (delta_prime / (4.0 * s.dt)).powf(e) + rate_terms + 0.5 * delta_prime,
            Self::Inside => rate_terms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveAway {
    pub path: DiscretizedPath,
    /// `cases[j-1][i]` for the transition `j-1 -> j`.
    pub cases: Vec<Vec<Option<SafetyCase>>>,
}

/// Shifts every value within `delta'` of `+-1` inward by `delta'`.
pub fn move_away(a: &DiscretizedPath, delta_prime: f64) -> Result<MoveAway> {
    let k = delta_prime / a.quantum;
    if !(delta_prime > 0.0 && delta_prime < 1.0) || (k - k.round()).abs() > 1e-9 {
        return Err(Error::Quantization {
            value: delta_prime,
            quantum: a.quantum,
        });
    }
    let moved = |v: f64| v > 1.0 - delta_prime || v < -1.0 + delta_prime;
    let snap = |v: f64| -1.0 + ((v + 1.0) / a.quantum).round() * a.quantum;
    let shift = |v: f64| {
        if v > 1.0 - delta_prime {
            snap(v - delta_prime)
        } else if v < -1.0 + delta_prime {
            snap(v + delta_prime)
        } else {
            v
        }
    };
    let values: Vec<Vec<f64>> = a.values.iter().map(|r| r.iter().map(|&v| shift(v)).collect()).collect();
    let cases = (1..a.n_times())
        .map(|j| {
            (0..a.n_blocks())
                .map(|i| match (moved(a.values[j - 1][i]), moved(a.values[j][i])) {
                    (false, false) => None,
                    (false, true) => Some(SafetyCase::Enters),
                    (true, false) => Some(SafetyCase::Exits),
                    (true, true) => Some(SafetyCase::Inside),
                })
                .collect()
        })
        .collect();
    let path = DiscretizedPath::new(a.quantum, a.dt, values)?;
    Ok(MoveAway { path, cases })
}

/// `(g_1, g_2)`: the rate function with both clocks at `c_M`, resp. `c_m`.
pub fn bad_interval_bounds(d: f64, a_prev: f64, c_min: f64, c_max: f64) -> Result<(f64, f64)> {
    let kp = 0.5 * (1.0 + a_prev);
    let km = 0.5 * (1.0 - a_prev);
    Ok((
        rate_function(d, kp * c_max, km * c_max)?,
        rate_function(d, kp * c_min, km * c_min)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteAction {
    /// `|I| dt sum (f or g_1)`.
    pub total: f64,
    pub good: f64,
    pub bad: f64,
    /// `cells[j-1][i]`: the rate-function value of each cell.
    pub cells: Vec<Vec<f64>>,
}

/// Discrete action of `a`: `f` on good transitions and `g_1` on the
/// transitions listed in `bad` (indexed by `j`, the end of the step).
pub fn discrete_action(
    a: &DiscretizedPath,
    model: &TubeModel,
    bad: &BTreeSet<usize>,
    bad_budget: f64,
    rate_bounds: (f64, f64),
) -> Result<DiscreteAction> {
    if bad.len() as f64 > bad_budget {
        return Err(Error::Parameter(format!(
            "{} bad intervals exceed the budget {bad_budget}",
            bad.len()
        )));
    }
    if bad.iter().any(|&j| j == 0 || j >= a.n_times()) {
        return Err(Error::Shape("bad interval index out of range".into()));
    }
    let weight = model.block_length * a.dt;
    let (mut good, mut badsum) = (0.0, 0.0);
    let mut cells = Vec::with_capacity(a.n_times().saturating_sub(1));
    for j in 1..a.n_times() {
        let mut row = Vec::with_capacity(a.n_blocks());
        for i in 0..a.n_blocks() {
            let d = a.slope(i, j);
            let v = if bad.contains(&j) {
                let v = bad_interval_bounds(d, a.values[j - 1][i], rate_bounds.0, rate_bounds.1)?.0;
                badsum += weight * v;
                v
            } else {
                let r = model.deterministic_rates(a, i, j)?;
                let v = rate_function(d, r.c_plus, r.c_minus)?;
                good += weight * v;
                v
            };
            row.push(v);
        }
        cells.push(row);
    }
    Ok(DiscreteAction {
        total: good + badsum,
        good,
        bad: badsum,
        cells,
    })
}

/// `gamma ln |Omega_gamma|` for explicit block and step counts.
pub fn cardinality_correction(gamma: f64, n_blocks: usize, n_steps: usize, quantum: f64) -> f64 {
    gamma * (n_blocks * n_steps) as f64 * (2.0 / quantum).ln()
}

/// `|H(phi, psi) - (h(y|c_+) + h(y + psi/2|c_-))|` with
/// `y = -psi/4 + sqrt(psi^2/16 + c_+ c_-)`.
pub fn density_equivalence_check(phi: f64, psi: f64, conv: f64, beta: f64) -> Result<f64> {
    let direct = cost_density(phi, psi, conv, beta)?;
    let cp = 0.5 * (1.0 + phi) * glauber_rate(1, conv, beta);
    let cm = 0.5 * (1.0 - phi) * glauber_rate(-1, conv, beta);
    let (y, y2) = optimal_fractions(psi, cp, cm)?;
    Ok((direct - (h_ext(y, cp) + h_ext(y2, cm))).abs())
}

/// `phi_a` sampled at `per_block` points per block (cell midpoints of a
/// uniform subdivision) and `per_step` points per time step, with the
/// piecewise-constant slope `psi_a` as the time derivative.
pub fn interpolant(a: &DiscretizedPath, model: &TubeModel, per_block: usize, per_step: usize) -> Result<PathProfile> {
    if per_block == 0 || per_step == 0 || a.n_blocks() != model.n_blocks {
        return Err(Error::Shape("bad interpolant resolution or block count".into()));
    }
    let hx = model.block_length / per_block as f64;
    let grid = Grid::new(model.left + 0.5 * hx, hx, a.n_blocks() * per_block)?;
    let ht = a.dt / per_step as f64;
    let nt = (a.n_times() - 1) * per_step + 1;
    let mut values = Vec::with_capacity(nt);
    let mut psi = Vec::with_capacity(nt);
    for q in 0..nt {
        // t in [(j-1) dt, j dt) uses the slope of step j; the last node
        // belongs to the last step
        let j = (q / per_step + 1).min(a.n_times() - 1);
        let s = (q as f64 * ht - (j - 1) as f64 * a.dt) / a.dt;
        let row: Vec<f64> = (0..grid.n)
            .map(|k| {
                let i = k / per_block;
                (1.0 - s) * a.values[j - 1][i] + s * a.values[j][i]
            })
            .collect();
        let drow: Vec<f64> = (0..grid.n).map(|k| a.slope(k / per_block, j)).collect();
        values.push(row);
        psi.push(drow);
    }
    let mut path = PathProfile::with_derivative(grid, ht, values, psi)?;
    path.derivative = DerivativeSource::Supplied;
    Ok(path)
}

/// `int int H(phi_a, psi_a)` with Gauss-Legendre nodes inside each block and
/// each time step and the exact convolution of the piecewise-constant
/// profile.
pub fn interpolant_action(a: &DiscretizedPath, model: &TubeModel, panels: usize) -> Result<f64> {
    if a.n_blocks() != model.n_blocks {
        return Err(Error::Shape("block count differs from model".into()));
    }
    let panels = panels.max(1);
    let mut total = 0.0;
    for i in 0..model.n_blocks {
        let (u, v) = model.cell(i);
        for j in 1..a.n_times() {
            let (a0, a1) = (&a.values[j - 1], &a.values[j]);
            let psi = a.slope(i, j);
            let err = std::cell::RefCell::new(None);
            let cell = gauss_legendre(
                |x| {
                    let c0 = model.pointwise_field(a0, x);
                    let c1 = model.pointwise_field(a1, x);
                    gauss_legendre(
                        |s| {
                            let phi = (1.0 - s) * a0[i] + s * a1[i];
                            let conv = (1.0 - s) * c0 + s * c1;
                            cost_density(phi, psi, conv, model.beta).unwrap_or_else(|e| {
                                *err.borrow_mut() = Some(e);
                                0.0
                            })
                        },
                        0.0,
                        1.0,
                        panels,
                    )
                },
                u,
                v,
                panels,
            );
            if let Some(e) = err.into_inner() {
                return Err(e);
            }
            total += cell * a.dt;
        }
    }
    Ok(total)
}

/// `C_gamma`: right-hand sides of the two estimates bounding the
/// replacement of `f` by `H`, with `p_bound` the measured
/// `int |psi ln(1 -+ phi)|`.
pub fn density_bridge_bound(q: &crate::schedule::ScaleQuantities, p_bound: f64) -> f64 {
    let eps_inv = 1.0 / q.epsilon;
    let (eta1, eta3, eta4) = (q.eta[1], q.eta[3], q.eta[4]);
    let il = q.block_length;
    let first = eps_inv.powi(4) * eta4 * eps_inv / (eta1 * eta1 * il * il);
    let second = eps_inv / (eta1 * il * eta3) * p_bound / q.dt.ln().abs();
    first + second
}

/// Space-time average with a smooth compactly supported bump of the given
/// radius (in grid units of each axis), reflecting at the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Mollified {
    pub path: PathProfile,
    /// `int int |phi_mollified - phi|`.
    pub l1_distance: f64,
}

fn bump_weights(radius: f64, h: f64) -> Vec<f64> {
    // cell averages of the bump, so a radius of one spacing still smooths
    let bump = |s: f64| {
        let u = s / radius;
        if u.abs() < 1.0 {
            (-1.0 / (1.0 - u * u)).exp()
        } else {
            0.0
        }
    };
    let r = (radius / h - 0.5).ceil().max(0.0) as i64;
    let mut w: Vec<f64> = (-r..=r)
        .map(|l| {
            let lo = ((l as f64 - 0.5) * h).max(-radius);
            let hi = ((l as f64 + 0.5) * h).min(radius);
            if hi > lo {
                gauss_legendre(bump, lo, hi, 4)
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

fn reflect(j: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    let r = j.rem_euclid(period);
    (if r < n { r } else { period - r }) as usize
}

fn smooth(values: &[Vec<f64>], wx: &[f64], wt: &[f64]) -> Vec<Vec<f64>> {
    let nt = values.len();
    let nx = values[0].len();
    let rx = (wx.len() / 2) as i64;
    let rt = (wt.len() / 2) as i64;
    let spatial: Vec<Vec<f64>> = values
        .iter()
        .map(|row| {
            (0..nx)
                .map(|k| {
                    wx.iter()
                        .enumerate()
                        .map(|(l, w)| w * row[reflect(k as i64 + l as i64 - rx, nx)])
                        .sum()
                })
                .collect()
        })
        .collect();
    (0..nt)
        .map(|j| {
            (0..nx)
                .map(|k| {
                    wt.iter()
                        .enumerate()
                        .map(|(l, w)| w * spatial[reflect(j as i64 + l as i64 - rt, nt)][k])
                        .sum()
                })
                .collect()
        })
        .collect()
}

pub fn mollify(path: &PathProfile, radius: f64) -> Result<Mollified> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!(
            "mollifier radius must be positive, got {radius}"
        )));
    }
    let wx = bump_weights(radius, path.grid.dx);
    let wt = bump_weights(radius, path.dt);
    let values = smooth(&path.values, &wx, &wt);
    let out = match path.derivative {
        DerivativeSource::FiniteDifference => PathProfile::new(path.grid, path.dt, values)?,
        DerivativeSource::Supplied => {
            let d = smooth(&path.phidot, &wx, &wt);
            PathProfile::with_derivative(path.grid, path.dt, values, d)?
        }
    };
    let w = crate::quad::trapezoid_weights(path.nt(), path.dt);
    let wxs = path.grid.weights();
    let l1 = out
        .values
        .iter()
        .zip(&path.values)
        .zip(&w)
        .map(|((p, q), wt)| {
            wt * p
                .iter()
                .zip(q)
                .zip(&wxs)
                .map(|((x, y), w)| w * (x - y).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(Mollified {
        path: out,
        l1_distance: l1,
    })
}
