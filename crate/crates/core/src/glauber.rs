//! Exact continuous-time simulation of spin-flip dynamics, event logs,
//! path likelihood ratios and dense generators for small systems.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kac::{coarse_rate_pair, glauber_rate, CoarseGeometry, CoarseModel, FieldMatrix, SpinConfig};
use crate::rng::{exponential, replica_rng, SimRng};

/// Per-site flip intensity as a function of the spin, its local field and
/// the index of the current time epoch.
///
/// Rates may change in time only at multiples of [`SiteRates::epoch_length`].
pub trait SiteRates: Send + Sync {
    fn rate(&self, site: usize, spin: i8, field: f64, epoch: usize) -> f64;

    fn epoch_length(&self) -> Option<f64> {
        None
    }
}

/// Glauber rates `F_sigma(h)` at inverse temperature `beta`.
#[derive(Debug, Clone, Copy)]
pub struct GlauberRates {
    pub beta: f64,
}

impl SiteRates for GlauberRates {
    fn rate(&self, _site: usize, spin: i8, field: f64, _epoch: usize) -> f64 {
        glauber_rate(spin, field, self.beta)
    }
}

/// Every site flips at the same constant rate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRates {
    pub rate: f64,
}

impl SiteRates for ConstantRates {
    fn rate(&self, _site: usize, _spin: i8, _field: f64, _epoch: usize) -> f64 {
        self.rate
    }
}

/// Glauber rates multiplied by per-block, per-window factors.
///
/// `up[j][i]` multiplies the rate of `-` spins in block `i` during window
/// `j`, `down[j][i]` that of `+` spins. Past the last window the last
/// factors stay in force.
#[derive(Debug, Clone)]
pub struct TiltedRates {
    pub beta: f64,
    pub window: f64,
    pub block_of: Vec<usize>,
    pub up: Vec<Vec<f64>>,
    pub down: Vec<Vec<f64>>,
}

impl TiltedRates {
    pub fn new(
        beta: f64,
        window: f64,
        coarse: &CoarseGeometry,
        up: Vec<Vec<f64>>,
        down: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if up.is_empty() || up.len() != down.len() {
            return Err(Error::Shape("tilt tables must be non-empty and of equal length".into()));
        }
        let nb = coarse.n_blocks();
        if up.iter().chain(down.iter()).any(|row| row.len() != nb) {
            return Err(Error::Shape(format!("tilt rows must have {nb} entries")));
        }
        if !(window > 0.0) {
            return Err(Error::Parameter("tilt window must be positive".into()));
        }
        Ok(Self {
            beta,
            window,
            block_of: (0..coarse.n_sites()).map(|x| coarse.block_of(x)).collect(),
            up,
            down,
        })
    }
}

impl SiteRates for TiltedRates {
    fn rate(&self, site: usize, spin: i8, field: f64, epoch: usize) -> f64 {
        let j = epoch.min(self.up.len() - 1);
        let i = self.block_of[site];
        let theta = if spin == 1 { self.down[j][i] } else { self.up[j][i] };
        theta * glauber_rate(spin, field, self.beta)
    }

    fn epoch_length(&self) -> Option<f64> {
        Some(self.window)
    }
}

/// Fenwick tree over non-negative weights with proportional sampling.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
    weights: Vec<f64>,
    top: usize,
}

impl Fenwick {
    fn new(weights: Vec<f64>) -> Self {
        let n = weights.len();
        let mut top = 1;
        while top * 2 <= n {
            top *= 2;
        }
        let mut f = Self {
            tree: vec![0.0; n + 1],
            weights,
            top,
        };
        f.rebuild();
        f
    }

    fn rebuild(&mut self) {
        let n = self.weights.len();
        for k in 1..=n {
            self.tree[k] = self.weights[k - 1];
        }
        for k in 1..=n {
            let parent = k + (k & k.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[k];
            }
        }
    }

    fn set(&mut self, idx: usize, w: f64) {
        let delta = w - self.weights[idx];
        self.weights[idx] = w;
        let n = self.weights.len();
        let mut k = idx + 1;
        while k <= n {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.weights.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.weights.len();
        let mut pos = 0;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step /= 2;
        }
        pos.min(n - 1)
    }
}

/// A single flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub site: u32,
}

/// Initial configuration plus the time-ordered flips up to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub initial: SpinConfig,
    pub events: Vec<Event>,
    pub horizon: f64,
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    initial: SpinConfig,
    horizon: f64,
    events: usize,
}

const LOG_MAGIC: &[u8; 8] = b"KLDPLOG1";

impl EventLog {
    pub fn empty(initial: SpinConfig, horizon: f64) -> Self {
        Self {
            initial,
            events: Vec::new(),
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks ordering, horizon and site indices.
    pub fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        let mut prev = 0.0;
        for (k, e) in self.events.iter().enumerate() {
            if e.time <= prev || e.time > self.horizon {
                return Err(Error::Format(format!("event {k} at t={} out of order", e.time)));
            }
            if e.site as usize >= n {
                return Err(Error::Format(format!("event {k} flips site {} of {n}", e.site)));
            }
            prev = e.time;
        }
        Ok(())
    }

    /// Configuration right after all flips with time `<= t`.
    pub fn snapshot(&self, t: f64) -> Result<SpinConfig> {
        let mut r = Replay::new(self);
        r.advance_to(t)?;
        Ok(r.state().clone())
    }

    /// One header line, then one `{"time":..,"site":..}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = LogHeader {
            initial: self.initial.clone(),
            horizon: self.horizon,
            events: self.events.len(),
        };
        let line = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
        for e in &self.events {
            let line = serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines.next().ok_or_else(|| Error::Format("empty event log".into()))??;
        let header: LogHeader = serde_json::from_str(&first).map_err(|e| Error::Format(e.to_string()))?;
        let mut events = Vec::with_capacity(header.events);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| Error::Format(e.to_string()))?);
        }
        if events.len() != header.events {
            return Err(Error::Format(format!(
                "header announces {} events, found {}",
                header.events,
                events.len()
            )));
        }
        let log = Self {
            initial: header.initial,
            events,
            horizon: header.horizon,
        };
        log.validate()?;
        Ok(log)
    }

    /// Little-endian binary: magic, site count, spins, horizon, event count,
    /// then `(f64 time, u32 site)` per event.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LOG_MAGIC)?;
        w.write_all(&(self.initial.len() as u64).to_le_bytes())?;
        let spins: Vec<u8> = self.initial.values().iter().map(|&s| s as u8).collect();
        w.write_all(&spins)?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        for e in &self.events {
            w.write_all(&e.time.to_le_bytes())?;
            w.write_all(&e.site.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != LOG_MAGIC {
            return Err(Error::Format("not an event log".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut spins = vec![0u8; n];
        r.read_exact(&mut spins)?;
        let initial = SpinConfig::new(spins.into_iter().map(|b| b as i8).collect())?;
        r.read_exact(&mut b8)?;
        let horizon = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut events = Vec::with_capacity(count);
        let mut b4 = [0u8; 4];
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            r.read_exact(&mut b4)?;
            events.push(Event {
                time: f64::from_le_bytes(b8),
                site: u32::from_le_bytes(b4),
            });
        }
        let log = Self {
            initial,
            events,
            horizon,
        };
        log.validate()?;
        Ok(log)
    }
}

/// Forward replay of a log.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    log: &'a EventLog,
    state: SpinConfig,
    next: usize,
}

impl<'a> Replay<'a> {
    pub fn new(log: &'a EventLog) -> Self {
        Self {
            log,
            state: log.initial.clone(),
            next: 0,
        }
    }

    /// Applies all events with time `<= t`; `t` must not decrease between calls.
    pub fn advance_to(&mut self, t: f64) -> Result<&SpinConfig> {
        if !(0.0..=self.log.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.log.horizon,
            });
        }
        while let Some(e) = self.log.events.get(self.next) {
            if e.time > t {
                break;
            }
            self.state.flip(e.site as usize);
            self.next += 1;
        }
        Ok(&self.state)
    }

    pub fn state(&self) -> &SpinConfig {
        &self.state
    }
}

/// `m_gamma(sigma; i, t)` for every block.
pub fn block_spin(log: &EventLog, coarse: &CoarseGeometry, t: f64) -> Result<Vec<f64>> {
    coarse.block_spin(&log.snapshot(t)?)
}

/// Block magnetizations at each of the (non-decreasing) times.
pub fn block_spin_series(log: &EventLog, coarse: &CoarseGeometry, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut r = Replay::new(log);
    times.iter().map(|&t| coarse.block_spin(r.advance_to(t)?)).collect()
}

/// Number of flips in `[t1, t2)`, optionally only those in the given blocks.
pub fn jump_count(log: &EventLog, t1: f64, t2: f64, blocks: Option<(&CoarseGeometry, &[usize])>) -> usize {
    let lo = log.events.partition_point(|e| e.time < t1);
    let hi = log.events.partition_point(|e| e.time < t2);
    if hi <= lo {
        return 0;
    }
    match blocks {
        None => hi - lo,
        Some((coarse, set)) => log.events[lo..hi]
            .iter()
            .filter(|e| set.contains(&coarse.block_of(e.site as usize)))
            .count(),
    }
}

/// Spin system driven by a field matrix and a rate law.
pub struct Dynamics<'a> {
    pub field: &'a FieldMatrix,
    pub rates: &'a dyn SiteRates,
}

// rebuild the Fenwick sums this often to bound floating-point drift
const REBUILD_EVERY: usize = 1 << 16;

struct Engine<'a> {
    field: &'a FieldMatrix,
    rates: &'a dyn SiteRates,
    state: SpinConfig,
    h: Vec<f64>,
    epoch: usize,
}

impl<'a> Engine<'a> {
    fn new(field: &'a FieldMatrix, rates: &'a dyn SiteRates, initial: &SpinConfig) -> Self {
        Self {
            field,
            rates,
            h: field.local_fields(initial),
            state: initial.clone(),
            epoch: 0,
        }
    }

    fn site_rate(&self, x: usize) -> f64 {
        self.rates.rate(x, self.state.get(x), self.h[x], self.epoch)
    }

    fn all_rates(&self) -> Vec<f64> {
        (0..self.state.len()).map(|x| self.site_rate(x)).collect()
    }

    fn flip(&mut self, x: usize) {
        let ds = -2.0 * self.state.get(x) as f64;
        self.state.flip(x);
        for &(l, v) in self.field.neighbors(x) {
            self.h[l as usize] += v * ds;
        }
    }

    fn next_boundary(&self) -> f64 {
        match self.rates.epoch_length() {
            Some(len) => (self.epoch + 1) as f64 * len,
            None => f64::INFINITY,
        }
    }
}

impl<'a> Dynamics<'a> {
    pub fn new(field: &'a FieldMatrix, rates: &'a dyn SiteRates) -> Self {
        Self { field, rates }
    }

    /// Exact realization over `[0, duration]` from stream `replica` of `seed`.
    pub fn simulate(&self, initial: &SpinConfig, duration: f64, seed: u64, replica: u64) -> Result<EventLog> {
        let mut rng = replica_rng(seed, replica);
        self.simulate_with(initial, duration, &mut rng)
    }

    pub fn simulate_with(&self, initial: &SpinConfig, duration: f64, rng: &mut SimRng) -> Result<EventLog> {
        if initial.len() != self.field.n_sites() {
            return Err(Error::Shape(format!(
                "configuration has {} sites, coupling has {}",
                initial.len(),
                self.field.n_sites()
            )));
        }
        if !(duration >= 0.0) {
            return Err(Error::Parameter(format!("duration must be >= 0, got {duration}")));
        }
        let mut log = EventLog::empty(initial.clone(), duration);
        if duration == 0.0 || initial.is_empty() {
            return Ok(log);
        }
        let mut eng = Engine::new(self.field, self.rates, initial);
        let mut tree = Fenwick::new(eng.all_rates());
        let mut t = 0.0;
        let mut since_rebuild = 0;
        loop {
            let boundary = eng.next_boundary();
            let total = tree.total();
            let tau = if total > 0.0 {
                exponential(rng, total)
            } else {
                f64::INFINITY
            };
            if t + tau >= boundary.min(duration) {
                if boundary < duration {
                    t = boundary;
                    eng.epoch += 1;
                    tree = Fenwick::new(eng.all_rates());
                    since_rebuild = 0;
                    continue;
                }
                break;
            }
            t += tau;
            let x = loop {
                let x = tree.find(rng.random::<f64>() * total);
                if tree.weights[x] > 0.0 {
                    break x;
                }
            };
            log.events.push(Event {
                time: t,
                site: x as u32,
            });
            eng.flip(x);
            tree.set(x, eng.site_rate(x));
            for &(l, _) in self.field.neighbors(x) {
                let l = l as usize;
                tree.set(l, eng.site_rate(l));
            }
            since_rebuild += 1;
            if since_rebuild >= REBUILD_EVERY {
                tree.rebuild();
                since_rebuild = 0;
            }
        }
        Ok(log)
    }
}

/// `ln dP/dQ` along the logged path, where `P` and `Q` share the field matrix
/// but use different rate laws:
/// `int_0^t (lambda_Q - lambda_P) ds + sum_jumps ln(c_P / c_Q)`.
pub fn path_log_likelihood_ratio(
    log: &EventLog,
    field: &FieldMatrix,
    p: &dyn SiteRates,
    q: &dyn SiteRates,
) -> Result<f64> {
    if log.initial.len() != field.n_sites() {
        return Err(Error::Shape("log and coupling sizes differ".into()));
    }
    let n = field.n_sites();
    let mut ep = Engine::new(field, p, &log.initial);
    let mut eq_epoch = 0usize;
    let q_boundary = |e: usize| q.epoch_length().map_or(f64::INFINITY, |l| (e + 1) as f64 * l);
    let rate_q = |eng: &Engine, x: usize, e: usize| q.rate(x, eng.state.get(x), eng.h[x], e);
    let mut rp: Vec<f64> = ep.all_rates();
    let mut rq: Vec<f64> = (0..n).map(|x| rate_q(&ep, x, 0)).collect();
    let mut lp: f64 = rp.iter().sum();
    let mut lq: f64 = rq.iter().sum();
    let mut t = 0.0;
    let mut integral = 0.0;
    let mut jumps = 0.0;
    let mut idx = 0;
    let mut since_resum = 0;
    loop {
        let next_event = log.events.get(idx).map_or(log.horizon, |e| e.time);
        let bp = ep.next_boundary();
        let bq = q_boundary(eq_epoch);
        let stop = next_event.min(bp).min(bq);
        integral += (lq - lp) * (stop - t);
        t = stop;
        if bp <= stop || bq <= stop {
            if bp <= stop {
                ep.epoch += 1;
                rp = ep.all_rates();
                lp = rp.iter().sum();
            }
            if bq <= stop {
                eq_epoch += 1;
                rq = (0..n).map(|x| rate_q(&ep, x, eq_epoch)).collect();
                lq = rq.iter().sum();
            }
            continue;
        }
        let Some(e) = log.events.get(idx) else {
            break;
        };
        let x = e.site as usize;
        if rq[x] <= 0.0 {
            if rp[x] <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            return Err(Error::Singular { time: e.time, site: x });
        }
        jumps += (rp[x] / rq[x]).ln();
        ep.flip(x);
        let mut update = |y: usize, ep: &Engine| {
            let np = ep.site_rate(y);
            let nq = rate_q(ep, y, eq_epoch);
            lp += np - rp[y];
            lq += nq - rq[y];
            rp[y] = np;
            rq[y] = nq;
        };
        update(x, &ep);
        for &(l, _) in field.neighbors(x) {
            update(l as usize, &ep);
        }
        since_resum += 1;
        if since_resum >= REBUILD_EVERY {
            lp = rp.iter().sum();
            lq = rq.iter().sum();
            since_resum = 0;
        }
        idx += 1;
    }
    Ok(integral + jumps)
}

/// Enumerated state space of a [`GeneratorMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpace {
    /// State `s` is the spin configuration with bits of `s` set to `+1`.
    Spins { n_sites: usize },
    /// Mixed-radix plus-counts per block, block 0 least significant.
    Magnetizations { block_sizes: Vec<usize> },
}

impl StateSpace {
    pub fn len(&self) -> usize {
        match self {
            Self::Spins { n_sites } => 1usize << n_sites,
            Self::Magnetizations { block_sizes } => block_sizes.iter().map(|n| n + 1).product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block magnetizations of a lumped state.
    pub fn magnetizations(&self, state: usize) -> Vec<f64> {
        match self {
            Self::Spins { n_sites } => vec![SpinConfig::from_bits(*n_sites, state).magnetization()],
            Self::Magnetizations { block_sizes } => {
                let mut rest = state;
                block_sizes
                    .iter()
                    .map(|&n| {
                        let plus = rest % (n + 1);
                        rest /= n + 1;
                        (2.0 * plus as f64 - n as f64) / n as f64
                    })
                    .collect()
            }
        }
    }
}

/// Lumped state index of a spin configuration.
pub fn lumped_index(coarse: &CoarseGeometry, sigma: &SpinConfig) -> usize {
    let mut idx = 0;
    let mut radix = 1;
    for i in 0..coarse.n_blocks() {
        let plus = sigma.values()[coarse.block_range(i)]
            .iter()
            .filter(|&&s| s == 1)
            .count();
        idx += plus * radix;
        radix *= coarse.sizes[i] + 1;
    }
    idx
}

/// Dense Markov generator: off-diagonal rates, diagonal minus row sums.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub matrix: DMatrix<f64>,
    pub space: StateSpace,
}

pub const DEFAULT_CAPACITY: usize = 1 << 20;
// dense matrices beyond this dimension are not materialized
const DENSE_LIMIT: usize = 1 << 12;

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn max_row_sum(&self) -> f64 {
        self.matrix.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }

    /// `exp(t Q) g`.
    pub fn evolve(&self, g: &[f64], t: f64) -> Vec<f64> {
        let e = (&self.matrix * t).exp();
        let v = nalgebra::DVector::from_column_slice(g);
        (e * v).iter().copied().collect()
    }

    /// `||pi Q||_inf`.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        let row = nalgebra::RowDVector::from_row_slice(pi) * &self.matrix;
        row.amax()
    }

    /// Solves `pi Q = 0`, `sum pi = 1` by LU.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut a = self.matrix.transpose();
        for c in 0..n {
            a[(n - 1, c)] = 1.0;
        }
        let mut b = nalgebra::DVector::zeros(n);
        b[n - 1] = 1.0;
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Domain("generator is not irreducible".into()))?;
        Ok(sol.iter().copied().collect())
    }
}

fn check_capacity(states: usize, capacity: usize) -> Result<()> {
    if states > capacity.min(DENSE_LIMIT) {
        return Err(Error::Capacity {
            states,
            capacity: capacity.min(DENSE_LIMIT),
        });
    }
    Ok(())
}

/// Generator of the spin dynamics on all `2^n` configurations.
pub fn full_generator(field: &FieldMatrix, rates: &dyn SiteRates, capacity: usize) -> Result<GeneratorMatrix> {
    let n = field.n_sites();
    if n >= usize::BITS as usize - 1 {
        return Err(Error::Capacity {
            states: usize::MAX,
            capacity,
        });
    }
    let dim = 1usize << n;
    check_capacity(dim, capacity)?;
    let mut q = DMatrix::zeros(dim, dim);
    for s in 0..dim {
        let sigma = SpinConfig::from_bits(n, s);
        let mut out = 0.0;
        for x in 0..n {
            let r = rates.rate(x, sigma.get(x), field.local_field(&sigma, x), 0);
            q[(s, s ^ (1 << x))] = r;
            out += r;
        }
        q[(s, s)] = -out;
    }
    Ok(GeneratorMatrix {
        matrix: q,
        space: StateSpace::Spins { n_sites: n },
    })
}

/// Generator of the block magnetizations on `M^I`: block `i` moves down by
/// `2/|I_i|` at rate `|I_i| cbar_+(i,m)` and up at rate `|I_i| cbar_-(i,m)`.
pub fn lumped_generator(model: &CoarseModel, capacity: usize) -> Result<GeneratorMatrix> {
    let sizes = model.geometry.sizes.clone();
    let space = StateSpace::Magnetizations {
        block_sizes: sizes.clone(),
    };
    let dim = sizes
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n + 1))
        .ok_or(Error::Capacity {
            states: usize::MAX,
            capacity,
        })?;
    check_capacity(dim, capacity)?;
    let mut q = DMatrix::zeros(dim, dim);
    let mut radix = vec![1usize; sizes.len()];
    for i in 1..sizes.len() {
        radix[i] = radix[i - 1] * (sizes[i - 1] + 1);
    }
    for s in 0..dim {
        let m = space.magnetizations(s);
        let mut out = 0.0;
        for i in 0..sizes.len() {
            let h = model.block_field(&m, i);
            let (cp, cm) = coarse_rate_pair(m[i], h, model.beta);
            let n = sizes[i] as f64;
            let plus = (s / radix[i]) % (sizes[i] + 1);
            if plus > 0 {
                q[(s, s - radix[i])] = n * cp;
                out += n * cp;
            }
            if plus < sizes[i] {
                q[(s, s + radix[i])] = n * cm;
                out += n * cm;
            }
        }
        q[(s, s)] = -out;
    }
    Ok(GeneratorMatrix { matrix: q, space })
}

/// Gibbs weights `exp(-beta H(sigma)) / Z` at zero field over all `2^n`
/// configurations.
pub fn gibbs_measure(coupling: &FieldMatrix, beta: f64, capacity: usize) -> Result<Vec<f64>> {
    let n = coupling.n_sites();
    let dim = 1usize << n;
    check_capacity(dim, capacity)?;
    let energies: Vec<f64> = (0..dim)
        .map(|s| crate::kac::energy(coupling, &SpinConfig::from_bits(n, s)))
        .collect::<Result<_>>()?;
    let emin = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-beta * (e - emin)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Chernoff bound `e^{-mean} (e mean / k)^k` on `P(Poisson(mean) >= k)`.
pub fn poisson_tail_bound(k: u64, mean: f64) -> Result<f64> {
    let kf = k as f64;
    if !(mean > 0.0) || kf <= mean {
        return Err(Error::Domain(format!(
            "tail bound needs k > mean > 0 (k={k}, mean={mean})"
        )));
    }
    Ok((-mean + kf * (1.0 + mean.ln() - kf.ln())).exp())
}

/// `P(Poisson(mean) >= k)` by summing the probability mass function upward.
pub fn poisson_upper_tail(k: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if (k as f64) < mean {
        let below: f64 = (0..k).map(|j| poisson_pmf(j, mean)).sum();
        return (1.0 - below).max(0.0);
    }
    let mut total = 0.0;
    let mut j = k;
    loop {
        let p = poisson_pmf(j, mean);
        total += p;
        if p < total * 1e-17 {
            break;
        }
        j += 1;
    }
    total
}

pub fn poisson_pmf(k: u64, mean: f64) -> f64 {
    poisson_ln_pmf(k, mean).exp()
}

pub fn poisson_ln_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mean.ln() - mean - ln_gamma(k as f64 + 1.0)
}
