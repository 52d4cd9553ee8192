//! Large-deviation cost of mesoscopic paths: the density `H`, the action of
//! a space-time profile, and the nucleation cost `w_n`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesoscopic::{Field, Grid, Mesoscopic};
use crate::quad::trapezoid_weights;

/// `ln cosh x` without overflow.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `H(phi, phidot)` with `conv = J*phi` at the point.
pub fn cost_density(phi: f64, phidot: f64, conv: f64, beta: f64) -> Result<f64> {
    if !(phi.abs() < 1.0) {
        return Err(Error::Domain(format!("cost density needs |phi| < 1, got {phi}")));
    }
    let bc = beta * conv;
    let t = bc.tanh();
    // 1 - tanh^2 = e^{-2 ln cosh}
    let ln_sech2 = -2.0 * ln_cosh(bc);
    let q = (1.0 - phi * phi) * ln_sech2.exp();
    let s = (q + phidot * phidot).sqrt();
    let first = if phidot == 0.0 {
        0.0
    } else {
        // ln(phidot + s), written through the conjugate when phidot < 0
        let ln_num = if phidot > 0.0 {
            (phidot + s).ln()
        } else {
            (1.0 - phi * phi).ln() + ln_sech2 - (s - phidot).ln()
        };
        let ln_ratio = ln_num - (1.0 - phi).ln() - 0.5 * ln_sech2;
        0.5 * phidot * (ln_ratio - bc)
    };
    Ok((first + 0.5 * (1.0 - phi * t - s)).max(0.0))
}

/// `H(b, u, w)` with `u = phi`, `w = -tanh(beta J*phi)`, `b = phidot + u + w`.
///
/// Returns `+inf` when `u = 1` and `b - u - w > 0`.
pub fn cost_density_buw(b: f64, u: f64, w: f64) -> Result<f64> {
    if !(w.abs() < 1.0) {
        return Err(Error::Domain(format!("cost density needs |w| < 1, got {w}")));
    }
    if !(u.abs() <= 1.0) {
        return Err(Error::Domain(format!("cost density needs |u| <= 1, got {u}")));
    }
    let bb = b - u - w;
    let q = (1.0 - u * u) * (1.0 - w * w);
    let s = (bb * bb + q).sqrt();
    let first = if bb == 0.0 {
        0.0
    } else if bb > 0.0 {
        if u == 1.0 {
            return Ok(f64::INFINITY);
        }
        bb * ((bb + s).ln() - (1.0 - u).ln() - (1.0 - w).ln())
    } else {
        if u == -1.0 {
            return Ok(f64::INFINITY);
        }
        bb * ((1.0 + u).ln() + (1.0 + w).ln() - (s - bb).ln())
    };
    Ok((0.5 * (first - s + 1.0 + u * w)).max(0.0))
}

/// How the time derivative of a [`PathProfile`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeSource {
    Supplied,
    FiniteDifference,
}

/// Space-time profile `phi(x, t_j)` on a uniform grid, `t_j = j dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
    pub grid: Grid,
    pub dt: f64,
    /// `values[j][k] = phi(x_k, t_j)`.
    pub values: Vec<Vec<f64>>,
    pub phidot: Vec<Vec<f64>>,
    pub derivative: DerivativeSource,
}

impl PathProfile {
    /// Profile with centered time differences (one-sided at the ends).
    pub fn new(grid: Grid, dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::check(&grid, dt, &values)?;
        let phidot = time_derivative(&values, dt);
        Ok(Self {
            grid,
            dt,
            values,
            phidot,
            derivative: DerivativeSource::FiniteDifference,
        })
    }

    pub fn with_derivative(grid: Grid, dt: f64, values: Vec<Vec<f64>>, phidot: Vec<Vec<f64>>) -> Result<Self> {
        Self::check(&grid, dt, &values)?;
        if phidot.len() != values.len() || phidot.iter().any(|r| r.len() != grid.n) {
            return Err(Error::Shape("time derivative shape differs from profile".into()));
        }
        Ok(Self {
            grid,
            dt,
            values,
            phidot,
            derivative: DerivativeSource::Supplied,
        })
    }

    pub fn from_fn(grid: Grid, dt: f64, nt: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..nt)
            .map(|j| grid.nodes().iter().map(|&x| f(x, j as f64 * dt)).collect())
            .collect();
        Self::new(grid, dt, values)
    }

    /// Every time slice equal to `field`.
    pub fn stationary(field: &Field, dt: f64, nt: usize) -> Result<Self> {
        Self::new(field.grid, dt, vec![field.values.clone(); nt])
    }

    fn check(grid: &Grid, dt: f64, values: &[Vec<f64>]) -> Result<()> {
        if !(dt > 0.0) || values.len() < 2 {
            return Err(Error::Shape("path needs dt > 0 and at least two time slices".into()));
        }
        for (j, row) in values.iter().enumerate() {
            if row.len() != grid.n {
                return Err(Error::Shape(format!(
                    "time slice {j} has {} nodes, grid has {}",
                    row.len(),
                    grid.n
                )));
            }
            if let Some(v) = row.iter().find(|v| !(v.abs() < 1.0)) {
                return Err(Error::Domain(format!("path value {v} at slice {j} not in (-1,1)")));
            }
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        self.values.len()
    }

    pub fn horizon(&self) -> f64 {
        (self.nt() - 1) as f64 * self.dt
    }

    pub fn slice(&self, j: usize) -> Field {
        Field::raw(self.grid, self.values[j].clone())
    }

    /// Time slices `from..=to` as a new path (derivatives kept as they are).
    pub fn window(&self, from: usize, to: usize) -> Result<Self> {
        if to <= from || to >= self.nt() {
            return Err(Error::Shape(format!("bad time window {from}..={to}")));
        }
        Ok(Self {
            grid: self.grid,
            dt: self.dt,
            values: self.values[from..=to].to_vec(),
            phidot: self.phidot[from..=to].to_vec(),
            derivative: DerivativeSource::Supplied,
        })
    }
}

fn time_derivative(values: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let nt = values.len();
    (0..nt)
        .map(|j| {
            let (a, b, h) = match j {
                0 => (0, 1, dt),
                j if j == nt - 1 => (nt - 2, nt - 1, dt),
                j => (j - 1, j + 1, 2.0 * dt),
            };
            values[b].iter().zip(&values[a]).map(|(p, q)| (p - q) / h).collect()
        })
        .collect()
}

/// The three integrals whose finiteness characterizes finite action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinitenessDiagnostics {
    /// `int |phidot ln|phidot||`
    pub rate_log_rate: f64,
    /// `int |phidot ln(1/(1-phi))|` over `phidot > 0`
    pub upward_boundary: f64,
    /// `int |phidot ln(1/(1+phi))|` over `phidot < 0`
    pub downward_boundary: f64,
}

/// Action of a path with its density field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub diagnostics: FinitenessDiagnostics,
    #[serde(skip)]
    pub density: Vec<Vec<f64>>,
}

impl CostBreakdown {
    /// `t,x,density` rows.
    pub fn write_density_csv<W: Write>(&self, path: &PathProfile, w: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "t,x,density")?;
        for (j, row) in self.density.iter().enumerate() {
            let t = j as f64 * path.dt;
            for (k, h) in row.iter().enumerate() {
                writeln!(w, "{t},{},{h}", path.grid.x(k))?;
            }
        }
        Ok(())
    }
}

/// `I = int int H dx dt` by tensor-product trapezoid quadrature.
pub fn action(path: &PathProfile, meso: &Mesoscopic) -> Result<CostBreakdown> {
    let beta = meso.beta();
    let rows: Vec<Result<(Vec<f64>, [f64; 3])>> = (0..path.nt())
        .into_par_iter()
        .map(|j| {
            let phi = &path.values[j];
            let conv = meso.stencil.convolve_values(&path.grid, phi);
            let mut dens = Vec::with_capacity(phi.len());
            let mut diag = [0.0; 3];
            let wx = path.grid.weights();
            for k in 0..phi.len() {
                let pd = path.phidot[j][k];
                dens.push(cost_density(phi[k], pd, conv[k], beta)?);
                if pd != 0.0 {
                    diag[0] += wx[k] * (pd * pd.abs().ln()).abs();
                    if pd > 0.0 {
                        diag[1] += wx[k] * (pd * (1.0 - phi[k]).ln()).abs();
                    } else {
                        diag[2] += wx[k] * (pd * (1.0 + phi[k]).ln()).abs();
                    }
                }
            }
            Ok((dens, diag))
        })
        .collect();
    let wt = trapezoid_weights(path.nt(), path.dt);
    let wx = path.grid.weights();
    let mut total = 0.0;
    let mut d = [0.0; 3];
    let mut density = Vec::with_capacity(path.nt());
    for (j, row) in rows.into_iter().enumerate() {
        let (dens, diag) = row?;
        let slice: f64 = dens.iter().zip(&wx).map(|(h, w)| h * w).sum();
        total += wt[j] * slice;
        for i in 0..3 {
            d[i] += wt[j] * diag[i];
        }
        density.push(dens);
    }
    Ok(CostBreakdown {
        total,
        diagnostics: FinitenessDiagnostics {
            rate_log_rate: d[0],
            upward_boundary: d[1],
            downward_boundary: d[2],
        },
        density,
    })
}

/// `phi(x, t_j) = mbar(x - s_j)` with `s_j = j dx` (one grid cell per time
/// step), i.e. speed `dx / dt`. Nodes shifted past the left end take the
/// left boundary value.
pub fn translating_path(instanton: &Field, speed: f64, steps: usize) -> Result<PathProfile> {
    let grid = instanton.grid;
    let dt = grid.dx / speed;
    let values = (0..=steps)
        .map(|j| (0..grid.n).map(|k| instanton.values[k.saturating_sub(j)]).collect())
        .collect();
    PathProfile::new(grid, dt, values)
}

/// `w_n = 2n Fbar + V^2 T / (mu (2n+1))`, `V = R/T`.
pub fn nucleation_cost(n: u32, r: f64, t: f64, fbar: f64, mu: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("horizon T must be positive, got {t}")));
    }
    let v = r / t;
    let k = 2.0 * n as f64 + 1.0;
    Ok(2.0 * n as f64 * fbar + v * v * t / (mu * k))
}

/// `V^2 T` at which `w_n = w_{n+1}`.
pub fn crossover(n: u32, fbar: f64, mu: f64) -> f64 {
    let k = 2.0 * n as f64 + 1.0;
    mu * fbar * k * (k + 2.0)
}

/// Minimizers of `w_n` over `n >= 0`; two when tied within `1e-12` relative.
pub fn optimal_nucleation(r: f64, t: f64, fbar: f64, mu: f64) -> Result<Vec<u32>> {
    let mut costs = vec![nucleation_cost(0, r, t, fbar, mu)?];
    // w_n is convex in n, so stop once it increases
    loop {
        let n = costs.len() as u32;
        let next = nucleation_cost(n, r, t, fbar, mu)?;
        let prev = costs[costs.len() - 1];
        costs.push(next);
        if next > prev * (1.0 + 1e-12) + 1e-300 || n > 1_000_000 {
            break;
        }
    }
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
    Ok(costs
        .iter()
        .enumerate()
        .filter(|(_, c)| (**c - best).abs() <= tol)
        .map(|(n, _)| n as u32)
        .collect())
}
