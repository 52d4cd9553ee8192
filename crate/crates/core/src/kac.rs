//! Microscopic lattice, spin configurations, Kac couplings, Glauber rates and
//! their block-averaged counterparts.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cell_pair_integral, KacKernel};

/// Boundary treatment at the two ends of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Sites outside the box do not interact.
    Free,
    /// Spins are reflected across the half-sample points beyond each end.
    #[default]
    Neumann,
}

/// The lattice `S_gamma = [-L/eps, L/eps] ∩ gamma Z` in mesoscopic units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    pub gamma: f64,
    pub epsilon: f64,
    pub half_length: f64,
    pub n_sites: usize,
    pub boundary: Boundary,
}

impl LatticeGeometry {
    /// Lattice with `eps = |ln gamma|^(-a)` and macroscopic half-length `L`.
    pub fn from_exponent(gamma: f64, a: f64, half_length: f64, boundary: Boundary) -> Result<Self> {
        check_gamma(gamma)?;
        Self::new(gamma, epsilon_of(gamma, a), half_length, boundary)
    }

    pub fn new(gamma: f64, epsilon: f64, half_length: f64, boundary: Boundary) -> Result<Self> {
        check_gamma(gamma)?;
        if !(epsilon > 0.0) || !(half_length > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon and half-length must be positive (got {epsilon}, {half_length})"
            )));
        }
        let half_sites = (half_length / epsilon / gamma + 1e-9).floor() as usize;
        Ok(Self {
            gamma,
            epsilon,
            half_length,
            n_sites: 2 * half_sites + 1,
            boundary,
        })
    }

    /// Bare lattice of `n_sites` sites with spacing `gamma`, centered at zero.
    pub fn with_sites(gamma: f64, n_sites: usize, boundary: Boundary) -> Result<Self> {
        check_gamma(gamma)?;
        if n_sites == 0 {
            return Err(Error::Parameter("lattice needs at least one site".into()));
        }
        let half_length = 0.5 * (n_sites as f64 - 1.0) * gamma;
        Ok(Self {
            gamma,
            epsilon: 1.0,
            half_length,
            n_sites,
            boundary,
        })
    }

    /// Mesoscopic position of site `k`.
    pub fn position(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_sites as f64 - 1.0)) * self.gamma
    }

    /// Left and right ends of the box covered by the sites (half a spacing
    /// beyond the outermost sites, where the Neumann reflection happens).
    pub fn extent(&self) -> (f64, f64) {
        let h = 0.5 * self.n_sites as f64 * self.gamma;
        (-h, h)
    }

    /// Kernel range in lattice units, `floor(1/gamma)`.
    pub fn range(&self) -> usize {
        (1.0 / self.gamma + 1e-9).floor() as usize
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("gamma must lie in (0,1), got {gamma}")))
    }
}

/// `eps(gamma) = |ln gamma|^(-a)`.
pub fn epsilon_of(gamma: f64, a: f64) -> f64 {
    gamma.ln().abs().powf(-a)
}

/// Spins `±1` on the sites of a lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinConfig {
    values: Vec<i8>,
}

impl SpinConfig {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::Domain(format!(
                "spin at site {pos} is {}, expected ±1",
                values[pos]
            )));
        }
        Ok(Self { values })
    }

    pub fn constant(n: usize, spin: i8) -> Self {
        assert!(spin == 1 || spin == -1);
        Self { values: vec![spin; n] }
    }

    pub fn alternating(n: usize) -> Self {
        Self {
            values: (0..n).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect(),
        }
    }

    /// Configuration encoded by the bits of `mask` (bit set = `+1`).
    pub fn from_bits(n: usize, mask: usize) -> Self {
        Self {
            values: (0..n).map(|k| if mask >> k & 1 == 1 { 1 } else { -1 }).collect(),
        }
    }

    pub fn to_bits(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .fold(0, |m, (k, _)| m | 1 << k)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn get(&self, k: usize) -> i8 {
        self.values[k]
    }

    pub fn flip(&mut self, k: usize) {
        self.values[k] = -self.values[k];
    }

    pub fn flipped(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.flip(k);
        out
    }

    pub fn magnetization(&self) -> f64 {
        self.values.iter().map(|&s| s as f64).sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Symmetric sparse matrix `K` giving local fields `h(k) = sum_l K(k,l) sigma(l)`.
///
/// Stored as adjacency lists; diagonal entries are allowed and mean that a
/// spin feels itself (as in the block-averaged process).
#[derive(Debug, Clone)]
pub struct FieldMatrix {
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl FieldMatrix {
    /// Kac coupling `J_gamma` on the lattice with its boundary convention.
    ///
    /// With Neumann boundaries the spin at site `l` is reflected to
    /// `-1-l` and `2n-1-l` (and periodically beyond), so the effective
    /// coupling is `sum_m w(k-l+2nm) + w(k+l+1+2nm)` with the `k = l` entry
    /// dropped. This keeps detailed balance for `H = -1/2 sum_{k≠l} K σσ`.
    pub fn kac(geom: &LatticeGeometry, kernel: &KacKernel) -> Self {
        let n = geom.n_sites;
        let gamma = kernel.gamma();
        let range = geom.range() as i64;
        let w = |d: i64| gamma * kernel.eval(gamma * d as f64);
        let mut neighbors = vec![Vec::new(); n];
        let ni = n as i64;
        for k in 0..ni {
            let lo = (k - range).max(0);
            let hi = (k + range).min(ni - 1);
            let row = &mut neighbors[k as usize];
            match geom.boundary {
                Boundary::Free => {
                    for l in lo..=hi {
                        if l != k {
                            row.push((l as u32, w(k - l)));
                        }
                    }
                }
                Boundary::Neumann if ni > range => {
                    // every image within range also has its direct partner within range
                    for l in lo..=hi {
                        if l == k {
                            continue;
                        }
                        let mut v = 0.0;
                        if (k - l).abs() <= range {
                            v += w(k - l);
                        }
                        if k + l < range {
                            v += w(k + l + 1);
                        }
                        if 2 * ni - 1 - k - l <= range {
                            v += w(2 * ni - 1 - k - l);
                        }
                        if v != 0.0 {
                            row.push((l as u32, v));
                        }
                    }
                }
                Boundary::Neumann => {
                    let reps = range / (2 * ni) + 2;
                    for l in 0..ni {
                        if l == k {
                            continue;
                        }
                        let mut v = 0.0;
                        for m in -reps..=reps {
                            let d1 = (k - l + 2 * ni * m).abs();
                            let d2 = (k + l + 1 + 2 * ni * m).abs();
                            if d1 <= range {
                                v += w(d1);
                            }
                            if d2 <= range {
                                v += w(d2);
                            }
                        }
                        if v != 0.0 {
                            row.push((l as u32, v));
                        }
                    }
                }
            }
        }
        Self { neighbors }
    }

    /// Dense matrix given site-by-site.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape("field matrix must be square".into()));
        }
        let n = m.nrows();
        let mut neighbors = vec![Vec::new(); n];
        for k in 0..n {
            for l in 0..n {
                if (m[(k, l)] - m[(l, k)]).abs() > 1e-14 * (1.0 + m[(k, l)].abs()) {
                    return Err(Error::Shape(format!("field matrix not symmetric at ({k},{l})")));
                }
                if m[(k, l)] != 0.0 {
                    neighbors[k].push((l as u32, m[(k, l)]));
                }
            }
        }
        Ok(Self { neighbors })
    }

    /// Block-averaged coupling: every pair `x ∈ I_i, y ∈ I_i'` (including
    /// `x = y`) interacts through `Jbar(i, i')`.
    pub fn coarse(model: &CoarseModel) -> Self {
        let geom = &model.geometry;
        let n = geom.n_sites();
        let mut neighbors = vec![Vec::new(); n];
        for x in 0..n {
            let i = geom.block_of(x);
            for ip in 0..geom.n_blocks() {
                let v = model.jbar[(i, ip)];
                if v == 0.0 {
                    continue;
                }
                for y in geom.block_range(ip) {
                    neighbors[x].push((y as u32, v));
                }
            }
        }
        Self { neighbors }
    }

    pub fn n_sites(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, k: usize) -> &[(u32, f64)] {
        &self.neighbors[k]
    }

    pub fn entry(&self, k: usize, l: usize) -> f64 {
        self.neighbors[k]
            .iter()
            .find(|(j, _)| *j as usize == l)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_sites();
        let mut m = DMatrix::zeros(n, n);
        for (k, row) in self.neighbors.iter().enumerate() {
            for &(l, v) in row {
                m[(k, l as usize)] = v;
            }
        }
        m
    }

    /// `h(k) = sum_l K(k,l) sigma(l)`.
    pub fn local_field(&self, sigma: &SpinConfig, k: usize) -> f64 {
        self.neighbors[k]
            .iter()
            .map(|&(l, v)| v * sigma.get(l as usize) as f64)
            .sum()
    }

    pub fn local_fields(&self, sigma: &SpinConfig) -> Vec<f64> {
        (0..self.n_sites()).map(|k| self.local_field(sigma, k)).collect()
    }

    fn check(&self, sigma: &SpinConfig) -> Result<()> {
        if sigma.len() != self.n_sites() {
            return Err(Error::Shape(format!(
                "configuration has {} sites, coupling has {}",
                sigma.len(),
                self.n_sites()
            )));
        }
        Ok(())
    }
}

/// `H(sigma_D; sigma_Dc)` with magnetic field `h`.
///
/// `inside[k]` marks the sites of `D`; pairs inside `D` count once, pairs
/// straddling `D` and its complement count once, pairs outside are ignored.
/// Diagonal entries of the coupling are not part of the energy.
pub fn hamiltonian(coupling: &FieldMatrix, sigma: &SpinConfig, inside: &[bool], h: f64) -> Result<f64> {
    coupling.check(sigma)?;
    if inside.len() != sigma.len() {
        return Err(Error::Shape("subdomain mask length differs from configuration".into()));
    }
    let mut pair_in = 0.0;
    let mut pair_cross = 0.0;
    let mut field = 0.0;
    for x in 0..sigma.len() {
        if !inside[x] {
            continue;
        }
        let sx = sigma.get(x) as f64;
        field += sx;
        for &(y, v) in coupling.neighbors(x) {
            let y = y as usize;
            if y == x {
                continue;
            }
            let term = v * sx * sigma.get(y) as f64;
            if inside[y] {
                pair_in += term;
            } else {
                pair_cross += term;
            }
        }
    }
    Ok(-0.5 * pair_in - h * field - pair_cross)
}

/// Energy of the whole configuration at zero field.
pub fn energy(coupling: &FieldMatrix, sigma: &SpinConfig) -> Result<f64> {
    hamiltonian(coupling, sigma, &vec![true; sigma.len()], 0.0)
}

/// `F_s(g) = e^{-s beta g} / (e^{-beta g} + e^{beta g})`, written in a form
/// that cannot overflow.
pub fn glauber_rate(spin: i8, field: f64, beta: f64) -> f64 {
    let x = 2.0 * spin as f64 * beta * field;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `c(x, sigma) = F_{sigma(x)}(h_gamma(x))`.
pub fn flip_rate(coupling: &FieldMatrix, sigma: &SpinConfig, x: usize, beta: f64) -> f64 {
    glauber_rate(sigma.get(x), coupling.local_field(sigma, x), beta)
}

/// `(c_m, c_M)` for a profile with `||J||_inf = sup_norm`.
pub fn rate_bounds(beta: f64, sup_norm: f64) -> (f64, f64) {
    let g = 2.0 * beta * sup_norm;
    let lo = (-g).exp() / (g.exp() + (-g).exp());
    let hi = g.exp() / (g.exp() + (-g).exp());
    (lo, hi)
}

/// Partition of the lattice into consecutive blocks `I_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGeometry {
    pub gamma: f64,
    /// Nominal `|I|` in mesoscopic units.
    pub block_length: f64,
    /// Nominal `floor(|I|/gamma)`.
    pub sites_per_block: usize,
    /// Actual block sizes; the last block absorbs the remainder.
    pub sizes: Vec<usize>,
    starts: Vec<usize>,
}

impl CoarseGeometry {
    /// Blocks of nominal length `block_length` over the given lattice.
    pub fn new(lattice: &LatticeGeometry, block_length: f64) -> Result<Self> {
        let spb = (block_length / lattice.gamma + 1e-9).floor() as usize;
        if spb == 0 {
            return Err(Error::Parameter(format!(
                "block length {block_length} shorter than lattice spacing {}",
                lattice.gamma
            )));
        }
        let n_blocks = (lattice.n_sites / spb).max(1);
        let mut sizes = vec![spb; n_blocks];
        sizes[n_blocks - 1] = lattice.n_sites - spb * (n_blocks - 1);
        Self::build(lattice.gamma, block_length, spb, sizes)
    }

    /// Blocks of `|I| = |ln gamma|^(-b)`.
    pub fn from_exponent(lattice: &LatticeGeometry, b: f64) -> Result<Self> {
        Self::new(lattice, lattice.gamma.ln().abs().powf(-b))
    }

    /// Equal blocks of `sites_per_block` sites each.
    pub fn uniform(gamma: f64, sites_per_block: usize, n_blocks: usize) -> Result<Self> {
        if sites_per_block == 0 || n_blocks == 0 {
            return Err(Error::Parameter("blocks must be non-empty".into()));
        }
        Self::build(
            gamma,
            sites_per_block as f64 * gamma,
            sites_per_block,
            vec![sites_per_block; n_blocks],
        )
    }

    fn build(gamma: f64, block_length: f64, spb: usize, sizes: Vec<usize>) -> Result<Self> {
        let mut starts = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &s in &sizes {
            starts.push(acc);
            acc += s;
        }
        starts.push(acc);
        Ok(Self {
            gamma,
            block_length,
            sites_per_block: spb,
            sizes,
            starts,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_sites(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.starts[i]..self.starts[i + 1]
    }

    pub fn block_of(&self, x: usize) -> usize {
        match self.starts.binary_search(&x) {
            Ok(i) if i < self.n_blocks() => i,
            Ok(i) => i - 1,
            Err(i) => i - 1,
        }
    }

    /// Mesoscopic cell `[u, v]` covered by block `i` on the given lattice.
    pub fn cell(&self, lattice: &LatticeGeometry, i: usize) -> (f64, f64) {
        let r = self.block_range(i);
        let g = lattice.gamma;
        (
            lattice.position(r.start) - 0.5 * g,
            lattice.position(r.end - 1) + 0.5 * g,
        )
    }

    /// Block magnetizations `m_i = (1/|I_i|) sum_{y ∈ I_i} sigma(y)`.
    pub fn block_spin(&self, sigma: &SpinConfig) -> Result<Vec<f64>> {
        if sigma.len() != self.n_sites() {
            return Err(Error::Shape(format!(
                "configuration has {} sites, blocks cover {}",
                sigma.len(),
                self.n_sites()
            )));
        }
        Ok((0..self.n_blocks())
            .map(|i| {
                let s: i64 = sigma.values()[self.block_range(i)].iter().map(|&v| v as i64).sum();
                s as f64 / self.sizes[i] as f64
            })
            .collect())
    }
}

/// How the block coupling `Jbar(i, i')` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseVariant {
    /// Average of `J_gamma(x, y)` over site pairs, `x ≠ y` on the diagonal.
    #[default]
    SiteAveraged,
    /// `|I|^-2` times the integral of `J_gamma` over the two cells.
    CellIntegrated,
}

impl FromStr for CoarseVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "site-averaged" => Ok(Self::SiteAveraged),
            "cell-integrated" => Ok(Self::CellIntegrated),
            _ => Err(Error::UnknownName {
                kind: "coarse potential",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for CoarseVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SiteAveraged => "site-averaged",
            Self::CellIntegrated => "cell-integrated",
        })
    }
}

/// `Jbar_gamma` for all block pairs.
pub fn coarse_potential(
    lattice: &LatticeGeometry,
    coarse: &CoarseGeometry,
    kernel: &KacKernel,
    variant: CoarseVariant,
) -> Result<DMatrix<f64>> {
    if coarse.n_sites() != lattice.n_sites {
        return Err(Error::Shape("blocks do not tile the lattice".into()));
    }
    let nb = coarse.n_blocks();
    let mut jbar = DMatrix::zeros(nb, nb);
    match variant {
        CoarseVariant::SiteAveraged => {
            let coupling = FieldMatrix::kac(lattice, kernel);
            for x in 0..lattice.n_sites {
                let i = coarse.block_of(x);
                for &(y, v) in coupling.neighbors(x) {
                    jbar[(i, coarse.block_of(y as usize))] += v;
                }
            }
            for i in 0..nb {
                for ip in 0..nb {
                    let (ni, nip) = (coarse.sizes[i] as f64, coarse.sizes[ip] as f64);
                    let pairs = if i == ip { ni * (ni - 1.0) } else { ni * nip };
                    jbar[(i, ip)] = if pairs > 0.0 { jbar[(i, ip)] / pairs } else { 0.0 };
                }
            }
        }
        CoarseVariant::CellIntegrated => {
            let (lo, hi) = lattice.extent();
            let period = 2.0 * (hi - lo);
            let reps = (1.0 / period).ceil() as i64 + 1;
            let prof = kernel.profile().as_ref();
            for i in 0..nb {
                let a = coarse.cell(lattice, i);
                for ip in i..nb {
                    let (u, v) = coarse.cell(lattice, ip);
                    let mut total = cell_pair_integral(prof, a, (u, v));
                    if lattice.boundary == Boundary::Neumann {
                        for m in -reps..=reps {
                            let shift = m as f64 * period;
                            if m != 0 {
                                total += cell_pair_integral(prof, a, (u + shift, v + shift));
                            }
                            let (ru, rv) = (2.0 * lo - v + shift, 2.0 * lo - u + shift);
                            total += cell_pair_integral(prof, a, (ru, rv));
                        }
                    }
                    let area = (a.1 - a.0) * (v - u);
                    let val = kernel.gamma() * total / area;
                    jbar[(i, ip)] = val;
                    jbar[(ip, i)] = val;
                }
            }
        }
    }
    Ok(jbar)
}

/// Block-level model: geometry plus coarse coupling.
#[derive(Debug, Clone)]
pub struct CoarseModel {
    pub geometry: CoarseGeometry,
    pub jbar: DMatrix<f64>,
    pub beta: f64,
}

impl CoarseModel {
    pub fn new(
        lattice: &LatticeGeometry,
        coarse: CoarseGeometry,
        kernel: &KacKernel,
        variant: CoarseVariant,
        beta: f64,
    ) -> Result<Self> {
        let jbar = coarse_potential(lattice, &coarse, kernel, variant)?;
        Ok(Self {
            geometry: coarse,
            jbar,
            beta,
        })
    }

    /// `hbar(i; m) = sum_{i'} |I_i'| Jbar(i,i') m_i'`.
    pub fn block_field(&self, m: &[f64], i: usize) -> f64 {
        (0..self.geometry.n_blocks())
            .map(|ip| self.jbar[(i, ip)] * self.geometry.sizes[ip] as f64 * m[ip])
            .sum()
    }

    /// `(cbar_+, cbar_-)` for block `i`: per-site intensities for a move of
    /// `m_i` down (a `+` spin flips) and up (a `-` spin flips).
    pub fn coarse_rates(&self, m: &[f64], i: usize) -> Result<(f64, f64)> {
        if m.len() != self.geometry.n_blocks() {
            return Err(Error::Shape(
                "magnetization vector length differs from block count".into(),
            ));
        }
        if let Some(v) = m.iter().find(|v| v.abs() > 1.0 + 1e-12) {
            return Err(Error::Domain(format!("block magnetization {v} outside [-1,1]")));
        }
        let h = self.block_field(m, i);
        Ok(coarse_rate_pair(m[i], h, self.beta))
    }
}

/// `((1+m)/2 F_+(h), (1-m)/2 F_-(h))` in the convention of [`glauber_rate`].
pub fn coarse_rate_pair(m: f64, h: f64, beta: f64) -> (f64, f64) {
    let up = (0.5 * (1.0 + m)).max(0.0);
    let down = (0.5 * (1.0 - m)).max(0.0);
    (up * glauber_rate(1, h, beta), down * glauber_rate(-1, h, beta))
}
