//! Kac interaction profiles and the name-keyed registry used to select them.
//!
//! A profile is an even function `J` supported on `[-1, 1]` with unit mass.
//! The Kac kernel at scale `gamma` is `J_gamma(x, y) = gamma * J(x - y)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// An even interaction profile `J` on `[-1, 1]`.
pub trait InteractionProfile: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// `J(r)`, zero for `|r| > 1`.
    fn eval(&self, r: f64) -> f64;

    /// `J'(r)` where it exists.
    fn derivative(&self, r: f64) -> f64;

    /// `||J||_inf`.
    fn sup_norm(&self) -> f64;

    /// `||J'||_inf`.
    fn derivative_sup_norm(&self) -> f64;

    /// Points in `(-1, 1)` where the profile or its derivatives are not smooth.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `J(r) = c_p (1 - r^2)^p` on `[-1, 1]`, normalized to unit mass.
///
/// `p = 3` is the default profile: it is `C^2` at `r = +-1`.
#[derive(Debug, Clone)]
pub struct PolynomialProfile {
    power: u32,
    norm: f64,
    label: String,
}

impl PolynomialProfile {
    pub fn new(power: u32) -> Result<Self> {
        if power == 0 {
            return Err(Error::Parameter("polynomial profile power must be >= 1".into()));
        }
        // int_{-1}^{1} (1-r^2)^p dr = 2 prod_{k=1}^{p} 2k/(2k+1)
        let mass = (1..=power).fold(2.0, |acc, k| acc * (2 * k) as f64 / (2 * k + 1) as f64);
        Ok(Self {
            power,
            norm: 1.0 / mass,
            label: format!("poly{power}"),
        })
    }

    pub fn power(&self) -> u32 {
        self.power
    }
}

impl InteractionProfile for PolynomialProfile {
    fn name(&self) -> &str {
        &self.label
    }

    fn eval(&self, r: f64) -> f64 {
        if r.abs() > 1.0 {
            0.0
        } else {
            self.norm * (1.0 - r * r).powi(self.power as i32)
        }
    }

    fn derivative(&self, r: f64) -> f64 {
        if r.abs() > 1.0 {
            0.0
        } else {
            let p = self.power as f64;
            -2.0 * p * r * self.norm * (1.0 - r * r).powi(self.power as i32 - 1)
        }
    }

    fn sup_norm(&self) -> f64 {
        self.norm
    }

    fn derivative_sup_norm(&self) -> f64 {
        // maximum of 2p r (1-r^2)^(p-1) sits at r^2 = 1/(2p-1)
        let p = self.power as f64;
        let r2 = 1.0 / (2.0 * p - 1.0);
        2.0 * p * r2.sqrt() * (1.0 - r2).powi(self.power as i32 - 1) * self.norm
    }
}

/// `J(r) = 1/2` on `[-1, 1]`. Discontinuous at the edge of its support, so it
/// violates the smoothness hypothesis; useful only as a test fixture.
#[derive(Debug, Clone, Default)]
pub struct UniformProfile;

impl InteractionProfile for UniformProfile {
    fn name(&self) -> &str {
        "uniform"
    }

    fn eval(&self, r: f64) -> f64 {
        if r.abs() > 1.0 {
            0.0
        } else {
            0.5
        }
    }

    fn derivative(&self, _r: f64) -> f64 {
        0.0
    }

    fn sup_norm(&self) -> f64 {
        0.5
    }

    fn derivative_sup_norm(&self) -> f64 {
        0.0
    }
}

/// Name and numeric parameters of a profile, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            name: "poly".into(),
            params: BTreeMap::from([("power".to_string(), 3.0)]),
        }
    }
}

pub type ProfileConstructor = fn(&BTreeMap<String, f64>) -> Result<Arc<dyn InteractionProfile>>;

/// Profiles registered by name.
pub struct KernelRegistry {
    constructors: HashMap<String, ProfileConstructor>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self {
            constructors: HashMap::new(),
        }
    }

    /// Registry holding `poly` (parameter `power`, default 3) and `uniform`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("poly", |params| {
            let power = params.get("power").copied().unwrap_or(3.0);
            if power.fract() != 0.0 || power < 1.0 {
                return Err(Error::Parameter(format!(
                    "poly kernel power must be a positive integer, got {power}"
                )));
            }
            Ok(Arc::new(PolynomialProfile::new(power as u32)?))
        });
        reg.register("uniform", |_| Ok(Arc::new(UniformProfile)));
        reg
    }

    pub fn register(&mut self, name: &str, ctor: ProfileConstructor) {
        self.constructors.insert(name.to_string(), ctor);
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.constructors.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    pub fn build(&self, spec: &KernelSpec) -> Result<Arc<dyn InteractionProfile>> {
        let ctor = self.constructors.get(&spec.name).ok_or_else(|| Error::UnknownName {
            kind: "kernel",
            name: spec.name.clone(),
        })?;
        ctor(&spec.params)
    }
}

/// Kac kernel: a profile together with the scaling parameter `gamma`.
#[derive(Debug, Clone)]
pub struct KacKernel {
    profile: Arc<dyn InteractionProfile>,
    gamma: f64,
}

impl KacKernel {
    pub fn new(profile: Arc<dyn InteractionProfile>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0,1), got {gamma}")));
        }
        Ok(Self { profile, gamma })
    }

    /// Default profile `(35/32)(1-r^2)^3`.
    pub fn default_profile() -> Arc<dyn InteractionProfile> {
        Arc::new(PolynomialProfile::new(3).expect("power 3 is valid"))
    }

    pub fn profile(&self) -> &Arc<dyn InteractionProfile> {
        &self.profile
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `J(r)` in mesoscopic units.
    pub fn eval(&self, r: f64) -> f64 {
        self.profile.eval(r)
    }

    /// `J_gamma(x, y) = gamma J(x - y)`.
    pub fn scaled(&self, x: f64, y: f64) -> f64 {
        self.gamma * self.profile.eval(x - y)
    }

    /// `int J`, evaluated by Gauss-Legendre quadrature.
    pub fn mass(&self) -> f64 {
        profile_mass(self.profile.as_ref())
    }
}

/// `int_{-1}^{1} J(r) dr` by composite Gauss-Legendre quadrature.
pub fn profile_mass(profile: &dyn InteractionProfile) -> f64 {
    let mut breaks = profile.kinks();
    breaks.push(0.0);
    quad::piecewise_gauss_legendre(|r| profile.eval(r), -1.0, 1.0, &breaks, 64)
}

/// `int_{[u1,v1] x [u2,v2]} J(r - r') dr dr'` for a profile without kinks
/// other than at `0` and `+-1`.
///
/// Reduced to a one-dimensional integral of `J(s)` against the overlap length
/// of `[u1, v1]` and `[u2 + s, v2 + s]`, which is piecewise linear in `s`.
pub fn cell_pair_integral(profile: &dyn InteractionProfile, cell_a: (f64, f64), cell_b: (f64, f64)) -> f64 {
    let (u1, v1) = cell_a;
    let (u2, v2) = cell_b;
    let lo = (u1 - v2).max(-1.0);
    let hi = (v1 - u2).min(1.0);
    if hi <= lo {
        return 0.0;
    }
    let overlap = |s: f64| ((v1).min(v2 + s) - (u1).max(u2 + s)).max(0.0);
    let mut breaks = vec![u1 - v2, u1 - u2, v1 - v2, v1 - u2, 0.0, -1.0, 1.0];
    breaks.extend(profile.kinks());
    quad::piecewise_gauss_legendre(|s| profile.eval(s) * overlap(s), lo, hi, &breaks, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_values() {
        let k = KacKernel::default_profile();
        assert_eq!(k.eval(1.5), 0.0);
        assert_eq!(k.eval(-1.0000001), 0.0);
        assert!((k.eval(0.0) - 1.09375).abs() < 1e-15);
        assert!((profile_mass(k.as_ref()) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn polynomial_family_is_normalized() {
        for p in 1..=6 {
            let prof = PolynomialProfile::new(p).unwrap();
            assert!((profile_mass(&prof) - 1.0).abs() < 1e-12, "power {p}");
        }
        assert!(PolynomialProfile::new(0).is_err());
    }

    #[test]
    fn derivative_sup_norm_matches_grid_scan() {
        let prof = PolynomialProfile::new(3).unwrap();
        let scan = (0..=20000)
            .map(|k| prof.derivative(-1.0 + k as f64 * 1e-4).abs())
            .fold(0.0, f64::max);
        assert!((scan - prof.derivative_sup_norm()).abs() < 1e-6);
        // derivative against central differences
        let h = 1e-6;
        for &r in &[-0.7, -0.2, 0.3, 0.9] {
            let fd = (prof.eval(r + h) - prof.eval(r - h)) / (2.0 * h);
            assert!((fd - prof.derivative(r)).abs() < 1e-8);
        }
    }

    #[test]
    fn registry_builds_by_name() {
        let reg = KernelRegistry::builtin();
        assert_eq!(reg.names(), vec!["poly", "uniform"]);
        let p = reg.build(&KernelSpec::default()).unwrap();
        assert_eq!(p.name(), "poly3");
        let u = reg
            .build(&KernelSpec {
                name: "uniform".into(),
                params: BTreeMap::new(),
            })
            .unwrap();
        assert_eq!(u.eval(0.3), 0.5);
        let err = reg
            .build(&KernelSpec {
                name: "gaussian".into(),
                params: BTreeMap::new(),
            })
            .unwrap_err();
        assert!(matches!(err, Error::UnknownName { .. }));
        let bad = KernelSpec {
            name: "poly".into(),
            params: BTreeMap::from([("power".to_string(), 2.5)]),
        };
        assert!(reg.build(&bad).is_err());
    }

    #[test]
    fn cell_pair_integral_against_brute_force() {
        let prof = PolynomialProfile::new(3).unwrap();
        let a = (0.1, 0.5);
        let b = (0.6, 1.3);
        let n = 800;
        let (ha, hb) = ((a.1 - a.0) / n as f64, (b.1 - b.0) / n as f64);
        let mut brute = 0.0;
        for i in 0..n {
            let x = a.0 + (i as f64 + 0.5) * ha;
            for j in 0..n {
                let y = b.0 + (j as f64 + 0.5) * hb;
                brute += prof.eval(x - y) * ha * hb;
            }
        }
        let v = cell_pair_integral(&prof, a, b);
        assert!((v - brute).abs() < 1e-6, "{v} vs {brute}");
        assert!((cell_pair_integral(&prof, b, a) - v).abs() < 1e-14);
    }
}
