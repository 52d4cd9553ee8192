//! Scale schedule: the exponents tying `epsilon`, `|I|`, `Delta t` and the
//! thresholds `eta_0..eta_4` to `gamma`, with each admissibility constraint
//! as a named predicate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSchedule {
    pub gamma: f64,
    /// `epsilon = |ln gamma|^-a`
    pub a: f64,
    /// `|I| = |ln gamma|^-b`
    pub b: f64,
    /// `Delta t = gamma^c`
    pub c: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub alpha: f64,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            a: 0.01,
            b: 0.2,
            c: 0.5,
            lambda0: 0.2,
            lambda1: 0.15,
            lambda2: 0.1,
            lambda3: 0.25,
            lambda4: 1.0,
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    /// `3a + lambda1 - b < 0`
    Req0,
    /// `lambda1 > lambda2 > 0`
    MuLambda,
    /// `3a - lambda0 (1 - alpha) / 2 < 0`
    Req4,
    /// `3a - lambda3 (1 - alpha) < 0`
    Req3,
    /// `lambda4 > 2 lambda1 + 2b + 4a`
    C1,
    /// `lambda1 + b + lambda3 + a < 1`
    C2,
    /// `2 lambda1 + (4/3) lambda3 (1 - alpha) < 1`
    Req10,
}

impl Constraint {
    pub const ALL: [Constraint; 7] = [
        Self::Req0,
        Self::MuLambda,
        Self::Req4,
        Self::Req3,
        Self::C1,
        Self::C2,
        Self::Req10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Req0 => "req0",
            Self::MuLambda => "mulambda",
            Self::Req4 => "req4",
            Self::Req3 => "req3",
            Self::C1 => "c1",
            Self::C2 => "c2",
            Self::Req10 => "req10",
        }
    }

    /// Signed slack; the constraint holds iff it is strictly positive.
    pub fn margin(self, s: &ScaleSchedule) -> f64 {
        match self {
            Self::Req0 => -(3.0 * s.a + s.lambda1 - s.b),
            Self::MuLambda => (s.lambda1 - s.lambda2).min(s.lambda2),
            Self::Req4 => -(3.0 * s.a - 0.5 * s.lambda0 * (1.0 - s.alpha)),
            Self::Req3 => -(3.0 * s.a - s.lambda3 * (1.0 - s.alpha)),
            Self::C1 => s.lambda4 - (2.0 * s.lambda1 + 2.0 * s.b + 4.0 * s.a),
            Self::C2 => 1.0 - (s.lambda1 + s.b + s.lambda3 + s.a),
            Self::Req10 => 1.0 - (2.0 * s.lambda1 + 4.0 / 3.0 * s.lambda3 * (1.0 - s.alpha)),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every violated constraint, in declaration order. Parameters outside
/// their basic ranges are an error rather than a violation.
pub fn validate_schedule(s: &ScaleSchedule) -> Result<Vec<Constraint>> {
    let unit = [("gamma", s.gamma), ("c", s.c), ("alpha", s.alpha)];
    for (name, v) in unit {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Parameter(format!("{name} must lie in (0,1), got {v}")));
        }
    }
    let positive = [
        ("a", s.a),
        ("b", s.b),
        ("lambda0", s.lambda0),
        ("lambda1", s.lambda1),
        ("lambda3", s.lambda3),
        ("lambda4", s.lambda4),
    ];
    for (name, v) in positive {
        if !(v > 0.0) {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(Constraint::ALL.into_iter().filter(|c| !(c.margin(s) > 0.0)).collect())
}

/// Concrete scales implied by a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleQuantities {
    pub epsilon: f64,
    pub block_length: f64,
    pub dt: f64,
    /// `eta_k = |ln gamma|^-lambda_k`
    pub eta: [f64; 5],
    /// Magnetization quantum `Delta = Delta t eta_0`.
    pub quantum: f64,
    /// Tube width `delta = Delta / 2`.
    pub delta: f64,
    /// `Delta t eta_3` snapped to the nearest positive multiple of `Delta`.
    pub delta_prime: f64,
    /// Jump cap per time interval, `gamma^-1 epsilon^-1 Delta t / eta_1`.
    pub jump_cap: f64,
    /// Bad-interval budget `kbar`.
    pub bad_budget: f64,
}

impl ScaleSchedule {
    pub fn quantities(&self) -> ScaleQuantities {
        let lg = self.gamma.ln().abs();
        let eta = [self.lambda0, self.lambda1, self.lambda2, self.lambda3, self.lambda4].map(|l| lg.powf(-l));
        let epsilon = lg.powf(-self.a);
        let block_length = lg.powf(-self.b);
        let dt = self.gamma.powf(self.c);
        let quantum = dt * eta[0];
        let delta_prime = (dt * eta[3] / quantum).round().max(1.0) * quantum;
        let jump_cap = dt / (self.gamma * epsilon * eta[1]);
        let eta1 = eta[1];
        let bad_budget = 1.0 / (eta[2] * (dt / (epsilon * eta1)) * (1.0 / eta1).ln());
        ScaleQuantities {
            epsilon,
            block_length,
            dt,
            eta,
            quantum,
            delta: 0.5 * quantum,
            delta_prime,
            jump_cap,
            bad_budget,
        }
    }

    /// Copy with one field replaced by name.
    pub fn with(&self, field: &str, value: f64) -> Result<Self> {
        let mut s = *self;
        let slot = match field {
            "gamma" => &mut s.gamma,
            "a" => &mut s.a,
            "b" => &mut s.b,
            "c" => &mut s.c,
            "lambda0" => &mut s.lambda0,
            "lambda1" => &mut s.lambda1,
            "lambda2" => &mut s.lambda2,
            "lambda3" => &mut s.lambda3,
            "lambda4" => &mut s.lambda4,
            "alpha" => &mut s.alpha,
            _ => {
                return Err(Error::UnknownName {
                    kind: "schedule field",
                    name: field.to_string(),
                })
            }
        };
        *slot = value;
        Ok(s)
    }
}

impl ScaleQuantities {
    /// `gamma ln |Omega_gamma| = gamma epsilon^-3 / (Delta t |I|) ln(2/Delta)`.
    pub fn cardinality_correction(&self, gamma: f64) -> f64 {
        gamma * self.epsilon.powi(-3) / (self.dt * self.block_length) * (2.0 / self.quantum).ln()
    }

    /// `|psi_a| <= epsilon^-1 / (eta_1 |I|)` for paths within the jump cap.
    pub fn slope_bound(&self) -> f64 {
        1.0 / (self.epsilon * self.eta[1] * self.block_length)
    }
}

/// Changes to the default schedule, each breaking exactly the named
/// constraint. `b` also enters c1, so the c2 mutation raises `lambda4` to
/// keep c1 intact.
pub fn default_mutations() -> Vec<(Constraint, Vec<(&'static str, f64)>)> {
    vec![
        (Constraint::Req0, vec![("b", 0.1)]),
        (Constraint::MuLambda, vec![("lambda2", 0.15)]),
        (Constraint::Req4, vec![("lambda0", 0.05)]),
        (Constraint::Req3, vec![("lambda3", 0.03)]),
        (Constraint::C1, vec![("lambda4", 0.5)]),
        (Constraint::C2, vec![("b", 0.6), ("lambda4", 2.0)]),
        (Constraint::Req10, vec![("lambda3", 0.59)]),
    ]
}

/// Applies a list of field changes in order.
pub fn mutate(s: &ScaleSchedule, changes: &[(&str, f64)]) -> Result<ScaleSchedule> {
    changes
        .iter()
        .try_fold(*s, |acc, (field, value)| acc.with(field, *value))
}
