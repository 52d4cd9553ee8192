//! Binomial and weighted-sample estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

/// Point estimate with its standard error and a confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    #[serde(with = "crate::record::float")]
    pub value: f64,
    #[serde(with = "crate::record::float")]
    pub std_err: f64,
    #[serde(with = "crate::record::float")]
    pub lower: f64,
    #[serde(with = "crate::record::float")]
    pub upper: f64,
}

/// Two-sided Clopper-Pearson interval at level `1 - alpha`.
pub fn clopper_pearson(successes: usize, trials: usize, alpha: f64) -> (f64, f64) {
    let (k, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).unwrap().inverse_cdf(alpha / 2.0)
    };
    let upper = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).unwrap().inverse_cdf(1.0 - alpha / 2.0)
    };
    (lower, upper)
}

pub fn proportion(name: &str, successes: usize, trials: usize) -> Estimate {
    let p = successes as f64 / trials as f64;
    let (lower, upper) = clopper_pearson(successes, trials, 0.05);
    Estimate {
        name: name.to_string(),
        value: p,
        std_err: (p * (1.0 - p) / trials as f64).sqrt(),
        lower,
        upper,
    }
}

/// `-gamma ln p` for a proportion; the interval maps the Clopper-Pearson
/// bounds, so zero successes still give a finite lower end.
pub fn neg_log_scale(name: &str, p: &Estimate, gamma: f64) -> Estimate {
    let f = |x: f64| if x > 0.0 { -gamma * x.ln() } else { f64::INFINITY };
    Estimate {
        name: name.to_string(),
        value: f(p.value),
        std_err: if p.value > 0.0 {
            gamma * p.std_err / p.value
        } else {
            f64::INFINITY
        },
        lower: f(p.upper),
        upper: f(p.lower),
    }
}

/// Mean of weighted indicators with its standard error.
pub fn weighted_mean(name: &str, samples: &[f64]) -> Estimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let se = (var / n).sqrt();
    Estimate {
        name: name.to_string(),
        value: mean,
        std_err: se,
        lower: mean - 1.96 * se,
        upper: mean + 1.96 * se,
    }
}
