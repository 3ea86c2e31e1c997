use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::WlgenError;

/// KS distance above which a fitted family is considered a poor fit.
pub const FIT_KS_LIMIT: f64 = 0.2;

/// Tries before a truncated normal gives up and returns its floor.
const MAX_REJECTIONS: usize = 10_000;

fn default_floor() -> f64 {
    1.0
}

/// A positive-valued distribution of seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "snake_case",
    deny_unknown_fields,
    try_from = "DistributionDoc"
)]
pub enum DistributionSpec {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Exponential {
        rate: f64,
    },
    NormalTruncated {
        mean: f64,
        stddev: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Empirical {
        samples: Vec<f64>,
    },
}

/// JSON form, which also accepts `{"kind": "fit", "samples": [...]}`.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DistributionDoc {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Exponential {
        rate: f64,
    },
    NormalTruncated {
        mean: f64,
        stddev: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Empirical {
        samples: Vec<f64>,
    },
    Fit {
        samples: Vec<f64>,
    },
}

impl TryFrom<DistributionDoc> for DistributionSpec {
    type Error = WlgenError;

    fn try_from(doc: DistributionDoc) -> Result<Self, WlgenError> {
        let spec = match doc {
            DistributionDoc::Constant { value } => DistributionSpec::Constant { value },
            DistributionDoc::Uniform { low, high } => DistributionSpec::Uniform { low, high },
            DistributionDoc::Exponential { rate } => DistributionSpec::Exponential { rate },
            DistributionDoc::NormalTruncated {
                mean,
                stddev,
                floor,
            } => DistributionSpec::NormalTruncated {
                mean,
                stddev,
                floor,
            },
            DistributionDoc::Empirical { samples } => DistributionSpec::Empirical { samples },
            DistributionDoc::Fit { samples } => fit_distribution(&samples)?,
        };
        spec.check()?;
        Ok(spec)
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

impl DistributionSpec {
    pub fn check(&self) -> Result<(), WlgenError> {
        let ok = match self {
            DistributionSpec::Constant { value } => positive(*value),
            DistributionSpec::Uniform { low, high } => positive(*low) && high.is_finite() && low <= high,
            DistributionSpec::Exponential { rate } => positive(*rate),
            DistributionSpec::NormalTruncated {
                mean,
                stddev,
                floor,
            } => mean.is_finite() && stddev.is_finite() && *stddev >= 0.0 && positive(*floor),
            DistributionSpec::Empirical { samples } => {
                !samples.is_empty() && samples.iter().all(|&s| positive(s))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(WlgenError::Spec(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistributionSpec::Constant { value } => *value,
            DistributionSpec::Uniform { low, high } => (low + high) / 2.0,
            DistributionSpec::Exponential { rate } => 1.0 / rate,
            DistributionSpec::NormalTruncated {
                mean,
                stddev,
                floor,
            } => {
                if *stddev == 0.0 {
                    return mean.max(*floor);
                }
                let a = (floor - mean) / stddev;
                let pdf = (-a * a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                mean + stddev * pdf / (1.0 - std_normal_cdf(a))
            }
            DistributionSpec::Empirical { samples } => {
                samples.iter().sum::<f64>() / samples.len() as f64
            }
        }
    }

    /// Draws one value. Parameters are assumed to have passed [`check`].
    ///
    /// [`check`]: DistributionSpec::check
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::Constant { value } => *value,
            DistributionSpec::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.random_range(*low..=*high)
                }
            }
            DistributionSpec::Exponential { rate } => {
                Exp::new(*rate).expect("checked rate").sample(rng)
            }
            DistributionSpec::NormalTruncated {
                mean,
                stddev,
                floor,
            } => {
                let normal = Normal::new(*mean, *stddev).expect("checked stddev");
                (0..MAX_REJECTIONS)
                    .map(|_| normal.sample(rng))
                    .find(|x| x >= floor)
                    .unwrap_or(*floor)
            }
            DistributionSpec::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            DistributionSpec::Constant { value } => f64::from(u8::from(x >= *value)),
            DistributionSpec::Uniform { low, high } => {
                if x < *low {
                    0.0
                } else if x >= *high {
                    1.0
                } else {
                    (x - low) / (high - low)
                }
            }
            DistributionSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-rate * x).exp()
                }
            }
            DistributionSpec::NormalTruncated {
                mean,
                stddev,
                floor,
            } => {
                if x < *floor {
                    return 0.0;
                }
                if *stddev == 0.0 {
                    return 1.0;
                }
                let base = std_normal_cdf((floor - mean) / stddev);
                (std_normal_cdf((x - mean) / stddev) - base) / (1.0 - base)
            }
            DistributionSpec::Empirical { samples } => {
                samples.iter().filter(|&&s| s <= x).count() as f64 / samples.len() as f64
            }
        }
    }

    fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let n = samples.len() as f64;
        match self {
            DistributionSpec::Uniform { low, high } => {
                if samples.iter().any(|&s| s < *low || s > *high) {
                    f64::NEG_INFINITY
                } else {
                    -n * (high - low).ln()
                }
            }
            DistributionSpec::Exponential { rate } => {
                n * rate.ln() - rate * samples.iter().sum::<f64>()
            }
            DistributionSpec::NormalTruncated {
                mean,
                stddev,
                floor,
            } => {
                if samples.iter().any(|s| s < floor) {
                    return f64::NEG_INFINITY;
                }
                let var = stddev * stddev;
                let sq: f64 = samples.iter().map(|s| (s - mean).powi(2)).sum();
                let mass = 1.0 - std_normal_cdf((floor - mean) / stddev);
                -n / 2.0 * (2.0 * std::f64::consts::PI * var).ln() - sq / (2.0 * var) - n * mass.ln()
            }
            DistributionSpec::Constant { .. } | DistributionSpec::Empirical { .. } => {
                f64::NEG_INFINITY
            }
        }
    }
}

/// Largest distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Picks the analytic family that best explains `samples` by maximum
/// likelihood, among those whose KS distance is at most
/// [`FIT_KS_LIMIT`]. Ties, and samples no family fits, yield an empirical
/// distribution over the samples themselves.
pub fn fit_distribution(samples: &[f64]) -> Result<DistributionSpec, WlgenError> {
    if samples.len() < 2 {
        return Err(WlgenError::Fit(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|&&s| !positive(s)) {
        return Err(WlgenError::Fit(format!("sample {bad} is not a positive number")));
    }
    let n = samples.len() as f64;
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(0.0, f64::max);
    if min == max {
        return Ok(DistributionSpec::Constant { value: min });
    }
    let mean = samples.iter().sum::<f64>() / n;
    let stddev = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();

    let candidates = [
        DistributionSpec::Uniform {
            low: min,
            high: max,
        },
        DistributionSpec::Exponential { rate: 1.0 / mean },
        DistributionSpec::NormalTruncated {
            mean,
            stddev,
            floor: min.min(default_floor()),
        },
    ];
    let mut scored: Vec<(f64, &DistributionSpec)> = candidates
        .iter()
        .filter(|c| ks_statistic(samples, |x| c.cdf(x)) <= FIT_KS_LIMIT)
        .map(|c| (c.log_likelihood(samples), c))
        .filter(|(ll, _)| ll.is_finite())
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let empirical = || DistributionSpec::Empirical {
        samples: samples.to_vec(),
    };
    match scored.as_slice() {
        [] => Ok(empirical()),
        [(best, _), (second, _), ..] if (best - second).abs() <= 1e-9 * best.abs().max(1.0) => {
            Ok(empirical())
        }
        [(_, winner), ..] => Ok((*winner).clone()),
    }
}
