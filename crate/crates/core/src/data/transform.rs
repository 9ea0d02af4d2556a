use std::fmt;
use std::str::FromStr;

use super::DataError;

/// Natural log followed by standardization with the population mean and
/// standard deviation of the fitting dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTransform {
    pub mu: f64,
    pub sigma: f64,
    pub dataset_name: String,
}

impl TargetTransform {
    pub fn new(mu: f64, sigma: f64, dataset_name: impl Into<String>) -> Result<Self, DataError> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(DataError::DegenerateSigma);
        }
        Ok(TargetTransform {
            mu,
            sigma,
            dataset_name: dataset_name.into(),
        })
    }

    /// Fits on raw LTC values (W/mK).
    pub fn fit<I: IntoIterator<Item = f64>>(ltc: I, dataset_name: &str) -> Result<Self, DataError> {
        let logs: Vec<f64> = ltc.into_iter().map(f64::ln).collect();
        if logs.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if logs.iter().any(|x| !x.is_finite()) {
            return Err(DataError::NonPositiveLtc {
                material_id: dataset_name.to_string(),
                value: f64::NAN,
            });
        }
        let n = logs.len() as f64;
        let mu = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        let sigma = var.sqrt();
        // spreads this small are rounding noise around identical values
        if !(sigma > 1e-12 * mu.abs().max(1.0)) {
            return Err(DataError::DegenerateSigma);
        }
        TargetTransform::new(mu, sigma, dataset_name)
    }

    pub fn apply(&self, ltc: f64) -> f64 {
        (ltc.ln() - self.mu) / self.sigma
    }

    pub fn invert(&self, y: f64) -> f64 {
        (self.sigma * y + self.mu).exp()
    }
}

/// Sidecar form: `name mu sigma` on one line.
impl fmt::Display for TargetTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} {:?}", self.dataset_name, self.mu, self.sigma)
    }
}

impl FromStr for TargetTransform {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::Format(format!("bad transform line {s:?}"));
        let mut parts = s.split_whitespace();
        let (Some(name), Some(mu), Some(sigma), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        TargetTransform::new(mu.parse().map_err(|_| bad())?, sigma.parse().map_err(|_| bad())?, name)
    }
}
