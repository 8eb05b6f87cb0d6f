use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DriverParams, FactorVector, YellowResponse};
use crate::error::{Error, Result};
use crate::rng::{rng_from, TAG_COHORT};

/// Per-factor population mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub mean: FactorVector,
    pub std: FactorVector,
}

impl Default for FactorSpec {
    fn default() -> Self {
        Self {
            mean: FactorVector::new(2.2, 12.0, 450.0, 2.0),
            std: FactorVector::new(0.6, 2.0, 60.0, 0.7),
        }
    }
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        let (m, s) = (self.mean.to_array(), self.std.to_array());
        if m.iter().chain(s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("factor spec contains non-finite values".into()));
        }
        if s.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("factor spec standard deviations must be >= 0".into()));
        }
        if self.mean.go_rt <= 0.0 {
            return Err(Error::Config("factor spec go_rt mean must be positive".into()));
        }
        Ok(())
    }

    /// z-score against the population spec; zero where the spec std is zero.
    fn z(&self, f: &FactorVector) -> [f64; 4] {
        let (m, s, v) = (self.mean.to_array(), self.std.to_array(), f.to_array());
        std::array::from_fn(|k| if s[k] > 0.0 { (v[k] - m[k]) / s[k] } else { 0.0 })
    }
}

/// Fixed map from factor z-scores (against the population spec) to kinematic
/// parameters, plus the yellow-light response coefficients.
///
/// `desired_speed = base_speed + speed_per_fun·z_fun + speed_per_violation·z_viol
///  + speed_per_urgency·z_urg − speed_per_go_rt·z_gort`, floored at `min_speed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverMapping {
    pub base_speed: f64,
    pub speed_per_fun: f64,
    pub speed_per_violation: f64,
    pub speed_per_urgency: f64,
    pub speed_per_go_rt: f64,
    pub min_speed: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub noise_std: f64,
    pub speed_gain: f64,
    pub go_bias: f64,
    pub impulsivity_gain: f64,
    pub time_gain: f64,
    /// Time to the entry line (s) at which the kinematic term of the go logistic vanishes.
    pub reference_time: f64,
    pub hmi_gain: f64,
    /// Relative shift of the HMI multiplier for the yellow-circle interface.
    pub circle_offset: f64,
    /// Extra speed (m/s) over the desired speed when proceeding through a yellow.
    pub go_speed_boost: f64,
}

impl Default for DriverMapping {
    fn default() -> Self {
        Self {
            base_speed: 15.0,
            speed_per_fun: 1.0,
            speed_per_violation: 0.8,
            speed_per_urgency: 0.3,
            speed_per_go_rt: 0.5,
            min_speed: 5.0,
            max_accel: 2.5,
            max_decel: 5.0,
            noise_std: 0.2,
            speed_gain: 0.6,
            go_bias: 1.0,
            impulsivity_gain: 1.0,
            time_gain: 0.5,
            reference_time: 3.0,
            hmi_gain: 5.0,
            circle_offset: -0.05,
            go_speed_boost: 3.0,
        }
    }
}

impl DriverMapping {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.base_speed,
            self.speed_per_fun,
            self.speed_per_violation,
            self.speed_per_urgency,
            self.speed_per_go_rt,
            self.min_speed,
            self.max_accel,
            self.max_decel,
            self.noise_std,
            self.speed_gain,
            self.go_bias,
            self.impulsivity_gain,
            self.time_gain,
            self.reference_time,
            self.hmi_gain,
            self.circle_offset,
            self.go_speed_boost,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("driver mapping contains non-finite values".into()));
        }
        if self.min_speed <= 0.0 || self.max_accel <= 0.0 || self.max_decel <= 0.0 || self.speed_gain <= 0.0 {
            return Err(Error::Config(
                "min_speed, max_accel, max_decel and speed_gain must be positive".into(),
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if self.impulsivity_gain < 0.0 || self.hmi_gain < 0.0 || self.time_gain < 0.0 {
            return Err(Error::Config("response gains must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub factors: FactorSpec,
    pub mapping: DriverMapping,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 27,
            factors: FactorSpec::default(),
            mapping: DriverMapping::default(),
        }
    }
}

/// Cohort statistics defining the impulsivity composite
/// `(z_urg + z_fun + z_viol) / 3 − z_gort` and its median.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortNorm {
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub median_composite: f64,
}

impl CohortNorm {
    pub fn from_factors(factors: &[FactorVector]) -> Self {
        let n = factors.len().max(1) as f64;
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for k in 0..4 {
            mean[k] = factors.iter().map(|f| f.to_array()[k]).sum::<f64>() / n;
            let var = factors.iter().map(|f| (f.to_array()[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = var.sqrt();
        }
        let mut norm = Self {
            mean,
            std,
            median_composite: 0.0,
        };
        let mut composites: Vec<f64> = factors.iter().map(|f| norm.composite(f)).collect();
        norm.median_composite = median(&mut composites);
        norm
    }

    pub fn composite(&self, f: &FactorVector) -> f64 {
        let v = f.to_array();
        let z: [f64; 4] = std::array::from_fn(|k| {
            if self.std[k] > 0.0 {
                (v[k] - self.mean[k]) / self.std[k]
            } else {
                0.0
            }
        });
        (z[0] + z[1] + z[3]) / 3.0 - z[2]
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Draws `n_subjects` drivers with independent normal factors.
///
/// `go_rt` draws that are not positive are redrawn.
pub fn sample_cohort(config: &CohortConfig, seed: u64) -> Result<Vec<DriverParams>> {
    if config.n_subjects < 2 {
        return Err(Error::Config(format!(
            "n_subjects must be >= 2, got {}",
            config.n_subjects
        )));
    }
    config.factors.validate()?;
    config.mapping.validate()?;

    let spec = &config.factors;
    let (mean, std) = (spec.mean.to_array(), spec.std.to_array());
    let mut rng = rng_from(seed, &[TAG_COHORT]);
    let mut factors = Vec::with_capacity(config.n_subjects);
    for _ in 0..config.n_subjects {
        let mut draw = [0.0; 4];
        for k in 0..4 {
            let mut tries = 0;
            loop {
                let xi: f64 = StandardNormal.sample(&mut rng);
                draw[k] = mean[k] + std[k] * xi;
                if k != 2 || draw[k] > 0.0 {
                    break;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(Error::Config(
                        "cannot draw a positive go_rt from the factor spec".into(),
                    ));
                }
            }
        }
        factors.push(FactorVector::from_array(draw));
    }

    let norm = CohortNorm::from_factors(&factors);
    Ok(factors
        .into_iter()
        .enumerate()
        .map(|(id, f)| driver_from_factors(id, f, spec, &config.mapping, norm))
        .collect())
}

/// Applies the fixed factor→parameter map to one subject.
pub fn driver_from_factors(
    subject_id: usize,
    factors: FactorVector,
    spec: &FactorSpec,
    mapping: &DriverMapping,
    norm: CohortNorm,
) -> DriverParams {
    let z = spec.z(&factors);
    let desired = mapping.base_speed + mapping.speed_per_urgency * z[0] + mapping.speed_per_fun * z[1]
        - mapping.speed_per_go_rt * z[2]
        + mapping.speed_per_violation * z[3];
    DriverParams {
        subject_id,
        factors,
        desired_speed: desired.max(mapping.min_speed),
        max_accel: mapping.max_accel,
        max_decel: mapping.max_decel,
        reaction_delay: factors.go_rt / 1000.0,
        noise_std: mapping.noise_std,
        speed_gain: mapping.speed_gain,
        response: YellowResponse {
            go_bias: mapping.go_bias,
            impulsivity_gain: mapping.impulsivity_gain,
            time_gain: mapping.time_gain,
            reference_time: mapping.reference_time,
            hmi_gain: mapping.hmi_gain,
            circle_offset: mapping.circle_offset,
            go_speed_boost: mapping.go_speed_boost,
            norm,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_cohort_is_identical() {
        let mean = FactorVector::new(2.0, 11.0, 400.0, 1.5);
        let cfg = CohortConfig {
            n_subjects: 2,
            factors: FactorSpec {
                mean,
                std: FactorVector::new(0.0, 0.0, 0.0, 0.0),
            },
            ..Default::default()
        };
        let cohort = sample_cohort(&cfg, 7).unwrap();
        assert_eq!(cohort.len(), 2);
        assert_eq!(cohort[0].factors, mean);
        assert_eq!(cohort[1].factors, mean);
        let mut second = cohort[1].clone();
        second.subject_id = 0;
        assert_eq!(cohort[0], second);
    }

    #[test]
    fn default_cohort_is_deterministic() {
        let cfg = CohortConfig::default();
        let a = sample_cohort(&cfg, 1).unwrap();
        let b = sample_cohort(&cfg, 1).unwrap();
        assert_eq!(a.len(), 27);
        assert_eq!(a, b);
        assert_ne!(a, sample_cohort(&cfg, 2).unwrap());
    }

    #[test]
    fn sample_means_within_three_standard_errors() {
        let cfg = CohortConfig::default();
        let cohort = sample_cohort(&cfg, 1).unwrap();
        let (m, s) = (cfg.factors.mean.to_array(), cfg.factors.std.to_array());
        for k in 0..4 {
            let avg = cohort.iter().map(|d| d.factors.to_array()[k]).sum::<f64>() / 27.0;
            assert!((avg - m[k]).abs() <= 3.0 * s[k] / 27f64.sqrt(), "factor {k}: {avg}");
        }
    }

    #[test]
    fn reaction_delay_follows_go_rt() {
        for d in sample_cohort(&CohortConfig::default(), 3).unwrap() {
            assert_eq!(d.reaction_delay, d.factors.go_rt / 1000.0);
            assert!(d.desired_speed > 0.0);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut cfg = CohortConfig {
            n_subjects: 1,
            ..Default::default()
        };
        assert!(matches!(sample_cohort(&cfg, 0), Err(Error::Config(_))));
        cfg.n_subjects = 5;
        cfg.factors.mean.urgency = f64::NAN;
        assert!(matches!(sample_cohort(&cfg, 0), Err(Error::Config(_))));
        cfg.factors.mean.urgency = 1.0;
        cfg.factors.std.fun_seeking = -1.0;
        assert!(matches!(sample_cohort(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn composite_median_splits_cohort() {
        let cohort = sample_cohort(&CohortConfig::default(), 5).unwrap();
        let above = cohort.iter().filter(|d| d.centered_composite() > 0.0).count();
        let below = cohort.iter().filter(|d| d.centered_composite() < 0.0).count();
        assert_eq!(above, 13);
        assert_eq!(below, 13);
    }
}
