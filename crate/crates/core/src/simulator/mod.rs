//! Synthetic driver cohorts on a closed loop with randomized green to yellow
//! transitions and optional safety-interface (HMI) deployment.
//!
//! A driver is a ground-truth [`FactorVector`] mapped to kinematic
//! parameters and a yellow-light response. Everything here is a pure
//! function of its inputs and a seed.

mod cohort;
pub mod io;
mod lap;

pub(crate) use cohort::median;
pub use cohort::{driver_from_factors, sample_cohort, CohortConfig, CohortNorm, DriverMapping, FactorSpec};
pub use lap::{
    generate_dataset, generate_dataset_with_plans, go_probability, hmi_multiplier, simulate_lap, Scenario,
    ScenarioConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the four cognitive factors, in canonical column order.
pub const FACTOR_NAMES: [&str; 4] = ["urgency", "fun_seeking", "go_rt", "violations"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Urgency,
    FunSeeking,
    GoRt,
    Violations,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Urgency, Factor::FunSeeking, Factor::GoRt, Factor::Violations];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FACTOR_NAMES[self.index()]
    }
}

/// Per-subject cognitive-factor vector, the supervision target of the encoder.
///
/// `go_rt` is a reaction time in milliseconds; the other three are unitless
/// questionnaire-style scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorVector {
    pub urgency: f64,
    pub fun_seeking: f64,
    pub go_rt: f64,
    pub violations: f64,
}

impl FactorVector {
    pub fn new(urgency: f64, fun_seeking: f64, go_rt: f64, violations: f64) -> Self {
        Self {
            urgency,
            fun_seeking,
            go_rt,
            violations,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.urgency, self.fun_seeking, self.go_rt, self.violations]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn get(&self, factor: Factor) -> f64 {
        self.to_array()[factor.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite factor value in {self:?}")));
        }
        if self.go_rt <= 0.0 {
            return Err(Error::Config(format!("go_rt must be positive, got {}", self.go_rt)));
        }
        Ok(())
    }
}

/// Response of a driver to a yellow light: stop/go logistic and the HMI
/// multiplier, both driven by the centered impulsivity composite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YellowResponse {
    pub go_bias: f64,
    pub impulsivity_gain: f64,
    pub time_gain: f64,
    pub reference_time: f64,
    pub hmi_gain: f64,
    pub circle_offset: f64,
    pub go_speed_boost: f64,
    pub norm: CohortNorm,
}

/// Kinematic and behavioral parameters of one synthetic driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    pub subject_id: usize,
    pub factors: FactorVector,
    /// m/s
    pub desired_speed: f64,
    /// m/s²
    pub max_accel: f64,
    /// m/s², positive magnitude
    pub max_decel: f64,
    /// seconds, always `go_rt / 1000`
    pub reaction_delay: f64,
    /// m/s²
    pub noise_std: f64,
    /// proportional speed-tracking gain, 1/s
    pub speed_gain: f64,
    pub response: YellowResponse,
}

impl DriverParams {
    /// Impulsivity composite minus the cohort median.
    pub fn centered_composite(&self) -> f64 {
        self.response.norm.composite(&self.factors) - self.response.norm.median_composite
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HmiType {
    TransverseMarkings,
    YellowCircle,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HmiTrigger {
    /// Shown once the vehicle is within the proximity radius (185 m by default).
    #[serde(rename = "proximity185m")]
    Proximity185m,
    /// Shown once the upcoming light leaves green.
    LightChange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmiConfig {
    pub hmi_type: HmiType,
    pub trigger: HmiTrigger,
}

impl HmiConfig {
    pub const BASELINE: HmiConfig = HmiConfig {
        hmi_type: HmiType::None,
        trigger: HmiTrigger::Proximity185m,
    };

    pub fn new(hmi_type: HmiType, trigger: HmiTrigger) -> Self {
        Self { hmi_type, trigger }
    }

    pub fn is_hmi(&self) -> bool {
        self.hmi_type != HmiType::None
    }

    /// One baseline lap followed by the 2×2 type/trigger grid.
    pub fn default_plan() -> Vec<HmiConfig> {
        vec![
            Self::BASELINE,
            Self::new(HmiType::TransverseMarkings, HmiTrigger::Proximity185m),
            Self::new(HmiType::TransverseMarkings, HmiTrigger::LightChange),
            Self::new(HmiType::YellowCircle, HmiTrigger::Proximity185m),
            Self::new(HmiType::YellowCircle, HmiTrigger::LightChange),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum LightState {
    Green = 0,
    Yellow = 1,
    Red = 2,
}

impl LightState {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Green),
            1 => Some(Self::Yellow),
            2 => Some(Self::Red),
            _ => None,
        }
    }

    /// Numeric encoding used as an encoder input feature.
    pub fn feature(self) -> f64 {
        match self {
            Self::Green => 0.0,
            Self::Yellow => 0.5,
            Self::Red => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateSample {
    pub t: f64,
    pub speed: f64,
    pub dist_entry: f64,
    pub dist_exit: f64,
    pub light_state: LightState,
    pub hmi_active: bool,
}

/// One lap of one subject on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub subject_id: usize,
    pub lap_id: usize,
    pub hmi_condition: HmiConfig,
    pub sample_rate: f64,
    pub samples: Vec<StateSample>,
    /// Longitudinal acceleration applied at each sample, m/s².
    pub actions: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices `k` where the upcoming light turns from green to yellow.
    pub fn transitions(&self) -> Vec<usize> {
        self.samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].light_state == LightState::Green && w[1].light_state == LightState::Yellow)
            .map(|(k, _)| k + 1)
            .collect()
    }
}
