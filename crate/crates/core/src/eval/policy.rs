//! Decision rules and policy-conditioned speed accounting.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::condition_mean_speed;
use crate::error::{Error, Result};
use crate::rng::{rng_from, TAG_RANDOM_RULE};
use crate::simulator::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "No-HMI")]
    NoHmi,
    #[serde(rename = "Always-HMI")]
    AlwaysHmi,
    #[serde(rename = "Random")]
    Random,
    #[serde(rename = "Windowed-Average")]
    WindowedAverage,
    #[serde(rename = "Instantaneous")]
    Instantaneous,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::NoHmi,
        Rule::AlwaysHmi,
        Rule::Random,
        Rule::WindowedAverage,
        Rule::Instantaneous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::NoHmi => "No-HMI",
            Rule::AlwaysHmi => "Always-HMI",
            Rule::Random => "Random",
            Rule::WindowedAverage => "Windowed-Average",
            Rule::Instantaneous => "Instantaneous",
        }
    }
}

/// Per-subject deployment decisions.
pub type Decisions = BTreeMap<usize, bool>;

/// No-HMI, Always-HMI and a fair per-subject coin flip seeded by `seed`.
pub fn baseline_rules(subjects: &[usize], seed: u64) -> BTreeMap<Rule, Decisions> {
    let mut rng = rng_from(seed, &[TAG_RANDOM_RULE]);
    let mut sorted = subjects.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let random = sorted.iter().map(|&s| (s, rng.random_bool(0.5))).collect();
    BTreeMap::from([
        (Rule::NoHmi, sorted.iter().map(|&s| (s, false)).collect()),
        (Rule::AlwaysHmi, sorted.iter().map(|&s| (s, true)).collect()),
        (Rule::Random, random),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSummary {
    /// m/s
    pub mean: f64,
    /// Sample standard deviation across subjects over `√n`.
    pub standard_error: f64,
    pub n_subjects: usize,
}

/// Mean yellow-light speed of each subject over the laps whose condition
/// matches that subject's decision, summarized across subjects.
pub fn policy_speed(dataset: &[Trajectory], decisions: &Decisions) -> Result<SpeedSummary> {
    if decisions.is_empty() {
        return Err(Error::InsufficientSupport("no decisions to score".into()));
    }
    let mut speeds = Vec::with_capacity(decisions.len());
    for (&subject, &deploy) in decisions {
        let v = condition_mean_speed(dataset, subject, deploy)?.ok_or(Error::Coverage {
            subject_id: subject,
            missing: if deploy { "HMI" } else { "non-HMI" },
        })?;
        speeds.push(v);
    }
    Ok(summarize(&speeds))
}

pub(crate) fn summarize(values: &[f64]) -> SpeedSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    SpeedSummary {
        mean,
        standard_error: se,
        n_subjects: values.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_rules() {
        let r = baseline_rules(&[4, 0, 2, 1, 3], 9);
        assert!(r[&Rule::NoHmi].values().all(|&d| !d));
        assert_eq!(r[&Rule::NoHmi].len(), 5);
        assert!(r[&Rule::AlwaysHmi].values().all(|&d| d));
        assert_eq!(r[&Rule::Random], baseline_rules(&[0, 1, 2, 3, 4], 9)[&Rule::Random]);
    }

    #[test]
    fn random_rule_is_fair() {
        let subjects: Vec<usize> = (0..10_000).collect();
        let r = baseline_rules(&subjects, 1);
        let frac = r[&Rule::Random].values().filter(|&&d| d).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / 100.0, "{frac}");
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.standard_error - sd / 2.0).abs() < 1e-12);
    }
}
