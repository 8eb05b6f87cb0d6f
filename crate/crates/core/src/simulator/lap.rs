use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DriverParams, HmiConfig, HmiTrigger, HmiType, LightState, StateSample, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng, TAG_LAP};

/// Closed-loop road layout and light timing for one lap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lap_length: f64,
    /// Entry lines of the intersections, meters from the lap start.
    pub light_positions: Vec<f64>,
    /// Distance to the entry line at which each light turns yellow.
    pub yellow_onset_distances: Vec<f64>,
    pub yellow_duration: f64,
    pub red_duration: f64,
    pub intersection_width: f64,
    pub sample_rate: f64,
    pub max_duration: f64,
    pub hmi_proximity: f64,
}

impl Scenario {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return bad("sample_rate must be positive");
        }
        if !(self.lap_length > 0.0) || !(self.max_duration > 0.0) {
            return bad("lap_length and max_duration must be positive");
        }
        if !(self.yellow_duration > 0.0) || self.red_duration < 0.0 || !(self.intersection_width > 0.0) {
            return bad("yellow_duration and intersection_width must be positive, red_duration >= 0");
        }
        if self.light_positions.windows(2).any(|w| w[1] <= w[0]) {
            return bad("light_positions must be strictly increasing");
        }
        if let (Some(&first), Some(&last)) = (self.light_positions.first(), self.light_positions.last()) {
            if first <= 0.0 || last + self.intersection_width >= self.lap_length {
                return bad("intersections must lie strictly inside the lap");
            }
        }
        if self.yellow_onset_distances.len() != self.light_positions.len() {
            return bad("one yellow onset distance per light is required");
        }
        if self
            .yellow_onset_distances
            .iter()
            .any(|&d| !(d > 0.0 && d <= self.lap_length))
        {
            return bad("yellow onset distances must lie in (0, lap_length]");
        }
        Ok(())
    }
}

/// Layout defaults plus the band yellow onsets are drawn from per light per lap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub lap_length: f64,
    pub light_positions: Vec<f64>,
    pub onset_distance_min: f64,
    pub onset_distance_max: f64,
    pub yellow_duration: f64,
    pub red_duration: f64,
    pub intersection_width: f64,
    pub sample_rate: f64,
    pub max_duration: f64,
    pub hmi_proximity: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lap_length: 2000.0,
            light_positions: vec![450.0, 1100.0, 1750.0],
            onset_distance_min: 35.0,
            onset_distance_max: 80.0,
            yellow_duration: 4.0,
            red_duration: 6.0,
            intersection_width: 15.0,
            sample_rate: 5.0,
            max_duration: 600.0,
            hmi_proximity: 185.0,
        }
    }
}

impl ScenarioConfig {
    /// Denser layout (8 lights on a 2.6 km loop) so each lap carries enough
    /// yellow events for per-subject HMI effects to rise above Bernoulli noise.
    pub fn crossover() -> Self {
        Self {
            lap_length: 2600.0,
            light_positions: (0..8).map(|i| 300.0 + 287.5 * i as f64).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset_distance_min > 0.0 && self.onset_distance_min <= self.onset_distance_max) {
            return Err(Error::Config(
                "scenario: need 0 < onset_distance_min <= onset_distance_max".into(),
            ));
        }
        self.with_onsets(vec![self.onset_distance_max; self.light_positions.len()])
            .validate()
    }

    pub fn with_onsets(&self, yellow_onset_distances: Vec<f64>) -> Scenario {
        Scenario {
            lap_length: self.lap_length,
            light_positions: self.light_positions.clone(),
            yellow_onset_distances,
            yellow_duration: self.yellow_duration,
            red_duration: self.red_duration,
            intersection_width: self.intersection_width,
            sample_rate: self.sample_rate,
            max_duration: self.max_duration,
            hmi_proximity: self.hmi_proximity,
        }
    }

    /// Onset distances drawn uniformly from the configured band.
    pub fn draw(&self, rng: &mut Rng) -> Scenario {
        let onsets = self
            .light_positions
            .iter()
            .map(|_| rng.random_range(self.onset_distance_min..=self.onset_distance_max))
            .collect();
        self.with_onsets(onsets)
    }

    pub fn context_len(&self, context_seconds: f64) -> usize {
        (context_seconds * self.sample_rate).round() as usize
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Multiplier ρ applied to the go probability while an HMI is shown.
///
/// `ρ = 2·σ(hmi_gain·c)·(1 + offset)` with `c` the composite minus the cohort
/// median; `offset` is nonzero only for the yellow circle.
pub fn hmi_multiplier(driver: &DriverParams, hmi_type: HmiType) -> f64 {
    let r = &driver.response;
    let offset = match hmi_type {
        HmiType::YellowCircle => r.circle_offset,
        HmiType::TransverseMarkings => 0.0,
        HmiType::None => return 1.0,
    };
    2.0 * logistic(r.hmi_gain * driver.centered_composite()) * (1.0 + offset)
}

/// Probability of proceeding through a yellow light at the given kinematic
/// state. `hmi` is the interface shown at decision time, if any.
pub fn go_probability(driver: &DriverParams, hmi: Option<HmiType>, dist_entry: f64, speed: f64) -> f64 {
    let r = &driver.response;
    let time_to_line = if speed > 1e-9 {
        dist_entry / speed
    } else if dist_entry > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let kinematic = if time_to_line.is_finite() {
        r.time_gain * (r.reference_time - time_to_line)
    } else {
        f64::NEG_INFINITY
    };
    let c = driver.centered_composite();
    let p = logistic(r.go_bias + r.impulsivity_gain * c + kinematic);
    match hmi {
        Some(t) if t != HmiType::None => (p * hmi_multiplier(driver, t)).clamp(0.0, 1.0),
        _ => p.clamp(0.0, 1.0),
    }
}

#[derive(Clone, Copy, Debug)]
enum Mode {
    Cruise,
    Reacting { light: usize, decide_at: f64 },
    Going { light: usize },
    Stopping { light: usize, comfort_decel: f64 },
    Halted { light: usize },
}

const STOP_BUFFER: f64 = 1.0;
const STOP_GAIN: f64 = 2.0;
const NOISE_CLIP: f64 = 4.0;

/// Integrates one lap of `driver` on `scenario` at the scenario sample rate.
///
/// Between yellow lights the driver tracks its desired speed with a clipped
/// proportional law plus truncated Gaussian noise. At each yellow onset the
/// driver waits `reaction_delay`, then draws stop/go once from
/// [`go_probability`]. Stops track a constant-deceleration profile to the
/// entry line; infeasible stops (more than `max_decel` required) proceed.
/// The lap ends at `lap_length` or `max_duration`, whichever comes first.
pub fn simulate_lap(
    driver: &DriverParams,
    scenario: &Scenario,
    hmi: HmiConfig,
    lap_id: usize,
    seed: u64,
) -> Result<Trajectory> {
    scenario.validate()?;
    let mut rng = rng_from(seed, &[]);
    let dt = scenario.dt();
    let n_lights = scenario.light_positions.len();
    let width = scenario.intersection_width;
    let max_steps = (scenario.max_duration * scenario.sample_rate).round() as usize;
    let accel_bound = driver.max_accel.max(driver.max_decel);

    let mut onset: Vec<Option<f64>> = vec![None; n_lights];
    let light_at = |onset: &[Option<f64>], j: usize, t: f64| match onset[j] {
        None => LightState::Green,
        Some(t0) if t < t0 + scenario.yellow_duration - 1e-9 => LightState::Yellow,
        Some(t0) if t < t0 + scenario.yellow_duration + scenario.red_duration - 1e-9 => LightState::Red,
        Some(_) => LightState::Green,
    };

    let mut x = 0.0_f64;
    let mut v = driver.desired_speed;
    let mut mode = Mode::Cruise;
    let mut samples = Vec::new();
    let mut actions = Vec::new();

    for k in 0..max_steps {
        if x >= scenario.lap_length {
            break;
        }
        let t = k as f64 * dt;
        let upcoming = scenario.light_positions.iter().position(|&p| p + width > x);

        let (dist_entry, dist_exit, light_state) = match upcoming {
            Some(j) => {
                let p = scenario.light_positions[j];
                if onset[j].is_none() && x < p && p - x <= scenario.yellow_onset_distances[j] {
                    onset[j] = Some(t);
                    mode = Mode::Reacting {
                        light: j,
                        decide_at: t + driver.reaction_delay,
                    };
                }
                ((p - x).max(0.0), p + width - x, light_at(&onset, j, t))
            }
            None => {
                let next = scenario.light_positions.first().copied().unwrap_or(0.0);
                let d = scenario.lap_length - x + next;
                (d, d + width, LightState::Green)
            }
        };

        let hmi_active = match (hmi.hmi_type, hmi.trigger, upcoming) {
            (HmiType::None, _, _) | (_, _, None) => false,
            (_, HmiTrigger::Proximity185m, Some(_)) => dist_entry <= scenario.hmi_proximity,
            (_, HmiTrigger::LightChange, Some(_)) => light_state != LightState::Green,
        };

        // mode bookkeeping for the current position
        mode = match mode {
            Mode::Going { light } | Mode::Reacting { light, .. } | Mode::Stopping { light, .. }
                if x >= scenario.light_positions[light] + width =>
            {
                Mode::Cruise
            }
            Mode::Stopping { light, .. } | Mode::Halted { light }
                if light_at(&onset, light, t) == LightState::Green =>
            {
                Mode::Cruise
            }
            Mode::Reacting { light, decide_at } if t + 1e-9 >= decide_at => {
                let p_entry = scenario.light_positions[light];
                let d = p_entry - x;
                let shown = if hmi_active { Some(hmi.hmi_type) } else { None };
                let p_go = go_probability(driver, shown, d.max(0.0), v);
                let u: f64 = rng.random();
                let room = d - STOP_BUFFER;
                let needed = if room > 0.0 {
                    v * v / (2.0 * room)
                } else {
                    f64::INFINITY
                };
                if u < p_go {
                    Mode::Going { light }
                } else if needed > driver.max_decel {
                    log::debug!(
                        "subject {} lap {lap_id}: stop infeasible at light {light} (needs {needed:.2} m/s²), proceeding",
                        driver.subject_id
                    );
                    Mode::Going { light }
                } else {
                    Mode::Stopping {
                        light,
                        comfort_decel: needed,
                    }
                }
            }
            m => m,
        };

        let noise = if driver.noise_std > 0.0 {
            let xi: f64 = StandardNormal.sample(&mut rng);
            driver.noise_std * xi.clamp(-NOISE_CLIP, NOISE_CLIP)
        } else {
            0.0
        };
        let track = |target: f64| (driver.speed_gain * (target - v)).clamp(-driver.max_decel, driver.max_accel);

        let mut a = match mode {
            Mode::Cruise | Mode::Reacting { .. } => track(driver.desired_speed) + noise,
            Mode::Going { .. } => track(driver.desired_speed + driver.response.go_speed_boost) + noise,
            Mode::Stopping { light, comfort_decel } => {
                let room = scenario.light_positions[light] - x - STOP_BUFFER;
                if room <= 0.5 && v < 0.5 {
                    mode = Mode::Halted { light };
                    -v / dt
                } else {
                    let profile = (2.0 * comfort_decel * room.max(0.0)).sqrt();
                    (-comfort_decel + STOP_GAIN * (profile - v)).clamp(-driver.max_decel, driver.max_accel) + noise
                }
            }
            Mode::Halted { .. } => -v / dt,
        };
        a = a.clamp(
            -accel_bound - NOISE_CLIP * driver.noise_std,
            accel_bound + NOISE_CLIP * driver.noise_std,
        );
        a = a.max(-v / dt);

        samples.push(StateSample {
            t,
            speed: v,
            dist_entry,
            dist_exit,
            light_state,
            hmi_active,
        });
        actions.push(a);

        let v_next = (v + a * dt).max(0.0);
        x += 0.5 * (v + v_next) * dt;
        v = v_next;
    }

    Ok(Trajectory {
        subject_id: driver.subject_id,
        lap_id,
        hmi_condition: hmi,
        sample_rate: scenario.sample_rate,
        samples,
        actions,
    })
}

/// One trajectory per (subject, lap) under a plan shared by every subject.
pub fn generate_dataset(
    cohort: &[DriverParams],
    scenario: &ScenarioConfig,
    lap_plan: &[HmiConfig],
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let plans = vec![lap_plan.to_vec(); cohort.len()];
    generate_dataset_with_plans(cohort, scenario, &plans, seed)
}

/// One trajectory per (subject, lap); `plans[i]` is the lap plan of `cohort[i]`.
///
/// Lap seeds derive from `(seed, subject_id, lap_id)`, so the output does not
/// depend on scheduling.
pub fn generate_dataset_with_plans(
    cohort: &[DriverParams],
    scenario: &ScenarioConfig,
    plans: &[Vec<HmiConfig>],
    seed: u64,
) -> Result<Vec<Trajectory>> {
    scenario.validate()?;
    if plans.len() != cohort.len() {
        return Err(Error::Config(format!(
            "{} lap plans for {} subjects",
            plans.len(),
            cohort.len()
        )));
    }
    if plans.iter().any(|p| p.is_empty()) {
        return Err(Error::Config("lap plan must be non-empty".into()));
    }
    let jobs: Vec<(&DriverParams, usize, HmiConfig)> = cohort
        .iter()
        .zip(plans)
        .flat_map(|(d, plan)| plan.iter().enumerate().map(move |(lap, &h)| (d, lap, h)))
        .collect();
    jobs.par_iter()
        .map(|&(driver, lap_id, hmi)| {
            let mut rng = rng_from(seed, &[TAG_LAP, driver.subject_id as u64, lap_id as u64]);
            let lap_scenario = scenario.draw(&mut rng);
            let lap_seed: u64 = rng.random();
            simulate_lap(driver, &lap_scenario, hmi, lap_id, lap_seed)
        })
        .collect()
}
