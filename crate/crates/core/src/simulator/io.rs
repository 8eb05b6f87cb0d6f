//! Trajectory JSON-Lines and cohort JSON files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DriverParams, FactorVector, HmiConfig, HmiTrigger, HmiType, LightState, StateSample, Trajectory};
use crate::error::{Error, Result};

/// One sample of one lap, exactly as written to the trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub subject_id: usize,
    pub lap_id: usize,
    pub hmi_type: HmiType,
    pub trigger: HmiTrigger,
    pub t: f64,
    pub speed_mps: f64,
    pub dist_entry_m: f64,
    pub dist_exit_m: f64,
    pub light_state: u8,
    pub hmi_active: u8,
    pub accel_mps2: f64,
}

pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<()> {
    for traj in trajectories {
        for (s, &a) in traj.samples.iter().zip(&traj.actions) {
            let rec = SampleRecord {
                subject_id: traj.subject_id,
                lap_id: traj.lap_id,
                hmi_type: traj.hmi_condition.hmi_type,
                trigger: traj.hmi_condition.trigger,
                t: s.t,
                speed_mps: s.speed,
                dist_entry_m: s.dist_entry,
                dist_exit_m: s.dist_exit,
                light_state: s.light_state as u8,
                hmi_active: s.hmi_active as u8,
                accel_mps2: a,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads trajectory records back, grouping by (subject, lap) and ordering
/// each lap by `t`; record order in the file is irrelevant.
pub fn read_trajectories<R: BufRead>(input: R, sample_rate: f64) -> Result<Vec<Trajectory>> {
    let mut laps: BTreeMap<(usize, usize), (HmiConfig, Vec<(StateSample, f64)>)> = BTreeMap::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)?;
        let light_state = LightState::from_code(rec.light_state)
            .ok_or_else(|| Error::Config(format!("line {}: invalid light_state {}", lineno + 1, rec.light_state)))?;
        let hmi = HmiConfig::new(rec.hmi_type, rec.trigger);
        let entry = laps
            .entry((rec.subject_id, rec.lap_id))
            .or_insert_with(|| (hmi, Vec::new()));
        if entry.0 != hmi {
            return Err(Error::Config(format!(
                "line {}: lap ({}, {}) mixes HMI conditions",
                lineno + 1,
                rec.subject_id,
                rec.lap_id
            )));
        }
        entry.1.push((
            StateSample {
                t: rec.t,
                speed: rec.speed_mps,
                dist_entry: rec.dist_entry_m,
                dist_exit: rec.dist_exit_m,
                light_state,
                hmi_active: rec.hmi_active != 0,
            },
            rec.accel_mps2,
        ));
    }
    Ok(laps
        .into_iter()
        .map(|((subject_id, lap_id), (hmi_condition, mut rows))| {
            rows.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
            let (samples, actions) = rows.into_iter().unzip();
            Trajectory {
                subject_id,
                lap_id,
                hmi_condition,
                sample_rate,
                samples,
                actions,
            }
        })
        .collect())
}

/// Cohort file entry: the factors plus the derived kinematic parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortRecord {
    pub subject_id: usize,
    pub urgency: f64,
    pub fun_seeking: f64,
    pub go_rt_ms: f64,
    pub violations: f64,
    pub desired_speed_mps: f64,
    pub max_accel_mps2: f64,
    pub max_decel_mps2: f64,
    pub reaction_delay_s: f64,
    pub noise_std_mps2: f64,
    pub impulsivity_composite: f64,
    pub hmi_multiplier_markings: f64,
}

impl CohortRecord {
    pub fn from_driver(d: &DriverParams) -> Self {
        Self {
            subject_id: d.subject_id,
            urgency: d.factors.urgency,
            fun_seeking: d.factors.fun_seeking,
            go_rt_ms: d.factors.go_rt,
            violations: d.factors.violations,
            desired_speed_mps: d.desired_speed,
            max_accel_mps2: d.max_accel,
            max_decel_mps2: d.max_decel,
            reaction_delay_s: d.reaction_delay,
            noise_std_mps2: d.noise_std,
            impulsivity_composite: d.response.norm.composite(&d.factors),
            hmi_multiplier_markings: super::hmi_multiplier(d, HmiType::TransverseMarkings),
        }
    }

    pub fn factors(&self) -> FactorVector {
        FactorVector::new(self.urgency, self.fun_seeking, self.go_rt_ms, self.violations)
    }
}

pub fn write_cohort<W: Write>(mut out: W, cohort: &[DriverParams]) -> Result<()> {
    let records: Vec<CohortRecord> = cohort.iter().map(CohortRecord::from_driver).collect();
    serde_json::to_writer_pretty(&mut out, &records)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_cohort<R: std::io::Read>(input: R) -> Result<Vec<CohortRecord>> {
    Ok(serde_json::from_reader(input)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_dataset, sample_cohort, CohortConfig, ScenarioConfig};

    #[test]
    fn trajectories_round_trip_in_any_record_order() {
        let cfg = CohortConfig {
            n_subjects: 2,
            ..Default::default()
        };
        let cohort = sample_cohort(&cfg, 3).unwrap();
        let data = generate_dataset(&cohort, &ScenarioConfig::default(), &HmiConfig::default_plan()[..2], 9).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &data).unwrap();
        let back = read_trajectories(buf.as_slice(), 5.0).unwrap();
        assert_eq!(back, data);

        let mut lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
        lines.reverse();
        let shuffled = lines.join("\n");
        assert_eq!(read_trajectories(shuffled.as_bytes(), 5.0).unwrap(), data);
    }

    #[test]
    fn record_field_names_are_stable() {
        let rec = SampleRecord {
            subject_id: 1,
            lap_id: 2,
            hmi_type: HmiType::YellowCircle,
            trigger: HmiTrigger::Proximity185m,
            t: 0.2,
            speed_mps: 14.0,
            dist_entry_m: 30.0,
            dist_exit_m: 45.0,
            light_state: 1,
            hmi_active: 1,
            accel_mps2: -0.5,
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"subject_id":1,"lap_id":2,"hmi_type":"yellow_circle","trigger":"proximity185m","t":0.2,"speed_mps":14.0,"dist_entry_m":30.0,"dist_exit_m":45.0,"light_state":1,"hmi_active":1,"accel_mps2":-0.5}"#
        );
        assert!(serde_json::from_str::<SampleRecord>(&json.replace("\"t\"", "\"time\"")).is_err());
    }
}
