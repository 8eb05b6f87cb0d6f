#![allow(dead_code)]

use std::collections::BTreeMap;

use cogdrive::simulator::*;

pub struct World {
    pub dataset: Vec<Trajectory>,
    pub factors: BTreeMap<usize, FactorVector>,
}

/// `n` subjects on the crossover layout with the default five-lap plan.
pub fn world(n: usize, seed: u64) -> World {
    let cfg = CohortConfig {
        n_subjects: n,
        ..Default::default()
    };
    let cohort = sample_cohort(&cfg, seed).unwrap();
    let dataset = generate_dataset(&cohort, &ScenarioConfig::crossover(), &HmiConfig::default_plan(), seed).unwrap();
    let factors = cohort.iter().map(|d| (d.subject_id, d.factors)).collect();
    World { dataset, factors }
}
