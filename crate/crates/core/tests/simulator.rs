use cogdrive::simulator::*;
use proptest::prelude::*;

fn cohort(n: usize, noise: f64, seed: u64) -> Vec<DriverParams> {
    let mut cfg = CohortConfig {
        n_subjects: n,
        ..Default::default()
    };
    cfg.mapping.noise_std = noise;
    sample_cohort(&cfg, seed).unwrap()
}

fn fixed_onsets(cfg: &ScenarioConfig, d: f64) -> Scenario {
    cfg.with_onsets(vec![d; cfg.light_positions.len()])
}

#[test]
fn lap_of_120_seconds_has_600_samples() {
    let cfg = ScenarioConfig {
        lap_length: 100_000.0,
        light_positions: vec![50_000.0],
        max_duration: 120.0,
        ..Default::default()
    };
    let d = &cohort(2, 0.2, 1)[0];
    let traj = simulate_lap(d, &fixed_onsets(&cfg, 50.0), HmiConfig::BASELINE, 0, 3).unwrap();
    assert_eq!(traj.samples.len(), 600);
    assert_eq!(traj.actions.len(), 600);
    for (k, s) in traj.samples.iter().enumerate() {
        assert!((s.t - k as f64 * 0.2).abs() < 1e-9);
    }
}

#[test]
fn baseline_lap_never_shows_the_hmi() {
    let cfg = ScenarioConfig::default();
    for d in cohort(4, 0.2, 2) {
        let traj = simulate_lap(&d, &fixed_onsets(&cfg, 60.0), HmiConfig::BASELINE, 0, 9).unwrap();
        assert!(traj.samples.iter().all(|s| !s.hmi_active));
    }
}

#[test]
fn hmi_triggers_follow_the_configuration() {
    let cfg = ScenarioConfig::default();
    let d = &cohort(2, 0.2, 2)[0];
    let scenario = fixed_onsets(&cfg, 60.0);
    let prox = simulate_lap(
        d,
        &scenario,
        HmiConfig::new(HmiType::TransverseMarkings, HmiTrigger::Proximity185m),
        1,
        9,
    )
    .unwrap();
    for s in &prox.samples {
        assert_eq!(
            s.hmi_active,
            s.dist_entry <= 185.0 && s.dist_entry < cfg.lap_length - cfg.light_positions[2]
        );
    }
    let change = simulate_lap(
        d,
        &scenario,
        HmiConfig::new(HmiType::YellowCircle, HmiTrigger::LightChange),
        2,
        9,
    )
    .unwrap();
    for s in &change.samples {
        assert_eq!(s.hmi_active, s.light_state != LightState::Green);
    }
}

#[test]
fn cautious_driver_stops_at_every_feasible_yellow() {
    let mut cfg = CohortConfig {
        n_subjects: 6,
        ..Default::default()
    };
    cfg.mapping.go_bias = -1e3;
    // close enough that the halt completes within the yellow and red phases
    let scenario = fixed_onsets(&ScenarioConfig::crossover(), 50.0);
    for d in sample_cohort(&cfg, 4).unwrap() {
        let traj = simulate_lap(&d, &scenario, HmiConfig::BASELINE, 0, 17).unwrap();
        let transitions = traj.transitions();
        assert_eq!(transitions.len(), scenario.light_positions.len());
        for &k in &transitions {
            let phase: Vec<&StateSample> = traj.samples[k..]
                .iter()
                .take_while(|s| s.light_state != LightState::Green)
                .collect();
            assert!(phase.iter().all(|s| s.dist_entry > 0.0), "entered on yellow/red");
            let closest = phase
                .iter()
                .min_by(|a, b| a.dist_entry.total_cmp(&b.dist_entry))
                .unwrap();
            assert!(
                closest.dist_entry < 2.0,
                "subject {} halted {} m short",
                d.subject_id,
                closest.dist_entry
            );
            assert!(closest.speed < 0.5, "subject {}: {}", d.subject_id, closest.speed);
        }
    }
}

#[test]
fn go_probability_examples() {
    let drivers = cohort(27, 0.2, 1);
    let base = drivers[0].clone();
    // composite → −∞
    let mut timid = base.clone();
    timid.factors = FactorVector::new(-1e6, -1e6, 1e9, -1e6);
    for hmi in [None, Some(HmiType::TransverseMarkings), Some(HmiType::YellowCircle)] {
        assert!(go_probability(&timid, hmi, 30.0, 15.0) < 1e-12);
    }
    // composite exactly at the median: ρ = 1
    let mut median = base.clone();
    median.response.norm.median_composite = median.response.norm.composite(&median.factors);
    assert!((hmi_multiplier(&median, HmiType::TransverseMarkings) - 1.0).abs() < 1e-15);
    let p = go_probability(&median, None, 30.0, 15.0);
    assert!((go_probability(&median, Some(HmiType::TransverseMarkings), 30.0, 15.0) - p).abs() < 1e-15);
    // +2 std of urgency
    let spec = FactorSpec::default();
    let mut high = base.clone();
    high.factors.urgency += 2.0 * spec.std.urgency;
    assert!(go_probability(&high, None, 30.0, 15.0) > go_probability(&base, None, 30.0, 15.0));
}

#[test]
fn hmi_multiplier_splits_at_the_median() {
    for d in cohort(27, 0.2, 6) {
        let rho = hmi_multiplier(&d, HmiType::TransverseMarkings);
        let c = d.centered_composite();
        if c < 0.0 {
            assert!(rho < 1.0);
        } else if c > 0.0 {
            assert!(rho > 1.0);
        }
    }
}

#[test]
fn hmi_interaction_sign_without_noise() {
    let drivers = cohort(27, 0.0, 1);
    let by_composite = |best: fn(f64, f64) -> bool| {
        drivers
            .iter()
            .reduce(|a, b| {
                if best(b.centered_composite(), a.centered_composite()) {
                    b
                } else {
                    a
                }
            })
            .unwrap()
    };
    let lowest = by_composite(|a, b| a < b);
    let highest = by_composite(|a, b| a > b);
    let scenario = ScenarioConfig::crossover();
    let mean_yellow = |d: &DriverParams, hmi: HmiConfig| {
        let laps = 40;
        let mut total = 0.0;
        for lap in 0..laps {
            let mut rng = cogdrive::rng::rng_from(99, &[d.subject_id as u64, lap]);
            let traj = simulate_lap(d, &scenario.draw(&mut rng), hmi, 0, lap).unwrap();
            total += cogdrive::dataset::yellow_speed_stats(&traj).unwrap().mean_speed_yellow;
        }
        total / laps as f64
    };
    let markings = HmiConfig::new(HmiType::TransverseMarkings, HmiTrigger::Proximity185m);
    let low_effect = mean_yellow(lowest, markings) - mean_yellow(lowest, HmiConfig::BASELINE);
    let high_effect = mean_yellow(highest, markings) - mean_yellow(highest, HmiConfig::BASELINE);
    assert!(low_effect < 0.0, "{low_effect}");
    assert!(high_effect > 0.0, "{high_effect}");
}

#[test]
fn dataset_shape_and_determinism() {
    let drivers = cohort(27, 0.2, 1);
    let plan = HmiConfig::default_plan();
    assert_eq!(plan.len(), 5);
    assert_eq!(plan.iter().filter(|h| !h.is_hmi()).count(), 1);
    let scenario = ScenarioConfig::default();
    let a = generate_dataset(&drivers, &scenario, &plan, 5).unwrap();
    assert_eq!(a.len(), 135);
    assert_eq!(a, generate_dataset(&drivers, &scenario, &plan, 5).unwrap());
    assert_ne!(a, generate_dataset(&drivers, &scenario, &plan, 6).unwrap());
    assert!(generate_dataset(&[], &scenario, &plan, 5).unwrap().is_empty());
    assert!(generate_dataset(&drivers, &scenario, &[], 5).is_err());
}

fn factor_strategy() -> impl Strategy<Value = FactorVector> {
    (0.0..5.0f64, 5.0..20.0f64, 250.0..700.0f64, 0.0..4.5f64).prop_map(|(u, f, g, v)| FactorVector::new(u, f, g, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn go_probability_is_monotone_in_impulsivity_factors(
        f in factor_strategy(),
        which in 0usize..3,
        bump in 0.0..3.0f64,
        dist in 0.0..120.0f64,
        speed in 0.0..30.0f64,
        hmi in prop_oneof![Just(None), Just(Some(HmiType::TransverseMarkings)), Just(Some(HmiType::YellowCircle))],
    ) {
        let mut d = cohort(27, 0.2, 1)[3].clone();
        d.factors = f;
        let p0 = go_probability(&d, hmi, dist, speed);
        let mut raised = d.clone();
        match which {
            0 => raised.factors.urgency += bump,
            1 => raised.factors.fun_seeking += bump,
            _ => raised.factors.violations += bump,
        }
        let p1 = go_probability(&raised, hmi, dist, speed);
        prop_assert!((0.0..=1.0).contains(&p0));
        prop_assert!(p1 >= p0, "{p1} < {p0}");
    }

    #[test]
    fn laps_are_physical_and_deterministic(seed in 0u64..1_000, subject in 0usize..27, plan_idx in 0usize..5) {
        let drivers = cohort(27, 0.2, 3);
        let d = &drivers[subject];
        let cfg = ScenarioConfig::default();
        let mut rng = cogdrive::rng::rng_from(seed, &[]);
        let scenario = cfg.draw(&mut rng);
        let hmi = HmiConfig::default_plan()[plan_idx];
        let traj = simulate_lap(d, &scenario, hmi, plan_idx, seed).unwrap();
        prop_assert_eq!(&traj, &simulate_lap(d, &scenario, hmi, plan_idx, seed).unwrap());
        let dt = 1.0 / scenario.sample_rate;
        let bound = d.max_accel.max(d.max_decel);
        for (k, s) in traj.samples.iter().enumerate() {
            prop_assert!(s.speed >= 0.0);
            prop_assert!(s.dist_exit >= s.dist_entry && s.dist_entry >= 0.0);
            prop_assert!(traj.actions[k].abs() <= bound + 5.0 * d.noise_std);
            if k > 0 {
                let dv = (s.speed - traj.samples[k - 1].speed).abs();
                prop_assert!(dv <= bound * dt + 5.0 * d.noise_std * dt + 1e-9, "step {k}: {dv}");
            }
        }
    }
}
