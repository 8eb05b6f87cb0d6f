use cogdrive::decision::{dual_objective, fit_svr, SvrParams};
use cogdrive_testkit::{gram, svr_dual_objective, svr_dual_oracle, svr_kkt_residual};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Problem {
    latents: Vec<Vec<f64>>,
    targets: Vec<f64>,
    params: SvrParams,
}

fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let latents = (0..n)
        .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let targets = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let c = [0.5, 1.0, 1.0, 10.0][seed as usize % 4];
    Problem {
        latents,
        targets,
        params: SvrParams {
            c,
            ..SvrParams::default()
        },
    }
}

/// Dense coefficient vector of the fitted model, aligned with `latents`.
fn dense_coefficients(p: &Problem) -> (Vec<f64>, f64) {
    let m = fit_svr(&p.latents, &p.targets, &p.params).unwrap();
    let coef = p
        .latents
        .iter()
        .map(|z| {
            m.support_latents
                .iter()
                .position(|s| s == z)
                .map_or(0.0, |k| m.dual_coeffs[k])
        })
        .collect();
    (coef, m.bias)
}

#[test]
fn smo_matches_projected_gradient_oracle_on_random_problems() {
    for seed in 0..20 {
        let p = problem(seed);
        let gamma = 1.0 / 2.0;
        let k = gram(&p.latents, gamma, p.params.coef0);
        let (coef, bias) = dense_coefficients(&p);
        let ours = svr_dual_objective(&k, &p.targets, &coef, p.params.epsilon);
        let oracle_coef = svr_dual_oracle(&k, &p.targets, p.params.epsilon, p.params.c, 20_000);
        let theirs = svr_dual_objective(&k, &p.targets, &oracle_coef, p.params.epsilon);
        let rel = (ours - theirs).abs() / theirs.abs().max(1e-9);
        assert!(rel < 1e-3, "seed {seed}: objective {ours} vs oracle {theirs}");
        // the library's own objective agrees with the oracle's formula
        let lib = dual_objective(&p.latents, &p.targets, &coef, &p.params);
        assert!((lib - ours).abs() < 1e-9 * ours.abs().max(1.0));
        let kkt = svr_kkt_residual(&k, &p.targets, &coef, bias, p.params.epsilon, p.params.c, 1e-9);
        assert!(kkt <= 1e-4, "seed {seed}: KKT residual {kkt}");
    }
}

#[test]
fn frozen_solution_of_problem_zero() {
    let p = problem(0);
    let k = gram(&p.latents, 0.5, 1.0);
    let (coef, bias) = dense_coefficients(&p);
    let obj = svr_dual_objective(&k, &p.targets, &coef, p.params.epsilon);
    println!("n={} objective={obj:.10} bias={bias:.10}", p.targets.len());
    assert!((obj - FROZEN_OBJECTIVE_0).abs() < 1e-6, "{obj}");
    assert!((bias - FROZEN_BIAS_0).abs() < 1e-4, "{bias}");
}

const FROZEN_OBJECTIVE_0: f64 = -2.8432086959;
const FROZEN_BIAS_0: f64 = -0.4802230345;
