//! ε-support vector regression from latents to predicted HMI benefit, and
//! the zero-threshold deployment decision.
//!
//! The dual is solved in the usual 2n-variable form: with `β = [α; α*]`,
//! `y = [+1; −1]`, `Q_st = y_s y_t K(s mod n, t mod n)` and
//! `p = [ε − t; ε + t]`, minimize `½βᵀQβ + pᵀβ` subject to `yᵀβ = 0` and
//! `0 ≤ β ≤ C`. Working pairs are picked by maximal violation for `i` and
//! second-order gain for `j`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoder::{windowed_average_latent, LatentPoint};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SVR_FORMAT_VERSION: u32 = 1;

/// `(γ⟨u, v⟩ + coef0)³`
pub fn kernel_poly3<T: Scalar>(u: &[T], v: &[T], gamma: T, coef0: T) -> T {
    let ip: T = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    (gamma * ip + coef0).powi(3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// `None` means `1 / D`.
    pub gamma: Option<f64>,
    pub coef0: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub jitter: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.5,
            gamma: None,
            coef0: 1.0,
            tolerance: 1e-4,
            max_iterations: 1_000_000,
            jitter: 1e-10,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0
            && self.epsilon >= 0.0
            && self.gamma.is_none_or(|g| g > 0.0)
            && self.coef0.is_finite()
            && self.tolerance > 0.0
            && self.jitter >= 0.0
            && self.max_iterations > 0;
        if !ok {
            return Err(Error::Config(format!("invalid SVR parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct SvrModel<T> {
    pub format_version: u32,
    pub support_latents: Vec<Vec<T>>,
    /// `α − α*` of each support vector.
    pub dual_coeffs: Vec<T>,
    pub bias: T,
    pub kernel: KernelParams,
    pub epsilon_tube: f64,
    pub c: f64,
    pub iterations: usize,
    /// Final maximal KKT violation `m(β) − M(β)`.
    pub kkt_violation: f64,
}

impl<T: Scalar> SvrModel<T> {
    /// `Σ_i coeff_i k(sv_i, z) + bias`
    pub fn predict(&self, z: &[T]) -> T {
        let (g, c0) = (T::lit(self.kernel.gamma), T::lit(self.kernel.coef0));
        self.support_latents
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(sv, &a)| a * kernel_poly3(sv, z, g, c0))
            .sum::<T>()
            + self.bias
    }

    pub fn cast<U: Scalar>(&self) -> SvrModel<U> {
        SvrModel {
            format_version: self.format_version,
            support_latents: self
                .support_latents
                .iter()
                .map(|z| z.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
            dual_coeffs: self.dual_coeffs.iter().map(|v| U::lit(v.as_f64())).collect(),
            bias: U::lit(self.bias.as_f64()),
            kernel: self.kernel,
            epsilon_tube: self.epsilon_tube,
            c: self.c,
            iterations: self.iterations,
            kkt_violation: self.kkt_violation,
        }
    }
}

/// Dual objective `½ΣΣ β_i β_j K_ij + ε Σ|β_i| − Σ t_i β_i` of coefficients
/// `β = α − α*` (minimization form).
pub fn dual_objective<T: Scalar>(latents: &[Vec<T>], targets: &[T], coeffs: &[T], params: &SvrParams) -> T {
    let gamma = T::lit(resolve_gamma(params, latents));
    let c0 = T::lit(params.coef0);
    let eps = T::lit(params.epsilon);
    let mut quad = T::zero();
    for (i, u) in latents.iter().enumerate() {
        for (j, v) in latents.iter().enumerate() {
            quad += coeffs[i] * coeffs[j] * kernel_poly3(u, v, gamma, c0);
        }
    }
    let lin: T = coeffs.iter().zip(targets).map(|(&b, &t)| eps * b.abs() - t * b).sum();
    T::lit(0.5) * quad + lin
}

fn resolve_gamma<T>(params: &SvrParams, latents: &[Vec<T>]) -> f64 {
    params
        .gamma
        .unwrap_or_else(|| 1.0 / latents.first().map_or(1, |z| z.len().max(1)) as f64)
}

/// Solves the ε-SVR dual to the KKT tolerance.
pub fn fit_svr<T: Scalar>(latents: &[Vec<T>], targets: &[T], params: &SvrParams) -> Result<SvrModel<T>> {
    params.validate()?;
    let n = latents.len();
    if n < 2 {
        return Err(Error::InsufficientSupport(format!(
            "SVR needs at least 2 points, got {n}"
        )));
    }
    if targets.len() != n {
        return Err(Error::Shape {
            what: "SVR targets",
            expected: n,
            actual: targets.len(),
        });
    }
    let dim = latents[0].len();
    if latents.iter().any(|z| z.len() != dim) {
        return Err(Error::Config("SVR latents have mixed dimensions".into()));
    }
    if latents.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite SVR input".into()));
    }
    let gamma = resolve_gamma(params, latents);
    let (g, c0) = (gamma, params.coef0);
    let z64: Vec<Vec<f64>> = latents.iter().map(|z| z.iter().map(|v| v.as_f64()).collect()).collect();
    let t64: Vec<f64> = targets.iter().map(|t| t.as_f64()).collect();

    // solver state in f64 regardless of T
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel_poly3(&z64[i], &z64[j], g, c0);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += params.jitter;
    }
    let diag: Vec<f64> = (0..n).map(|i| k[i * n + i]).collect();
    let m = 2 * n;
    let c = params.c;
    let y = |s: usize| if s < n { 1.0 } else { -1.0 };
    let kk = |s: usize, t: usize| k[(s % n) * n + t % n];
    let mut beta = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m)
        .map(|s| {
            if s < n {
                params.epsilon - t64[s]
            } else {
                params.epsilon + t64[s - n]
            }
        })
        .collect();
    let in_up = |s: usize, b: &[f64]| if s < n { b[s] < c } else { b[s] > 0.0 };
    let in_low = |s: usize, b: &[f64]| if s < n { b[s] > 0.0 } else { b[s] < c };
    const TAU: f64 = 1e-12;

    let mut iterations = 0;
    let violation = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for s in 0..m {
            if in_up(s, &beta) {
                let v = -y(s) * grad[s];
                if v > gmax {
                    gmax = v;
                    i = s;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            let ri = &k[(i % n) * n..(i % n + 1) * n];
            let kii = diag[i % n];
            for s in 0..m {
                if in_low(s, &beta) {
                    let v = -y(s) * grad[s];
                    gmin = gmin.min(v);
                    if v < gmax {
                        let r = if s < n { s } else { s - n };
                        let b = gmax - v;
                        let a = (kii + diag[r] - 2.0 * ri[r]).max(TAU);
                        let gain = -b * b / a;
                        if gain < best {
                            best = gain;
                            j = s;
                        }
                    }
                }
            }
        }
        let violation = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || violation < params.tolerance {
            break violation.max(0.0);
        }
        if iterations >= params.max_iterations {
            return Err(Error::Convergence { iterations, violation });
        }
        iterations += 1;

        let (yi, yj) = (y(i), y(j));
        let qij = yi * yj * kk(i, j);
        let (oi, oj) = (beta[i], beta[j]);
        if yi != yj {
            let quad = (kk(i, i) + kk(j, j) + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = oi - oj;
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = (kk(i, i) + kk(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = oi + oj;
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - oi, beta[j] - oj);
        let (ri, rj) = (&k[(i % n) * n..(i % n + 1) * n], &k[(j % n) * n..(j % n + 1) * n]);
        let (ci, cj) = (yi * di, yj * dj);
        let (gp, gm) = grad.split_at_mut(n);
        for r in 0..n {
            let t = ci * ri[r] + cj * rj[r];
            gp[r] += t;
            gm[r] -= t;
        }
    };

    // bias: mean of yG over free variables, else midpoint of the feasible interval
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for s in 0..m {
        let yg = y(s) * grad[s];
        let at_upper = beta[s] >= c;
        let at_lower = beta[s] <= 0.0;
        if at_upper {
            if y(s) > 0.0 {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        } else if at_lower {
            if y(s) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };

    let mut support_latents = Vec::new();
    let mut dual_coeffs = Vec::new();
    for i in 0..n {
        let coef = beta[i] - beta[i + n];
        if coef != 0.0 {
            support_latents.push(latents[i].clone());
            dual_coeffs.push(T::lit(coef));
        }
    }
    Ok(SvrModel {
        format_version: SVR_FORMAT_VERSION,
        support_latents,
        dual_coeffs,
        bias: T::lit(-rho),
        kernel: KernelParams {
            degree: 3,
            gamma,
            coef0: c0,
        },
        epsilon_tube: params.epsilon,
        c,
        iterations,
        kkt_violation: violation,
    })
}

/// Per-dimension z-scoring of latents ahead of the kernel; keeps the cubic
/// kernel well conditioned whatever scale the encoder settles on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStandardizer {
    /// Population statistics; near-constant dimensions keep unit scale.
    pub fn fit<T: Scalar>(latents: &[Vec<T>]) -> Result<Self> {
        let Some(first) = latents.first() else {
            return Err(Error::InsufficientSupport("no latents to standardize".into()));
        };
        let d = first.len();
        let n = latents.len() as f64;
        let mut mean = vec![0.0; d];
        for z in latents {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v.as_f64() / n;
            }
        }
        let mut var = vec![0.0; d];
        for z in latents {
            for k in 0..d {
                var[k] += (z[k].as_f64() - mean[k]).powi(2) / n;
            }
        }
        let std = var
            .iter()
            .map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply<T: Scalar>(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| T::lit((v.as_f64() - m) / s))
            .collect()
    }
}

/// Standardizer followed by the SVR, fitted together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct DecisionModel<T> {
    pub standardizer: LatentStandardizer,
    pub svr: SvrModel<T>,
}

impl<T: Scalar> DecisionModel<T> {
    pub fn fit(latents: &[Vec<T>], targets: &[T], params: &SvrParams) -> Result<Self> {
        let standardizer = LatentStandardizer::fit(latents)?;
        let scaled: Vec<Vec<T>> = latents.iter().map(|z| standardizer.apply(z)).collect();
        Ok(Self {
            svr: fit_svr(&scaled, targets, params)?,
            standardizer,
        })
    }

    pub fn predict(&self, z: &[T]) -> T {
        self.svr.predict(&self.standardizer.apply(z))
    }

    pub fn cast<U: Scalar>(&self) -> DecisionModel<U> {
        DecisionModel {
            standardizer: self.standardizer.clone(),
            svr: self.svr.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Latent from the last step only.
    Instantaneous,
    /// Moving average of per-step latents.
    WindowedAverage,
}

/// Decision latent input for one of the two inference modes.
#[derive(Clone, Copy, Debug)]
pub enum DecisionInput<'a, T> {
    Instantaneous(&'a LatentPoint<T>),
    WindowedAverage {
        series: &'a [Vec<T>],
        window_seconds: f64,
        sample_rate: f64,
    },
}

impl<T> DecisionInput<'_, T> {
    pub fn mode(&self) -> InferenceMode {
        match self {
            Self::Instantaneous(_) => InferenceMode::Instantaneous,
            Self::WindowedAverage { .. } => InferenceMode::WindowedAverage,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmiDecision {
    pub subject_id: usize,
    /// Predicted non-HMI minus HMI yellow-light speed, m/s.
    pub score: f64,
    pub deploy: bool,
}

impl HmiDecision {
    /// Deploys when the predicted benefit is strictly positive.
    pub fn from_score(subject_id: usize, score: f64) -> Self {
        Self {
            subject_id,
            score,
            deploy: score > 0.0,
        }
    }
}

/// Scores one input; the latent is the mean in both modes.
pub fn decide<T: Scalar>(svr: &SvrModel<T>, subject_id: usize, input: DecisionInput<'_, T>) -> Result<HmiDecision> {
    let score = match input {
        DecisionInput::Instantaneous(p) => svr.predict(&p.mu),
        DecisionInput::WindowedAverage {
            series,
            window_seconds,
            sample_rate,
        } => svr.predict(&windowed_average_latent(series, window_seconds, sample_rate)?),
    };
    Ok(HmiDecision::from_score(subject_id, score.as_f64()))
}
