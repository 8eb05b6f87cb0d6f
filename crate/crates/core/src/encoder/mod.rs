//! Contrastive latent encoder.
//!
//! A single-layer LSTM reads a window of (state, previous action) steps; its
//! final hidden state feeds two linear heads giving the mean and
//! log-variance of a low-dimensional latent `z`. A linear decoder predicts
//! the current action from `z`. Training combines the action reconstruction
//! loss, a factor-supervised contrastive loss and a KL regularizer.

mod gradcheck;
pub mod io;
pub mod loss;
mod lstm;
mod train;

pub use gradcheck::{grad_check, BackpropFault, GradCheckReport};
pub use loss::{loss_contrastive, loss_kl, loss_reconstruction, LossBreakdown};
pub use lstm::LstmState;
pub use train::{loss_total, train, Batch, EpochLoss, TrainOutput};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Snippet;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::simulator::{StateSample, Trajectory};

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub epochs: usize,
    pub epsilon_contrastive: f64,
    pub lr: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub context_seconds: f64,
    pub hidden: usize,
    pub latent_dim: usize,
    /// Feed the decoder a reparameterized sample instead of the mean.
    pub sample_latent: bool,
    /// Append the previous action to the five state features.
    pub include_action: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Hyperparams {
    /// Full-scale training profile.
    pub fn paper() -> Self {
        Self {
            batch_size: 2048,
            epochs: 600,
            epsilon_contrastive: 2.0,
            lr: 1e-2,
            alpha1: 1e4,
            alpha2: 1e4,
            alpha3: 1e-8,
            context_seconds: 6.0,
            hidden: 128,
            latent_dim: 2,
            sample_latent: true,
            include_action: true,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    /// Reduced profile for single-machine runs.
    pub fn desk() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            hidden: 32,
            ..Self::paper()
        }
    }

    pub fn inputs(&self) -> usize {
        if self.include_action {
            6
        } else {
            5
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.epsilon_contrastive, self.lr, self.context_seconds, self.adam_eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "epsilon_contrastive, lr, context_seconds and adam_eps must be positive".into(),
            ));
        }
        if [self.alpha1, self.alpha2, self.alpha3]
            .iter()
            .any(|a| !(a.is_finite() && *a >= 0.0))
        {
            return Err(Error::Config("loss weights alpha1..alpha3 must be >= 0".into()));
        }
        if self.batch_size < 2 || self.hidden == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "batch_size >= 2, hidden >= 1 and latent_dim >= 1 required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::desk()
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
///
/// Order: LSTM input weights, recurrent weights, biases (gate rows i, f, g, o),
/// then mean head weights and bias, log-variance head weights and bias,
/// decoder weights and bias. LSTM weight matrices are stored input-major:
/// the weight from input `k` to gate row `r` sits at `k * 4H + r`. Head
/// weights are row-major `D × H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub inputs: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl ParamLayout {
    pub fn gates(&self) -> usize {
        4 * self.hidden
    }
    pub fn wx(&self) -> std::ops::Range<usize> {
        0..self.inputs * self.gates()
    }
    pub fn wh(&self) -> std::ops::Range<usize> {
        let s = self.wx().end;
        s..s + self.hidden * self.gates()
    }
    pub fn b(&self) -> std::ops::Range<usize> {
        let s = self.wh().end;
        s..s + self.gates()
    }
    pub fn mu_w(&self) -> std::ops::Range<usize> {
        let s = self.b().end;
        s..s + self.latent * self.hidden
    }
    pub fn mu_b(&self) -> std::ops::Range<usize> {
        let s = self.mu_w().end;
        s..s + self.latent
    }
    pub fn lv_w(&self) -> std::ops::Range<usize> {
        let s = self.mu_b().end;
        s..s + self.latent * self.hidden
    }
    pub fn lv_b(&self) -> std::ops::Range<usize> {
        let s = self.lv_w().end;
        s..s + self.latent
    }
    pub fn dec_w(&self) -> std::ops::Range<usize> {
        let s = self.lv_b().end;
        s..s + self.latent
    }
    pub fn dec_b(&self) -> std::ops::Range<usize> {
        let s = self.dec_w().end;
        s..s + 1
    }
    pub fn len(&self) -> usize {
        self.dec_b().end
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-feature standardization statistics of the training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(inputs: usize) -> Self {
        Self {
            mean: vec![0.0; inputs],
            std: vec![1.0; inputs],
        }
    }

    /// Statistics over every step of every snippet; near-constant features keep unit scale.
    pub fn fit(snippets: &[Snippet], include_action: bool) -> Self {
        let inputs = if include_action { 6 } else { 5 };
        let mut sum = vec![0.0; inputs];
        let mut sq = vec![0.0; inputs];
        let mut n = 0usize;
        for s in snippets {
            let mut prev = s.lead_action;
            for w in &s.window {
                let f = raw_features(&w.sample, prev);
                for k in 0..inputs {
                    sum[k] += f[k];
                    sq[k] += f[k] * f[k];
                }
                prev = w.action;
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(inputs);
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    fn apply<T: Scalar>(&self, raw: &[f64; 6], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = T::lit((raw[k] - self.mean[k]) / self.std[k]);
        }
    }
}

/// speed, dist_entry, dist_exit, light {0, 0.5, 1}, hmi_active, previous action.
fn raw_features(s: &StateSample, prev_action: f64) -> [f64; 6] {
    [
        s.speed,
        s.dist_entry,
        s.dist_exit,
        s.light_state.feature(),
        if s.hmi_active { 1.0 } else { 0.0 },
        prev_action,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// `z = mu`
    Deterministic,
    /// `z = mu + exp(logvar / 2) ⊙ ξ`, `ξ ~ N(0, I)`
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub z: Vec<T>,
    pub subject_id: usize,
    pub lap_id: usize,
    pub end_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T> {
    pub layout: ParamLayout,
    pub context_len: usize,
    pub include_action: bool,
    pub scaler: FeatureScaler,
    pub params: Vec<T>,
}

impl<T: Scalar> EncoderModel<T> {
    /// All-zero parameters.
    pub fn zeros(layout: ParamLayout, context_len: usize, scaler: FeatureScaler) -> Self {
        Self {
            layout,
            context_len,
            include_action: layout.inputs == 6,
            scaler,
            params: vec![T::zero(); layout.len()],
        }
    }

    /// Uniform(−1/√H, 1/√H) for LSTM and heads, Uniform(−1/√D, 1/√D) for the decoder.
    pub fn init(layout: ParamLayout, context_len: usize, scaler: FeatureScaler, rng: &mut Rng) -> Self {
        let mut model = Self::zeros(layout, context_len, scaler);
        let a = 1.0 / (layout.hidden as f64).sqrt();
        let ad = 1.0 / (layout.latent as f64).sqrt();
        let dec = layout.dec_w().start;
        for (i, p) in model.params.iter_mut().enumerate() {
            let bound = if i >= dec { ad } else { a };
            *p = T::lit(rng.random_range(-bound..bound));
        }
        model
    }

    pub fn from_hyperparams(hyper: &Hyperparams, sample_rate: f64, scaler: FeatureScaler, rng: &mut Rng) -> Self {
        let layout = ParamLayout {
            inputs: hyper.inputs(),
            hidden: hyper.hidden,
            latent: hyper.latent_dim,
        };
        let context_len = (hyper.context_seconds * sample_rate).round() as usize;
        Self::init(layout, context_len, scaler, rng)
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent
    }

    pub(crate) fn p(&self, r: std::ops::Range<usize>) -> &[T] {
        &self.params[r]
    }

    /// Standardized inputs of a snippet, `len × inputs`, row-major.
    pub fn features(&self, snippet: &Snippet) -> Vec<T> {
        let inputs = self.layout.inputs;
        let mut out = vec![T::zero(); snippet.len() * inputs];
        let mut prev = snippet.lead_action;
        for (t, w) in snippet.window.iter().enumerate() {
            let raw = raw_features(&w.sample, prev);
            self.scaler.apply(&raw, &mut out[t * inputs..(t + 1) * inputs]);
            prev = w.action;
        }
        out
    }

    fn check_len(&self, snippet: &Snippet) -> Result<()> {
        if snippet.len() != self.context_len {
            return Err(Error::Shape {
                what: "snippet window",
                expected: self.context_len,
                actual: snippet.len(),
            });
        }
        Ok(())
    }

    /// Mean and log-variance from a hidden state.
    pub fn heads(&self, h: &[T]) -> (Vec<T>, Vec<T>) {
        let l = &self.layout;
        let head = |w: &[T], b: &[T]| -> Vec<T> {
            (0..l.latent)
                .map(|d| b[d] + lstm::dot(&w[d * l.hidden..(d + 1) * l.hidden], h))
                .collect()
        };
        (
            head(self.p(l.mu_w()), self.p(l.mu_b())),
            head(self.p(l.lv_w()), self.p(l.lv_b())),
        )
    }

    pub fn decode(&self, z: &[T]) -> T {
        let l = &self.layout;
        self.p(l.dec_b())[0] + lstm::dot(self.p(l.dec_w()), z)
    }

    /// Runs the window through the LSTM and maps the last hidden state to a
    /// latent. `rng` supplies ξ in sampled mode.
    pub fn encode(&self, snippet: &Snippet, mode: LatentMode, rng: Option<&mut Rng>) -> Result<LatentPoint<T>> {
        self.check_len(snippet)?;
        let x = self.features(snippet);
        let mut state = LstmState::new(self.layout.hidden);
        for step in x.chunks_exact(self.layout.inputs) {
            self.step(&mut state, step);
        }
        let (mu, logvar) = self.heads(&state.h);
        let z = match (mode, rng) {
            (LatentMode::Deterministic, _) => mu.clone(),
            (LatentMode::Sampled, Some(rng)) => {
                let half = T::lit(0.5);
                mu.iter()
                    .zip(&logvar)
                    .map(|(&m, &lv)| {
                        let xi: f64 = StandardNormal.sample(rng);
                        m + (lv * half).exp() * T::lit(xi)
                    })
                    .collect()
            }
            (LatentMode::Sampled, None) => {
                return Err(Error::Config("sampled encoding needs an RNG".into()));
            }
        };
        Ok(LatentPoint {
            mu,
            logvar,
            z,
            subject_id: snippet.subject_id,
            lap_id: snippet.lap_id,
            end_index: snippet.end_index,
        })
    }

    /// Latent mean after every step of the window.
    pub fn latent_series(&self, snippet: &Snippet) -> Result<Vec<Vec<T>>> {
        self.check_len(snippet)?;
        let x = self.features(snippet);
        let mut state = LstmState::new(self.layout.hidden);
        Ok(x.chunks_exact(self.layout.inputs)
            .map(|step| {
                self.step(&mut state, step);
                self.heads(&state.h).0
            })
            .collect())
    }

    /// Feeds a whole lap sample by sample, keeping the recurrent state, and
    /// returns the latent mean after each sample.
    pub fn stream(&self, traj: &Trajectory) -> Vec<Vec<T>> {
        let inputs = self.layout.inputs;
        let mut state = LstmState::new(self.layout.hidden);
        let mut x = vec![T::zero(); inputs];
        let mut prev = 0.0;
        traj.samples
            .iter()
            .zip(&traj.actions)
            .map(|(s, &a)| {
                self.scaler.apply(&raw_features(s, prev), &mut x);
                prev = a;
                self.step(&mut state, &x);
                self.heads(&state.h).0
            })
            .collect()
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        EncoderModel {
            layout: self.layout,
            context_len: self.context_len,
            include_action: self.include_action,
            scaler: self.scaler.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
        }
    }
}

/// Arithmetic mean of the last `window_seconds × sample_rate` latents (all of
/// them when the series is shorter).
pub fn windowed_average_latent<T: Scalar>(series: &[Vec<T>], window_seconds: f64, sample_rate: f64) -> Result<Vec<T>> {
    let Some(first) = series.first() else {
        return Err(Error::EmptySeries);
    };
    let w = ((window_seconds * sample_rate).round() as usize).clamp(1, series.len());
    let tail = &series[series.len() - w..];
    let mut out = vec![T::zero(); first.len()];
    for z in tail {
        for (o, &v) in out.iter_mut().zip(z) {
            *o += v;
        }
    }
    let n = T::lit(w as f64);
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}
