//! Combined objective with analytic gradient, and the Adam training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::loss::{contrastive_with_grad, loss_kl, LossBreakdown};
use super::lstm::{backward, forward_tape, Scratch, Tape};
use super::{EncoderModel, FeatureScaler, Hyperparams, ParamLayout};
use crate::dataset::{batch_normalize_factors, Snippet};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng, TAG_INIT, TAG_TRAIN};
use crate::scalar::Scalar;
use crate::simulator::FactorVector;

/// A mini-batch with aligned inputs, reconstruction targets, normalized
/// factor targets and, in sampled mode, the reparameterization noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// Standardized windows, `len × inputs` each.
    pub inputs: Vec<Vec<T>>,
    pub actions: Vec<T>,
    pub factors: Vec<Vec<T>>,
    /// ξ per element; `None` feeds the mean to the decoder.
    pub noise: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_snippets(model: &EncoderModel<T>, snippets: &[Snippet], factors: &[Vec<T>]) -> Self {
        Self {
            inputs: snippets.iter().map(|s| model.features(s)).collect(),
            actions: snippets.iter().map(|s| T::lit(s.target_action())).collect(),
            factors: factors.to_vec(),
            noise: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `α1·mean(L1) + α2·L2 + α3·mean(L3)` on a batch.
pub fn loss_total<T: Scalar>(
    batch: &Batch<T>,
    model: &EncoderModel<T>,
    hyper: &Hyperparams,
) -> Result<LossBreakdown<T>> {
    loss_and_grad(batch, model, hyper, None, false)
}

/// Loss value; with `grad`, also accumulates its gradient (zeroed first).
pub(crate) fn loss_and_grad<T: Scalar>(
    batch: &Batch<T>,
    model: &EncoderModel<T>,
    hyper: &Hyperparams,
    mut grad: Option<&mut [T]>,
    drop_forget_slope: bool,
) -> Result<LossBreakdown<T>> {
    let n = batch.len();
    if batch.actions.len() != n || batch.factors.len() != n {
        return Err(Error::Shape {
            what: "batch targets",
            expected: n,
            actual: batch.actions.len().min(batch.factors.len()),
        });
    }
    let l = model.layout;
    let dim = l.latent;
    let hd = l.hidden;
    let half = T::lit(0.5);
    let (a1, a2, a3) = (T::lit(hyper.alpha1), T::lit(hyper.alpha2), T::lit(hyper.alpha3));
    let nt = T::lit(n as f64);

    let mut tapes: Vec<Tape<T>> = vec![Tape::default(); n];
    let mut mus = Vec::with_capacity(n);
    let mut lvs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let (mut l1, mut l3) = (T::zero(), T::zero());
    for b in 0..n {
        if batch.inputs[b].len() != model.context_len * l.inputs {
            return Err(Error::Shape {
                what: "batch input window",
                expected: model.context_len * l.inputs,
                actual: batch.inputs[b].len(),
            });
        }
        forward_tape(model, &batch.inputs[b], &mut tapes[b]);
        let (mu, lv) = model.heads(tapes[b].final_h(hd));
        let z: Vec<T> = match &batch.noise {
            Some(xi) => (0..dim).map(|d| mu[d] + (lv[d] * half).exp() * xi[b][d]).collect(),
            None => mu.clone(),
        };
        let r = model.decode(&z) - batch.actions[b];
        l1 += half * r * r;
        l3 += loss_kl(&mu, &lv);
        residuals.push(r);
        mus.push(mu);
        lvs.push(lv);
        zs.push(z);
    }

    let mut dz = vec![vec![T::zero(); dim]; n];
    let l2 = contrastive_with_grad(
        &zs,
        &batch.factors,
        T::lit(hyper.epsilon_contrastive),
        grad.is_some().then_some((dz.as_mut_slice(), a2)),
    )?;
    let (l1, l3) = (l1 / nt, l3 / nt);
    let out = LossBreakdown {
        l1,
        l2,
        l3,
        total: a1 * l1 + a2 * l2 + a3 * l3,
    };

    let Some(grad) = grad.as_deref_mut() else {
        return Ok(out);
    };
    grad.iter_mut().for_each(|g| *g = T::zero());
    let dec_w: Vec<T> = model.p(l.dec_w()).to_vec();
    let mu_w = model.p(l.mu_w());
    let lv_w = model.p(l.lv_w());
    let mut scratch = Scratch::default();
    let mut dh = vec![T::zero(); hd];
    for b in 0..n {
        let r = a1 * residuals[b] / nt;
        for d in 0..dim {
            dz[b][d] += r * dec_w[d];
            grad[l.dec_w().start + d] += r * zs[b][d];
        }
        grad[l.dec_b().start] += r;

        let mut dmu = vec![T::zero(); dim];
        let mut dlv = vec![T::zero(); dim];
        for d in 0..dim {
            let lv = lvs[b][d];
            dmu[d] = dz[b][d] + a3 / nt * mus[b][d];
            dlv[d] = a3 / nt * half * (lv.exp() - T::one());
            if let Some(xi) = &batch.noise {
                dlv[d] += dz[b][d] * half * (lv * half).exp() * xi[b][d];
            }
        }
        let h = tapes[b].final_h(hd);
        dh.iter_mut().for_each(|v| *v = T::zero());
        for d in 0..dim {
            let row = d * hd..(d + 1) * hd;
            for (j, &hj) in h.iter().enumerate() {
                grad[l.mu_w().start + d * hd + j] += dmu[d] * hj;
                grad[l.lv_w().start + d * hd + j] += dlv[d] * hj;
            }
            grad[l.mu_b().start + d] += dmu[d];
            grad[l.lv_b().start + d] += dlv[d];
            for ((v, &wm), &wl) in dh.iter_mut().zip(&mu_w[row.clone()]).zip(&lv_w[row]) {
                *v += wm * dmu[d] + wl * dlv[d];
            }
        }
        backward(
            model,
            &batch.inputs[b],
            &tapes[b],
            &dh,
            grad,
            &mut scratch,
            drop_forget_slope,
        );
    }
    Ok(out)
}

/// Mean loss terms over the mini-batches of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub model: EncoderModel<T>,
    pub history: Vec<EpochLoss>,
    /// Batch-normalized factor vector of each training subject.
    pub normalized_factors: BTreeMap<usize, Vec<T>>,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [T], grad: &[T], h: &Hyperparams) {
        self.t += 1;
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let (lr, eps) = (T::lit(h.lr), T::lit(h.adam_eps));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Trains a fresh encoder on `corpus`, supervised by the batch-normalized
/// factors of the subjects it contains. Deterministic in `seed`.
///
/// Feature standardization and factor normalization are computed from the
/// corpus alone. Mini-batches come from a per-epoch shuffle; a trailing
/// batch with fewer than two snippets is skipped.
pub fn train<T: Scalar>(
    corpus: &[Snippet],
    factors: &BTreeMap<usize, FactorVector>,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<TrainOutput<T>> {
    hyper.validate()?;
    let Some(first) = corpus.first() else {
        return Err(Error::InsufficientSupport("empty training corpus".into()));
    };
    if corpus.len() < 2 {
        return Err(Error::InsufficientSupport(
            "the contrastive loss needs at least 2 snippets".into(),
        ));
    }
    let context_len = first.len();
    if let Some(bad) = corpus.iter().find(|s| s.len() != context_len) {
        return Err(Error::Shape {
            what: "training snippet window",
            expected: context_len,
            actual: bad.len(),
        });
    }

    let subjects: Vec<usize> = {
        let mut s: Vec<usize> = corpus.iter().map(|s| s.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let rows = subjects
        .iter()
        .map(|id| {
            factors
                .get(id)
                .map(|f| f.to_array().iter().map(|&v| T::lit(v)).collect::<Vec<T>>())
                .ok_or_else(|| Error::Config(format!("no factor vector for subject {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized: BTreeMap<usize, Vec<T>> = subjects.iter().copied().zip(batch_normalize_factors(&rows)?).collect();

    let layout = ParamLayout {
        inputs: hyper.inputs(),
        hidden: hyper.hidden,
        latent: hyper.latent_dim,
    };
    let scaler = FeatureScaler::fit(corpus, hyper.include_action);
    let mut model = EncoderModel::init(layout, context_len, scaler, &mut rng_from(seed, &[TAG_INIT]));
    let mut history = Vec::with_capacity(hyper.epochs);
    if hyper.epochs == 0 {
        return Ok(TrainOutput {
            model,
            history,
            normalized_factors: normalized,
        });
    }

    let inputs: Vec<Vec<T>> = corpus.iter().map(|s| model.features(s)).collect();
    let actions: Vec<T> = corpus.iter().map(|s| T::lit(s.target_action())).collect();
    let targets: Vec<&Vec<T>> = corpus.iter().map(|s| &normalized[&s.subject_id]).collect();

    let mut rng: Rng = rng_from(seed, &[TAG_TRAIN]);
    let mut adam = Adam::new(layout.len());
    let mut grad = vec![T::zero(); layout.len()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for (step, idx) in order.chunks(hyper.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let noise = hyper.sample_latent.then(|| {
                idx.iter()
                    .map(|_| {
                        (0..layout.latent)
                            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                            .collect()
                    })
                    .collect()
            });
            let batch = Batch {
                inputs: idx.iter().map(|&i| inputs[i].clone()).collect(),
                actions: idx.iter().map(|&i| actions[i]).collect(),
                factors: idx.iter().map(|&i| targets[i].clone()).collect(),
                noise,
            };
            let loss = loss_and_grad(&batch, &model, hyper, Some(&mut grad), false)?;
            let parts = [loss.l1, loss.l2, loss.l3, loss.total].map(|v| v.as_f64());
            if parts.iter().any(|v| !v.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    step: step + 1,
                    l1: parts[0],
                    l2: parts[1],
                    l3: parts[2],
                    total: parts[3],
                });
            }
            adam.update(&mut model.params, &grad, hyper);
            let w = idx.len() as f64;
            for (s, v) in sums.iter_mut().zip(parts) {
                *s += w * v;
            }
            seen += idx.len();
        }
        let w = seen.max(1) as f64;
        let e = EpochLoss {
            epoch: epoch + 1,
            l1: sums[0] / w,
            l2: sums[1] / w,
            l3: sums[2] / w,
            total: sums[3] / w,
        };
        log::debug!(
            "epoch {} total {:.4} (L1 {:.4}, L2 {:.4}, L3 {:.4})",
            e.epoch,
            e.total,
            e.l1,
            e.l2,
            e.l3
        );
        history.push(e);
    }
    Ok(TrainOutput {
        model,
        history,
        normalized_factors: normalized,
    })
}
