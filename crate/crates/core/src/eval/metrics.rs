//! Decision and embedding metrics.

use std::collections::BTreeMap;

use crate::dataset::{subject_behavior, BehaviorStats};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simulator::median;
use crate::simulator::{FactorVector, Trajectory, FACTOR_NAMES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Shape {
                what: "predicted vs actual labels",
                expected: actual.len(),
                actual: predicted.len(),
            });
        }
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `(p_o − p_e) / (1 − p_e)`; 0 when chance agreement is total.
pub fn cohens_kappa(predicted: &[bool], actual: &[bool]) -> Result<f64> {
    let c = Confusion::from_pairs(predicted, actual)?;
    let n = c.total() as f64;
    if n == 0.0 {
        return Err(Error::InsufficientSupport("kappa of zero labels".into()));
    }
    let po = (c.tp + c.tn) as f64 / n;
    let pred_pos = (c.tp + c.fp) as f64 / n;
    let act_pos = (c.tp + c.fn_) as f64 / n;
    let pe = pred_pos * act_pos + (1.0 - pred_pos) * (1.0 - act_pos);
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Mean of true-positive and true-negative rates.
pub fn balanced_accuracy(predicted: &[bool], actual: &[bool]) -> Result<f64> {
    let c = Confusion::from_pairs(predicted, actual)?;
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedClass(format!(
            "balanced accuracy needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    Ok(0.5 * (c.tp as f64 / pos as f64 + c.tn as f64 / neg as f64))
}

/// Variance floor of the per-group diagonal Gaussians.
pub const KL_VARIANCE_FLOOR: f64 = 1e-6;

struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    fn fit(points: &[&[f64]]) -> Self {
        let n = points.len() as f64;
        let d = points[0].len();
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, &v) in mean.iter_mut().zip(p.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for p in points {
            for k in 0..d {
                var[k] += (p[k] - mean[k]).powi(2) / n;
            }
        }
        var.iter_mut().for_each(|v| *v = v.max(KL_VARIANCE_FLOOR));
        Self { mean, var }
    }

    fn kl_to(&self, q: &DiagGaussian) -> f64 {
        0.5 * (0..self.mean.len())
            .map(|k| {
                self.var[k] / q.var[k] + (q.mean[k] - self.mean[k]).powi(2) / q.var[k] - 1.0
                    + (q.var[k] / self.var[k]).ln()
            })
            .sum::<f64>()
    }
}

/// Symmetric KL between diagonal Gaussians fitted to the latents of the
/// subjects at or below, and above, the factor median; divided by the
/// symmetric KL of `N(0, I)` and `N(e1, I)`, which is 1.
///
/// `latents` pairs a subject id with one latent point.
pub fn normalized_kl<T: Scalar>(latents: &[(usize, Vec<T>)], factor_values: &BTreeMap<usize, f64>) -> Result<f64> {
    let mut present: Vec<(usize, f64)> = Vec::new();
    for &(id, _) in latents {
        if !present.iter().any(|(p, _)| *p == id) {
            let v = *factor_values
                .get(&id)
                .ok_or_else(|| Error::Config(format!("no factor value for subject {id}")))?;
            present.push((id, v));
        }
    }
    let mut values: Vec<f64> = present.iter().map(|p| p.1).collect();
    let med = median(&mut values);
    let low: Vec<usize> = present.iter().filter(|p| p.1 <= med).map(|p| p.0).collect();
    let high: Vec<usize> = present.iter().filter(|p| p.1 > med).map(|p| p.0).collect();
    if low.len() < 2 || high.len() < 2 {
        return Err(Error::InsufficientSupport(format!(
            "median split has {} low and {} high subjects",
            low.len(),
            high.len()
        )));
    }
    let pts: Vec<(usize, Vec<f64>)> = latents
        .iter()
        .map(|(id, z)| (*id, z.iter().map(|v| v.as_f64()).collect()))
        .collect();
    let group = |ids: &[usize]| -> Vec<&[f64]> {
        pts.iter()
            .filter(|(id, _)| ids.contains(id))
            .map(|(_, z)| z.as_slice())
            .collect()
    };
    let (gl, gh) = (group(&low), group(&high));
    if gl.len() < 2 || gh.len() < 2 {
        return Err(Error::InsufficientSupport(
            "fewer than 2 latent points in a group".into(),
        ));
    }
    let (p, q) = (DiagGaussian::fit(&gl), DiagGaussian::fit(&gh));
    Ok(p.kl_to(&q) + q.kl_to(&p))
}

/// Pearson correlation; `None` when either column has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            what: "pearson columns",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSupport("pearson needs at least 2 pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrelationEntry {
    pub factor: String,
    pub stat: String,
    /// `None` when a column has zero variance.
    pub r: Option<f64>,
    pub note: Option<String>,
}

/// Pearson r between every factor and every per-subject yellow-light
/// behavior statistic (averaged over all laps).
pub fn correlation_report(
    dataset: &[Trajectory],
    factors: &BTreeMap<usize, FactorVector>,
) -> Result<Vec<CorrelationEntry>> {
    let behavior: BTreeMap<usize, BehaviorStats> = subject_behavior(dataset)?;
    if behavior.len() < 3 {
        return Err(Error::InsufficientSupport(format!(
            "correlation report needs at least 3 subjects, got {}",
            behavior.len()
        )));
    }
    let mut fac_cols = vec![Vec::new(); 4];
    let mut stat_cols = vec![Vec::new(); 4];
    for (id, stats) in &behavior {
        let f = factors
            .get(id)
            .ok_or_else(|| Error::Config(format!("no factor vector for subject {id}")))?
            .to_array();
        let s = stats.to_array();
        for k in 0..4 {
            fac_cols[k].push(f[k]);
            stat_cols[k].push(s[k]);
        }
    }
    let mut out = Vec::new();
    for (fi, fname) in FACTOR_NAMES.iter().enumerate() {
        for (si, sname) in BehaviorStats::FIELDS.iter().enumerate() {
            let r = pearson(&fac_cols[fi], &stat_cols[si])?;
            out.push(CorrelationEntry {
                factor: fname.to_string(),
                stat: sname.to_string(),
                r,
                note: r.is_none().then(|| "zero variance column, skipped".to_string()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<bool>, Vec<bool>) {
        let mut p = Vec::new();
        let mut a = Vec::new();
        for (n, pv, av) in [
            (tp, true, true),
            (fp, true, false),
            (fn_, false, true),
            (tn, false, false),
        ] {
            p.extend(std::iter::repeat_n(pv, n));
            a.extend(std::iter::repeat_n(av, n));
        }
        (p, a)
    }

    #[test]
    fn kappa_examples() {
        let a = vec![true, false, true, false];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&[true; 4], &a).unwrap(), 0.0);
        let (p, a) = labels(4, 1, 1, 4);
        assert!((cohens_kappa(&p, &a).unwrap() - 0.6).abs() < 1e-12);
        // one class everywhere: p_e = 1
        assert_eq!(cohens_kappa(&[true, true], &[true, true]).unwrap(), 0.0);
    }

    #[test]
    fn balanced_accuracy_examples() {
        let a = vec![true, false, true, false];
        assert_eq!(balanced_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[true; 4], &a).unwrap(), 0.5);
        let (p, a) = labels(4, 3, 1, 2);
        assert!((balanced_accuracy(&p, &a).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(
            balanced_accuracy(&[true, false], &[true, true]),
            Err(Error::UndefinedClass(_))
        ));
    }

    #[test]
    fn kl_identical_groups_is_zero() {
        let latents: Vec<(usize, Vec<f64>)> = (0..8).map(|i| (i, vec![(i % 2) as f64, 0.5])).collect();
        // subjects 0..4 low, 4..8 high; both groups hold the same two points
        let f: BTreeMap<usize, f64> = (0..8).map(|i| (i, i as f64)).collect();
        assert!(normalized_kl(&latents, &f).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_needs_two_subjects_per_side() {
        let latents: Vec<(usize, Vec<f64>)> = (0..3).map(|i| (i, vec![i as f64])).collect();
        let f: BTreeMap<usize, f64> = (0..3).map(|i| (i, i as f64)).collect();
        assert!(matches!(
            normalized_kl(&latents, &f),
            Err(Error::InsufficientSupport(_))
        ));
    }

    #[test]
    fn pearson_identity_and_zero_variance() {
        let x = [1.0, 2.0, 4.0, 8.0];
        assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[3.0; 4]).unwrap(), None);
    }
}
