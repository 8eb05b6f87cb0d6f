//! Sequential inference: whole laps streamed through the recurrent encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{extract_snippets, filter_min_exposure, SnippetConfig};
use crate::decision::{DecisionModel, HmiDecision};
use crate::encoder::{windowed_average_latent, EncoderModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simulator::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionScore {
    pub lap_id: usize,
    /// Sample index of the green to yellow change.
    pub index: usize,
    /// Mean score over the placement's decision points for this transition.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamOutcome {
    pub subject_id: usize,
    pub transitions: Vec<TransitionScore>,
    /// Mean transition score, thresholded at zero.
    pub decision: HmiDecision,
}

impl StreamOutcome {
    /// Transitions whose own decision matches `batch_deploy`.
    pub fn agreements(&self, batch_deploy: bool) -> usize {
        self.transitions
            .iter()
            .filter(|t| (t.score > 0.0) == batch_deploy)
            .count()
    }
}

/// Streams every lap of one subject with the recurrent state carried across
/// the lap and smooths the per-step latents with a trailing moving average
/// of `window_seconds`.
///
/// Each green to yellow transition is scored at the same decision points the
/// snippet pipeline uses: the window ends chosen by `placement` for
/// `context_len`, after its exposure filter. The streamed and snippet modes
/// then differ only in the state the encoder starts from. Transitions with no
/// admissible decision point are skipped.
pub fn stream_subject<T: Scalar>(
    laps: &[&Trajectory],
    model: &EncoderModel<T>,
    svr: &DecisionModel<T>,
    window_seconds: f64,
    placement: &SnippetConfig,
    context_len: usize,
) -> Result<StreamOutcome> {
    let subject_id = laps
        .first()
        .map(|t| t.subject_id)
        .ok_or_else(|| Error::InsufficientSupport("no laps to stream".into()))?;
    let span = placement.span.unwrap_or(context_len);
    let mut transitions = Vec::new();
    for traj in laps {
        if traj.subject_id != subject_id {
            return Err(Error::Config("stream_subject given laps of several subjects".into()));
        }
        let points = filter_min_exposure(
            extract_snippets(traj, context_len, placement.hop, span)?,
            placement.min_exposure,
        )?;
        if points.is_empty() {
            continue;
        }
        let series = model.stream(traj);
        let mut by_transition: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for p in &points {
            let z = windowed_average_latent(&series[..=p.end_index], window_seconds, traj.sample_rate)?;
            by_transition
                .entry(p.transition_index)
                .or_default()
                .push(svr.predict(&z).as_f64());
        }
        for (index, scores) in by_transition {
            transitions.push(TransitionScore {
                lap_id: traj.lap_id,
                index,
                score: scores.iter().sum::<f64>() / scores.len() as f64,
            });
        }
    }
    if transitions.is_empty() {
        return Err(Error::InsufficientSupport(format!(
            "subject {subject_id} has no transitions to stream"
        )));
    }
    let score = transitions.iter().map(|t| t.score).sum::<f64>() / transitions.len() as f64;
    Ok(StreamOutcome {
        subject_id,
        transitions,
        decision: HmiDecision::from_score(subject_id, score),
    })
}

/// Streams every subject of `dataset` through one model.
pub fn sequential_stream_eval<T: Scalar>(
    dataset: &[Trajectory],
    model: &EncoderModel<T>,
    svr: &DecisionModel<T>,
    window_seconds: f64,
    placement: &SnippetConfig,
    context_len: usize,
) -> Result<BTreeMap<usize, StreamOutcome>> {
    let mut by_subject: BTreeMap<usize, Vec<&Trajectory>> = BTreeMap::new();
    for t in dataset {
        by_subject.entry(t.subject_id).or_default().push(t);
    }
    by_subject
        .into_iter()
        .map(|(id, laps)| {
            Ok((
                id,
                stream_subject(&laps, model, svr, window_seconds, placement, context_len)?,
            ))
        })
        .collect()
}
