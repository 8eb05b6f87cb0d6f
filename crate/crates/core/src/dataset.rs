//! Training corpus construction: fixed-length windows around green to yellow
//! transitions, yellow-exposure filtering, factor normalization and the
//! per-subject behavior statistics the decision model regresses on.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simulator::{HmiConfig, HmiTrigger, HmiType, LightState, StateSample, Trajectory, FACTOR_NAMES};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStep {
    pub sample: StateSample,
    pub action: f64,
}

/// A `context_len` window of one lap ending at or after a transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    pub subject_id: usize,
    pub lap_id: usize,
    pub hmi_condition: HmiConfig,
    pub window: Vec<WindowStep>,
    /// Action applied just before the window starts (0 at lap start).
    pub lead_action: f64,
    /// Index of the green to yellow transition in the source trajectory.
    pub transition_index: usize,
    /// Index of the last window sample in the source trajectory.
    pub end_index: usize,
    /// Seconds of yellow light seen before the entry line, inside the window.
    pub yellow_exposure: f64,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Action at the last window step, the reconstruction target.
    pub fn target_action(&self) -> f64 {
        self.window.last().map_or(0.0, |w| w.action)
    }
}

/// Window placement: for each transition `k`, windows end at
/// `k, k + hop, ...` while below `k + span`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnippetConfig {
    pub hop: usize,
    /// Samples after the transition in which windows may end; `None` means the context length.
    pub span: Option<usize>,
    pub min_exposure: f64,
}

impl SnippetConfig {
    /// Encoder corpus placement: hop 1, span = context length, no filter.
    pub fn encoder_default() -> Self {
        Self {
            hop: 1,
            span: None,
            min_exposure: 0.0,
        }
    }

    /// Decision corpus placement: windows ending 0, 5 and 10 samples after
    /// the onset, kept when at least 1 s of yellow was seen.
    pub fn decision_default() -> Self {
        Self {
            hop: 5,
            span: Some(15),
            min_exposure: 1.0,
        }
    }

    pub fn build(&self, trajectories: &[Trajectory], context_len: usize) -> Result<Vec<Snippet>> {
        let span = self.span.unwrap_or(context_len);
        let mut out = Vec::new();
        for traj in trajectories {
            let snippets = extract_snippets(traj, context_len, self.hop, span)?;
            out.extend(filter_min_exposure(snippets, self.min_exposure)?);
        }
        Ok(out)
    }
}

fn yellow_exposure(window: &[WindowStep], sample_rate: f64) -> f64 {
    let n = window
        .iter()
        .filter(|w| w.sample.light_state == LightState::Yellow && w.sample.dist_entry > 0.0)
        .count();
    n as f64 / sample_rate
}

/// Windows of `context_len` samples whose last index runs over
/// `[k, k + span)` in steps of `hop`, for every transition `k`. Windows
/// that would leave the trajectory are dropped.
pub fn extract_snippets(traj: &Trajectory, context_len: usize, hop: usize, span: usize) -> Result<Vec<Snippet>> {
    if context_len == 0 || hop == 0 {
        return Err(Error::Config("context_len and hop must be >= 1".into()));
    }
    let n = traj.len();
    if n < context_len {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for k in traj.transitions() {
        for end in (k..k + span).step_by(hop) {
            if end >= n || end + 1 < context_len {
                continue;
            }
            let start = end + 1 - context_len;
            let window: Vec<WindowStep> = (start..=end)
                .map(|i| WindowStep {
                    sample: traj.samples[i],
                    action: traj.actions[i],
                })
                .collect();
            out.push(Snippet {
                subject_id: traj.subject_id,
                lap_id: traj.lap_id,
                hmi_condition: traj.hmi_condition,
                yellow_exposure: yellow_exposure(&window, traj.sample_rate),
                window,
                lead_action: if start > 0 { traj.actions[start - 1] } else { 0.0 },
                transition_index: k,
                end_index: end,
            });
        }
    }
    Ok(out)
}

/// Keeps snippets with `yellow_exposure >= min_exposure` (inclusive).
pub fn filter_min_exposure(snippets: Vec<Snippet>, min_exposure: f64) -> Result<Vec<Snippet>> {
    if !(min_exposure >= 0.0) {
        return Err(Error::Config(format!("min_exposure must be >= 0, got {min_exposure}")));
    }
    // exposures are sample counts over the rate; compare with a hair of slack
    Ok(snippets
        .into_iter()
        .filter(|s| s.yellow_exposure + 1e-9 >= min_exposure)
        .collect())
}

/// Column-wise z-scoring with the population standard deviation.
pub fn batch_normalize_factors<T: Scalar>(rows: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let cols = first.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Shape {
            what: "factor matrix row",
            expected: cols,
            actual: bad.len(),
        });
    }
    let n = T::lit(rows.len() as f64);
    let mut out = rows.to_vec();
    for c in 0..cols {
        let mean = rows.iter().map(|r| r[c]).sum::<T>() / n;
        let var = rows.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<T>() / n;
        let distinct = rows.iter().any(|r| r[c] != rows[0][c]);
        if !distinct || !(var > T::zero()) {
            let column = if cols == FACTOR_NAMES.len() {
                FACTOR_NAMES[c].to_string()
            } else {
                format!("column {c}")
            };
            return Err(Error::ZeroVariance { column });
        }
        let sd = var.sqrt();
        for r in out.iter_mut() {
            r[c] = (r[c] - mean) / sd;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub mean_speed_yellow: f64,
    pub max_speed_yellow: f64,
    pub min_speed_yellow: f64,
    pub std_speed_yellow: f64,
}

impl BehaviorStats {
    pub const FIELDS: [&'static str; 4] = [
        "mean_speed_yellow",
        "max_speed_yellow",
        "min_speed_yellow",
        "std_speed_yellow",
    ];

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.mean_speed_yellow,
            self.max_speed_yellow,
            self.min_speed_yellow,
            self.std_speed_yellow,
        ]
    }
}

/// Speed statistics over samples where the upcoming light is yellow.
pub fn yellow_speed_stats(traj: &Trajectory) -> Result<BehaviorStats> {
    let speeds: Vec<f64> = traj
        .samples
        .iter()
        .filter(|s| s.light_state == LightState::Yellow)
        .map(|s| s.speed)
        .collect();
    if speeds.is_empty() {
        return Err(Error::EmptySupport {
            subject_id: traj.subject_id,
            lap_id: traj.lap_id,
        });
    }
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(BehaviorStats {
        mean_speed_yellow: mean,
        max_speed_yellow: speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_speed_yellow: speeds.iter().copied().fold(f64::INFINITY, f64::min),
        std_speed_yellow: var.sqrt(),
    })
}

/// Per-subject stats: each field averaged over the subject's laps.
pub fn subject_behavior(dataset: &[Trajectory]) -> Result<BTreeMap<usize, BehaviorStats>> {
    let mut per: BTreeMap<usize, Vec<BehaviorStats>> = BTreeMap::new();
    for traj in dataset {
        per.entry(traj.subject_id).or_default().push(yellow_speed_stats(traj)?);
    }
    Ok(per
        .into_iter()
        .map(|(id, laps)| {
            let n = laps.len() as f64;
            let avg = |f: fn(&BehaviorStats) -> f64| laps.iter().map(f).sum::<f64>() / n;
            (
                id,
                BehaviorStats {
                    mean_speed_yellow: avg(|s| s.mean_speed_yellow),
                    max_speed_yellow: avg(|s| s.max_speed_yellow),
                    min_speed_yellow: avg(|s| s.min_speed_yellow),
                    std_speed_yellow: avg(|s| s.std_speed_yellow),
                },
            )
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTarget {
    pub subject_id: usize,
    /// Mean yellow-light speed without HMI minus with HMI; positive when the HMI slows the driver.
    pub delta_speed: f64,
}

impl DecisionTarget {
    /// Ground-truth deploy label; a tie does not deploy.
    pub fn deploy(&self) -> bool {
        self.delta_speed > 0.0
    }
}

/// Mean over a subject's laps in one condition of the lap mean yellow speed.
pub fn condition_mean_speed(dataset: &[Trajectory], subject_id: usize, with_hmi: bool) -> Result<Option<f64>> {
    let mut means = Vec::new();
    for traj in dataset
        .iter()
        .filter(|t| t.subject_id == subject_id && t.hmi_condition.is_hmi() == with_hmi)
    {
        means.push(yellow_speed_stats(traj)?.mean_speed_yellow);
    }
    Ok(if means.is_empty() {
        None
    } else {
        Some(means.iter().sum::<f64>() / means.len() as f64)
    })
}

/// One target per subject, ordered by subject id.
pub fn decision_targets(dataset: &[Trajectory]) -> Result<Vec<DecisionTarget>> {
    let subjects: std::collections::BTreeSet<usize> = dataset.iter().map(|t| t.subject_id).collect();
    subjects
        .into_iter()
        .map(|id| {
            let base = condition_mean_speed(dataset, id, false)?.ok_or(Error::Coverage {
                subject_id: id,
                missing: "non-HMI",
            })?;
            let hmi = condition_mean_speed(dataset, id, true)?.ok_or(Error::Coverage {
                subject_id: id,
                missing: "HMI",
            })?;
            Ok(DecisionTarget {
                subject_id: id,
                delta_speed: base - hmi,
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub context_len: usize,
    pub hop: usize,
    pub span: usize,
    pub min_exposure: f64,
    pub n_snippets: usize,
    pub source_sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnippetRecord {
    subject_id: usize,
    lap_id: usize,
    hmi_type: HmiType,
    trigger: HmiTrigger,
    transition_index: usize,
    end_index: usize,
    yellow_exposure: f64,
    lead_action: f64,
    t: Vec<f64>,
    speed_mps: Vec<f64>,
    dist_entry_m: Vec<f64>,
    dist_exit_m: Vec<f64>,
    light_state: Vec<u8>,
    hmi_active: Vec<u8>,
    accel_mps2: Vec<f64>,
}

/// Writes a snippet corpus as JSON-Lines, one snippet per line.
pub fn write_snippets<W: Write>(mut out: W, snippets: &[Snippet]) -> Result<()> {
    for s in snippets {
        let col = |f: fn(&WindowStep) -> f64| s.window.iter().map(f).collect::<Vec<f64>>();
        let rec = SnippetRecord {
            subject_id: s.subject_id,
            lap_id: s.lap_id,
            hmi_type: s.hmi_condition.hmi_type,
            trigger: s.hmi_condition.trigger,
            transition_index: s.transition_index,
            end_index: s.end_index,
            yellow_exposure: s.yellow_exposure,
            lead_action: s.lead_action,
            t: col(|w| w.sample.t),
            speed_mps: col(|w| w.sample.speed),
            dist_entry_m: col(|w| w.sample.dist_entry),
            dist_exit_m: col(|w| w.sample.dist_exit),
            light_state: s.window.iter().map(|w| w.sample.light_state as u8).collect(),
            hmi_active: s.window.iter().map(|w| w.sample.hmi_active as u8).collect(),
            accel_mps2: col(|w| w.action),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_snippets<R: BufRead>(input: R) -> Result<Vec<Snippet>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SnippetRecord = serde_json::from_str(&line)?;
        let n = r.t.len();
        for len in [
            r.speed_mps.len(),
            r.dist_entry_m.len(),
            r.dist_exit_m.len(),
            r.light_state.len(),
            r.hmi_active.len(),
            r.accel_mps2.len(),
        ] {
            if len != n {
                return Err(Error::Shape {
                    what: "snippet record column",
                    expected: n,
                    actual: len,
                });
            }
        }
        let window = (0..n)
            .map(|i| {
                Ok(WindowStep {
                    sample: StateSample {
                        t: r.t[i],
                        speed: r.speed_mps[i],
                        dist_entry: r.dist_entry_m[i],
                        dist_exit: r.dist_exit_m[i],
                        light_state: LightState::from_code(r.light_state[i])
                            .ok_or_else(|| Error::Config(format!("invalid light_state {}", r.light_state[i])))?,
                        hmi_active: r.hmi_active[i] != 0,
                    },
                    action: r.accel_mps2[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Snippet {
            subject_id: r.subject_id,
            lap_id: r.lap_id,
            hmi_condition: HmiConfig::new(r.hmi_type, r.trigger),
            window,
            lead_action: r.lead_action,
            transition_index: r.transition_index,
            end_index: r.end_index,
            yellow_exposure: r.yellow_exposure,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Synthetic lap of `n` samples with yellow on `[k, k + yellow_len)`.
    fn lap_with_transition(n: usize, k: Option<usize>, yellow_len: usize) -> Trajectory {
        let samples = (0..n)
            .map(|i| {
                let yellow = k.is_some_and(|k| i >= k && i < k + yellow_len);
                StateSample {
                    t: i as f64 / 5.0,
                    speed: 10.0,
                    dist_entry: 50.0,
                    dist_exit: 65.0,
                    light_state: if yellow { LightState::Yellow } else { LightState::Green },
                    hmi_active: false,
                }
            })
            .collect();
        Trajectory {
            subject_id: 0,
            lap_id: 0,
            hmi_condition: HmiConfig::BASELINE,
            sample_rate: 5.0,
            samples,
            actions: vec![0.0; n],
        }
    }

    #[test]
    fn no_transitions_no_snippets() {
        let traj = lap_with_transition(600, None, 0);
        assert!(extract_snippets(&traj, 30, 1, 30).unwrap().is_empty());
    }

    #[test]
    fn hop_one_enumerates_every_end_index() {
        let traj = lap_with_transition(600, Some(100), 20);
        let snippets = extract_snippets(&traj, 30, 1, 30).unwrap();
        assert_eq!(snippets.len(), 30);
        let ends: Vec<usize> = snippets.iter().map(|s| s.end_index).collect();
        assert_eq!(ends, (100..130).collect::<Vec<_>>());
        assert!(snippets.iter().all(|s| s.len() == 30 && s.transition_index == 100));
        // contiguous on the grid
        for s in &snippets {
            for w in s.window.windows(2) {
                assert!((w[1].sample.t - w[0].sample.t - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hop_equal_to_span_gives_one_snippet() {
        let traj = lap_with_transition(600, Some(100), 20);
        assert_eq!(extract_snippets(&traj, 30, 30, 30).unwrap().len(), 1);
    }

    #[test]
    fn boundary_windows_are_dropped() {
        let traj = lap_with_transition(120, Some(10), 20);
        // ends 10..40 but only those with a full history (end >= 29)
        assert_eq!(extract_snippets(&traj, 30, 1, 30).unwrap().len(), 11);
        let short = lap_with_transition(20, Some(10), 5);
        assert!(extract_snippets(&short, 30, 1, 30).unwrap().is_empty());
        assert!(extract_snippets(&traj, 0, 1, 30).is_err());
    }

    #[test]
    fn exposure_filter_boundary() {
        let four = lap_with_transition(200, Some(100), 4);
        let five = lap_with_transition(200, Some(100), 5);
        // windows ending at the transition see one yellow sample; take the one ending 4 later
        let end_at = |t: &Trajectory| -> Vec<Snippet> {
            extract_snippets(t, 30, 1, 10)
                .unwrap()
                .into_iter()
                .filter(|s| s.end_index == 104)
                .collect()
        };
        let (s4, s5) = (end_at(&four), end_at(&five));
        assert!((s4[0].yellow_exposure - 0.8).abs() < 1e-12);
        assert!((s5[0].yellow_exposure - 1.0).abs() < 1e-12);
        assert!(filter_min_exposure(s4.clone(), 1.0).unwrap().is_empty());
        assert_eq!(filter_min_exposure(s5.clone(), 1.0).unwrap().len(), 1);
        assert_eq!(filter_min_exposure(s4.clone(), 0.0).unwrap(), s4);
    }

    #[test]
    fn normalization_examples() {
        let out = batch_normalize_factors(&[vec![1.0_f64], vec![3.0]]).unwrap();
        assert_eq!(out, vec![vec![-1.0], vec![1.0]]);
        let again = batch_normalize_factors(&out).unwrap();
        for (a, b) in again.iter().zip(&out) {
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
        let err = batch_normalize_factors(&[vec![1.0, 2.0, 5.0, 5.0], vec![2.0, 2.0, 6.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance { ref column } if column == "fun_seeking"));
    }

    #[test]
    fn yellow_stats_examples() {
        let mut traj = lap_with_transition(10, Some(3), 2);
        traj.samples[3].speed = 10.0;
        traj.samples[4].speed = 20.0;
        let s = yellow_speed_stats(&traj).unwrap();
        assert_eq!(
            (s.mean_speed_yellow, s.max_speed_yellow, s.min_speed_yellow),
            (15.0, 20.0, 10.0)
        );
        assert!(yellow_speed_stats(&lap_with_transition(10, None, 0)).is_err());
        let constant = yellow_speed_stats(&lap_with_transition(10, Some(2), 5)).unwrap();
        assert_eq!(constant.std_speed_yellow, 0.0);
        assert_eq!(constant.mean_speed_yellow, 10.0);
        assert_eq!(constant.max_speed_yellow, constant.min_speed_yellow);
    }

    fn lap_at_speed(subject: usize, lap: usize, hmi: bool, speed: f64) -> Trajectory {
        let mut t = lap_with_transition(20, Some(5), 5);
        t.subject_id = subject;
        t.lap_id = lap;
        if hmi {
            t.hmi_condition = HmiConfig::new(HmiType::YellowCircle, HmiTrigger::LightChange);
        }
        t.samples.iter_mut().for_each(|s| s.speed = speed);
        t
    }

    #[test]
    fn decision_target_sign_and_tie() {
        let data = vec![
            lap_at_speed(0, 0, false, 17.0),
            lap_at_speed(0, 1, true, 15.0),
            lap_at_speed(1, 0, false, 12.0),
            lap_at_speed(1, 1, true, 12.0),
        ];
        let targets = decision_targets(&data).unwrap();
        assert_eq!(targets[0].delta_speed, 2.0);
        assert!(targets[0].deploy());
        assert_eq!(targets[1].delta_speed, 0.0);
        assert!(!targets[1].deploy());
        let only_hmi = vec![lap_at_speed(4, 0, true, 10.0)];
        assert!(matches!(
            decision_targets(&only_hmi),
            Err(Error::Coverage {
                subject_id: 4,
                missing: "non-HMI"
            })
        ));
    }

    #[test]
    fn snippet_corpus_round_trip() {
        let traj = lap_with_transition(200, Some(100), 20);
        let snippets = extract_snippets(&traj, 30, 7, 30).unwrap();
        let mut buf = Vec::new();
        write_snippets(&mut buf, &snippets).unwrap();
        assert_eq!(read_snippets(buf.as_slice()).unwrap(), snippets);
    }
}
