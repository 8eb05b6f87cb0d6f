//! Leave-one-subject-out evaluation: per-fold training and decisions, the
//! embedding and decision metrics, and multi-seed aggregation.

mod metrics;
mod policy;
pub mod report;
mod stream;

pub use metrics::{
    balanced_accuracy, cohens_kappa, correlation_report, normalized_kl, pearson, Confusion, CorrelationEntry,
    KL_VARIANCE_FLOOR,
};
pub use policy::{baseline_rules, policy_speed, Decisions, Rule, SpeedSummary};
pub use stream::{sequential_stream_eval, stream_subject, StreamOutcome, TransitionScore};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{decision_targets, Snippet, SnippetConfig};
use crate::decision::{DecisionModel, HmiDecision, SvrParams};
use crate::encoder::{train, windowed_average_latent, EncoderModel, EpochLoss, Hyperparams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, TAG_RANDOM_RULE, TAG_TRAIN};
use crate::scalar::Scalar;
use crate::simulator::{Factor, FactorVector, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    /// One full LOOCV pass per entry.
    pub seeds: Vec<u64>,
    /// Moving-average length of the windowed-average mode, seconds.
    pub window_seconds: f64,
    pub encoder_snippets: SnippetConfig,
    pub decision_snippets: SnippetConfig,
    pub svr: SvrParams,
    pub streaming: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            window_seconds: 6.0,
            encoder_snippets: SnippetConfig::encoder_default(),
            decision_snippets: SnippetConfig::decision_default(),
            svr: SvrParams::default(),
            streaming: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamFold {
    pub decision: HmiDecision,
    pub transitions: usize,
    /// Transitions whose streaming decision equals the batch windowed-average decision.
    pub agreements: usize,
}

/// Outcome of one (held-out subject, seed) fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out_subject: usize,
    pub seed: u64,
    /// Factor name to normalized KL over the training subjects' decision latents.
    pub normalized_kl: BTreeMap<String, f64>,
    pub windowed_average: HmiDecision,
    pub instantaneous: HmiDecision,
    /// Ground-truth label of the held-out subject.
    pub label: bool,
    pub delta_speed: f64,
    pub stream: Option<StreamFold>,
    pub n_train_snippets: usize,
    pub n_decision_snippets: usize,
    pub history: Vec<EpochLoss>,
    pub decision_model: DecisionModel<f64>,
}

/// Windowed-average and last-step latents of a decision snippet.
fn decision_latents<T: Scalar>(
    model: &EncoderModel<T>,
    s: &Snippet,
    window_seconds: f64,
    sample_rate: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    let series = model.latent_series(s)?;
    let wa = windowed_average_latent(&series, window_seconds, sample_rate)?;
    let inst = series.last().cloned().ok_or(Error::EmptySeries)?;
    Ok((wa, inst))
}

fn mean_score<T: Scalar>(svr: &DecisionModel<T>, latents: &[Vec<T>]) -> f64 {
    latents.iter().map(|z| svr.predict(z).as_f64()).sum::<f64>() / latents.len() as f64
}

/// Runs one fold. Only the held-out subject's trajectories are excluded
/// from everything that is fitted: encoder corpus, feature scaling,
/// factor normalization, SVR points and targets.
pub fn run_fold<T: Scalar>(
    dataset: &[Trajectory],
    factors: &BTreeMap<usize, FactorVector>,
    hyper: &Hyperparams,
    params: &EvalParams,
    base_seed: u64,
    held_out: usize,
    seed: u64,
) -> Result<FoldResult> {
    let sample_rate = dataset
        .first()
        .map(|t| t.sample_rate)
        .ok_or_else(|| Error::InsufficientSupport("empty dataset".into()))?;
    let context_len = (hyper.context_seconds * sample_rate).round() as usize;
    let train_trajs: Vec<Trajectory> = dataset.iter().filter(|t| t.subject_id != held_out).cloned().collect();
    let test_trajs: Vec<Trajectory> = dataset.iter().filter(|t| t.subject_id == held_out).cloned().collect();
    if test_trajs.is_empty() {
        return Err(Error::InsufficientSupport(format!(
            "no laps for held-out subject {held_out}"
        )));
    }
    let train_factors: BTreeMap<usize, FactorVector> = factors
        .iter()
        .filter(|(id, _)| **id != held_out)
        .map(|(k, v)| (*k, *v))
        .collect();

    let corpus = params.encoder_snippets.build(&train_trajs, context_len)?;
    let trained = train::<T>(
        &corpus,
        &train_factors,
        hyper,
        derive_seed(base_seed, &[TAG_TRAIN, seed, held_out as u64]),
    )?;
    let model = &trained.model;

    let targets: BTreeMap<usize, f64> = decision_targets(&train_trajs)?
        .into_iter()
        .map(|t| (t.subject_id, t.delta_speed))
        .collect();
    let dec_train = params.decision_snippets.build(&train_trajs, context_len)?;
    let mut wa_train = Vec::with_capacity(dec_train.len());
    let mut inst_train = Vec::with_capacity(dec_train.len());
    let mut y = Vec::with_capacity(dec_train.len());
    for s in &dec_train {
        let (wa, inst) = decision_latents(model, s, params.window_seconds, sample_rate)?;
        wa_train.push(wa);
        inst_train.push(inst);
        y.push(T::lit(targets[&s.subject_id]));
    }
    let svr_wa = DecisionModel::fit(&wa_train, &y, &params.svr)?;
    let svr_inst = DecisionModel::fit(&inst_train, &y, &params.svr)?;

    let subject_latents: Vec<(usize, Vec<T>)> = dec_train.iter().map(|s| s.subject_id).zip(inst_train).collect();
    let mut normalized_kl = BTreeMap::new();
    for f in Factor::ALL {
        let values: BTreeMap<usize, f64> = train_factors.iter().map(|(id, v)| (*id, v.get(f))).collect();
        normalized_kl.insert(f.name().to_string(), metrics::normalized_kl(&subject_latents, &values)?);
    }

    let dec_test = params.decision_snippets.build(&test_trajs, context_len)?;
    if dec_test.is_empty() {
        return Err(Error::InsufficientSupport(format!(
            "held-out subject {held_out} has no decision snippets"
        )));
    }
    let mut wa_test = Vec::with_capacity(dec_test.len());
    let mut inst_test = Vec::with_capacity(dec_test.len());
    for s in &dec_test {
        let (wa, inst) = decision_latents(model, s, params.window_seconds, sample_rate)?;
        wa_test.push(wa);
        inst_test.push(inst);
    }
    let windowed_average = HmiDecision::from_score(held_out, mean_score(&svr_wa, &wa_test));
    let instantaneous = HmiDecision::from_score(held_out, mean_score(&svr_inst, &inst_test));
    let target = decision_targets(&test_trajs)?[0];

    let stream = if params.streaming {
        let laps: Vec<&Trajectory> = test_trajs.iter().collect();
        let out = stream_subject(
            &laps,
            model,
            &svr_wa,
            params.window_seconds,
            &params.decision_snippets,
            context_len,
        )?;
        Some(StreamFold {
            decision: out.decision,
            transitions: out.transitions.len(),
            agreements: out.agreements(windowed_average.deploy),
        })
    } else {
        None
    };

    Ok(FoldResult {
        held_out_subject: held_out,
        seed,
        normalized_kl,
        windowed_average,
        instantaneous,
        label: target.deploy(),
        delta_speed: target.delta_speed,
        stream,
        n_train_snippets: corpus.len(),
        n_decision_snippets: dec_train.len(),
        history: trained.history,
        decision_model: svr_wa.cast(),
    })
}

/// Every (seed, held-out subject) fold, each result tagged with its fold
/// index on failure. Results are in (seed, subject) order for any `jobs`.
pub fn loocv_partial<T: Scalar>(
    dataset: &[Trajectory],
    factors: &BTreeMap<usize, FactorVector>,
    hyper: &Hyperparams,
    params: &EvalParams,
    base_seed: u64,
    jobs: Option<usize>,
) -> Result<Vec<Result<FoldResult>>> {
    let subjects: BTreeSet<usize> = dataset.iter().map(|t| t.subject_id).collect();
    if subjects.len() < 3 {
        return Err(Error::InsufficientSupport(format!(
            "cross-validation needs at least 3 subjects, got {}",
            subjects.len()
        )));
    }
    if params.seeds.is_empty() {
        return Err(Error::Config("at least one evaluation seed required".into()));
    }
    decision_targets(dataset)?;
    let work: Vec<(usize, u64, usize)> = params
        .seeds
        .iter()
        .flat_map(|&seed| subjects.iter().map(move |&s| (seed, s)))
        .enumerate()
        .map(|(fold, (seed, s))| (fold, seed, s))
        .collect();
    let run = || -> Vec<Result<FoldResult>> {
        work.par_iter()
            .map(|&(fold, seed, subject)| {
                run_fold::<T>(dataset, factors, hyper, params, base_seed, subject, seed).map_err(|e| Error::Fold {
                    fold,
                    subject_id: subject,
                    seed,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    Ok(match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    })
}

/// As [`loocv_partial`], failing on the first fold error.
pub fn loocv<T: Scalar>(
    dataset: &[Trajectory],
    factors: &BTreeMap<usize, FactorVector>,
    hyper: &Hyperparams,
    params: &EvalParams,
    base_seed: u64,
    jobs: Option<usize>,
) -> Result<Vec<FoldResult>> {
    loocv_partial::<T>(dataset, factors, hyper, params, base_seed, jobs)?
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub rule: Rule,
    pub mean_yellow_speed: f64,
    pub standard_error: f64,
    pub kappa: f64,
    /// `None` when the labels hold a single class.
    pub balanced_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRow {
    pub mean_yellow_speed: f64,
    pub standard_error: f64,
    pub kappa: f64,
    pub balanced_accuracy: Option<f64>,
    /// Random-rule speed minus streaming-rule speed, m/s.
    pub reduction_vs_random: f64,
    /// The same reduction for the batch windowed-average rule.
    pub batch_reduction_vs_random: f64,
    /// Fraction of transitions whose streaming decision matches the batch decision.
    pub agreement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rules: Vec<RuleRow>,
    pub stream: Option<StreamRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Seed-averaged rows in [`Rule::ALL`] order.
    pub rules: Vec<RuleRow>,
    /// Factor name to normalized KL averaged over folds and seeds.
    pub normalized_kl: BTreeMap<String, f64>,
    pub stream: Option<StreamRow>,
    pub per_seed: Vec<SeedSummary>,
    pub n_folds: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn rule(&self, rule: Rule) -> &RuleRow {
        self.rules.iter().find(|r| r.rule == rule).expect("all rules present")
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn mean_opt(v: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let some: Vec<f64> = v.into_iter().flatten().collect();
    (!some.is_empty()).then(|| mean(some))
}

fn score_rule(dataset: &[Trajectory], rule: Rule, decisions: &Decisions, labels: &Decisions) -> Result<RuleRow> {
    let speed = policy_speed(dataset, decisions)?;
    let pred: Vec<bool> = decisions.values().copied().collect();
    let act: Vec<bool> = decisions.keys().map(|k| labels[k]).collect();
    Ok(RuleRow {
        rule,
        mean_yellow_speed: speed.mean,
        standard_error: speed.standard_error,
        kappa: cohens_kappa(&pred, &act)?,
        balanced_accuracy: balanced_accuracy(&pred, &act).ok(),
    })
}

/// Per-seed decision rules scored against the ground-truth labels, then
/// averaged over seeds. Independent of fold order.
pub fn aggregate(dataset: &[Trajectory], folds: &[FoldResult], base_seed: u64) -> Result<EvalReport> {
    let mut by_seed: BTreeMap<u64, BTreeMap<usize, &FoldResult>> = BTreeMap::new();
    for f in folds {
        if by_seed
            .entry(f.seed)
            .or_default()
            .insert(f.held_out_subject, f)
            .is_some()
        {
            return Err(Error::Config(format!(
                "duplicate fold for subject {} seed {}",
                f.held_out_subject, f.seed
            )));
        }
    }
    let mut per_seed = Vec::new();
    for (&seed, subj) in &by_seed {
        let labels: Decisions = subj.iter().map(|(&s, f)| (s, f.label)).collect();
        let ids: Vec<usize> = subj.keys().copied().collect();
        let mut rules = baseline_rules(&ids, derive_seed(base_seed, &[TAG_RANDOM_RULE, seed]));
        rules.insert(
            Rule::WindowedAverage,
            subj.iter().map(|(&s, f)| (s, f.windowed_average.deploy)).collect(),
        );
        rules.insert(
            Rule::Instantaneous,
            subj.iter().map(|(&s, f)| (s, f.instantaneous.deploy)).collect(),
        );
        let rows = Rule::ALL
            .iter()
            .map(|&r| score_rule(dataset, r, &rules[&r], &labels))
            .collect::<Result<Vec<_>>>()?;
        let stream = if subj.values().all(|f| f.stream.is_some()) {
            let dec: Decisions = subj
                .iter()
                .map(|(&s, f)| (s, f.stream.as_ref().expect("checked").decision.deploy))
                .collect();
            let row = score_rule(dataset, Rule::WindowedAverage, &dec, &labels)?;
            let random = rows[2].mean_yellow_speed;
            let (agree, total) = subj.values().fold((0, 0), |(a, t), f| {
                let s = f.stream.as_ref().expect("checked");
                (a + s.agreements, t + s.transitions)
            });
            Some(StreamRow {
                mean_yellow_speed: row.mean_yellow_speed,
                standard_error: row.standard_error,
                kappa: row.kappa,
                balanced_accuracy: row.balanced_accuracy,
                reduction_vs_random: random - row.mean_yellow_speed,
                batch_reduction_vs_random: random - rows[3].mean_yellow_speed,
                agreement: agree as f64 / total.max(1) as f64,
            })
        } else {
            None
        };
        per_seed.push(SeedSummary {
            seed,
            rules: rows,
            stream,
        });
    }

    let rules = Rule::ALL
        .iter()
        .enumerate()
        .map(|(i, &rule)| RuleRow {
            rule,
            mean_yellow_speed: mean(per_seed.iter().map(|s| s.rules[i].mean_yellow_speed)),
            standard_error: mean(per_seed.iter().map(|s| s.rules[i].standard_error)),
            kappa: mean(per_seed.iter().map(|s| s.rules[i].kappa)),
            balanced_accuracy: mean_opt(per_seed.iter().map(|s| s.rules[i].balanced_accuracy)),
        })
        .collect();
    let stream = per_seed.iter().all(|s| s.stream.is_some()).then(|| {
        let rows: Vec<&StreamRow> = per_seed.iter().filter_map(|s| s.stream.as_ref()).collect();
        StreamRow {
            mean_yellow_speed: mean(rows.iter().map(|r| r.mean_yellow_speed)),
            standard_error: mean(rows.iter().map(|r| r.standard_error)),
            kappa: mean(rows.iter().map(|r| r.kappa)),
            balanced_accuracy: mean_opt(rows.iter().map(|r| r.balanced_accuracy)),
            reduction_vs_random: mean(rows.iter().map(|r| r.reduction_vs_random)),
            batch_reduction_vs_random: mean(rows.iter().map(|r| r.batch_reduction_vs_random)),
            agreement: mean(rows.iter().map(|r| r.agreement)),
        }
    });
    let mut normalized_kl = BTreeMap::new();
    for f in Factor::ALL {
        let name = f.name();
        let vals = by_seed
            .values()
            .flat_map(|m| m.values())
            .map(|fold| fold.normalized_kl.get(name).copied().unwrap_or(f64::NAN));
        normalized_kl.insert(name.to_string(), mean(vals));
    }
    Ok(EvalReport {
        rules,
        normalized_kl,
        stream: if per_seed.is_empty() { None } else { stream },
        per_seed,
        n_folds: folds.len(),
        seeds: by_seed.keys().copied().collect(),
    })
}
