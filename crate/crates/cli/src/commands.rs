use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use cogdrive::config::{Precision, RunConfig};
use cogdrive::dataset::{decision_targets, SnippetConfig};
use cogdrive::encoder::io::{read_model, write_model, write_training_log};
use cogdrive::encoder::{train as train_encoder, windowed_average_latent, EncoderModel};
use cogdrive::eval::report::{
    version_string, write_bundle, write_kl_table, write_rule_table, write_scatter, EvalBundle, ScatterRow,
};
use cogdrive::eval::{aggregate, correlation_report, loocv_partial, FoldResult};
use cogdrive::rng::{derive_seed, TAG_TRAIN};
use cogdrive::simulator::io::{read_cohort, read_trajectories, write_cohort, write_trajectories};
use cogdrive::simulator::{generate_dataset, sample_cohort, FactorVector, Trajectory};
use cogdrive::{Error, Scalar};
use serde::Serialize;

use crate::artifacts::OutputDir;
use crate::Global;

pub const COHORT_FILE: &str = "cohort.json";
pub const TRAJECTORY_FILE: &str = "trajectories.jsonl";
pub const MODEL_FILE: &str = "model.bin";

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_EVAL: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// The config file (or `{}`) resolved over its preset, then the flag overrides
/// applied by `adjust` and the result validated again.
fn resolve(global: &Global, adjust: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, Failure> {
    let text = match &global.config {
        Some(path) => fs::read_to_string(path).map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("cannot read config {}: {e}", path.display()),
        })?,
        None => "{}".to_string(),
    };
    let mut cfg = RunConfig::from_json_str(&text, global.preset)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    adjust(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

struct Data {
    trajectories: Vec<Trajectory>,
    factors: BTreeMap<usize, FactorVector>,
}

fn load_data(out: &mut OutputDir, dir: &Path, cfg: &RunConfig) -> Result<Data, Failure> {
    let cohort = read_cohort(&out.read_input(&dir.join(COHORT_FILE))?[..])?;
    let bytes = out.read_input(&dir.join(TRAJECTORY_FILE))?;
    let trajectories = read_trajectories(BufReader::new(&bytes[..]), cfg.scenario.sample_rate)?;
    let factors = cohort.iter().map(|r| (r.subject_id, r.factors())).collect();
    Ok(Data { trajectories, factors })
}

pub fn simulate(global: &Global, n_subjects: Option<usize>) -> CmdResult {
    let cfg = resolve(global, |c| {
        if let Some(n) = n_subjects {
            c.cohort.n_subjects = n;
        }
    })?;
    let cohort = sample_cohort(&cfg.cohort, cfg.seed)?;
    let dataset = generate_dataset(&cohort, &cfg.scenario, &cfg.lap_plan, cfg.seed)?;

    let mut out = OutputDir::create(&global.out, "simulate")?;
    let mut buf = Vec::new();
    write_cohort(&mut buf, &cohort)?;
    out.write(COHORT_FILE, &buf)?;
    buf.clear();
    write_trajectories(&mut buf, &dataset)?;
    out.write(TRAJECTORY_FILE, &buf)?;
    out.finish(&cfg)?;

    let ctx = cfg.context_len();
    let encoder = cfg.eval.encoder_snippets.build(&dataset, ctx)?.len();
    let decision = cfg.eval.decision_snippets.build(&dataset, ctx)?.len();
    println!("subjects: {}", cohort.len());
    println!("laps: {}", dataset.len());
    println!("encoder snippets: {encoder}");
    println!("decision snippets: {decision}");
    Ok(())
}

#[derive(Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
}

pub fn train(global: &Global, data: &Path, o: TrainOverrides) -> CmdResult {
    let cfg = resolve(global, |c| {
        let h = &mut c.hyperparams;
        h.epochs = o.epochs.unwrap_or(h.epochs);
        h.alpha1 = o.alpha1.unwrap_or(h.alpha1);
        h.alpha2 = o.alpha2.unwrap_or(h.alpha2);
        h.alpha3 = o.alpha3.unwrap_or(h.alpha3);
    })?;
    let mut out = OutputDir::create(&global.out, "train")?;
    let data = load_data(&mut out, data, &cfg)?;
    let (model, log) = match cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg, &data)?,
        Precision::F64 => train_with::<f64>(&cfg, &data)?,
    };
    out.write(MODEL_FILE, &model)?;
    out.write("training_log.csv", &log)?;
    out.finish(&cfg)?;
    Ok(())
}

/// Serialized model and loss CSV.
fn train_with<T: Scalar>(cfg: &RunConfig, data: &Data) -> Result<(Vec<u8>, Vec<u8>), Failure> {
    let corpus = cfg.eval.encoder_snippets.build(&data.trajectories, cfg.context_len())?;
    let seed = derive_seed(cfg.seed, &[TAG_TRAIN]);
    let trained = train_encoder::<T>(&corpus, &data.factors, &cfg.hyperparams, seed)?;
    if let (Some(first), Some(last)) = (trained.history.first(), trained.history.last()) {
        println!(
            "epochs: {}  total loss {} -> {}",
            trained.history.len(),
            first.total,
            last.total
        );
    }
    let mut model = Vec::new();
    write_model(&mut model, &trained.model, Some(&cfg.hyperparams), Some(seed))?;
    let mut log = Vec::new();
    write_training_log(&mut log, &trained.history)?;
    Ok((model, log))
}

#[derive(Serialize)]
struct FoldFailure {
    fold: usize,
    held_out_subject: usize,
    seed: u64,
    error: String,
}

#[derive(Serialize)]
struct FailureManifest {
    version: String,
    completed: usize,
    failed: Vec<FoldFailure>,
    /// Set when every fold succeeded but aggregation did not.
    aggregate_error: Option<String>,
}

fn eval_failure(e: Error) -> Failure {
    let mut f = Failure::from(e);
    if f.code == EXIT_RUNTIME {
        f.code = EXIT_EVAL;
    }
    f
}

pub fn eval(global: &Global, data: &Path, jobs: Option<usize>, streaming: bool, seeds: Option<Vec<u64>>) -> CmdResult {
    let cfg = resolve(global, |c| {
        c.eval.streaming |= streaming;
        if let Some(s) = seeds {
            c.eval.seeds = s;
        }
    })?;
    let mut out = OutputDir::create(&global.out, "eval")?;
    let data = load_data(&mut out, data, &cfg)?;
    let run = match cfg.precision {
        Precision::F32 => loocv_partial::<f32>,
        Precision::F64 => loocv_partial::<f64>,
    };
    let results = run(
        &data.trajectories,
        &data.factors,
        &cfg.hyperparams,
        &cfg.eval,
        cfg.seed,
        jobs,
    )
    .map_err(eval_failure)?;

    let mut folds: Vec<FoldResult> = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(f) => folds.push(f),
            Err(Error::Fold {
                fold,
                subject_id,
                seed,
                source,
            }) => failed.push(FoldFailure {
                fold,
                held_out_subject: subject_id,
                seed,
                error: source.to_string(),
            }),
            Err(e) => return Err(eval_failure(e)),
        }
    }
    let report = if failed.is_empty() {
        aggregate(&data.trajectories, &folds, cfg.seed)
    } else {
        Err(Error::InsufficientSupport(format!(
            "{} of {} folds failed",
            failed.len(),
            failed.len() + folds.len()
        )))
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            let aggregate_error = failed.is_empty().then(|| e.to_string());
            let first = failed
                .first()
                .map(|f| format!("; first: fold {} ({})", f.fold, f.error));
            let manifest = FailureManifest {
                version: version_string(),
                completed: folds.len(),
                failed,
                aggregate_error,
            };
            out.write("folds_partial.json", &pretty(&folds)?)?;
            out.write("failures.json", &pretty(&manifest)?)?;
            out.finish(&cfg)?;
            return Err(Failure {
                code: EXIT_EVAL,
                message: format!("evaluation failed: {e}{}", first.unwrap_or_default()),
            });
        }
    };

    let mut buf = Vec::new();
    write_rule_table(&mut buf, &report)?;
    out.write("rules.csv", &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    buf.clear();
    write_kl_table(&mut buf, &report)?;
    out.write("normalized_kl.csv", &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    buf.clear();
    let bundle = EvalBundle {
        version: version_string(),
        config_hash: cfg.hash()?,
        report,
        folds,
    };
    write_bundle(&mut buf, &bundle)?;
    out.write("bundle.json", &buf)?;
    out.finish(&cfg)?;
    Ok(())
}

fn pretty<S: Serialize>(v: &S) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    s.push(b'\n');
    Ok(s)
}

pub fn report(global: &Global, data: &Path, model: Option<&Path>) -> CmdResult {
    let cfg = resolve(global, |_| {})?;
    let mut out = OutputDir::create(&global.out, "report")?;
    let data = load_data(&mut out, data, &cfg)?;

    let mut buf = Vec::new();
    let corr = correlation_report(&data.trajectories, &data.factors)?;
    writeln_csv(
        &mut buf,
        "factor,stat,r,note",
        corr.iter().map(|e| {
            format!(
                "{},{},{},{}",
                e.factor,
                e.stat,
                e.r.map_or_else(String::new, |r| r.to_string()),
                e.note.as_deref().unwrap_or("")
            )
        }),
    );
    out.write("correlations.csv", &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));

    if let Some(path) = model {
        let bytes = out.read_input(path)?;
        let (m, _) = read_model::<f64, _>(&bytes[..])?;
        let rows = scatter_rows(&cfg, &m, &data)?;
        buf.clear();
        write_scatter(&mut buf, &rows)?;
        out.write("scatter.csv", &buf)?;
    }
    out.finish(&cfg)?;
    Ok(())
}

fn writeln_csv(buf: &mut Vec<u8>, header: &str, rows: impl Iterator<Item = String>) {
    buf.extend_from_slice(header.as_bytes());
    buf.push(b'\n');
    for r in rows {
        buf.extend_from_slice(r.as_bytes());
        buf.push(b'\n');
    }
}

/// One row per subject: the windowed-average latent averaged over the
/// subject's decision snippets, with the ground-truth deployment label.
fn scatter_rows(cfg: &RunConfig, model: &EncoderModel<f64>, data: &Data) -> Result<Vec<ScatterRow>, Failure> {
    let snippets = SnippetConfig::build(&cfg.eval.decision_snippets, &data.trajectories, model.context_len)?;
    let labels: BTreeMap<usize, bool> = decision_targets(&data.trajectories)?
        .iter()
        .map(|t| (t.subject_id, t.deploy()))
        .collect();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for s in &snippets {
        let series = model.latent_series(s)?;
        let z = windowed_average_latent(&series, cfg.eval.window_seconds, cfg.scenario.sample_rate)?;
        let e = sums.entry(s.subject_id).or_insert_with(|| (vec![0.0; z.len()], 0));
        e.0.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(id, (sum, n))| {
            let factors = *data.factors.get(&id).ok_or_else(|| Failure {
                code: EXIT_RUNTIME,
                message: format!("subject {id} missing from the cohort file"),
            })?;
            Ok(ScatterRow {
                subject_id: id,
                z: sum.iter().map(|v| v / n as f64).collect(),
                factors,
                deploy: labels.get(&id).copied().unwrap_or(false),
            })
        })
        .collect()
}
