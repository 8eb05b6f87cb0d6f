use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cogdrive::config::RunConfig;
use cogdrive::encoder::io::read_model;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cogdrive"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
  "cohort": { "n_subjects": 6 },
  "precision": "f32",
  "hyperparams": { "hidden": 4, "epochs": 2, "batch_size": 128 },
  "eval": { "seeds": [0], "encoder_snippets": { "hop": 15, "span": null, "min_exposure": 0.0 } }
}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, json: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, json).unwrap();
        p
    }

    /// Simulates the tiny cohort into `data/`.
    fn tiny_data(&self) -> (PathBuf, PathBuf) {
        let cfg = self.config("tiny.json", TINY);
        let data = self.path("data");
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(&data)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (cfg, data)
    }
}

fn assert_provenance(dir: &Path) {
    let cfg_text = fs::read_to_string(dir.join("config.json")).unwrap();
    let cfg = RunConfig::from_json_str(&cfg_text, None).unwrap();
    assert_eq!(cfg.to_json().unwrap(), cfg_text, "resolved config is a fixed point");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], cfg.hash().unwrap());
    for (name, hash) in manifest["outputs"].as_object().unwrap() {
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(hash.as_str().unwrap(), cogdrive::dataset::sha256_hex(&bytes), "{name}");
    }
}

#[test]
fn simulate_default_desk_cohort() {
    let ws = Workspace::new();
    let a = ws.path("a");
    let o = run(&["simulate", "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("subjects: 27"), "{out}");
    assert!(out.contains("laps: 135"), "{out}");
    assert!(out.contains("encoder snippets:") && out.contains("decision snippets:"));
    assert_provenance(&a);

    let b = ws.path("b");
    assert_eq!(code(&run(&["simulate", "--out", s(&b)])), 0);
    for f in ["cohort.json", "trajectories.jsonl", "config.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = ws.path("c");
    assert_eq!(code(&run(&["simulate", "--seed", "1", "--out", s(&c)])), 0);
    assert_ne!(
        fs::read(a.join("trajectories.jsonl")).unwrap(),
        fs::read(c.join("trajectories.jsonl")).unwrap()
    );
}

#[test]
fn trajectory_records_carry_the_listed_fields() {
    let ws = Workspace::new();
    let (_, data) = ws.tiny_data();
    let text = fs::read_to_string(data.join("trajectories.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut expect = [
        "subject_id",
        "lap_id",
        "hmi_type",
        "trigger",
        "t",
        "speed_mps",
        "dist_entry_m",
        "dist_exit_m",
        "light_state",
        "hmi_active",
        "accel_mps2",
    ];
    expect.sort_unstable();
    assert_eq!(keys, expect);
}

#[test]
fn config_errors_exit_2() {
    let ws = Workspace::new();
    let o = run(&["simulate", "--n-subjects", "0", "--out", s(&ws.path("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_subjects"), "{}", stderr(&o));

    let bad = ws.config("bad.json", r#"{ "hyperparams": { "hiden": 3 } }"#);
    let o = run(&["simulate", "--config", s(&bad), "--out", s(&ws.path("y"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hiden"));

    let o = run(&["simulate", "--preset", "laptop", "--out", s(&ws.path("z"))]);
    assert_eq!(code(&o), 2);
    let o = run(&["simulate", "--config", s(&ws.path("missing.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_with_zero_epochs_writes_the_initial_weights() {
    let ws = Workspace::new();
    let (cfg, data) = ws.tiny_data();
    let out = ws.path("m0");
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("training_log.csv")).unwrap(),
        "epoch,L1,L2,L3,total\n"
    );
    let (model, header) = read_model::<f64, _>(&fs::read(out.join("model.bin")).unwrap()[..]).unwrap();
    assert_eq!(header.hyperparams.unwrap().epochs, 0);
    assert_eq!(header.hidden, 4);
    // initialization draws from the recorded seed alone
    let fresh = cogdrive::encoder::EncoderModel::<f32>::init(
        model.layout,
        model.context_len,
        model.scaler.clone(),
        &mut cogdrive::rng::rng_from(header.seed.unwrap(), &[cogdrive::rng::TAG_INIT]),
    );
    assert_eq!(model.params, fresh.cast::<f64>().params);
    assert_provenance(&out);
}

#[test]
fn train_desk_preset_reduces_the_loss() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "desk.json",
        r#"{ "cohort": { "n_subjects": 6 }, "eval": { "encoder_snippets": { "hop": 10, "span": null, "min_exposure": 0.0 } } }"#,
    );
    let data = ws.path("data");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&data)])), 0);
    let out = ws.path("m");
    let o = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(out.join("training_log.csv")).unwrap();
    let totals: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), RunConfig::default().hyperparams.epochs);
    assert!(totals.last().unwrap() < &totals[0], "{totals:?}");
}

#[test]
fn alpha1_zero_removes_reconstruction_from_the_total() {
    let ws = Workspace::new();
    let (cfg, data) = ws.tiny_data();
    let out = ws.path("ablate");
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--alpha1",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved = RunConfig::from_json_str(&fs::read_to_string(out.join("config.json")).unwrap(), None).unwrap();
    let h = &resolved.hyperparams;
    assert_eq!(h.alpha1, 0.0);
    for line in fs::read_to_string(out.join("training_log.csv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let expect = h.alpha2 * v[2] + h.alpha3 * v[3];
        assert!((v[4] - expect).abs() <= 1e-5 * expect.abs(), "{line}");
    }
}

#[test]
fn divergence_exits_3_with_the_losses() {
    let ws = Workspace::new();
    let (_, data) = ws.tiny_data();
    let cfg = ws.config(
        "boom.json",
        &TINY.replace(r#""batch_size": 128"#, r#""batch_size": 128, "lr": 1e30"#),
    );
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&ws.path("m")),
        "--epochs",
        "5",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(
        err.contains("diverged") && err.contains("L1=") && err.contains("total="),
        "{err}"
    );
}

#[test]
fn eval_writes_the_rule_table_and_is_reproducible() {
    let ws = Workspace::new();
    let (cfg, data) = ws.tiny_data();
    let eval = |name: &str, extra: &[&str]| {
        let out = ws.path(name);
        let mut args = vec!["eval", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let plain = eval("plain", &["--seeds", "1"]);
    let rules = fs::read_to_string(plain.join("rules.csv")).unwrap();
    let names: Vec<&str> = rules.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["No-HMI", "Always-HMI", "Random", "Windowed-Average", "Instantaneous"]
    );
    assert_eq!(
        fs::read_to_string(plain.join("normalized_kl.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    assert_provenance(&plain);

    let again = eval("again", &["--seeds", "1"]);
    for f in [
        "rules.csv",
        "normalized_kl.csv",
        "bundle.json",
        "config.json",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(plain.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }

    let streamed = eval("streamed", &["--seeds", "1,2", "--streaming", "--jobs", "2"]);
    let rules = fs::read_to_string(streamed.join("rules.csv")).unwrap();
    assert!(
        rules.lines().last().unwrap().starts_with("Streaming-Windowed-Average,"),
        "{rules}"
    );
    let bundle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(streamed.join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle["report"]["seeds"], serde_json::json!([1, 2]));
    assert_eq!(bundle["folds"].as_array().unwrap().len(), 12);
}

#[test]
fn fold_failures_exit_4_and_keep_partial_results() {
    let ws = Workspace::new();
    // four subjects leave three per training fold: no two-by-two median split
    let cfg = ws.config("four.json", &TINY.replace(r#""n_subjects": 6"#, r#""n_subjects": 4"#));
    let data = ws.path("data");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&data)])), 0);
    let out = ws.path("ev");
    let o = run(&["eval", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let failures: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures["failed"].as_array().unwrap().len(), 4);
    assert_eq!(failures["completed"], 0);
    assert!(out.join("folds_partial.json").exists());
    assert!(!out.join("bundle.json").exists());
    assert_provenance(&out);
}

#[test]
fn report_writes_correlations_and_scatter() {
    let ws = Workspace::new();
    let (cfg, data) = ws.tiny_data();
    let model_dir = ws.path("m");
    assert_eq!(
        code(&run(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--out",
            s(&model_dir)
        ])),
        0
    );
    let out = ws.path("rep");
    let model = model_dir.join("model.bin");
    let o = run(&[
        "report",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--model",
        s(&model),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let corr = fs::read_to_string(out.join("correlations.csv")).unwrap();
    assert_eq!(corr.lines().next().unwrap(), "factor,stat,r,note");
    assert_eq!(corr.lines().count(), 1 + 16);
    let scatter = fs::read_to_string(out.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 6);
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("model.bin") && manifest.contains("trajectories.jsonl"));
    assert_provenance(&out);
}
