use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use plugin_lab::config::{DataConfig, ExperimentConfig, JsonlData, Method};

fn lab(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_plugin-lab"));
    c.args(args).arg("--out").arg(out);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    if let DataConfig::Synthetic(s) = &mut cfg.data {
        s.base_corpus = 1_500;
        s.train = 30;
        s.hyperval = 15;
        s.test = 15;
        s.items = 12;
        s.references = 2;
    }
    cfg.train.max_epochs = 2;
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, cfg.to_json()).unwrap();
    p
}

#[test]
fn help_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let help = Command::new(env!("CARGO_BIN_EXE_plugin-lab"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for verb in ["train", "eval", "noise-sim", "theory", "shift", "decode"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
    assert_eq!(code(&lab(&["fly"], None, tmp.path())), 1);
    assert_eq!(code(&lab(&["train", "--seed", "x"], None, tmp.path())), 1);
    assert_eq!(code(&lab(&["train", "--method", "bogus"], None, tmp.path())), 1);
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"version": 1, "colour": "red"}"#).unwrap();
    assert_eq!(code(&lab(&["train"], Some(&bad), tmp.path())), 1);
    fs::write(&bad, r#"{"version": 2}"#).unwrap();
    assert_eq!(code(&lab(&["train"], Some(&bad), tmp.path())), 1);
    assert_eq!(
        code(&lab(&["train"], Some(&tmp.path().join("absent.json")), tmp.path())),
        1
    );

    let cfg = ExperimentConfig {
        data: DataConfig::Jsonl(JsonlData {
            base: "missing-base.jsonl".into(),
            adapt: "missing-adapt.jsonl".into(),
            test: "missing-test.jsonl".into(),
            tokenizer: plugin_lab::config::TokenizerName::Whitespace,
            hyperval_fraction: 0.4,
        }),
        ..ExperimentConfig::default()
    };
    let p = write_config(tmp.path(), &cfg);
    let o = lab(&["train"], Some(&p), tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    let mut cfg = small();
    cfg.noise_sim.strength = 1.0;
    let p = write_config(tmp.path(), &cfg);
    let o = lab(&["noise-sim", "--seed", "0"], Some(&p), tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("strength"));
}

#[test]
fn eval_without_checkpoints_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), &small());
    let o = lab(
        &["eval", "--seed", "0", "--method", "plugin"],
        Some(&p),
        &tmp.path().join("out"),
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("base.ckpt"));
}

#[test]
fn zeroshot_trains_nothing_and_single_seed_std_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let p = write_config(tmp.path(), &small());
    let args = ["--seed", "3", "--method", "zeroshot"];
    assert_eq!(code(&lab(&[&["train"][..], &args].concat(), Some(&p), &out)), 0);
    let run = out.join("run-3");
    for f in ["config.json", "seed.txt", "git_describe.txt", "base.ckpt", "vocab.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(!run.join("zeroshot.ckpt").exists());
    assert!(!run.join("history-zeroshot.csv").exists());
    let echo = ExperimentConfig::from_json(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo.methods, vec![Method::Zeroshot]);
    assert_eq!(echo.seeds, vec![3]);

    assert_eq!(code(&lab(&[&["eval"][..], &args].concat(), Some(&p), &out)), 0);
    let metrics = fs::read_to_string(out.join("metrics-zeroshot.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("metric,mean,std"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",0")), "{metrics}");
    assert!(out.join("summary-eval.txt").exists());
}

#[test]
fn plugin_over_several_seeds_writes_a_checkpoint_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let p = write_config(tmp.path(), &small());
    let mut args = vec!["train", "--method", "plugin"];
    for s in ["0", "1", "2", "3", "4"] {
        args.extend(["--seed", s]);
    }
    let o = lab(&args, Some(&p), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in 0..5 {
        let run = out.join(format!("run-{s}"));
        assert!(run.join("plugin.ckpt").exists());
        let h = fs::read_to_string(run.join("history-plugin.csv")).unwrap();
        assert!(h.starts_with("epoch,train_loss,hyperval_loss,is_best\n0,"));
        assert_eq!(h.lines().filter(|l| l.ends_with(",true")).count(), 1);
    }
}

#[test]
fn damaged_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let p = write_config(tmp.path(), &small());
    let args = ["--seed", "0", "--method", "tempscale"];
    assert_eq!(code(&lab(&[&["train"][..], &args].concat(), Some(&p), &out)), 0);
    let ckpt = out.join("run-0/tempscale.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 1);
    fs::write(&ckpt, bytes).unwrap();
    let o = lab(&[&["eval"][..], &args].concat(), Some(&p), &out);
    assert_eq!(code(&o), 2);
}

const BASE: &[&str] = &[
    "the cat sat on the mat",
    "the dog sat on the rug",
    "a cat ran to the dog",
    "the bird sang on the tree",
    "a dog ran on the mat",
    "the cat ran to the tree",
];

fn jsonl(rows: &[(&str, &str)]) -> String {
    rows.iter()
        .map(|(p, t)| serde_json::json!({"prompt": p, "target": t}).to_string() + "\n")
        .collect()
}

#[test]
fn jsonl_dataset_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let base: Vec<(&str, &str)> = BASE.iter().map(|s| ("", *s)).collect();
    fs::write(tmp.path().join("base.jsonl"), jsonl(&base).repeat(5)).unwrap();
    let adapt = [
        ("the cat", "sat on the rug"),
        ("the dog", "ran to the tree"),
        ("a bird", "sang on the mat"),
        ("the cat", "ran on the rug"),
        ("the dog", "sat on the mat"),
        ("a cat", "sang to the dog"),
        ("the bird", "sat on the rug"),
        ("a dog", "ran to the cat"),
        ("the cat", "sat on the mat"),
        ("the dog", "sang on the tree"),
    ];
    fs::write(tmp.path().join("adapt.jsonl"), jsonl(&adapt)).unwrap();
    let test = [
        ("the cat", "sat on the rug"),
        ("the cat", "ran on the mat"),
        ("the dog", "ran to the tree"),
        ("a bird", "sang on the tree"),
    ];
    fs::write(tmp.path().join("test.jsonl"), jsonl(&test) + "\n").unwrap();
    let config = tmp.path().join("config.json");
    fs::write(
        &config,
        r#"{
  "version": 1,
  "data": {"kind": "jsonl", "base": "base.jsonl", "adapt": "adapt.jsonl", "test": "test.jsonl"},
  "train": {"max_epochs": 3, "batch_size": 4},
  "methods": ["zeroshot", "plugin", "weightedcomb"],
  "seeds": [7]
}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    for verb in ["train", "eval"] {
        let o = lab(&[verb], Some(&config), &out);
        assert_eq!(code(&o), 0, "{verb}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().nth(2).unwrap().starts_with("plugin,"));
    // three distinct test prompts
    let per = fs::read_to_string(out.join("run-7/per_example-plugin.csv")).unwrap();
    assert_eq!(per.lines().count(), 4);

    let o = Command::new(env!("CARGO_BIN_EXE_plugin-lab"))
        .args([
            "decode", "--method", "plugin", "--prompt", "the cat", "--prompt", "a zebra",
        ])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let decoded = fs::read_to_string(out.join("run-7/decode-plugin.csv")).unwrap();
    let mut lines = decoded.lines();
    assert_eq!(lines.next(), Some("prompt,prompt_text,output"));
    assert!(lines.next().unwrap().starts_with("0,the cat,"));
    // unknown words map to <unk>
    assert!(lines.next().unwrap().starts_with("1,a <unk>,"));
    let trace = fs::read_to_string(out.join("run-7/trace-plugin.csv")).unwrap();
    assert!(trace.starts_with("prompt,step,token,p_base,p_reweight,p_combined\n0,0,"));
}

#[test]
fn experiment_verbs_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = small();
    cfg.noise_sim.base_corpus = 1_500;
    cfg.noise_sim.clean = 60;
    cfg.noise_sim.hyperval = 20;
    cfg.noise_sim.test = 20;
    cfg.theory.t_max = 100;
    cfg.theory.trials = 2;
    cfg.shift.base_corpus = 800;
    cfg.shift.train = 30;
    cfg.shift.hyperval = 15;
    cfg.shift.generations = 20;
    let p = write_config(tmp.path(), &cfg);
    for verb in ["noise-sim", "theory", "shift"] {
        let o = lab(&[verb, "--seed", "1"], Some(&p), &out);
        assert_eq!(code(&o), 0, "{verb}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stdout.is_empty());
    }
    let run = out.join("run-1");
    for f in [
        "noise_summary.csv",
        "consistency.csv",
        "transition.csv",
        "decay.csv",
        "theory_summary.csv",
        "shift.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let t = fs::read_to_string(run.join("transition.csv")).unwrap();
    assert_eq!(t.lines().count(), 1 + 50 * 50);
    let d = fs::read_to_string(run.join("decay.csv")).unwrap();
    assert_eq!(d.lines().count(), 101);
}
