use std::path::Path;
use std::process::{Command, Output};

use lrdk_core::compress::{model_cost_profile, CostQuery, HardwareSpec, ProcessingStyle};
use lrdk_core::design_space::DecompConfig;
use lrdk_core::model::{
    apply_decomposition, logit_divergence, Checkpoint, DivergenceOptions, ModelSpec,
};
use lrdk_core::precision::Precision;
use serde_json::Value;

fn lrdk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrdk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn analyze_csv_and_json_carry_the_same_fields() {
    let base = [
        "analyze",
        "--model",
        "llama2_7b",
        "--pr",
        "1",
        "--layers",
        "3,9",
        "--tensors",
        "all",
    ];
    let csv_out = lrdk(&[&base[..], &["--format", "csv"]].concat());
    let json_out = lrdk(&[&base[..], &["--format", "json"]].concat());
    assert!(csv_out.status.success() && json_out.status.success());

    let rows: Vec<Value> = serde_json::from_str(&stdout(&json_out)).unwrap();
    let mut reader = csv::Reader::from_reader(csv_out.stdout.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(records.len(), 3);
    for (row, rec) in rows.iter().zip(&records) {
        let keys: Vec<&String> = row.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), header.len());
        for (name, cell) in header.iter().zip(rec.iter()) {
            let v = &row[name];
            match v {
                Value::String(s) => assert_eq!(s, cell),
                Value::Number(n) => {
                    let (a, b) = (n.as_f64().unwrap(), cell.parse::<f64>().unwrap());
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{name}");
                }
                other => panic!("unexpected {other}"),
            }
        }
    }
}

#[test]
fn error_lines_and_exit_codes() {
    let bad_layer = lrdk(&[
        "analyze",
        "--model",
        "toy_llama",
        "--pr",
        "1",
        "--layers",
        "99",
        "--tensors",
        "all",
    ]);
    assert_eq!(bad_layer.status.code(), Some(2));
    let line = stderr(&bad_layer);
    assert!(line.contains("error: code=2 kind=invalid-config"), "{line}");
    assert!(line.contains("layer 99"));

    let bad_rank = lrdk(&[
        "analyze",
        "--model",
        "toy_llama",
        "--pr",
        "0",
        "--layers",
        "1",
        "--tensors",
        "all",
    ]);
    assert_eq!(bad_rank.status.code(), Some(2));

    let unknown_flag = lrdk(&["analyze", "--model", "toy_llama", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    assert!(stderr(&unknown_flag).contains("error: code=2"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.lrdk");
    let o = lrdk(&[
        "eval",
        "--original",
        p(&missing),
        "--decomposed",
        p(&missing),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("kind=io"));

    let junk = dir.path().join("junk.lrdk");
    std::fs::write(&junk, b"NOPE and some more bytes").unwrap();
    let o = lrdk(&["eval", "--original", p(&junk), "--decomposed", p(&junk)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("kind=corrupt-checkpoint"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn decompose_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.lrdk");
    let b = dir.path().join("b.lrdk");
    for out in [&a, &b] {
        let o = lrdk(&[
            "decompose",
            "--model",
            "toy_llama",
            "--pr",
            "2",
            "--layers",
            "1,3",
            "--tensors",
            "W_Q,W_D",
            "--seed",
            "5",
            "--out",
            p(out),
            "--format",
            "json",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(summary["params_after"], summary["analytic_params_after"]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ma: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.lrdk.manifest.json")).unwrap())
            .unwrap();
    let mb: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("b.lrdk.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(ma["config_digest"], mb["config_digest"]);
    assert_eq!(ma["seed"], 5);
}

#[test]
fn eval_of_identical_checkpoints_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.lrdk");
    Checkpoint::random(&ModelSpec::toy_llama(), Precision::F32, 1)
        .unwrap()
        .save(&path)
        .unwrap();
    let o = lrdk(&[
        "eval",
        "--original",
        p(&path),
        "--decomposed",
        p(&path),
        "--n-inputs",
        "3",
    ]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["mean_kl"].as_f64().unwrap(), 0.0);
    assert_eq!(r["max_abs_logit_diff"].as_f64().unwrap(), 0.0);
    assert!((r["mean_cosine_similarity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r["n_inputs"], 3);
}

#[test]
fn enumerate_respects_max() {
    let o = lrdk(&[
        "space",
        "--model",
        "toy_llama",
        "--enumerate",
        "--max",
        "10",
        "--format",
        "csv",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 11);
}

const ROLES: [&str; 7] = ["W_Q", "W_K", "W_V", "W_SO", "W_G", "W_U", "W_D"];

fn candidate_toml(cands: &[(usize, Vec<usize>, Vec<usize>)]) -> String {
    let mut s = String::new();
    for (pr, layers, tensors) in cands {
        let names: Vec<String> = tensors
            .iter()
            .map(|&t| format!("\"{}\"", ROLES[t]))
            .collect();
        let ls: Vec<String> = layers.iter().map(|l| (l + 1).to_string()).collect();
        s += &format!(
            "[[candidate]]\npruned_rank = {pr}\nlayers = [{}]\ntensors = [{}]\n\n",
            ls.join(", "),
            names.join(", ")
        );
    }
    s
}

#[test]
fn search_with_one_candidate_returns_it() {
    let dir = tempfile::tempdir().unwrap();
    let cands = dir.path().join("c.toml");
    let best = dir.path().join("best.toml");
    std::fs::write(&cands, candidate_toml(&[(1, vec![1], vec![0, 1])])).unwrap();
    let o = lrdk(&[
        "search",
        "--model",
        "toy_llama",
        "--tau",
        "1.0",
        "--candidates",
        p(&cands),
        "--best",
        p(&best),
        "--n-inputs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let text = std::fs::read_to_string(&best).unwrap();
    assert!(text.contains("layers = [2]"), "{text}");
}

#[test]
fn search_matches_exhaustive_oracle() {
    let spec = ModelSpec::toy_llama();
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("orig.lrdk");
    let original = Checkpoint::random(&spec, Precision::F64, 11).unwrap();
    original.save(&ckpt_path).unwrap();

    let mut cands = Vec::new();
    for i in 0..20usize {
        let layers: Vec<usize> = (0..4).filter(|b| (i % 15 + 1) >> b & 1 == 1).collect();
        let tensors: Vec<usize> = (0..7)
            .filter(|t| (i * 5 + 3) >> t & 1 == 1 || *t == i % 7)
            .collect();
        cands.push((1 + i % 3 * 8, layers, tensors));
    }
    let cand_path = dir.path().join("cands.toml");
    std::fs::write(&cand_path, candidate_toml(&cands)).unwrap();

    let hw = HardwareSpec::a100_like();
    let q = CostQuery::standard().with_style(ProcessingStyle::Factored);
    let opts = DivergenceOptions {
        n_inputs: 2,
        seq_len: 8,
        seed: 3,
    };
    let ln_v = (spec.vocab as f64).ln();
    let mut scored: Vec<(f64, f64, DecompConfig, usize)> = Vec::new();
    for (idx, (pr, layers, tensors)) in cands.iter().enumerate() {
        let cfg = DecompConfig::uniform(layers.clone(), tensors.clone(), *pr);
        let prof = model_cost_profile(&spec, Some(&cfg), &q, &hw).unwrap();
        let dec = apply_decomposition(&original, &cfg).unwrap();
        let kl = logit_divergence(&original, &dec, &opts).unwrap().mean_kl;
        let drop = (kl / ln_v).min(1.0);
        scored.push((
            drop,
            prof.roofline_latency_s * prof.roofline_energy_j,
            cfg,
            idx,
        ));
    }
    let mut drops: Vec<f64> = scored.iter().map(|s| s.0).collect();
    drops.sort_by(f64::total_cmp);
    let tau = drops[10];
    let oracle = scored
        .iter()
        .filter(|s| s.0 < tau)
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.2.cmp(&b.2)))
        .unwrap()
        .3;

    let o = lrdk(&[
        "search",
        "--model",
        "toy_llama",
        "--tau",
        &tau.to_string(),
        "--candidates",
        p(&cand_path),
        "--checkpoint",
        p(&ckpt_path),
        "--n-inputs",
        "2",
        "--seq-len",
        "8",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let first = reader
        .deserialize::<std::collections::HashMap<String, String>>()
        .next()
        .unwrap()
        .unwrap();
    assert_eq!(first["feasible"], "true");
    let (pr, layers, tensors) = &cands[oracle];
    assert_eq!(first["pruned_rank"], pr.to_string());
    let want_layers: Vec<String> = layers.iter().map(|l| (l + 1).to_string()).collect();
    assert_eq!(first["layers"], want_layers.join(" "));
    let want_tensors: Vec<&str> = tensors.iter().map(|&t| ROLES[t]).collect();
    assert_eq!(first["tensors"], want_tensors.join(" "));
}
