mod common;

use std::fs;
use std::path::Path;

use common::*;
use matting_core::attention::AttentionConfig;
use matting_core::modelgraph::{attention_graph, count_params, zoo};
use matting_core::numerics::{mtf, Tensor};

#[test]
fn account_builtins_match_the_library() {
    let t = tempfile::tempdir().unwrap();
    for (name, g) in zoo::all() {
        let out = t.path().join(format!("{name}.json"));
        ok(&["account", "--builtin", name, "--out", s(&out)]);
        let r = json(&out);
        assert_eq!(r["tool"], "matting");
        assert_eq!(r["total_params"].as_u64().unwrap(), count_params(&g).unwrap().total_params, "{name}");
        let layers = r["layers"].as_array().unwrap();
        assert_eq!(layers.len(), g.layers.len());
        let macs: u64 = layers.iter().map(|l| l["macs"].as_u64().unwrap()).sum();
        assert_eq!(macs, r["total_macs"].as_u64().unwrap());
    }
}

#[test]
fn account_reads_graph_files_and_input_overrides() {
    let t = tempfile::tempdir().unwrap();
    let path = t.path().join("g.json");
    let g = attention_graph(8, 16, 16, zoo::attention_spec_for(&AttentionConfig::new(8, 8)));
    fs::write(&path, serde_json::to_string(&g).unwrap()).unwrap();
    let stdout = ok(&["account", "--graph", s(&path)]).stdout;
    let base: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let mut args = vec!["account".to_string(), "--graph".into(), s(&path).into()];
    for i in &g.inputs {
        let [c, h, w] = i.shape;
        args.extend(["--input".into(), format!("{}={c},{},{}", i.name, h / 2, w / 2)]);
    }
    let half = ok(&args.iter().map(String::as_str).collect::<Vec<_>>()).stdout;
    let half: serde_json::Value = serde_json::from_slice(&half).unwrap();
    assert_eq!(base["total_params"], half["total_params"]);
    let (a, b) = (base["total_macs"].as_u64().unwrap(), half["total_macs"].as_u64().unwrap());
    assert!(b < a, "{b} vs {a}");

    let err = fails(&["account", "--graph", s(&path), "--input", "nope=1,2,3"]);
    assert!(err.contains("nope"), "{err}");
    fs::write(&path, "{\"name\": \"x\", \"inputs\": [").unwrap();
    fails(&["account", "--graph", s(&path)]);
    fails(&["account", "--builtin", "resnet"]);
}

#[test]
fn search_reproduces_the_committed_report() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("search.json");
    ok(&["search", "--out", s(&out)]);
    let mut got = json(&out);
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/search/attention_search_report.json");
    let want = json(&fixture);
    for k in ["tool", "version", "seed"] {
        got.as_object_mut().unwrap().remove(k);
    }
    assert_eq!(got, want);
}

fn write_tensor(dir: &Path, name: &str, shape: &[usize], data: Vec<f64>) {
    mtf::write_file(&dir.join(name), &Tensor::new(shape.to_vec(), data).unwrap()).unwrap();
}

#[test]
fn attend_two_by_two_matches_closed_form() {
    let t = tempfile::tempdir().unwrap();
    let p = mkdir(t.path(), "params");
    let eye = vec![1.0, 0.0, 0.0, 1.0];
    write_tensor(&p, "theta.mtf", &[2, 2, 1, 1], eye.clone());
    write_tensor(&p, "phi.mtf", &[2, 2, 1, 1], eye);
    write_tensor(&p, "g.mtf", &[1, 1, 1, 1], vec![1.0]);
    write_tensor(&p, "w.mtf", &[1, 1, 1, 1], vec![1.0]);
    write_tensor(t.path(), "image.mtf", &[2, 2, 2], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    write_tensor(t.path(), "alpha.mtf", &[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let (out, out_alpha) = (t.path().join("map.png"), t.path().join("out.mtf"));
    ok(&[
        "attend",
        "--image",
        s(&t.path().join("image.mtf")),
        "--alpha",
        s(&t.path().join("alpha.mtf")),
        "--params",
        s(&p),
        "--query",
        "0,0",
        "--out",
        s(&out),
        "--out-alpha",
        s(&out_alpha),
    ]);
    let e = std::f64::consts::E;
    let ctx = (e + 2.0 * e + 3.0 + 4.0) / (2.0 * e + 2.0);
    let a = mtf::read_file(&out_alpha).unwrap();
    assert!((a.data()[0] - (1.0 + ctx)).abs() < 1e-12);
    assert!((a.data()[0] - 3.0380).abs() < 5e-4);
    assert_eq!(gray(&out).into_raw(), vec![255, 255, 0, 0]);
    let row: Vec<f64> = json(&out.with_extension("json"))["row"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let z = 2.0 * e + 2.0;
    for (g, w) in row.iter().zip([e / z, e / z, 1.0 / z, 1.0 / z]) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn attend_constant_feature_gives_a_flat_map() {
    let t = tempfile::tempdir().unwrap();
    write_tensor(t.path(), "image.mtf", &[4, 8, 8], vec![0.7; 256]);
    write_tensor(t.path(), "alpha.mtf", &[2, 8, 8], (0..128).map(|i| i as f64 / 128.0).collect());
    let out = t.path().join("map.png");
    let args = |q: &'static str| {
        vec![
            "attend".to_string(),
            "--image".into(),
            s(&t.path().join("image.mtf")).into(),
            "--alpha".into(),
            s(&t.path().join("alpha.mtf")).into(),
            "--r".into(),
            "2".into(),
            "--seed".into(),
            "3".into(),
            "--query".into(),
            q.into(),
            "--out".into(),
            s(&out).into(),
        ]
    };
    let run = |q| {
        let a = args(q);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        matting(&refs)
    };
    assert!(run("5,6").status.success());
    let map = gray(&out);
    assert_eq!((map.width(), map.height()), (4, 4));
    assert!(map.pixels().all(|p| p.0[0] == 128));
    let bad = run("8,0");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("outside"));
}

#[test]
fn gradcheck_default_passes_and_fault_is_caught() {
    let t = tempfile::tempdir().unwrap();
    let rep = t.path().join("gc.json");
    let out = ok(&["gradcheck", "--out", s(&rep)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("attention_block") && !text.contains("FAIL"), "{text}");
    let r = json(&rep);
    assert_eq!(r["passed"], true);
    let cases = r["cases"].as_array().unwrap();
    assert!(cases.len() >= 30);
    assert!(cases.iter().all(|c| c["seeds"].as_u64().unwrap() >= 20));

    let bad = matting(&["gradcheck", "--inject-fault", "--filter", "injected"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn train_toy_writes_curve_and_report() {
    let t = tempfile::tempdir().unwrap();
    let (csv, rep) = (t.path().join("c.csv"), t.path().join("r.json"));
    ok(&["train-toy", "--iterations", "4", "--seed", "2", "--out-csv", s(&csv), "--report", s(&rep)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("iter,lr,l_alpha,l_hard,total\n"));
    assert_eq!(text.lines().count(), 5);
    let r = json(&rep);
    assert_eq!(r["seed"], 2);
    assert_eq!(r["config"]["iterations"], 4);
}

#[test]
fn flags_override_config_files() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"iterations": 3, "seed": 9}"#).unwrap();
    let (csv, rep) = (t.path().join("c.csv"), t.path().join("r.json"));
    ok(&["train-toy", "--config", s(&cfg), "--iterations", "2", "--out-csv", s(&csv), "--report", s(&rep)]);
    let r = json(&rep);
    assert_eq!(r["config"]["iterations"], 2);
    assert_eq!(r["seed"], 9);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);

    fs::write(&cfg, r#"{"iterations": 3, "bogus": 1}"#).unwrap();
    let err = fails(&["train-toy", "--config", s(&cfg), "--out-csv", s(&csv)]);
    assert!(err.contains("bogus"), "{err}");
}
