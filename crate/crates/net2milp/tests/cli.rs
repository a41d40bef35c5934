mod common;

use std::fs;

use common::{data, path, read_json, run, train_toy};
use net2milp::cli::{preset_template, Preset};
use net2milp::dataset::{glyph_fixtures, load_dir};
use net2milp::lp::read_lp;
use net2milp::sidecar::parse_bounds;
use net2milp::weights::{load_network, save_network};
use net2milp_core::train::{init_network, TrainConfig};
use tempfile::tempdir;

#[test]
fn committed_glyphs_match_the_generator() {
    let committed = load_dir(&data("glyphs2")).unwrap();
    assert_eq!(committed, glyph_fixtures(2, 20, 0));

    let dir = tempdir().unwrap();
    let fresh = dir.path().join("glyphs");
    assert_eq!(run(&["fixtures", "--dir", path(&fresh), "--out", path(dir.path())]), 0);
    for entry in fs::read_dir(data("glyphs2")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(data("glyphs2").join(&name)).unwrap(),
            fs::read(fresh.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn training_is_accurate_and_byte_deterministic() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    train_toy(a.path());
    train_toy(b.path());
    for file in ["weights.json", "loss.csv", "train.manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let manifest = read_json(&a.path().join("train.manifest.json"));
    assert!(manifest["result"]["train_accuracy"].as_f64().unwrap() >= 0.9);
    assert_eq!(manifest["result"]["epochs"], 500);
    let csv = fs::read_to_string(a.path().join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,loss\n0,"));
}

#[test]
fn zero_epochs_write_the_initialization() {
    let dir = tempdir().unwrap();
    let code = run(&[
        "train",
        "--data",
        path(&data("glyphs2")),
        "--epochs",
        "0",
        "--seed",
        "9",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, 0);
    let template = preset_template(Preset::Dense16x8, 8, 8, 2).unwrap();
    let init = init_network(&template, TrainConfig::default().init, 9).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("weights.json")).unwrap(), save_network(&init));
}

#[test]
fn one_unit_encoding_matches_golden() {
    let dir = tempdir().unwrap();
    let code = run(&["encode", "--weights", path(&data("one_unit.json")), "--out", path(dir.path())]);
    assert_eq!(code, 0);
    assert_eq!(
        fs::read_to_string(dir.path().join("model.lp")).unwrap(),
        fs::read_to_string(data("one_unit.lp")).unwrap()
    );
}

#[test]
fn cnn_flag_on_dense_net_names_layer_zero() {
    let dir = tempdir().unwrap();
    let code = run(&[
        "encode",
        "--weights",
        path(&data("one_unit.json")),
        "--arch",
        "cnn",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, 1);
    let manifest = read_json(&dir.path().join("encode.manifest.json"));
    let error = manifest["result"]["error"].as_str().unwrap();
    assert!(error.contains("layer 0"), "{error}");
    assert!(!dir.path().join("model.lp").exists());
}

#[test]
fn lp_bounds_never_exceed_interval_bounds() {
    let dir = tempdir().unwrap();
    let weights = train_toy(dir.path());
    let mut sets = Vec::new();
    for mode in ["interval", "lp"] {
        let out = dir.path().join(mode);
        let code = run(&["encode", "--weights", path(&weights), "--bounds", mode, "--out", path(&out)]);
        assert_eq!(code, 0);
        sets.push(parse_bounds(&fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap());
    }
    let (interval, lp) = (&sets[0], &sets[1]);
    let mut strictly_tighter = 0;
    for (a, b) in interval.layers.iter().zip(&lp.layers) {
        let pairs = a.post.iter().zip(&b.post).chain(a.pre.iter().flatten().zip(b.pre.iter().flatten()));
        for (i, t) in pairs {
            assert!(t.hi <= i.hi + 1e-9, "{t:?} vs {i:?}");
            assert!(t.lo >= i.lo - 1e-9, "{t:?} vs {i:?}");
            strictly_tighter += usize::from(t.hi < i.hi - 1e-9);
        }
    }
    assert!(strictly_tighter > 0);
}

#[test]
fn fixed_input_solve_reproduces_the_forward_pass() {
    let dir = tempdir().unwrap();
    let weights = train_toy(dir.path());
    let image = data("glyphs2").join("c1_001.txt");
    let fixed = format!("fixed:{}", path(&image));
    assert_eq!(run(&["encode", "--weights", path(&weights), "--input", &fixed, "--out", path(dir.path())]), 0);
    let code = run(&[
        "solve",
        "--model",
        path(&dir.path().join("model.lp")),
        "--varmap",
        path(&dir.path().join("model.varmap.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, 0);
    let solution = read_json(&dir.path().join("solution.json"));
    assert_eq!(solution["status"], "optimal");

    let net = load_network(&fs::read_to_string(&weights).unwrap()).unwrap();
    let img = net2milp::image::load_image(&image).unwrap();
    let input = net2milp_core::tensor::Tensor::new(vec![8, 8], img.pixels).unwrap();
    let trace = net2milp_core::network::forward(&net, &input).unwrap();
    let layers = solution["layer_outputs"].as_array().unwrap();
    assert_eq!(layers.len(), trace.post.len());
    for (got, want) in layers.iter().zip(&trace.post) {
        let got: Vec<f64> = got.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
        }
    }
}

#[test]
fn adversarial_is_verified_and_reverifies() {
    let dir = tempdir().unwrap();
    let weights = train_toy(dir.path());
    let image = data("glyphs2").join("c0_000.txt");
    let code = run(&[
        "adversarial",
        "--weights",
        path(&weights),
        "--image",
        path(&image),
        "--label",
        "0",
        "--target-rule",
        "explicit:1",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, 0);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["verified"], true);
    assert_eq!(report["label"], 1);
    assert!(report["achieved_margin"].as_f64().unwrap() >= 1.2 - 1e-6);
    assert!(report["max_change"].as_f64().unwrap() <= 0.2 + 1e-9);
    assert!(dir.path().join("adversarial.pgm").exists());

    let code = run(&[
        "verify",
        "--weights",
        path(&weights),
        "--report",
        path(&dir.path().join("report.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, 0);

    // push one pixel past the cap; verify must now refuse the report
    let mut tampered = report.clone();
    let original = tampered["original"][0].as_f64().unwrap();
    let pushed = if original > 0.5 { original - 0.3 } else { original + 0.3 };
    tampered["image"][0] = pushed.into();
    tampered["eps"][0] = (pushed - original).abs().into();
    let bad = dir.path().join("tampered.json");
    fs::write(&bad, tampered.to_string()).unwrap();
    let code = run(&["verify", "--weights", path(&weights), "--report", path(&bad), "--out", path(dir.path())]);
    assert_eq!(code, 3);
    let verdict = read_json(&dir.path().join("verify.json"));
    let failures = verdict["failures"].as_array().unwrap();
    assert!(failures.iter().any(|f| f.as_str().unwrap().starts_with("cap: pixel 0")), "{verdict}");
}

#[test]
fn zero_eps_cap_gives_a_certificate() {
    let dir = tempdir().unwrap();
    let weights = train_toy(dir.path());
    let code = run(&[
        "adversarial",
        "--weights",
        path(&weights),
        "--image",
        path(&data("glyphs2").join("c1_001.txt")),
        "--label",
        "1",
        "--target-rule",
        "explicit:0",
        "--eps-cap",
        "0",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, 2);
    let cert = read_json(&dir.path().join("certificate.json"));
    assert_eq!(cert["status"], "infeasible");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn target_equal_to_label_is_rejected() {
    let dir = tempdir().unwrap();
    let weights = train_toy(dir.path());
    let image = data("glyphs2").join("c1_001.txt");
    let args = |rule: &'static str, label: &'static str| {
        run(&[
            "adversarial",
            "--weights",
            path(&weights),
            "--image",
            path(&image),
            "--label",
            label,
            "--target-rule",
            rule,
            "--out",
            path(dir.path()),
        ])
    };
    assert_eq!(args("explicit:1", "1"), 1);
    // the oracle label is checked before anything else
    assert_eq!(args("explicit:1", "0"), 1);
    let manifest = read_json(&dir.path().join("adversarial.manifest.json"));
    assert!(manifest["result"]["error"].as_str().unwrap().contains("labels the image 1"));
    // plus-five needs ten classes
    assert_eq!(args("plus5", "1"), 1);
}

#[test]
fn caps_demos() {
    let dir = tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(run(&["caps", "--demo", "params", "--out", out]), 0);
    let params = fs::read_to_string(dir.path().join("caps-params.txt")).unwrap();
    for n in ["20992", "5373952", "1497600", "6892544", "8221456"] {
        assert!(params.lines().any(|l| l.ends_with(&format!(" {n}"))), "{n} missing from\n{params}");
    }

    assert_eq!(run(&["caps", "--demo", "routing", "--out", out]), 0);
    let routing = fs::read_to_string(dir.path().join("caps-routing.txt")).unwrap();
    let first: Vec<&str> = routing.lines().skip(1).take(2).collect();
    assert_eq!(first, ["  c[0] = [0.500000, 0.500000]", "  c[1] = [0.500000, 0.500000]"]);
    assert!(routing.contains("iteration 3"));

    assert_eq!(run(&["caps", "--demo", "squash", "--vector", "0.6,-0.8", "--out", out]), 0);
    let squash = fs::read_to_string(dir.path().join("caps-squash.txt")).unwrap();
    assert!(squash.contains("|squash| = 0.5\n"), "{squash}");
}

#[test]
fn big_m_export_reads_back_without_indicators() {
    let dir = tempdir().unwrap();
    assert_eq!(run(&["encode", "--weights", path(&data("one_unit.json")), "--out", path(dir.path())]), 0);
    let model = dir.path().join("model.lp");
    assert_eq!(run(&["export-lp", "--model", path(&model), "--big-m", "--out", path(dir.path())]), 0);
    let exported = read_lp(&fs::read_to_string(dir.path().join("export.lp")).unwrap()).unwrap();
    assert!(exported.indicators().is_empty());
    assert_eq!(exported.num_vars(), 4);
}

#[test]
fn usage_errors_and_help() {
    let dir = tempdir().unwrap();
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["caps", "--demo", "squash", "--vector", "a,b", "--out", path(dir.path())]), 1);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"solver":{"nodes":3}}"#).unwrap();
    assert_eq!(run(&["caps", "--demo", "params", "--config", path(&cfg), "--out", path(dir.path())]), 1);
}

#[test]
fn manifests_are_byte_identical_under_reproducible() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    for d in [&a, &b] {
        let code = run(&[
            "encode",
            "--weights",
            path(&data("one_unit.json")),
            "--bounds",
            "lp",
            "--threads",
            "1",
            "--seed",
            "4",
            "--reproducible",
            "--out",
            path(d.path()),
        ]);
        assert_eq!(code, 0);
    }
    for file in ["encode.manifest.json", "model.lp", "bounds.json", "model.varmap.json"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let manifest = read_json(&a.path().join("encode.manifest.json"));
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["wall_time_seconds"], 0.0);
}
