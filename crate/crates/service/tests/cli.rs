use std::path::Path;
use std::process::{Command, Output};

use hypersem::store;
use hypersem_core::geometry;
use hypersem_core::oracle::{self, GeneratorConfig};
use serde_json::Value;

fn hypersem(args: &[&str], home: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypersem"))
        .args(args)
        .env(store::HOME_ENV, home)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verify_property2_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p2.json");
    let o = hypersem(&["verify", "--property2", "--d", "512", "--alpha", "2", "--trials", "200000", "--seed", "0", "--out", p(&out)], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&out);
    assert_eq!(rep["passed"], Value::Bool(true));
    assert_eq!(rep["d"], 512);
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tail.json");
    // mass beyond one standard deviation is far above 1e-6
    let o = hypersem(&["verify", "--tail", "--d", "16", "--threshold", "1", "--limit", "1e-6", "--trials", "20000", "--out", p(&out)], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_json(&out)["passed"], Value::Bool(false));
}

#[test]
fn sample_fit_and_edit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("gen.json");
    let data = d.join("samples.lsds");
    let age = d.join("age.json");
    let o = hypersem(&["gen-config", "--dim", "64", "--seed", "0", "--out", p(&cfg)], d);
    assert!(o.status.success());
    let o = hypersem(&["sample", "--config", p(&cfg), "--count", "10000", "--seed", "3", "--out", p(&data)], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = hypersem(
        &["fit", "--config", p(&cfg), "--data", p(&data), "--attr", "age", "--candidates", "400", "--seed", "1", "--out", p(&age)],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let boundary = store::decode(&std::fs::read_to_string(&age).unwrap(), &age).unwrap();
    assert!(boundary.meta().val_accuracy >= 0.95, "{}", boundary.meta().val_accuracy);
    let gen = oracle::make_generator(GeneratorConfig::default().with_dim(64)).unwrap();
    let cos = geometry::cosine(&boundary, &gen.ground_truth("age").unwrap()).unwrap();
    assert!(cos >= 0.9, "{cos}");

    // a full fit into a store directory, then a conditioned edit against it
    let bdir = d.join("boundaries");
    let o = hypersem(&["fit", "--config", p(&cfg), "--data", p(&data), "--candidates", "400", "--out", p(&bdir), "--report", p(&d.join("fit.json"))], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_json(&d.join("fit.json")).as_array().unwrap().len() == 6);
    let edited = d.join("edit.json");
    let o = hypersem(
        &[
            "edit", "--config", p(&cfg), "--boundaries", p(&bdir), "--attr", "age", "--alpha", "-2", "--condition", "gender", "--seed",
            "4", "--out", p(&edited),
        ],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e = read_json(&edited);
    assert!(e["direction"]["cosines"]["gender"].as_f64().unwrap().abs() <= 1e-9);

    let report = d.join("corr.json");
    let o = hypersem(&["correlate", "--config", p(&cfg), "--data", p(&data), "--boundaries", p(&bdir), "--out", p(&report)], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&report)["attributes"].as_array().unwrap().len(), 5);
}

#[test]
fn unknown_attribute_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("gen.json");
    assert!(hypersem(&["gen-config", "--dim", "32", "--out", p(&cfg)], d).status.success());
    let out = d.join("edit.json");
    let o = hypersem(&["edit", "--config", p(&cfg), "--ground-truth", "--attr", "hair", "--alpha", "1", "--out", p(&out)], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hair"));
    assert!(!out.exists());

    let o = hypersem(&["fit", "--config", p(&cfg), "--attr", "hair", "--out", p(&out)], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hair"));
}

#[test]
fn io_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope.lsds");
    let o = hypersem(&["correlate", "--data", p(&missing), "--out", p(&d.join("c.json"))], d);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = hypersem(&["render", "--config", p(&d.join("missing.json")), "--out", p(&d.join("f.svg"))], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("gen.json");
    std::fs::write(&cfg, "{\"dim\": ").unwrap();
    let o = hypersem(&["render", "--config", p(&cfg), "--out", p(&d.join("f.svg"))], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
    let o = hypersem(&["verify", "--out", p(&d.join("x.json"))], d);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn render_and_invert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("gen.json");
    assert!(hypersem(&["gen-config", "--dim", "64", "--out", p(&cfg)], d).status.success());
    let svg = d.join("face.svg");
    let o = hypersem(&["render", "--config", p(&cfg), "--seed", "8", "--out", p(&svg)], d);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let gen = oracle::make_generator(GeneratorConfig::default().with_dim(64)).unwrap();
    let z = geometry::LatentCode::new(hypersem_core::rng::normal_vec(&mut hypersem_core::rng::seeded(8), 64), geometry::Space::Z).unwrap();
    let target = gen.face_params(&z).unwrap();
    let tpath = d.join("target.json");
    std::fs::write(&tpath, serde_json::to_string(&target).unwrap()).unwrap();
    let out = d.join("inv.json");
    let o = hypersem(&["invert", "--config", p(&cfg), "--target", p(&tpath), "--seed", "2", "--out", p(&out)], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let face: oracle::FaceParams = serde_json::from_value(read_json(&out)["face"].clone()).unwrap();
    assert!(face.max_abs_diff(&target) <= 1e-3);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = d.join("a.lsds");
    let b = d.join("b.lsds");
    for out in [&a, &b] {
        let cfg = d.join("gen.json");
        assert!(hypersem(&["gen-config", "--dim", "16", "--seed", "5", "--out", p(&cfg)], d).status.success());
        assert!(hypersem(&["sample", "--config", p(&cfg), "--count", "3000", "--seed", "9", "--out", p(out)], d).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
