use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crystalmask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crystalmask"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--seed", "11", "--n-scenes", "2", "--width", "96", "--height", "96", "--n-crystals", "8", "--out-dir", p(dir)];
    args.extend_from_slice(extra);
    let out = crystalmask(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(seg: &Path, cls: &Path, images: &Path, gt: &Path, out_dir: &Path) -> Output {
    crystalmask(&[
        "pipeline",
        "--seg-dir",
        p(seg),
        "--cls-dir",
        p(cls),
        "--image-dir",
        p(images),
        "--gt-dir",
        p(gt),
        "--out-dir",
        p(out_dir),
    ])
}

#[test]
fn empty_directories_give_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out_dir = tmp.path().join("out");
    let out = pipeline(&empty, &empty, &empty, &empty, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["per_image"].as_array().unwrap().len(), 0);
    assert!(report["pooled"]["tpr"].is_null());
}

#[test]
fn ground_truth_as_predictions_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    // isolated crystals only: post-processing leaves them untouched
    synth(&data, &["--agglomeration-rate", "0"]);
    let gt = data.join("gt");
    let out_dir = tmp.path().join("out");
    let out = pipeline(&gt, &gt, &data.join("images"), &gt, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let pooled = &report["pooled"];
    for key in ["high_corr", "low_corr", "map50", "recall50"] {
        assert_eq!(pooled[key].as_f64(), Some(100.0), "{key}: {pooled}");
    }
    for key in ["high_chi2", "low_chi2", "res_err"] {
        assert_eq!(pooled[key].as_f64(), Some(0.0), "{key}: {pooled}");
    }
    for stem in ["scene_0000", "scene_0001"] {
        assert_eq!(
            fs::read(out_dir.join(format!("{stem}.pred.json"))).unwrap(),
            fs::read(gt.join(format!("{stem}.json"))).unwrap()
        );
    }
}

#[test]
fn missing_counterpart_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--predictions"]);
    fs::remove_file(data.join("cls/scene_0001.json")).unwrap();
    let out_dir = tmp.path().join("out");
    let out = pipeline(&data.join("seg"), &data.join("cls"), &data.join("images"), &data.join("gt"), &out_dir);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("scene_0001"), "{stderr}");
    assert!(!out_dir.join("report.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--predictions"]);
    let run = |name: &str, jobs: &str| {
        let out_dir = tmp.path().join(name);
        let out = crystalmask(&[
            "--jobs",
            jobs,
            "pipeline",
            "--seg-dir",
            p(&data.join("seg")),
            "--cls-dir",
            p(&data.join("cls")),
            "--image-dir",
            p(&data.join("images")),
            "--gt-dir",
            p(&data.join("gt")),
            "--agg-dir",
            p(&data.join("regions")),
            "--out-dir",
            p(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut files: Vec<_> = fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files
            .into_iter()
            .map(|f| (f.file_name().unwrap().to_owned(), fs::read(&f).unwrap()))
            .collect::<Vec<_>>()
    };
    let first = run("a", "1");
    assert_eq!(first.len(), 4);
    assert_eq!(first, run("b", "4"));
}

#[test]
fn single_file_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--predictions"]);
    let gt = data.join("gt/scene_0000.json");
    let seg = data.join("seg/scene_0000.json");
    let image = data.join("images/scene_0000.png");
    let regions = data.join("regions/scene_0000.json");
    let post = tmp.path().join("post.json");
    let labeled = tmp.path().join("labeled.json");
    let refined = tmp.path().join("refined.json");
    let blurred = tmp.path().join("blur.png");
    let report = tmp.path().join("report.json");

    let ok = |args: &[&str]| {
        let out = crystalmask(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["postprocess", "--instances", p(&seg), "--image", p(&image), "-o", p(&post)]);
    ok(&["pseudolabel", "--instances", p(&post), "--regions", p(&regions), "-o", p(&labeled)]);
    ok(&["refine", "--seg", p(&post), "--cls", p(&gt), "-o", p(&refined)]);
    ok(&["blur", "--image", p(&image), "--instances", p(&gt), "--window", "33", "-o", p(&blurred)]);
    let out = ok(&["evaluate", "--pred", p(&gt), "--gt", p(&gt), "--json", p(&report)]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("image"), "{table}");
    assert!(table.lines().last().unwrap().starts_with("pooled"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["pooled"]["map50"].as_f64(), Some(100.0));
    assert_eq!(json["pooled"]["tpr"].as_f64(), Some(100.0));
}

#[test]
fn exit_codes() {
    assert_eq!(crystalmask(&["--help"]).status.code(), Some(0));
    assert_eq!(crystalmask(&["--version"]).status.code(), Some(0));
    assert_eq!(crystalmask(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(crystalmask(&["evaluate", "--pred", "x.json"]).status.code(), Some(1));
    assert_eq!(crystalmask(&["--bins", "0", "evaluate", "--pred", "a", "--gt", "b"]).status.code(), Some(1));
    assert_eq!(crystalmask(&["evaluate", "--pred", "/nonexistent/a.json", "--gt", "/nonexistent/b.json"]).status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"width":2,"height":1,"instances":[],"extra":1}"#).unwrap();
    let args = ["evaluate", "--pred", p(&bad), "--gt", p(&bad)];
    assert_eq!(crystalmask(&args).status.code(), Some(2));
    let mut lenient = vec!["--strict-json", "false"];
    lenient.extend_from_slice(&args);
    assert_eq!(crystalmask(&lenient).status.code(), Some(0));
}
