use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mpcd_cli::commands::{
    DetectArgs, EvalArgs, MetricsFile, ReportArgs, Split, SynthArgs, TrainArgs, DETECTIONS_FILE, LABEL_FILE,
    METRICS_FILE, TRACE_FILE,
};
use mpcd_cli::{cmd_detect, cmd_eval, cmd_replay, cmd_report, cmd_synth, cmd_train, RunManifest};
use mpcd_core::data::load_pdp_csv;
use mpcd_core::zoo::Arch;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpcd"))
}

fn synth_args(out: &Path, records: usize, length: usize) -> SynthArgs {
    let mut a = parse_synth(&["--records", &records.to_string(), "--length", &length.to_string(), "--seed", "3"]);
    a.out = Some(out.to_path_buf());
    a
}

fn parse_synth(flags: &[&str]) -> SynthArgs {
    use clap::Parser;
    #[derive(Parser)]
    struct W {
        #[command(flatten)]
        a: SynthArgs,
    }
    let mut argv = vec!["synth"];
    argv.extend_from_slice(flags);
    W::parse_from(argv).a
}

fn small_pipeline(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let data = root.join("data");
    let mut s = synth_args(&data, 12, 120);
    s.n_peaks_min = 1;
    s.n_peaks_max = 3;
    s.first_arrival_max = 30;
    cmd_synth(&s).unwrap();
    let model = root.join("model");
    cmd_train(&TrainArgs {
        arch: Arch::Transformer,
        data: data.clone(),
        split: Split::Train,
        chunk: None,
        lr: 0.005,
        epochs: 3,
        batch: 4,
        val_fraction: 0.2,
        patience: 2,
        augment_variants: 2,
        seed: 7,
        quiet: true,
        out: Some(model.clone()),
    })
    .unwrap();
    let det = root.join("det");
    cmd_detect(&detect_args(&model, &data, &det, 2.0)).unwrap();
    (data, model, det)
}

fn detect_args(model: &Path, data: &Path, out: &Path, k: f64) -> DetectArgs {
    DetectArgs {
        model: model.to_path_buf(),
        data: data.to_path_buf(),
        split: Split::Test,
        threshold_k: k,
        eps1: 3.0,
        min_pts1: 2,
        eps2: 10.0,
        min_pts2: 1,
        out: Some(out.to_path_buf()),
    }
}

fn eval_args(det: &Path, data: &Path, out: &Path, tolerance: usize) -> EvalArgs {
    EvalArgs {
        detections: Some(det.to_path_buf()),
        labels: None,
        data: Some(data.to_path_buf()),
        split: Some(Split::Test),
        tolerance,
        check_published: false,
        out: Some(out.to_path_buf()),
    }
}

fn metrics(dir: &Path) -> MetricsFile {
    serde_json::from_str(&fs::read_to_string(dir.join(METRICS_FILE)).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic_and_loads() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    cmd_synth(&synth_args(&a, 80, 820)).unwrap();
    cmd_synth(&synth_args(&b, 80, 820)).unwrap();
    for f in ["pdp.csv", "labels.csv", "synth_spec.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let set = load_pdp_csv(&a.join("pdp.csv"), &a.join(LABEL_FILE)).unwrap();
    assert_eq!((set.len(), set.length()), (80, 820));
    let m = RunManifest::read(&a.join("synth_manifest.json")).unwrap();
    assert_eq!(m.outputs.len(), 3);
    assert_eq!(m.args["records"], 80);
}

#[test]
fn single_record_synth_succeeds_but_split_fails() {
    let t = tempfile::tempdir().unwrap();
    cmd_synth(&synth_args(t.path(), 1, 200)).unwrap();
    let err = cmd_detect(&detect_args(t.path(), t.path(), t.path(), 2.0)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = bin().args(["train", "--arch", "mlp", "--data", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("--arch") && msg.contains("--help"), "{msg}");

    let data = t.path().join("d");
    cmd_synth(&synth_args(&data, 4, 300)).unwrap();
    let out = bin()
        .args(["train", "--arch", "cnn", "--chunk", "50", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(t.path().join("m"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin().args(["eval", "--detections", "/nonexistent.csv", "--labels", "/nonexistent.csv"]).arg("--out").arg(t.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn out_dir_defaults_to_env() {
    let t = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["synth", "--records", "3", "--length", "150"])
        .env("MPCD_OUT_DIR", t.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(t.path().join("pdp.csv").exists());
}

#[test]
fn published_f1_check() {
    let t = tempfile::tempdir().unwrap();
    let out = bin().args(["eval", "--check-table2", "--out"]).arg(t.path()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["-> 0.47", "-> 0.45", "-> 0.48", "-> 0.66"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
}

#[test]
fn pipeline_end_to_end_small() {
    let t = tempfile::tempdir().unwrap();
    let (data, model, det) = small_pipeline(t.path());

    let loss = fs::read_to_string(model.join("loss_history.csv")).unwrap();
    assert!(loss.lines().count() - 1 <= 3);

    let trace = fs::read_to_string(det.join(TRACE_FILE)).unwrap();
    assert_eq!(trace.lines().count() - 1, 6 * 120);

    let none = t.path().join("none");
    cmd_detect(&detect_args(&model, &data, &none, 1e9)).unwrap();
    assert_eq!(fs::read_to_string(none.join(DETECTIONS_FILE)).unwrap().lines().count(), 1);

    let (e0, e5) = (t.path().join("e0"), t.path().join("e5"));
    cmd_eval(&eval_args(&det.join(DETECTIONS_FILE), &data, &e0, 0)).unwrap();
    cmd_eval(&eval_args(&det.join(DETECTIONS_FILE), &data, &e5, 5)).unwrap();
    let (m0, m5) = (metrics(&e0), metrics(&e5));
    assert!(m0.aggregate.tp <= m5.aggregate.tp);
    assert_eq!(m5.records.len(), 6);
    assert!(m5.detection_config.is_some());
    assert!(m5.model_manifest_sha256.is_some());

    // Replaying every manifest reproduces the same bytes.
    let again = t.path().join("again");
    cmd_replay(&det.join("detect_manifest.json"), Some(again.clone())).unwrap();
    for f in [DETECTIONS_FILE, TRACE_FILE] {
        assert_eq!(fs::read(det.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }
    let model2 = t.path().join("model2");
    cmd_replay(&model.join("train_manifest.json"), Some(model2.clone())).unwrap();
    assert_eq!(fs::read(model.join("model.ckpt")).unwrap(), fs::read(model2.join("model.ckpt")).unwrap());
}

#[test]
fn perfect_detections_score_one() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("d");
    cmd_synth(&synth_args(&data, 10, 300)).unwrap();
    let set = load_pdp_csv(&data.join("pdp.csv"), &data.join(LABEL_FILE)).unwrap();
    let mut csv = String::from("id,peak_index,power_db,recon_error\n");
    for r in set.records() {
        for &l in r.labels() {
            csv.push_str(&format!("{},{l},{:?},0.1\n", r.id(), r.powers()[l]));
        }
    }
    let det = t.path().join("det.csv");
    fs::write(&det, csv).unwrap();
    let out = t.path().join("e");
    cmd_eval(&EvalArgs {
        split: None,
        ..eval_args(&det, &data, &out, 0)
    })
    .unwrap();
    let m = metrics(&out);
    assert_eq!((m.aggregate.precision, m.aggregate.recall, m.aggregate.f1), (1.0, 1.0, 1.0));
}

fn count(doc: &roxmltree::Document, tag: &str) -> usize {
    doc.descendants().filter(|n| n.has_tag_name(tag)).count()
}

#[test]
fn report_svg_structure() {
    let t = tempfile::tempdir().unwrap();
    let (data, model, det) = small_pipeline(t.path());
    let report = |id: u64, trace: &Path, name: &str| {
        cmd_report(&ReportArgs {
            trace: trace.to_path_buf(),
            labels: data.join(LABEL_FILE),
            id,
            out: Some(t.path().join(name)),
        })
    };
    let svg_path = report(1, &det.join(TRACE_FILE), "a.svg").unwrap();
    let text = fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(count(&doc, "polyline"), 2);
    assert!(count(&doc, "line") >= 1);

    let again = report(1, &det.join(TRACE_FILE), "b.svg").unwrap();
    assert_eq!(fs::read(&svg_path).unwrap(), fs::read(again).unwrap());

    // With an unreachable threshold nothing is marked.
    let none = t.path().join("none");
    cmd_detect(&detect_args(&model, &data, &none, 1e9)).unwrap();
    let quiet = report(1, &none.join(TRACE_FILE), "c.svg").unwrap();
    let text = fs::read_to_string(quiet).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(count(&doc, "circle"), 0);
    assert_eq!(count(&doc, "polyline"), 2);

    let err = report(999, &det.join(TRACE_FILE), "d.svg").unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let out = bin()
        .args(["report", "--id", "999", "--trace"])
        .arg(det.join(TRACE_FILE))
        .arg("--labels")
        .arg(data.join(LABEL_FILE))
        .arg("--out")
        .arg(t.path().join("e.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
