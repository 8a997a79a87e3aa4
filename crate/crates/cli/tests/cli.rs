mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fssl_cli::commands::{
    cmd_finetune, cmd_generate, cmd_matrix, Dataset, InitSource, PretrainMode, Workspace,
};
use fssl_cli::config::{ExperimentConfig, Preset, RESOLVED_CONFIG};
use fssl_cli::error::{EXIT_CONFIG, EXIT_DATA};
use fssl_cli::report::{collect_reports, FinetuneReport};
use fssl_core::data::{read_manifest, Label, Site, Split};
use fssl_core::ModelSnapshot;

fn small_workspace(out: &Path) -> Workspace {
    let cfg = ExperimentConfig::parse(common::SMALL_CONFIG, Path::new("small.toml")).unwrap();
    Workspace::new(&cfg, None, Some(out)).unwrap()
}

fn fssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fssl"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_is_idempotent_and_creates_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("nested/one");
    let second = tmp.path().join("two");
    cmd_generate(&small_workspace(&first)).unwrap();
    cmd_generate(&small_workspace(&second)).unwrap();
    let a = common::tree(&first.join("data"));
    assert!(a.iter().any(|(p, _)| p == RESOLVED_CONFIG));
    assert!(a.len() > 100);
    assert_eq!(a, common::tree(&second.join("data")));
    cmd_generate(&small_workspace(&first)).unwrap();
    assert_eq!(a, common::tree(&first.join("data")));
}

#[test]
fn cohort_manifests_match_reference_totals() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.preset = Preset::Cohort;
    let ws = Workspace::new(&cfg, Some(1), Some(tmp.path())).unwrap();
    cmd_generate(&ws).unwrap();
    // (split, case images, control images, all images) per site
    let expected = [
        (Site::A, [(Split::Train, 182, 361, 2029), (Split::Valid, 44, 90, 520), (Split::Test, 49, 99, 148)]),
        (Site::B, [(Split::Train, 248, 481, 3145), (Split::Valid, 62, 120, 791), (Split::Test, 68, 130, 198)]),
    ];
    for (site, rows) in expected {
        let samples = read_manifest(&ws.data_dir().join(format!("manifest_{site}.csv"))).unwrap();
        for (split, case, control, total) in rows {
            let in_split: Vec<_> = samples.iter().filter(|s| s.split == split).collect();
            let count = |l| in_split.iter().filter(|s| s.label == l).count();
            assert_eq!(
                (count(Label::Case), count(Label::Control), in_split.len()),
                (case, control, total),
                "site {site} {split:?}"
            );
        }
    }
}

#[test]
fn pretrain_without_data_is_actionable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = fssl(&["--out", out, "pretrain", "--mode", "ssl_A"]);
    assert_eq!(o.status.code(), Some(EXIT_DATA));
    assert!(stderr(&o).contains("fssl generate"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[ssl]\nlearning_rate = 0.1\n").unwrap();
    let o = fssl(&["--config", bad.to_str().unwrap(), "generate"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&o).contains("learning_rate"));

    fs::write(&bad, "[ssl]\ntemperature = -1.0\n").unwrap();
    let o = fssl(&["--config", bad.to_str().unwrap(), "generate"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));

    let o = fssl(&["--out", tmp.path().to_str().unwrap(), "finetune", "--init", "snapshot", "--site", "A"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn report_without_runs_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fssl(&["--out", tmp.path().to_str().unwrap(), "report"]);
    assert_eq!(o.status.code(), Some(EXIT_DATA));
    assert!(stderr(&o).contains("no reports"));
}

#[test]
fn pretrain_modes_scope_their_images() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_config(tmp.path());
    let out = tmp.path().join("run");
    let base = [
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        let o = fssl(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        stderr(&o)
    };
    run(&["generate"]);
    let data = Dataset::load(&out.join("data")).unwrap();
    let a_train = data.pool(Site::A, Split::Train).len();
    let b_train = data.pool(Site::B, Split::Train).len();

    let log = run(&["pretrain", "--mode", "ssl_A"]);
    assert!(log.contains(&format!("ssl_A: {a_train} training")), "{log}");
    let log = run(&["pretrain", "--mode", "cssl"]);
    assert!(log.contains(&format!("pooled {} training", a_train + b_train)), "{log}");

    let path = out.join("pretrain/ssl_A/model.fssl");
    let bytes = fs::read(&path).unwrap();
    let snap = ModelSnapshot::from_bytes(&bytes).unwrap();
    assert_eq!(snap.to_bytes(), bytes);
    assert!(out.join("pretrain/ssl_A/history.csv").is_file());
    assert!(out.join("pretrain/cssl").join(RESOLVED_CONFIG).is_file());
}

#[test]
fn finetune_reports_and_rejects_corrupt_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    cmd_generate(&ws).unwrap();
    let report = cmd_finetune(&ws, &InitSource::Random, Site::B).unwrap();
    let dir = ws.finetune_dir("random", Site::B);
    for f in ["report.json", "roc.csv", "predictions.csv", "history.csv", RESOLVED_CONFIG] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let first = fs::read(dir.join("report.json")).unwrap();
    let parsed: FinetuneReport = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed, report);
    assert_eq!(report.tp + report.fp + report.tn + report.fn_, ws_test_count(&ws, Site::B));
    assert!(report.epochs_ran >= 1 && report.epochs_ran <= 3);

    cmd_finetune(&ws, &InitSource::Random, Site::B).unwrap();
    assert_eq!(fs::read(dir.join("report.json")).unwrap(), first);

    let snapshot = tmp.path().join("broken.fssl");
    let mut bytes = ModelSnapshot::to_bytes(&fssl_core::model::build_encoder(&ws.config.backbone).unwrap());
    bytes.truncate(bytes.len() / 2);
    fs::write(&snapshot, bytes).unwrap();
    let o = fssl(&[
        "--out",
        tmp.path().to_str().unwrap(),
        "finetune",
        "--init",
        "snapshot",
        "--snapshot",
        snapshot.to_str().unwrap(),
        "--site",
        "A",
    ]);
    assert_eq!(o.status.code(), Some(EXIT_DATA), "{}", stderr(&o));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

fn ws_test_count(ws: &Workspace, site: Site) -> usize {
    Dataset::load(&ws.data_dir()).unwrap().labeled(site, Split::Test).len()
}

#[test]
fn matrix_emits_twelve_reports_and_a_full_table() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = small_workspace(tmp.path());
    let text = cmd_matrix(&ws).unwrap();
    let reports = collect_reports(&ws.finetune_root()).unwrap();
    assert_eq!(reports.len(), 12);
    for mode in PretrainMode::ALL {
        assert!(ws.snapshot_path(mode).is_file(), "{mode}");
    }
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["random", "ssl", "cssl", "csfssl", "ppfssl_A", "ppfssl_B"]);
    assert!(!csv.contains('—'));
    assert_eq!(fs::read_to_string(tmp.path().join("report.txt")).unwrap(), text);

    let ssl_b = reports.iter().find(|r| r.method == "ssl" && r.site == Site::B).unwrap();
    let row = csv.lines().find(|l| l.starts_with("ssl,")).unwrap();
    let cells: Vec<f64> = row.split(',').skip(6).map(|c| c.parse().unwrap()).collect();
    assert_eq!(cells, ssl_b.values());
    assert!(tmp.path().join("pretrain/csfssl/rounds.csv").is_file());

    let model = ModelSnapshot::load(&ws.snapshot_path(PretrainMode::PpfsslB)).unwrap();
    let other = ModelSnapshot::load(&ws.snapshot_path(PretrainMode::PpfsslA)).unwrap();
    assert!(!model.bit_eq(&other));
}
