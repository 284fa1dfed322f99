use std::fs;

use fedmgp::aggregation::Strategy;
use fedmgp::commands::{cmd_compare, cmd_report, cmd_run, cmd_verify, RunOptions};
use fedmgp::config::parse_config_str;
use fedmgp::report::{parse_table, sha256_hex};
use fedmgp::Error;

fn small_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        "# tiny world\nn_clients = 3\nrounds = 2\nn_classes = 6\ninput_dim = 24\nfeature_dim = 24\n\
         train_per_class = 4\neval_per_class = 3\ngroups = 3\nselect_s = 2\n",
    )
    .unwrap();
    path
}

fn opts(dir: &std::path::Path, name: &str) -> RunOptions {
    RunOptions {
        config: Some(small_config(dir)),
        out: dir.join(name),
        seed: Some(7),
        ..RunOptions::default()
    }
}

#[test]
fn replay_reproduces_every_digest() {
    let dir = tempfile::tempdir().unwrap();
    let a = cmd_run(&opts(dir.path(), "a")).unwrap();
    let b = cmd_run(&opts(dir.path(), "b")).unwrap();
    assert_eq!(a.manifest.files, b.manifest.files);
    for f in &a.manifest.files {
        let bytes = fs::read(dir.path().join("a").join(&f.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
    }
    let echoed = parse_config_str(&a.manifest.config).unwrap();
    assert_eq!(echoed, a.config);
}

#[test]
fn metrics_csv_has_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&opts(dir.path(), "run")).unwrap();
    let text = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(text.starts_with("# schema: "));
    let (header, rows) = parse_table(&text);
    assert_eq!(
        header,
        "round,client,strategy,loss_ce,loss_div,acc_local,acc_base,acc_novel,hm,cm,min_snr,alpha_g,uplink_scalars"
            .split(',')
            .collect::<Vec<_>>()
    );
    // 2 rounds × (3 clients + mean row)
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r[1] == "mean").count(), 2);
}

#[test]
fn full_strategy_traces_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let o = RunOptions {
        strategy: Some(Strategy::Full),
        ..opts(dir.path(), "full")
    };
    cmd_run(&o).unwrap();
    let (header, rows) = parse_table(&fs::read_to_string(dir.path().join("full/selection_trace.csv")).unwrap());
    let sel = header.iter().position(|h| h == "selected").unwrap();
    // 2 rounds × 3 clients × 2 modalities × 3 groups
    assert_eq!(rows.len(), 36);
    assert!(rows.iter().all(|r| r[sel] == "1"));
}

#[test]
fn unwritable_output_leaves_no_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let o = RunOptions {
        out: blocker.join("run"),
        ..opts(dir.path(), "unused")
    };
    assert!(matches!(cmd_run(&o), Err(Error::File { .. })));
    assert!(!blocker.join("run/manifest.json").exists());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "groups = 5\nselect_s = 7\n").unwrap();
    let o = RunOptions {
        config: Some(path),
        out: dir.path().join("out"),
        ..RunOptions::default()
    };
    assert!(matches!(cmd_run(&o), Err(Error::Validation(_))));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn report_reads_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&opts(dir.path(), "run")).unwrap();
    let lines = cmd_report(&dir.path().join("run")).unwrap();
    assert_eq!(lines[0], "strategy: dynamic");
    assert!(lines.iter().any(|l| l.starts_with("round 2: cm ")));
    let (_, rows) = parse_table(&fs::read_to_string(dir.path().join("run/selection_frequency.csv")).unwrap());
    // 2 rounds × 2 modalities × 3 groups
    assert_eq!(rows.len(), 12);
}

#[test]
fn compare_full_against_dynamic_all_gives_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let rows = cmd_compare(
        Some(&cfg),
        &["full".into(), "dynamic(policy=all, aggregation=ordinal)".into()],
        &[0, 1],
        &dir.path().join("cmp"),
        None,
    )
    .unwrap();
    assert_eq!(rows[0].local, rows[1].local);
    assert_eq!(rows[0].cm, rows[1].cm);
    assert_eq!(rows[0].min_snr, rows[1].min_snr);
    assert!(dir.path().join("cmp/compare.csv").exists());
    assert!(matches!(
        cmd_compare(Some(&cfg), &["full".into()], &[0], &dir.path().join("x"), None),
        Err(Error::Validation(_))
    ));
}

#[test]
fn verify_passes_on_a_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let v = cmd_verify(dir.path(), 0).unwrap();
    assert!(v.failed.is_empty(), "{:?}", v.failed);
    let (header, rows) = parse_table(&fs::read_to_string(dir.path().join("verify_report.csv")).unwrap());
    let measured = header.iter().position(|h| h == "measured").unwrap();
    let slope: f64 = rows.iter().find(|r| r[0] == "noise_scaling_slope").unwrap()[measured].parse().unwrap();
    assert!((-1.15..=-0.85).contains(&slope));
}
