use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poolsmooth::io::{
    read_estimate_csv, read_json, read_table_csv, write_individual_csv, write_pooled_csv,
};
use poolsmooth::simulation::{sample_replicate, Curve, LawKind, SimulationModel, SummaryCell};
use poolsmooth::{pool_homogeneous, EstimatorTag, RawDataset};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolsmooth"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sample() -> RawDataset {
    sample_replicate(
        &SimulationModel::standard(Curve::Iii, LawKind::Uniform),
        1500,
        11,
    )
}

fn write_individual(dir: &Path) -> PathBuf {
    let path = dir.join("individual.csv");
    write_individual_csv(&sample(), &path).unwrap();
    path
}

#[test]
fn pooled_file_matches_pooling_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    write_individual(dir.path());
    let pooled = pool_homogeneous(&sample(), 5).unwrap();
    write_pooled_csv(&pooled, &dir.path().join("pooled.csv")).unwrap();

    let a = run(
        &[
            "estimate",
            "--input",
            "individual.csv",
            "--nu",
            "5",
            "--grid",
            "0.1:0.9:9",
            "--out",
            "a",
        ],
        dir.path(),
    );
    assert!(a.status.success(), "{}", stderr(&a));
    let b = run(
        &[
            "estimate",
            "--input",
            "pooled.csv",
            "--grid",
            "0.1:0.9:9",
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert!(b.status.success(), "{}", stderr(&b));

    let ea = read_estimate_csv(&dir.path().join("a/estimate.csv")).unwrap();
    let eb = read_estimate_csv(&dir.path().join("b/estimate.csv")).unwrap();
    assert_eq!(ea.estimator, EstimatorTag::Dh);
    assert_eq!(ea.p_hat, eb.p_hat);
    assert_eq!(ea.bandwidth_used, eb.bandwidth_used);
}

#[test]
fn random_commands_refuse_to_run_unseeded() {
    let dir = tempfile::tempdir().unwrap();
    write_individual(dir.path());
    for args in [
        vec!["simulate", "--replicates", "2"],
        vec!["rate"],
        vec!["overpool"],
        vec![
            "estimate",
            "--input",
            "individual.csv",
            "--estimator",
            "DM",
            "--nu",
            "5",
        ],
    ] {
        let o = run(&args, dir.path());
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(stderr(&o).contains("--seed"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_outcomes_are_explained() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.csv"), "x\n0.1\n0.5\n0.9\n").unwrap();
    let o = run(&["estimate", "--input", "x.csv", "--nu", "5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no y column"), "{}", stderr(&o));
}

#[test]
fn malformed_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    write_individual(dir.path());
    for args in [
        vec![
            "estimate",
            "--input",
            "individual.csv",
            "--bandwidth",
            "auto",
        ],
        vec!["estimate", "--input", "individual.csv", "--grid", "1:0:5"],
        vec!["estimate", "--input", "individual.csv", "--nu", "2.5"],
        vec![
            "estimate",
            "--input",
            "individual.csv",
            "--kernel",
            "cosine",
            "--nu",
            "5",
        ],
        vec!["estimate", "--input", "absent.csv"],
    ] {
        let o = run(&args, dir.path());
        assert!(!o.status.success(), "{args:?} succeeded");
    }
}

const TABLE_ARGS: [&str; 10] = [
    "--model",
    "iii",
    "--n",
    "800",
    "--nu",
    "5",
    "--replicates",
    "6",
    "--estimator",
    "LL,DH",
];

#[test]
fn simulate_is_reproducible_and_config_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 3\n[simulate]\nformat = [\"csv\", \"json\"]\n",
    )
    .unwrap();

    let mut par = vec!["--config", "run.toml", "simulate", "--out", "par"];
    par.extend(TABLE_ARGS);
    let mut seq = vec![
        "simulate",
        "--seed",
        "3",
        "--sequential",
        "--format",
        "csv",
        "--out",
        "seq",
    ];
    seq.extend(TABLE_ARGS);
    let mut other = vec![
        "simulate", "--config", "run.toml", "--seed", "4", "--out", "other",
    ];
    other.extend(TABLE_ARGS);
    for args in [&par, &seq, &other] {
        let o = run(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }

    let csv = |d: &str| std::fs::read(dir.path().join(d).join("table.csv")).unwrap();
    assert_eq!(csv("par"), csv("seq"));
    assert_ne!(csv("par"), csv("other"));
    assert!(!dir.path().join("seq/table.json").exists());

    let cells: Vec<SummaryCell> = read_json("table", &dir.path().join("par/table.json")).unwrap();
    assert_eq!(
        cells,
        read_table_csv(&dir.path().join("par/table.csv")).unwrap()
    );
    assert_eq!(cells.len(), 2);
    assert!(cells
        .iter()
        .all(|c| c.replicates == 6 && c.med_ise_e4.is_finite()));
}

#[test]
fn model_diagnostics_need_a_fixed_bandwidth() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "diagnostics",
        "--model",
        "ii",
        "--nu",
        "10",
        "--n",
        "5000",
        "--grid",
        "5",
    ];
    let o = run(&base, dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("fixed:H"), "{}", stderr(&o));

    let mut args = base.to_vec();
    args.extend(["--bandwidth", "fixed:0.2", "--format", "csv"]);
    let o = run(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("x,p,a,b,a1,b1,q,lambda_n,b_const,v,error"));
}

#[test]
fn overpool_writes_rows_per_pool_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "overpool",
            "--seed",
            "2",
            "--n",
            "2000",
            "--nu",
            "5,40",
            "--replicates",
            "4",
            "--include-ll",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("event=overpooled"), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("overpool.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(
        rows[1].starts_with("DH,5,")
            && rows[2].starts_with("DH,40,")
            && rows[3].starts_with("LL,,")
    );
}
