use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use mcv_cli::ingest::{load_dataset, IngestError, IngestSpec};
use mcv_cli::report::TestReport;
use mcv_core::distributions::chi2_sf;

fn write_csv(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(text.as_bytes())
        .unwrap();
    path
}

fn mcvtest(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcvtest"));
    cmd.args(args).env_remove("MCVTEST_THREADS");
    if let Some(t) = threads {
        cmd.env("MCVTEST_THREADS", t);
    }
    cmd.output().unwrap()
}

/// Two-by-two layout shaped like a small clinical trial: drug x length.
fn two_way_csv() -> String {
    let mut s = String::from("id,drug,length,score\n");
    let cells = [("No", ">6m"), ("Yes", ">6m"), ("No", "<6m"), ("Yes", "<6m")];
    for i in 0..40 {
        let (drug, length) = cells[i % 4];
        let score = 10.0 + (i * 7 % 23) as f64 + 0.5 * (i % 4) as f64;
        s.push_str(&format!("{i},{drug},{length},{score}\n"));
    }
    s
}

#[test]
fn non_numeric_value_names_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "bad.csv", "g,x,y\na,1,2\na,3,oops\nb,5,6\n");
    let err = load_dataset(&IngestSpec::new(&path, &["x", "y"], &["g"])).unwrap_err();
    match &err {
        IngestError::NonNumericValue {
            line,
            column,
            value,
        } => {
            assert_eq!((*line, column.as_str(), value.as_str()), (3, "y", "oops"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let msg = err.to_string();
    assert!(msg.contains("line 3") && msg.contains("'y'"), "{msg}");
}

#[test]
fn missing_column_and_empty_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "d.csv", "g,x\na,1\na,2\nb,3\n");
    assert!(matches!(
        load_dataset(&IngestSpec::new(&path, &["z"], &["g"])),
        Err(IngestError::MissingColumn(c)) if c == "z"
    ));
    let mut spec = IngestSpec::new(&path, &["x"], &["g"]);
    spec.levels
        .insert("g".into(), vec!["a".into(), "b".into(), "c".into()]);
    assert!(matches!(
        load_dataset(&spec),
        Err(IngestError::EmptyCell(c)) if c == "c"
    ));
}

#[test]
fn two_way_cells_follow_level_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "tw.csv", &two_way_csv());
    let data = load_dataset(&IngestSpec::new(&path, &["score"], &["drug", "length"])).unwrap();
    assert_eq!(data.levels, vec![vec!["No", "Yes"], vec![">6m", "<6m"]]);
    let map: Vec<(usize, Vec<String>, usize)> = data
        .cells
        .iter()
        .map(|c| (c.index, c.levels.clone(), c.n))
        .collect();
    let expected: Vec<(usize, Vec<String>, usize)> = [
        (0, ["No", ">6m"]),
        (1, ["No", "<6m"]),
        (2, ["Yes", ">6m"]),
        (3, ["Yes", "<6m"]),
    ]
    .into_iter()
    .map(|(i, l)| (i, l.iter().map(|s| s.to_string()).collect(), 10))
    .collect();
    assert_eq!(map, expected);
    // rows of cell (No, >6m) are ids 0, 4, 8, ...
    assert_eq!(data.groups[0].row(1), &[10.0 + (4 * 7 % 23) as f64]);

    let mut spec = IngestSpec::new(&path, &["score"], &["drug", "length"]);
    spec.levels
        .insert("length".into(), vec!["<6m".into(), ">6m".into()]);
    let reordered = load_dataset(&spec).unwrap();
    assert_eq!(reordered.cells[0].levels, vec!["No", "<6m"]);
    assert_eq!(reordered.groups[0].as_slice(), data.groups[1].as_slice());
}

#[test]
fn json_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "tw.csv", &two_way_csv());
    let out = mcvtest(
        &[
            "test",
            "--data",
            path.to_str().unwrap(),
            "--values",
            "score",
            "--factors",
            "drug,length",
            "--effect",
            "AB",
            "--method",
            "both",
            "--permutations",
            "199",
            "--format",
            "json",
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: TestReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.effect, "AB");
    assert_eq!(report.cells.len(), 4);
    assert_eq!(report.results.len(), 2);
    for r in &report.results {
        let p = r.p_asymptotic.unwrap();
        assert!((p - chi2_sf(r.statistic, r.df).unwrap()).abs() < 1e-12);
        assert_eq!(r.df, 1);
        assert_eq!(r.permutations_used, Some(199));
        let pp = r.p_permutation.unwrap();
        assert!(pp > 0.0 && pp <= 1.0);
    }
}

#[test]
fn exit_codes() {
    let out = mcvtest(&["test", "--values", "x", "--factors", "g"], None);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    // group b has identical values: singular covariance
    let path = write_csv(
        dir.path(),
        "sing.csv",
        "g,x\na,1\na,2\na,4\na,3\nb,5\nb,5\nb,5\nb,5\n",
    );
    let out = mcvtest(
        &[
            "test",
            "--data",
            path.to_str().unwrap(),
            "--values",
            "x",
            "--factors",
            "g",
            "--method",
            "asymptotic",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = mcvtest(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_with_bad_alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "id": "bad",
        "populations": [
            {"family": "normal", "mean": [2.0]},
            {"family": "normal", "mean": [2.0]}
        ],
        "sizes": [10, 10],
        "contrast": {"layout": "one-way", "k": 2, "effect": "group"},
        "alpha": 1.5,
        "mc_replications": 10,
        "permutation_plan": {"replications": 19, "seed": 0, "mode": "monte-carlo", "p_value_rule": "add-one"},
        "seed": 1
    }"#;
    let path = write_csv(dir.path(), "bad.json", config);
    let out = mcvtest(&["simulate", "--config", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn json_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "tw.csv", &two_way_csv());
    let test_args = [
        "test",
        "--data",
        path.to_str().unwrap(),
        "--values",
        "score",
        "--factors",
        "drug,length",
        "--effect",
        "A",
        "--permutations",
        "300",
        "--seed",
        "5",
        "--format",
        "json",
    ];
    let one = mcvtest(&test_args, Some("1"));
    let four = mcvtest(&test_args, Some("4"));
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);

    let sim_args = [
        "simulate",
        "--preset",
        "table3",
        "--only",
        "table3/N/C2=0.5",
        "--scale",
        "0.01",
        "--format",
        "json",
    ];
    let one = mcvtest(&sim_args, Some("1"));
    let three = mcvtest(&sim_args, Some("3"));
    assert!(
        one.status.success(),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    assert_eq!(one.stdout, three.stdout);
}
