use std::path::Path;
use std::process::{Command, Output};

use dtwgi::io::{read_series, ResultTable};

fn dtwgi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtwgi"))
        .current_dir(dir)
        .env_remove("DTWGI_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dtwgi(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn cost(stdout: &str) -> f64 {
    stdout.trim().parse().unwrap()
}

#[test]
fn identical_files_have_zero_dtw() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &[
            "gen",
            "--kind",
            "random_walk",
            "--dims",
            "3",
            "--length",
            "20",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(
        cost(&ok(
            tmp.path(),
            &["dist", "x.csv", "x.csv", "--method", "dtw"]
        )),
        0.0
    );
}

#[test]
fn rotated_spiral_has_zero_dtw_gi() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "gen", "--kind", "spiral2d", "--length", "50", "--out", "x.csv",
        ],
    );
    ok(
        d,
        &[
            "gen",
            "--kind",
            "spiral2d",
            "--length",
            "50",
            "--theta",
            "1.0471975511965976",
            "--out",
            "y.csv",
        ],
    );
    let out = ok(
        d,
        &[
            "dist",
            "x.csv",
            "y.csv",
            "--method",
            "dtw-gi",
            "--family",
            "stiefel",
            "--restarts",
            "12",
            "--out",
            "r.json",
        ],
    );
    assert!(cost(&out) <= 1e-6, "{out}");
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(dump["transform"]["matrix"].as_array().unwrap().len(), 2);
    assert!(dump["path"].as_array().unwrap().len() >= 50);
    assert!(cost(&ok(d, &["dist", "x.csv", "y.csv", "--method", "dtw"])) > 1.0);
}

#[test]
fn soft_methods_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "gen", "--kind", "folium", "--length", "30", "--out", "x.csv",
        ],
    );
    ok(
        d,
        &[
            "gen", "--kind", "folium", "--length", "30", "--theta", "-0.4", "--noise", "0.01",
            "--out", "y.csv",
        ],
    );
    let soft = cost(&ok(
        d,
        &[
            "dist", "x.csv", "y.csv", "--method", "softdtw", "--gamma", "0.1",
        ],
    ));
    let gi = cost(&ok(
        d,
        &[
            "dist",
            "x.csv",
            "y.csv",
            "--method",
            "softdtw-gi",
            "--gamma",
            "0.1",
            "--warm-start",
            "--restarts",
            "4",
        ],
    ));
    assert!(gi < soft, "{gi} vs {soft}");
}

#[test]
fn mismatched_dims_are_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--kind", "spiral2d", "--out", "a.csv"]);
    ok(d, &["gen", "--kind", "spiral3d", "--out", "b.csv"]);
    let out = dtwgi(d, &["dist", "a.csv", "b.csv", "--method", "dtw"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("p_x = 2") && err.contains("p_y = 3"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--kind", "spiral2d", "--out", "a.csv"]);
    assert_eq!(dtwgi(d, &["dist", "a.csv"]).status.code(), Some(1));
    assert_eq!(
        dtwgi(d, &["dist", "a.csv", "a.csv", "--method", "nope"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        dtwgi(
            d,
            &["dist", "a.csv", "a.csv", "--method", "softdtw", "--gamma", "0"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(dtwgi(d, &["gen", "--kind", "blob"]).status.code(), Some(1));
    assert_eq!(dtwgi(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_file_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.csv"), "# dims=2 length=2\n1,2\n3\n").unwrap();
    let out = dtwgi(d, &["dist", "bad.csv", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert_eq!(
        dtwgi(d, &["dist", "missing.csv", "bad.csv"]).status.code(),
        Some(2)
    );
}

#[test]
fn gen_is_deterministic_and_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "gen", "--kind", "spiral2d", "--length", "64", "--seed", "7", "--noise", "0.1",
            "--out", "a.csv",
        ],
    );
    ok(
        d,
        &[
            "gen", "--kind", "spiral2d", "--length", "64", "--seed", "7", "--noise", "0.1",
            "--out", "b.csv",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("a.csv")).unwrap(),
        std::fs::read(d.join("b.csv")).unwrap()
    );

    ok(
        d,
        &[
            "gen", "--kind", "folium", "--theta", "1.0", "--out", "f.csv",
        ],
    );
    assert_eq!(read_series(d.join("f.csv")).unwrap().dims(), 2);
    let text = ok(d, &["gen", "--kind", "spiral3d"]);
    assert!(text.starts_with("# dims=3 length=64"));
}

#[test]
fn seed_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_dtwgi"))
            .current_dir(d)
            .env("DTWGI_SEED", seed)
            .args(["gen", "--kind", "random_walk", "--length", "10"])
            .output()
            .unwrap();
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
    assert_eq!(
        run("5"),
        ok(
            d,
            &[
                "gen",
                "--kind",
                "random_walk",
                "--length",
                "10",
                "--seed",
                "5"
            ]
        )
    );
}

#[test]
fn barycenter_command() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "gen", "--kind", "spiral2d", "--length", "30", "--out", "a.csv",
        ],
    );
    ok(
        d,
        &[
            "gen", "--kind", "spiral3d", "--length", "30", "--theta", "0.5", "--out", "b.csv",
        ],
    );
    ok(
        d,
        &[
            "barycenter",
            "--inputs",
            "a.csv",
            "--method",
            "dba",
            "--out",
            "single.csv",
        ],
    );
    assert_eq!(
        read_series(d.join("single.csv")).unwrap(),
        read_series(d.join("a.csv")).unwrap()
    );

    ok(
        d,
        &[
            "barycenter",
            "--inputs",
            "a.csv",
            "b.csv",
            "--method",
            "dba-gi",
            "--dim",
            "2",
            "--out",
            "m.csv",
            "--trace",
            "m_loss.csv",
        ],
    );
    assert_eq!(read_series(d.join("m.csv")).unwrap().dims(), 2);
    let trace = ResultTable::read(d.join("m_loss.csv")).unwrap();
    assert_eq!(trace.header(), ["iteration", "loss"]);
    assert!(!trace.is_empty());

    let out = dtwgi(
        d,
        &[
            "barycenter",
            "--inputs",
            "a.csv",
            "b.csv",
            "--method",
            "dba",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mixed-dimension"));
}

#[test]
fn timing_and_rotation_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "bench-timing",
            "--lengths",
            "8,16",
            "--dims",
            "2,4",
            "--methods",
            "dtw,dtw-gi",
            "--trials",
            "2",
            "--out",
            "t.csv",
        ],
    );
    let t = ResultTable::read(d.join("t.csv")).unwrap();
    assert_eq!(t.header(), ["method", "T", "p", "trial", "seconds"]);
    assert_eq!(t.len(), 2 * 4 * 2);
    assert!(t
        .numeric_column("seconds")
        .unwrap()
        .iter()
        .all(|s| *s > 0.0));

    ok(
        d,
        &[
            "bench-rotation",
            "--trials",
            "2",
            "--angles",
            "4",
            "--restarts",
            "4",
            "--out",
            "r.csv",
        ],
    );
    let r = ResultTable::read(d.join("r.csv")).unwrap();
    assert_eq!(
        r.header(),
        ["method", "theta", "trial", "cost", "ratio_to_theta0"]
    );
    assert_eq!(r.len(), 2 * 4 * 2);
    let theta = r.numeric_column("theta").unwrap();
    let ratio = r.numeric_column("ratio_to_theta0").unwrap();
    let methods = r.column("method").unwrap();
    for m in ["dtw", "dtw-gi"] {
        let base: Vec<f64> = (0..r.len())
            .filter(|&i| methods[i] == m && theta[i] == 0.0)
            .map(|i| ratio[i])
            .collect();
        assert!((base.iter().sum::<f64>() / base.len() as f64 - 1.0).abs() < 1e-12);
    }
    // Same seed, same bytes.
    ok(
        d,
        &[
            "bench-rotation",
            "--trials",
            "2",
            "--angles",
            "4",
            "--restarts",
            "4",
            "--out",
            "r2.csv",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("r.csv")).unwrap(),
        std::fs::read(d.join("r2.csv")).unwrap()
    );
}

#[test]
fn forecast_study_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "forecast-study",
            "--trials",
            "2",
            "--lambda-grid",
            "0.01,1",
            "--backends",
            "L2,softDTW",
            "--out",
            "f.csv",
        ],
    );
    let t = ResultTable::read(d.join("f.csv")).unwrap();
    assert_eq!(t.header(), ["backend", "lambda", "trial", "l2_error"]);
    assert_eq!(t.len(), 2 * 2 * 2);
    let mut lambdas = t.numeric_column("lambda").unwrap();
    lambdas.dedup();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    assert_eq!(lambdas, vec![0.01, 1.0]);
}

#[test]
fn retrieval_command() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "gen", "--kind", "covers", "--pairs", "6", "--length", "40", "--out", "covers",
        ],
    );
    std::fs::write(d.join("covers/corpus/broken.csv"), "not a series\n").unwrap();
    let out = dtwgi(
        d,
        &[
            "retrieval",
            "--query-dir",
            "covers/queries",
            "--corpus-dir",
            "covers/corpus",
            "--method",
            "dtw-gi-oti",
            "--out",
            "r.csv",
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.csv"));
    let t = ResultTable::read(d.join("r.csv")).unwrap();
    assert_eq!(
        t.header(),
        [
            "query",
            "rank_of_true_match",
            "recall_at_1",
            "recall_at_5",
            "recall_at_10"
        ]
    );
    assert_eq!(t.len(), 7);
    assert_eq!(t.rows()[6][0], "MR1");
    let agg: Vec<f64> = t.rows()[6][1..]
        .iter()
        .map(|c| c.parse().unwrap())
        .collect();
    assert!(agg[1] <= agg[2] && agg[2] <= agg[3]);
}
