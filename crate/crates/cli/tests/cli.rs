mod common;

use common::*;

#[test]
fn exact_on_g1() {
    let out = run(&["infer", "--graph", &data("g1.json"), "--method", "exact"]);
    assert_eq!(code(&out), 0);
    let doc = json(&out);
    assert!(schema_errors(&doc).is_empty(), "{:?}", schema_errors(&doc));
    assert!(max_abs_diff(&marginal(&doc, "x1"), &[2.0 / 3.0, 1.0 / 3.0]) < 1e-15);
    assert_eq!(doc["status"], "converged");
}

#[test]
fn bp_agrees_with_exact_on_a_tree() {
    let exact = json(&run(&["infer", "--graph", &data("g1.json"), "--method", "exact"]));
    let out = run(&["infer", "--graph", &data("g1.json"), "--method", "bp"]);
    assert_eq!(code(&out), 0);
    let bp = json(&out);
    for v in ["x1", "x2"] {
        assert!(max_abs_diff(&marginal(&exact, v), &marginal(&bp, v)) < 1e-6);
    }
    assert!(bp["free_energy"]["bethe"].is_number());
}

#[test]
fn every_method_validates_against_the_schema() {
    for method in ["exact", "bp", "regional-bp", "dd"] {
        let out = run(&["infer", "--graph", &data("g2.json"), "--method", method, "--check-soundness"]);
        assert_eq!(code(&out), 0, "{method}");
        let doc = json(&out);
        assert!(schema_errors(&doc).is_empty(), "{method}: {:?}", schema_errors(&doc));
    }
}

#[test]
fn dd_reports_gap_and_soundness() {
    let out = run(&["infer", "--graph", &data("g2.json"), "--method", "dd", "--check-soundness"]);
    let doc = json(&out);
    assert!(doc["consistency_gap"].as_f64().unwrap() <= 1e-5);
    assert!(doc["soundness_residual"].as_f64().unwrap() <= 1e-5);
    let inline = run(&["infer", "--graph", &data("g2.json"), "--method", "dd", "--regions", "inline"]);
    assert_eq!(json(&inline)["marginals"], doc["marginals"]);
}

#[test]
fn partition_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("regions.json");
    std::fs::write(&path, r#"{"all": ["fa", "fb"]}"#).unwrap();
    let out = run(&[
        "infer",
        "--graph",
        &data("g2.json"),
        "--method",
        "dd",
        "--regions",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let exact = json(&run(&["infer", "--graph", &data("g2.json"), "--method", "exact"]));
    let doc = json(&out);
    for v in ["x1", "x2", "x3"] {
        assert!(max_abs_diff(&marginal(&exact, v), &marginal(&doc, v)) < 1e-12);
    }
}

#[test]
fn iteration_budget_exits_two_with_a_document() {
    let out = run(&["infer", "--graph", &data("g2.json"), "--method", "dd", "--max-iters", "1"]);
    assert_eq!(code(&out), 2);
    let doc = json(&out);
    assert_eq!(doc["status"], "max-iters");
    assert!(schema_errors(&doc).is_empty());
}

#[test]
fn missing_file_exits_one_without_output() {
    let out = run(&["infer", "--graph", "/nonexistent/graph.json", "--method", "exact"]);
    assert_eq!(code(&out), 1);
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn truncated_document_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(data("g1.json")).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    let out = run(&["infer", "--graph", path.to_str().unwrap(), "--method", "exact"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["infer", "--graph", &data("g1.json"), "--method", "magic"])), 1);
    assert_eq!(code(&run(&["infer", "--graph", &data("g1.json"), "--method", "exact", "--threads", "0"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn out_flag_writes_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = run(&["infer", "--graph", &data("g1.json"), "--method", "exact", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let stdout = run(&["infer", "--graph", &data("g1.json"), "--method", "exact"]).stdout;
    assert_eq!(std::fs::read(&path).unwrap(), stdout);
}

#[test]
fn floats_print_seventeen_digits() {
    let out = run(&["infer", "--graph", &data("g1.json"), "--method", "exact"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("6.6666666666666663e-1"));
}

#[test]
fn compare_g2_and_g1() {
    let out = run(&["compare", "--graph", &data("g2.json")]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(schema_errors(&doc).is_empty(), "{:?}", schema_errors(&doc));
    assert!(doc["max_tv"]["exact"]["dd"].as_f64().unwrap() <= 1e-6);

    let out = run(&["compare", "--graph", &data("g1.json")]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for (_, row) in doc["max_tv"].as_object().unwrap() {
        for (_, d) in row.as_object().unwrap() {
            assert!(d.as_f64().unwrap() <= 1e-6);
        }
    }
}

#[test]
fn compare_over_the_cap_fails() {
    let out = run(&["compare", "--graph", &data("g2.json"), "--cap", "4"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("capacity"));
    assert!(out.stdout.is_empty());
}

fn ldpc_rows(stdout: &[u8]) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_reader(stdout);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    (header, r.records().map(Result::unwrap).collect())
}

#[test]
fn ldpc_csv_and_noiseless_ber() {
    let out = run(&[
        "ldpc", "--n", "6", "--dv", "2", "--dc", "3", "--p", "0.0001", "--trials", "10", "--seed", "7", "--methods",
        "exact,bp",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.matches("method,p,trials").count(), 1);
    let (header, rows) = ldpc_rows(&out.stdout);
    assert_eq!(header, ["method", "p", "trials", "bit_errors", "frame_errors", "avg_iters", "converged_frac"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "exact");
    assert_eq!(&rows[0][3], "0");
}

#[test]
fn ldpc_rejects_impossible_codes() {
    let out = run(&["ldpc", "--n", "7", "--dv", "2", "--dc", "3", "--p", "0.1", "--trials", "2"]);
    assert_eq!(code(&out), 1);
    assert!(out.stdout.is_empty());
}

#[test]
fn ldpc_gibbs_needs_soft_constraints() {
    let base = [
        "ldpc", "--n", "6", "--dv", "2", "--dc", "3", "--p", "0.05", "--trials", "2", "--methods", "dd", "--solver",
        "gibbs", "--samples", "500", "--max-iters", "3",
    ];
    assert_eq!(code(&run(&base)), 1);
    let mut soft = base.to_vec();
    soft.extend(["--constraint", "soft"]);
    let out = run(&soft);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_count_does_not_change_output() {
    let cases: Vec<Vec<String>> = vec![
        vec!["infer", "--graph", &data("g2.json"), "--method", "dd", "--check-soundness"],
        vec![
            "infer", "--graph", &data("g2.json"), "--method", "dd", "--solver", "gibbs", "--samples", "2000", "--max-iters",
            "5", "--seed", "3",
        ],
        vec!["compare", "--graph", &data("g2.json")],
        vec![
            "ldpc", "--n", "12", "--dv", "2", "--dc", "4", "--p", "0.02,0.08", "--trials", "16", "--methods",
            "bp,regional-bp,dd", "--seed", "5",
        ],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    for case in &cases {
        let args: Vec<&str> = case.iter().map(String::as_str).collect();
        let reference = run(&args);
        assert!(!reference.stdout.is_empty());
        for threads in ["1", "3", "8"] {
            let mut with = args.clone();
            with.extend(["--threads", threads]);
            assert_eq!(run(&with).stdout, reference.stdout, "{args:?} --threads {threads}");
            assert_eq!(run_with_env(&args, "REGIONBP_THREADS", threads).stdout, reference.stdout);
        }
    }
}
