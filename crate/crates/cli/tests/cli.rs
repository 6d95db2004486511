use std::path::Path;
use std::process::{Command, Output};

fn bbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbf"))
        .args(args)
        .env("BBF_THREADS", "1")
        .output()
        .expect("spawn bbf")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstderr:\n{}", o.status, stderr(o));
}

/// Rows after the header, split into fields.
fn parse_rows(csv: &str) -> Vec<Vec<String>> {
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("method,dataset,n,d,kernel,h,param,memory,rel_error,build_s,apply_s,seed")
    );
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn approx_reports_one_row_per_trial() {
    let o = bbf(&[
        "approx",
        "--synth",
        "n=600,d=3,c=4,s=0.1",
        "--h",
        "0.5",
        "--eps",
        "1e-2",
        "--trials",
        "3",
    ]);
    assert_ok(&o);
    let rows = parse_rows(&stdout(&o));
    assert_eq!(rows.len(), 3);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row[0], "bbf");
        assert_eq!(row[2], "600");
        assert_eq!(row[11], t.to_string());
        let err: f64 = row[8].parse().unwrap();
        assert!(err < 5e-2, "error {err}");
    }
    assert!(stderr(&o).contains("mean relative error"));
}

#[test]
fn single_cluster_at_tiny_tolerance_is_exact() {
    let o = bbf(&[
        "approx",
        "--synth",
        "n=256,d=3,c=4,s=0.2",
        "--h",
        "0.5",
        "--k",
        "1",
        "--eps",
        "1e-8",
    ]);
    assert_ok(&o);
    let err: f64 = parse_rows(&stdout(&o))[0][8].parse().unwrap();
    assert!(err <= 1e-6, "error {err}");
}

#[test]
fn missing_file_names_the_path() {
    let o = bbf(&["approx", "--data", "/nonexistent/points.csv"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/points.csv"), "{}", stderr(&o));
}

#[test]
fn bad_flags_fail() {
    assert!(!bbf(&["approx", "--synth", "n=100", "--k", "zero"]).status.success());
    assert!(!bbf(&["compare", "--synth", "n=100", "--method", "pca"])
        .status
        .success());
    assert!(!bbf(&["approx", "--synth", "n=100,q=3"]).status.success());
}

#[test]
fn compare_matches_memory_and_flags_infeasible_ranks() {
    let o = bbf(&[
        "compare",
        "--synth",
        "n=300,d=2,c=3,s=0.1",
        "--h",
        "0.5",
        "--eps",
        "1e-3",
        "--method",
        "bbf,nys,svd",
    ]);
    assert_ok(&o);
    let rows = parse_rows(&stdout(&o));
    assert_eq!(rows.len(), 3);
    let bbf_memory: f64 = rows[0][7].parse().unwrap();
    let r = (bbf_memory / 300.0).round();
    for row in &rows[1..] {
        assert_eq!(row[6].parse::<f64>().unwrap(), r);
        assert_eq!(row[7].parse::<f64>().unwrap(), 300.0 * r);
        assert!(row[8] == "infeasible" || row[8].parse::<f64>().is_ok());
    }

    // A tolerance that needs more than half of n per point cannot be matched.
    let o = bbf(&[
        "compare",
        "--synth",
        "n=40,d=2,c=2,s=0.5",
        "--h",
        "0.05",
        "--k",
        "2",
        "--eps",
        "1e-8",
        "--method",
        "bbf,nys",
    ]);
    assert_ok(&o);
    let rows = parse_rows(&stdout(&o));
    assert_eq!(rows[1][0], "nys");
    assert_eq!(rows[1][8], "infeasible");
    assert_eq!(rows[1][9], "NA");
}

#[test]
fn scaling_with_one_size_has_no_slope() {
    let o = bbf(&[
        "scaling",
        "--synth",
        "d=3,c=4,s=0.1",
        "--sizes",
        "500",
        "--k",
        "4",
        "--rank",
        "5",
        "--h",
        "0.5",
    ]);
    assert_ok(&o);
    assert_eq!(parse_rows(&stdout(&o)).len(), 1);
    assert!(stderr(&o).contains("build-time log-log slope: NA"), "{}", stderr(&o));
}

#[test]
fn save_load_matvec_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.bbf");
    let model_s = model.to_str().unwrap();
    let o = bbf(&[
        "save",
        model_s,
        "--synth",
        "n=200,d=2,c=3,s=0.1",
        "--h",
        "0.5",
        "--k",
        "3",
    ]);
    assert_ok(&o);
    assert!(model.exists());

    let o = bbf(&["load", model_s]);
    assert_ok(&o);
    let summary = stdout(&o);
    assert!(summary.contains("n: 200") && summary.contains("k: 3"), "{summary}");

    let ones = dir.path().join("ones.txt");
    std::fs::write(&ones, "1\n".repeat(200)).unwrap();
    let o = bbf(&["matvec", model_s, "--input", ones.to_str().unwrap()]);
    assert_ok(&o);
    let y: Vec<f64> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(y.len(), 200);
    // Row sums of a Gaussian kernel with unit diagonal.
    assert!(y.iter().all(|&v| v > 0.5), "{y:?}");

    let short = dir.path().join("short.txt");
    std::fs::write(&short, "1\n2\n").unwrap();
    assert!(!bbf(&["matvec", model_s, "--input", short.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn synth_output_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs.csv");
    let o = bbf(&[
        "synth",
        "--synth",
        "n=50,d=4,c=2,s=0.1,seed=3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_ok(&o);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text.lines().next(), Some("x0,x1,x2,x3"));
    let o = bbf(&[
        "approx",
        "--data",
        path.to_str().unwrap(),
        "--header",
        "--k",
        "2",
        "--eps",
        "1e-3",
    ]);
    assert_ok(&o);
    assert_eq!(parse_rows(&stdout(&o))[0][1], "blobs");
}

#[test]
fn stats_rows_follow_the_grid() {
    let abalone = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/abalone.csv");
    let dir = tempfile::tempdir().unwrap();
    // A slice of abalone keeps the dense eigendecomposition quick.
    let text = std::fs::read_to_string(abalone).unwrap();
    let subset: String = text.lines().take(401).map(|l| format!("{l}\n")).collect();
    let path = dir.path().join("abalone400.csv");
    std::fs::write(&path, subset).unwrap();
    let o = bbf(&[
        "stats",
        "--data",
        path.to_str().unwrap(),
        "--header",
        "--drop-columns",
        "8",
        "--inv-h2",
        "0.25,4,100",
        "--rank",
        "20",
    ]);
    assert_ok(&o);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    let stable: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert!(stable.windows(2).all(|w| w[0] <= w[1]), "{stable:?}");
}
