use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use poolscreen::groupcode::{self, build_design_with, decode_bruteforce_oracle, DecodeFlag};
use poolscreen::testbed::Population;
use poolscreen::Prevalence;

fn poolscreen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolscreen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bounds_reference_rows() {
    let o = poolscreen(&["bounds", "--f", "0.01,0.001"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][col("m")], "69");
    assert_eq!(rows[0][col("k")], "6");
    assert_eq!(rows[1][col("m")], "693");
    assert_eq!(rows[1][col("k")], "9");
    let h: f64 = rows[0][col("entropy_per_subject")].parse().unwrap();
    assert!((h - 0.0808).abs() < 1e-3, "{h}");
    assert!(stderr(&o).starts_with("# command=bounds"));
}

#[test]
fn bounds_text_is_json() {
    let o = poolscreen(&["bounds", "--f", "0.01", "--format", "text"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["m"], 69);
    assert_eq!(v[0]["k"], 6);
}

#[test]
fn bounds_rejects_bad_prevalence() {
    for bad in ["1.5", "0", "-0.1", "nan"] {
        let o = poolscreen(&["bounds", "--f", bad]);
        assert_eq!(o.status.code(), Some(2), "f = {bad}");
        assert!(stderr(&o).contains("error"), "f = {bad}");
    }
}

#[test]
fn bounds_warns_when_pooling_is_pointless() {
    let o = poolscreen(&["bounds", "--f", "0.5"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn plan_reference_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for (f, groups, k) in [("0.01", 8696, 6), ("0.001", 1299, 9)] {
        let file = dir.path().join(format!("design-{f}.txt"));
        let o = poolscreen(&["plan", "--n", "100000", "--f", f, "--out", path(&file)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let design = groupcode::read_design(fs::read(&file).unwrap().as_slice()).unwrap();
        assert_eq!(design.n_groups, groups);
        assert_eq!(design.k, k);
        design.validate().unwrap();
        assert!(stdout(&o).contains(&format!("n_groups = {groups}")));
    }
}

#[test]
fn plan_single_subject() {
    let o = poolscreen(&["plan", "--n", "1", "--f", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let design = groupcode::read_design(o.stdout.as_slice()).unwrap();
    assert_eq!(design.n, 1);
    assert_eq!(design.n_groups, 6);
}

#[test]
fn simulate_individual_costs_one() {
    let o = poolscreen(&[
        "simulate",
        "--method",
        "individual",
        "--f",
        "0.05",
        "--n",
        "1000",
        "--trials",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mean = text.lines().find(|l| l.starts_with("mean,")).unwrap();
    let fields: Vec<&str> = mean.split(',').collect();
    assert_eq!(fields[6].parse::<f64>().unwrap(), 1.0);
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn simulate_infeasible_design_exits_3() {
    let o = poolscreen(&[
        "simulate", "--method", "gc", "--f", "0.3", "--n", "100", "--trials", "1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulate_json_summary() {
    let o = poolscreen(&[
        "simulate", "--method", "dnc", "--f", "0.01", "--n", "20000", "--trials", "2", "--format",
        "text",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let cost = v["mean_cost"].as_f64().unwrap();
    assert!(cost > 0.08 && cost < 0.2, "{cost}");
    assert_eq!(v["mean_false_negatives"], 0.0);
    assert_eq!(v["spec"]["n"], 20000);
}

fn write_tiny_design(dir: &Path) -> (groupcode::PoolingDesign, std::path::PathBuf) {
    let design = build_design_with(10, 5, 2, 4).unwrap();
    let file = dir.join("design.txt");
    let mut buf = Vec::new();
    groupcode::write_design(&design, &mut buf).unwrap();
    fs::write(&file, buf).unwrap();
    (design, file)
}

fn write_results(dir: &Path, results: &[bool]) -> std::path::PathBuf {
    let file = dir.join("results.txt");
    let mut buf = Vec::new();
    groupcode::write_results(results, &mut buf).unwrap();
    fs::write(&file, buf).unwrap();
    file
}

#[test]
fn decode_all_negative_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let (design, dfile) = write_tiny_design(dir.path());
    let rfile = write_results(dir.path(), &vec![false; design.n_groups]);
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&dfile),
        "--results",
        path(&rfile),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "");
}

#[test]
fn decode_tiny_design_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (design, dfile) = write_tiny_design(dir.path());
    for infected in [vec![3], vec![0, 7], vec![2, 5, 9]] {
        let results: Vec<bool> = design
            .groups
            .iter()
            .map(|g| g.iter().any(|s| infected.contains(s)))
            .collect();
        let rfile = write_results(dir.path(), &results);
        let o = poolscreen(&[
            "decode",
            "--design",
            path(&dfile),
            "--results",
            path(&rfile),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let got: Vec<usize> = stdout(&o)
            .lines()
            .map(|l| {
                let (s, flag) = l.split_once(',').unwrap();
                assert_eq!(flag, "firstpass");
                s.parse().unwrap()
            })
            .collect();
        assert_eq!(got, decode_bruteforce_oracle(&design, &infected));
        assert!(infected.iter().all(|s| got.contains(s)));
    }
}

#[test]
fn decode_with_confirmation() {
    let dir = tempfile::tempdir().unwrap();
    let (design, dfile) = write_tiny_design(dir.path());
    let results: Vec<bool> = design.groups.iter().map(|g| g.contains(&3)).collect();
    let rfile = write_results(dir.path(), &results);
    let cfile = dir.path().join("confirm.txt");
    fs::write(&cfile, "3,1\n").unwrap();
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&dfile),
        "--results",
        path(&rfile),
        "--confirm",
        path(&cfile),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "3,confirmed\n");

    fs::write(&cfile, "4,1\n").unwrap();
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&dfile),
        "--results",
        path(&rfile),
        "--confirm",
        path(&cfile),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn decode_missing_group_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (_, dfile) = write_tiny_design(dir.path());
    let rfile = dir.path().join("results.txt");
    fs::write(&rfile, "0,1\n2,0\n3,0\n4,1\n").unwrap();
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&dfile),
        "--results",
        path(&rfile),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("missing group 1"), "{}", stderr(&o));
}

#[test]
fn decode_malformed_design_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let dfile = dir.path().join("design.txt");
    fs::write(&dfile, "n: 2\nn_groups: 2\nk: 1\nseed: 0\n0: 0, 1\n1: 1\n").unwrap();
    let rfile = write_results(dir.path(), &[false, false]);
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&dfile),
        "--results",
        path(&rfile),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn decode_missing_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("absent.txt");
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&nowhere),
        "--results",
        path(&nowhere),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plan_results_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dfile = dir.path().join("design.txt");
    let o = poolscreen(&[
        "plan",
        "--n",
        "5000",
        "--f",
        "0.01",
        "--seed",
        "9",
        "--out",
        path(&dfile),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let design = groupcode::read_design(fs::read(&dfile).unwrap().as_slice()).unwrap();

    let pop = Population::generate(5000, Prevalence::new(0.01).unwrap(), 77).unwrap();
    let results: Vec<bool> = design
        .groups
        .iter()
        .map(|g| g.iter().any(|&s| pop.is_infected(s)))
        .collect();
    let rfile = write_results(dir.path(), &results);
    let ofile = dir.path().join("decoded.txt");
    let o = poolscreen(&[
        "decode",
        "--design",
        path(&dfile),
        "--results",
        path(&rfile),
        "--out",
        path(&ofile),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rows: Vec<(usize, DecodeFlag)> = groupcode::decode(&design, &results)
        .unwrap()
        .into_iter()
        .map(|s| (s, DecodeFlag::FirstPass))
        .collect();
    let mut expected = Vec::new();
    groupcode::write_decode_output(&rows, &mut expected).unwrap();
    assert_eq!(fs::read(&ofile).unwrap(), expected);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let args = [
        "simulate", "--method", "gc", "--f", "0.01", "--n", "10000", "--trials", "4", "--seed", "5",
    ];
    let a = poolscreen(&args);
    let b = poolscreen(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let mut other = args.to_vec();
    other[args.len() - 1] = "6";
    assert_ne!(poolscreen(&other).stdout, a.stdout);
}

#[test]
fn reference_small_population_warns() {
    let o = poolscreen(&[
        "reference",
        "--n",
        "100",
        "--trials",
        "2",
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    assert!(stderr(&o).contains("warning"));
}
