use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_constellation"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}=` in output:\n{out}"))
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build_db(dir: &Path) -> PathBuf {
    let db = dir.join("db.json");
    let o = run(&["builddb", "--pool-size", "30", "--seed", "11", "--n-target", "64", "-o", s(&db)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    db
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.mnu"), dir.path().join("b.mnu"));
    for p in [&a, &b] {
        assert!(run(&["gen", "--n", "30", "--seed", "7", "-o", s(p)]).status.success());
    }
    let (ta, tb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert_eq!(ta, tb);
    assert!(ta.starts_with("MNU 1\n"));
    assert!(ta.contains("# seed=7"));
    assert_eq!(ta.lines().filter(|l| !l.starts_with('#') && *l != "MNU 1").count(), 30);

    let o = run(&["gen", "--n", "30", "--seed", "8"]);
    assert_ne!(stdout(&o), ta);
}

#[test]
fn self_match_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let db = build_db(dir.path());
    let t = dir.path().join("t.mnu");
    assert!(run(&["gen", "--n", "35", "--seed", "3", "-o", s(&t)]).status.success());
    let o = run(&["match", s(&t), s(&t), "--db", s(&db), "-t", "40"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(value(&out, "score"), "0");
    assert_eq!(value(&out, "decision"), "match");
    assert!(out.contains("# max_hamming=40"));
}

#[test]
fn rigidly_moved_copy_matches_and_stranger_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let db = build_db(dir.path());
    let t = dir.path().join("t.mnu");
    let moved = dir.path().join("moved.mnu");
    let other = dir.path().join("other.mnu");
    assert!(run(&["gen", "--n", "35", "--seed", "3", "-o", s(&t)]).status.success());
    assert!(run(&["gen", "--from", s(&t), "--rotate-deg", "33", "--dx", "40", "--dy=-12", "-o", s(&moved)]).status.success());
    assert!(run(&["gen", "--n", "35", "--seed", "4", "-o", s(&other)]).status.success());

    let o = run(&["match", s(&moved), s(&t), "--db", s(&db), "-t", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let o = run(&["match", s(&other), s(&t), "--db", s(&db), "-t", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(value(&stdout(&o), "decision"), "no-match");
}

#[test]
fn enroll_writes_hex_vector() {
    let dir = tempfile::tempdir().unwrap();
    let db = build_db(dir.path());
    let t = dir.path().join("t.mnu");
    let v = dir.path().join("t.json");
    assert!(run(&["gen", "--n", "35", "--seed", "3", "-o", s(&t)]).status.success());
    let o = run(&["enroll", s(&t), "--db", s(&db), "-o", s(&v)]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&v).unwrap()).unwrap();
    assert_eq!(doc["hex"].as_str().unwrap(), value(&stdout(&o), "hex"));
    assert_eq!(doc["n"], 64);
}

#[test]
fn second_order_and_missing_options() {
    let dir = tempfile::tempdir().unwrap();
    let db = build_db(dir.path());
    let db2 = dir.path().join("db2.json");
    let o = run(&["builddb", "--order", "2", "--pool-size", "40", "--n-target", "32", "-o", s(&db2)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = dir.path().join("t.mnu");
    let c = dir.path().join("c.mnu");
    assert!(run(&["gen", "--n", "35", "--seed", "5", "-o", s(&t)]).status.success());
    assert!(run(&["gen", "--from", s(&t), "--occlusions", "1", "--seed", "2", "-o", s(&c)]).status.success());

    let o = run(&["match", s(&t), s(&t), "--db", s(&db), "--second-order", "--db2", s(&db2)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(value(&stdout(&o), "hamming2"), "0");

    let o = run(&["match", s(&c), s(&t), "--db", s(&db), "--missing", "-t", "128"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("# hypotheses="));
    assert!(out.contains("# forgiven="));

    // --second-order without --db2 is a usage error.
    let o = run(&["match", s(&t), s(&t), "--db", s(&db), "--second-order"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_four_points_settles_at_reference_pose() {
    let o = run(&["simulate", s(&data("body.mnu")), s(&data("anchors.mnu"))]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(value(&out, "converged"), "true");
    let expected: Vec<(f64, f64)> = std::fs::read_to_string(data("settled.mnu"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("MNU"))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect();
    let settled: Vec<(f64, f64)> = out
        .lines()
        .filter_map(|l| l.strip_prefix("point "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect();
    assert_eq!(settled.len(), 4);
    for (p, q) in settled.iter().zip(&expected) {
        assert!((p.0 - q.0).hypot(p.1 - q.1) <= 25.0, "{p:?} vs {q:?}");
    }

    let oracle = stdout(&run(&["oracle", s(&data("body.mnu")), s(&data("anchors.mnu"))]));
    let e_min: f64 = value(&out, "e_min").parse().unwrap();
    let optimum: f64 = value(&oracle, "spring_optimum").parse().unwrap();
    assert!(e_min <= 1.01 * optimum && e_min >= 0.99 * optimum);
    let bf: f64 = value(&oracle, "brute_force_sim").parse().unwrap();
    let phi: f64 = value(&out, "sim_phi").parse().unwrap();
    assert!(bf <= phi + 1e-6);
}

#[test]
fn simulate_writes_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let o = run(&[
        "simulate",
        s(&data("body.mnu")),
        s(&data("anchors.mnu")),
        "--trajectory",
        s(&traj),
        "--stride",
        "100",
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&traj).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,potential_energy,kinetic_energy,pose_x,pose_y,pose_theta"));
    assert!(lines.count() > 5);
}

#[test]
fn sweep_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let o = run(&[
        "sweep",
        s(&data("body.mnu")),
        s(&data("anchors.mnu")),
        "--increment-deg",
        "30",
        "-o",
        s(&curve),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("theta_deg,energy\n"));
    assert_eq!(text.lines().count(), 1 + 12);
    let best: f64 = value(&stdout(&o), "best_theta_deg").parse().unwrap();
    // The four-point example settles at roughly -30 degrees.
    let d = (best - 330.0).abs().min((best + 30.0).abs());
    assert!(d < 2.0, "best {best}");
}

#[test]
fn bench_writes_report_and_pair_dump() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let pairs = dir.path().join("p.csv");
    let o = run(&[
        "bench",
        "--subjects",
        "6",
        "--impostors",
        "20",
        "--db-pool",
        "20",
        "--n-target",
        "32",
        "--report",
        s(&report),
        "--pairs",
        s(&pairs),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["far"].is_array());
    assert_eq!(doc["config"]["corpus"]["subjects"], 6);
    let csv = std::fs::read_to_string(&pairs).unwrap();
    assert!(csv.starts_with("pair_id,kind,score\n"));
    assert_eq!(csv.lines().count(), 1 + 6 + 20);

    let o = run(&["bench", "--missing-gain", "--subjects", "5", "--occlusions", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("level frr_plain frr_with_missing"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["gen", "--n", "many"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.mnu");
    std::fs::write(&bad, "MNU 1\n1 2 3\n4 five 6\n").unwrap();
    let o = run(&["simulate", s(&bad), s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = run(&["simulate", s(&dir.path().join("missing.mnu")), s(&bad)]);
    assert_eq!(o.status.code(), Some(3));

    // Mismatched sizes are a data error.
    let o = run(&["simulate", s(&data("body.mnu")), s(&data("settled.mnu"))]);
    assert_eq!(o.status.code(), Some(0));
    let three = dir.path().join("three.mnu");
    std::fs::write(&three, "MNU 1\n0 0 0\n10 0 0\n0 10 0\n").unwrap();
    let o = run(&["simulate", s(&data("body.mnu")), s(&three)]);
    assert_eq!(o.status.code(), Some(3));
}
