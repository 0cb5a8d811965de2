use std::path::Path;
use std::process::{Command, Output};

fn errt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errt")).args(args).output().expect("spawn errt")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: [&str; 2] = ["--world.dims", "10,10,4"];

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--seeds", "1..2", "--preset", "greedy", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    errt(&args)
}

#[test]
fn run_writes_results_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = run_small(&out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "config.resolved.txt", "coverage_1.csv", "plan_log_2.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let again = run_small(&out, &[]);
    assert_eq!(code(&again), 4);
    let forced = run_small(&out, &["--force"]);
    assert_eq!(code(&forced), 0);
    assert_eq!(std::fs::read_to_string(out.join("metrics.csv")).unwrap(), metrics);
}

#[test]
fn resolved_config_records_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "planner.iterations = 700\nmission.speed_mps = 2.0\n").unwrap();
    let out = dir.path().join("r");
    let o = run_small(&out, &["--config", cfg.to_str().unwrap(), "--planner.iterations=900", "--set", "sensor.range_m=4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("config.resolved.txt")).unwrap();
    assert!(text.contains("planner.iterations = 900"), "{text}");
    assert!(text.contains("mission.speed_mps = 2"), "{text}");
    assert!(text.contains("sensor.range_m = 4"), "{text}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&run_small(&out, &["--sensor.range_m", "-1"])), 2);
    assert_eq!(code(&run_small(&out, &["--planner.bogus", "1"])), 2);
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "nmpc.horizon = 10\nnot a line\n").unwrap();
    let o = run_small(&out, &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains('2'), "error should name the line");
    assert!(!out.exists());
}

#[test]
fn missing_config_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&run_small(&out, &["--config", "/nonexistent/errt.txt"])), 4);
}

#[test]
fn gen_world_then_plan_once() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w.txt");
    let mut args = vec!["gen-world", "--seed", "3", "--out", world.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let o = errt(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&world).unwrap();
    let start = text.lines().find_map(|l| l.strip_prefix("# start ")).expect("start line");
    let state = start.split_whitespace().collect::<Vec<_>>().join(",");

    // The whole ground truth is known here, so there is nothing to explore.
    let plan = dir.path().join("plan.txt");
    let o = errt(&["plan-once", "--world", world.to_str().unwrap(), "--state", &state, "--out", plan.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert_eq!(code(&errt(&["gen-world", "--seed", "3", "--out", world.to_str().unwrap()])), 4);
}

#[test]
fn plan_once_on_partial_map() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w.txt");
    let mut text = String::from("dims 12 12 4\nres 1\norigin 0 0 0\n");
    for i in 0..12 {
        for j in 0..12 {
            for k in 0..4 {
                let border = i == 0 || j == 0 || k == 0 || i == 11 || j == 11 || k == 3;
                if border {
                    text += &format!("occ {i} {j} {k}\n");
                } else if i > 6 {
                    text += &format!("unk {i} {j} {k}\n");
                }
            }
        }
    }
    std::fs::write(&world, text).unwrap();
    let plan = dir.path().join("plan.txt");
    let run = |seed: &str| {
        errt(&["plan-once", "--world", world.to_str().unwrap(), "--state", "2.5,5.5,1.5", "--seed", seed, "--out", plan.to_str().unwrap(), "--force"])
    };
    let o = run("7");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read_to_string(&plan).unwrap();
    assert!(first.starts_with("chosen "), "{first}");
    assert!(first.lines().any(|l| l.starts_with("point ")));
    assert_eq!(code(&run("7")), 0);
    assert_eq!(std::fs::read_to_string(&plan).unwrap(), first);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&errt(&["--help"])), 0);
    assert_eq!(code(&errt(&["run"])), 2);
}
