use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use robust_pref::chi2_dual_solve;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-pref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", dir.to_str().unwrap()]);
    let out = run(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout_field(out: &Output, key: &str) -> String {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

fn data_rows(csv: &str, series: &str, metric: &str) -> usize {
    csv.lines()
        .skip(1)
        .filter(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[0] == series && f[2] == metric
        })
        .count()
}

#[test]
fn coverage_writes_one_row_per_schedule_and_n() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["coverage", "--seed", "7", "--alphas", "0.5,0.9,0.95", "--fast-c", "0.7"]);
    let csv = fs::read_to_string(dir.path().join("coverage_7.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "series,x,metric,mean,stderr,reps");
    assert_eq!(csv.lines().count(), 1 + 4 * 5);
    let manifest = fs::read_to_string(dir.path().join("coverage_7.manifest")).unwrap();
    assert!(manifest.contains("command=coverage\n"));
    assert!(manifest.contains("env_seed=7\n"));
    assert!(manifest.contains("config.reps=120\n"));
}

#[test]
fn rate_is_reproducible() {
    let args = ["rate", "--seeds", "8", "--ns", "1000,2000,4000", "--steps", "100"];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in(a.path(), &args);
    run_in(b.path(), &args);
    let first = fs::read(a.path().join("rate_0.csv")).unwrap();
    assert_eq!(first, fs::read(b.path().join("rate_0.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(data_rows(&text, "erm", "slope"), 1);
}

#[test]
fn frontier_has_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "frontier", "--n", "16000", "--grid", "25", "--seeds", "2", "--reps", "40", "--eval-n", "2000", "--steps",
            "50",
        ],
    );
    let csv = fs::read_to_string(dir.path().join("frontier_0.csv")).unwrap();
    for metric in ["coverage", "excess_risk", "excess_risk_common"] {
        assert_eq!(data_rows(&csv, "grid", metric), 25);
    }
}

#[test]
fn outputs_do_not_depend_on_jobs() {
    let cases: [&[&str]; 3] = [
        &["coverage", "--seed", "3"],
        &["rate", "--seed", "3", "--seeds", "3", "--ns", "1000,4000", "--steps", "60"],
        &["align", "--seed", "3", "--epochs", "5", "--eval-prompts", "300"],
    ];
    for args in cases {
        let one = tempfile::tempdir().unwrap();
        let eight = tempfile::tempdir().unwrap();
        let mut a = args.to_vec();
        a.extend(["--jobs", "1"]);
        let mut b = args.to_vec();
        b.extend(["--jobs", "8"]);
        run_in(one.path(), &a);
        run_in(eight.path(), &b);
        let name = format!("{}_3.csv", args[0]);
        assert_eq!(
            fs::read(one.path().join(&name)).unwrap(),
            fs::read(eight.path().join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn align_selects_methods() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &["align", "--methods", "dpo,rebel_chi2", "--epochs", "3", "--eval-prompts", "200"],
    );
    let csv = fs::read_to_string(dir.path().join("align_0.csv")).unwrap();
    assert_eq!(data_rows(&csv, "dpo", "reward"), 11);
    assert_eq!(data_rows(&csv, "rebel_chi2", "worst_reward"), 1);
    assert_eq!(data_rows(&csv, "rebel", "reward"), 0);
}

#[test]
fn solve_chi2_matches_library() {
    let out = run(&["solve", "--kind", "chi2", "--rho", "0.125", "--losses", "0,1"]);
    assert!(out.status.success());
    let value: f64 = stdout_field(&out, "value").parse().unwrap();
    assert_eq!(value, chi2_dual_solve(&[0.0, 1.0], 0.125).unwrap().value);
}

#[test]
fn solve_kl_weights() {
    let out = run(&["solve", "--kind", "kl", "--tau", "1", "--losses", "0,1"]);
    let w: Vec<f64> = stdout_field(&out, "weights").split(',').map(|x| x.parse().unwrap()).collect();
    assert!((w[0] - 0.2689).abs() < 1e-4 && (w[1] - 0.7311).abs() < 1e-4, "{w:?}");
}

#[test]
fn solve_single_sample() {
    let out = run(&["solve", "--kind", "chi2", "--rho", "0.1", "--losses", "5"]);
    assert_eq!(stdout_field(&out, "value"), "5");
}

#[test]
fn solve_reads_losses_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("losses.txt");
    fs::write(&path, "0\n1\n").unwrap();
    let out = run(&["solve", "--kind", "chi2", "--rho", "0.125", "--losses-file", path.to_str().unwrap()]);
    assert!(out.status.success());
    let inline = run(&["solve", "--kind", "chi2", "--rho", "0.125", "--losses", "0,1"]);
    assert_eq!(out.stdout, inline.stdout);
}

#[test]
fn bad_values_exit_two_and_name_the_flag() {
    let cases: [(&[&str], &str); 5] = [
        (&["coverage", "--alphas", "0.5,1.5"], "--alphas"),
        (&["rate", "--seeds", "0"], "--seeds"),
        (&["solve", "--kind", "chi2", "--rho", "0.1", "--losses", "1,abc"], "--losses"),
        (&["solve", "--kind", "kl", "--losses", "1,2"], "--tau"),
        (&["align", "--methods", "dpo_tv"], "--methods"),
    ];
    for (args, flag) in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(flag), "{args:?}");
    }
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = run(&["coverage", "--reps", "2", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_defaults() {
    let out = run(&["rate", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["[default: 500]", "[default: 0.12]", "[default: 8]", "[default: 0.7]", "[default: 15]"] {
        assert!(text.contains(needle), "{needle}");
    }
    let out = run(&["align", "--help"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("[default: 0.1]"));
}
