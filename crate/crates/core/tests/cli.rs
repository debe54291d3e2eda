use std::fs;
use std::path::Path;
use std::process::Command;

fn simct(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_simct")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = simct(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn decode_prints_the_tuple() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ok(&["decode", "0x80"], dir.path()), "vault=1 bank=0 row_offset=0x0 block_offset=0\n");
    assert_eq!(ok(&["decode", "800"], dir.path()), "vault=0 bank=1 row_offset=0x0 block_offset=0\n");
    assert_eq!(ok(&["decode", "0x200000080"], dir.path()), ok(&["decode", "0x80"], dir.path()));
    assert!(!simct(&["decode", "zz"], dir.path()).status.success());
}

#[test]
fn spec_file_run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "kind=gups\nseed=3\nduration=20us\nwarmup=5us\nsizes=32,128\npatterns=4banks,2vaults\nports=3\n";
    fs::write(dir.path().join("g.spec"), spec).unwrap();
    ok(&["run", "g.spec", "--out", "a.csv"], dir.path());
    ok(&["run", "g.spec", "--out", "b.csv"], dir.path());
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("experiment,pattern,size,ports,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("gups,4banks,32,3,"));
    assert!(rows[3].starts_with("gups,2vaults,128,3,"));

    ok(&["run", "g.spec", "--out", "c.csv", "--seed", "4"], dir.path());
    assert_ne!(fs::read(dir.path().join("c.csv")).unwrap(), text.as_bytes());
}

#[test]
fn printed_spec_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(
        &["qos", "--print-spec", "--duration", "15us", "--seed", "9", "--set", "sizes=64", "--set", "warmup=3us"],
        dir.path(),
    );
    assert!(printed.contains("kind=qos\n") && printed.contains("seed=9\n") && printed.contains("duration=15us\n"));
    fs::write(dir.path().join("q.spec"), &printed).unwrap();
    let from_spec = ok(&["run", "q.spec"], dir.path());
    let direct = ok(&["qos", "--duration", "15us", "--seed", "9", "--set", "sizes=64", "--set", "warmup=3us"], dir.path());
    assert_eq!(from_spec, direct);
    // 16 positions x 4 ports + header
    assert_eq!(from_spec.lines().count(), 65);
}

#[test]
fn lowload_writes_the_fit_table_and_replays_traces() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["lowload", "--set", "lowload_max=220", "--out", "ll.csv"], dir.path());
    let fit = fs::read_to_string(dir.path().join("ll_fit.csv")).unwrap();
    assert!(fit.starts_with("region,n_from,n_to,slope_ns_per_request,intercept_ns,r2,level_ns\nlinear,1,96,"));
    assert!(fit.contains("\nplateau,200,220,"));
    assert_eq!(fs::read_to_string(dir.path().join("ll.csv")).unwrap().lines().count(), 221);

    let trace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/vault0_stream.trace");
    let t = trace.to_str().unwrap();
    let out = ok(&["lowload", "--set", &format!("trace={t}")], dir.path());
    // eight records, one row each
    assert_eq!(out.lines().count(), 9);
}

#[test]
fn combos_sample_writes_aux_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["combos", "--sample", "3", "--duration", "10us", "--set", "warmup=2us", "--set", "sizes=16,128", "--out", "c.csv"], dir.path());
    let main = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(main.lines().count(), 1 + 3 * 2);
    let summary = fs::read_to_string(dir.path().join("c_summary.csv")).unwrap();
    assert!(summary.starts_with("size,combinations,mean_latency_ns,stddev_latency_ns\n16,3,"));
    let hist = fs::read_to_string(dir.path().join("c_hist.csv")).unwrap();
    assert!(hist.starts_with("size,vault,bin_start_ns,count\n"));
}

#[test]
fn event_log_flag_writes_dispatch_lines() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["gups", "--duration", "2us", "--set", "warmup=1us", "--set", "sizes=64", "--set", "patterns=2vaults", "--event-log", "ev.log"],
        dir.path(),
    );
    let log = fs::read_to_string(dir.path().join("ev.log")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("# gups 2vaults 64"));
    let body: Vec<&str> = lines.collect();
    assert!(body.len() > 100);
    assert!(body.iter().all(|l| l.split(',').count() == 4));
    assert!(body.iter().any(|l| l.ends_with(",retire")));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.spec"), "kind=gups\nsizes=48\n").unwrap();
    let out = simct(&["run", "bad.spec"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sizes"));
    fs::write(dir.path().join("typo.spec"), "kind=gups\nsedd=1\n").unwrap();
    let out = simct(&["run", "typo.spec"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!simct(&["run", "missing.spec"], dir.path()).status.success());
    assert!(!simct(&["gups", "--set", "nonsense"], dir.path()).status.success());
}
