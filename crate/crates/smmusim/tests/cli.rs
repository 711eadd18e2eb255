// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::{Command, Output};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn smmusim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smmusim")).args(args).current_dir(dir()).output().unwrap()
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("smmusim-{}-{name}", std::process::id()));
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn every_bundled_scenario_exits_zero() {
    for entry in std::fs::read_dir(dir().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let out = smmusim(&["run", path.to_str().unwrap(), "--quiet"]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn traces_are_deterministic() {
    let a = smmusim(&["run", "scenarios/ps_smmu.scn"]);
    let b = smmusim(&["run", "scenarios/ps_smmu.scn"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).lines().any(|l| l.contains(" WALK ")));
}

#[test]
fn failed_assertion_exits_one() {
    let p = scratch("fail.scn", "write-phys 0x1000 0x5\nexpect-phys 0x1000 0x6\nexpect-phys 0x1000 0x5\n");
    let out = smmusim(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("1 of 2 assertions passed"), "{err}");
}

#[test]
fn runtime_error_exits_one() {
    let p = scratch("rt.scn", "attach d9 dma1chan0\n");
    assert_eq!(smmusim(&["run", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn parse_error_exits_two_with_usage() {
    let p = scratch("bad.scn", "frobnicate 1 2\n");
    let out = smmusim(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn empty_script_succeeds() {
    let p = scratch("empty.scn", "# nothing\n\n");
    let out = smmusim(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn trace_file_matches_stdout_records() {
    let t = std::env::temp_dir().join(format!("smmusim-{}-trace.txt", std::process::id()));
    let out = smmusim(&["run", "scenarios/tlb_stale.scn", "--trace", t.to_str().unwrap()]);
    assert!(out.status.success());
    let file = std::fs::read_to_string(&t).unwrap();
    let direct = stdout(&smmusim(&["run", "scenarios/tlb_stale.scn"]));
    let records: Vec<&str> = direct.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(file.lines().collect::<Vec<_>>(), records);
    assert!(!stdout(&out).lines().any(|l| l.starts_with("EVT")));
}

#[test]
fn dts_check_reports_bindings_and_channels() {
    let out = smmusim(&["dts", "check", "fixtures/zynqmp.dts"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("26 master bindings"), "{text}");
    assert!(text.contains("phandle 0x29 sid 0x14e8"), "{text}");
    assert!(!text.contains("warning"));

    let out = smmusim(&["dts", "check", "fixtures/lpd_dma_ch0_generated.dts"]);
    assert!(stdout(&out).contains("disabled (no clock-names, no clocks)"));
}

#[test]
fn dts_check_exit_codes() {
    assert_eq!(smmusim(&["dts", "check", "fixtures/smmu.dts"]).status.code(), Some(1));
    let p = scratch("bad.dts", "/ { a = <1 2;\n");
    assert_eq!(smmusim(&["dts", "check", p.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(smmusim(&["dts", "check", "fixtures/missing.dts"]).status.code(), Some(1));
}
