use std::process::Command;

use flexmarket::da_fo::solve_da_fo;
use flexmarket::io::{reference_system_text, parse_system};
use flexmarket::report::{run_and_report, Design, RunManifest};

fn replace_line(text: &str, prefix: &str, line: &str) -> String {
    text.lines().map(|l| if l.starts_with(prefix) { line } else { l }).collect::<Vec<_>>().join("\n")
}

#[test]
fn probabilities_must_sum_to_one() {
    let text = replace_line(reference_system_text(), "RE =", "RE = 0 1000 0 | 131 141 155 165 172 | 0.2 0.2 0.2 0.2 0.3");
    let err = parse_system(&text).unwrap_err().to_string();
    assert!(err.contains("sum to"), "{err}");
}

#[test]
fn unsorted_triggers_are_rejected() {
    let text = replace_line(reference_system_text(), "RE =", "RE = 0 1000 0 | 131 155 141 165 172 | 0.2 0.2 0.2 0.2 0.2");
    assert!(parse_system(&text).is_err());
}

#[test]
fn sellers_without_buyers_sell_nothing() {
    let mut system = parse_system(reference_system_text()).unwrap().with_fleet("fleet1").unwrap();
    system.buyers.clear();
    let da = solve_da_fo(&system).unwrap();
    assert!(da.warnings.iter().any(|w| w.contains("no FO buyers")));
    assert!(da.fo_volume().abs() < 1e-9);
}

#[test]
fn reports_are_byte_identical() {
    let manifest = RunManifest { design: Design::Both, fleets: vec!["fleet2".into(), "fleet6".into()], ..RunManifest::default() };
    let a = run_and_report(&manifest).unwrap();
    let b = run_and_report(&manifest).unwrap();
    assert_eq!(a.text(), b.text());
    assert_eq!(a.csv, b.csv);
}

#[test]
fn cli_validate_and_run() {
    let bin = env!("CARGO_BIN_EXE_flexmarket");
    let out = Command::new(bin).arg("validate").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("5 generators"));

    let dir = std::env::temp_dir().join(format!("flexmarket-cli-{}", std::process::id()));
    let out = Command::new(bin)
        .args(["run", "--design", "both", "--fleet", "fleet1", "--set", "m=0.01", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("summary.txt").exists());
    std::fs::remove_dir_all(&dir).ok();

    let out = Command::new(bin).args(["run", "--set", "nonsense=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
