use orbit_census::cli::CensusReport;
use orbit_census::field::{Poly, PolyVectorField};
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_orbit-census"));
    c.env("ORBIT_CENSUS_LOG", "warn");
    c
}

fn write_circle(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("circle.json");
    let status = bin()
        .args(["fixture", "attracting_circle", "1/4", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    path
}

#[test]
fn circle_census_writes_report_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let field = write_circle(dir.path());
    let out = dir.path().join("report.json");
    let svg = dir.path().join("portrait.svg");
    let status = bin()
        .args(["census", "--k", "8", "--field"])
        .arg(&field)
        .arg("--out")
        .arg(&out)
        .arg("--svg")
        .arg(&svg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = CensusReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.total, 1);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("cycle-part"));
}

#[test]
fn small_budget_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let field = write_circle(dir.path());
    let status = bin()
        .args(["census", "--k", "8", "--budget", "1", "--field"])
        .arg(&field)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn outward_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("outward.json");
    std::fs::write(&path, PolyVectorField::new(Poly::x(), Poly::y()).to_json()).unwrap();
    let status = bin().args(["census", "--k", "8", "--field"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn unknown_fixture_fails() {
    let status = bin().args(["fixture", "no_such_field", "1"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}
