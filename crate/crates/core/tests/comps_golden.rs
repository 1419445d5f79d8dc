use std::path::{Path, PathBuf};
use std::process::Command;

use probekit::corpus::comps::{apply_overlay, build_comps, ConceptPropertyTable, CorrectionOverlay};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/comps_mini").join(name)
}

fn jsonl(table: &ConceptPropertyTable, language: &str) -> String {
    let mut out = Vec::new();
    build_comps(table, language).unwrap().write_jsonl(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(data(name)).unwrap()
}

#[test]
fn english_matches_golden() {
    let table = ConceptPropertyTable::load(&data("table.json")).unwrap();
    assert_eq!(jsonl(&table, "en"), golden("expected_en.jsonl"));
}

#[test]
fn german_matches_golden() {
    let table = ConceptPropertyTable::load(&data("table.json")).unwrap();
    assert_eq!(jsonl(&table, "de"), golden("expected_de.jsonl"));
}

#[test]
fn overlay_changes_only_its_language() {
    let table = ConceptPropertyTable::load(&data("table.json")).unwrap();
    let overlay = CorrectionOverlay::load(&data("overlay.json")).unwrap();
    let corrected = apply_overlay(&table, &overlay).unwrap();
    assert_eq!(jsonl(&corrected, "de"), golden("expected_de_overlay.jsonl"));
    assert_eq!(jsonl(&corrected, "en"), golden("expected_en.jsonl"));
}

#[test]
fn overlay_is_idempotent() {
    let table = ConceptPropertyTable::load(&data("table.json")).unwrap();
    let overlay = CorrectionOverlay::load(&data("overlay.json")).unwrap();
    let once = apply_overlay(&table, &overlay).unwrap();
    let twice = apply_overlay(&once, &overlay).unwrap();
    assert_eq!(once, twice);
    assert_eq!(jsonl(&once, "de"), jsonl(&twice, "de"));
}

#[test]
fn cli_writes_golden_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("de.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(["build-comps", "--language", "de", "--table"])
        .arg(data("table.json"))
        .arg("--overlay")
        .arg(data("overlay.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), golden("expected_de_overlay.jsonl"));
}

#[test]
fn cli_rejects_missing_translation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fr.jsonl");
    let code = Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(["build-comps", "--language", "fr", "--table"])
        .arg(data("table.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(2));
    assert!(!out.exists());
}
