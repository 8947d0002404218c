//! Shared reporting for the acceptance suite in `tests/acceptance.rs`.

/// Prints one verdict line and fails the calling test when `pass` is false.
pub fn verdict(id: &str, pass: bool, detail: impl std::fmt::Display) {
    let line = format!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    eprintln!("{line}");
    assert!(pass, "{line}");
}
