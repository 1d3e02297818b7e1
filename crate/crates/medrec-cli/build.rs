use std::process::Command;

/// Embed the current source revision so every run manifest can name the
/// build it came from; falls back to the crate version outside a checkout.
fn main() {
    let rev = Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")));
    println!("cargo:rustc-env=MEDREC_BUILD_REVISION={rev}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
