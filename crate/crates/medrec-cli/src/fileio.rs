//! Output-directory resolution, atomic file writes, and input hashing.

use std::env;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use medrec_core::error::{Error, Result};
use sha2::{Digest, Sha256};

/// Environment variable naming the root under which relative output
/// directories are created. This is the only environment knob.
pub const OUT_ROOT_VAR: &str = "MEDREC_OUT_ROOT";

/// Resolve an output directory: absolute paths pass through, relative ones
/// land under `MEDREC_OUT_ROOT` (or the working directory when unset).
pub fn resolve_out_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match env::var_os(OUT_ROOT_VAR) {
        Some(root) => PathBuf::from(root).join(dir),
        None => dir.to_path_buf(),
    }
}

/// Write a file atomically: the bytes go to a temporary sibling first and
/// are renamed into place, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new()
        .prefix(".medrec-tmp-")
        .tempfile_in(parent)?;
    std::io::Write::write_all(&mut tmp.as_file(), bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| Error::validation(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Serialize a value as pretty JSON and write it atomically.
pub fn atomic_write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Stage directory for multi-file outputs: callers write into the returned
/// temporary directory, then [`promote_files`] renames each file into the
/// final location.
pub fn stage_dir(final_dir: &Path) -> Result<tempfile::TempDir> {
    let parent = final_dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    Ok(tempfile::Builder::new()
        .prefix(".medrec-stage-")
        .tempdir_in(parent)?)
}

/// Move every file in `staging` into `final_dir` by rename. Files move
/// atomically one at a time; the staging directory is left to its guard.
pub fn promote_files(staging: &Path, final_dir: &Path) -> Result<()> {
    fs::create_dir_all(final_dir)?;
    for entry in fs::read_dir(staging)? {
        let entry = entry?;
        let target = final_dir.join(entry.file_name());
        fs::rename(entry.path(), &target)?;
    }
    Ok(())
}

/// SHA-256 of a file's contents as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Parse a `"a,b,c"` ratio triple, e.g. `"4,1,1"` for a 2/3 : 1/6 : 1/6
/// train/validation/test split.
pub fn parse_split(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!(
            "--split expects three comma-separated numbers, got {text:?}"
        )));
    }
    let mut vals = [0.0f64; 3];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| Error::validation(format!("--split: {part:?} is not a number")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Load a configuration file, accepting TOML or JSON by extension and
/// trying both when the extension is unfamiliar.
pub fn load_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| Error::validation(format!("config {}: {e}", path.display()))),
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("config {}: {e}", path.display()))),
        _ => toml::from_str(&text).or_else(|toml_err| {
            serde_json::from_str(&text).map_err(|json_err| {
                Error::validation(format!(
                    "config {}: not TOML ({toml_err}) and not JSON ({json_err})",
                    path.display()
                ))
            })
        }),
    }
}
