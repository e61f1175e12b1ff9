use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{invalid, CliError};

/// Checks every input and output path before any work starts. Outputs must
/// have an existing parent directory and may not point at an input.
pub fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    let mut resolved = Vec::with_capacity(inputs.len());
    for p in inputs {
        if !p.is_file() {
            return Err(invalid(format!("input {} does not exist or is not a file", p.display())));
        }
        resolved.push(fs::canonicalize(p)?);
    }
    for p in outputs {
        let parent = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !parent.is_dir() {
            return Err(invalid(format!("output directory {} does not exist", parent.display())));
        }
        if p.exists() && resolved.contains(&fs::canonicalize(p)?) {
            return Err(invalid(format!("output {} would overwrite an input", p.display())));
        }
    }
    Ok(())
}

pub fn check_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("output directory {} does not exist", dir.display())))
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Writes to `out`, or stdout when no path is given.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| invalid(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}
