use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::workflow::{StagingAction, StagingDirective};

/// Local path behind a staging source. Plain paths and `file://` URIs are
/// accepted; relative paths are taken from `base`.
pub fn resolve_source(source: &str, base: &Path) -> Result<PathBuf, String> {
    let path = match source.split_once("://") {
        Some(("file", rest)) => rest,
        Some((scheme, _)) => return Err(format!("unsupported staging scheme `{scheme}`")),
        None => source,
    };
    Ok(base.join(path))
}

fn copy_recursive(from: &Path, to: &Path) -> io::Result<()> {
    if from.is_dir() {
        fs::create_dir_all(to)?;
        for entry in fs::read_dir(from)? {
            let entry = entry?;
            copy_recursive(&entry.path(), &to.join(entry.file_name()))?;
        }
        Ok(())
    } else {
        fs::copy(from, to).map(|_| ())
    }
}

fn transfer(action: StagingAction, from: &Path, to: &Path) -> io::Result<()> {
    if let Some(parent) = to.parent() {
        fs::create_dir_all(parent)?;
    }
    match action {
        StagingAction::Copy => copy_recursive(from, to),
        StagingAction::Link => {
            let from = fs::canonicalize(from)?;
            std::os::unix::fs::symlink(from, to)
        }
        StagingAction::Move => match fs::rename(from, to) {
            Ok(()) => Ok(()),
            Err(_) => {
                copy_recursive(from, to)?;
                if from.is_dir() {
                    fs::remove_dir_all(from)
                } else {
                    fs::remove_file(from)
                }
            }
        },
    }
}

/// Bring inputs into the sandbox. Sources resolve against `run_dir`.
pub fn stage_in(directives: &[StagingDirective], run_dir: &Path, sandbox: &Path) -> Result<(), String> {
    for d in directives {
        d.validate()?;
        let from = resolve_source(&d.source, run_dir)?;
        let to = sandbox.join(&d.target);
        transfer(d.action, &from, &to).map_err(|e| format!("{} -> {}: {e}", from.display(), to.display()))?;
    }
    Ok(())
}

/// Carry outputs out of the sandbox. Sources resolve against the sandbox,
/// targets against `run_dir`.
pub fn stage_out(directives: &[StagingDirective], sandbox: &Path, run_dir: &Path) -> Result<(), String> {
    for d in directives {
        d.validate()?;
        let from = resolve_source(&d.source, sandbox)?;
        let to = run_dir.join(&d.target);
        transfer(d.action, &from, &to).map_err(|e| format!("{} -> {}: {e}", from.display(), to.display()))?;
    }
    Ok(())
}
