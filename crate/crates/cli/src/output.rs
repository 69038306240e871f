//! All-or-nothing output: files are staged next to the target and moved into
//! place only once every one of them, plus the `MANIFEST`, has been written.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "MANIFEST";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<hash>  <name>` lines, sorted by name.
pub fn manifest(files: &[(String, Vec<u8>)]) -> String {
    let mut lines: Vec<(String, String)> = files
        .iter()
        .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
        .collect();
    lines.sort();
    lines
        .into_iter()
        .map(|(name, hash)| format!("{hash}  {name}\n"))
        .collect()
}

fn staging_path(target: &Path) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    parent.join(format!(".{name}.partial-{}", std::process::id()))
}

/// Removes the staging path unless the commit went through.
struct Guard {
    path: PathBuf,
    armed: bool,
}

impl Drop for Guard {
    fn drop(&mut self) {
        if self.armed {
            let _ = fs::remove_dir_all(&self.path);
            let _ = fs::remove_file(&self.path);
        }
    }
}

/// Writes `files` and a `MANIFEST` into directory `target`.
pub fn commit_dir(target: &Path, files: &[(String, Vec<u8>)]) -> io::Result<()> {
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let staging = staging_path(target);
    let mut guard = Guard {
        path: staging.clone(),
        armed: true,
    };
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging)?;
    for (name, bytes) in files {
        fs::write(staging.join(name), bytes)?;
    }
    fs::write(staging.join(MANIFEST), manifest(files))?;

    let empty_dir = target.is_dir() && fs::read_dir(target)?.next().is_none();
    if empty_dir {
        fs::remove_dir(target)?;
    }
    if !target.exists() {
        fs::rename(&staging, target)?;
        guard.armed = false;
        return Ok(());
    }
    if !target.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::AlreadyExists,
            format!("{} exists and is not a directory", target.display()),
        ));
    }
    // Existing directory: drop the old manifest first so a crash in between
    // never leaves a manifest that disagrees with the files beside it.
    let _ = fs::remove_file(target.join(MANIFEST));
    for (name, _) in files {
        fs::rename(staging.join(name), target.join(name))?;
    }
    fs::rename(staging.join(MANIFEST), target.join(MANIFEST))?;
    Ok(())
}

/// Writes a single file through a temporary sibling and a rename.
pub fn commit_file(target: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = staging_path(target);
    let mut guard = Guard {
        path: tmp.clone(),
        armed: true,
    };
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, target)?;
    guard.armed = false;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_sorted_and_hashes_content() {
        let files = vec![
            ("b.csv".to_string(), b"x".to_vec()),
            ("a.csv".to_string(), Vec::new()),
        ];
        let m = manifest(&files);
        let lines: Vec<&str> = m.lines().collect();
        assert_eq!(
            lines[0],
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a.csv"
        );
        assert!(lines[1].ends_with("  b.csv"));
    }

    #[test]
    fn commit_replaces_files_and_leaves_no_staging() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("run");
        commit_dir(&out, &[("a.csv".into(), b"1".to_vec())]).unwrap();
        commit_dir(&out, &[("a.csv".into(), b"2".to_vec())]).unwrap();
        assert_eq!(fs::read(out.join("a.csv")).unwrap(), b"2");
        assert!(fs::read_to_string(out.join(MANIFEST)).unwrap().contains(&sha256_hex(b"2")));
        let names: Vec<_> = fs::read_dir(root.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("run")]);
    }
}
