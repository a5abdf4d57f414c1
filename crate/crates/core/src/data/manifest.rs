use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One `image-path,pore-csv-path` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub pores: PathBuf,
}

impl ManifestEntry {
    /// Image file stem, used to name per-image outputs.
    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (img, pores) = line.split_once(',').ok_or_else(|| {
            Error::format(path, format!("line {}: expected `image,pores`", n + 1))
        })?;
        out.push(ManifestEntry {
            image: base.join(img.trim()),
            pores: base.join(pores.trim()),
        });
    }
    Ok(out)
}

/// Writes entries verbatim (paths are written as given).
pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{},{}\n", e.image.display(), e.pores.display()));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.txt");
        std::fs::write(&m, "# comment\nimg_000.pgm, img_000.csv\n\n").unwrap();
        let entries = read_manifest(&m).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].image, dir.path().join("img_000.pgm"));
        assert_eq!(entries[0].stem(), "img_000");
        std::fs::write(&m, "no-comma\n").unwrap();
        assert!(read_manifest(&m).is_err());
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.txt");
        write_manifest(&[], &m).unwrap();
        assert!(read_manifest(&m).unwrap().is_empty());
    }
}
