use std::fs;
use std::path::{Path, PathBuf};

use carve_core::{CarveError, Result};
use tempfile::TempDir;

/// Collects output files in a hidden directory under `out` and moves them
/// into place only on [`Staging::commit`]. Dropping without committing
/// removes everything written so far.
pub struct Staging {
    dir: TempDir,
    out: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        let dir = tempfile::Builder::new()
            .prefix(".carve-staging")
            .tempdir_in(out)?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.files.iter().any(|f| f == name) {
            return Err(CarveError::Input(format!("output {name} written twice")));
        }
        fs::write(self.dir.path().join(name), bytes)?;
        self.files.push(name.to_owned());
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Renames every staged file into the output directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let dest = self.out.join(name);
            fs::rename(self.dir.path().join(name), &dest)?;
            written.push(dest);
        }
        Ok(written)
    }
}
