//! Run output directories and the `run.json` record.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// An output directory that only appears under its final name once
/// [`OutputDir::commit`] runs. Until then files go to a hidden sibling,
/// which is removed if the run fails.
#[derive(Debug)]
pub struct OutputDir {
    staging: PathBuf,
    dest: PathBuf,
    force: bool,
    committed: bool,
}

impl OutputDir {
    pub fn create(dest: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let dest = dest.into();
        if dest.exists() && !force {
            bail!("output directory {} already exists (use --force to replace it)", dest.display());
        }
        let name = dest
            .file_name()
            .with_context(|| format!("output path {} has no final component", dest.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(Self {
            staging,
            dest,
            force,
            committed: false,
        })
    }

    /// Where files are written before the commit.
    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn dest(&self) -> &Path {
        &self.dest
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.staging.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let mut f = self.file(name)?;
        f.write_all(bytes.as_ref())?;
        f.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.dest.exists() {
            if !self.force {
                bail!("output directory {} appeared during the run", self.dest.display());
            }
            fs::remove_dir_all(&self.dest).with_context(|| format!("removing {}", self.dest.display()))?;
        }
        fs::rename(&self.staging, &self.dest)
            .with_context(|| format!("moving {} to {}", self.staging.display(), self.dest.display()))?;
        self.committed = true;
        Ok(self.dest.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Contents of `run.json`: the subcommand, its resolved configuration and
/// the input files copied next to it.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub argv: Vec<String>,
    pub config: &'a T,
    /// Input files copied into the output directory, by role.
    pub inputs: Vec<(String, String)>,
}

impl<'a, T: Serialize> RunRecord<'a, T> {
    pub fn new(command: &'a str, config: &'a T) -> Self {
        Self {
            tool: "favbot",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            config,
            inputs: Vec::new(),
        }
    }

    pub fn input(mut self, role: &str, file: &str) -> Self {
        self.inputs.push((role.to_string(), file.to_string()));
        self
    }
}
