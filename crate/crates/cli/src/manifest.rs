use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, InputCtx, RuntimeCtx};

pub const RUN_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Everything needed to rerun a command, stored in its output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<(String, String)>,
    pub seed: u64,
    pub workers: usize,
    pub out: String,
    /// File holding the primary PPA report, relative to the run directory.
    pub report: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: u64, workers: usize, out: &Path) -> Self {
        RunManifest {
            format_version: RUN_FORMAT_VERSION,
            command: command.into(),
            // --force does not change results, so reruns keep identical manifests
            argv: argv.iter().skip(1).filter(|a| *a != "--force").cloned().collect(),
            inputs: Vec::new(),
            seed,
            workers,
            out: out.display().to_string(),
            report: None,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.push((role.into(), path.display().to_string()));
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).input(|| format!("run directory {} has no readable {MANIFEST_FILE}", dir.display()))?;
        let m: RunManifest = toml::from_str(&text).input(|| format!("{}", path.display()))?;
        if m.format_version != RUN_FORMAT_VERSION {
            return Err(CliError::Input(anyhow::anyhow!(
                "{}: unsupported format_version {}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Output directory that refuses to clobber earlier results unless forced.
pub struct OutDir {
    pub path: PathBuf,
}

impl OutDir {
    pub fn prepare(path: &Path, force: bool) -> CliResult<Self> {
        if path.exists() {
            let empty = path.is_dir() && fs::read_dir(path).map(|mut d| d.next().is_none()).unwrap_or(false);
            if !empty && !force {
                return Err(CliError::Input(anyhow::anyhow!(
                    "output directory {} already exists; pass --force to replace it",
                    path.display()
                )));
            }
            if !empty {
                if path.is_dir() {
                    fs::remove_dir_all(path)
                } else {
                    fs::remove_file(path)
                }
                .runtime(|| format!("cannot clear {}", path.display()))?;
            }
        }
        fs::create_dir_all(path).runtime(|| format!("cannot create {}", path.display()))?;
        Ok(OutDir { path: path.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        let p = self.path.join(name);
        fs::write(&p, contents).runtime(|| format!("cannot write {}", p.display()))
    }

    pub fn finish(&self, manifest: &RunManifest) -> CliResult<()> {
        let text = toml::to_string(manifest).runtime(|| "cannot serialize run manifest".into())?;
        self.write(MANIFEST_FILE, &text)
    }
}
