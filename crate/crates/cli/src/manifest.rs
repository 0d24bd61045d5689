use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rawvid::dataset::{path_digest, write_file_atomically, MANIFEST};
use serde::{Deserialize, Serialize};

/// Record of one run. `config` holds every resolved subcommand option
/// (flag names without dashes) and can be fed back through `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub config: BTreeMap<String, String>,
    /// SHA-256 digests by role.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Command-specific results (fitted parameters, gains, ...).
    #[serde(default)]
    pub details: serde_json::Value,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub struct Run {
    pub manifest: RunManifest,
    started: Instant,
    stage: Option<(String, Instant)>,
    /// Where the manifest goes when no `--manifest` was given.
    default_path: Option<PathBuf>,
    explicit_path: Option<PathBuf>,
}

impl Run {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>, manifest: Option<PathBuf>) -> Self {
        Run {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                seed,
                jobs: rayon::current_num_threads(),
                config,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                details: serde_json::Value::Null,
                timings: BTreeMap::new(),
            },
            started: Instant::now(),
            stage: None,
            default_path: None,
            explicit_path: manifest,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = path_digest(path).with_context(|| format!("digesting {}", path.display()))?;
        self.manifest.inputs.insert(role.to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = path_digest(path).with_context(|| format!("digesting {}", path.display()))?;
        self.manifest.outputs.insert(role.to_string(), digest);
        Ok(())
    }

    /// A dataset directory output also hosts the manifest by default.
    pub fn output_dir(&mut self, role: &str, dir: &Path) -> Result<()> {
        self.output(role, dir)?;
        self.default_path.get_or_insert_with(|| dir.join(MANIFEST));
        Ok(())
    }

    /// A file output gets a sibling `<file>.manifest.json` by default.
    pub fn output_file(&mut self, role: &str, file: &Path) -> Result<()> {
        self.output(role, file)?;
        self.default_path.get_or_insert_with(|| {
            let mut name = file.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            file.with_file_name(name)
        });
        Ok(())
    }

    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage = Some((name.to_string(), Instant::now()));
    }

    fn end_stage(&mut self) {
        if let Some((name, t)) = self.stage.take() {
            self.manifest.timings.insert(name, t.elapsed().as_secs_f64());
        }
    }

    /// Write the manifest, if there is somewhere to write it.
    pub fn finish(mut self) -> Result<Option<PathBuf>> {
        self.end_stage();
        self.manifest
            .timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let Some(path) = self.explicit_path.or(self.default_path) else {
            return Ok(None);
        };
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        write_file_atomically(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(Some(path))
    }
}
