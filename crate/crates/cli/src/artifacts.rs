//! Output directories: every one holds the resolved config and a manifest
//! hashing the inputs and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cogdrive::config::RunConfig;
use cogdrive::dataset::sha256_hex;
use cogdrive::eval::report::version_string;
use cogdrive::Result;
use serde::Serialize;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    version: String,
    command: &'a str,
    config_sha256: String,
    /// Input file name to SHA-256 of its bytes.
    inputs: &'a BTreeMap<String, String>,
    /// Output file name to SHA-256 of its bytes.
    outputs: &'a BTreeMap<String, String>,
}

pub struct OutputDir {
    root: PathBuf,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Reads an input file and records its hash under its file name, so
    /// manifests do not depend on where the inputs live.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path)?;
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes `config.json` and `manifest.json`; call last.
    pub fn finish(mut self, config: &RunConfig) -> Result<()> {
        let json = config.to_json()?;
        fs::write(self.root.join(CONFIG_FILE), &json)?;
        self.outputs
            .insert(CONFIG_FILE.to_string(), sha256_hex(json.as_bytes()));
        let manifest = Manifest {
            version: version_string(),
            command: self.command,
            config_sha256: config.hash()?,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
