//! Provenance blocks stamped on every output file.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use sef_core::ingest::IngestError;

use crate::error::CliError;

pub const TOOL: &str = "sef";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    /// File name only, so that outputs do not depend on the working directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
}

/// An input file read once, so that its digest matches the parsed bytes.
pub struct InputFile {
    pub bytes: Vec<u8>,
    pub digest: InputDigest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_input(path: &Path) -> Result<InputFile, CliError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(InputFile {
        digest: InputDigest {
            file,
            sha256: sha256_hex(&bytes),
        },
        bytes,
    })
}

impl Provenance {
    /// `config` is hashed in its compact JSON form, whose object keys are
    /// sorted.
    pub fn new(config: Value, inputs: Vec<InputDigest>) -> Self {
        let canonical = serde_json::to_string(&config).expect("JSON values serialize");
        Provenance {
            tool: TOOL,
            version: VERSION,
            config_sha256: sha256_hex(canonical.as_bytes()),
            config,
            inputs,
        }
    }

    /// `#` comment lines, skipped by every CSV reader in this workspace.
    pub fn csv_header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool: {} {}", self.tool, self.version);
        let _ = writeln!(s, "# config_sha256: {}", self.config_sha256);
        let _ = writeln!(s, "# config: {}", self.config);
        for input in &self.inputs {
            let _ = writeln!(s, "# input: {} sha256:{}", input.file, input.sha256);
        }
        s
    }
}

/// A JSON output document: the provenance block followed by the payload's
/// own fields.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    pub provenance: &'a Provenance,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn json_document<T: Serialize>(provenance: &Provenance, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Document { provenance, body }).expect("reports serialize");
    s.push('\n');
    s
}
