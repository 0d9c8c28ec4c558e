//! Provenance records attached to every pipeline output.
//!
//! A record names the tool and version, the stage, its parameters and the
//! SHA-256 of every input file. It never includes timestamps or thread
//! counts, so re-running a stage on the same inputs reproduces it exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "idclean";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub inputs: BTreeMap<String, InputDigest>,
}

impl Provenance {
    pub fn new(stage: &str) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            stage: stage.to_string(),
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.parameters
            .insert(key.to_string(), serde_json::to_value(value).expect("parameter serializes"));
        self
    }

    /// Record an input by hashing the file at `path`.
    pub fn input(mut self, role: &str, path: &Path) -> io::Result<Self> {
        let digest = sha256_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputDigest { path: path.display().to_string(), sha256: digest },
        );
        Ok(self)
    }

    /// Record an input whose digest is already known.
    pub fn input_digest(mut self, role: &str, path: &Path, sha256: String) -> Self {
        self.inputs.insert(role.to_string(), InputDigest { path: path.display().to_string(), sha256 });
        self
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// One-line comment for the top of a delimited text table.
    pub fn comment_line(&self) -> String {
        format!("# provenance: {}\n", serde_json::to_string(self).expect("provenance serializes"))
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let prov = Provenance::new("score").param("normalize", false).input("manifest", &p).unwrap();
        let line = prov.comment_line();
        assert!(line.starts_with("# provenance: {\"tool\":\"idclean\""));
        assert!(line.ends_with("}\n"));
        assert!(line.contains("ba7816bf"));
    }
}
