use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Default, Serialize)]
pub struct Timing {
    pub enumeration_secs: f64,
    pub solving_secs: f64,
    pub assembly_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct Outcome {
    pub status: &'static str,
    pub exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Summary of one invocation, written as a single JSON object.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub subcommand: String,
    pub jobs: usize,
    /// SHA-256 of every input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    pub timing: Timing,
    pub counts: BTreeMap<&'static str, u64>,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn new(subcommand: &str, jobs: usize) -> Self {
        RunReport {
            subcommand: subcommand.to_string(),
            jobs,
            inputs: BTreeMap::new(),
            timing: Timing::default(),
            counts: BTreeMap::new(),
            outcome: Outcome {
                status: "ok",
                exit_code: 0,
                message: None,
            },
        }
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        let digest = Sha256::digest(bytes);
        self.inputs
            .insert(path.display().to_string(), format!("{digest:x}"));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_hex_sha256() {
        let mut r = RunReport::new("check", 1);
        r.record_input(Path::new("a.txt"), b"abc");
        assert_eq!(
            r.inputs["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["outcome"]["exit_code"], 0);
        assert!(v["outcome"].get("message").is_none());
    }
}
