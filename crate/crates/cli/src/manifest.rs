//! Validated fine-tune configuration manifests.
//!
//! The schema mirrors a LoRA fine-tuning setup (base model, adapter rank
//! and alpha, target modules, optimizer betas, cosine schedule bounds).
//! Validation only: nothing here launches a fine-tune.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::{require_file, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneManifest {
    pub base_model: String,
    pub method: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub target_modules: Vec<String>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub batch_size: u32,
    pub grad_accum: u32,
    /// AdamW `(beta1, beta2)`, each strictly inside `(0, 1)`.
    pub optimizer_betas: (f64, f64),
    pub schedule: String,
    pub max_seq_len: u32,
    /// Unconstrained; manifests may omit the step count entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_steps: Option<u64>,
}

impl FinetuneManifest {
    pub fn validate(&self) -> CliResult<()> {
        if self.lora_rank < 1 {
            return Err(CliError::usage(format!(
                "manifest field lora_rank must be >= 1, got {}",
                self.lora_rank
            )));
        }
        if self.lora_alpha < 1 {
            return Err(CliError::usage(format!(
                "manifest field lora_alpha must be >= 1, got {}",
                self.lora_alpha
            )));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(CliError::usage(format!(
                "manifest fields lr_min/lr_max must satisfy 0 < lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        let (b1, b2) = self.optimizer_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(CliError::usage(format!(
                "manifest field optimizer_betas must lie strictly inside (0, 1), got ({b1}, {b2})"
            )));
        }
        if self.batch_size < 1 || self.grad_accum < 1 || self.max_seq_len < 1 {
            return Err(CliError::usage(
                "manifest fields batch_size, grad_accum, and max_seq_len must be >= 1",
            ));
        }
        if self.target_modules.is_empty() {
            return Err(CliError::usage(
                "manifest field target_modules must name at least one module",
            ));
        }
        Ok(())
    }
}

/// Parse and validate a manifest file.
pub fn validate_finetune_manifest(path: &Path) -> CliResult<FinetuneManifest> {
    require_file(path, "manifest")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: FinetuneManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("manifest {} does not parse: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_json() -> serde_json::Value {
        serde_json::json!({
            "base_model": "mistral-7b",
            "method": "lora",
            "lora_rank": 8,
            "lora_alpha": 16,
            "target_modules": ["query", "key", "value"],
            "lr_min": 1e-5,
            "lr_max": 3e-5,
            "batch_size": 32,
            "grad_accum": 4,
            "optimizer_betas": [0.9, 0.999],
            "schedule": "cosine",
            "max_seq_len": 4096
        })
    }

    fn write_manifest(value: &serde_json::Value) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
        (dir, path)
    }

    #[test]
    fn reference_manifest_validates() {
        let (_dir, path) = write_manifest(&valid_json());
        let m = validate_finetune_manifest(&path).unwrap();
        assert_eq!(m.lora_rank, 8);
        assert_eq!(m.lora_alpha, 16);
        assert_eq!(m.target_modules, vec!["query", "key", "value"]);
        assert_eq!(m.training_steps, None);
    }

    #[test]
    fn inverted_lr_bounds_name_the_fields() {
        let mut v = valid_json();
        v["lr_min"] = serde_json::json!(3e-5);
        v["lr_max"] = serde_json::json!(1e-5);
        let (_dir, path) = write_manifest(&v);
        match validate_finetune_manifest(&path) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("lr_min") && msg.contains("lr_max")),
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn beta_of_one_is_rejected() {
        let mut v = valid_json();
        v["optimizer_betas"] = serde_json::json!([0.9, 1.0]);
        let (_dir, path) = write_manifest(&v);
        match validate_finetune_manifest(&path) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("optimizer_betas")),
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn zero_rank_is_rejected() {
        let mut v = valid_json();
        v["lora_rank"] = serde_json::json!(0);
        let (_dir, path) = write_manifest(&v);
        match validate_finetune_manifest(&path) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("lora_rank")),
            other => panic!("expected usage error, got {other:?}"),
        }
    }
}
