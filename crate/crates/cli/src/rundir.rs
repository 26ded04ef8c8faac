use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

/// Short content hash of the command, its effective config and its inputs.
pub fn config_hash(
    command: &str,
    config: &serde_json::Value,
    inputs: &serde_json::Value,
) -> String {
    let canonical = serde_json::json!({ "command": command, "config": config, "inputs": inputs });
    let digest = Sha256::digest(serde_json::to_vec(&canonical).expect("json serializes"));
    hex::encode(digest)[..12].to_owned()
}

/// Creates `<root>/<UTC timestamp>-<hash>`, adding a counter on collision.
pub fn create(root: &Path, hash: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{hash}");
    for n in 0.. {
        let name = if n == 0 {
            base.clone()
        } else {
            format!("{base}.{n}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
