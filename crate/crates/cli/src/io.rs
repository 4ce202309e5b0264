use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use riskplan::env::{Problem, ProblemSet};
use riskplan::geom::KinematicChain;
use serde::Serialize;
use serde_json::Value;

use crate::settings::usage;

/// Write to a temporary sibling and rename it into place, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

/// `value` as a JSON object with the effective configuration under
/// `"config"`.
pub fn with_config(value: impl Serialize, config: &Value) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(m) = &mut v {
        m.insert("config".into(), config.clone());
    }
    Ok(v)
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// `<path>.config.json` next to an artifact that cannot embed it.
pub fn write_sidecar(path: &Path, config: &Value) -> Result<()> {
    write_json(&suffixed(path, ".config.json"), config)
}

pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

pub fn read_problem_set(path: &Path) -> Result<(KinematicChain, Vec<Problem>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set: ProblemSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let chain = KinematicChain::from_json(&set.chain).with_context(|| format!("chain in {}", path.display()))?;
    Ok((chain, set.problems))
}

pub fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))
}
